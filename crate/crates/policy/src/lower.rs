//! Lower-level attention encoder-decoder for open paths with fixed endpoints.
//!
//! Each node enters as `(x, y, is_source, is_target)` in sub-problem-local
//! coordinates (translated and uniformly scaled into the unit square). The
//! decoder query is `q_graph + q_first + q_last + q_source + q_target`.
//! Decoding builds a cyclic order over all nodes in which picking either
//! endpoint appends the other immediately; the cycle is then cut at the
//! source-target edge to obtain the path.

use std::sync::Arc;

use htsp_autograd::{Graph, LayerNorm, Linear, ParamStore, Tensor, Var, ZERO_ROW};
use htsp_core::{OpenPath, Point, SubProblem, TspInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};

pub const NODE_INPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowerConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ff_hidden: usize,
    pub tanh_clip: f64,
}

impl Default for LowerConfig {
    fn default() -> Self {
        Self { dim: 128, heads: 8, encoder_layers: 12, ff_hidden: 512, tanh_clip: 10.0 }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct LowerModel {
    pub config: LowerConfig,
    pub store: ParamStore,
    embed: Linear,
    layers: Vec<EncoderLayer>,
    q_graph: Linear,
    q_first: Linear,
    q_last: Linear,
    q_source: Linear,
    q_target: Linear,
    glimpse_k: Linear,
    glimpse_v: Linear,
    glimpse_out: Linear,
    pointer_k: Linear,
}

/// A sub-problem in local coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSub {
    /// Global node ids, aligned with `coords`.
    pub nodes: Vec<usize>,
    pub coords: Vec<Point>,
    pub source: usize,
    pub target: usize,
}

impl PreparedSub {
    pub fn new(sub: &SubProblem, instance: &TspInstance) -> Self {
        let pts: Vec<Point> = sub.nodes.iter().map(|&v| instance.point(v)).collect();
        let pos = |v: usize| sub.nodes.iter().position(|&u| u == v).expect("endpoint is a member");
        Self::from_points(sub.nodes.clone(), &pts, pos(sub.source), pos(sub.target))
    }

    /// `source` and `target` are positions into `points`.
    pub fn from_points(nodes: Vec<usize>, points: &[Point], source: usize, target: usize) -> Self {
        assert!(points.len() >= 2 && source != target && source < points.len() && target < points.len());
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y);
        let s = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let coords = points.iter().map(|p| Point::new(((p.x - lo.x) * s).min(1.0), ((p.y - lo.y) * s).min(1.0))).collect();
        Self { nodes, coords, source, target }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Open-path length over local positions, in local units.
    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|w| self.coords[w[0]].dist(&self.coords[w[1]])).sum()
    }

    pub fn to_global(&self, path: &[usize]) -> OpenPath {
        OpenPath::new(path.iter().map(|&i| self.nodes[i]).collect())
    }
}

/// Partial cyclic order during decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    pub visited: Vec<bool>,
    pub seq: Vec<usize>,
    source: usize,
    target: usize,
}

impl DecodeState {
    pub fn new(m: usize, source: usize, target: usize) -> Self {
        Self { visited: vec![false; m], seq: Vec::with_capacity(m), source, target }
    }

    pub fn is_done(&self) -> bool {
        self.seq.len() == self.visited.len()
    }

    pub fn first(&self) -> usize {
        self.seq.first().copied().unwrap_or(ZERO_ROW)
    }

    pub fn last(&self) -> usize {
        self.seq.last().copied().unwrap_or(ZERO_ROW)
    }

    /// Appends a decision; an endpoint drags its partner in right after it.
    pub fn apply(&mut self, v: usize) {
        assert!(!self.visited[v], "node {v} selected twice");
        self.visited[v] = true;
        self.seq.push(v);
        let partner = if v == self.source {
            Some(self.target)
        } else if v == self.target {
            Some(self.source)
        } else {
            None
        };
        if let Some(p) = partner.filter(|&p| !self.visited[p]) {
            self.visited[p] = true;
            self.seq.push(p);
        }
    }
}

/// Cuts a cyclic order at the (adjacent) source-target edge and returns the
/// path from source to target.
pub fn cut_cycle(seq: &[usize], source: usize, target: usize) -> Vec<usize> {
    let m = seq.len();
    let ps = seq.iter().position(|&v| v == source).expect("source in cycle");
    if seq[(ps + 1) % m] == target {
        (0..m).map(|k| seq[(ps + m - k) % m]).collect()
    } else {
        assert_eq!(seq[(ps + m - 1) % m], target, "endpoints are not adjacent");
        (0..m).map(|k| seq[(ps + k) % m]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Decision sequence (forced partner appends excluded).
    pub choices: Vec<usize>,
    /// Local positions from source to target.
    pub path: Vec<usize>,
    /// Local-unit path length.
    pub length: f64,
    pub log_prob: f64,
}

/// Encoder outputs and decoder keys for a batch of equally sized sub-problems.
pub struct Encoded<'g, 's> {
    pub b: usize,
    pub m: usize,
    pub h: Var<'g, 's>,
    pub fixed_q: Var<'g, 's>,
    pub proj_first: Var<'g, 's>,
    pub proj_last: Var<'g, 's>,
    pub glimpse_k: Var<'g, 's>,
    pub glimpse_v: Var<'g, 's>,
    pub pointer_k: Var<'g, 's>,
}

/// Detached copy of [`Encoded`] for step-by-step decoding.
#[derive(Clone)]
struct Frozen {
    b: usize,
    m: usize,
    fixed_q: Arc<Tensor>,
    proj_first: Arc<Tensor>,
    proj_last: Arc<Tensor>,
    glimpse_k: Arc<Tensor>,
    glimpse_v: Arc<Tensor>,
    pointer_k: Arc<Tensor>,
}

impl LowerModel {
    pub fn new(config: LowerConfig, seed: u64) -> Self {
        assert_eq!(config.dim % config.heads, 0, "dim must be divisible by heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embed = Linear::new(&mut store, "lower.embed", NODE_INPUTS, d, true, &mut rng);
        let layers = (0..config.encoder_layers)
            .map(|i| {
                let p = format!("lower.enc{i}");
                EncoderLayer {
                    wq: Linear::new(&mut store, &format!("{p}.wq"), d, d, false, &mut rng),
                    wk: Linear::new(&mut store, &format!("{p}.wk"), d, d, false, &mut rng),
                    wv: Linear::new(&mut store, &format!("{p}.wv"), d, d, false, &mut rng),
                    wo: Linear::new(&mut store, &format!("{p}.wo"), d, d, true, &mut rng),
                    norm1: LayerNorm::new(&mut store, &format!("{p}.norm1"), d),
                    ff1: Linear::new(&mut store, &format!("{p}.ff1"), d, config.ff_hidden, true, &mut rng),
                    ff2: Linear::new(&mut store, &format!("{p}.ff2"), config.ff_hidden, d, true, &mut rng),
                    norm2: LayerNorm::new(&mut store, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        let mut lin = |name: &str| Linear::new(&mut store, &format!("lower.{name}"), d, d, false, &mut rng);
        let q_graph = lin("q_graph");
        let q_first = lin("q_first");
        let q_last = lin("q_last");
        let q_source = lin("q_source");
        let q_target = lin("q_target");
        let glimpse_k = lin("glimpse_k");
        let glimpse_v = lin("glimpse_v");
        let glimpse_out = lin("glimpse_out");
        let pointer_k = lin("pointer_k");
        Self {
            config,
            store,
            embed,
            layers,
            q_graph,
            q_first,
            q_last,
            q_source,
            q_target,
            glimpse_k,
            glimpse_v,
            glimpse_out,
            pointer_k,
        }
    }

    fn attention<'g, 's>(&self, q: Var<'g, 's>, k: Var<'g, 's>, v: Var<'g, 's>, mask: Option<Arc<Vec<bool>>>) -> Var<'g, 's> {
        let heads = self.config.heads;
        let dk = self.config.dim / heads;
        let scores = q.split_heads(heads).bmm(k, true).scale(1.0 / (dk as f64).sqrt());
        scores.softmax(mask).bmm(v, false).merge_heads(heads)
    }

    /// Node embeddings `[B, m, dim]` plus decoder projections.
    pub fn encode<'g, 's>(&'s self, g: &'g Graph<'s>, subs: &[&PreparedSub]) -> Result<Encoded<'g, 's>> {
        let b = subs.len();
        let m = subs.first().map_or(0, |s| s.len());
        if b == 0 || m < 2 || subs.iter().any(|s| s.len() != m) {
            return Err(PolicyError::Shape("encode needs a non-empty batch of equally sized sub-problems".into()));
        }
        let heads = self.config.heads;
        let mut x = Vec::with_capacity(b * m * NODE_INPUTS);
        for s in subs {
            for (i, p) in s.coords.iter().enumerate() {
                x.extend_from_slice(&[p.x, p.y, (i == s.source) as u8 as f64, (i == s.target) as u8 as f64]);
            }
        }
        let mut h = self.embed.forward(g, g.constant(Tensor::new(&[b, m, NODE_INPUTS], x)));
        for l in &self.layers {
            let kh = l.wk.forward(g, h).split_heads(heads);
            let vh = l.wv.forward(g, h).split_heads(heads);
            let att = self.attention(l.wq.forward(g, h), kh, vh, None);
            h = l.norm1.forward(g, h.add(l.wo.forward(g, att)));
            let ff = l.ff2.forward(g, l.ff1.forward(g, h).relu());
            h = l.norm2.forward(g, h.add(ff));
        }
        let d = self.config.dim;
        let flat = h.reshape(&[b * m, d]);
        let src: Vec<usize> = subs.iter().enumerate().map(|(i, s)| i * m + s.source).collect();
        let tgt: Vec<usize> = subs.iter().enumerate().map(|(i, s)| i * m + s.target).collect();
        let fixed_q = self
            .q_graph
            .forward(g, h.mean_axis1())
            .add(self.q_source.forward(g, flat.gather_rows(src)))
            .add(self.q_target.forward(g, flat.gather_rows(tgt)));
        Ok(Encoded {
            b,
            m,
            h,
            fixed_q,
            proj_first: self.q_first.forward(g, flat),
            proj_last: self.q_last.forward(g, flat),
            glimpse_k: self.glimpse_k.forward(g, h).split_heads(heads),
            glimpse_v: self.glimpse_v.forward(g, h).split_heads(heads),
            pointer_k: self.pointer_k.forward(g, h),
        })
    }

    /// Log-probabilities `[B, rows, m]` for `rows` decoding contexts per
    /// sub-problem. `first`/`last` hold local node ids (or [`ZERO_ROW`]) laid
    /// out `[B, rows]`; `mask` is `[B, rows, m]` with `true` for visited nodes.
    pub fn pointer_log_probs<'g, 's>(
        &'s self,
        enc: &Encoded<'g, 's>,
        rows: usize,
        first: &[usize],
        last: &[usize],
        mask: &[bool],
    ) -> Var<'g, 's> {
        let g = enc.h.graph();
        let (b, m, d) = (enc.b, enc.m, self.config.dim);
        let heads = self.config.heads;
        let global = |local: &[usize]| -> Vec<usize> {
            local.iter().enumerate().map(|(r, &v)| if v == ZERO_ROW { ZERO_ROW } else { (r / rows) * m + v }).collect()
        };
        let q = enc
            .fixed_q
            .repeat(rows)
            .add(enc.proj_first.gather_rows(global(first)))
            .add(enc.proj_last.gather_rows(global(last)))
            .reshape(&[b, rows, d]);
        let mut head_mask = Vec::with_capacity(b * heads * rows * m);
        for bi in 0..b {
            let block = &mask[bi * rows * m..(bi + 1) * rows * m];
            for _ in 0..heads {
                head_mask.extend_from_slice(block);
            }
        }
        let glimpse = self.attention(q, enc.glimpse_k, enc.glimpse_v, Some(Arc::new(head_mask)));
        let glimpse = self.glimpse_out.forward(g, glimpse);
        let logits = glimpse.bmm(enc.pointer_k, true).scale(1.0 / (d as f64).sqrt()).tanh().scale(self.config.tanh_clip);
        logits.log_softmax(Some(Arc::new(mask.to_vec())))
    }

    fn freeze(enc: &Encoded<'_, '_>) -> Frozen {
        Frozen {
            b: enc.b,
            m: enc.m,
            fixed_q: enc.fixed_q.value(),
            proj_first: enc.proj_first.value(),
            proj_last: enc.proj_last.value(),
            glimpse_k: enc.glimpse_k.value(),
            glimpse_v: enc.glimpse_v.value(),
            pointer_k: enc.pointer_k.value(),
        }
    }

    fn thaw<'g, 's>(g: &'g Graph<'s>, f: &Frozen) -> Encoded<'g, 's> {
        let c = |t: &Arc<Tensor>| g.shared(t.clone());
        Encoded {
            b: f.b,
            m: f.m,
            h: c(&f.pointer_k),
            fixed_q: c(&f.fixed_q),
            proj_first: c(&f.proj_first),
            proj_last: c(&f.proj_last),
            glimpse_k: c(&f.glimpse_k),
            glimpse_v: c(&f.glimpse_v),
            pointer_k: c(&f.pointer_k),
        }
    }

    /// Decodes `rollouts` cyclic orders per sub-problem (all of equal size)
    /// without recording gradients.
    pub fn decode(&self, subs: &[&PreparedSub], rollouts: usize, mode: DecodeMode, rng: &mut impl Rng) -> Result<Vec<Vec<Rollout>>> {
        assert!(rollouts >= 1);
        let m = subs.first().map_or(0, |s| s.len());
        if m == 2 {
            return Ok(subs
                .iter()
                .map(|s| {
                    let path = vec![s.source, s.target];
                    vec![Rollout { choices: vec![], length: s.path_length(&path), path, log_prob: 0.0 }; rollouts]
                })
                .collect());
        }
        let frozen = {
            let g = Graph::new(&self.store);
            let enc = self.encode(&g, subs)?;
            Self::freeze(&enc)
        };
        let b = subs.len();
        let mut states: Vec<DecodeState> =
            (0..b * rollouts).map(|i| DecodeState::new(m, subs[i / rollouts].source, subs[i / rollouts].target)).collect();
        let mut choices = vec![Vec::with_capacity(m); b * rollouts];
        let mut log_probs = vec![0.0; b * rollouts];
        while !states[0].is_done() {
            let first: Vec<usize> = states.iter().map(|s| s.first()).collect();
            let last: Vec<usize> = states.iter().map(|s| s.last()).collect();
            let mask: Vec<bool> = states.iter().flat_map(|s| s.visited.iter().copied()).collect();
            let g = Graph::new(&self.store);
            let enc = Self::thaw(&g, &frozen);
            let lp = self.pointer_log_probs(&enc, rollouts, &first, &last, &mask).value();
            for (i, st) in states.iter_mut().enumerate() {
                let row = &lp.data[i * m..(i + 1) * m];
                let pick = match mode {
                    DecodeMode::Greedy => argmax(row),
                    DecodeMode::Sample => sample_row(row, rng),
                };
                if !row[pick].is_finite() {
                    return Err(PolicyError::NonFinite(format!("decoder log-probability {}", row[pick])));
                }
                log_probs[i] += row[pick];
                choices[i].push(pick);
                st.apply(pick);
            }
        }
        let mut out = Vec::with_capacity(b);
        for (bi, sub) in subs.iter().enumerate() {
            let mut v = Vec::with_capacity(rollouts);
            for r in 0..rollouts {
                let i = bi * rollouts + r;
                let path = cut_cycle(&states[i].seq, sub.source, sub.target);
                v.push(Rollout { choices: std::mem::take(&mut choices[i]), length: sub.path_length(&path), path, log_prob: log_probs[i] });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Teacher-forced log-probabilities `[B * R]` of given decision
    /// sequences; every sequence must have `m - 1` decisions.
    pub fn sequence_log_probs<'g, 's>(
        &'s self,
        g: &'g Graph<'s>,
        subs: &[&PreparedSub],
        choices: &[Vec<Vec<usize>>],
    ) -> Result<Var<'g, 's>> {
        let enc = self.encode(g, subs)?;
        let m = enc.m;
        let r = choices[0].len();
        let t = m - 1;
        let rows = r * t;
        let mut first = Vec::with_capacity(subs.len() * rows);
        let mut last = Vec::with_capacity(subs.len() * rows);
        let mut mask = Vec::with_capacity(subs.len() * rows * m);
        let mut picked = Vec::with_capacity(subs.len() * rows);
        for (sub, per_sub) in subs.iter().zip(choices) {
            assert_eq!(per_sub.len(), r, "equal rollout counts per sub-problem");
            for seq in per_sub {
                if seq.len() != t {
                    return Err(PolicyError::Shape(format!("{} decisions for {m} nodes", seq.len())));
                }
                let mut st = DecodeState::new(m, sub.source, sub.target);
                for &c in seq {
                    first.push(st.first());
                    last.push(st.last());
                    mask.extend_from_slice(&st.visited);
                    picked.push(c);
                    st.apply(c);
                }
            }
        }
        let lp = self.pointer_log_probs(&enc, rows, &first, &last, &mask);
        Ok(lp.reshape(&[subs.len() * rows, m]).gather_last(picked).reshape(&[subs.len() * r, t]).sum_last())
    }

    /// Solves one sub-problem: greedy with a single rollout, or the shortest
    /// of `rollouts` samples.
    pub fn solve(&self, sub: &SubProblem, instance: &TspInstance, mode: DecodeMode, rollouts: usize, rng: &mut impl Rng) -> Result<OpenPath> {
        let prepared = PreparedSub::new(sub, instance);
        let k = if mode == DecodeMode::Greedy { 1 } else { rollouts.max(1) };
        let rolls = self.decode(&[&prepared], k, mode, rng)?.remove(0);
        let best = rolls
            .iter()
            .min_by(|a, b| a.length.total_cmp(&b.length))
            .expect("at least one rollout");
        Ok(prepared.to_global(&best.path))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut c = 0.0;
    let mut last_valid = 0;
    for (j, lp) in row.iter().enumerate() {
        if lp.is_finite() {
            c += lp.exp();
            last_valid = j;
            if u < c {
                return j;
            }
        }
    }
    last_valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use htsp_core::instance::generate_uniform;
    use htsp_core::oracle::held_karp_path;
    use proptest::prelude::*;

    fn tiny() -> LowerConfig {
        LowerConfig { dim: 16, heads: 4, encoder_layers: 2, ff_hidden: 32, tanh_clip: 10.0 }
    }

    fn random_sub(m: usize, seed: u64) -> (TspInstance, SubProblem) {
        let inst = generate_uniform(m, seed).unwrap();
        let sub = SubProblem::standalone((0..m).collect(), 0, m - 1).unwrap();
        (inst, sub)
    }

    #[test]
    fn cut_cycle_orients_source_to_target() {
        assert_eq!(cut_cycle(&[2, 0, 3, 1], 0, 3), vec![0, 2, 1, 3]);
        assert_eq!(cut_cycle(&[2, 3, 0, 1], 0, 3), vec![0, 1, 2, 3]);
        assert_eq!(cut_cycle(&[0, 1], 0, 1), vec![0, 1]);
    }

    #[test]
    fn endpoint_drags_partner() {
        let mut st = DecodeState::new(4, 1, 3);
        st.apply(3);
        assert_eq!(st.seq, vec![3, 1]);
        st.apply(0);
        st.apply(2);
        assert!(st.is_done());
    }

    #[test]
    fn tiny_sub_problems_are_forced() {
        let model = LowerModel::new(tiny(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inst = generate_uniform(3, 2).unwrap();
        let sub = SubProblem::standalone(vec![2, 0], 2, 0).unwrap();
        assert_eq!(model.solve(&sub, &inst, DecodeMode::Greedy, 1, &mut rng).unwrap().order, vec![2, 0]);
        let sub = SubProblem::standalone(vec![0, 1, 2], 0, 2).unwrap();
        for mode in [DecodeMode::Greedy, DecodeMode::Sample] {
            assert_eq!(model.solve(&sub, &inst, mode, 4, &mut rng).unwrap().order, vec![0, 1, 2]);
        }
    }

    #[test]
    fn teacher_forcing_reproduces_decode_log_probs() {
        let model = LowerModel::new(tiny(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let subs: Vec<PreparedSub> = (0..3)
            .map(|s| {
                let (inst, sub) = random_sub(9, s);
                PreparedSub::new(&sub, &inst)
            })
            .collect();
        let refs: Vec<&PreparedSub> = subs.iter().collect();
        let rolls = model.decode(&refs, 4, DecodeMode::Sample, &mut rng).unwrap();
        let choices: Vec<Vec<Vec<usize>>> = rolls.iter().map(|r| r.iter().map(|x| x.choices.clone()).collect()).collect();
        let g = Graph::new(&model.store);
        let lp = model.sequence_log_probs(&g, &refs, &choices).unwrap().value();
        for (i, r) in rolls.iter().flatten().enumerate() {
            assert!((lp.data[i] - r.log_prob).abs() < 1e-10, "{} vs {}", lp.data[i], r.log_prob);
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let model = LowerModel::new(tiny(), 2);
        let (inst, sub) = random_sub(12, 5);
        let a = model.solve(&sub, &inst, DecodeMode::Greedy, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = model.solve(&sub, &inst, DecodeMode::Greedy, 1, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let model = LowerModel::new(tiny(), 4);
        let (inst, sub) = random_sub(7, 8);
        let a = PreparedSub::new(&sub, &inst);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let pts: Vec<Point> = perm.iter().map(|&i| a.coords[i]).collect();
        let pos = |v: usize| perm.iter().position(|&p| p == v).unwrap();
        let b = PreparedSub::from_points(perm.to_vec(), &pts, pos(a.source), pos(a.target));
        let g = Graph::new(&model.store);
        let ha = model.encode(&g, &[&a]).unwrap().h.value();
        let hb = model.encode(&g, &[&b]).unwrap().h.value();
        let d = model.config.dim;
        for (new_i, &old_i) in perm.iter().enumerate() {
            for j in 0..d {
                assert!((hb.data[new_i * d + j] - ha.data[old_i * d + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn best_of_never_worse_than_oracle_bound() {
        let model = LowerModel::new(tiny(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (inst, sub) = random_sub(9, 3);
        let path = model.solve(&sub, &inst, DecodeMode::Sample, 8, &mut rng).unwrap();
        sub.check_path(&path).unwrap();
        let (_, opt) = held_karp_path(&sub, &inst).unwrap();
        assert!(inst.path_cost(&path.order) >= opt - 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rollouts_are_valid_paths(seed in 0u64..1000, m in 3usize..14) {
            let model = LowerModel::new(tiny(), seed);
            let (inst, sub) = random_sub(m, seed);
            let p = PreparedSub::new(&sub, &inst);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for r in model.decode(&[&p], 3, DecodeMode::Sample, &mut rng).unwrap().remove(0) {
                prop_assert_eq!(r.choices.len(), m - 1);
                prop_assert_eq!(r.path[0], p.source);
                prop_assert_eq!(*r.path.last().unwrap(), p.target);
                let mut seen = r.path.clone();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..m).collect::<Vec<_>>());
                prop_assert!(r.log_prob.is_finite() && r.log_prob <= 0.0);
            }
        }
    }
}
