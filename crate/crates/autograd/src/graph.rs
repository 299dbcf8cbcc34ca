//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the values it produced. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients for the parameters that were read.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::special::{digamma, ln_gamma, trigamma};
use crate::tensor::{gemm, Tensor};

/// Sentinel row index that gathers a zero row.
pub const ZERO_ROW: usize = usize::MAX;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Tanh,
    Exp,
    Ln,
    Softplus,
    Square,
    Neg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, w: usize },
    Bmm { a: usize, b: usize, trans_b: bool, share: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias { x: usize, b: usize },
    Scale { x: usize, s: f64 },
    AddScalar(usize),
    MulConst { x: usize, c: Arc<Vec<f64>> },
    Unary { x: usize, f: Unary },
    Min(usize, usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    SumAll(usize),
    SumLast(usize),
    MeanAxis1 { x: usize, n: usize },
    Softmax { x: usize, mask: Option<Arc<Vec<bool>>> },
    LogSoftmax { x: usize, mask: Option<Arc<Vec<bool>>> },
    GatherLast { x: usize, idx: Arc<Vec<usize>> },
    GatherRows { x: usize, idx: Arc<Vec<usize>> },
    Repeat { x: usize, times: usize },
    SplitHeads { x: usize, heads: usize },
    MergeHeads { x: usize, heads: usize },
    Reshape(usize),
    SliceLast { x: usize, start: usize },
    Stack(Vec<usize>),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    ScatterMax { x: usize, argmax: Vec<usize> },
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize, cols: Vec<f64> },
    AvgPool { x: usize },
    BetaLogProb { a: usize, b: usize, x: Arc<Vec<f64>> },
    BetaEntropy { a: usize, b: usize },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    params: &'s ParamStore,
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

#[derive(Clone, Copy)]
pub struct Var<'g, 's> {
    g: &'g Graph<'s>,
    id: usize,
}

impl std::fmt::Debug for Var<'_, '_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<'s> Graph<'s> {
    pub fn new(params: &'s ParamStore) -> Self {
        Self { params, nodes: RefCell::new(Vec::new()), param_nodes: RefCell::new(HashMap::new()) }
    }

    pub fn params(&self) -> &'s ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op, needs_grad });
        nodes.len() - 1
    }

    fn val(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn ng(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn var<'g>(&'g self, id: usize) -> Var<'g, 's> {
        Var { g: self, id }
    }

    pub fn constant<'g>(&'g self, t: Tensor) -> Var<'g, 's> {
        let id = self.push(t, Op::Leaf, false);
        self.var(id)
    }

    /// Constant that shares storage with an existing tensor.
    pub fn shared<'g>(&'g self, t: Arc<Tensor>) -> Var<'g, 's> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
            nodes.len() - 1
        };
        self.var(id)
    }

    pub fn param<'g>(&'g self, p: ParamId) -> Var<'g, 's> {
        if let Some(&id) = self.param_nodes.borrow().get(&p) {
            return self.var(id);
        }
        let value = self.params.shared(p);
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value, op: Op::Param(p), needs_grad: true });
            nodes.len() - 1
        };
        self.param_nodes.borrow_mut().insert(p, id);
        self.var(id)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack<'g>(&'g self, xs: &[Var<'g, 's>]) -> Var<'g, 's> {
        assert!(!xs.is_empty());
        let first = xs[0].value();
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(xs.len() * first.len());
        let mut ng = false;
        for x in xs {
            let v = x.value();
            assert_eq!(v.shape, first.shape, "stack needs equal shapes");
            data.extend_from_slice(&v.data);
            ng |= self.ng(x.id);
        }
        let id = self.push(Tensor::new(&shape, data), Op::Stack(xs.iter().map(|x| x.id).collect()), ng);
        self.var(id)
    }

    /// Accumulates `d loss / d param` into `grads` for every parameter read.
    pub fn backward(&self, loss: Var<'_, 's>, grads: &mut Gradients) {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut g: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        g[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(gy) = g[id].take() else { continue };
            if !nodes[id].needs_grad {
                continue;
            }
            backward_node(&nodes, id, &gy, &mut g, grads);
        }
    }
}

fn acc(g: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = &mut g[id];
    if slot.is_none() {
        *slot = Some(vec![0.0; nodes[id].value.len()]);
    }
    f(slot.as_mut().expect("just filled"));
}

fn softmax_rows(x: &[f64], n: usize, mask: Option<&[bool]>, log: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, (xr, or)) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
        let blocked = |j: usize| mask.is_some_and(|m| m[r * n + j]);
        let mx = (0..n).filter(|&j| !blocked(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
        assert!(mx > f64::NEG_INFINITY, "softmax row {r} is fully masked");
        let mut s = 0.0;
        for j in 0..n {
            if !blocked(j) {
                s += (xr[j] - mx).exp();
            }
        }
        let ls = s.ln();
        for j in 0..n {
            or[j] = match (blocked(j), log) {
                (true, true) => f64::NEG_INFINITY,
                (true, false) => 0.0,
                (false, true) => xr[j] - mx - ls,
                (false, false) => (xr[j] - mx).exp() / s,
            };
        }
    }
    out
}

fn conv_out(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

fn pool_range(i: usize, out: usize, size: usize) -> (usize, usize) {
    (i * size / out, ((i + 1) * size).div_ceil(out))
}

fn backward_node(nodes: &[Node], id: usize, gy: &[f64], g: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
    let node = &nodes[id];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Param(p) => grads.accumulate(*p, Tensor::new(&y.shape, gy.to_vec())),
        Op::MatMul { a, w } => {
            let (av, wv) = (&nodes[*a].value, &nodes[*w].value);
            let (k, n) = (wv.shape[0], wv.shape[1]);
            let m = av.len() / k;
            acc(g, nodes, *a, |da| gemm(m, n, k, gy, false, &wv.data, true, da, 1.0, 1.0));
            acc(g, nodes, *w, |dw| gemm(k, m, n, &av.data, true, gy, false, dw, 1.0, 1.0));
        }
        Op::Bmm { a, b, trans_b, share } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (ba, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
            let n = y.shape[2];
            let bsz = k * n;
            acc(g, nodes, *a, |da| {
                for i in 0..ba {
                    let bi = &bv.data[(i / share) * bsz..(i / share + 1) * bsz];
                    gemm(m, n, k, &gy[i * m * n..(i + 1) * m * n], false, bi, !trans_b, &mut da[i * m * k..(i + 1) * m * k], 1.0, 1.0);
                }
            });
            acc(g, nodes, *b, |db| {
                for i in 0..ba {
                    let dbi = &mut db[(i / share) * bsz..(i / share + 1) * bsz];
                    let ai = &av.data[i * m * k..(i + 1) * m * k];
                    let gi = &gy[i * m * n..(i + 1) * m * n];
                    if *trans_b {
                        gemm(n, m, k, gi, true, ai, false, dbi, 1.0, 1.0);
                    } else {
                        gemm(k, m, n, ai, true, gi, false, dbi, 1.0, 1.0);
                    }
                }
            });
        }
        Op::Add(a, b) => {
            acc(g, nodes, *a, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g));
            acc(g, nodes, *b, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g));
        }
        Op::Sub(a, b) => {
            acc(g, nodes, *a, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g));
            acc(g, nodes, *b, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d -= g));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            acc(g, nodes, *a, |d| {
                for i in 0..d.len() {
                    d[i] += gy[i] * bv.data[i];
                }
            });
            acc(g, nodes, *b, |d| {
                for i in 0..d.len() {
                    d[i] += gy[i] * av.data[i];
                }
            });
        }
        Op::AddBias { x, b } => {
            acc(g, nodes, *x, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g));
            acc(g, nodes, *b, |d| {
                let n = d.len();
                for row in gy.chunks_exact(n) {
                    d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            });
        }
        Op::Scale { x, s } => acc(g, nodes, *x, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += s * g)),
        Op::AddScalar(x) => acc(g, nodes, *x, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g)),
        Op::MulConst { x, c } => acc(g, nodes, *x, |d| {
            for i in 0..d.len() {
                d[i] += gy[i] * c[i];
            }
        }),
        Op::Unary { x, f } => {
            let xv = &nodes[*x].value;
            acc(g, nodes, *x, |d| {
                for i in 0..d.len() {
                    let (xi, yi) = (xv.data[i], y.data[i]);
                    let dydx = match f {
                        Unary::Relu => {
                            if xi > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Tanh => 1.0 - yi * yi,
                        Unary::Exp => yi,
                        Unary::Ln => 1.0 / xi,
                        Unary::Softplus => 1.0 / (1.0 + (-xi).exp()),
                        Unary::Square => 2.0 * xi,
                        Unary::Neg => -1.0,
                    };
                    d[i] += gy[i] * dydx;
                }
            });
        }
        Op::Min(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            acc(g, nodes, *a, |d| {
                for i in 0..d.len() {
                    if av.data[i] <= bv.data[i] {
                        d[i] += gy[i];
                    }
                }
            });
            acc(g, nodes, *b, |d| {
                for i in 0..d.len() {
                    if av.data[i] > bv.data[i] {
                        d[i] += gy[i];
                    }
                }
            });
        }
        Op::Clamp { x, lo, hi } => {
            let xv = &nodes[*x].value;
            acc(g, nodes, *x, |d| {
                for i in 0..d.len() {
                    if xv.data[i] >= *lo && xv.data[i] <= *hi {
                        d[i] += gy[i];
                    }
                }
            });
        }
        Op::SumAll(x) => acc(g, nodes, *x, |d| d.iter_mut().for_each(|d| *d += gy[0])),
        Op::SumLast(x) => {
            let n = nodes[*x].value.last_dim();
            acc(g, nodes, *x, |d| {
                for (row, gv) in d.chunks_exact_mut(n).zip(gy) {
                    row.iter_mut().for_each(|d| *d += gv);
                }
            });
        }
        Op::MeanAxis1 { x, n } => {
            let dd = y.last_dim();
            acc(g, nodes, *x, |d| {
                for (b, block) in d.chunks_exact_mut(n * dd).enumerate() {
                    for row in block.chunks_exact_mut(dd) {
                        for j in 0..dd {
                            row[j] += gy[b * dd + j] / *n as f64;
                        }
                    }
                }
            });
        }
        Op::Softmax { x, mask } => {
            let n = y.last_dim();
            acc(g, nodes, *x, |d| {
                for r in 0..y.len() / n {
                    let (p, gr) = (&y.data[r * n..(r + 1) * n], &gy[r * n..(r + 1) * n]);
                    let dot: f64 = p.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for j in 0..n {
                        if mask.as_ref().is_some_and(|m| m[r * n + j]) {
                            continue;
                        }
                        d[r * n + j] += p[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax { x, mask } => {
            let n = y.last_dim();
            acc(g, nodes, *x, |d| {
                for r in 0..y.len() / n {
                    let blocked = |j: usize| mask.as_ref().is_some_and(|m| m[r * n + j]);
                    let gr = &gy[r * n..(r + 1) * n];
                    let total: f64 = (0..n).filter(|&j| !blocked(j)).map(|j| gr[j]).sum();
                    for j in 0..n {
                        if !blocked(j) {
                            d[r * n + j] += gr[j] - y.data[r * n + j].exp() * total;
                        }
                    }
                }
            });
        }
        Op::GatherLast { x, idx } => {
            let n = nodes[*x].value.last_dim();
            acc(g, nodes, *x, |d| {
                for (r, &j) in idx.iter().enumerate() {
                    d[r * n + j] += gy[r];
                }
            });
        }
        Op::GatherRows { x, idx } => {
            let dd = y.last_dim();
            acc(g, nodes, *x, |d| {
                for (r, &j) in idx.iter().enumerate() {
                    if j == ZERO_ROW {
                        continue;
                    }
                    for c in 0..dd {
                        d[j * dd + c] += gy[r * dd + c];
                    }
                }
            });
        }
        Op::Repeat { x, times } => {
            let block = nodes[*x].value.len() / nodes[*x].value.shape[0];
            acc(g, nodes, *x, |d| {
                for (o, chunk) in gy.chunks_exact(block).enumerate() {
                    let b = o / times;
                    d[b * block..(b + 1) * block].iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                }
            });
        }
        Op::SplitHeads { x, heads } => {
            let xs = &nodes[*x].value.shape;
            let (bsz, n, dm) = (xs[0], xs[1], xs[2]);
            let dk = dm / heads;
            acc(g, nodes, *x, |d| {
                for b in 0..bsz {
                    for h in 0..*heads {
                        for i in 0..n {
                            let src = ((b * heads + h) * n + i) * dk;
                            let dst = (b * n + i) * dm + h * dk;
                            for j in 0..dk {
                                d[dst + j] += gy[src + j];
                            }
                        }
                    }
                }
            });
        }
        Op::MergeHeads { x, heads } => {
            let (bsz, n, dm) = (y.shape[0], y.shape[1], y.shape[2]);
            let dk = dm / heads;
            acc(g, nodes, *x, |d| {
                for b in 0..bsz {
                    for h in 0..*heads {
                        for i in 0..n {
                            let src = (b * n + i) * dm + h * dk;
                            let dst = ((b * heads + h) * n + i) * dk;
                            for j in 0..dk {
                                d[dst + j] += gy[src + j];
                            }
                        }
                    }
                }
            });
        }
        Op::Reshape(x) => acc(g, nodes, *x, |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += g)),
        Op::SliceLast { x, start } => {
            let n = nodes[*x].value.last_dim();
            let w = y.last_dim();
            acc(g, nodes, *x, |d| {
                for (r, row) in gy.chunks_exact(w).enumerate() {
                    for j in 0..w {
                        d[r * n + start + j] += row[j];
                    }
                }
            });
        }
        Op::Stack(xs) => {
            let block = gy.len() / xs.len();
            for (i, &x) in xs.iter().enumerate() {
                acc(g, nodes, x, |d| {
                    d.iter_mut().zip(&gy[i * block..(i + 1) * block]).for_each(|(d, g)| *d += g)
                });
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let dd = y.last_dim();
            let gam = &nodes[*gamma].value.data;
            acc(g, nodes, *gamma, |d| {
                for (xr, gr) in xhat.chunks_exact(dd).zip(gy.chunks_exact(dd)) {
                    for j in 0..dd {
                        d[j] += gr[j] * xr[j];
                    }
                }
            });
            acc(g, nodes, *beta, |d| {
                for gr in gy.chunks_exact(dd) {
                    d.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                }
            });
            acc(g, nodes, *x, |d| {
                for r in 0..rstd.len() {
                    let xr = &xhat[r * dd..(r + 1) * dd];
                    let gr = &gy[r * dd..(r + 1) * dd];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..dd {
                        let dx = gr[j] * gam[j];
                        m1 += dx;
                        m2 += dx * xr[j];
                    }
                    m1 /= dd as f64;
                    m2 /= dd as f64;
                    for j in 0..dd {
                        d[r * dd + j] += rstd[r] * (gr[j] * gam[j] - m1 - xr[j] * m2);
                    }
                }
            });
        }
        Op::ScatterMax { x, argmax } => {
            let c = nodes[*x].value.last_dim();
            let cells = y.len() / c;
            acc(g, nodes, *x, |d| {
                for ch in 0..c {
                    for cell in 0..cells {
                        let src = argmax[ch * cells + cell];
                        if src != ZERO_ROW {
                            d[src * c + ch] += gy[ch * cells + cell];
                        }
                    }
                }
            });
        }
        Op::Conv2d { x, w, b, stride, pad, cols } => {
            let xs = &nodes[*x].value.shape;
            let ws = &nodes[*w].value.shape;
            let (bsz, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
            let (co, kh, kw) = (ws[0], ws[2], ws[3]);
            let (ho, wo) = (y.shape[2], y.shape[3]);
            let kk = ci * kh * kw;
            let sp = ho * wo;
            let wv = &nodes[*w].value.data;
            acc(g, nodes, *b, |d| {
                for bi in 0..bsz {
                    for o in 0..co {
                        d[o] += gy[(bi * co + o) * sp..(bi * co + o + 1) * sp].iter().sum::<f64>();
                    }
                }
            });
            acc(g, nodes, *w, |d| {
                for bi in 0..bsz {
                    gemm(co, sp, kk, &gy[bi * co * sp..(bi + 1) * co * sp], false, &cols[bi * kk * sp..(bi + 1) * kk * sp], true, d, 1.0, 1.0);
                }
            });
            acc(g, nodes, *x, |d| {
                let mut dcols = vec![0.0; kk * sp];
                for bi in 0..bsz {
                    gemm(kk, co, sp, wv, true, &gy[bi * co * sp..(bi + 1) * co * sp], false, &mut dcols, 1.0, 0.0);
                    let dx = &mut d[bi * ci * h * wd..(bi + 1) * ci * h * wd];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let row = (c * kh + ky) * kw + kx;
                                for oy in 0..ho {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for ox in 0..wo {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        dx[(c * h + iy as usize) * wd + ix as usize] += dcols[row * sp + oy * wo + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        Op::AvgPool { x } => {
            let xs = &nodes[*x].value.shape;
            let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
            let (oh, ow) = (y.shape[2], y.shape[3]);
            acc(g, nodes, *x, |d| {
                for p in 0..planes {
                    for i in 0..oh {
                        let (y0, y1) = pool_range(i, oh, h);
                        for j in 0..ow {
                            let (x0, x1) = pool_range(j, ow, w);
                            let share = gy[(p * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    d[(p * h + yy) * w + xx] += share;
                                }
                            }
                        }
                    }
                }
            });
        }
        Op::BetaLogProb { a, b, x } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            acc(g, nodes, *a, |d| {
                for i in 0..d.len() {
                    let (al, be) = (av.data[i], bv.data[i]);
                    d[i] += gy[i] * (digamma(al + be) - digamma(al) + x[i].ln());
                }
            });
            acc(g, nodes, *b, |d| {
                for i in 0..d.len() {
                    let (al, be) = (av.data[i], bv.data[i]);
                    d[i] += gy[i] * (digamma(al + be) - digamma(be) + (1.0 - x[i]).ln());
                }
            });
        }
        Op::BetaEntropy { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            acc(g, nodes, *a, |d| {
                for i in 0..d.len() {
                    let (al, be) = (av.data[i], bv.data[i]);
                    d[i] += gy[i] * (-(al - 1.0) * trigamma(al) + (al + be - 2.0) * trigamma(al + be));
                }
            });
            acc(g, nodes, *b, |d| {
                for i in 0..d.len() {
                    let (al, be) = (av.data[i], bv.data[i]);
                    d[i] += gy[i] * (-(be - 1.0) * trigamma(be) + (al + be - 2.0) * trigamma(al + be));
                }
            });
        }
    }
}

impl<'g, 's> Var<'g, 's> {
    pub fn graph(&self) -> &'g Graph<'s> {
        self.g
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.g.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary_op(self, value: Tensor, op: Op) -> Self {
        let id = self.g.push(value, op, self.g.ng(self.id));
        self.g.var(id)
    }

    fn binary_op(self, other: Self, value: Tensor, op: Op) -> Self {
        let ng = self.g.ng(self.id) || self.g.ng(other.id);
        let id = self.g.push(value, op, ng);
        self.g.var(id)
    }

    fn zip_with(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape, b.shape, "elementwise op on mismatched shapes");
        Tensor::new(&a.shape, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
    }

    /// `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(self, w: Self) -> Self {
        let (a, wv) = (self.value(), w.value());
        assert_eq!(wv.shape.len(), 2, "matmul weight must be 2-d");
        let (k, n) = (wv.shape[0], wv.shape[1]);
        assert_eq!(a.last_dim(), k, "matmul inner dims {:?} x {:?}", a.shape, wv.shape);
        let m = a.len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a.data, false, &wv.data, false, &mut out, 1.0, 0.0);
        let mut shape = a.shape.clone();
        *shape.last_mut().expect("non-scalar") = n;
        self.binary_op(w, Tensor::new(&shape, out), Op::MatMul { a: self.id, w: w.id })
    }

    /// Batched product `[B, m, k] x [B', k, n]` (or `[B', n, k]` when
    /// `trans_b`), where `B = B' * share` and batch `i` uses `b[i / share]`.
    pub fn bmm(self, b: Self, trans_b: bool) -> Self {
        let (av, bv) = (self.value(), b.value());
        let (ba, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
        let (bb, n) = if trans_b {
            assert_eq!(bv.shape[2], k, "bmm inner dims {:?} x {:?}ᵀ", av.shape, bv.shape);
            (bv.shape[0], bv.shape[1])
        } else {
            assert_eq!(bv.shape[1], k, "bmm inner dims {:?} x {:?}", av.shape, bv.shape);
            (bv.shape[0], bv.shape[2])
        };
        assert!(bb > 0 && ba % bb == 0, "batch {ba} is not a multiple of {bb}");
        let share = ba / bb;
        let mut out = vec![0.0; ba * m * n];
        for i in 0..ba {
            let bi = &bv.data[(i / share) * k * n..(i / share + 1) * k * n];
            gemm(m, k, n, &av.data[i * m * k..(i + 1) * m * k], false, bi, trans_b, &mut out[i * m * n..(i + 1) * m * n], 1.0, 0.0);
        }
        self.binary_op(b, Tensor::new(&[ba, m, n], out), Op::Bmm { a: self.id, b: b.id, trans_b, share })
    }

    pub fn add(self, o: Self) -> Self {
        let v = self.zip_with(o, |a, b| a + b);
        self.binary_op(o, v, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Self) -> Self {
        let v = self.zip_with(o, |a, b| a - b);
        self.binary_op(o, v, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Self) -> Self {
        let v = self.zip_with(o, |a, b| a * b);
        self.binary_op(o, v, Op::Mul(self.id, o.id))
    }

    pub fn min(self, o: Self) -> Self {
        let v = self.zip_with(o, f64::min);
        self.binary_op(o, v, Op::Min(self.id, o.id))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(self, b: Self) -> Self {
        let (xv, bv) = (self.value(), b.value());
        let n = bv.len();
        assert_eq!(xv.last_dim(), n, "bias length {n} vs shape {:?}", xv.shape);
        let mut out = xv.data.clone();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(&bv.data).for_each(|(o, b)| *o += b);
        }
        self.binary_op(b, Tensor::new(&xv.shape, out), Op::AddBias { x: self.id, b: b.id })
    }

    pub fn scale(self, s: f64) -> Self {
        let xv = self.value();
        let v = Tensor::new(&xv.shape, xv.data.iter().map(|x| x * s).collect());
        self.unary_op(v, Op::Scale { x: self.id, s })
    }

    pub fn add_scalar(self, c: f64) -> Self {
        let xv = self.value();
        let v = Tensor::new(&xv.shape, xv.data.iter().map(|x| x + c).collect());
        self.unary_op(v, Op::AddScalar(self.id))
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(self, c: &[f64]) -> Self {
        let xv = self.value();
        assert_eq!(xv.len(), c.len());
        let v = Tensor::new(&xv.shape, xv.data.iter().zip(c).map(|(x, c)| x * c).collect());
        self.unary_op(v, Op::MulConst { x: self.id, c: Arc::new(c.to_vec()) })
    }

    fn map(self, f: Unary) -> Self {
        let xv = self.value();
        let data = xv
            .data
            .iter()
            .map(|&x| match f {
                Unary::Relu => x.max(0.0),
                Unary::Tanh => x.tanh(),
                Unary::Exp => x.exp(),
                Unary::Ln => x.ln(),
                Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
                Unary::Square => x * x,
                Unary::Neg => -x,
            })
            .collect();
        self.unary_op(Tensor::new(&xv.shape, data), Op::Unary { x: self.id, f })
    }

    pub fn relu(self) -> Self {
        self.map(Unary::Relu)
    }

    pub fn tanh(self) -> Self {
        self.map(Unary::Tanh)
    }

    pub fn exp(self) -> Self {
        self.map(Unary::Exp)
    }

    pub fn ln(self) -> Self {
        self.map(Unary::Ln)
    }

    pub fn softplus(self) -> Self {
        self.map(Unary::Softplus)
    }

    pub fn square(self) -> Self {
        self.map(Unary::Square)
    }

    pub fn neg(self) -> Self {
        self.map(Unary::Neg)
    }

    /// Gradient passes only where `lo <= x <= hi`.
    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        let xv = self.value();
        let v = Tensor::new(&xv.shape, xv.data.iter().map(|x| x.clamp(lo, hi)).collect());
        self.unary_op(v, Op::Clamp { x: self.id, lo, hi })
    }

    pub fn sum(self) -> Self {
        let s = self.value().data.iter().sum();
        self.unary_op(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Self {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums the last axis away.
    pub fn sum_last(self) -> Self {
        let xv = self.value();
        let n = xv.last_dim();
        let data = xv.data.chunks_exact(n).map(|r| r.iter().sum()).collect();
        let shape = &xv.shape[..xv.shape.len().saturating_sub(1)];
        self.unary_op(Tensor::new(shape, data), Op::SumLast(self.id))
    }

    /// `[B, n, d] -> [B, d]`.
    pub fn mean_axis1(self) -> Self {
        let xv = self.value();
        let (b, n, d) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..d {
                    out[bi * d + j] += xv.data[(bi * n + i) * d + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        self.unary_op(Tensor::new(&[b, d], out), Op::MeanAxis1 { x: self.id, n })
    }

    /// Softmax over the last axis; `mask[i] == true` forces probability 0.
    pub fn softmax(self, mask: Option<Arc<Vec<bool>>>) -> Self {
        let xv = self.value();
        if let Some(m) = &mask {
            assert_eq!(m.len(), xv.len());
        }
        let out = softmax_rows(&xv.data, xv.last_dim(), mask.as_deref().map(|m| m.as_slice()), false);
        self.unary_op(Tensor::new(&xv.shape, out), Op::Softmax { x: self.id, mask })
    }

    /// Log-softmax over the last axis; masked entries become `-inf`.
    pub fn log_softmax(self, mask: Option<Arc<Vec<bool>>>) -> Self {
        let xv = self.value();
        if let Some(m) = &mask {
            assert_eq!(m.len(), xv.len());
        }
        let out = softmax_rows(&xv.data, xv.last_dim(), mask.as_deref().map(|m| m.as_slice()), true);
        self.unary_op(Tensor::new(&xv.shape, out), Op::LogSoftmax { x: self.id, mask })
    }

    /// Picks `x[r, idx[r]]` from each row of the last axis.
    pub fn gather_last(self, idx: Vec<usize>) -> Self {
        let xv = self.value();
        let n = xv.last_dim();
        assert_eq!(xv.len() / n, idx.len());
        let data = idx.iter().enumerate().map(|(r, &j)| xv.data[r * n + j]).collect();
        let shape = &xv.shape[..xv.shape.len() - 1];
        self.unary_op(Tensor::new(shape, data), Op::GatherLast { x: self.id, idx: Arc::new(idx) })
    }

    /// Selects rows (over all leading axes flattened); [`ZERO_ROW`] yields zeros.
    pub fn gather_rows(self, idx: Vec<usize>) -> Self {
        let xv = self.value();
        let d = xv.last_dim();
        let mut data = vec![0.0; idx.len() * d];
        for (r, &j) in idx.iter().enumerate() {
            if j != ZERO_ROW {
                data[r * d..(r + 1) * d].copy_from_slice(&xv.data[j * d..(j + 1) * d]);
            }
        }
        self.unary_op(Tensor::new(&[idx.len(), d], data), Op::GatherRows { x: self.id, idx: Arc::new(idx) })
    }

    /// Repeats each leading-axis block `times` times consecutively.
    pub fn repeat(self, times: usize) -> Self {
        let xv = self.value();
        let block = xv.len() / xv.shape[0];
        let mut data = Vec::with_capacity(xv.len() * times);
        for chunk in xv.data.chunks_exact(block) {
            for _ in 0..times {
                data.extend_from_slice(chunk);
            }
        }
        let mut shape = xv.shape.clone();
        shape[0] *= times;
        self.unary_op(Tensor::new(&shape, data), Op::Repeat { x: self.id, times })
    }

    /// `[B, n, h*dk] -> [B*h, n, dk]`.
    pub fn split_heads(self, heads: usize) -> Self {
        let xv = self.value();
        let (b, n, dm) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        assert_eq!(dm % heads, 0);
        let dk = dm / heads;
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..n {
                    let dst = ((bi * heads + h) * n + i) * dk;
                    let src = (bi * n + i) * dm + h * dk;
                    out[dst..dst + dk].copy_from_slice(&xv.data[src..src + dk]);
                }
            }
        }
        self.unary_op(Tensor::new(&[b * heads, n, dk], out), Op::SplitHeads { x: self.id, heads })
    }

    /// `[B*h, n, dk] -> [B, n, h*dk]`.
    pub fn merge_heads(self, heads: usize) -> Self {
        let xv = self.value();
        let (bh, n, dk) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        let b = bh / heads;
        let dm = dk * heads;
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..n {
                    let src = ((bi * heads + h) * n + i) * dk;
                    let dst = (bi * n + i) * dm + h * dk;
                    out[dst..dst + dk].copy_from_slice(&xv.data[src..src + dk]);
                }
            }
        }
        self.unary_op(Tensor::new(&[b, n, dm], out), Op::MergeHeads { x: self.id, heads })
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let xv = (*self.value()).clone().reshaped(shape);
        self.unary_op(xv, Op::Reshape(self.id))
    }

    pub fn slice_last(self, start: usize, len: usize) -> Self {
        let xv = self.value();
        let n = xv.last_dim();
        assert!(start + len <= n);
        let data = xv.data.chunks_exact(n).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = xv.shape.clone();
        *shape.last_mut().expect("non-scalar") = len;
        self.unary_op(Tensor::new(&shape, data), Op::SliceLast { x: self.id, start })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(self, gamma: Self, beta: Self) -> Self {
        let xv = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let d = xv.last_dim();
        assert!(gv.len() == d && bv.len() == d);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let xr = &xv.data[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mu) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let ng = self.g.ng(self.id) || self.g.ng(gamma.id) || self.g.ng(beta.id);
        let id = self.g.push(
            Tensor::new(&xv.shape, out),
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd },
            ng,
        );
        self.g.var(id)
    }

    /// Per-channel max of node rows `[N, C]` into grid cells, returned as
    /// `[C, height, width]`; empty cells are zero.
    pub fn scatter_max(self, cells: &[usize], height: usize, width: usize) -> Self {
        let xv = self.value();
        let c = xv.last_dim();
        let hw = height * width;
        assert_eq!(xv.len() / c, cells.len());
        let mut out = vec![0.0; c * hw];
        let mut argmax = vec![ZERO_ROW; c * hw];
        for (i, &cell) in cells.iter().enumerate() {
            for ch in 0..c {
                let v = xv.data[i * c + ch];
                let k = ch * hw + cell;
                if argmax[k] == ZERO_ROW || v > out[k] {
                    out[k] = v;
                    argmax[k] = i;
                }
            }
        }
        self.unary_op(Tensor::new(&[c, height, width], out), Op::ScatterMax { x: self.id, argmax })
    }

    /// 2-d convolution of `[B, Ci, H, W]` with `[Co, Ci, kh, kw]` weights.
    pub fn conv2d(self, w: Self, b: Self, stride: usize, pad: usize) -> Self {
        let (xv, wv, bv) = (self.value(), w.value(), b.value());
        let (bsz, ci, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let (co, kh, kw) = (wv.shape[0], wv.shape[2], wv.shape[3]);
        assert_eq!(wv.shape[1], ci, "conv input channels");
        assert_eq!(bv.len(), co);
        let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad));
        let kk = ci * kh * kw;
        let sp = ho * wo;
        let mut cols = vec![0.0; bsz * kk * sp];
        let mut out = vec![0.0; bsz * co * sp];
        for bi in 0..bsz {
            let x = &xv.data[bi * ci * h * wd..(bi + 1) * ci * h * wd];
            let col = &mut cols[bi * kk * sp..(bi + 1) * kk * sp];
            for c in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = (c * kh + ky) * kw + kx;
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    col[row * sp + oy * wo + ox] = x[(c * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            let o = &mut out[bi * co * sp..(bi + 1) * co * sp];
            for (oc, plane) in o.chunks_exact_mut(sp).enumerate() {
                plane.fill(bv.data[oc]);
            }
            gemm(co, kk, sp, &wv.data, false, col, false, o, 1.0, 1.0);
        }
        let ng = self.g.ng(self.id) || self.g.ng(w.id) || self.g.ng(b.id);
        let id = self.g.push(
            Tensor::new(&[bsz, co, ho, wo], out),
            Op::Conv2d { x: self.id, w: w.id, b: b.id, stride, pad, cols },
            ng,
        );
        self.g.var(id)
    }

    /// Adaptive average pooling of `[B, C, H, W]` to `[B, C, oh, ow]`.
    pub fn adaptive_avg_pool(self, oh: usize, ow: usize) -> Self {
        let xv = self.value();
        let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let mut out = vec![0.0; b * c * oh * ow];
        for p in 0..b * c {
            for i in 0..oh {
                let (y0, y1) = pool_range(i, oh, h);
                for j in 0..ow {
                    let (x0, x1) = pool_range(j, ow, w);
                    let mut s = 0.0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            s += xv.data[(p * h + yy) * w + xx];
                        }
                    }
                    out[(p * oh + i) * ow + j] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        self.unary_op(Tensor::new(&[b, c, oh, ow], out), Op::AvgPool { x: self.id })
    }

    /// Elementwise Beta(alpha, beta) log-density at constant points `x` in (0, 1).
    pub fn beta_log_prob(self, beta: Self, x: &[f64]) -> Self {
        let (av, bv) = (self.value(), beta.value());
        assert!(av.shape == bv.shape && av.len() == x.len());
        let data = (0..x.len())
            .map(|i| {
                let (a, b) = (av.data[i], bv.data[i]);
                ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x[i].ln() + (b - 1.0) * (1.0 - x[i]).ln()
            })
            .collect();
        self.binary_op(beta, Tensor::new(&av.shape, data), Op::BetaLogProb { a: self.id, b: beta.id, x: Arc::new(x.to_vec()) })
    }

    /// Elementwise differential entropy of Beta(alpha, beta).
    pub fn beta_entropy(self, beta: Self) -> Self {
        let (av, bv) = (self.value(), beta.value());
        assert_eq!(av.shape, bv.shape);
        let data = av.data.iter().zip(&bv.data).map(|(&a, &b)| beta_entropy(a, b)).collect();
        self.binary_op(beta, Tensor::new(&av.shape, data), Op::BetaEntropy { a: self.id, b: beta.id })
    }
}

pub fn beta_entropy(a: f64, b: f64) -> f64 {
    let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    ln_b - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b)
}
