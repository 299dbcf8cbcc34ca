//! Non-learned stand-ins for both levels: a uniform random upper policy,
//! farthest insertion for fixed-endpoint paths, and an adapter that hands
//! sub-problems to an external solver process.

use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::SubProblem;
use crate::error::{Error, Result};
use crate::instance::{OpenPath, Point, TspInstance};

/// Uniform random coordinates in the unit square.
#[derive(Debug, Clone)]
pub struct RandomUpper {
    rng: ChaCha8Rng,
}

impl RandomUpper {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_action(&mut self) -> Point {
        Point::new(self.rng.gen::<f64>(), self.rng.gen::<f64>())
    }
}

/// Farthest insertion starting from the path `[source, target]`.
///
/// The next node is the one whose distance to the nearest inserted node is
/// largest; it goes into the position with the smallest length increase.
/// Endpoints stay first and last. Ties go to the lower node index / earlier
/// position.
pub fn farthest_insertion_open(sub: &SubProblem, instance: &TspInstance) -> OpenPath {
    let (s, t) = (sub.source, sub.target);
    let mut rest: Vec<usize> = sub.nodes.iter().copied().filter(|&v| v != s && v != t).collect();
    rest.sort_unstable();
    let mut path = Vec::with_capacity(sub.len());
    path.push(s);
    path.push(t);
    let mut dmin: Vec<f64> = rest.iter().map(|&v| instance.cost(v, s).min(instance.cost(v, t))).collect();
    let mut alive = vec![true; rest.len()];
    for _ in 0..rest.len() {
        let mut pick = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in dmin.iter().enumerate() {
            if alive[i] && d > far {
                far = d;
                pick = i;
            }
        }
        alive[pick] = false;
        let v = rest[pick];
        let mut best_pos = 1;
        let mut best_inc = f64::INFINITY;
        for pos in 1..path.len() {
            let (a, b) = (path[pos - 1], path[pos]);
            let inc = instance.cost(a, v) + instance.cost(v, b) - instance.cost(a, b);
            if inc < best_inc {
                best_inc = inc;
                best_pos = pos;
            }
        }
        path.insert(best_pos, v);
        for (i, d) in dmin.iter_mut().enumerate() {
            if alive[i] {
                *d = d.min(instance.cost(rest[i], v));
            }
        }
    }
    OpenPath::new(path)
}

/// File format used to hand a sub-problem to the external process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalFormat {
    /// TSPLIB `EUC_2D` file with the source–target edge in a
    /// `FIXED_EDGES_SECTION`; node 1 is the source and node `m` the target.
    Tsplib,
    /// `{"nodes": [[x, y], ...], "source": 0, "target": m - 1}`.
    Json,
}

/// How to invoke an external sub-problem solver.
///
/// `command` is an argv template; `{input}`, `{output}` and `{time_limit}`
/// are substituted before spawning. The process must write either a TSPLIB
/// `TOUR_SECTION` (1-based, `-1` terminated) or whitespace-separated 0-based
/// local indices to the output file. The order may be a path from either
/// endpoint or a cycle in which source and target are adjacent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSolver {
    pub command: Vec<String>,
    pub format: ExternalFormat,
    pub time_limit: Duration,
}

/// Result of an external call; `fallback` is set when the farthest insertion
/// path was returned instead.
#[derive(Debug, Clone)]
pub struct ExternalOutcome {
    pub path: OpenPath,
    pub fallback: Option<String>,
}

/// Sub-problem nodes in local order: source first, target last.
fn local_order(sub: &SubProblem) -> Vec<usize> {
    let mut local = vec![sub.source];
    local.extend(sub.nodes.iter().copied().filter(|&v| v != sub.source && v != sub.target));
    local.push(sub.target);
    local
}

impl ExternalSolver {
    pub fn solve(&self, sub: &SubProblem, instance: &TspInstance) -> ExternalOutcome {
        match self.try_solve(sub, instance) {
            Ok(path) => ExternalOutcome { path, fallback: None },
            Err(e) => {
                log::warn!("external solver failed, using farthest insertion: {e}");
                ExternalOutcome { path: farthest_insertion_open(sub, instance), fallback: Some(e.to_string()) }
            }
        }
    }

    fn try_solve(&self, sub: &SubProblem, instance: &TspInstance) -> Result<OpenPath> {
        if self.command.is_empty() {
            return Err(Error::External("empty command".into()));
        }
        let local = local_order(sub);
        if local.len() == 2 {
            return Ok(OpenPath::new(local));
        }
        let dir = tempfile::tempdir()?;
        let input = dir.path().join(match self.format {
            ExternalFormat::Tsplib => "sub.tsp",
            ExternalFormat::Json => "sub.json",
        });
        let output = dir.path().join("sub.out");
        std::fs::write(&input, self.render_input(&local, instance))?;
        self.run(&input, &output)?;
        let text = std::fs::read_to_string(&output)
            .map_err(|e| Error::External(format!("no output file: {e}")))?;
        let order = parse_external_order(&text, local.len())?;
        let path = orient_local(&order, local.len())?;
        let path = OpenPath::new(path.into_iter().map(|i| local[i]).collect());
        sub.check_path(&path)?;
        Ok(path)
    }

    fn render_input(&self, local: &[usize], instance: &TspInstance) -> String {
        let m = local.len();
        match self.format {
            ExternalFormat::Json => serde_json::json!({
                "nodes": local.iter().map(|&v| [instance.point(v).x, instance.point(v).y]).collect::<Vec<_>>(),
                "source": 0,
                "target": m - 1,
            })
            .to_string(),
            ExternalFormat::Tsplib => {
                // EUC_2D rounds distances to integers, so scale up first.
                let mut s = format!(
                    "NAME : sub\nTYPE : TSP\nDIMENSION : {m}\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n"
                );
                for (i, &v) in local.iter().enumerate() {
                    let p = instance.point(v);
                    s.push_str(&format!("{} {:.3} {:.3}\n", i + 1, p.x * 1e6, p.y * 1e6));
                }
                s.push_str(&format!("FIXED_EDGES_SECTION\n1 {m}\n-1\nEOF\n"));
                s
            }
        }
    }

    fn run(&self, input: &Path, output: &Path) -> Result<()> {
        let subst = |a: &str| {
            a.replace("{input}", &input.display().to_string())
                .replace("{output}", &output.display().to_string())
                .replace("{time_limit}", &self.time_limit.as_secs_f64().to_string())
        };
        let args: Vec<String> = self.command.iter().map(|a| subst(a)).collect();
        let mut child = Command::new(PathBuf::from(&args[0]))
            .args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot start `{}`: {e}", args[0])))?;
        let start = Instant::now();
        loop {
            if let Some(status) = child.try_wait()? {
                if status.success() {
                    return Ok(());
                }
                let mut err = String::new();
                if let Some(mut e) = child.stderr.take() {
                    let _ = e.read_to_string(&mut err);
                }
                return Err(Error::External(format!("exit status {status}: {}", err.trim())));
            }
            if start.elapsed() > self.time_limit {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::External(format!("timed out after {:?}", self.time_limit)));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Reads a TSPLIB tour section (1-based) or bare 0-based indices.
fn parse_external_order(text: &str, m: usize) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::External(format!("malformed solver output: {msg}"));
    if let Some(pos) = text.find("TOUR_SECTION") {
        let mut out = Vec::with_capacity(m);
        for tok in text[pos + "TOUR_SECTION".len()..].split_whitespace() {
            let v: i64 = tok.parse().map_err(|_| bad(format!("token `{tok}`")))?;
            if v == -1 {
                break;
            }
            if v < 1 {
                return Err(bad(format!("index {v}")));
            }
            out.push(v as usize - 1);
        }
        Ok(out)
    } else {
        text.split_whitespace()
            .map(|tok| tok.parse::<usize>().map_err(|_| bad(format!("token `{tok}`"))))
            .collect()
    }
}

/// Turns a local order into a `0 -> m-1` path. Accepts a path in either
/// direction or a cycle in which `0` and `m-1` are adjacent.
fn orient_local(order: &[usize], m: usize) -> Result<Vec<usize>> {
    let mut seen = vec![false; m];
    if order.len() != m {
        return Err(Error::External(format!("expected {m} nodes, got {}", order.len())));
    }
    for &v in order {
        if v >= m || std::mem::replace(&mut seen[v], true) {
            return Err(Error::External(format!("invalid or repeated node {v}")));
        }
    }
    let (s, t) = (0, m - 1);
    let ps = order.iter().position(|&v| v == s).expect("permutation");
    let pt = order.iter().position(|&v| v == t).expect("permutation");
    // cycle position arithmetic: walk away from the target
    let path: Vec<usize> = if (ps + 1) % m == pt {
        (0..m).map(|i| order[(ps + m - i) % m]).collect()
    } else if (pt + 1) % m == ps {
        (0..m).map(|i| order[(ps + i) % m]).collect()
    } else {
        return Err(Error::External("source and target are not adjacent".into()));
    };
    Ok(path)
}
