use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use htsp_autograd::Checkpoint;
use htsp_core::heuristics::{ExternalFormat, ExternalSolver};
use htsp_core::io::{read_instance_file, write_tour};
use htsp_policy::{ActionMode, DecodeMode};
use htsp_train::{derive_seed, load_models, solve_instance, EpisodeOptions, LowerSolver, ProblemConfig, TrainConfig, UpperPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{FileFormat, LowerChoice, LowerMode, SolveArgs, UpperChoice};
use crate::{collect_instances, ensure_dir, instance_id};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRecord {
    pub instance_id: String,
    pub n: usize,
    pub length: f64,
    pub seconds: f64,
    pub steps: usize,
    pub fallbacks: usize,
}

pub fn run(args: &SolveArgs) -> Result<Vec<SolveRecord>> {
    let files = collect_instances(&args.instances)?;
    ensure_dir(&args.out_dir)?;
    let needs_models = args.upper == UpperChoice::Learned || args.lower == LowerChoice::Learned;
    let models = match (&args.checkpoint, needs_models) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            Some(load_models(&ck)?)
        }
        (None, true) => bail!("--checkpoint is required for learned levels"),
        (None, false) => None,
    };
    let problem: ProblemConfig = match (&args.config, &models) {
        (Some(p), _) => TrainConfig::load(p)?.problem,
        (None, Some((cfg, _, _))) => cfg.problem.clone(),
        (None, None) => ProblemConfig::default(),
    };
    let time_limit = args.time_limit.map(Duration::from_secs_f64);
    let external = match args.lower {
        LowerChoice::External => {
            let cmd = args.external_cmd.as_deref().context("--external-cmd is required for --lower external")?;
            Some(ExternalSolver {
                command: cmd.split_whitespace().map(String::from).collect(),
                format: match args.external_format {
                    FileFormat::Tsplib => ExternalFormat::Tsplib,
                    FileFormat::Json => ExternalFormat::Json,
                },
                time_limit: time_limit.unwrap_or(Duration::from_secs(60)),
            })
        }
        _ => None,
    };
    let upper = match (args.upper, &models) {
        (UpperChoice::Learned, Some((_, u, _))) => UpperPolicy::Learned { model: u, mode: ActionMode::Mean },
        _ => UpperPolicy::Random,
    };
    let lower = match (args.lower, &models, &external) {
        (LowerChoice::Learned, Some((_, _, l)), _) => {
            let mode = match args.lower_mode {
                LowerMode::Greedy => DecodeMode::Greedy,
                LowerMode::Sample => DecodeMode::Sample,
            };
            LowerSolver::Learned { model: l, mode, rollouts: args.rollouts.max(1) }
        }
        (LowerChoice::External, _, Some(ext)) => LowerSolver::External(ext),
        _ => LowerSolver::Farthest,
    };
    let opts = EpisodeOptions { time_limit, ..Default::default() };
    let decompose = problem.decompose();
    decompose.validate()?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.workers.max(1)).build()?;
    let records: Vec<SolveRecord> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| -> Result<SolveRecord> {
                let (inst, rescale) = read_instance_file(path).with_context(|| format!("reading {}", path.display()))?;
                let id = instance_id(path);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, 0, i as u64));
                let start = Instant::now();
                let ep = solve_instance(&inst, problem.k, decompose, upper, lower, &opts, &mut rng)?;
                let seconds = start.elapsed().as_secs_f64();
                ep.tour.validate(inst.n())?;
                let length = ep.length * rescale.scale;
                let out = args.out_dir.join(format!("{id}.tour"));
                std::fs::write(&out, write_tour(&ep.tour, length)).with_context(|| format!("writing {}", out.display()))?;
                log::info!("{id}: length {length:.4} in {seconds:.2}s ({} steps)", ep.steps());
                Ok(SolveRecord { instance_id: id, n: inst.n(), length, seconds, steps: ep.steps(), fallbacks: ep.fallbacks })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let csv_path: PathBuf = args.out_dir.join("solve.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(records)
}
