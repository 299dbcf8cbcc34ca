use anyhow::{Context, Result};
use htsp_autograd::Checkpoint;
use htsp_train::{load_models, TrainConfig, Trainer};

use crate::args::TrainArgs;

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            Trainer::resume(&ck)?
        }
        None => {
            let mut cfg = match &args.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(w) = args.workers {
                cfg.workers = w;
            }
            Trainer::new(cfg)?
        }
    };
    if let Some(path) = &args.init_lower {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (_, _, lower) = load_models(&ck)?;
        trainer.set_lower(lower);
    }
    crate::ensure_dir(&args.out_dir)?;
    std::fs::write(args.out_dir.join("config.toml"), trainer.config.to_toml())?;
    trainer
        .run(&args.out_dir, args.max_epochs, |m| {
            log::info!(
                "{:?} epoch {}: val_gap {:?} mean_length {:?} lower_loss {:?} ({:.1}s)",
                m.stage,
                m.epoch,
                m.val_gap,
                m.mean_length,
                m.lower_loss,
                m.seconds
            );
        })
        .with_context(|| format!("training stopped; last good checkpoint is {}", args.out_dir.join("latest.ckpt").display()))?;
    Ok(())
}
