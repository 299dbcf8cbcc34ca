use anyhow::{Context, Result};
use htsp_core::instance::generate_uniform;
use htsp_core::io::{write_instance, write_tour, Format};
use htsp_core::reference::{reference_tour, ReferenceConfig};
use htsp_train::derive_seed;
use rayon::prelude::*;

use crate::args::{FileFormat, GenerateArgs};
use crate::ensure_dir;

pub fn run(args: &GenerateArgs) -> Result<()> {
    anyhow::ensure!(args.n >= 2, "--n must be at least 2");
    ensure_dir(&args.out_dir)?;
    let (format, ext) = match args.format {
        FileFormat::Json => (Format::Json, "json"),
        FileFormat::Tsplib => (Format::Tsplib, "tsp"),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.workers.max(1)).build()?;
    pool.install(|| {
        (0..args.count).into_par_iter().try_for_each(|i| -> Result<()> {
            let id = format!("n{}_s{}_{:04}", args.n, args.seed, i);
            let inst = generate_uniform(args.n, derive_seed(args.seed, args.n as u64, i as u64))?;
            let path = args.out_dir.join(format!("{id}.{ext}"));
            std::fs::write(&path, write_instance(&inst, format, &id)).with_context(|| format!("writing {}", path.display()))?;
            if let Some(kicks) = args.reference_kicks {
                let tour = reference_tour(&inst, &ReferenceConfig { kicks, seed: i as u64, ..Default::default() })?;
                let len = inst.cycle_cost(&tour.order);
                let path = args.out_dir.join(format!("{id}.ref.tour"));
                std::fs::write(&path, write_tour(&tour, len)).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        })
    })?;
    log::info!("wrote {} instances to {}", args.count, args.out_dir.display());
    Ok(())
}
