use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use htsp_core::io::{read_instance_file, read_tour};
use htsp_core::Tour;
use serde::{Deserialize, Serialize};

use crate::args::EvalArgs;
use crate::solve::SolveRecord;
use crate::{collect_instances, ensure_dir, instance_id};

/// One row of `eval.csv`; the column order is part of the interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub n: usize,
    pub length: f64,
    pub ref_length: f64,
    pub gap_pct: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_gap_pct: f64,
    pub mean_length: f64,
    pub mean_ref_length: f64,
    pub mean_seconds: Option<f64>,
}

pub fn gap_pct(length: f64, reference: f64) -> f64 {
    100.0 * (length - reference) / reference
}

fn load_tour(path: &Path) -> Result<Tour> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_tour(&text).with_context(|| format!("parsing {}", path.display()))?.0)
}

fn solve_times(dir: &Path) -> Result<HashMap<String, f64>> {
    let path = dir.join("solve.csv");
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let mut r = csv::Reader::from_path(&path)?;
    let mut out = HashMap::new();
    for rec in r.deserialize::<SolveRecord>() {
        let rec = rec?;
        out.insert(rec.instance_id, rec.seconds);
    }
    Ok(out)
}

pub fn run(args: &EvalArgs) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    let files = collect_instances(&args.instances)?;
    ensure_dir(&args.out_dir)?;
    let times = solve_times(&args.tours)?;
    let mut records = Vec::with_capacity(files.len());
    for path in &files {
        let id = instance_id(path);
        let (inst, rescale) = read_instance_file(path).with_context(|| format!("reading {}", path.display()))?;
        let tour = load_tour(&args.tours.join(format!("{id}.tour")))?;
        tour.validate(inst.n()).with_context(|| format!("tour for {id}"))?;
        let ref_path = ["ref.tour", "tour"]
            .iter()
            .map(|ext| args.references.join(format!("{id}.{ext}")))
            .find(|p| p.exists())
            .with_context(|| format!("no reference tour for {id} in {}", args.references.display()))?;
        let reference = load_tour(&ref_path)?;
        reference.validate(inst.n()).with_context(|| format!("reference tour for {id}"))?;
        let length = inst.cycle_cost(&tour.order) * rescale.scale;
        let ref_length = inst.cycle_cost(&reference.order) * rescale.scale;
        records.push(EvalRecord {
            gap_pct: gap_pct(length, ref_length),
            seconds: times.get(&id).copied(),
            instance_id: id,
            n: inst.n(),
            length,
            ref_length,
        });
    }
    let k = records.len() as f64;
    let secs: Vec<f64> = records.iter().filter_map(|r| r.seconds).collect();
    let summary = EvalSummary {
        count: records.len(),
        mean_gap_pct: records.iter().map(|r| r.gap_pct).sum::<f64>() / k,
        mean_length: records.iter().map(|r| r.length).sum::<f64>() / k,
        mean_ref_length: records.iter().map(|r| r.ref_length).sum::<f64>() / k,
        mean_seconds: (secs.len() == records.len()).then(|| secs.iter().sum::<f64>() / k),
    };
    let mut w = csv::Writer::from_path(args.out_dir.join("eval.csv"))?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(args.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok((records, summary))
}
