use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use htsp_train::EpochMetrics;
use serde::Serialize;

use crate::args::ReportArgs;
use crate::ensure_dir;
use crate::eval::EvalRecord;

fn split_label(spec: &str) -> Result<(String, PathBuf)> {
    let (label, path) = spec.split_once('=').with_context(|| format!("expected LABEL=PATH, got `{spec}`"))?;
    Ok((label.to_string(), PathBuf::from(path)))
}

#[derive(Serialize)]
struct SizeRow<'a> {
    label: &'a str,
    n: usize,
    count: usize,
    mean_gap_pct: f64,
    mean_seconds: Option<f64>,
}

#[derive(Serialize)]
struct AblationRow<'a> {
    label: &'a str,
    count: usize,
    mean_gap_pct: f64,
    mean_length: f64,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    label: &'a str,
    stage: String,
    epoch: usize,
    val_gap: Option<f64>,
    mean_length: Option<f64>,
    lower_loss: Option<f64>,
    clip_loss: Option<f64>,
    value_loss: Option<f64>,
    entropy: Option<f64>,
    seconds: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c.max(1) as f64
}

/// Writes `gap_vs_size.csv`, `ablation.csv` and `training_curve.csv` (each
/// only when it has inputs).
pub fn run(args: &ReportArgs) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    if !args.evals.is_empty() {
        let mut sizes = csv::Writer::from_path(args.out_dir.join("gap_vs_size.csv"))?;
        let mut ablation = csv::Writer::from_path(args.out_dir.join("ablation.csv"))?;
        for spec in &args.evals {
            let (label, path) = split_label(spec)?;
            let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
            let records: Vec<EvalRecord> = r.deserialize().collect::<std::result::Result<_, _>>()?;
            let mut by_n: BTreeMap<usize, Vec<&EvalRecord>> = BTreeMap::new();
            for rec in &records {
                by_n.entry(rec.n).or_default().push(rec);
            }
            for (n, rs) in &by_n {
                let secs: Vec<f64> = rs.iter().filter_map(|r| r.seconds).collect();
                sizes.serialize(SizeRow {
                    label: &label,
                    n: *n,
                    count: rs.len(),
                    mean_gap_pct: mean(rs.iter().map(|r| r.gap_pct)),
                    mean_seconds: (secs.len() == rs.len()).then(|| mean(secs.into_iter())),
                })?;
            }
            ablation.serialize(AblationRow {
                label: &label,
                count: records.len(),
                mean_gap_pct: mean(records.iter().map(|r| r.gap_pct)),
                mean_length: mean(records.iter().map(|r| r.length)),
            })?;
        }
        sizes.flush()?;
        ablation.flush()?;
    }
    if !args.metrics.is_empty() {
        let mut curve = csv::Writer::from_path(args.out_dir.join("training_curve.csv"))?;
        for spec in &args.metrics {
            let (label, path) = split_label(spec)?;
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let m: EpochMetrics =
                    serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
                curve.serialize(CurveRow {
                    label: &label,
                    stage: format!("{:?}", m.stage).to_lowercase(),
                    epoch: m.epoch,
                    val_gap: m.val_gap,
                    mean_length: m.mean_length,
                    lower_loss: m.lower_loss,
                    clip_loss: m.upper.as_ref().map(|u| u.clip_loss),
                    value_loss: m.upper.as_ref().map(|u| u.value_loss),
                    entropy: m.upper.as_ref().map(|u| u.entropy),
                    seconds: m.seconds,
                })?;
            }
        }
        curve.flush()?;
    }
    Ok(())
}
