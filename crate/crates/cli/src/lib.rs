//! Subcommand implementations behind the `htsp` binary.

pub mod args;
pub mod eval;
pub mod generate;
pub mod report;
pub mod solve;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use htsp_core::io::Format;

/// Expands files and directories into a sorted list of instance files.
pub fn collect_instances(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && Format::from_path(f).is_some())
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("no such instance file or directory: {}", p.display());
        }
    }
    if out.is_empty() {
        bail!("no instance files (.json or .tsp) found");
    }
    Ok(out)
}

/// Instance id: the file name without its extension.
pub fn instance_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
