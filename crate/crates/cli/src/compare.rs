//! Paired state-diversity comparison of two modes on one environment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rcac_core::diversity::{coverage_report, default_projection, write_report_csv, CoverageReport, CoverageSettings, VisitLog};
use rcac_core::envs::EnvId;
use rcac_core::rcac::{Mode, RunLayout};

use crate::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityOptions {
    pub env: EnvId,
    /// Reference mode (column `a` of the report).
    pub reference: Mode,
    /// Mode under test (column `b`).
    pub candidate: Mode,
    pub k: usize,
    pub resolution: usize,
}

impl DiversityOptions {
    pub fn new(env: EnvId) -> Self {
        DiversityOptions { env, reference: Mode::Baseline, candidate: Mode::Rcac, k: 3, resolution: 20 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversitySummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<CoverageReport>,
    /// Seeds where the candidate's entropy is strictly higher.
    pub candidate_wins: usize,
    pub mean_coverage_reference: f64,
    pub mean_coverage_candidate: f64,
    pub report_path: PathBuf,
}

fn seed_dirs(root: &Path, env: EnvId, mode: Mode) -> Result<BTreeMap<u64, PathBuf>> {
    let dir = root.join(env.as_str()).join(mode.as_str());
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let seed = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_prefix("seed_")).and_then(|s| s.parse().ok());
        if let Some(seed) = seed {
            if RunLayout::new(&path).is_complete() {
                out.insert(seed, path);
            }
        }
    }
    Ok(out)
}

/// Compares visited ground-truth positions seed by seed and writes
/// `root/<env>/diversity_<reference>_vs_<candidate>.csv`.
pub fn compare(root: &Path, opts: DiversityOptions) -> Result<DiversitySummary> {
    let a = seed_dirs(root, opts.env, opts.reference)?;
    let b = seed_dirs(root, opts.env, opts.candidate)?;
    let seeds: Vec<u64> = a.keys().filter(|s| b.contains_key(s)).copied().collect();
    if seeds.is_empty() {
        return Err(HarnessError::Aggregate(format!(
            "no seed has completed {} and {} runs for {} under {}",
            opts.reference,
            opts.candidate,
            opts.env.as_str(),
            root.display()
        )));
    }
    let (columns, bounds) = default_projection(opts.env);
    let settings = CoverageSettings { k: opts.k, resolution: opts.resolution, bounds: &bounds };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &seed in &seeds {
        let pa = VisitLog::load(&RunLayout::new(&a[&seed]).visits())?.select(&columns)?;
        let pb = VisitLog::load(&RunLayout::new(&b[&seed]).visits())?.select(&columns)?;
        let report = coverage_report(&pa, &pb, settings)?;
        rows.push((format!("{}/seed_{seed}", opts.reference), format!("{}/seed_{seed}", opts.candidate), report.clone()));
        reports.push(report);
    }
    let report_path = root.join(opts.env.as_str()).join(format!("diversity_{}_vs_{}.csv", opts.reference, opts.candidate));
    let mut w = BufWriter::new(File::create(&report_path)?);
    write_report_csv(&mut w, &rows)?;
    w.flush()?;
    let n = reports.len() as f64;
    Ok(DiversitySummary {
        seeds,
        candidate_wins: reports.iter().filter(|r| r.entropy_difference > 0.0).count(),
        mean_coverage_reference: reports.iter().map(|r| r.coverage_a).sum::<f64>() / n,
        mean_coverage_candidate: reports.iter().map(|r| r.coverage_b).sum::<f64>() / n,
        reports,
        report_path,
    })
}
