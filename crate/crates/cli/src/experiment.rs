use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rcac_core::rcac::{parse_kv, Mode, RunConfig, RunLayout};

use crate::{HarnessError, Result};

pub const DEFAULT_SEEDS: &str = "0-4";

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub env: Option<String>,
    /// Comma-separated modes.
    pub modes: Option<String>,
    /// Comma-separated seeds and inclusive ranges, e.g. `0,3,5-7`.
    pub seeds: Option<String>,
    pub steps: Option<u64>,
    pub p_c: Option<f64>,
    pub obs_size: Option<usize>,
    pub out: Option<PathBuf>,
    /// Extra `key=value` settings applied last.
    pub set: Vec<String>,
    pub force: bool,
}

/// Fully resolved grid of runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub runs: Vec<RunConfig>,
    pub out: PathBuf,
    pub force: bool,
    pub plot: bool,
}

impl ExperimentSpec {
    pub fn run_dir(&self, cfg: &RunConfig) -> PathBuf {
        run_dir(&self.out, cfg)
    }

    /// Completed runs this spec would overwrite.
    pub fn completed_runs(&self) -> Vec<PathBuf> {
        self.runs.iter().map(|c| self.run_dir(c)).filter(|d| RunLayout::new(d).is_complete()).collect()
    }

    /// Creates the output directory and refuses to clobber finished runs
    /// unless `force` is set.
    pub fn prepare_output(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let probe = self.out.join(".write_test");
        fs::write(&probe, b"")?;
        fs::remove_file(probe)?;
        let done = self.completed_runs();
        if !done.is_empty() && !self.force {
            return Err(HarnessError::Completed(done));
        }
        Ok(())
    }
}

pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(cfg.env.id.as_str()).join(cfg.mode.as_str()).join(format!("seed_{}", cfg.seed))
}

pub fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("seeds: cannot parse '{part}'");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(format!("seeds: empty range '{part}'"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err("seeds: none given".into());
    }
    Ok(seeds)
}

/// Resolves a config file (may be empty) plus overrides into a run grid.
///
/// Besides every run key, the file understands `seeds` (`seed` is an
/// alias), `mode` (a comma-separated list), `out` and `plot`. Every problem
/// is reported.
pub fn parse_config(file_text: &str, o: &Overrides) -> Result<ExperimentSpec> {
    let mut errors = Vec::new();
    let mut pairs = match parse_kv(file_text) {
        Ok(p) => p,
        Err(e) => {
            errors.push(e.to_string());
            Vec::new()
        }
    };
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v));
        }
    };
    flag("env", o.env.clone());
    flag("mode", o.modes.clone());
    flag("seeds", o.seeds.clone());
    flag("steps", o.steps.map(|v| v.to_string()));
    flag("p_c", o.p_c.map(|v| v.to_string()));
    flag("obs_size", o.obs_size.map(|v| v.to_string()));
    flag("out", o.out.as_ref().map(|p| p.display().to_string()));
    for s in &o.set {
        match s.split_once('=') {
            Some((k, v)) => pairs.push((k.trim().to_string(), v.trim().to_string())),
            None => errors.push(format!("--set expects key=value, got '{s}'")),
        }
    }

    let last = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let seed_text = last("seeds").or_else(|| last("seed")).unwrap_or_else(|| DEFAULT_SEEDS.to_string());
    let seeds = match parse_seeds(&seed_text) {
        Ok(s) => s,
        Err(e) => {
            errors.push(e);
            Vec::new()
        }
    };
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        errors.push(format!("seeds must be distinct, got {seeds:?}"));
    }
    let mut modes = Vec::new();
    for m in last("mode").unwrap_or_else(|| "rcac".into()).split(',').map(str::trim) {
        match m.parse::<Mode>() {
            Ok(m) if !modes.contains(&m) => modes.push(m),
            Ok(m) => errors.push(format!("mode {m} listed twice")),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let out = PathBuf::from(last("out").unwrap_or_else(|| "runs".into()));
    let plot = match last("plot").as_deref() {
        None => true,
        Some(v) => v.parse().unwrap_or_else(|_| {
            errors.push(format!("plot: cannot parse '{v}'"));
            true
        }),
    };

    // an explicit p_c only applies to curious modes, unless nothing else was asked for
    let only_plain = modes.iter().all(|&m| m != Mode::Rcac);
    let run_pairs: Vec<(String, String)> = pairs
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "seeds" | "seed" | "mode" | "out" | "plot"))
        .cloned()
        .collect();
    let mut runs = Vec::new();
    for &mode in &modes {
        let mut kv: Vec<(&str, &str)> = vec![("mode", mode.as_str())];
        kv.extend(
            run_pairs
                .iter()
                .filter(|(k, _)| k != "p_c" || mode == Mode::Rcac || only_plain)
                .map(|(k, v)| (k.as_str(), v.as_str())),
        );
        match RunConfig::from_pairs(kv) {
            Ok(base) => runs.extend(seeds.iter().map(|&seed| RunConfig { seed, ..base.clone() })),
            Err(e) => {
                for msg in e.to_string().trim_start_matches("configuration error: ").split("; ") {
                    if !errors.iter().any(|x| x == msg) {
                        errors.push(msg.to_string());
                    }
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(ExperimentSpec { runs, out, force: o.force, plot })
    } else {
        Err(HarnessError::Invalid(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_accept_lists_and_ranges() {
        assert_eq!(parse_seeds("0,3,5-7").unwrap(), vec![0, 3, 5, 6, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn empty_config_uses_defaults() {
        let spec = parse_config("", &Overrides::default()).unwrap();
        assert_eq!(spec.runs.len(), 5);
        assert!(spec.runs.iter().all(|r| r.mode == Mode::Rcac && r.batch_size == 128 && r.p_c == 0.2));
    }

    #[test]
    fn cartesian_grid_over_modes_and_seeds() {
        let o = Overrides { modes: Some("rcac,baseline".into()), seeds: Some("1,2".into()), p_c: Some(0.3), ..Default::default() };
        let spec = parse_config("env = point_reacher_sparse\nsteps = 20000", &o).unwrap();
        assert_eq!(spec.runs.len(), 4);
        let rcac: Vec<&RunConfig> = spec.runs.iter().filter(|r| r.mode == Mode::Rcac).collect();
        assert!(rcac.iter().all(|r| r.p_c == 0.3 && r.total_steps == 20_000));
        assert!(spec.runs.iter().filter(|r| r.mode == Mode::Baseline).all(|r| r.p_c == 0.0));
        assert_eq!(spec.run_dir(rcac[0]), PathBuf::from("runs/point_reacher_sparse/rcac/seed_1"));
    }

    #[test]
    fn contradictions_and_ranges_are_all_reported() {
        let o = Overrides { modes: Some("baseline".into()), p_c: Some(0.3), seeds: Some("1,1".into()), ..Default::default() };
        let err = parse_config("gamma = 3\nnonsense = 1", &o).unwrap_err().to_string();
        for needle in ["p_c = 0.3", "gamma", "unknown key 'nonsense'", "distinct"] {
            assert!(err.contains(needle), "missing {needle}: {err}");
        }
        let o = Overrides { p_c: Some(1.5), ..Default::default() };
        assert!(parse_config("", &o).unwrap_err().to_string().contains("p_c = 1.5"));
    }
}
