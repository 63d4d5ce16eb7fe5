use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rcac_core::rcac::{random_policy_return, RunConfig, RunLayout};

use crate::plot::{render_curves, Series};
use crate::{HarnessError, Result};

/// Header of `summary.csv`. The spread column is the population standard
/// deviation (divisor n) across seeds.
pub const SUMMARY_HEADER: &str = "env,mode,step,n_seeds,mean_return,std_return_population";

pub const RANDOM_HEADER: &str = "env,seed,episodes,mean_return";

/// Evaluation curve of one completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunCurve {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub steps: Vec<u64>,
    pub returns: Vec<f64>,
}

/// Per-step statistics of one (env, mode) group.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveStats {
    pub env: String,
    pub mode: String,
    pub steps: Vec<u64>,
    pub n_seeds: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn read_curve(dir: &Path) -> Result<RunCurve> {
    let layout = RunLayout::new(dir);
    let config = RunConfig::from_kv(&fs::read_to_string(layout.config())?)?;
    let mut reader = csv::Reader::from_path(layout.metrics())?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Aggregate(format!("{}: no '{name}' column", layout.metrics().display())))
    };
    let (step_col, ret_col) = (column("step")?, column("mean_return")?);
    let (mut steps, mut returns) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let parse_err = |what: &str| HarnessError::Aggregate(format!("{}: bad {what} in {record:?}", dir.display()));
        steps.push(record[step_col].parse().map_err(|_| parse_err("step"))?);
        returns.push(record[ret_col].parse().map_err(|_| parse_err("mean_return"))?);
    }
    Ok(RunCurve { dir: dir.to_path_buf(), config, steps, returns })
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Completed runs under `root/<env>/<mode>/seed_*`, sorted by path.
pub fn discover(root: &Path) -> Result<Vec<RunCurve>> {
    let mut runs = Vec::new();
    for env_dir in subdirs(root)? {
        for mode_dir in subdirs(&env_dir)? {
            for run_dir in subdirs(&mode_dir)? {
                let is_seed = run_dir.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed_"));
                if is_seed && RunLayout::new(&run_dir).is_complete() {
                    runs.push(read_curve(&run_dir)?);
                }
            }
        }
    }
    Ok(runs)
}

/// Groups runs by (env, mode) and reduces across seeds. Every run of a group
/// must share the same evaluation steps.
pub fn summarize(runs: &[RunCurve]) -> Result<Vec<CurveStats>> {
    let mut groups: BTreeMap<(String, String), Vec<&RunCurve>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.config.env.id.as_str().to_string(), r.config.mode.to_string())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((env, mode), group) in groups {
        let reference = group[0];
        let odd: Vec<String> = group
            .iter()
            .filter(|r| r.steps != reference.steps)
            .map(|r| format!("{} ({} evals)", r.dir.display(), r.steps.len()))
            .collect();
        if !odd.is_empty() {
            return Err(HarnessError::Aggregate(format!(
                "evaluation steps of {env}/{mode} differ from {} ({} evals): {}",
                reference.dir.display(),
                reference.steps.len(),
                odd.join(", ")
            )));
        }
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for i in 0..reference.steps.len() {
            let column: Vec<f64> = group.iter().map(|r| r.returns[i]).collect();
            let (m, s) = mean_std(&column);
            mean.push(m);
            std.push(s);
        }
        out.push(CurveStats { env, mode, steps: reference.steps.clone(), n_seeds: group.len(), mean, std });
    }
    Ok(out)
}

pub fn summary_csv(stats: &[CurveStats]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in stats {
        for i in 0..c.steps.len() {
            s.push_str(&format!("{},{},{},{},{},{}\n", c.env, c.mode, c.steps[i], c.n_seeds, c.mean[i], c.std[i]));
        }
    }
    s
}

/// Random-policy returns for each seed found among `runs` of one env.
pub fn random_baseline(runs: &[&RunCurve]) -> Result<Vec<(u64, usize, f64)>> {
    let mut per_seed: BTreeMap<u64, &RunConfig> = BTreeMap::new();
    for r in runs {
        per_seed.entry(r.config.seed).or_insert(&r.config);
    }
    per_seed
        .into_iter()
        .map(|(seed, cfg)| Ok((seed, cfg.eval_episodes, random_policy_return(&cfg.env, seed, cfg.eval_episodes)?)))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct AggregateOptions {
    pub plot: bool,
    pub random_baseline: bool,
}

/// Writes `summary.csv`, optionally `random_policy.csv` and `curves.svg`
/// into each `root/<env>/`. Returns the files written.
pub fn aggregate(root: &Path, opts: &AggregateOptions) -> Result<Vec<PathBuf>> {
    let runs = discover(root)?;
    if runs.is_empty() {
        return Err(HarnessError::Aggregate(format!("no completed runs under {}", root.display())));
    }
    let stats = summarize(&runs)?;
    let mut written = Vec::new();
    let envs: Vec<String> = {
        let mut e: Vec<String> = stats.iter().map(|s| s.env.clone()).collect();
        e.dedup();
        e
    };
    for env in envs {
        let dir = root.join(&env);
        let env_stats: Vec<CurveStats> = stats.iter().filter(|s| s.env == env).cloned().collect();
        let path = dir.join("summary.csv");
        fs::write(&path, summary_csv(&env_stats))?;
        written.push(path);

        let mut reference = None;
        if opts.random_baseline {
            let env_runs: Vec<&RunCurve> = runs.iter().filter(|r| r.config.env.id.as_str() == env).collect();
            let rows = random_baseline(&env_runs)?;
            let mut text = format!("{RANDOM_HEADER}\n");
            for (seed, episodes, ret) in &rows {
                text.push_str(&format!("{env},{seed},{episodes},{ret}\n"));
            }
            let path = dir.join("random_policy.csv");
            fs::write(&path, text)?;
            written.push(path);
            reference = Some(rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64);
        }
        if opts.plot {
            let series: Vec<Series> = env_stats
                .iter()
                .map(|s| Series { label: s.mode.clone(), x: s.steps.iter().map(|&v| v as f64).collect(), mean: s.mean.clone(), std: s.std.clone() })
                .collect();
            let path = dir.join("curves.svg");
            fs::write(&path, render_curves(&env, &series, reference))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_convention() {
        assert_eq!(mean_std(&[100.0, 200.0]), (150.0, 50.0));
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
