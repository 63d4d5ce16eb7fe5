use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::thread;
use std::time::Duration;

use rcac_core::rcac::{self, EvalResult, RunConfig, RunLayout};

use crate::{ExperimentSpec, HarnessError, Result};

/// Environment variable holding the number of parallel worker processes.
pub const WORKERS_VAR: &str = "RCAC_WORKERS";

/// Name of the hidden subcommand a worker process runs.
pub const RUN_ONE_VERB: &str = "run-one";

pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(HarnessError::Invalid(vec![format!("{WORKERS_VAR} must be a positive integer, got '{v}'")])),
        },
    }
}

/// Trains the run whose `config.txt` sits in `dir`.
pub fn run_one(dir: &Path, on_eval: impl FnMut(&EvalResult)) -> Result<rcac::RunSummary> {
    let cfg = RunConfig::from_kv(&fs::read_to_string(RunLayout::new(dir).config())?)?;
    Ok(rcac::run(&cfg, dir, on_eval)?)
}

fn describe(cfg: &RunConfig) -> String {
    format!("{}/{}/seed_{}", cfg.env.id.as_str(), cfg.mode, cfg.seed)
}

/// Runs every configuration of `spec`. With `workers > 1` and a worker
/// executable, runs go to child processes invoked as
/// `<exe> run-one --dir <run dir>`; otherwise they run here, one by one.
/// All runs are attempted; the first failure is returned.
pub fn execute(spec: &ExperimentSpec, workers: usize, exe: Option<&Path>) -> Result<Vec<PathBuf>> {
    spec.prepare_output()?;
    let dirs: Vec<PathBuf> = spec.runs.iter().map(|c| spec.run_dir(c)).collect();
    for (cfg, dir) in spec.runs.iter().zip(&dirs) {
        fs::create_dir_all(dir)?;
        fs::write(RunLayout::new(dir).config(), cfg.to_kv())?;
    }
    let mut failures = Vec::new();
    match exe {
        Some(exe) if workers > 1 => {
            let mut queue = spec.runs.iter().zip(&dirs);
            let mut active: Vec<(PathBuf, Child)> = Vec::new();
            loop {
                while active.len() < workers {
                    let Some((cfg, dir)) = queue.next() else { break };
                    eprintln!("start {}", describe(cfg));
                    let child = Command::new(exe).arg(RUN_ONE_VERB).arg("--dir").arg(dir).spawn()?;
                    active.push((dir.clone(), child));
                }
                if active.is_empty() {
                    break;
                }
                let mut i = 0;
                while i < active.len() {
                    match active[i].1.try_wait()? {
                        Some(status) => {
                            let (dir, _) = active.swap_remove(i);
                            if !status.success() {
                                failures.push(HarnessError::Worker { dir, status: status.to_string() });
                            }
                        }
                        None => i += 1,
                    }
                }
                thread::sleep(Duration::from_millis(100));
            }
        }
        _ => {
            for (cfg, dir) in spec.runs.iter().zip(&dirs) {
                let name = describe(cfg);
                eprintln!("start {name}");
                let result = rcac::run(cfg, dir, |e| eprintln!("{name} step {} mean_return {:.3}", e.step, e.mean));
                if let Err(e) = result {
                    eprintln!("{name} failed: {e}");
                    failures.push(HarnessError::Core(e));
                }
            }
        }
    }
    match failures.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(dirs),
    }
}
