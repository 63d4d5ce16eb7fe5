use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{EvalResult, Mode, PolicyChoice, RunConfig, Trainer};
use crate::Result;

pub const METRICS_HEADER: &str =
    "step,seed,mode,mean_return,return_per_episode,rae_loss,mean_r_cure,alpha_task,alpha_curious";

/// File names inside one run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunLayout { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn visits(&self) -> PathBuf {
        self.dir.join("visits.csv")
    }

    pub fn checkpoint_latest(&self) -> PathBuf {
        self.dir.join("checkpoint_latest.bin")
    }

    pub fn checkpoint_final(&self) -> PathBuf {
        self.dir.join("checkpoint_final.bin")
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.dir.join("recon")
    }

    pub fn error(&self) -> PathBuf {
        self.dir.join("error.txt")
    }

    /// Written last; its presence marks a completed run.
    pub fn done(&self) -> PathBuf {
        self.dir.join("DONE")
    }

    pub fn is_complete(&self) -> bool {
        self.done().exists()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub evals: Vec<EvalResult>,
    /// Fraction of post-pretraining steps on which the curious policy acted.
    pub curious_fraction: f64,
    pub steps: u64,
}

#[derive(Default)]
struct Window {
    rae_loss: f64,
    r_cure: f64,
    n: u64,
}

impl Window {
    fn means(&mut self) -> (f64, f64) {
        let out = if self.n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.rae_loss / self.n as f64, self.r_cure / self.n as f64)
        };
        *self = Window::default();
        out
    }
}

fn metrics_row(cfg: &RunConfig, tr: &Trainer, e: &EvalResult, window: &mut Window) -> String {
    let per_episode: Vec<String> = e.returns.iter().map(|r| r.to_string()).collect();
    let (rae, cure) = window.means();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        e.step,
        cfg.seed,
        cfg.mode,
        e.mean,
        per_episode.join(";"),
        rae,
        cure,
        tr.task.alpha(),
        tr.curious.alpha()
    )
}

/// Trains one configuration into `dir`: `config.txt`, `metrics.csv` (one
/// row per evaluation), `visits.csv`, checkpoints, and finally `DONE`.
/// On failure `error.txt` records the step and message.
pub fn run(config: &RunConfig, dir: &Path, mut on_eval: impl FnMut(&EvalResult)) -> Result<RunSummary> {
    config.validate()?;
    let layout = RunLayout::new(dir);
    fs::create_dir_all(dir)?;
    for stale in [layout.done(), layout.error()] {
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    fs::write(layout.config(), config.to_kv())?;
    let mut trainer = Trainer::new(config.clone())?;
    if config.recon_dump_every > 0 {
        trainer.set_reconstruction_dir(layout.recon_dir());
    }
    let result = drive(config, &layout, &mut trainer, &mut on_eval);
    if let Err(e) = &result {
        fs::write(layout.error(), format!("step {}: {e}\n", trainer.step_count()))?;
    }
    result
}

fn drive(
    cfg: &RunConfig,
    layout: &RunLayout,
    tr: &mut Trainer,
    on_eval: &mut impl FnMut(&EvalResult),
) -> Result<RunSummary> {
    let mut metrics = BufWriter::new(File::create(layout.metrics())?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut window = Window::default();
    let mut evals = Vec::new();

    let mut eval_point = |tr: &mut Trainer, window: &mut Window, metrics: &mut BufWriter<File>| -> Result<()> {
        let e = tr.evaluate()?;
        writeln!(metrics, "{}", metrics_row(cfg, tr, &e, window))?;
        metrics.flush()?;
        if cfg.checkpoints {
            tr.checkpoint().save(&layout.checkpoint_latest())?;
        }
        on_eval(&e);
        evals.push(e);
        Ok(())
    };

    tr.pretrain_with(|tr| {
        if tr.step_count() % cfg.eval_interval == 0 {
            eval_point(tr, &mut window, &mut metrics)?;
        }
        Ok(())
    })?;
    let mut curious = 0u64;
    let mut rl_steps = 0u64;
    while tr.step_count() < cfg.total_steps {
        let m = tr.train_step()?;
        window.rae_loss += f64::from(m.rae_loss);
        window.r_cure += f64::from(m.mean_r_cure);
        window.n += 1;
        rl_steps += 1;
        if m.policy == PolicyChoice::Curious {
            curious += 1;
        }
        if m.step % cfg.eval_interval == 0 {
            eval_point(tr, &mut window, &mut metrics)?;
        }
    }
    drop(metrics);
    tr.visits().save(&layout.visits())?;
    if cfg.checkpoints {
        tr.checkpoint().save(&layout.checkpoint_final())?;
    }
    let summary = RunSummary {
        evals,
        curious_fraction: if rl_steps == 0 { 0.0 } else { curious as f64 / rl_steps as f64 },
        steps: tr.step_count(),
    };
    let last = summary.evals.last().map_or(f64::NAN, |e| e.mean);
    fs::write(
        layout.done(),
        format!(
            "steps = {}\nmode = {}\nfinal_mean_return = {last}\ncurious_fraction = {}\n",
            summary.steps,
            cfg.mode,
            summary.curious_fraction
        ),
    )?;
    debug_assert!(cfg.mode == Mode::Rcac || curious == 0);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use crate::rcac::tests::small;

    #[test]
    fn run_writes_a_complete_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(EnvId::PointReacherSparse, Mode::Rcac);
        let mut seen = Vec::new();
        let s = run(&cfg, dir.path(), |e| seen.push(e.step)).unwrap();
        assert_eq!(seen, vec![30, 60]);
        assert_eq!(s.steps, 60);
        let layout = RunLayout::new(dir.path());
        assert!(layout.is_complete());
        let csv = fs::read_to_string(layout.metrics()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("30,0,rcac,"));
        assert_eq!(RunConfig::from_kv(&fs::read_to_string(layout.config()).unwrap()).unwrap(), cfg);
        let visits = crate::diversity::VisitLog::load(&layout.visits()).unwrap();
        assert_eq!(visits.len(), 60);
        assert!(layout.checkpoint_final().exists());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = small(EnvId::PendulumSwingup, Mode::Rcac);
        run(&cfg, a.path(), |_| {}).unwrap();
        run(&cfg, b.path(), |_| {}).unwrap();
        let read = |d: &Path| fs::read(RunLayout::new(d).metrics()).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn invalid_config_does_no_work() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(EnvId::PendulumSwingup, Mode::Rcac);
        cfg.eval_interval = 7;
        assert!(run(&cfg, &dir.path().join("run"), |_| {}).is_err());
        assert!(!dir.path().join("run").exists());
    }
}
