use std::fs;
use std::path::Path;
use std::process::Command;

use rcac_cli::aggregate::{aggregate, AggregateOptions, SUMMARY_HEADER};
use rcac_cli::experiment::run_dir;
use rcac_cli::{parse_config, HarnessError, Overrides};
use rcac_core::envs::EnvId;
use rcac_core::rcac::{Mode, RunConfig, RunLayout, METRICS_HEADER};

const TINY: &[&str] = &[
    "obs_size=16",
    "encoder_channels=4",
    "latent_dim=8",
    "hidden=16",
    "batch_size=8",
    "buffer_capacity=500",
    "pretrain_transitions=20",
    "pretrain_updates=5",
    "steps=60",
    "eval_interval=30",
    "eval_episodes=2",
];

fn tiny(mode: Mode, seed: u64) -> RunConfig {
    let pairs: Vec<(&str, &str)> = TINY.iter().map(|s| s.split_once('=').unwrap()).collect();
    let mut c = RunConfig::from_pairs(pairs.into_iter().chain([("mode", mode.as_str())])).unwrap();
    c.seed = seed;
    c
}

/// Fakes a completed run with the given evaluation curve.
fn fake_run(root: &Path, mode: Mode, seed: u64, curve: &[(u64, f64)]) {
    let cfg = tiny(mode, seed);
    let dir = run_dir(root, &cfg);
    fs::create_dir_all(&dir).unwrap();
    let layout = RunLayout::new(&dir);
    fs::write(layout.config(), cfg.to_kv()).unwrap();
    let mut csv = format!("{METRICS_HEADER}\n");
    for (step, ret) in curve {
        csv.push_str(&format!("{step},{seed},{mode},{ret},{ret};{ret},0.1,0.01,0.1,0.1\n"));
    }
    fs::write(layout.metrics(), csv).unwrap();
    fs::write(layout.done(), "").unwrap();
}

fn rcac() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rcac"))
}

#[test]
fn aggregate_reduces_with_population_std() {
    let root = tempfile::tempdir().unwrap();
    fake_run(root.path(), Mode::Baseline, 0, &[(30, 100.0), (60, 10.0)]);
    fake_run(root.path(), Mode::Baseline, 1, &[(30, 200.0), (60, 10.0)]);
    fake_run(root.path(), Mode::Rcac, 0, &[(30, 5.0), (60, 7.0)]);
    let opts = AggregateOptions { plot: true, random_baseline: false };
    aggregate(root.path(), &opts).unwrap();
    let summary = fs::read_to_string(root.path().join("pendulum_swingup/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert!(lines.contains(&"pendulum_swingup,baseline,30,2,150,50"), "{summary}");
    assert!(lines.contains(&"pendulum_swingup,baseline,60,2,10,0"));
    assert!(lines.contains(&"pendulum_swingup,rcac,30,1,5,0"));
    let svg = fs::read_to_string(root.path().join("pendulum_swingup/curves.svg")).unwrap();
    assert_eq!(svg.matches(r#"<g class="series""#).count(), 2);
    assert!(svg.contains(r#"data-label="baseline""#) && svg.contains(r#"data-label="rcac""#));
}

#[test]
fn aggregate_is_idempotent() {
    let root = tempfile::tempdir().unwrap();
    fake_run(root.path(), Mode::Baseline, 0, &[(30, 1.5), (60, 2.25)]);
    fake_run(root.path(), Mode::Baseline, 1, &[(30, 3.0), (60, -1.0)]);
    let opts = AggregateOptions { plot: true, random_baseline: true };
    let read_all = |paths: &[std::path::PathBuf]| paths.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>();
    let first = aggregate(root.path(), &opts).unwrap();
    let a = read_all(&first);
    let second = aggregate(root.path(), &opts).unwrap();
    assert_eq!(first, second);
    assert_eq!(a, read_all(&second));
    assert_eq!(first.len(), 3);
}

#[test]
fn mismatched_grids_name_the_runs() {
    let root = tempfile::tempdir().unwrap();
    fake_run(root.path(), Mode::Rcac, 0, &[(30, 1.0), (60, 2.0)]);
    fake_run(root.path(), Mode::Rcac, 3, &[(30, 1.0)]);
    let err = aggregate(root.path(), &AggregateOptions::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Aggregate(_)));
    let msg = err.to_string();
    assert!(msg.contains("seed_3") && msg.contains("seed_0"), "{msg}");
}

#[test]
fn incomplete_runs_are_ignored() {
    let root = tempfile::tempdir().unwrap();
    fake_run(root.path(), Mode::Rcac, 0, &[(30, 1.0), (60, 2.0)]);
    fake_run(root.path(), Mode::Rcac, 1, &[(30, 1.0)]);
    fs::remove_file(root.path().join("pendulum_swingup/rcac/seed_1/DONE")).unwrap();
    aggregate(root.path(), &AggregateOptions::default()).unwrap();
    let summary = fs::read_to_string(root.path().join("pendulum_swingup/summary.csv")).unwrap();
    assert!(summary.contains("rcac,60,1,2,0"));
}

#[test]
fn spec_refuses_completed_runs_without_force() {
    let root = tempfile::tempdir().unwrap();
    fake_run(root.path(), Mode::Rcac, 0, &[(30, 1.0), (60, 2.0)]);
    let mut o = Overrides { out: Some(root.path().to_path_buf()), seeds: Some("0,1".into()), set: TINY.iter().map(|s| s.to_string()).collect(), ..Default::default() };
    let spec = parse_config("", &o).unwrap();
    assert!(matches!(spec.prepare_output(), Err(HarnessError::Completed(d)) if d.len() == 1));
    o.force = true;
    parse_config("", &o).unwrap().prepare_output().unwrap();
}

#[test]
fn cli_trains_aggregates_and_compares() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("runs");
    let mut args = vec!["train", "--env", "point_reacher_sparse", "--mode", "baseline,rcac", "--seeds", "0-1", "--out"];
    let out_s = out.to_str().unwrap().to_string();
    args.push(&out_s);
    for s in TINY {
        args.extend(["--set", s]);
    }
    let status = rcac().args(&args).env("RCAC_WORKERS", "2").status().unwrap();
    assert!(status.success());
    for mode in [Mode::Baseline, Mode::Rcac] {
        for seed in 0..2 {
            let mut cfg = tiny(mode, seed);
            cfg.env = rcac_core::envs::EnvConfig::new(EnvId::PointReacherSparse);
            cfg.env.obs_size = 16;
            let layout = RunLayout::new(run_dir(&out, &cfg));
            assert!(layout.is_complete() && layout.checkpoint_final().exists() && layout.visits().exists());
        }
    }
    let env_dir = out.join("point_reacher_sparse");
    for f in ["summary.csv", "curves.svg", "random_policy.csv"] {
        assert!(env_dir.join(f).exists(), "{f}");
    }

    // worker processes and a second in-process run agree bitwise
    let metrics = |o: &Path| fs::read(o.join("point_reacher_sparse/rcac/seed_1/metrics.csv")).unwrap();
    let first = metrics(&out);
    let refused = rcac().args(&args).output().unwrap();
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    let mut forced = args.clone();
    forced.push("--force");
    assert!(rcac().args(&forced).env("RCAC_WORKERS", "1").status().unwrap().success());
    assert_eq!(first, metrics(&out));

    let div = rcac().args(["diversity", "--out", &out_s]).output().unwrap();
    assert!(div.status.success(), "{}", String::from_utf8_lossy(&div.stderr));
    let text = String::from_utf8_lossy(&div.stdout);
    assert!(text.contains("seeds; mean coverage"), "{text}");
    assert!(env_dir.join("diversity_baseline_vs_rcac.csv").exists());

    let ckpt = out.join("point_reacher_sparse/rcac/seed_0/checkpoint_final.bin");
    let eval = rcac().args(["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "2"]).output().unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("mean_return="));
}

#[test]
fn cli_reports_every_violation() {
    let out = rcac().args(["train", "--mode", "baseline", "--pc", "0.3", "--set", "gamma=2", "--set", "bogus=1"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["p_c = 0.3", "gamma", "bogus"] {
        assert!(err.contains(needle), "missing {needle}: {err}");
    }
}

#[test]
fn cli_random_policy_return() {
    let out = rcac().args(["evaluate", "--random", "--env", "pendulum_swingup", "--obs-size", "16", "--episodes", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("policy=random"));
}
