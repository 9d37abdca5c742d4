use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use messrl::{
    cmd_evaluate, cmd_oracle, cmd_simulate, cmd_train, load_config, read_metrics, read_trace, CliError,
    PolicySource, TrainOptions, METRICS_HEADER, VALIDATION_SEED_BASE,
};
use messrl_core::env::Environment;
use messrl_core::rollout::replay;
use messrl_core::transport::{Location, NodeId};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Copies the tiny scenario into `dir` with textual substitutions applied.
fn tiny_copy(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    std::fs::copy(scenarios().join("tiny.net"), dir.join("tiny.net")).unwrap();
    let mut text = std::fs::read_to_string(scenarios().join("tiny.cfg")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn train(config: &Path, out: &Path, episodes: usize) -> messrl::TrainReport {
    cmd_train(&TrainOptions {
        config: config.to_path_buf(),
        out: out.to_path_buf(),
        episodes: Some(episodes),
        seed: None,
    })
    .unwrap()
}

#[test]
fn metrics_header_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train(&scenarios().join("tiny.cfg"), &out, 3);
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "episode,return,critic1_loss,critic2_loss,actor_loss,validation_mean,validation_std"
    );
    assert_eq!(METRICS_HEADER.join(","), text.lines().next().unwrap());
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![1, 2, 3]);
    // Warmup: no updates, so no losses.
    assert!(rows.iter().all(|r| r.critic1_loss.is_none() && r.actor_loss.is_none()));
    for name in ["best.json", "final.json", "last.json", "progress.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn validation_is_noise_free() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (cfg, _) = load_config(&scenarios().join("tiny.cfg")).unwrap();
    train(&scenarios().join("tiny.cfg"), &out, 2);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    let logged = rows.last().unwrap().validation_mean.unwrap();
    let eval = cmd_evaluate(
        &scenarios().join("tiny.cfg"),
        &PolicySource::Checkpoint(out.join("final.json")),
        cfg.training.eval_episodes,
        VALIDATION_SEED_BASE,
    )
    .unwrap();
    assert_eq!(eval.mean_return, logged);
}

#[test]
fn resumed_run_continues_on_the_same_seeds() {
    let dir = tempfile::tempdir().unwrap();
    // Validate (and checkpoint) every 3 episodes; all episodes are warmup,
    // so returns depend only on the seed streams.
    let cfg = tiny_copy(dir.path(), &[("eval_interval = 100", "eval_interval = 3")]);

    let straight = dir.path().join("straight");
    train(&cfg, &straight, 8);
    // Stopped at a periodic checkpoint and at a budget boundary.
    let interrupted = dir.path().join("interrupted");
    train(&cfg, &interrupted, 4);
    let partial = dir.path().join("partial");
    train(&cfg, &partial, 3);
    let report = train(&cfg, &partial, 8);
    assert_eq!(report.resumed_from, Some(3));
    let report = train(&cfg, &interrupted, 8);
    assert_eq!(report.resumed_from, Some(4));

    let a = read_metrics(&straight.join("metrics.csv")).unwrap();
    let b = read_metrics(&partial.join("metrics.csv")).unwrap();
    let c = read_metrics(&interrupted.join("metrics.csv")).unwrap();
    let returns = |rows: &[messrl::MetricsRow]| rows.iter().map(|r| (r.episode, r.episode_return)).collect::<Vec<_>>();
    assert_eq!(returns(&a), returns(&b));
    assert_eq!(returns(&a), returns(&c));
    assert_eq!(a.len(), 8);
}

#[test]
fn stale_metrics_rows_are_dropped_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = scenarios().join("tiny.cfg");
    train(&cfg, &out, 2);
    // Rows written after the last checkpoint by a crashed process.
    let mut text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    text.push_str("3,9.0,,,,,\n4,9.0,,,,,\n");
    std::fs::write(out.join("metrics.csv"), text).unwrap();
    train(&cfg, &out, 4);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.episode_return != 9.0));
}

#[test]
fn divergence_is_reported_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_copy(
        dir.path(),
        &[
            ("warmup_episodes = 200", "warmup_episodes = 1"),
            ("critic_lr = 3e-4", "critic_lr = 1e300"),
            ("batch_size = 64", "batch_size = 4"),
        ],
    );
    let err = cmd_train(&TrainOptions {
        config: cfg.clone(),
        out: dir.path().join("run"),
        episodes: Some(5),
        seed: None,
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(dir.path().join("run/divergence.json").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_messrl"))
        .args(["train", "--episodes", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn evaluation_accounting() {
    let cfg = scenarios().join("sioux_falls_3mg.cfg");
    let a = cmd_evaluate(&cfg, &PolicySource::Greedy, 5, 100).unwrap();
    let b = cmd_evaluate(&cfg, &PolicySource::Greedy, 5, 100).unwrap();
    assert_eq!(a, b);
    let c = &a.costs;
    assert!((c.generation + c.battery + c.transport + c.interruption - c.total).abs() < 1e-9);
    assert_eq!(a.restoration_fraction.len(), 3);
    assert!(a.restoration_fraction.iter().all(|(_, f)| (0.0..=1.0).contains(f)));
    assert_eq!(a.returns.len(), 5);
    let random = cmd_evaluate(&cfg, &PolicySource::Random, 5, 100).unwrap();
    assert!(random.mean_penalty > 0.0);
}

#[test]
fn no_generation_and_no_fleet_restores_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_copy(
        dir.path(),
        &[
            ("p_max_kw = 200", "p_max_kw = 0"),
            ("p_max_kw = 800", "p_max_kw = 0"),
            ("[[mess]]\nid = 1\nhome_depot = 1\n", ""),
        ],
    );
    let (_, s) = load_config(&cfg).unwrap();
    assert!(s.fleet.is_empty());
    for source in [PolicySource::Greedy, PolicySource::Random] {
        let r = cmd_evaluate(&cfg, &source, 3, 0).unwrap();
        assert!(r.restoration_fraction.iter().all(|&(_, f)| f == 0.0));
    }
}

#[test]
fn checkpoint_must_match_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train(&scenarios().join("tiny.cfg"), &out, 1);
    let err = cmd_evaluate(
        &scenarios().join("sioux_falls_3mg.cfg"),
        &PolicySource::Checkpoint(out.join("final.json")),
        1,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, CliError::Td3(_)), "{err}");
}

#[test]
fn simulated_traces_replay_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("sioux_falls_3mg.cfg");
    let (_, s) = load_config(&cfg).unwrap();
    let run = dir.path().join("run");
    train(&scenarios().join("tiny.cfg"), &run, 1);
    let sources = [PolicySource::Random, PolicySource::Greedy, PolicySource::Idle, PolicySource::NoMess];
    for (k, source) in sources.iter().enumerate() {
        let out = dir.path().join(format!("trace{k}.json"));
        cmd_simulate(&cfg, source, 7, &out).unwrap();
        let trace = read_trace(&out).unwrap();
        assert_eq!(trace.steps.len(), 24);
        assert_eq!(trace.trip_chains.len(), 3);
        let logged: Vec<f64> = trace.steps.iter().map(|r| r.breakdown.reward).collect();
        let mut env = Environment::new(Arc::clone(&s), 0);
        assert_eq!(replay(&mut env, trace.seed, &trace.steps).unwrap(), logged, "{}", source.label());
    }

    // A trained actor on the tiny scenario replays as well.
    let tiny = scenarios().join("tiny.cfg");
    let (_, ts) = load_config(&tiny).unwrap();
    let out = dir.path().join("actor.json");
    cmd_simulate(&tiny, &PolicySource::Checkpoint(run.join("final.json")), 3, &out).unwrap();
    let trace = read_trace(&out).unwrap();
    assert!(trace.steps.iter().all(|r| r.raw_action.is_some()));
    let logged: Vec<f64> = trace.steps.iter().map(|r| r.breakdown.reward).collect();
    let mut env = Environment::new(ts, 0);
    assert_eq!(replay(&mut env, 3, &trace.steps).unwrap(), logged);
}

#[test]
fn idle_trace_stays_at_the_depot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("idle.json");
    let trace = cmd_simulate(&scenarios().join("sioux_falls_3mg.cfg"), &PolicySource::Idle, 1, &out).unwrap();
    for rec in &trace.steps {
        for m in &rec.mess {
            assert_eq!(m.location, Location::at(NodeId(10)));
            assert_eq!(m.next_location, Location::at(NodeId(10)));
            assert_eq!(m.power_kw, 0.0);
        }
    }
    for chain in &trace.trip_chains {
        assert_eq!(chain.legs.len(), 1);
        let json = serde_json::to_value(&chain.legs[0]).unwrap();
        assert_eq!(json["kind"], "stay");
        assert_eq!(json["from_t"], 0);
        assert_eq!(json["to_t"], 24);
    }
    assert_eq!(trace.summary.episode_return, 0.0);
}

#[test]
fn oracle_report_orders_the_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("values.json");
    let report = cmd_oracle(&scenarios().join("tiny.cfg"), None, 0, Some(&values)).unwrap();
    assert!(report.state_count > 1000);
    let gap = |name: &str| report.gaps.iter().find(|g| g.policy == name).unwrap().gap;
    assert!(gap("oracle").abs() < 1e-6);
    assert!(gap("greedy") >= -1e-9);
    assert!(gap("random") >= gap("greedy"));
    assert!(gap("no-mess") >= gap("greedy"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(values).unwrap()).unwrap();
    assert_eq!(doc["state_count"], report.state_count);
}

#[test]
fn oracle_refuses_large_scenarios() {
    let err = cmd_oracle(&scenarios().join("sioux_falls_3mg.cfg"), None, 0, None).unwrap_err();
    assert!(matches!(err, CliError::Oracle(_)), "{err}");
}

fn messrl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_messrl")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    assert_eq!(messrl(&["--help"]).status.code(), Some(0));
    assert_eq!(messrl(&["bogus"]).status.code(), Some(1));
    assert_eq!(messrl(&["evaluate", "--config"]).status.code(), Some(1));
    let missing = messrl(&["evaluate", "--config", "/nonexistent.cfg", "--checkpoint", "greedy"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));
}

#[test]
fn binary_evaluates_and_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("sioux_falls_3mg.cfg");
    let cfg = cfg.to_str().unwrap();
    let out = messrl(&["evaluate", "--config", cfg, "--checkpoint", "no-mess", "--episodes", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["episodes"], 2);
    let trace = dir.path().join("t.json");
    let out = messrl(&[
        "simulate",
        "--config",
        cfg,
        "--checkpoint",
        "greedy",
        "--seed",
        "5",
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_trace(&trace).unwrap().seed, 5);
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[scenario]\nname = 1\n").unwrap();
    let err = cmd_evaluate(&cfg, &PolicySource::Greedy, 1, 0).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 1);
}
