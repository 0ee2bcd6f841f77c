use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use agentrl_cli::eval::{cmd_eval, EvalOptions};
use agentrl_cli::policy::{self, PolicyKind};
use agentrl_cli::rundir;
use agentrl_cli::serve::{cmd_serve_controller, ServeOptions};
use agentrl_cli::study::{cmd_rollout_study, to_csv, StudyOptions};
use agentrl_cli::train::{cmd_train, Overrides};
use agentrl_cli::{CliError, RunManifest};
use agentrl_core::domain::ToolCall;
use agentrl_core::envs::{Gateway, TcpGateway};

fn agentrl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_agentrl"))
        .args(args)
        .env("AGENTRL_LOG_LEVEL", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL_BISECT: &str = r#"{
    "tasks": ["bisect"],
    "steps": 300,
    "pipeline": {"n_engines": 2, "b_min": 2, "b_max": 2, "q_max": 4},
    "eval": {"every": 100, "samples": 8, "repeats": 1}
}"#;

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_BISECT);
    let out = tmp.path().join("runs");
    let done = cmd_train(Some(&cfg), &out, &Overrides::default()).unwrap();
    assert_eq!(done.run_id, "run-0001");

    let mut rdr = csv::Reader::from_path(done.run_dir.join(rundir::METRICS)).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "success_bisect"));
    assert_eq!(rdr.records().count(), 300);

    let steps: Vec<String> = csv::Reader::from_path(done.run_dir.join(rundir::EVAL))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[0].to_string())
        .collect();
    assert_eq!(steps, ["0", "100", "200", "300"]);
    for f in [rundir::MANIFEST, rundir::EVENTS, rundir::POLICY, rundir::SUMMARY] {
        assert!(done.run_dir.join(f).is_file(), "{f}");
    }
    assert!(!done.run_dir.join(rundir::TRAJECTORIES).exists());

    let manifest = RunManifest::read(&done.run_dir).unwrap();
    assert_eq!(manifest.run_id, "run-0001");
    assert_eq!(manifest.config.steps, 300);
    assert_eq!(manifest.config.pipeline.b_max, 2);
    assert_eq!(manifest.seeds, vec![0]);

    let snapshot = policy::load(&done.run_dir.join(rundir::POLICY)).unwrap();
    assert_eq!(snapshot.version(), 300);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_BISECT);
    let out = tmp.path().join("runs");
    let o = Overrides {
        steps: Some(40),
        seed: Some(5),
        mode: None,
    };
    let a = cmd_train(Some(&cfg), &out, &o).unwrap();
    let b = cmd_train(Some(&cfg), &out, &o).unwrap();
    assert_ne!(a.run_dir, b.run_dir);
    let read = |d: &Path| std::fs::read_to_string(d.join(rundir::METRICS)).unwrap();
    assert_eq!(read(&a.run_dir), read(&b.run_dir));
}

#[test]
fn bad_configs_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let unknown = write_config(tmp.path(), r#"{"tasks": ["bisect", "chess"]}"#);
    let r = agentrl(&["train", "--config", unknown.to_str().unwrap(), "--out", runs.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("chess"));

    let typo = write_config(tmp.path(), r#"{"stepz": 10}"#);
    let r = agentrl(&["train", "--config", typo.to_str().unwrap(), "--out", runs.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    let r = agentrl(&["train", "--config", "/no/such/file.json"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn optimal_bisect_is_perfect_and_random_gridtext_is_poor() {
    let opts = EvalOptions {
        tasks: vec!["bisect".into()],
        repeats: 3,
        samples: 30,
        ..EvalOptions::default()
    };
    let rows = cmd_eval(&policy::make(PolicyKind::BisectOptimal), &opts).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].success_mean, rows[0].success_std), (1.0, 0.0));
    assert_eq!(rows[0].repeats, 3);

    let opts = EvalOptions {
        tasks: vec!["gridtext".into()],
        ..opts
    };
    let rows = cmd_eval(&policy::make(PolicyKind::Zero), &opts).unwrap();
    assert!(rows[0].success_mean < 0.1, "{}", rows[0].success_mean);
}

#[test]
fn eval_cli_prints_csv_with_a_settings_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("optimal.json");
    assert!(agentrl(&["make-policy", "--kind", "bisect-optimal", "--out", p.to_str().unwrap()]).status.success());
    let r = agentrl(&["eval", "--policy", p.to_str().unwrap(), "--tasks", "bisect", "--n", "2", "--samples", "10"]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# n=2"));
    assert_eq!(lines.next().unwrap(), "task,success_mean,success_std,n,episodes_per_repeat");
    assert!(lines.next().unwrap().starts_with("bisect,1,0,2,10"));

    let r = agentrl(&["eval", "--policy", p.to_str().unwrap(), "--tasks", "chess"]);
    assert_eq!(r.status.code(), Some(2));
}

fn study_opts(ks: Vec<usize>) -> StudyOptions {
    StudyOptions {
        task: "kvstore".into(),
        ks,
        n: 8,
        samples: (0..5).collect(),
        temperature: 0.8,
        seed: 3,
    }
}

#[test]
fn rollout_study_has_every_strategy_for_every_k() {
    let rows = cmd_rollout_study(
        policy::make(PolicyKind::KvSpecialistA),
        policy::make(PolicyKind::KvSpecialistB),
        &study_opts(vec![1, 2, 4]),
    )
    .unwrap();
    assert_eq!(rows.len(), 12);
    let csv = to_csv(&rows).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "strategy,k,pass_at_k,n_samples,attempts_per_sample");
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.pass_at_k));
        assert_eq!(r.n_samples, 5);
    }
    let at = |s: &str, k: usize| rows.iter().find(|r| r.strategy == s && r.k == k).unwrap().pass_at_k;
    for s in ["single-A", "single-B", "cross"] {
        assert!(at(s, 1) <= at(s, 2) && at(s, 2) <= at(s, 4), "{s}");
    }
    assert!(at("cross", 4) > at("single-A", 4));
    assert!(at("cross", 4) > at("single-B", 4));
}

#[test]
fn rollout_study_of_identical_snapshots_agrees_with_itself() {
    // mixing a policy with itself changes nothing, so every strategy scores alike
    let p = policy::make(PolicyKind::BisectOptimal);
    let opts = StudyOptions {
        task: "bisect".into(),
        ..study_opts(vec![1, 8])
    };
    let rows = cmd_rollout_study(p.clone(), p, &opts).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.pass_at_k == 1.0));
}

#[test]
fn rollout_study_rejects_k_above_n() {
    let err = cmd_rollout_study(
        policy::make(PolicyKind::Zero),
        policy::make(PolicyKind::Zero),
        &study_opts(vec![1, 20]),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn serve_controller_runs_sessions_and_shuts_down_clean() {
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let opts = ServeOptions {
        bind: "127.0.0.1:0".into(),
        workers: 2,
        capacity: 8,
        interaction_timeout: 30.0,
        duration: None,
    };
    let stop2 = stop.clone();
    let server = std::thread::spawn(move || cmd_serve_controller(&opts, stop2, |a| tx.send(a).unwrap()));
    let addr = rx.recv().unwrap();

    let gw = TcpGateway::connect(addr).unwrap();
    assert_eq!(gw.list_workers().unwrap().len(), 2);
    let done = gw.start_sample("bisect", 0, 0).unwrap();
    let hidden = agentrl_core::envs::bisect::BisectGuess::hidden_for(0, 0);
    let r = gw.interact(&done.session_id, &ToolCall::new("answer").arg("x", hidden)).unwrap();
    assert!(r.done);
    let cancelled = gw.start_sample("gridtext", 0, 0).unwrap();
    gw.cancel(&cancelled.session_id).unwrap();
    gw.start_sample("kvstore", 0, 0).unwrap();
    gw.start_sample("kvstore", 1, 0).unwrap();

    stop.store(true, Ordering::SeqCst);
    let summary = server.join().unwrap().unwrap();
    assert_eq!(summary.drained, 2);
    assert_eq!(summary.leaked, 0);
}

#[test]
fn serve_controller_reports_a_taken_address() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let opts = ServeOptions {
        bind: addr.clone(),
        workers: 1,
        capacity: 1,
        interaction_timeout: 1.0,
        duration: Some(0.1),
    };
    let err = cmd_serve_controller(&opts, Arc::new(AtomicBool::new(false)), |_| {}).unwrap_err();
    assert!(matches!(err, CliError::Bind { .. }));

    let r = agentrl(&["serve-controller", "--bind", &addr, "--duration", "0.1"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn report_reads_back_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_BISECT);
    let done = cmd_train(
        Some(&cfg),
        &tmp.path().join("runs"),
        &Overrides {
            steps: Some(10),
            ..Overrides::default()
        },
    )
    .unwrap();
    let r = agentrl(&["report", "--run", done.run_dir.to_str().unwrap()]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(v["groups_per_s"].as_f64().unwrap() > 0.0);
    assert_eq!(v["groups"], 20);
}
