use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use meshdqn::config::RunConfig;
use meshdqn::env::{EpisodeState, Problem};
use meshdqn::flow::{compute_property, PropertyKind};
use meshdqn::interp::io::read_snapshot_file;
use meshdqn::mesh::msh::read_msh;
use meshdqn::mesh::BoundaryTag;

fn meshdqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshdqn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fixture with an obstacle plus a config shrunk for quick runs.
fn small_fixture(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "fixture",
        "--nx",
        "9",
        "--ny",
        "7",
        "--obstacle",
        "3,5,2,4",
        "--snapshots",
        "2",
        "--order",
        "1",
        "--out",
    ];
    args.push(s(dir));
    args.extend_from_slice(extra);
    ok(&meshdqn(&args));
    let path = dir.join("config.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.network.width = 8;
    cfg.network.sage_layers = 1;
    cfg.network.gcn_layers = 1;
    cfg.training.episodes = 4;
    cfg.training.workers = 1;
    cfg.training.warmup = 4;
    cfg.training.batch_size = 4;
    cfg.training.max_episode_steps = 20;
    fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

#[test]
fn fixture_files_reload_and_reset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_fixture(dir.path(), &[]);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let mesh = read_msh(cfg.paths.mesh.as_ref().unwrap(), &cfg.tags).unwrap();
    let snaps = read_snapshot_file(cfg.paths.snapshots.as_ref().unwrap(), &mesh).unwrap();
    assert_eq!(snaps.len(), 2);
    assert_eq!(cfg.environment.property_tag, BoundaryTag::Wall);
    let problem = Problem::new(mesh, snaps, cfg.env_config()).unwrap();
    let ep = EpisodeState::reset(Arc::new(problem)).unwrap();
    assert_eq!(ep.error, 0.0);
}

#[test]
fn uniform_fixture_has_no_drag_on_the_body() {
    let dir = tempfile::tempdir().unwrap();
    ok(&meshdqn(&[
        "fixture",
        "--kind",
        "uniform",
        "--nx",
        "9",
        "--ny",
        "7",
        "--obstacle",
        "3,5,2,4",
        "--out",
        s(dir.path()),
    ]));
    let cfg = RunConfig::load(dir.path().join("config.toml")).unwrap();
    let mesh = read_msh(cfg.paths.mesh.as_ref().unwrap(), &cfg.tags).unwrap();
    let snaps = read_snapshot_file(cfg.paths.snapshots.as_ref().unwrap(), &mesh).unwrap();
    for kind in [PropertyKind::Drag, PropertyKind::Lift] {
        let f = compute_property(&snaps, &mesh, BoundaryTag::Airfoil, kind, cfg.fluid).unwrap();
        assert!(
            f.values.iter().all(|v| v.abs() < 1e-10),
            "{kind:?}: {:?}",
            f.values
        );
    }
}

#[test]
fn train_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(&dir.path().join("fx"), &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&meshdqn(&[
            "train",
            "--config",
            s(&cfg),
            "--seed",
            "5",
            "--workers",
            "1",
            "--out",
            s(&out),
        ]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["checkpoint.mdqc", "metrics.jsonl", "summary.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let metrics = fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(String::from_utf8(metrics).unwrap().lines().count(), 4);
    assert_eq!(
        fs::read(a.join("checkpoint.mdqc")).unwrap(),
        fs::read(b.join("checkpoint.mdqc")).unwrap()
    );
}

#[test]
fn rollout_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(&dir.path().join("fx"), &[]);
    let train = dir.path().join("train");
    ok(&meshdqn(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&train),
    ]));
    let roll = dir.path().join("roll");
    let ck = train.join("checkpoint.mdqc");
    ok(&meshdqn(&[
        "rollout",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&roll),
    ]));
    check_rollout_dir(&roll, &RunConfig::load(&cfg).unwrap());
}

fn check_rollout_dir(dir: &Path, cfg: &RunConfig) -> Vec<Vec<String>> {
    let mesh = read_msh(dir.join("final_mesh.msh"), &cfg.tags).unwrap();
    let text = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "step,action,error,reward,n_vertices,drag_1,drag_2,lift_1,lift_2"
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rows.len() as u64, summary["steps"].as_u64().unwrap() + 1);
    for w in rows.windows(2) {
        let (before, after): (usize, usize) = (w[0][4].parse().unwrap(), w[1][4].parse().unwrap());
        match w[1][1].as_str() {
            "no-removal" => assert_eq!(after, before),
            _ => assert!(after < before || summary["broken"] == true),
        }
    }
    let last: usize = rows.last().unwrap()[4].parse().unwrap();
    assert_eq!(mesh.n_vertices(), last);
    rows
}

#[test]
fn greedy_baseline_matches_exhaustive_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&meshdqn(&[
        "fixture",
        "--nx",
        "5",
        "--ny",
        "4",
        "--obstacle",
        "1,3,1,2",
        "--snapshots",
        "2",
        "--order",
        "1",
        "--out",
        s(&fx),
    ]));
    let cfg_path = fx.join("config.toml");
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    let mesh = read_msh(cfg.paths.mesh.as_ref().unwrap(), &cfg.tags).unwrap();
    assert_eq!(mesh.n_vertices(), 30);
    cfg.environment.window = mesh.interior_vertices().count();
    cfg.environment.removal_fraction = 0.02;
    fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();

    let out = dir.path().join("greedy");
    ok(&meshdqn(&[
        "baseline",
        "--config",
        s(&cfg_path),
        "--strategy",
        "greedy",
        "--out",
        s(&out),
    ]));
    let rows = check_rollout_dir(&out, &cfg);
    assert_eq!(rows.len(), 2);

    let snaps = read_snapshot_file(cfg.paths.snapshots.as_ref().unwrap(), &mesh).unwrap();
    let problem = Arc::new(Problem::new(mesh, snaps, cfg.env_config()).unwrap());
    let ep = EpisodeState::reset(problem).unwrap();
    let mut best: Option<(f64, usize)> = None;
    for a in 0..cfg.environment.window {
        let (next, info) = ep.step(a).unwrap();
        if info.broken {
            continue;
        }
        if best.is_none_or(|(e, _)| next.error < e) {
            best = Some((next.error, ep.mesh.ids()[ep.state.window[a]]));
        }
    }
    let (err, id) = best.unwrap();
    assert_eq!(rows[1][1], id.to_string());
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), err);
}

#[test]
fn random_baseline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(&dir.path().join("fx"), &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&meshdqn(&[
            "baseline",
            "--config",
            s(&cfg),
            "--strategy",
            "random",
            "--seed",
            "11",
            "--out",
            s(&out),
        ]));
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fixture(&dir.path().join("fx"), &[]);
    let out = meshdqn(&["baseline", "--config", s(&cfg), "--strategy", "greedyy"]);
    assert_eq!(out.status.code(), Some(2));

    let mut broken = RunConfig::load(&cfg).unwrap();
    broken.paths.mesh = Some(dir.path().join("missing.msh"));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, broken.to_toml_string().unwrap()).unwrap();
    let out = meshdqn(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.msh"));

    let out = meshdqn(&["train", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = meshdqn(&["train", "--config", s(&cfg), "--workers", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
