use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
synth.videos = 8
synth.min_len = 60
synth.max_len = 80
synth.segment_mean = 12
tcn.stages = 2
tcn.layers = 3
tcn.hidden = 4
train.epochs = 2
global.iterations = 2
global.population = 4
global.epochs = 1
global.repeats = 1
global.max_exponent = 5
local.iterations = 2
local.epochs_per_update = 1
";

fn g2l(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2l"))
        .args(args)
        .output()
        .expect("spawn g2l")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "g2l failed: {}", stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Temp dir holding `tiny.cfg` and a synthesized dataset under `data/`.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let cfg = format!("{TINY}data.root = {}\n", data.display());
        fs::write(dir.path().join("tiny.cfg"), cfg).unwrap();
        let f = Self { dir };
        ok(g2l(&["synth", "--config", p(&f.cfg()), "--out", p(&data)]));
        f
    }

    fn cfg(&self) -> PathBuf {
        self.dir.path().join("tiny.cfg")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.cfg();
        let out = self.out(out);
        let mut args = vec![cmd, "--config", p(&cfg), "--out", p(&out)];
        args.extend_from_slice(extra);
        g2l(&args)
    }
}

fn read(path: PathBuf) -> String {
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_writes_pairs_deterministically() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(g2l(&["synth", "--out", p(out), "--seed", "5", "--set", "synth.videos=20", "--set", "synth.max_len=450"]));
    }
    let feats = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "feat"))
        .count();
    assert_eq!(feats, 20);
    for i in 0..20 {
        for ext in ["feat", "txt"] {
            let name = format!("video_{i:03}.{ext}");
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        }
    }
    assert_eq!(read(a.join("folds.json")), read(b.join("folds.json")));
    assert!(read(a.join("mapping.txt")).starts_with("0 action_0\n"));
    assert!(read(a.join("effective-config.txt")).contains("seed = 5"));
}

#[test]
fn config_errors_exit_2_with_prefix() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", p(&out), "--set", "synth.classes=1"],
        vec!["synth", "--out", p(&out), "--set", "no.such.key=1"],
        vec!["global", "--out", p(&out)],
        vec!["global", "--out", p(&out), "--set", "data.root=/nonexistent/g2l"],
        vec!["synth", "--out", p(&out), "--workers", "0"],
        vec!["bogus"],
        vec!["synth"],
        vec!["local", "--out", p(&out), "--set", "data.root=/tmp"],
    ];
    for args in cases {
        let o = g2l(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        let first = stderr(&o).lines().next().unwrap_or_default().to_string();
        assert!(first.starts_with("G2L-ERROR: "), "{args:?}: {first}");
    }
    assert_eq!(g2l(&["--help"]).status.code(), Some(0));
}

#[test]
fn global_smoke_and_resume() {
    let f = Fixture::new();
    ok(f.run("global", "full", &["--workers", "1"]));
    let history = read(f.out("full").join("history.csv"));
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "iteration,best_fitness,mean_fitness,best_structure");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    assert!(f.out("full").join("population.ckpt").exists());
    assert!(f.out("full").join("effective-config.txt").exists());

    // Interrupt after one iteration, then resume in a fresh directory.
    ok(f.run("global", "part", &["--stop-after", "1"]));
    assert_eq!(read(f.out("part").join("history.csv")).lines().count(), 2);
    let ckpt = f.out("part").join("population.ckpt");
    ok(f.run("global", "resumed", &["--resume", p(&ckpt), "--workers", "3"]));
    assert_eq!(read(f.out("resumed").join("history.csv")), history);
    assert_eq!(
        read(f.out("resumed").join("population.ckpt")),
        read(f.out("full").join("population.ckpt"))
    );
    assert_eq!(
        read(f.out("resumed").join("structure.txt")),
        read(f.out("full").join("structure.txt"))
    );
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let f = Fixture::new();
    let bad = f.out("bad.ckpt");
    fs::write(&bad, "{\"version\": 1, \"strat").unwrap();
    let o = f.run("global", "x", &["--resume", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("G2L-ERROR: ") && stderr(&o).contains("corrupt checkpoint"));

    // A checkpoint from a different configuration is refused.
    ok(f.run("global", "other", &["--stop-after", "0", "--set", "global.population=6"]));
    let o = f.run("global", "x", &["--resume", p(&f.out("other").join("population.ckpt"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn local_echoes_input_without_iterations() {
    let f = Fixture::new();
    ok(f.run("local", "l0", &["--init", "3,2,1|1,2,3", "--set", "local.iterations=0"]));
    assert_eq!(read(f.out("l0").join("structure.txt")).trim(), "3,2,1|1,2,3");
    let rows = read(f.out("l0").join("trajectory.csv"));
    assert_eq!(rows.lines().count(), 1 + 6);
}

#[test]
fn local_trajectory_rows_and_init_file() {
    let f = Fixture::new();
    let init = f.out("init.txt");
    fs::write(&init, "8,4,2|2,4,8\n").unwrap();
    ok(f.run("local", "l2", &["--init-file", p(&init)]));
    let traj = read(f.out("l2").join("trajectory.csv"));
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "iteration,layer_index,dilation");
    assert_eq!(lines.len(), 1 + 6 * 3);
    assert_eq!(&lines[1..7], &["0,0,8", "0,1,4", "0,2,2", "0,3,2", "0,4,4", "0,5,8"]);
    assert!(f.out("l2").join("model.g2l").exists());

    // Wrong shape for this config.
    let o = f.run("local", "bad", &["--init", "1,2"]);
    assert_eq!(o.status.code(), Some(2));

    // Resume from the checkpoint of an interrupted run.
    ok(f.run("local", "part", &["--init-file", p(&init), "--stop-after", "1"]));
    let ckpt = f.out("part").join("local.ckpt");
    ok(f.run("local", "rest", &["--init-file", p(&init), "--resume", p(&ckpt)]));
    assert_eq!(read(f.out("rest").join("trajectory.csv")), traj);
    assert_eq!(
        fs::read(f.out("rest").join("model.g2l")).unwrap(),
        fs::read(f.out("l2").join("model.g2l")).unwrap()
    );
}

#[test]
fn g2l_smoke_is_reproducible() {
    let f = Fixture::new();
    ok(f.run("g2l", "a", &["--workers", "1"]));
    ok(f.run("g2l", "b", &["--workers", "4"]));
    for name in ["history.csv", "trajectory.csv", "structure.txt", "summary.json", "effective-config.txt"] {
        assert_eq!(read(f.out("a").join(name)), read(f.out("b").join(name)), "{name}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(f.out("a").join("summary.json"))).unwrap();
    let final_structure = read(f.out("a").join("structure.txt"));
    assert_eq!(summary["local"]["structure"], final_structure.trim());
    let history = read(f.out("a").join("history.csv"));
    let last = history.lines().last().unwrap();
    assert!(last.ends_with(summary["global"]["structure"].as_str().unwrap()));

    // Interrupted global phase, then resumed through to the local phase.
    ok(f.run("g2l", "c", &["--stop-after", "1"]));
    assert!(!f.out("c").join("trajectory.csv").exists());
    let ckpt = f.out("c").join("population.ckpt");
    ok(f.run("g2l", "c", &["--resume", p(&ckpt)]));
    for name in ["history.csv", "trajectory.csv", "summary.json"] {
        assert_eq!(read(f.out("a").join(name)), read(f.out("c").join(name)), "{name}");
    }
}

#[test]
fn eval_report_schema() {
    let f = Fixture::new();
    ok(f.run("eval", "e", &["--structure", "1,2,4|1,2,4", "--set", "eval.folds=0,2"]));
    let report: serde_json::Value = serde_json::from_str(&read(f.out("e").join("report.json"))).unwrap();
    assert_eq!(report["structure"], "1,2,4|1,2,4");
    for r in std::iter::once(&report).chain(report["folds"].as_array().unwrap()) {
        for key in ["acc", "edit"] {
            let v = r[key].as_f64().unwrap();
            assert!((0.0..=100.0).contains(&v));
        }
        let f1 = r["f1"].as_object().unwrap();
        assert_eq!(f1.keys().collect::<Vec<_>>(), ["0.10", "0.25", "0.50"]);
    }
    let folds: Vec<u64> = report["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["fold"].as_u64().unwrap())
        .collect();
    assert_eq!(folds, [0, 2]);
    let mean_acc = report["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["acc"].as_f64().unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((report["acc"].as_f64().unwrap() - mean_acc).abs() < 1e-9);
    assert!(f.out("e").join("model-fold2.g2l").exists());

    let o = f.run("eval", "e2", &["--structure", "1,2,4|1,2,4", "--set", "eval.folds=0,4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fold 4 out of range"));
    let o = f.run("eval", "e3", &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_separable_dataset_is_nearly_perfect() {
    // No noise and no ambiguous segments: every frame's class is readable
    // from its own features.
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("sep.cfg");
    fs::write(
        &cfg,
        format!(
            "synth.videos = 8\nsynth.min_len = 200\nsynth.max_len = 250\nsynth.segment_mean = 40\n\
             synth.noise = 0\nsynth.drift_prob = 0\nsynth.drift_amplitude = 0\n\
             tcn.stages = 1\ntcn.layers = 2\ntcn.hidden = 8\ntrain.epochs = 30\n\
             eval.folds = 0\ndata.root = {}\n",
            data.display()
        ),
    )
    .unwrap();
    ok(g2l(&["synth", "--config", p(&cfg), "--out", p(&data)]));
    let out = dir.path().join("e");
    ok(g2l(&["eval", "--config", p(&cfg), "--out", p(&out), "--structure", "1,1"]));
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert!(report["acc"].as_f64().unwrap() > 99.0, "{report}");
}
