use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsvshield::io::floorplan_to_dump;
use tsvshield::model::{BlockKind, BlockModule, Die, Floorplan, VoltageLevel};
use tsvshield::synth::hotspot_case;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tsvshield"));
    c.env("TSVSHIELD_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tsvshield")
}

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks/toy")
}

fn toy_args(out: &Path) -> Vec<String> {
    let d = toy_dir();
    vec![
        "floorplan".into(),
        "--config".into(),
        d.join("config.txt").display().to_string(),
        "--blocks".into(),
        d.join("toy.blocks").display().to_string(),
        "--nets".into(),
        d.join("toy.nets").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn floorplan_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let mut args = toy_args(out);
        args.extend(["--mode", "pa", "--runs", "1", "--seed", "7", "--budget", "200"].map(String::from));
        let o = bin().args(&args).output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["pa/seed_7/report.json", "pa/seed_7/floorplan.txt", "pa/seed_7/temp_die1.csv", "aggregate.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    let outputs = manifest["outputs"].as_array().unwrap();
    for o in outputs {
        assert!(a.join(o.as_str().unwrap()).exists());
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_benchmark_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut args = toy_args(&out);
    args[6] = tmp.path().join("nope.nets").display().to_string();
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(code(&run(&["floorplan", "--mode", "fast"])), 2);
    assert_eq!(code(&run(&["sweep", "--grid", "1x", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn sweep_writes_thirty_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--grid", "8", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert_eq!(fs::read_dir(tmp.path().join("maps")).unwrap().count(), 30);
}

fn write_hotspot(dir: &Path, steps: usize) -> (PathBuf, PathBuf) {
    let (fp, mut cfg) = hotspot_case();
    cfg.sampling.m = 8;
    cfg.harden.max_steps = steps;
    let dump = dir.join("hot.txt");
    let conf = dir.join("hot.cfg");
    fs::write(&dump, floorplan_to_dump(&fp)).unwrap();
    fs::write(&conf, cfg.to_text()).unwrap();
    (dump, conf)
}

#[test]
fn harden_trace_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let (dump, conf) = write_hotspot(tmp.path(), 4);
    let out = tmp.path().join("out");
    let o = run(&[
        "harden",
        "--config",
        conf.to_str().unwrap(),
        "--floorplan",
        dump.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let r: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(3)).filter_map(|v| v.parse().ok()).collect();
    assert!(r.len() >= 2);
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
    assert!(out.join("after/temp_die1.csv").exists());
    assert!(out.join("before/temp_die1.csv").exists());
}

#[test]
fn harden_without_whitespace_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let mut fp = Floorplan::new((1000.0, 1000.0));
    for (id, die, p) in [("a", Die::Bottom, 0.5), ("b", Die::Top, 1.0)] {
        fp.blocks.push(BlockModule {
            id: id.into(),
            kind: BlockKind::Hard,
            area: 1e6,
            aspect_limits: (1.0, 1.0),
            pos: (0.0, 0.0),
            dims: (1000.0, 1000.0),
            die,
            nominal_power: p,
            voltage: VoltageLevel::Nominal,
        });
    }
    let dump = tmp.path().join("full.txt");
    fs::write(&dump, floorplan_to_dump(&fp)).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["harden", "--grid", "8", "--floorplan", dump.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace: serde_json::Value = serde_json::from_slice(&fs::read(out.join("trace.json")).unwrap()).unwrap();
    assert!(trace["steps"].as_array().unwrap().is_empty());
}

#[test]
fn unparsable_dump_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("bad.txt");
    fs::write(&dump, "@outline 10\n").unwrap();
    let o = run(&["harden", "--floorplan", dump.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn attack_needs_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let (dump, conf) = write_hotspot(tmp.path(), 0);
    let out = tmp.path().join("out");
    let base = ["attack", "--config", conf.to_str().unwrap(), "--floorplan", dump.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let mut args = base.to_vec();
    args.extend(["--targets", ""]);
    assert_eq!(code(&run(&args)), 2);
    let mut args = base.to_vec();
    args.extend(["--targets", "b21"]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(out.join("attack.json")).unwrap()).unwrap();
    assert_eq!(rep["success"], true);
}

#[test]
fn gen_bench_writes_inputs_that_load() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["gen-bench", "--name", "toy", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["toy.blocks", "toy.nets", "toy.power", "config.txt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    // bundled copy matches the generator
    for f in ["toy.blocks", "toy.nets", "toy.power", "config.txt"] {
        assert_eq!(fs::read(tmp.path().join(f)).unwrap(), fs::read(toy_dir().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn toy_runs_favour_tsc() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = toy_args(tmp.path());
    args.extend(["--runs", "10", "--seed", "1", "--budget", "3000"].map(String::from));
    let o = bin().env_remove("TSVSHIELD_THREADS").args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("aggregate.json")).unwrap()).unwrap();
    let r1 = |k: usize| agg[k]["mean_r1"].as_f64().unwrap();
    assert_eq!(agg[0]["mode"], "pa");
    assert!(r1(0) > r1(1), "pa {} tsc {}", r1(0), r1(1));
}
