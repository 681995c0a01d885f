use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

/// A temporary experiment root holding `cfg.json`; outputs land in `out/`.
struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new(config: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.dir.path().join("cfg.json");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_adaflow"));
        cmd.env("ADAFLOW_OUT", self.dir.path()).arg("--jobs").arg("2");
        if let Some((sub, rest)) = args.split_first() {
            cmd.arg(sub);
            if *sub != "oracle-check" {
                cmd.arg("-c").arg(&cfg);
            }
            cmd.args(rest);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.out().join(rel)).unwrap()
    }
}

fn tiny_training() -> Value {
    json!({"epochs": 3, "batch_size": 64, "optimizer": {"lr": 1e-3}})
}

fn tiny_net() -> Value {
    json!({"hidden": [16, 16], "time_dim": 8})
}

fn maze_config() -> Value {
    json!({
        "task": "maze:maze1-like",
        "output_dir": "out",
        "demos": {"episodes": 6},
        "flow": {"net": tiny_net(), "train": tiny_training()},
        "variance": {"net": tiny_net(), "train": tiny_training()},
        "bc": {"hidden": [16], "train": tiny_training()},
        "eval": {"episodes": 4, "max_steps": 60},
        "plot": {"etas": [0.6], "fixed_steps": [1, 2]}
    })
}

fn regression_config() -> Value {
    json!({
        "task": "regression1d",
        "output_dir": "out",
        "flow": {"net": tiny_net(), "train": tiny_training()},
        "variance": {"net": tiny_net(), "train": tiny_training()},
        "plot": {"etas": [0.1, 0.5], "trajectory_xs": [-1.0, 2.0], "trajectory_samples": 2}
    })
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn train_maze(s: &Scratch) {
    s.ok(&["gen-demos"]);
    for stage in ["flow", "variance", "bc"] {
        s.ok(&["train", "--stage", stage]);
    }
}

#[test]
fn demo_generation_is_deterministic() {
    let a = Scratch::new(maze_config());
    let b = Scratch::new(maze_config());
    a.ok(&["gen-demos"]);
    b.ok(&["gen-demos"]);
    assert_eq!(a.read("seed-0/demos.jsonl"), b.read("seed-0/demos.jsonl"));
    let meta: Value = serde_json::from_str(&a.read("seed-0/demos.meta.json")).unwrap();
    assert!(meta.is_object());
}

#[test]
fn regression_demos_hold_one_line_per_sample() {
    let s = Scratch::new(regression_config());
    s.ok(&["gen-demos"]);
    assert_eq!(s.read("seed-0/demos.jsonl").lines().count(), 10_000);
}

#[test]
fn unknown_keys_exit_with_code_two_and_are_named() {
    let mut cfg = maze_config();
    cfg["flow"]["train"]["epoch"] = json!(5);
    let s = Scratch::new(cfg);
    let out = s.run(&["gen-demos"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.train.epoch"));

    let s = Scratch::new(maze_config());
    let out = s.run(&["gen-demos", "--set", "eval.episodez=3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_out_of_order_fail_with_instructions() {
    let s = Scratch::new(maze_config());
    s.ok(&["gen-demos"]);
    let out = s.run(&["train", "--stage", "variance"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--stage flow"));

    let fresh = Scratch::new(maze_config());
    let out = fresh.run(&["plot-data"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifacts"));
}

#[test]
fn maze_pipeline_end_to_end() {
    let s = Scratch::new(maze_config());
    train_maze(&s);
    assert_eq!(s.read("seed-0/flow.loss.csv").lines().count(), 1 + 3);
    assert_eq!(s.read("seed-0/variance.loss.csv").lines().count(), 1 + 3);

    s.ok(&["eval", "--executor", "replay", "--set", "eval.max_steps=400"]);
    let replay: Value = serde_json::from_str(&s.read("seed-0/eval/replay.json")).unwrap();
    assert_eq!(replay["sr"], json!(1.0));

    s.ok(&["eval", "--executor", "flow-adaptive", "--traces"]);
    let first = s.read("seed-0/eval/flow-adaptive-eta0.6.json");
    s.ok(&["eval", "--executor", "flow-adaptive"]);
    assert_eq!(first, s.read("seed-0/eval/flow-adaptive-eta0.6.json"));
    assert!(s.out().join("seed-0/eval").read_dir().unwrap().count() >= 3);

    let row = s.ok(&["eval", "--executor", "flow-fixed", "--steps", "2"]);
    let fields: Vec<&str> = row.trim().lines().last().unwrap().split(',').collect();
    assert_eq!(fields[0], "flow-fixed-2");
    assert_eq!(fields[5].parse::<f64>().unwrap(), 2.0);

    s.ok(&["plot-data"]);
    let sweep = csv_rows(&s.read("plots/eta_sweep.csv"));
    assert_eq!(sweep.len(), 1 + 2 + 1);
    let bc = sweep.iter().find(|r| r[0] == "bc").unwrap();
    assert_eq!(bc[7].parse::<f64>().unwrap(), 1.0);
    for r in sweep.iter().filter(|r| r[0] == "flow-fixed") {
        assert_eq!(r[7].parse::<f64>().unwrap(), r[4].parse::<f64>().unwrap());
    }
}

#[test]
fn regression_plot_data() {
    let s = Scratch::new(regression_config());
    s.ok(&["gen-demos"]);
    s.ok(&["train", "--stage", "flow"]);
    s.ok(&["train", "--stage", "variance"]);
    let out = s.run(&["eval", "--executor", "bc"]);
    assert_eq!(out.status.code(), Some(1));
    s.ok(&["plot-data"]);
    let curve = csv_rows(&s.read("plots/variance_curve.csv"));
    assert_eq!(curve.len(), 101);
    assert_eq!(curve[0][1], "-5");
    assert_eq!(curve[100][1], "5");
    assert!(curve.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
    assert_eq!(csv_rows(&s.read("plots/eta_sweep.csv")).len(), 2);
    assert!(!csv_rows(&s.read("plots/trajectories.csv")).is_empty());
}

#[test]
fn oracle_check_passes_and_catches_a_shrunk_sigma() {
    let s = Scratch::new(json!({"task": "regression1d"}));
    let out = s.ok(&["oracle-check", "--samples", "2048"]);
    assert!(out.contains("all checks passed"));
    let out = s.run(&["oracle-check", "--samples", "2048", "--sigma-scale", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_flag_restricts_the_run() {
    let mut cfg = maze_config();
    cfg["seeds"] = json!([0, 1]);
    let s = Scratch::new(cfg);
    s.ok(&["gen-demos", "--seed", "1"]);
    assert!(s.out().join("seed-1/demos.jsonl").exists());
    assert!(!Path::new(&s.out().join("seed-0/demos.jsonl")).exists());
}
