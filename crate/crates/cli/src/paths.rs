//! On-disk layout of an experiment directory.
//!
//! ```text
//! <out>/config.json             resolved config of the last command
//! <out>/seed-<s>/demos.jsonl    demonstrations (+ demos.meta.json)
//! <out>/seed-<s>/<stage>.*      checkpoints and <stage>.loss.csv
//! <out>/seed-<s>/snapshots/     flow-epoch-<e> checkpoints
//! <out>/seed-<s>/eval/          <method>.json, <method>.csv, traces/
//! <out>/plots/                  tidy CSVs
//! ```

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

pub const OUT_ENV: &str = "ADAFLOW_OUT";

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let base = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_default();
        Self {
            root: base.join(&cfg.output_dir),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    pub fn demos(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("demos.jsonl")
    }

    /// Checkpoint basename for `flow`, `variance`, `bc` or `reflow`.
    pub fn checkpoint(&self, seed: u64, stage: &str) -> PathBuf {
        self.seed_dir(seed).join(stage)
    }

    pub fn loss_history(&self, seed: u64, stage: &str) -> PathBuf {
        self.seed_dir(seed).join(format!("{stage}.loss.csv"))
    }

    pub fn snapshots(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("snapshots")
    }

    pub fn eval_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("eval")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}
