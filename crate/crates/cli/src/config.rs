//! Experiment configuration: one JSON file per experiment.
//!
//! A file only needs `task`; every other field falls back to the defaults for
//! that task. User values are merged over the defaults key by key, then the
//! result is parsed strictly, so a misspelled key anywhere is an error that
//! names the key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaflow::baselines::BcConfig;
use adaflow::envs::{MazeConfig, PlannerConfig, Regression1DTask};
use adaflow::flow::{FlowConfig, NetConfig, ReflowConfig};
use adaflow::metrics::Protocol;
use adaflow::nn::AdamConfig;
use adaflow::solver::SolverConfig;
use adaflow::train::TrainConfig;
use adaflow::variance::{VarianceConfig, DEFAULT_SIGMA_FLOOR};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::CliError;

/// `regression1d`, or `maze:<layout>` with a built-in name or a layout file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskSpec {
    Regression1D,
    Maze(String),
}

impl TaskSpec {
    /// Short name used in CSV rows and default output paths.
    pub fn label(&self) -> String {
        match self {
            TaskSpec::Regression1D => "regression1d".into(),
            TaskSpec::Maze(layout) => Path::new(layout)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or(layout)
                .to_string(),
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Regression1D => f.write_str("regression1d"),
            TaskSpec::Maze(layout) => write!(f, "maze:{layout}"),
        }
    }
}

impl FromStr for TaskSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "regression1d" {
            return Ok(TaskSpec::Regression1D);
        }
        match s.strip_prefix("maze:") {
            Some(layout) if !layout.is_empty() => Ok(TaskSpec::Maze(layout.to_string())),
            _ => Err(format!("unknown task {s:?}; expected \"regression1d\" or \"maze:<layout>\"")),
        }
    }
}

impl Serialize for TaskSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    /// Maze episodes to plan.
    pub episodes: usize,
    pub regression: Regression1DTask,
    pub planner: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub protocol: Protocol,
    /// Overrides the maze's episode step limit when set.
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkConfig {
    /// Actions predicted per decision.
    pub horizon: usize,
    /// Actions executed from each prediction before re-planning.
    pub execute: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub etas: Vec<f64>,
    pub fixed_steps: Vec<usize>,
    /// Regression inputs whose solver trajectories are dumped.
    pub trajectory_xs: Vec<f64>,
    pub trajectory_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against `$ADAFLOW_OUT` (default: the working directory).
    pub output_dir: PathBuf,
    pub maze: MazeConfig,
    pub demos: DemoConfig,
    pub chunk: ChunkConfig,
    pub flow: FlowConfig,
    pub variance: VarianceConfig,
    pub bc: BcConfig,
    pub reflow: ReflowConfig,
    /// Flow checkpoints are also written every this many epochs; 0 disables.
    pub snapshot_every: usize,
    pub solver: SolverConfig,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

impl ExperimentConfig {
    pub fn defaults_for(task: TaskSpec) -> Self {
        let maze = matches!(task, TaskSpec::Maze(_));
        let net = if maze {
            NetConfig {
                hidden: vec![128; 3],
                time_dim: 32,
                normalize_states: true,
            }
        } else {
            NetConfig {
                normalize_states: true,
                ..NetConfig::default()
            }
        };
        let train = if maze {
            TrainConfig {
                epochs: 200,
                batch_size: 256,
                optimizer: adam(1e-3),
                t_max: 1.0,
            }
        } else {
            TrainConfig {
                epochs: 200,
                batch_size: 1000,
                optimizer: adam(1e-2),
                t_max: 1.0,
            }
        };
        // The regression NLL needs more, smaller steps than its flow to track the large-x tail.
        let variance_train = if maze {
            TrainConfig {
                epochs: train.epochs / 2,
                optimizer: adam(1e-3),
                ..train.clone()
            }
        } else {
            TrainConfig {
                epochs: train.epochs / 2,
                batch_size: 250,
                optimizer: adam(3e-3),
                t_max: 1.0,
            }
        };
        Self {
            output_dir: PathBuf::from("runs").join(task.label()),
            seeds: vec![0],
            maze: MazeConfig::default(),
            demos: DemoConfig {
                episodes: 100,
                regression: Regression1DTask::default(),
                planner: PlannerConfig::default(),
            },
            chunk: ChunkConfig { horizon: 1, execute: 1 },
            flow: FlowConfig {
                net: net.clone(),
                train: train.clone(),
            },
            variance: VarianceConfig {
                net: net.clone(),
                train: variance_train,
                sigma_floor: DEFAULT_SIGMA_FLOOR,
            },
            bc: BcConfig {
                hidden: net.hidden.clone(),
                normalize_states: true,
                train: train.clone(),
            },
            reflow: ReflowConfig {
                n_synthetic: 10_000,
                teacher_steps: 20,
                student: FlowConfig { net, train },
            },
            snapshot_every: 0,
            solver: if maze {
                SolverConfig { eta: 0.6, eps_min: 0.2 }
            } else {
                SolverConfig { eta: 0.1, eps_min: 0.2 }
            },
            eval: EvalConfig {
                episodes: 50,
                protocol: Protocol::FixedStart,
                max_steps: None,
            },
            plot: PlotConfig {
                etas: if maze { vec![0.2, 0.4, 0.6, 1.0, 2.0] } else { vec![0.05, 0.1, 0.2, 0.5] },
                fixed_steps: vec![1, 2, 3, 5],
                trajectory_xs: vec![-4.0, -2.0, -1.0, 1.0, 2.0, 4.0],
                trajectory_samples: 20,
            },
            task,
        }
    }

    /// Parses a config document, applying `overrides` (`path.to.key=value`).
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut user: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let task: TaskSpec = match user.get("task") {
            Some(Value::String(s)) => s.parse().map_err(CliError::Config)?,
            Some(_) => return Err(CliError::Config("`task` must be a string".into())),
            None => return Err(CliError::Config("config is missing `task`".into())),
        };
        let mut merged = serde_json::to_value(Self::defaults_for(task)).expect("defaults serialize");
        merge(&mut merged, user, "")?;
        let cfg: Self = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("`seeds` is empty".into());
        }
        if self.chunk.horizon == 0 || self.chunk.execute == 0 || self.chunk.execute > self.chunk.horizon {
            return bad(format!(
                "chunk needs 1 <= execute <= horizon, got execute {} horizon {}",
                self.chunk.execute, self.chunk.horizon
            ));
        }
        if self.eval.episodes == 0 {
            return bad("`eval.episodes` must be positive".into());
        }
        for (name, t) in [
            ("flow.train", &self.flow.train),
            ("variance.train", &self.variance.train),
            ("bc.train", &self.bc.train),
            ("reflow.student.train", &self.reflow.student.train),
        ] {
            t.validate().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        self.solver.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Recursively overlays `user` onto `base`. Keys unknown to `base` are kept
/// so that strict parsing reports them.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<(), CliError> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &sub)?,
                    Some(slot) => *slot = v,
                    None => {
                        return Err(CliError::Config(format!("unknown key `{sub}`")));
                    }
                }
            }
            Ok(())
        }
        (b, u) => {
            *b = u;
            Ok(())
        }
    }
}

/// `a.b.c=value`; the value is read as JSON when it parses, else as a string.
fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {path:?}: `{key}` is below a non-object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Config(format!("override {spec:?} has an empty key")))
}
