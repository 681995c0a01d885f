//! Behavioral cloning and the executors that turn trained models into
//! maze controllers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::Executor;
use crate::error::{Error, Result};
use crate::flow::{FlowPolicy, NetConfig, Trained};
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, CheckpointMeta, Matrix, MlpModel, Normalizer, Tape,
};
use crate::rng::{normal_vec, stream, StreamRng};
use crate::solver::{solve_adaptive, solve_fixed, SolverConfig};
use crate::train::{run_epochs, TrainConfig};
use crate::variance::VarianceNet;
use crate::Scalar;

/// Deterministic state → action regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy<T> {
    net: MlpModel<T>,
    state_norm: Normalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub normalize_states: bool,
    pub train: TrainConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: NetConfig::default().hidden,
            normalize_states: false,
            train: TrainConfig::default(),
        }
    }
}

impl<T: Scalar> BcPolicy<T> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        Ok(Self {
            net: MlpModel::new(&dims, &mut stream(seed, "init-bc"))?,
            state_norm: Normalizer::identity(state_dim),
        })
    }

    pub fn net(&self) -> &MlpModel<T> {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn predict(&self, s: &[T]) -> Result<Vec<T>> {
        if s.len() != self.state_dim() {
            return Err(Error::Invalid(format!(
                "expected a state of dim {}, got {}",
                self.state_dim(),
                s.len()
            )));
        }
        let mut row = vec![T::zero(); s.len()];
        self.state_norm.apply_into(s, &mut row);
        Ok(self.net.forward(&row)?)
    }

    pub fn save(&self, base: &Path, seed: u64, step: u64) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "bc".into(),
            layer_dims: self.net.layer_dims().to_vec(),
            activation: Activation::Silu,
            time_dim: 0,
            seed,
            step,
            state_dim: self.state_dim(),
            action_dim: self.action_dim(),
            sigma_floor: None,
            state_norm: Some(self.state_norm.clone()),
        };
        save_checkpoint(base, &meta, &self.net)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, net) = load_checkpoint::<T>(base)?;
        if meta.kind != "bc" {
            return Err(Error::Format(format!("checkpoint kind {:?} is not bc", meta.kind)));
        }
        let state_norm = meta
            .state_norm
            .clone()
            .unwrap_or_else(|| Normalizer::identity(meta.state_dim));
        if state_norm.dim() != net.input_dim() {
            return Err(Error::Format("bc normalizer does not match the network input".into()));
        }
        Ok((Self { net, state_norm }, meta))
    }
}

/// Fits a BC policy by mean squared error on the demonstrated actions.
pub fn train_bc(dataset: &Dataset, cfg: &BcConfig, seed: u64) -> Result<Trained<BcPolicy<f64>>> {
    dataset.validate()?;
    let mut policy = BcPolicy::new(dataset.state_dim(), dataset.action_dim(), &cfg.hidden, seed)?;
    if cfg.normalize_states {
        policy.state_norm = Normalizer::fit(dataset.state_dim(), dataset.pairs().map(|p| p.s.as_slice()));
    }
    let pairs: Vec<_> = dataset.pairs().collect();
    let norm = policy.state_norm.clone();
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let mut rng = stream(seed, "batch-bc");
    let history = run_epochs(
        &mut policy.net,
        pairs.len(),
        &cfg.train,
        &mut rng,
        |net, idx, _| {
            let mut inputs = Matrix::zeros(idx.len(), sd);
            for (r, &i) in idx.iter().enumerate() {
                norm.apply_into(&pairs[i].s, inputs.row_mut(r));
            }
            let mut tape = Tape::new();
            let out = net.forward_recorded(&inputs, &mut tape)?;
            let scale = 1.0 / idx.len() as f64;
            let mut grad = Matrix::zeros(idx.len(), ad);
            let mut loss = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let y = out.row(r);
                let g = grad.row_mut(r);
                for k in 0..ad {
                    let e = y[k] - pairs[i].a[k];
                    loss += e * e;
                    g[k] = 2.0 * e * scale;
                }
            }
            Ok((loss * scale, net.backward(&tape, &grad)?))
        },
        &mut |_, _| Ok(()),
    )?;
    Ok(Trained { model: policy, history })
}

/// Executor selection, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExecutorKind {
    Bc,
    FlowFixed { steps: usize },
    FlowAdaptive { eta: f64, eps_min: f64 },
    Replay,
}

pub struct BcExecutor(pub BcPolicy<f64>);

impl Executor for BcExecutor {
    fn act(&self, obs: &[f64], _rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        Ok((self.0.predict(obs)?, 1))
    }
}

/// Uniform Euler integration of the flow from fresh noise.
pub struct FlowFixedExecutor {
    pub policy: FlowPolicy<f64>,
    pub steps: usize,
}

impl Executor for FlowFixedExecutor {
    fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        let z0 = normal_vec(rng, self.policy.action_dim());
        let (a, trace) = solve_fixed(&self.policy, obs, &z0, self.steps)?;
        Ok((a, trace.nfe))
    }
}

/// Variance-adaptive integration of the flow from fresh noise.
pub struct FlowAdaptiveExecutor {
    pub policy: FlowPolicy<f64>,
    pub sigma: VarianceNet<f64>,
    pub solver: SolverConfig,
}

impl Executor for FlowAdaptiveExecutor {
    fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        let z0 = normal_vec(rng, self.policy.action_dim());
        let (a, trace) = solve_adaptive(&self.policy, &self.sigma, obs, &z0, &self.solver)?;
        Ok((a, trace.nfe))
    }
}

fn obs_key(obs: &[f64]) -> Vec<u64> {
    obs.iter().map(|v| v.to_bits()).collect()
}

/// Plays back recorded actions, looked up by the exact observation they were
/// recorded at. Deterministic dynamics make a replay from a recorded start
/// revisit exactly the recorded observations.
pub struct ReplayExecutor {
    table: HashMap<Vec<u64>, Vec<f64>>,
}

impl ReplayExecutor {
    pub fn new(demos: &Dataset) -> Self {
        let table = demos.pairs().map(|p| (obs_key(&p.s), p.a.clone())).collect();
        Self { table }
    }
}

impl Executor for ReplayExecutor {
    fn act(&self, obs: &[f64], _rng: &mut StreamRng) -> Result<(Vec<f64>, usize)> {
        self.table
            .get(&obs_key(obs))
            .map(|a| (a.clone(), 0))
            .ok_or_else(|| Error::Invalid("observation not in the replay table".into()))
    }
}

/// Checkpoint basenames and data an executor may need.
#[derive(Debug, Clone, Default)]
pub struct ExecutorSources {
    pub flow: Option<PathBuf>,
    pub variance: Option<PathBuf>,
    pub bc: Option<PathBuf>,
    pub demos: Option<PathBuf>,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Invalid(format!("executor needs a {what} checkpoint")))
}

pub fn make_executor(kind: ExecutorKind, src: &ExecutorSources) -> Result<Box<dyn Executor>> {
    Ok(match kind {
        ExecutorKind::Bc => Box::new(BcExecutor(BcPolicy::load(required(&src.bc, "bc")?)?.0)),
        ExecutorKind::FlowFixed { steps } => {
            if steps == 0 {
                return Err(Error::Invalid("flow-fixed needs at least one step".into()));
            }
            Box::new(FlowFixedExecutor {
                policy: FlowPolicy::load(required(&src.flow, "flow")?)?.0,
                steps,
            })
        }
        ExecutorKind::FlowAdaptive { eta, eps_min } => Box::new(FlowAdaptiveExecutor {
            policy: FlowPolicy::load(required(&src.flow, "flow")?)?.0,
            sigma: VarianceNet::load(required(&src.variance, "variance")?)?.0,
            solver: SolverConfig::new(eta, eps_min)?,
        }),
        ExecutorKind::Replay => {
            let path = src
                .demos
                .as_deref()
                .ok_or_else(|| Error::Invalid("replay needs a demonstration file".into()))?;
            Box::new(ReplayExecutor::new(&Dataset::read_jsonl(path)?))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pair;
    use crate::nn::AdamConfig;

    fn short(epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: batch,
            optimizer: AdamConfig::default(),
            t_max: 1.0,
        }
    }

    #[test]
    fn memorizes_a_single_pair() {
        let mut ds = Dataset::new(2, 2);
        ds.push_episode(vec![Pair {
            s: vec![0.3, -0.2],
            a: vec![1.0, -0.5],
        }])
        .unwrap();
        let cfg = BcConfig {
            hidden: vec![16, 16],
            normalize_states: false,
            train: short(500, 1),
        };
        let bc = train_bc(&ds, &cfg, 0).unwrap().model;
        let y = bc.predict(&[0.3, -0.2]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-3 && (y[1] + 0.5).abs() < 1e-3, "{y:?}");
    }

    #[test]
    fn executors_report_their_cost() {
        let bc = BcPolicy::<f64>::new(2, 1, &[4], 0).unwrap();
        let flow = FlowPolicy::new(2, 1, &NetConfig { hidden: vec![4], time_dim: 4, normalize_states: false }, 0)
            .unwrap();
        let mut rng = stream(0, "eval");
        assert_eq!(BcExecutor(bc).act(&[0.1, 0.2], &mut rng).unwrap().1, 1);
        let fixed = FlowFixedExecutor { policy: flow, steps: 5 };
        assert_eq!(fixed.act(&[0.1, 0.2], &mut rng).unwrap().1, 5);
    }

    #[test]
    fn missing_checkpoint_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = ExecutorSources {
            flow: Some(dir.path().join("nothing")),
            ..Default::default()
        };
        assert!(make_executor(ExecutorKind::FlowFixed { steps: 1 }, &src).is_err());
        assert!(make_executor(ExecutorKind::Bc, &src).is_err());
    }

    #[test]
    fn bc_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bc");
        let bc = BcPolicy::<f64>::new(3, 2, &[5], 9).unwrap();
        bc.save(&base, 9, 0).unwrap();
        let (back, meta) = BcPolicy::<f64>::load(&base).unwrap();
        assert_eq!(back, bc);
        assert_eq!(meta.kind, "bc");
    }
}
