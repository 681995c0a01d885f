//! Conditional-variance network `σ_φ(x, t | s)`, fitted to the residuals of a
//! frozen velocity network by a Gaussian negative log-likelihood.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{fit_pairs_from, Conditioner, FitPair, FlowPolicy, NetConfig, TrainSample, Trained};
use crate::nn::{
    load_checkpoint, save_checkpoint, sigmoid, Activation, CheckpointMeta, Gradients, Matrix,
    MlpModel, Normalizer, Tape, TimeEmbedding,
};
use crate::rng::stream;
use crate::solver::SigmaField;
use crate::train::{run_epochs, EpochObserver, TrainConfig};
use crate::Scalar;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

fn sigma_from_raw<T: Scalar>(r: T, floor: f64) -> T {
    softplus(r) + T::lit(floor)
}

/// `ln(1 + e^r)` without overflow.
pub fn softplus<T: Scalar>(r: T) -> T {
    r.max(T::zero()) + (-r.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceNet<T> {
    net: MlpModel<T>,
    cond: Conditioner<T>,
    sigma_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_SIGMA_FLOOR
}

impl<T: Scalar> VarianceNet<T> {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        cfg: &NetConfig,
        sigma_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma_floor > 0.0) {
            return Err(Error::Invalid(format!("sigma_floor must be positive, got {sigma_floor}")));
        }
        let cond = Conditioner::new(state_dim, action_dim, TimeEmbedding::new(cfg.time_dim, seed));
        let dims = cfg.layer_dims(cond.input_dim(), 1);
        let net = MlpModel::new(&dims, &mut stream(seed, "init-variance"))?;
        Ok(Self {
            net,
            cond,
            sigma_floor,
        })
    }

    pub fn net(&self) -> &MlpModel<T> {
        &self.net
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn conditioner(&self) -> &Conditioner<T> {
        &self.cond
    }

    pub fn set_state_norm(&mut self, norm: Normalizer) -> Result<()> {
        if norm.dim() != self.cond.state_dim {
            return Err(Error::Invalid("normalizer dimension differs from state_dim".into()));
        }
        self.cond.state_norm = norm;
        Ok(())
    }

    pub fn from_parts(net: MlpModel<T>, cond: Conditioner<T>, sigma_floor: f64) -> Result<Self> {
        if !(sigma_floor > 0.0) {
            return Err(Error::Invalid(format!("sigma_floor must be positive, got {sigma_floor}")));
        }
        if net.input_dim() != cond.input_dim() || net.output_dim() != 1 {
            return Err(Error::Invalid(format!("variance net dims {:?} are inconsistent", net.layer_dims())));
        }
        Ok(Self {
            net,
            cond,
            sigma_floor,
        })
    }

    /// `softplus(r) + σ_floor`, strictly positive.
    pub fn predict_sigma(&self, s: &[T], x: &[T], t: T) -> Result<T> {
        let mut row = vec![T::zero(); self.cond.input_dim()];
        self.cond.write_row(s, x, t, &mut row)?;
        let r = self.net.forward(&row)?[0];
        Ok(sigma_from_raw(r, self.sigma_floor))
    }

    pub fn save(&self, base: &Path, seed: u64, step: u64) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "variance".into(),
            layer_dims: self.net.layer_dims().to_vec(),
            activation: Activation::Silu,
            time_dim: self.cond.time_emb.dim(),
            seed,
            step,
            state_dim: self.cond.state_dim,
            action_dim: self.cond.action_dim,
            sigma_floor: Some(self.sigma_floor),
            state_norm: Some(self.cond.state_norm.clone()),
        };
        save_checkpoint(base, &meta, &self.net)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, net) = load_checkpoint::<T>(base)?;
        if meta.kind != "variance" {
            return Err(Error::Format(format!("checkpoint kind {:?} is not variance", meta.kind)));
        }
        let mut cond = Conditioner::new(
            meta.state_dim,
            meta.action_dim,
            TimeEmbedding::new(meta.time_dim, meta.seed),
        );
        if let Some(n) = &meta.state_norm {
            cond.state_norm = n.clone();
        }
        if net.input_dim() != cond.input_dim() || net.output_dim() != 1 {
            return Err(Error::Format(format!("variance net dims {:?} are inconsistent", net.layer_dims())));
        }
        let sigma_floor = meta.sigma_floor.unwrap_or(DEFAULT_SIGMA_FLOOR);
        Ok((
            Self {
                net,
                cond,
                sigma_floor,
            },
            meta,
        ))
    }
}

impl<T: Scalar> SigmaField<T> for VarianceNet<T> {
    fn sigma(&self, s: &[T], x: &[T], t: T) -> Result<T> {
        self.predict_sigma(s, x, t)
    }
}

/// Squared residual norms `‖a − x0 − v(x_t, t | s)‖²` of the frozen policy.
pub fn residual_norms<T: Scalar>(policy: &FlowPolicy<T>, batch: &[TrainSample<T>]) -> Result<Vec<T>> {
    let inputs = policy.conditioner().matrix(
        batch.iter().map(|b| (b.s.as_slice(), b.x_t.as_slice(), b.t)),
        batch.len(),
    )?;
    let out = policy.net().forward_batch(&inputs)?;
    let norms: Vec<T> = batch
        .iter()
        .enumerate()
        .map(|(i, b)| {
            out.row(i)
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let r = b.a[k] - b.x0[k] - v;
                    r * r
                })
                .sum()
        })
        .collect();
    if norms.iter().any(|r| !r.is_finite()) {
        return Err(Error::Invalid("non-finite residual from the frozen policy".into()));
    }
    Ok(norms)
}

/// Mean of `r²/(2σ²) + ln σ` given precomputed squared residuals `r²`.
pub fn variance_loss_from_residuals<T: Scalar>(
    vnet: &VarianceNet<T>,
    batch: &[TrainSample<T>],
    residuals: &[T],
) -> Result<(T, Gradients<T>)> {
    nll_parts(&vnet.net, &vnet.cond, vnet.sigma_floor, batch, residuals)
}

fn nll_parts<T: Scalar>(
    net: &MlpModel<T>,
    cond: &Conditioner<T>,
    floor: f64,
    batch: &[TrainSample<T>],
    residuals: &[T],
) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() || batch.len() != residuals.len() {
        return Err(Error::Invalid("variance batch and residuals must be nonempty and aligned".into()));
    }
    let inputs = cond.matrix(
        batch.iter().map(|b| (b.s.as_slice(), b.x_t.as_slice(), b.t)),
        batch.len(),
    )?;
    let mut tape = Tape::new();
    let out = net.forward_recorded(&inputs, &mut tape)?;
    let inv_b = T::one() / T::lit(batch.len() as f64);
    let half = T::lit(0.5);
    let mut grad_out = Matrix::zeros(batch.len(), 1);
    let mut loss = T::zero();
    for (i, &r2) in residuals.iter().enumerate() {
        let raw = out.get(i, 0);
        let sigma = sigma_from_raw(raw, floor);
        loss += half * r2 / (sigma * sigma) + sigma.ln();
        let dl_dsigma = T::one() / sigma - r2 / (sigma * sigma * sigma);
        grad_out.set(i, 0, dl_dsigma * sigmoid(raw) * inv_b);
    }
    let grads = net.backward(&tape, &grad_out)?;
    Ok((loss * inv_b, grads))
}

/// The Gaussian NLL of the frozen policy's residuals; gradients reach `φ` only.
pub fn variance_loss<T: Scalar>(
    vnet: &VarianceNet<T>,
    frozen: &FlowPolicy<T>,
    batch: &[TrainSample<T>],
) -> Result<(T, Gradients<T>)> {
    let residuals = residual_norms(frozen, batch)?;
    variance_loss_from_residuals(vnet, batch, &residuals)
}

pub fn fit_variance<T: Scalar>(
    vnet: &mut VarianceNet<T>,
    frozen: &FlowPolicy<T>,
    pairs: &[FitPair<T>],
    cfg: &TrainConfig,
    rng: &mut crate::rng::StreamRng,
    observer: &mut EpochObserver<'_, T>,
) -> Result<Vec<crate::train::EpochRecord>> {
    let cond = vnet.cond.clone();
    let floor = vnet.sigma_floor;
    let t_max = cfg.t_max;
    run_epochs(
        &mut vnet.net,
        pairs.len(),
        cfg,
        rng,
        |net, idx, rng| {
            let batch: Vec<TrainSample<T>> = idx
                .iter()
                .map(|&i| pairs[i].draw(t_max, rng))
                .collect();
            let residuals = residual_norms(frozen, &batch)?;
            nll_parts(net, &cond, floor, &batch, &residuals)
        },
        observer,
    )
}

/// Stage-2 training against a frozen stage-1 policy.
pub fn train_variance(
    frozen: &FlowPolicy<f64>,
    dataset: &Dataset,
    cfg: &VarianceConfig,
    seed: u64,
) -> Result<Trained<VarianceNet<f64>>> {
    dataset.validate()?;
    if dataset.state_dim() != frozen.state_dim() || dataset.action_dim() != frozen.action_dim() {
        return Err(Error::Invalid("dataset dims differ from the frozen policy".into()));
    }
    let mut vnet = VarianceNet::new(
        dataset.state_dim(),
        dataset.action_dim(),
        &cfg.net,
        cfg.sigma_floor,
        seed,
    )?;
    vnet.set_state_norm(frozen.state_norm().clone())?;
    let pairs = fit_pairs_from(dataset);
    let mut rng = stream(seed, "batch-variance");
    let history = fit_variance(&mut vnet, frozen, &pairs, &cfg.train, &mut rng, &mut |_, _| Ok(()))?;
    Ok(Trained {
        model: vnet,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;

    fn setup() -> (VarianceNet<f64>, FlowPolicy<f64>, Vec<TrainSample<f64>>) {
        let cfg = NetConfig {
            hidden: vec![6, 5],
            time_dim: 3,
            normalize_states: false,
        };
        let vnet = VarianceNet::new(1, 2, &cfg, 1e-3, 4).unwrap();
        let policy = FlowPolicy::new(1, 2, &cfg, 5).unwrap();
        let mut rng = stream(6, "samples");
        let batch = (0..7)
            .map(|i| {
                let s = vec![i as f64 * 0.3 - 1.0];
                let a = normal_vec(&mut rng, 2);
                crate::flow::make_train_sample(&s, &a, 1.0, &mut rng)
            })
            .collect();
        (vnet, policy, batch)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (vnet, policy, batch) = setup();
        let (_, grads) = variance_loss(&vnet, &policy, &batch).unwrap();
        let analytic = grads.to_vec();
        let params = vnet.net.params();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = vnet.clone();
            let mut p = params.clone();
            p[i] += h;
            plus.net.set_params(&p).unwrap();
            let mut minus = vnet.clone();
            p[i] -= 2.0 * h;
            minus.net.set_params(&p).unwrap();
            let lp = variance_loss(&plus, &policy, &batch).unwrap().0;
            let lm = variance_loss(&minus, &policy, &batch).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!((fd - analytic[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }
}
