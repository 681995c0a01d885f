//! Adam with decoupled weight decay, a cosine learning-rate schedule and an
//! exponential moving average of the weights.

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, MlpModel, NnError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// 0 disables averaging (the EMA then tracks the live weights exactly).
    pub ema_decay: f64,
    /// Ramp the EMA decay as `min(ema_decay, (1+k)/(10+k))` so short runs are
    /// not dominated by the initialization.
    #[serde(default)]
    pub ema_warmup: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            ema_decay: 0.0,
            ema_warmup: false,
        }
    }
}

/// Cosine decay from `lr0` at step 0 to exactly 0 at `total_steps`.
pub fn cosine_lr(lr0: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    if step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    cfg: AdamConfig,
    total_steps: u64,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    ema_weights: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &MlpModel<T>, cfg: AdamConfig, total_steps: u64) -> Self {
        let zeros: Vec<Vec<T>> = model
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            cfg,
            total_steps,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            ema_weights: model.tensors().iter().map(|t| t.to_vec()).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.cfg.lr, self.step, self.total_steps)
    }

    fn ema_decay_now(&self) -> f64 {
        if self.cfg.ema_warmup {
            let k = self.step as f64;
            self.cfg.ema_decay.min((1.0 + k) / (10.0 + k))
        } else {
            self.cfg.ema_decay
        }
    }

    /// Applies one update. A non-finite gradient leaves model and state untouched.
    pub fn update(&mut self, model: &mut MlpModel<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        let gts = grads.tensors();
        if gts.len() != self.first_moment.len()
            || gts.iter().zip(&self.first_moment).any(|(g, m)| g.len() != m.len())
        {
            return Err(NnError::Shape {
                what: "gradient tensors",
                expected: self.first_moment.iter().map(Vec::len).sum(),
                got: gts.iter().map(|g| g.len()).sum(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        let lr = T::lit(self.current_lr());
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let eps = T::lit(self.cfg.eps);
        let wd = T::lit(self.cfg.weight_decay);
        let t = (self.step + 1) as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for (((w, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(gts)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * w[i]);
            }
        }
        self.step += 1;

        let d = T::lit(self.ema_decay_now());
        for (e, w) in self.ema_weights.iter_mut().zip(model.tensors()) {
            for (ev, &wv) in e.iter_mut().zip(w) {
                *ev = d * *ev + (T::one() - d) * wv;
            }
        }
        Ok(())
    }

    /// Folds the live weights into the EMA without an optimizer step.
    pub fn track(&mut self, model: &MlpModel<T>) {
        let d = T::lit(self.cfg.ema_decay);
        for (e, w) in self.ema_weights.iter_mut().zip(model.tensors()) {
            for (ev, &wv) in e.iter_mut().zip(w) {
                *ev = d * *ev + (T::one() - d) * wv;
            }
        }
    }

    /// A copy of `model` carrying the averaged weights.
    pub fn ema_model(&self, model: &MlpModel<T>) -> MlpModel<T> {
        let mut out = model.clone();
        out.set_params(&self.ema_weights.concat())
            .expect("EMA buffers mirror the model layout");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn scalar_model(w: f64) -> MlpModel<f64> {
        let mut m = MlpModel::zeros(&[1, 1]).unwrap();
        m.layer_mut(0).0.set(0, 0, w);
        m
    }

    fn grads(model: &MlpModel<f64>, gw: f64, gb: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(model);
        g.weights[0] = Matrix::from_vec(1, 1, vec![gw]).unwrap();
        g.biases[0] = vec![gb];
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = scalar_model(0.4);
        let before = m.clone();
        let mut opt = AdamState::new(&m, AdamConfig::default(), 10);
        let g = grads(&m, 0.0, 0.0);
        opt.update(&mut m, &g).unwrap();
        assert_eq!(m, before);
        assert_eq!(opt.step(), 1);
    }

    #[test]
    fn one_step_matches_bias_corrected_adam() {
        let cfg = AdamConfig::default();
        let mut m = scalar_model(0.0);
        let mut opt = AdamState::new(&m, cfg.clone(), 100);
        let g = grads(&m, 1.0, 0.0);
        opt.update(&mut m, &g).unwrap();
        // m = (1-β1)g, v = (1-β2)g², then m̂ = m/(1-β1), v̂ = v/(1-β2)
        let m1 = (1.0 - cfg.beta1) * 1.0;
        let v1 = (1.0 - cfg.beta2) * 1.0;
        let m_hat = m1 / (1.0 - cfg.beta1);
        let v_hat = v1 / (1.0 - cfg.beta2);
        let expected = -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        let got = m.weights()[0].get(0, 0);
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-2, 0, 50), 1e-2);
        assert!((cosine_lr(1e-2, 25, 50) - 5e-3).abs() < 1e-15);
        assert!(cosine_lr(1e-2, 50, 50).abs() < 1e-12);
        let m = scalar_model(1.0);
        let mut opt = AdamState::new(&m, AdamConfig::default(), 3);
        let mut mm = m.clone();
        for _ in 0..3 {
            opt.update(&mut mm, &grads(&m, 0.1, 0.1)).unwrap();
        }
        assert!(opt.current_lr().abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut m = scalar_model(0.3);
        let before = m.clone();
        let mut opt = AdamState::new(&m, AdamConfig::default(), 10);
        let g = grads(&m, f64::NAN, 0.0);
        let err = opt.update(&mut m, &g);
        assert!(matches!(err, Err(NnError::NonFinite(_))));
        assert_eq!(m, before);
        assert_eq!(opt.step(), 0);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_weights() {
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut m = scalar_model(2.0);
        let mut opt = AdamState::new(&m, cfg, 10);
        let g = grads(&m, 0.0, 0.0);
        opt.update(&mut m, &g).unwrap();
        assert!((m.weights()[0].get(0, 0) - (2.0 - 1e-2 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically_to_constant_weights() {
        let cfg = AdamConfig {
            ema_decay: 0.9,
            ..AdamConfig::default()
        };
        let start = scalar_model(0.0);
        let mut opt = AdamState::new(&start, cfg, 100);
        let target = scalar_model(1.0);
        for k in 1..=20 {
            opt.track(&target);
            let e = opt.ema_model(&target).weights()[0].get(0, 0);
            let gap = 1.0 - e;
            assert!((gap - 0.9f64.powi(k)).abs() < 1e-12);
        }
    }
}
