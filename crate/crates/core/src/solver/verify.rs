//! Population-level checks of the solver's discretization error against the
//! closed-form oracles.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{AnalyticTarget, ScaledSigma};
use crate::rng::normal_vec;
use crate::solver::{solve_adaptive, SolverConfig};
use crate::stats::{mean, spearman, std_dev};
use crate::wasserstein::{w2_squared_1d, w2_squared_matching};

pub const MIN_BOUND_SAMPLES: usize = 256;

/// Relative Monte-Carlo slack allowed on the one-step bound.
pub const LOCAL_BOUND_SLACK: f64 = 0.05;

/// Absolute floor on the squared bound, covering round-off when σ ≡ 0.
const ROUNDOFF_FLOOR: f64 = 1e-24;

/// Batches used to estimate the Monte-Carlo spread of W2.
const W2_BATCHES: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct LocalBoundReport {
    pub t: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    /// Empirical W2² between one Euler step from `x_t` and `x_{t+ε}`.
    pub lhs: f64,
    /// `ε² · Ê[σ²(x_t, t)]`, with σ multiplied by `sigma_scale`.
    pub rhs: f64,
    pub sigma_scale: f64,
    pub passed: bool,
}

fn cloud_w2_squared(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.first().map_or(0, |p| p.len()) == 1 {
        let fa: Vec<f64> = a.iter().map(|p| p[0]).collect();
        let fb: Vec<f64> = b.iter().map(|p| p[0]).collect();
        w2_squared_1d(&fa, &fb)
    } else {
        w2_squared_matching(a, b)
    }
}

/// One Euler step with the oracle velocity against the exact interpolant.
///
/// Coupled draws `(a, x0)` give `x_t`, its Euler image
/// `z = x_t + ε·v*(x_t, t)` and the exact `x_{t+ε}`. The report compares the
/// W2² between the `z` and `x_{t+ε}` clouds with `ε²·Ê[σ²(x_t, t)]`.
/// `sigma_scale` multiplies σ to inject faults; use 1 for the honest check.
pub fn verify_local_error_bound<R: Rng + ?Sized>(
    target: &AnalyticTarget,
    t: f64,
    epsilon: f64,
    n_samples: usize,
    sigma_scale: f64,
    rng: &mut R,
) -> Result<LocalBoundReport> {
    if n_samples < MIN_BOUND_SAMPLES {
        return Err(Error::Invalid(format!(
            "local bound needs at least {MIN_BOUND_SAMPLES} samples, got {n_samples}"
        )));
    }
    if !(t >= 0.0 && epsilon > 0.0 && t + epsilon <= 1.0) {
        return Err(Error::Invalid(format!(
            "need 0 <= t and t + epsilon <= 1, got t = {t}, epsilon = {epsilon}"
        )));
    }
    let d = target.dim();
    let mut stepped = Vec::with_capacity(n_samples);
    let mut exact = Vec::with_capacity(n_samples);
    let mut sigma2 = Vec::with_capacity(n_samples);
    let t_next = t + epsilon;
    for _ in 0..n_samples {
        let a = target.sample(rng);
        let x0: Vec<f64> = normal_vec(rng, d);
        let xt: Vec<f64> = (0..d).map(|i| t * a[i] + (1.0 - t) * x0[i]).collect();
        let v = target.velocity(&xt, t)?;
        stepped.push((0..d).map(|i| xt[i] + epsilon * v[i]).collect::<Vec<f64>>());
        exact.push((0..d).map(|i| t_next * a[i] + (1.0 - t_next) * x0[i]).collect::<Vec<f64>>());
        sigma2.push(target.sigma2(&xt, t)?);
    }
    let lhs = cloud_w2_squared(&stepped, &exact)?;
    let rhs = epsilon * epsilon * sigma_scale * sigma_scale * mean(&sigma2);
    Ok(LocalBoundReport {
        t,
        epsilon,
        n_samples,
        lhs,
        rhs,
        sigma_scale,
        passed: lhs <= rhs * (1.0 + LOCAL_BOUND_SLACK) + ROUNDOFF_FLOOR,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub eta: f64,
    pub mean_nfe: f64,
    /// `N_ada / N_max` with `N_ada` the mean realized step count.
    pub ratio: f64,
    pub w2: f64,
    /// Standard error of `w2` from batch means.
    pub w2_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalScalingReport {
    pub eps_min: f64,
    pub n_max: usize,
    pub n_samples: usize,
    pub rows: Vec<ScalingRow>,
    /// Spearman correlation between `w2` and `ratio` over the sweep.
    pub spearman_w2_ratio: f64,
    /// Whether the error never drops, beyond two standard errors, as the
    /// realized `N_ada / N_max` shrinks.
    pub monotone: bool,
}

/// Runs the adaptive solver with oracle fields for every η and compares the
/// endpoint cloud with the exact transport image of the same noise draws.
pub fn verify_global_error_scaling<R: Rng + ?Sized>(
    target: &AnalyticTarget,
    etas: &[f64],
    eps_min: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<GlobalScalingReport> {
    if etas.is_empty() {
        return Err(Error::Invalid("empty eta sweep".into()));
    }
    if n_samples < W2_BATCHES * 2 {
        return Err(Error::Invalid(format!("too few samples: {n_samples}")));
    }
    let d = target.dim();
    let z0s: Vec<Vec<f64>> = (0..n_samples).map(|_| normal_vec(rng, d)).collect();
    let reference: Vec<Vec<f64>> = z0s.iter().map(|z| target.transport(z)).collect();
    let sigma = ScaledSigma { target, scale: 1.0 };
    let mut rows = Vec::with_capacity(etas.len());
    let mut n_max = 0;
    for &eta in etas {
        let cfg = SolverConfig::new(eta, eps_min)?;
        n_max = cfg.n_max();
        let mut ends = Vec::with_capacity(n_samples);
        let mut nfe = 0usize;
        for z0 in &z0s {
            let (z1, trace) = solve_adaptive(target, &sigma, &[], z0, &cfg)?;
            nfe += trace.nfe;
            ends.push(z1);
        }
        let w2 = cloud_w2_squared(&ends, &reference)?.sqrt();
        let per = n_samples / W2_BATCHES;
        let batch_w2: Vec<f64> = (0..W2_BATCHES)
            .map(|b| {
                let r = b * per..(b + 1) * per;
                cloud_w2_squared(&ends[r.clone()], &reference[r]).map(f64::sqrt)
            })
            .collect::<Result<_>>()?;
        let mean_nfe = nfe as f64 / n_samples as f64;
        rows.push(ScalingRow {
            eta,
            mean_nfe,
            ratio: mean_nfe / n_max as f64,
            w2,
            w2_se: std_dev(&batch_w2) / (W2_BATCHES as f64).sqrt(),
        });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let w2s: Vec<f64> = rows.iter().map(|r| r.w2).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].ratio.total_cmp(&rows[b].ratio));
    // walking from the fewest steps to the most, the error must not grow
    let monotone = order.windows(2).all(|w| {
        let (few, many) = (&rows[w[0]], &rows[w[1]]);
        many.w2 <= few.w2 + 2.0 * (few.w2_se.powi(2) + many.w2_se.powi(2)).sqrt()
    });
    Ok(GlobalScalingReport {
        eps_min,
        n_max,
        n_samples,
        spearman_w2_ratio: if rows.len() > 1 { spearman(&w2s, &ratios) } else { f64::NAN },
        rows,
        monotone,
    })
}
