//! Euler integration of the policy ODE `dz = v(z, t | s) dt` on `t ∈ [0, 1]`,
//! with a uniform grid or with steps set by a conditional-variance field.

mod verify;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

pub use verify::{
    verify_global_error_scaling, verify_local_error_bound, GlobalScalingReport, LocalBoundReport,
    ScalingRow, LOCAL_BOUND_SLACK, MIN_BOUND_SAMPLES,
};

/// Below this σ the step rule jumps straight to `t = 1`.
pub const SIGMA_ZERO: f64 = 1e-12;

/// Relative tolerance used to land on the `1/N_max` grid.
const GRID_TOL: f64 = 1e-9;

pub trait VelocityField<T: Scalar> {
    fn velocity(&self, s: &[T], x: &[T], t: T) -> Result<Vec<T>>;
}

pub trait SigmaField<T: Scalar> {
    fn sigma(&self, s: &[T], x: &[T], t: T) -> Result<T>;
}

impl<T: Scalar, F: VelocityField<T> + ?Sized> VelocityField<T> for &F {
    fn velocity(&self, s: &[T], x: &[T], t: T) -> Result<Vec<T>> {
        (**self).velocity(s, x, t)
    }
}

impl<T: Scalar, F: SigmaField<T> + ?Sized> SigmaField<T> for &F {
    fn sigma(&self, s: &[T], x: &[T], t: T) -> Result<T> {
        (**self).sigma(s, x, t)
    }
}

/// A σ field that ignores its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSigma<T>(pub T);

impl<T: Scalar> SigmaField<T> for ConstantSigma<T> {
    fn sigma(&self, _s: &[T], _x: &[T], _t: T) -> Result<T> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eta: f64,
    pub eps_min: f64,
}

impl SolverConfig {
    pub fn new(eta: f64, eps_min: f64) -> Result<Self> {
        let cfg = Self { eta, eps_min };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= 1.0) {
            return Err(Error::Invalid(format!(
                "eps_min must lie in (0, 1], got {}",
                self.eps_min
            )));
        }
        Ok(())
    }

    /// `N_max = round(1 / ε_min)`.
    pub fn n_max(&self) -> usize {
        ((1.0 / self.eps_min).round() as usize).max(1)
    }

    /// Upper bound on velocity evaluations of one adaptive solve.
    pub fn max_nfe(&self) -> usize {
        (1.0 / self.eps_min).ceil() as usize + 1
    }
}

/// `clip(η/σ, [ε_min, 1 − t])`; σ near zero (or an overflowing ratio) jumps to `1 − t`.
pub fn step_size<T: Scalar>(eta: T, sigma: T, t: T, eps_min: T) -> T {
    let rem = T::one() - t;
    if !(sigma >= T::lit(SIGMA_ZERO)) {
        return rem;
    }
    let raw = eta / sigma;
    if !raw.is_finite() {
        return rem;
    }
    raw.max(eps_min).min(rem)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace<T> {
    /// `t_0 = 0 < t_1 < … < t_K`, with `t_K = 1` for a completed solve.
    pub times: Vec<T>,
    pub points: Vec<Vec<T>>,
    /// `steps[k]` is the step that produced `times[k]`; `steps[0] = 0`.
    pub steps: Vec<T>,
    pub nfe: usize,
}

impl<T: Scalar> SolveTrace<T> {
    fn start(z0: &[T]) -> Self {
        Self {
            times: vec![T::zero()],
            points: vec![z0.to_vec()],
            steps: vec![T::zero()],
            nfe: 0,
        }
    }

    fn push(&mut self, t: T, z: &[T], step: T) {
        self.times.push(t);
        self.points.push(z.to_vec());
        self.steps.push(step);
    }

    pub fn endpoint(&self) -> &[T] {
        self.points.last().expect("trace holds z0")
    }

    pub fn to_f64(&self) -> SolveTrace<f64> {
        SolveTrace {
            times: self.times.iter().map(|t| t.as_f64()).collect(),
            points: self
                .points
                .iter()
                .map(|p| p.iter().map(|v| v.as_f64()).collect())
                .collect(),
            steps: self.steps.iter().map(|t| t.as_f64()).collect(),
            nfe: self.nfe,
        }
    }
}

fn solver_error<T: Scalar>(reason: String, t: T, trace: &SolveTrace<T>) -> Error {
    Error::Solver {
        reason,
        t: t.as_f64(),
        trace: Box::new(trace.to_f64()),
    }
}

fn euler_step<T: Scalar, V: VelocityField<T> + ?Sized>(
    velocity: &V,
    s: &[T],
    z: &mut [T],
    t: T,
    eps: T,
    trace: &mut SolveTrace<T>,
) -> Result<()> {
    let v = velocity.velocity(s, z, t)?;
    trace.nfe += 1;
    if v.len() != z.len() {
        return Err(solver_error(
            format!("velocity has {} components, state has {}", v.len(), z.len()),
            t,
            trace,
        ));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(solver_error("non-finite velocity".into(), t, trace));
    }
    for (zi, vi) in z.iter_mut().zip(&v) {
        *zi += eps * *vi;
    }
    Ok(())
}

/// Variance-adaptive Euler solve from `z0` at `t = 0` to `t = 1`.
///
/// σ is evaluated before the velocity at every step. Times that land within a
/// relative `1e-9` of the `k / N_max` grid are snapped onto it, and a remainder
/// within that tolerance of `ε_min` is taken as exactly `ε_min`, so a saturated
/// σ reproduces [`solve_fixed`] with `N_max` steps bit for bit.
pub fn solve_adaptive<T, V, S>(
    velocity: &V,
    sigma: &S,
    s: &[T],
    z0: &[T],
    cfg: &SolverConfig,
) -> Result<(Vec<T>, SolveTrace<T>)>
where
    T: Scalar,
    V: VelocityField<T> + ?Sized,
    S: SigmaField<T> + ?Sized,
{
    cfg.validate()?;
    let eta = T::lit(cfg.eta);
    let eps_min = T::lit(cfg.eps_min);
    let grid = T::lit(cfg.n_max() as f64);
    let tol = T::lit(GRID_TOL);
    let max_nfe = cfg.max_nfe();

    let mut z = z0.to_vec();
    let mut t = T::zero();
    let mut trace = SolveTrace::start(z0);
    while t < T::one() {
        if trace.nfe >= max_nfe {
            return Err(solver_error("step budget exhausted".into(), t, &trace));
        }
        let sig = sigma.sigma(s, &z, t)?;
        if !(sig >= T::zero()) {
            return Err(solver_error(format!("invalid sigma {sig}"), t, &trace));
        }
        let rem = T::one() - t;
        let (eps, last) = if rem <= eps_min * (T::one() + tol) {
            if (rem - eps_min).abs() <= tol * eps_min {
                (eps_min, true)
            } else {
                (rem, true)
            }
        } else {
            let e = step_size(eta, sig, t, eps_min);
            (e, e >= rem)
        };
        euler_step(velocity, s, &mut z, t, eps, &mut trace)?;
        t = if last {
            T::one()
        } else {
            let next = t + eps;
            let snapped = (next * grid).round() / grid;
            if (next - snapped).abs() <= tol {
                snapped
            } else {
                next
            }
        };
        trace.push(t, &z, eps);
    }
    Ok((z, trace))
}

/// `n` uniform Euler steps at `t_i = i / n`.
pub fn solve_fixed<T, V>(velocity: &V, s: &[T], z0: &[T], n: usize) -> Result<(Vec<T>, SolveTrace<T>)>
where
    T: Scalar,
    V: VelocityField<T> + ?Sized,
{
    if n == 0 {
        return Err(Error::Invalid("fixed solver needs at least one step".into()));
    }
    let nf = T::lit(n as f64);
    let h = T::one() / nf;
    let mut z = z0.to_vec();
    let mut trace = SolveTrace::start(z0);
    for i in 0..n {
        let t = T::lit(i as f64) / nf;
        euler_step(velocity, s, &mut z, t, h, &mut trace)?;
        trace.push(T::lit((i + 1) as f64) / nf, &z, h);
    }
    Ok((z, trace))
}

/// Writes traces as CSV: `sample_id,k,t_k,step,nfe_so_far,z0,z1,…`.
pub fn write_trace_csv<T: Scalar, W: Write>(
    mut out: W,
    traces: &[(usize, &SolveTrace<T>)],
) -> Result<()> {
    let dim = traces.first().map_or(0, |(_, tr)| tr.points[0].len());
    write!(out, "sample_id,k,t_k,step,nfe_so_far")?;
    for d in 0..dim {
        write!(out, ",z{d}")?;
    }
    writeln!(out)?;
    for (id, tr) in traces {
        for k in 0..tr.times.len() {
            write!(out, "{id},{k},{},{},{k}", tr.times[k], tr.steps[k])?;
            for v in &tr.points[k] {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct Linear(f64);

    impl VelocityField<f64> for Linear {
        fn velocity(&self, _s: &[f64], x: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(x.iter().map(|v| self.0 * v).collect())
        }
    }

    struct Counting<'a, V> {
        inner: V,
        calls: &'a Cell<usize>,
    }

    impl<V: VelocityField<f64>> VelocityField<f64> for Counting<'_, V> {
        fn velocity(&self, s: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
            self.calls.set(self.calls.get() + 1);
            self.inner.velocity(s, x, t)
        }
    }

    #[test]
    fn step_rule_examples() {
        assert_eq!(step_size(0.1, 0.0, 0.0, 0.05), 1.0);
        assert_eq!(step_size(0.1, 1.0, 0.5, 0.05), 0.1);
        assert_eq!(step_size(0.1, 10.0, 0.0, 0.05), 0.05);
        assert_eq!(step_size(0.1, 1e-13, 0.25, 0.05), 0.75);
        assert_eq!(step_size(1e300, 1e-11, 0.25, 0.05), 0.75);
        assert_eq!(step_size(0.1, 0.01, 0.9, 0.05), 0.09999999999999998);
    }

    #[test]
    fn fixed_trace_times_are_exact() {
        let (_, tr) = solve_fixed(&Linear(1.0), &[], &[1.0], 7).unwrap();
        let expected: Vec<f64> = (0..=7).map(|i| i as f64 / 7.0).collect();
        assert_eq!(tr.times, expected);
        assert_eq!(tr.nfe, 7);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
    }

    #[test]
    fn fixed_matches_closed_form_euler() {
        let (z, _) = solve_fixed(&Linear(1.0), &[], &[1.0], 4).unwrap();
        assert!((z[0] - 1.25f64.powi(4)).abs() < 1e-15);
        assert!(solve_fixed(&Linear(1.0), &[], &[1.0], 0).is_err());
    }

    #[test]
    fn saturated_sigma_takes_n_max_uniform_steps() {
        let cfg = SolverConfig::new(0.1, 1.0 / 40.0).unwrap();
        let calls = Cell::new(0);
        let v = Counting {
            inner: Linear(-0.7),
            calls: &calls,
        };
        let (z, tr) = solve_adaptive(&v, &ConstantSigma(1e30), &[], &[0.3, -2.0], &cfg).unwrap();
        assert_eq!(tr.nfe, 40);
        assert_eq!(calls.get(), 40);
        assert_eq!(tr.times.len(), 41);
        let (zf, trf) = solve_fixed(&Linear(-0.7), &[], &[0.3, -2.0], 40).unwrap();
        assert_eq!(z, zf);
        assert_eq!(tr.times, trf.times);
    }

    #[test]
    fn zero_sigma_is_one_step() {
        let cfg = SolverConfig::new(0.01, 1.0 / 128.0).unwrap();
        let (_, tr) = solve_adaptive(&Linear(1.0), &ConstantSigma(0.0), &[], &[1.0], &cfg).unwrap();
        assert_eq!(tr.nfe, 1);
        assert_eq!(tr.times, vec![0.0, 1.0]);
    }

    #[test]
    fn constant_sigma_steps_and_lands_on_one() {
        // η/σ = 0.3 → steps 0.3, 0.3, 0.3, 0.1
        let cfg = SolverConfig::new(0.3, 0.05).unwrap();
        let (_, tr) = solve_adaptive(&Linear(0.0), &ConstantSigma(1.0), &[], &[0.0], &cfg).unwrap();
        assert_eq!(tr.nfe, 4);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        assert!((tr.steps[4] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_velocity_carries_partial_trace() {
        struct Blowup;
        impl VelocityField<f64> for Blowup {
            fn velocity(&self, _s: &[f64], _x: &[f64], t: f64) -> Result<Vec<f64>> {
                Ok(vec![if t > 0.3 { f64::NAN } else { 1.0 }])
            }
        }
        let cfg = SolverConfig::new(0.1, 0.1).unwrap();
        match solve_adaptive(&Blowup, &ConstantSigma(1.0), &[], &[0.0], &cfg) {
            Err(Error::Solver { trace, .. }) => {
                assert_eq!(trace.nfe, 5);
                assert_eq!(trace.times.len(), 5);
            }
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 0.1).is_err());
        assert!(SolverConfig::new(0.1, 0.0).is_err());
        assert!(SolverConfig::new(0.1, 1.5).is_err());
        assert_eq!(SolverConfig::new(0.1, 0.2).unwrap().n_max(), 5);
    }

    #[test]
    fn trace_csv_layout() {
        let (_, tr) = solve_fixed(&Linear(0.0), &[], &[1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[(3, &tr)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,k,t_k,step,nfe_so_far,z0,z1");
        assert_eq!(lines[1], "3,0,0,0,0,1,2");
        assert_eq!(lines[3], "3,2,1,0.5,2,1,2");
    }
}
