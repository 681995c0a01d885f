//! Closed-form optimal velocity and conditional variance of the straight
//! interpolation `x_t = t·a + (1 − t)·x0`, `x0 ~ N(0, I)`, for targets where
//! the posterior over `a` given `x_t` is tractable.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::solver::{SigmaField, VelocityField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticTarget {
    Dirac {
        a: Vec<f64>,
    },
    TwoPoint1D {
        a_minus: f64,
        a_plus: f64,
        w_minus: f64,
        w_plus: f64,
    },
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Domain(format!("oracle time {t} outside [0, 1)")));
    }
    Ok(())
}

impl AnalyticTarget {
    pub fn dirac(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Dirac target must be a finite nonempty vector".into()));
        }
        Ok(Self::Dirac { a })
    }

    pub fn two_point(a_minus: f64, a_plus: f64, w_minus: f64) -> Result<Self> {
        let target = Self::TwoPoint1D {
            a_minus,
            a_plus,
            w_minus,
            w_plus: 1.0 - w_minus,
        };
        target.validate()?;
        Ok(target)
    }

    /// The symmetric mixture `½δ(−1) + ½δ(+1)`.
    pub fn symmetric_pair() -> Self {
        Self::TwoPoint1D {
            a_minus: -1.0,
            a_plus: 1.0,
            w_minus: 0.5,
            w_plus: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Dirac { a } => {
                if a.is_empty() || a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("Dirac target must be finite and nonempty".into()));
                }
            }
            Self::TwoPoint1D {
                a_minus,
                a_plus,
                w_minus,
                w_plus,
            } => {
                if !(a_minus.is_finite() && a_plus.is_finite()) {
                    return Err(Error::Invalid("mixture atoms must be finite".into()));
                }
                if !(*w_minus > 0.0 && *w_plus > 0.0 && (w_minus + w_plus - 1.0).abs() < 1e-12) {
                    return Err(Error::Invalid(format!(
                        "mixture weights must be positive and sum to 1, got {w_minus} and {w_plus}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dirac { a } => a.len(),
            Self::TwoPoint1D { .. } => 1,
        }
    }

    fn check_point(&self, x: &[f64], t: f64) -> Result<()> {
        check_time(t)?;
        if x.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "oracle point has {} components, target has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Posterior weights `(P(a_minus | x_t = x), P(a_plus | x_t = x))`.
    pub fn posterior(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        match self {
            Self::Dirac { .. } => Err(Error::Invalid("posterior is defined for the mixture".into())),
            Self::TwoPoint1D {
                a_minus,
                a_plus,
                w_minus,
                w_plus,
            } => {
                let s2 = (1.0 - t) * (1.0 - t);
                let lm = w_minus.ln() - (x - t * a_minus).powi(2) / (2.0 * s2);
                let lp = w_plus.ln() - (x - t * a_plus).powi(2) / (2.0 * s2);
                let m = lm.max(lp);
                let em = (lm - m).exp();
                let ep = (lp - m).exp();
                Ok((em / (em + ep), ep / (em + ep)))
            }
        }
    }

    /// `v*(x, t) = (E[a | x_t = x] − x) / (1 − t)`.
    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(x, t)?;
        match self {
            Self::Dirac { a } => Ok(a.iter().zip(x).map(|(a, x)| (a - x) / (1.0 - t)).collect()),
            Self::TwoPoint1D { a_minus, a_plus, .. } => {
                let (pm, pp) = self.posterior(x[0], t)?;
                let mean = pm * a_minus + pp * a_plus;
                Ok(vec![(mean - x[0]) / (1.0 - t)])
            }
        }
    }

    /// `σ²(x, t) = Var(a | x_t = x) / (1 − t)²`.
    pub fn sigma2(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_point(x, t)?;
        match self {
            Self::Dirac { .. } => Ok(0.0),
            Self::TwoPoint1D { a_minus, a_plus, .. } => {
                let (pm, pp) = self.posterior(x[0], t)?;
                let gap = a_plus - a_minus;
                Ok(pm * pp * gap * gap / ((1.0 - t) * (1.0 - t)))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Dirac { a } => a.clone(),
            Self::TwoPoint1D {
                a_minus,
                a_plus,
                w_minus,
                ..
            } => {
                let u: f64 = rng.random();
                vec![if u < *w_minus { *a_minus } else { *a_plus }]
            }
        }
    }

    /// Image of the noise `z0` under the exact monotone transport from
    /// `N(0, 1)` onto the target, which is the flow map of `v*` in 1D.
    pub fn transport(&self, z0: &[f64]) -> Vec<f64> {
        match self {
            Self::Dirac { a } => a.clone(),
            Self::TwoPoint1D {
                a_minus,
                a_plus,
                w_minus,
                ..
            } => {
                let normal = Normal::standard();
                vec![if normal.cdf(z0[0]) < *w_minus {
                    *a_minus
                } else {
                    *a_plus
                }]
            }
        }
    }
}

impl VelocityField<f64> for AnalyticTarget {
    fn velocity(&self, _s: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
        AnalyticTarget::velocity(self, x, t)
    }
}

impl SigmaField<f64> for AnalyticTarget {
    fn sigma(&self, _s: &[f64], x: &[f64], t: f64) -> Result<f64> {
        Ok(self.sigma2(x, t)?.sqrt())
    }
}

/// An oracle σ multiplied by a constant, for fault injection.
#[derive(Debug, Clone)]
pub struct ScaledSigma<'a> {
    pub target: &'a AnalyticTarget,
    pub scale: f64,
}

impl SigmaField<f64> for ScaledSigma<'_> {
    fn sigma(&self, _s: &[f64], x: &[f64], t: f64) -> Result<f64> {
        Ok(self.scale * self.target.sigma2(x, t)?.sqrt())
    }
}
