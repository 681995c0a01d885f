//! One-dimensional regression with a deterministic branch and a bimodal one:
//! `y = 0` for `x ≤ 0`, and `y = ±x` with a fair sign for `x > 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regression1DTask {
    pub n_samples: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for Regression1DTask {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            x_min: -5.0,
            x_max: 5.0,
        }
    }
}

impl Regression1DTask {
    /// The two atoms of `y | x`: equal for `x ≤ 0`.
    pub fn branches(x: f64) -> (f64, f64) {
        if x <= 0.0 {
            (0.0, 0.0)
        } else {
            (-x, x)
        }
    }

    /// Each sample becomes its own one-step episode.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        if self.n_samples == 0 {
            return Err(Error::Invalid("regression task needs at least one sample".into()));
        }
        if !(self.x_min < self.x_max) {
            return Err(Error::Invalid("empty x range".into()));
        }
        let mut ds = Dataset::new(1, 1);
        for _ in 0..self.n_samples {
            let x = rng.random_range(self.x_min..self.x_max);
            let y = if x <= 0.0 {
                0.0
            } else if rng.random::<bool>() {
                x
            } else {
                -x
            };
            ds.push_episode(vec![Pair { s: vec![x], a: vec![y] }])?;
        }
        Ok(ds)
    }
}
