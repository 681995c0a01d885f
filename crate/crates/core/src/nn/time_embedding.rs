use crate::nn::NnError;
use crate::rng::{normal_vec, stream};
use crate::Scalar;

pub const DEFAULT_TIME_DIM: usize = 100;

/// `t ↦ cos(t · z_T)` for a frozen Gaussian vector `z_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding<T> {
    seed: u64,
    frequencies: Vec<T>,
}

impl<T: Scalar> TimeEmbedding<T> {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "time-embedding");
        Self {
            seed,
            frequencies: normal_vec(&mut rng, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &[T] {
        &self.frequencies
    }

    pub fn features(&self, t: T) -> Result<Vec<T>, NnError> {
        let mut out = vec![T::zero(); self.dim()];
        self.write_features(t, &mut out)?;
        Ok(out)
    }

    pub fn write_features(&self, t: T, out: &mut [T]) -> Result<(), NnError> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(NnError::Domain(format!("time {t} outside [0, 1]")));
        }
        for (o, &z) in out.iter_mut().zip(&self.frequencies) {
            *o = (t * z).cos();
        }
        Ok(())
    }
}
