use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Per-dimension affine map `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean/std standardization fitted on `rows`; flat dimensions keep scale 1.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for i in 0..dim {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let sd = (q / nf - m * m).max(0.0).sqrt();
                if sd > 1e-6 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply_into<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        for i in 0..x.len() {
            out[i] = (x[i] - T::lit(self.shift[i])) / T::lit(self.scale[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_standardizes() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(2, rows.iter().map(|r| r.as_slice()));
        let mut out = [0.0; 2];
        n.apply_into(&[3.0, 5.0], &mut out);
        assert_eq!(out, [1.0, 0.0]);
    }
}
