use crate::nn::NnError;
use crate::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Stacks equally sized rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::Shape {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · otherᵀ`, with `self: m×k` and `other: n×k`.
    pub fn matmul_transposed(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.cols, "inner dimensions differ");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k as isize,
            1,
            &other.data,
            1,
            k as isize,
            T::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        out
    }

    /// `selfᵀ · other`, with `self: k×m` and `other: k×n`.
    pub fn transposed_matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.rows, other.rows, "inner dimensions differ");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = Matrix::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            1,
            m as isize,
            &other.data,
            n as isize,
            1,
            T::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        out
    }

    /// `self · other`, with `self: m×k` and `other: k×n`.
    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k as isize,
            1,
            &other.data,
            n as isize,
            1,
            T::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(f).collect()).unwrap()
    }

    fn transpose(a: &Matrix<f64>) -> Matrix<f64> {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                t.set(c, r, a.get(r, c));
            }
        }
        t
    }

    #[test]
    fn three_products_agree() {
        let a = m(3, 4, |i| (i as f64 * 0.7).cos());
        let b = m(5, 4, |i| (i as f64 * 0.3).sin());
        let abt = a.matmul_transposed(&b);
        let abt2 = a.matmul(&transpose(&b));
        assert_eq!(abt.rows(), 3);
        assert_eq!(abt.cols(), 5);
        for (x, y) in abt.data().iter().zip(abt2.data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let c = m(3, 2, |i| i as f64);
        let atc = a.transposed_matmul(&c);
        let atc2 = transpose(&a).matmul(&c);
        for (x, y) in atc.data().iter().zip(atc2.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
