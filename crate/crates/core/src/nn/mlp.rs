//! Dense feed-forward network with a recorded forward pass and reverse-mode
//! gradients.
//!
//! Weights are stored `out × in`, row-major. Hidden layers apply the activation;
//! the output layer is linear.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, NnError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x · sigmoid(x)`
    Silu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid(x),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Activations cached by [`MlpModel::forward_recorded`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    layer_inputs: Vec<Matrix<T>>,
    pre_activations: Vec<Matrix<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self {
            layer_inputs: Vec::new(),
            pre_activations: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layer_inputs.is_empty()
    }

    pub fn clear(&mut self) {
        self.layer_inputs.clear();
        self.pre_activations.clear();
    }
}

/// Parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &MlpModel<T>) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Tensors in checkpoint order: `W0, b0, W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == T::zero()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
    activation: Activation,
}

impl<T: Scalar> MlpModel<T> {
    /// Weights ~ Uniform(±√(1/fan_in)), biases zero.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        let mut model = Self::zeros(layer_dims)?;
        for w in &mut model.weights {
            let limit = (1.0 / w.cols() as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for v in w.data_mut() {
                *v = T::lit(dist.sample(rng));
            }
        }
        Ok(model)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self, NnError> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(NnError::Config(format!(
                "layer dims must have at least two positive entries, got {layer_dims:?}"
            )));
        }
        let weights = layer_dims
            .windows(2)
            .map(|d| Matrix::zeros(d[1], d[0]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![T::zero(); d]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation: Activation::Silu,
        })
    }

    #[inline]
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated at construction")
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    /// Mutable access to layer `i`'s weight matrix and bias vector.
    pub fn layer_mut(&mut self, i: usize) -> (&mut Matrix<T>, &mut Vec<T>) {
        (&mut self.weights[i], &mut self.biases[i])
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::Shape {
                what: "parameter vector",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            layer_dims: self.layer_dims.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    let data = w.data().iter().map(|v| U::lit(v.as_f64())).collect();
                    Matrix::from_vec(w.rows(), w.cols(), data).expect("same shape")
                })
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
            activation: self.activation,
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, NnError> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    /// Forward pass over a `batch × input_dim` matrix.
    pub fn forward_batch(&self, inputs: &Matrix<T>) -> Result<Matrix<T>, NnError> {
        self.run(inputs, None)
    }

    /// Forward pass that records what [`MlpModel::backward`] needs.
    pub fn forward_recorded(
        &self,
        inputs: &Matrix<T>,
        tape: &mut Tape<T>,
    ) -> Result<Matrix<T>, NnError> {
        tape.clear();
        self.run(inputs, Some(tape))
    }

    fn run(&self, inputs: &Matrix<T>, mut tape: Option<&mut Tape<T>>) -> Result<Matrix<T>, NnError> {
        if inputs.cols() != self.input_dim() {
            return Err(NnError::Shape {
                what: "network input",
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        if !inputs.is_finite() {
            return Err(NnError::NonFinite("network input"));
        }
        let last = self.num_layers() - 1;
        let mut a = inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.matmul_transposed(w);
            for r in 0..z.rows() {
                for (v, &bias) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                }
            }
            let next = if l < last {
                let mut h = z.clone();
                for v in h.data_mut() {
                    *v = self.activation.apply(*v);
                }
                h
            } else {
                z.clone()
            };
            if let Some(t) = tape.as_deref_mut() {
                t.layer_inputs.push(a);
                t.pre_activations.push(z);
            }
            a = next;
        }
        if !a.is_finite() {
            return Err(NnError::NonFinite("network output"));
        }
        Ok(a)
    }

    /// Parameter gradients of `Σ output_grad ⊙ output` for the recorded batch.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &Matrix<T>) -> Result<Gradients<T>, NnError> {
        if tape.is_empty() {
            return Err(NnError::MissingCache);
        }
        if tape.layer_inputs.len() != self.num_layers() {
            return Err(NnError::Shape {
                what: "recorded layers",
                expected: self.num_layers(),
                got: tape.layer_inputs.len(),
            });
        }
        let batch = tape.layer_inputs[0].rows();
        if output_grad.rows() != batch || output_grad.cols() != self.output_dim() {
            return Err(NnError::Shape {
                what: "output gradient",
                expected: batch * self.output_dim(),
                got: output_grad.rows() * output_grad.cols(),
            });
        }
        let last = self.num_layers() - 1;
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.clone();
        for l in (0..self.num_layers()).rev() {
            if l < last {
                let z = &tape.pre_activations[l];
                for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                    *d *= self.activation.derivative(zv);
                }
            }
            grads.weights[l] = delta.transposed_matmul(&tape.layer_inputs[l]);
            let gb = &mut grads.biases[l];
            for r in 0..delta.rows() {
                for (g, &d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            if l > 0 {
                delta = delta.matmul(&self.weights[l]);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn model(dims: &[usize], seed: u64) -> MlpModel<f64> {
        MlpModel::new(dims, &mut stream(seed, "init")).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = MlpModel::<f64>::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut m = MlpModel::<f64>::zeros(&[2, 2]).unwrap();
        *m.layer_mut(0).0 = Matrix::identity(2);
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        let m = model(&[3, 4, 2], 11);
        let x = [0.3, -1.2, 0.8];
        let mut h = [0.0; 4];
        for (o, ho) in h.iter_mut().enumerate() {
            let mut z = m.biases()[0][o];
            for (i, xi) in x.iter().enumerate() {
                z += m.weights()[0].get(o, i) * xi;
            }
            *ho = z / (1.0 + (-z).exp());
        }
        let got = m.forward(&x).unwrap();
        for (o, g) in got.iter().enumerate() {
            let mut y = m.biases()[1][o];
            for (i, hi) in h.iter().enumerate() {
                y += m.weights()[1].get(o, i) * hi;
            }
            assert!((y - g).abs() < 1e-14, "{y} vs {g}");
        }
    }

    #[test]
    fn rejects_wrong_input_len() {
        let m = model(&[3, 4, 2], 0);
        assert!(matches!(m.forward(&[1.0]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let m = model(&[2, 3, 1], 0);
        let g = Matrix::zeros(1, 1);
        assert!(matches!(m.backward(&Tape::new(), &g), Err(NnError::MissingCache)));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let m = model(&[2, 8, 2], 3);
        let x = Matrix::from_vec(2, 2, vec![0.1, 0.2, -0.5, 1.0]).unwrap();
        let mut tape = Tape::new();
        m.forward_recorded(&x, &mut tape).unwrap();
        let g = m.backward(&tape, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let m = model(&[3, 2], 5);
        let x = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let gy = Matrix::from_vec(1, 2, vec![0.7, -1.1]).unwrap();
        let mut tape = Tape::new();
        m.forward_recorded(&x, &mut tape).unwrap();
        let g = m.backward(&tape, &gy).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.weights[0].get(o, i), gy.get(0, o) * x.get(0, i));
            }
            assert_eq!(g.biases[0][o], gy.get(0, o));
        }
    }

    #[test]
    fn params_roundtrip_in_layer_order() {
        let m = model(&[2, 3, 1], 9);
        let p = m.params();
        assert_eq!(p.len(), m.num_params());
        assert_eq!(&p[..6], m.weights()[0].data());
        assert_eq!(&p[6..9], m.biases()[0].as_slice());
        let mut z = MlpModel::<f64>::zeros(&[2, 3, 1]).unwrap();
        z.set_params(&p).unwrap();
        assert_eq!(z, m);
    }

    #[test]
    fn f32_model_runs() {
        let m: MlpModel<f32> = model(&[2, 4, 1], 1).cast();
        let y = m.forward(&[0.5, 0.5]).unwrap();
        assert!(y[0].is_finite());
    }
}
