//! Dense row-major n-d tensors.

use crate::rng::StreamRng;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were provided")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} contains a zero dimension")]
    ZeroDim(Vec<usize>),
}

/// Dense row-major tensor. A 0-d shape is a scalar holding one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// Weight initialization schemes for [`Tensor::seeded_init`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    UniformFanIn { fan_in: usize },
    Zeros,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Identity matrix, used e.g. to pick the diagonal out of a similarity
    /// matrix inside the contrastive loss graph.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Deterministic initialization from a named RNG stream.
    pub fn seeded_init(shape: &[usize], scheme: InitScheme, rng: &mut StreamRng) -> Self {
        match scheme {
            InitScheme::Zeros => Self::zeros(shape),
            InitScheme::UniformFanIn { fan_in } => {
                assert!(fan_in > 0, "fan_in must be positive");
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..shape.iter().product())
                    .map(|_| S::from_acc(rng.uniform(-bound, bound)))
                    .collect();
                Self {
                    shape: shape.to_vec(),
                    data,
                }
            }
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> S {
        debug_assert!(self.numel() == 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lossy precision cast, e.g. to rerun an f32 model at f64 for checking.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        self.map(|v| T::from_acc(v.to_acc()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_shape_and_values() {
        let t: Tensor<f32> = Tensor::zeros(&[2, 2]);
        assert_eq!(t.shape(), &[2, 2]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6 values"));
    }

    #[test]
    fn seeded_init_deterministic() {
        let mut a = StreamRng::new(5, "init/w");
        let mut b = StreamRng::new(5, "init/w");
        let fan_in = InitScheme::UniformFanIn { fan_in: 100 };
        let ta: Tensor<f32> = Tensor::seeded_init(&[10, 10], fan_in, &mut a);
        let tb: Tensor<f32> = Tensor::seeded_init(&[10, 10], fan_in, &mut b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn fan_in_bound_holds() {
        let mut rng = StreamRng::new(5, "init/w");
        let t: Tensor<f32> =
            Tensor::seeded_init(&[40, 40], InitScheme::UniformFanIn { fan_in: 100 }, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn scalar_tensor() {
        let t = Tensor::scalar(3.5f64);
        assert!(t.is_scalar());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.scalar_value(), 3.5);
    }
}
