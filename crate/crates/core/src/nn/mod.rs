//! Parameter containers, initialization, dropout and the Adam optimizer.

mod adam;

pub use adam::{adam_update, Adam, AdamConfig};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A fixed, ordered collection of parameter tensors.
///
/// `tensors` and `tensors_mut` must enumerate the same tensors in the same
/// order; gradient containers are values of the same type.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Concatenation of all tensors, in visiting order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

pub(crate) fn view1<'a>(name: &str, a: &'a Array1<f64>) -> TensorView<'a> {
    TensorView {
        name: name.to_string(),
        shape: vec![a.len()],
        data: a.as_slice().expect("parameter tensors are contiguous"),
    }
}

pub(crate) fn view2<'a>(name: &str, a: &'a Array2<f64>) -> TensorView<'a> {
    TensorView {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameter tensors are contiguous"),
    }
}

pub(crate) fn slice1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

pub(crate) fn slice2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

pub(crate) fn prefixed<'a>(prefix: &str, views: Vec<TensorView<'a>>) -> Vec<TensorView<'a>> {
    views
        .into_iter()
        .map(|mut v| {
            v.name = format!("{prefix}.{}", v.name);
            v
        })
        .collect()
}

/// Glorot-uniform matrix.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

/// Inverted dropout applied in place during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    /// Zeroes entries with probability `rate`, rescales the rest, and returns
    /// the multiplicative mask for the backward pass.
    pub(crate) fn apply(&mut self, x: &mut Array2<f64>) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if self.rng.gen::<f64>() < keep {
                scale
            } else {
                0.0
            }
        });
        *x *= &mask;
        mask
    }
}
