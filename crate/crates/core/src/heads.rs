//! Linear output heads over the encoder state.
//!
//! The supervised head produces next-item logits, the Q head produces one
//! action value per item. Both have one column per real item; the padding
//! item has no column and can never be scored.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::StateVector;
use crate::error::{Error, Result};
use crate::nn::{glorot, slice1, slice2, view1, view2, Parameters, TensorView};

/// Output activation of the Q head. Identity by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QActivation {
    #[default]
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub type SupervisedHead = LinearHead;
pub type QHead = LinearHead;

/// Classification logits over real items.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(pub Array1<f64>);

/// Action values over real items.
#[derive(Clone, Debug, PartialEq)]
pub struct QValues(pub Array1<f64>);

impl LinearHead {
    pub fn init(hidden_dim: usize, n_items: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearHead {
            weight: glorot(hidden_dim, n_items, rng),
            bias: Array1::zeros(n_items),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} columns but bias has {} entries",
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(LinearHead { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.weight.ncols()
    }

    fn check(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::Shape(format!(
                "state has {dim} entries, head expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `states · W + bias`, one row per state.
    pub fn forward(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(states.ncols())?;
        Ok(states.dot(&self.weight) + &self.bias)
    }

    /// Scores of one column per row: `out[i] = states[i] · W[:, cols[i]] + bias[cols[i]]`.
    pub fn forward_columns(&self, states: ArrayView2<f64>, cols: &[usize]) -> Result<Array1<f64>> {
        self.check(states.ncols())?;
        if states.nrows() != cols.len() {
            return Err(Error::Shape("one column index per state required".into()));
        }
        Ok(Array1::from_iter(states.outer_iter().zip(cols).map(|(s, &c)| {
            s.dot(&self.weight.column(c)) + self.bias[c]
        })))
    }

    /// Accumulates gradients for `out = states · W + bias` and returns the
    /// gradient with respect to `states`.
    pub fn backward(
        &self,
        states: ArrayView2<f64>,
        d_out: &Array2<f64>,
        grads: &mut LinearHead,
    ) -> Array2<f64> {
        general_mat_mul(1.0, &states.t(), d_out, 1.0, &mut grads.weight);
        grads.bias += &d_out.sum_axis(Axis(0));
        d_out.dot(&self.weight.t())
    }

    /// Backward pass of `forward_columns` for per-row output gradients.
    pub fn backward_columns(
        &self,
        states: ArrayView2<f64>,
        cols: &[usize],
        d_out: &[f64],
        grads: &mut LinearHead,
    ) -> Array2<f64> {
        let mut d_states = Array2::zeros(states.raw_dim());
        for (i, (&c, &g)) in cols.iter().zip(d_out).enumerate() {
            if g == 0.0 {
                continue;
            }
            let mut wcol = grads.weight.column_mut(c);
            wcol.scaled_add(g, &states.row(i));
            grads.bias[c] += g;
            d_states.row_mut(i).scaled_add(g, &self.weight.column(c));
        }
        d_states
    }
}

impl Parameters for LinearHead {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![view2("weight", &self.weight), view1("bias", &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice2(&mut self.weight), slice1(&mut self.bias)]
    }
}

fn as_row(s: &StateVector) -> ArrayView2<'_, f64> {
    s.0.view().insert_axis(Axis(0))
}

/// Next-item logits `y = s · W + bias`.
pub fn supervised_logits(head: &SupervisedHead, s: &StateVector) -> Result<Logits> {
    Ok(Logits(head.forward(as_row(s))?.row(0).to_owned()))
}

/// Action values `Q = δ(s · h + b)` with `δ` the identity.
pub fn q_values(head: &QHead, s: &StateVector) -> Result<QValues> {
    Ok(QValues(head.forward(as_row(s))?.row(0).to_owned()))
}
