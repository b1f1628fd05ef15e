//! Gated recurrent unit over item embeddings.
//!
//! Gate layout along the `3 * hidden` axis is `[reset | update | candidate]`:
//!
//! ```text
//! r  = σ(x W_r + b_ir + h U_r + b_hr)
//! z  = σ(x W_z + b_iz + h U_z + b_hz)
//! n  = tanh(x W_n + b_in + r ⊙ (h U_n + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, SeqRef};
use crate::nn::{glorot, slice1, slice2, view1, view2, Dropout, Parameters, TensorView};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruEncoder {
    pub embedding: Array2<f64>,
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_hidden: Array1<f64>,
}

struct StepCache {
    active: usize,
    items: Vec<usize>,
    x: Array2<f64>,
    mask: Option<Array2<f64>>,
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hn: Array2<f64>,
}

pub struct GruCache {
    order: Vec<usize>,
    steps: Vec<StepCache>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl GruEncoder {
    pub(crate) fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let mut embedding = glorot(config.n_items + 1, e, rng);
        embedding.row_mut(config.n_items).fill(0.0);
        GruEncoder {
            embedding,
            w_input: glorot(e, 3 * h, rng),
            w_hidden: glorot(h, 3 * h, rng),
            b_input: Array1::zeros(3 * h),
            b_hidden: Array1::zeros(3 * h),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.nrows()
    }

    /// Rows are processed longest-first so that the sequences active at each
    /// aligned time step form a prefix of the sorted batch.
    pub(crate) fn forward(
        &self,
        batch: &[SeqRef],
        mut dropout: Option<Dropout<'_>>,
        keep_cache: bool,
    ) -> (Array2<f64>, Option<GruCache>) {
        let hd = self.hidden_dim();
        let b = batch.len();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| batch[j].len.cmp(&batch[i].len));
        let max_len = batch[order[0]].len;

        let mut h = Array2::<f64>::zeros((b, hd));
        let mut steps = Vec::new();
        for k in 0..max_len {
            let remaining = max_len - k;
            let active = order.iter().take_while(|&&r| batch[r].len >= remaining).count();
            let items: Vec<usize> = order[..active]
                .iter()
                .map(|&r| batch[r].items[batch[r].items.len() - remaining])
                .collect();
            let mut x = self.embedding.select(Axis(0), &items);
            let mask = dropout.as_mut().map(|d| d.apply(&mut x));
            let h_prev = h.slice(s![..active, ..]).to_owned();

            let gi = x.dot(&self.w_input) + &self.b_input;
            let gh = h_prev.dot(&self.w_hidden) + &self.b_hidden;
            let mut r = Array2::zeros((active, hd));
            let mut z = Array2::zeros((active, hd));
            let mut n = Array2::zeros((active, hd));
            let mut hn = Array2::zeros((active, hd));
            {
                let mut h_new = h.slice_mut(s![..active, ..]);
                for i in 0..active {
                    for j in 0..hd {
                        let rv = sigmoid(gi[[i, j]] + gh[[i, j]]);
                        let zv = sigmoid(gi[[i, hd + j]] + gh[[i, hd + j]]);
                        let hnv = gh[[i, 2 * hd + j]];
                        let nv = (gi[[i, 2 * hd + j]] + rv * hnv).tanh();
                        h_new[[i, j]] = (1.0 - zv) * nv + zv * h_prev[[i, j]];
                        r[[i, j]] = rv;
                        z[[i, j]] = zv;
                        n[[i, j]] = nv;
                        hn[[i, j]] = hnv;
                    }
                }
            }
            if keep_cache {
                steps.push(StepCache {
                    active,
                    items,
                    x,
                    mask,
                    h_prev,
                    r,
                    z,
                    n,
                    hn,
                });
            }
        }

        let mut out = Array2::zeros((b, hd));
        for (sorted, &row) in order.iter().enumerate() {
            out.row_mut(row).assign(&h.row(sorted));
        }
        let cache = keep_cache.then_some(GruCache { order, steps });
        (out, cache)
    }

    pub(crate) fn backward(&self, cache: &GruCache, d_out: &Array2<f64>, grads: &mut GruEncoder) {
        let hd = self.hidden_dim();
        let mut dh = Array2::<f64>::zeros((cache.order.len(), hd));
        for (sorted, &row) in cache.order.iter().enumerate() {
            dh.row_mut(sorted).assign(&d_out.row(row));
        }

        for st in cache.steps.iter().rev() {
            let m = st.active;
            let mut dgi = Array2::<f64>::zeros((m, 3 * hd));
            let mut dgh = Array2::<f64>::zeros((m, 3 * hd));
            let mut dh_prev = Array2::<f64>::zeros((m, hd));
            for i in 0..m {
                for j in 0..hd {
                    let g = dh[[i, j]];
                    let (r, z, n) = (st.r[[i, j]], st.z[[i, j]], st.n[[i, j]]);
                    let dn = g * (1.0 - z);
                    let dz = g * (st.h_prev[[i, j]] - n);
                    dh_prev[[i, j]] = g * z;
                    let dan = dn * (1.0 - n * n);
                    let dar = dan * st.hn[[i, j]] * r * (1.0 - r);
                    let daz = dz * z * (1.0 - z);
                    dgi[[i, j]] = dar;
                    dgi[[i, hd + j]] = daz;
                    dgi[[i, 2 * hd + j]] = dan;
                    dgh[[i, j]] = dar;
                    dgh[[i, hd + j]] = daz;
                    dgh[[i, 2 * hd + j]] = dan * r;
                }
            }
            general_mat_mul(1.0, &st.x.t(), &dgi, 1.0, &mut grads.w_input);
            grads.b_input += &dgi.sum_axis(Axis(0));
            general_mat_mul(1.0, &st.h_prev.t(), &dgh, 1.0, &mut grads.w_hidden);
            grads.b_hidden += &dgh.sum_axis(Axis(0));

            let mut dx = dgi.dot(&self.w_input.t());
            if let Some(mask) = &st.mask {
                dx *= mask;
            }
            for (i, &item) in st.items.iter().enumerate() {
                let mut row = grads.embedding.row_mut(item);
                row += &dx.row(i);
            }

            general_mat_mul(1.0, &dgh, &self.w_hidden.t(), 1.0, &mut dh_prev);
            dh.slice_mut(s![..m, ..]).assign(&dh_prev);
        }
    }
}

impl Parameters for GruEncoder {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            view2("embedding", &self.embedding),
            view2("w_input", &self.w_input),
            view2("w_hidden", &self.w_hidden),
            view1("b_input", &self.b_input),
            view1("b_hidden", &self.b_hidden),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2(&mut self.embedding),
            slice2(&mut self.w_input),
            slice2(&mut self.w_hidden),
            slice1(&mut self.b_input),
            slice1(&mut self.b_hidden),
        ]
    }
}
