//! Single pre-norm Transformer block with learned positional embeddings
//! and causal masking.
//!
//! Positions are counted from the first real item, so a sequence gets the
//! same representation wherever it sits in the padded window.
//!
//! ```text
//! x0 = E[item] + P[pos]
//! h1 = x0 + Attn(LN1(x0)) W_o
//! h2 = h1 + ReLU(LN2(h1) W_1 + b_1) W_2 + b_2
//! y  = LN3(h2)
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, SeqRef};
use crate::nn::{glorot, slice1, slice2, view1, view2, Dropout, Parameters, TensorView};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEncoder {
    pub heads: usize,
    pub embedding: Array2<f64>,
    pub positions: Array2<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_out: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
    pub ln_out_gain: Array1<f64>,
    pub ln_out_bias: Array1<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = rs;
        for j in 0..d {
            xhat[[i, j]] = (row[j] - mean) * rs;
        }
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let (t, d) = dy.dim();
    let mut dx = Array2::zeros((t, d));
    for i in 0..t {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d as f64;
        let mean_gx = g.dot(&xh) / d as f64;
        for j in 0..d {
            dx[[i, j]] = cache.rstd[i] * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

pub struct AttentionCache {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    tokens: Vec<usize>,
    token_pos: Vec<usize>,
    mask: Option<Array2<f64>>,
    ln1: LnCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per (row, head), each `len x len`.
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    a2: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ln3: LnCache,
}

impl AttentionEncoder {
    pub(crate) fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.hidden_dim;
        let mut embedding = glorot(config.n_items + 1, d, rng);
        embedding.row_mut(config.n_items).fill(0.0);
        AttentionEncoder {
            heads: config.attention_heads,
            embedding,
            positions: glorot(config.max_len, d, rng),
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            w_query: glorot(d, d, rng),
            w_key: glorot(d, d, rng),
            w_value: glorot(d, d, rng),
            w_out: glorot(d, d, rng),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
            w_ff1: glorot(d, d, rng),
            b_ff1: Array1::zeros(d),
            w_ff2: glorot(d, d, rng),
            b_ff2: Array1::zeros(d),
            ln_out_gain: Array1::ones(d),
            ln_out_bias: Array1::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn max_len(&self) -> usize {
        self.positions.nrows()
    }

    /// Representations at every real position of one sequence, oldest first.
    pub fn encode_positions(&self, seq: SeqRef) -> Array2<f64> {
        self.forward_tokens(&[seq], None).0
    }

    pub(crate) fn forward(
        &self,
        batch: &[SeqRef],
        dropout: Option<Dropout<'_>>,
        keep_cache: bool,
    ) -> (Array2<f64>, Option<AttentionCache>) {
        let (y, cache) = self.forward_tokens(batch, dropout);
        let mut out = Array2::zeros((batch.len(), self.dim()));
        for (b, (&off, &len)) in cache.offsets.iter().zip(&cache.lens).enumerate() {
            out.row_mut(b).assign(&y.row(off + len - 1));
        }
        (out, keep_cache.then_some(cache))
    }

    fn forward_tokens(&self, batch: &[SeqRef], mut dropout: Option<Dropout<'_>>) -> (Array2<f64>, AttentionCache) {
        let d = self.dim();
        let mut offsets = Vec::with_capacity(batch.len());
        let mut lens = Vec::with_capacity(batch.len());
        let mut tokens = Vec::new();
        let mut token_pos = Vec::new();
        for s in batch {
            offsets.push(tokens.len());
            lens.push(s.len);
            for (p, &item) in s.real().iter().enumerate() {
                tokens.push(item);
                token_pos.push(p.min(self.max_len() - 1));
            }
        }
        let t = tokens.len();

        let mut x0 = self.embedding.select(Axis(0), &tokens) + &self.positions.select(Axis(0), &token_pos);
        let mask = dropout.as_mut().map(|dr| dr.apply(&mut x0));

        let (a1, ln1) = layer_norm(&x0, &self.ln1_gain, &self.ln1_bias);
        let q = a1.dot(&self.w_query);
        let k = a1.dot(&self.w_key);
        let v = a1.dot(&self.w_value);

        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut o = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(batch.len() * self.heads);
        for (&off, &len) in offsets.iter().zip(&lens) {
            for h in 0..self.heads {
                let cols = s![off..off + len, h * hd..(h + 1) * hd];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let vh = v.slice(cols);
                let mut p = qh.dot(&kh.t()) * scale;
                for i in 0..len {
                    let max = (0..=i).map(|j| p[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..len {
                        let e = if j <= i { (p[[i, j]] - max).exp() } else { 0.0 };
                        p[[i, j]] = e;
                        sum += e;
                    }
                    p.row_mut(i).mapv_inplace(|e| e / sum);
                }
                o.slice_mut(cols).assign(&p.dot(&vh));
                probs.push(p);
            }
        }

        let h1 = &x0 + &o.dot(&self.w_out);
        let (a2, ln2) = layer_norm(&h1, &self.ln2_gain, &self.ln2_bias);
        let f1 = a2.dot(&self.w_ff1) + &self.b_ff1;
        let g = f1.mapv(|x| x.max(0.0));
        let h2 = &h1 + &(g.dot(&self.w_ff2) + &self.b_ff2);
        let (y, ln3) = layer_norm(&h2, &self.ln_out_gain, &self.ln_out_bias);

        let cache = AttentionCache {
            offsets,
            lens,
            tokens,
            token_pos,
            mask,
            ln1,
            a1,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            a2,
            f1,
            g,
            ln3,
        };
        (y, cache)
    }

    pub(crate) fn backward(&self, c: &AttentionCache, d_out: &Array2<f64>, grads: &mut AttentionEncoder) {
        let d = self.dim();
        let t = c.tokens.len();
        let mut dy = Array2::zeros((t, d));
        for (b, (&off, &len)) in c.offsets.iter().zip(&c.lens).enumerate() {
            dy.row_mut(off + len - 1).assign(&d_out.row(b));
        }

        let dh2 = layer_norm_backward(
            &dy,
            &c.ln3,
            &self.ln_out_gain,
            &mut grads.ln_out_gain,
            &mut grads.ln_out_bias,
        );

        // feed-forward branch
        general_mat_mul(1.0, &c.g.t(), &dh2, 1.0, &mut grads.w_ff2);
        grads.b_ff2 += &dh2.sum_axis(Axis(0));
        let mut df1 = dh2.dot(&self.w_ff2.t());
        df1.zip_mut_with(&c.f1, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0
            }
        });
        general_mat_mul(1.0, &c.a2.t(), &df1, 1.0, &mut grads.w_ff1);
        grads.b_ff1 += &df1.sum_axis(Axis(0));
        let da2 = df1.dot(&self.w_ff1.t());
        let dh1 = dh2 + layer_norm_backward(&da2, &c.ln2, &self.ln2_gain, &mut grads.ln2_gain, &mut grads.ln2_bias);

        // attention branch
        general_mat_mul(1.0, &c.o.t(), &dh1, 1.0, &mut grads.w_out);
        let d_o = dh1.dot(&self.w_out.t());
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        let mut pi = 0;
        for (&off, &len) in c.offsets.iter().zip(&c.lens) {
            for h in 0..self.heads {
                let cols = s![off..off + len, h * hd..(h + 1) * hd];
                let p = &c.probs[pi];
                pi += 1;
                let doh: ArrayView2<f64> = d_o.slice(cols);
                let dp = doh.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&doh));
                let mut ds = Array2::zeros((len, len));
                for i in 0..len {
                    let dot: f64 = (0..len).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                    for j in 0..=i {
                        ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                    }
                }
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
        }
        general_mat_mul(1.0, &c.a1.t(), &dq, 1.0, &mut grads.w_query);
        general_mat_mul(1.0, &c.a1.t(), &dk, 1.0, &mut grads.w_key);
        general_mat_mul(1.0, &c.a1.t(), &dv, 1.0, &mut grads.w_value);
        let da1 = dq.dot(&self.w_query.t()) + dk.dot(&self.w_key.t()) + dv.dot(&self.w_value.t());
        let mut dx0 = dh1 + layer_norm_backward(&da1, &c.ln1, &self.ln1_gain, &mut grads.ln1_gain, &mut grads.ln1_bias);

        if let Some(mask) = &c.mask {
            dx0 *= mask;
        }
        for (i, (&item, &pos)) in c.tokens.iter().zip(&c.token_pos).enumerate() {
            let mut e = grads.embedding.row_mut(item);
            e += &dx0.row(i);
            let mut p = grads.positions.row_mut(pos);
            p += &dx0.row(i);
        }
    }
}

impl Parameters for AttentionEncoder {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            view2("embedding", &self.embedding),
            view2("positions", &self.positions),
            view1("ln1_gain", &self.ln1_gain),
            view1("ln1_bias", &self.ln1_bias),
            view2("w_query", &self.w_query),
            view2("w_key", &self.w_key),
            view2("w_value", &self.w_value),
            view2("w_out", &self.w_out),
            view1("ln2_gain", &self.ln2_gain),
            view1("ln2_bias", &self.ln2_bias),
            view2("w_ff1", &self.w_ff1),
            view1("b_ff1", &self.b_ff1),
            view2("w_ff2", &self.w_ff2),
            view1("b_ff2", &self.b_ff2),
            view1("ln_out_gain", &self.ln_out_gain),
            view1("ln_out_bias", &self.ln_out_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2(&mut self.embedding),
            slice2(&mut self.positions),
            slice1(&mut self.ln1_gain),
            slice1(&mut self.ln1_bias),
            slice2(&mut self.w_query),
            slice2(&mut self.w_key),
            slice2(&mut self.w_value),
            slice2(&mut self.w_out),
            slice1(&mut self.ln2_gain),
            slice1(&mut self.ln2_bias),
            slice2(&mut self.w_ff1),
            slice1(&mut self.b_ff1),
            slice2(&mut self.w_ff2),
            slice1(&mut self.b_ff2),
            slice1(&mut self.ln_out_gain),
            slice1(&mut self.ln_out_bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderKind};
    use crate::rng::{substream, Stream};

    fn small(heads: usize) -> AttentionEncoder {
        let c = EncoderConfig {
            n_items: 5,
            embed_dim: 4,
            hidden_dim: 4,
            max_len: 6,
            kind: EncoderKind::SelfAttention,
            attention_heads: heads,
            dropout: 0.0,
        };
        AttentionEncoder::init(&c, &mut substream(5, Stream::InitA))
    }

    #[test]
    fn causal_prefix_matches_intermediate_position() {
        for heads in [1, 2] {
            let enc = small(heads);
            let full = [5, 0, 3, 1, 4, 2];
            let all = enc.encode_positions(SeqRef::new(&full, 5));
            let wrapped = Encoder::SelfAttention(enc.clone());
            for k in 1..=5 {
                let mut prefix = vec![5; 6 - k];
                prefix.extend_from_slice(&full[1..1 + k]);
                let s = wrapped.encode(&prefix, k).unwrap();
                for j in 0..4 {
                    assert!((s.0[j] - all[[k - 1, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn padding_content_is_ignored() {
        let enc = Encoder::SelfAttention(small(1));
        let a = enc.encode(&[5, 5, 5, 1, 3, 4], 3).unwrap();
        let b = enc.encode(&[0, 2, 1, 1, 3, 4], 3).unwrap();
        assert_eq!(a, b);
    }
}
