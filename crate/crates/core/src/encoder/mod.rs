//! Sequence encoders mapping a left-padded item window to a state vector.
//!
//! Both encoders read only the `len` real items at the right end of the
//! window; padding slots are never embedded, so the output is independent
//! of whatever ids sit in the padding region.

mod attention;
mod gru;

pub use attention::{AttentionCache, AttentionEncoder};
pub use gru::{GruCache, GruEncoder};

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dropout, Parameters, TensorView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Recurrent,
    SelfAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_items: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub kind: EncoderKind,
    pub attention_heads: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_items: 0,
            embed_dim: 64,
            hidden_dim: 64,
            max_len: 10,
            kind: EncoderKind::Recurrent,
            attention_heads: 1,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "n_items, embed_dim, hidden_dim and max_len must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.attention_heads == 0 || self.hidden_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "attention_heads ({}) must divide hidden_dim ({})",
                self.attention_heads, self.hidden_dim
            )));
        }
        if self.kind == EncoderKind::SelfAttention && self.embed_dim != self.hidden_dim {
            return Err(Error::Config(
                "self-attention encoder needs embed_dim == hidden_dim".into(),
            ));
        }
        Ok(())
    }

    pub fn pad_item(&self) -> usize {
        self.n_items
    }
}

/// Encoder output for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Array1<f64>);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }
}

/// A padded item window and the number of real items at its right end.
#[derive(Clone, Copy, Debug)]
pub struct SeqRef<'a> {
    pub items: &'a [usize],
    pub len: usize,
}

impl<'a> SeqRef<'a> {
    pub fn new(items: &'a [usize], len: usize) -> Self {
        SeqRef { items, len }
    }

    pub fn real(&self) -> &'a [usize] {
        &self.items[self.items.len() - self.len..]
    }
}

fn check_batch(batch: &[SeqRef], n_items: usize, max_len: Option<usize>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in batch {
        if s.len == 0 || s.len > s.items.len() || max_len.is_some_and(|m| s.len > m) {
            return Err(Error::Shape(format!(
                "state_len {} invalid for window of {}",
                s.len,
                s.items.len()
            )));
        }
        if let Some(&id) = s.items.iter().find(|&&id| id > n_items) {
            return Err(Error::ItemOutOfRange {
                id,
                n_items: n_items + 1,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Recurrent(GruEncoder),
    SelfAttention(AttentionEncoder),
}

pub enum EncoderCache {
    Recurrent(GruCache),
    SelfAttention(AttentionCache),
}

impl Encoder {
    /// Seeded initialization; the padding row of the embedding is zero.
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            EncoderKind::Recurrent => Encoder::Recurrent(GruEncoder::init(config, rng)),
            EncoderKind::SelfAttention => Encoder::SelfAttention(AttentionEncoder::init(config, rng)),
        })
    }

    pub fn n_items(&self) -> usize {
        self.embedding().nrows() - 1
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Encoder::Recurrent(g) => g.hidden_dim(),
            Encoder::SelfAttention(a) => a.dim(),
        }
    }

    fn max_positions(&self) -> Option<usize> {
        match self {
            Encoder::Recurrent(_) => None,
            Encoder::SelfAttention(a) => Some(a.max_len()),
        }
    }

    pub fn embedding(&self) -> &Array2<f64> {
        match self {
            Encoder::Recurrent(g) => &g.embedding,
            Encoder::SelfAttention(a) => &a.embedding,
        }
    }

    pub fn encode(&self, state: &[usize], state_len: usize) -> Result<StateVector> {
        let out = self.encode_batch(&[SeqRef::new(state, state_len)])?;
        Ok(StateVector(out.row(0).to_owned()))
    }

    /// Inference-mode encoding, one output row per input sequence.
    pub fn encode_batch(&self, batch: &[SeqRef]) -> Result<Array2<f64>> {
        check_batch(batch, self.n_items(), self.max_positions())?;
        Ok(match self {
            Encoder::Recurrent(g) => g.forward(batch, None, false).0,
            Encoder::SelfAttention(a) => a.forward(batch, None, false).0,
        })
    }

    /// Training-mode forward pass keeping what `backward` needs.
    pub fn forward_train(
        &self,
        batch: &[SeqRef],
        dropout: Option<Dropout<'_>>,
    ) -> Result<(Array2<f64>, EncoderCache)> {
        check_batch(batch, self.n_items(), self.max_positions())?;
        Ok(match self {
            Encoder::Recurrent(g) => {
                let (out, cache) = g.forward(batch, dropout, true);
                (out, EncoderCache::Recurrent(cache.expect("cache requested")))
            }
            Encoder::SelfAttention(a) => {
                let (out, cache) = a.forward(batch, dropout, true);
                (out, EncoderCache::SelfAttention(cache.expect("cache requested")))
            }
        })
    }

    /// Accumulates parameter gradients given the gradient of the loss with
    /// respect to the encoder outputs.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>, grads: &mut Encoder) {
        match (self, cache, grads) {
            (Encoder::Recurrent(p), EncoderCache::Recurrent(c), Encoder::Recurrent(g)) => {
                p.backward(c, d_out, g)
            }
            (Encoder::SelfAttention(p), EncoderCache::SelfAttention(c), Encoder::SelfAttention(g)) => {
                p.backward(c, d_out, g)
            }
            _ => panic!("encoder, cache and gradient kinds differ"),
        }
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            Encoder::Recurrent(g) => g.tensors(),
            Encoder::SelfAttention(a) => a.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Encoder::Recurrent(g) => g.tensors_mut(),
            Encoder::SelfAttention(a) => a.tensors_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig {
            n_items: 10,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        c.attention_heads = 3;
        assert!(c.validate().is_err());
        c.attention_heads = 2;
        c.kind = EncoderKind::SelfAttention;
        c.embed_dim = 32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn paper_scale_embedding_shape() {
        let c = EncoderConfig {
            n_items: 26_702,
            ..Default::default()
        };
        let enc = Encoder::init(&c, &mut substream(0, Stream::InitA)).unwrap();
        assert_eq!(enc.embedding().dim(), (26_703, 64));
        assert!(enc.embedding().row(26_702).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_and_bad_len() {
        let c = EncoderConfig {
            n_items: 5,
            embed_dim: 4,
            hidden_dim: 4,
            ..Default::default()
        };
        let enc = Encoder::init(&c, &mut substream(0, Stream::InitA)).unwrap();
        let state = [5, 5, 5, 5, 5, 5, 5, 5, 5, 7];
        assert!(matches!(enc.encode(&state, 1), Err(Error::ItemOutOfRange { .. })));
        let state = [5, 5, 5, 5, 5, 5, 5, 5, 5, 1];
        assert!(enc.encode(&state, 0).is_err());
        assert!(enc.encode(&state, 11).is_err());
        assert!(enc.encode(&state, 1).is_ok());
    }
}
