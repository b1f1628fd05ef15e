//! Encoder plus two heads, held in two independently initialized copies
//! for double Q-learning.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, SeqRef};
use crate::error::Result;
use crate::heads::LinearHead;
use crate::nn::{prefixed, Adam, AdamConfig, Parameters, TensorView};
use crate::rng::{substream, Stream};

/// Which head ranks items at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Supervised,
    QValues,
}

/// Encoder `G` with its supervised head and Q head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub encoder: Encoder,
    pub supervised: LinearHead,
    pub q_head: LinearHead,
}

impl Network {
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = Encoder::init(config, rng)?;
        let h = encoder.hidden_dim();
        Ok(Network {
            supervised: LinearHead::init(h, config.n_items, rng),
            q_head: LinearHead::init(h, config.n_items, rng),
            encoder,
        })
    }

    pub fn n_items(&self) -> usize {
        self.supervised.n_items()
    }

    pub fn head(&self, source: ScoreSource) -> &LinearHead {
        match source {
            ScoreSource::Supervised => &self.supervised,
            ScoreSource::QValues => &self.q_head,
        }
    }

    /// Inference-mode scores for a batch of states.
    pub fn score_batch(&self, batch: &[SeqRef], source: ScoreSource) -> Result<Array2<f64>> {
        let states = self.encoder.encode_batch(batch)?;
        self.head(source).forward(states.view())
    }

    pub fn q_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.q_head.forward(states)
    }
}

impl Parameters for Network {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = prefixed("encoder", self.encoder.tensors());
        v.extend(prefixed("supervised", self.supervised.tensors()));
        v.extend(prefixed("q_head", self.q_head.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.supervised.tensors_mut());
        v.extend(self.q_head.tensors_mut());
        v
    }
}

/// Which copy is trained this step; the other provides target values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Copy A online, copy B evaluates targets.
    AOnline,
    /// Copy B online, copy A evaluates targets.
    BOnline,
}

impl Role {
    /// Uniform `z` in (0, 1); copy A is online when `z <= 0.5`.
    pub fn draw(rng: &mut ChaCha8Rng) -> Role {
        let z: f64 = rng.gen();
        if z <= 0.5 {
            Role::AOnline
        } else {
            Role::BOnline
        }
    }

    pub fn online_index(self) -> usize {
        match self {
            Role::AOnline => 0,
            Role::BOnline => 1,
        }
    }
}

/// Two network copies and their optimizer states. Copy A serves
/// recommendations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualHeadModel {
    pub config: EncoderConfig,
    pub copies: [Network; 2],
    pub optimizers: [Adam<Network>; 2],
}

impl DualHeadModel {
    /// Copies are initialized from separate substreams of `seed`.
    pub fn init(config: &EncoderConfig, adam: AdamConfig, seed: u64) -> Result<Self> {
        let a = Network::init(config, &mut substream(seed, Stream::InitA))?;
        let b = Network::init(config, &mut substream(seed, Stream::InitB))?;
        Ok(Self::from_copies(config.clone(), a, b, adam))
    }

    pub fn from_copies(config: EncoderConfig, a: Network, b: Network, adam: AdamConfig) -> Self {
        let optimizers = [Adam::new(&a, adam), Adam::new(&b, adam)];
        DualHeadModel {
            config,
            copies: [a, b],
            optimizers,
        }
    }

    pub fn serving(&self) -> &Network {
        &self.copies[0]
    }

    pub fn online(&self, role: Role) -> &Network {
        &self.copies[role.online_index()]
    }

    pub fn partner(&self, role: Role) -> &Network {
        &self.copies[1 - role.online_index()]
    }

    /// Applies an Adam step to the online copy only.
    pub fn apply_gradients(&mut self, role: Role, grads: &Network) -> Result<()> {
        let i = role.online_index();
        self.optimizers[i].update(&mut self.copies[i], grads)
    }
}
