//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqnrec::data::{
    build_replay_tuples, Behavior, Interaction, ReplayTuple, RewardSchema, Session, SessionSet,
};
use sqnrec::encoder::{EncoderConfig, EncoderKind, SeqRef};
use sqnrec::eval::Scorer;
use sqnrec::model::{DualHeadModel, Role};
use sqnrec::nn::{AdamConfig, Parameters};
use sqnrec::train::{compute_gradients, Batch, Objective, StepRngs};
use sqnrec::Result;

pub const N_ITEMS: usize = 5;

pub fn tiny_config(kind: EncoderKind) -> EncoderConfig {
    EncoderConfig {
        n_items: N_ITEMS,
        embed_dim: 4,
        hidden_dim: 4,
        max_len: 4,
        kind,
        attention_heads: if kind == EncoderKind::SelfAttention { 2 } else { 1 },
        dropout: 0.0,
    }
}

pub fn session(id: &str, events: &[(usize, Behavior)]) -> Session {
    Session {
        id: id.into(),
        events: events
            .iter()
            .enumerate()
            .map(|(t, &(item, behavior))| Interaction {
                item,
                behavior,
                timestamp: t as f64,
            })
            .collect(),
    }
}

/// Random sessions over `n_items` items with lengths in `min..=max`.
pub fn random_sessions(n: usize, n_items: usize, min: usize, max: usize, seed: u64) -> SessionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = (0..n)
        .map(|s| {
            let len = rng.gen_range(min..=max);
            let events: Vec<(usize, Behavior)> = (0..len)
                .map(|_| {
                    let b = if rng.gen_bool(0.2) { Behavior::Purchase } else { Behavior::Click };
                    (rng.gen_range(0..n_items), b)
                })
                .collect();
            session(&format!("s{s}"), &events)
        })
        .collect();
    SessionSet {
        sessions,
        n_items,
        item_ids: (0..n_items).map(|i| format!("i{i}")).collect(),
    }
}

/// Replay tuples from a few fixed sessions over the tiny vocabulary,
/// covering terminal and non-terminal rows, padding and truncation.
pub fn tiny_tuples(max_len: usize, schema: &RewardSchema) -> Vec<ReplayTuple> {
    use Behavior::*;
    let sessions = [
        session("a", &[(0, Click), (1, Click), (2, Purchase)]),
        session("b", &[(3, Click), (3, Click), (4, Click), (0, Purchase), (1, Click), (2, Click)]),
        session("c", &[(4, Purchase), (2, Click)]),
    ];
    sessions
        .iter()
        .flat_map(|s| build_replay_tuples(s, max_len, N_ITEMS, schema))
        .collect()
}

pub fn loss_of(
    model: &DualHeadModel,
    role: Role,
    tuples: &[ReplayTuple],
    schema: &RewardSchema,
    objective: &Objective,
) -> f64 {
    let mut d = ChaCha8Rng::seed_from_u64(1);
    let mut n = ChaCha8Rng::seed_from_u64(2);
    let batch = Batch::from_tuples(tuples);
    compute_gradients(model, role, &batch, schema, objective, StepRngs { dropout: &mut d, negatives: &mut n })
        .unwrap()
        .1
        .loss
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central-difference check of every parameter of the online copy.
pub fn check_gradients(
    model: &DualHeadModel,
    role: Role,
    tuples: &[ReplayTuple],
    schema: &RewardSchema,
    objective: &Objective,
    step: f64,
) -> GradCheck {
    let mut d = ChaCha8Rng::seed_from_u64(1);
    let mut n = ChaCha8Rng::seed_from_u64(2);
    let batch = Batch::from_tuples(tuples);
    let (grads, _) =
        compute_gradients(model, role, &batch, schema, objective, StepRngs { dropout: &mut d, negatives: &mut n })
            .unwrap();
    let idx = role.online_index();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.to_vec()))
        .collect();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let mut plus = model.clone();
            plus.copies[idx].tensors_mut()[ti][j] += step;
            let mut minus = model.clone();
            minus.copies[idx].tensors_mut()[ti][j] -= step;
            let num = (loss_of(&plus, role, tuples, schema, objective)
                - loss_of(&minus, role, tuples, schema, objective))
                / (2.0 * step);
            let scale = a.abs().max(num.abs());
            let err = if scale < 1e-7 { (a - num).abs() } else { (a - num).abs() / scale };
            out.checked += 1;
            if err > out.max_rel_err {
                out.max_rel_err = err;
                out.worst = format!("{name}[{j}] analytic {a:e} numeric {num:e}");
            }
        }
    }
    out
}

pub fn tiny_model(kind: EncoderKind, seed: u64) -> DualHeadModel {
    DualHeadModel::init(&tiny_config(kind), AdamConfig::default(), seed).unwrap()
}

/// Fixed pseudo-random scores that depend on the whole real state, with
/// deliberate ties.
pub struct TableScorer {
    pub n_items: usize,
}

impl TableScorer {
    pub fn score(&self, state: &[usize], item: usize) -> f64 {
        let mut h: u64 = 1469598103934665603;
        for &s in state {
            h = (h ^ s as u64).wrapping_mul(1099511628211);
        }
        h = (h ^ item as u64).wrapping_mul(1099511628211);
        // four distinct levels give plenty of ties
        ((h >> 33) % 4) as f64
    }
}

impl Scorer for TableScorer {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_batch(&self, batch: &[SeqRef]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((batch.len(), self.n_items));
        for (i, s) in batch.iter().enumerate() {
            for j in 0..self.n_items {
                out[[i, j]] = self.score(s.real(), j);
            }
        }
        Ok(out)
    }
}

/// Straightforward re-derivation of the rolling metrics: full sort per
/// event, position lookup, per-behavior averages.
pub fn brute_force_metrics(
    scorer: &TableScorer,
    sessions: &SessionSet,
    ks: &[usize],
    max_len: usize,
) -> Vec<(Behavior, usize, f64, f64, usize)> {
    let mut sums: Vec<(Behavior, usize, f64, f64, usize)> = Vec::new();
    for b in [Behavior::Click, Behavior::Purchase] {
        for &k in ks {
            let mut hr = 0.0;
            let mut ndcg = 0.0;
            let mut n = 0;
            for s in &sessions.sessions {
                let items: Vec<usize> = s.items().collect();
                for t in 1..items.len() {
                    if s.events[t].behavior != b {
                        continue;
                    }
                    let start = t.saturating_sub(max_len);
                    let state = &items[start..t];
                    let mut order: Vec<usize> = (0..scorer.n_items).collect();
                    // stable sort keeps lower indices first among ties
                    order.sort_by(|&x, &y| {
                        scorer.score(state, y).partial_cmp(&scorer.score(state, x)).unwrap()
                    });
                    let pos = order.iter().position(|&j| j == items[t]).unwrap();
                    n += 1;
                    if pos < k {
                        hr += 1.0;
                        ndcg += 1.0 / ((pos + 2) as f64).log2();
                    }
                }
            }
            let d = n.max(1) as f64;
            sums.push((b, k, hr / d, ndcg / d, n));
        }
    }
    sums
}
