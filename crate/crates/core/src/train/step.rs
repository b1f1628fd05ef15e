//! One optimizer update for each training variant.
//!
//! All variants share [`compute_gradients`]: encode the current states with
//! the online copy, form the requested loss terms, backpropagate into the
//! online copy only. Targets come from inference-mode passes and are plain
//! numbers, so no gradient can reach them.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ReplayTuple, RewardSchema};
use crate::encoder::SeqRef;
use crate::error::{Error, Result};
use crate::losses::{argmax, cross_entropy_with_grad, td_grad, td_loss};
use crate::model::{DualHeadModel, Network, Role};
use crate::nn::{Dropout, Parameters};

/// Weight applied to each example's cross-entropy in the actor term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CriticWeight {
    /// Detached `Q(s_t, a_t)` from the online copy, optionally clipped at 0.
    Critic { clip_at_zero: bool },
    /// Fixed weight; `Constant(1.0)` turns the actor term back into plain
    /// cross-entropy.
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SupervisedTerm {
    None,
    CrossEntropy,
    Actor { weight: CriticWeight, plus_cross_entropy: bool },
}

/// Loss terms of one update: `supervised + td_weight * mean(td)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub supervised: SupervisedTerm,
    pub td_weight: f64,
    /// Uniformly sampled unseen items per example, trained towards 0.
    pub negatives: usize,
}

impl Objective {
    pub fn sqn() -> Self {
        Objective {
            supervised: SupervisedTerm::CrossEntropy,
            td_weight: 1.0,
            negatives: 0,
        }
    }

    pub fn supervised_only() -> Self {
        Objective {
            td_weight: 0.0,
            ..Self::sqn()
        }
    }

    pub fn q_only(negatives: usize) -> Self {
        Objective {
            supervised: SupervisedTerm::None,
            td_weight: 1.0,
            negatives,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub role: Role,
    pub loss: f64,
    pub ce: Option<f64>,
    pub td: Option<f64>,
    pub actor: Option<f64>,
    pub td_terms: usize,
}

/// A mini-batch of replay tuples with the item sets of their sessions.
pub struct Batch<'a> {
    pub tuples: Vec<&'a ReplayTuple>,
    pub session_items: Vec<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn new(tuples: Vec<&'a ReplayTuple>, session_items: Vec<&'a [usize]>) -> Self {
        Batch {
            tuples,
            session_items,
        }
    }

    /// Batch whose negatives exclude only the items of each tuple's windows.
    pub fn from_tuples(tuples: &'a [ReplayTuple]) -> Self {
        Batch {
            tuples: tuples.iter().collect(),
            session_items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Randomness consumed by an update.
pub struct StepRngs<'a> {
    pub dropout: &'a mut ChaCha8Rng,
    pub negatives: &'a mut ChaCha8Rng,
}

fn sample_negatives(
    rng: &mut ChaCha8Rng,
    n_items: usize,
    seen: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    // `seen` is sorted and deduplicated
    if seen.len() >= n_items {
        return Err(Error::Sampling(format!(
            "session covers all {n_items} items; no unseen item to sample"
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.gen_range(0..n_items);
        if seen.binary_search(&j).is_err() {
            out.push(j);
        }
    }
    Ok(out)
}

/// Gradients of `objective` for the online copy under `role`.
pub fn compute_gradients(
    model: &DualHeadModel,
    role: Role,
    batch: &Batch,
    schema: &RewardSchema,
    objective: &Objective,
    rngs: StepRngs<'_>,
) -> Result<(Network, LossComponents)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let online = model.online(role);
    let partner = model.partner(role);
    let n_items = online.n_items();
    let b = batch.len();

    let states: Vec<SeqRef> = batch
        .tuples
        .iter()
        .map(|t| SeqRef::new(&t.state, t.state_len))
        .collect();
    let actions: Vec<usize> = batch.tuples.iter().map(|t| t.action).collect();
    if let Some(&bad) = actions.iter().find(|&&a| a >= n_items) {
        return Err(Error::ItemOutOfRange { id: bad, n_items });
    }

    let rate = model.config.dropout;
    let dropout = (rate > 0.0).then(|| Dropout {
        rate,
        rng: &mut *rngs.dropout,
    });
    let (s_t, cache) = online.encoder.forward_train(&states, dropout)?;

    let mut grads = online.zeros_like();
    let mut d_states = Array2::<f64>::zeros(s_t.raw_dim());

    let needs_q_pred = objective.td_weight != 0.0
        || matches!(
            objective.supervised,
            SupervisedTerm::Actor {
                weight: CriticWeight::Critic { .. },
                ..
            }
        );
    let q_pred = if needs_q_pred {
        Some(online.q_head.forward_columns(s_t.view(), &actions)?)
    } else {
        None
    };

    let mut out = LossComponents {
        role,
        loss: 0.0,
        ce: None,
        td: None,
        actor: None,
        td_terms: 0,
    };

    if objective.td_weight != 0.0 {
        let q_pred = q_pred.as_ref().expect("computed above");
        let targets = td_targets(online, partner, batch, schema)?;

        let mut negatives: Vec<Vec<usize>> = Vec::new();
        for (i, t) in batch.tuples.iter().enumerate() {
            if objective.negatives == 0 {
                break;
            }
            let seen: Vec<usize> = match batch.session_items.get(i) {
                Some(items) => items.to_vec(),
                None => {
                    let mut v: Vec<usize> = t.next_state_items().to_vec();
                    v.sort_unstable();
                    v.dedup();
                    v
                }
            };
            negatives.push(sample_negatives(rngs.negatives, n_items, &seen, objective.negatives)?);
        }

        let terms = b * (1 + objective.negatives);
        let scale = objective.td_weight / terms as f64;
        let mut td_sum = 0.0;
        let mut d_q = vec![0.0; b];
        for i in 0..b {
            td_sum += td_loss(q_pred[i], targets[i]);
            d_q[i] = scale * td_grad(q_pred[i], targets[i]);
        }
        d_states += &online.q_head.backward_columns(s_t.view(), &actions, &d_q, &mut grads.q_head);

        for j in 0..objective.negatives {
            let cols: Vec<usize> = negatives.iter().map(|n| n[j]).collect();
            let q_neg = online.q_head.forward_columns(s_t.view(), &cols)?;
            let d_neg: Vec<f64> = q_neg
                .iter()
                .map(|&q| {
                    td_sum += td_loss(q, 0.0);
                    scale * td_grad(q, 0.0)
                })
                .collect();
            d_states += &online.q_head.backward_columns(s_t.view(), &cols, &d_neg, &mut grads.q_head);
        }

        let td_mean = td_sum / terms as f64;
        out.td = Some(td_mean);
        out.td_terms = terms;
        out.loss += objective.td_weight * td_mean;
    }

    if objective.supervised != SupervisedTerm::None {
        let logits = online.supervised.forward(s_t.view())?;
        let mut d_logits = Array2::<f64>::zeros(logits.raw_dim());
        let mut ce_sum = 0.0;
        let mut actor_sum = 0.0;
        for i in 0..b {
            let (ce, g) = cross_entropy_with_grad(logits.row(i), actions[i])?;
            ce_sum += ce;
            let coeff = match objective.supervised {
                SupervisedTerm::CrossEntropy => 1.0,
                SupervisedTerm::Actor {
                    weight,
                    plus_cross_entropy,
                } => {
                    let w = match weight {
                        CriticWeight::Constant(c) => c,
                        CriticWeight::Critic { clip_at_zero } => {
                            let q = q_pred.as_ref().expect("computed above")[i];
                            if clip_at_zero {
                                q.max(0.0)
                            } else {
                                q
                            }
                        }
                    };
                    actor_sum += ce * w;
                    w + if plus_cross_entropy { 1.0 } else { 0.0 }
                }
                SupervisedTerm::None => unreachable!(),
            };
            d_logits.row_mut(i).assign(&(g * (coeff / b as f64)));
        }
        let ce_mean = ce_sum / b as f64;
        out.ce = Some(ce_mean);
        match objective.supervised {
            SupervisedTerm::CrossEntropy => out.loss += ce_mean,
            SupervisedTerm::Actor {
                plus_cross_entropy, ..
            } => {
                let actor = actor_sum / b as f64;
                out.actor = Some(actor);
                out.loss += actor + if plus_cross_entropy { ce_mean } else { 0.0 };
            }
            SupervisedTerm::None => {}
        }
        d_states += &online.supervised.backward(s_t.view(), &d_logits, &mut grads.supervised);
    }

    online.encoder.backward(&cache, &d_states, &mut grads.encoder);
    Ok((grads, out))
}

/// `r + γ · Q_partner(s'_{t+1}, argmax_a Q_online(s_{t+1}, a))`, or `r` for
/// terminal transitions.
pub fn td_targets(
    online: &Network,
    partner: &Network,
    batch: &Batch,
    schema: &RewardSchema,
) -> Result<Array1<f64>> {
    let mut targets: Array1<f64> = batch.tuples.iter().map(|t| t.reward).collect();
    if schema.gamma == 0.0 {
        return Ok(targets);
    }
    let rows: Vec<usize> = (0..batch.len()).filter(|&i| !batch.tuples[i].terminal).collect();
    if rows.is_empty() {
        return Ok(targets);
    }
    let next: Vec<SeqRef> = rows
        .iter()
        .map(|&i| {
            let t = batch.tuples[i];
            SeqRef::new(&t.next_state, t.next_state_len)
        })
        .collect();
    let s_next = online.encoder.encode_batch(&next)?;
    let q_select = online.q_batch(s_next.view())?;
    let best: Vec<usize> = q_select.outer_iter().map(|q| argmax(q)).collect();
    let s_next_partner = partner.encoder.encode_batch(&next)?;
    let q_eval = partner.q_head.forward_columns(s_next_partner.view(), &best)?;
    for (k, &i) in rows.iter().enumerate() {
        targets[i] += schema.gamma * q_eval[k];
    }
    Ok(targets)
}

fn apply(
    model: &mut DualHeadModel,
    role: Role,
    batch: &Batch,
    schema: &RewardSchema,
    objective: &Objective,
    rngs: StepRngs<'_>,
) -> Result<LossComponents> {
    let (grads, losses) = compute_gradients(model, role, batch, schema, objective, rngs)?;
    model.apply_gradients(role, &grads)?;
    Ok(losses)
}

/// Joint cross-entropy and double-Q TD update.
pub fn sqn_step(
    model: &mut DualHeadModel,
    batch: &Batch,
    schema: &RewardSchema,
    role: Role,
    rngs: StepRngs<'_>,
) -> Result<LossComponents> {
    apply(model, role, batch, schema, &Objective::sqn(), rngs)
}

/// Settings for the actor phase of the actor-critic variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacSettings {
    /// Updates `t <= threshold` are plain SQN updates; `None` never switches.
    pub threshold: Option<u64>,
    /// Add plain cross-entropy to the actor term instead of the TD term.
    pub actor_plus_cross_entropy: bool,
    pub clip_at_zero: bool,
}

impl SacSettings {
    pub fn objective(&self, t: u64) -> Objective {
        match self.threshold {
            Some(threshold) if t > threshold => Objective {
                supervised: SupervisedTerm::Actor {
                    weight: CriticWeight::Critic {
                        clip_at_zero: self.clip_at_zero,
                    },
                    plus_cross_entropy: self.actor_plus_cross_entropy,
                },
                td_weight: if self.actor_plus_cross_entropy { 0.0 } else { 1.0 },
                negatives: 0,
            },
            _ => Objective::sqn(),
        }
    }
}

/// SQN update while `t <= T`, critic-weighted actor update afterwards.
pub fn sac_step(
    model: &mut DualHeadModel,
    batch: &Batch,
    schema: &RewardSchema,
    role: Role,
    rngs: StepRngs<'_>,
    t: u64,
    settings: &SacSettings,
) -> Result<LossComponents> {
    apply(model, role, batch, schema, &settings.objective(t), rngs)
}

/// TD-only update with `n_negatives` sampled unseen items per example.
pub fn q_only_step(
    model: &mut DualHeadModel,
    batch: &Batch,
    schema: &RewardSchema,
    role: Role,
    rngs: StepRngs<'_>,
    n_negatives: usize,
) -> Result<LossComponents> {
    if n_negatives == 0 {
        return Err(Error::Config("q-only training needs at least one negative".into()));
    }
    apply(model, role, batch, schema, &Objective::q_only(n_negatives), rngs)
}

/// Cross-entropy only; Q heads receive zero gradient and stay fixed.
pub fn supervised_step(
    model: &mut DualHeadModel,
    batch: &Batch,
    schema: &RewardSchema,
    role: Role,
    rngs: StepRngs<'_>,
) -> Result<LossComponents> {
    apply(model, role, batch, schema, &Objective::supervised_only(), rngs)
}
