//! Session logs drawn from a known first-order Markov chain with per-item
//! purchase propensities, plus exact oracles for that chain.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Behavior, Interaction, RewardSchema, Session, SessionSet};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::encoder::SeqRef;
use crate::model::{Network, ScoreSource};
use crate::rng::{indexed_stream, substream, Stream};

/// How the transition matrix is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Every item is equally likely next.
    Uniform,
    /// Item `i` is always followed by `(i + 1) mod n`.
    Cycle,
    /// Each row puts flat-Dirichlet weights on `fanout` distinct random
    /// successors. Purchasable successors get their weight multiplied by
    /// `purchasable_boost` before normalization.
    Sparse { fanout: usize, purchasable_boost: f64 },
    /// Row-stochastic matrix given explicitly.
    Explicit { rows: Vec<Vec<f64>> },
}

/// Per-item probability that an interaction is a purchase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PropensitySpec {
    Constant { p: f64 },
    /// A random `fraction` of items draw propensities uniformly from
    /// `high`; the rest from `low`.
    Concentrated {
        fraction: f64,
        high: (f64, f64),
        low: (f64, f64),
    },
    Explicit { values: Vec<f64> },
}

/// Session length `min_len + G` with `G` geometric on {0, 1, ...}, so the
/// mean length is `mean_len`; truncated at `max_len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSpec {
    pub min_len: usize,
    pub mean_len: f64,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_sessions: usize,
    pub length: LengthSpec,
    pub kernel: KernelSpec,
    pub propensity: PropensitySpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_items: 200,
            n_sessions: 2000,
            length: LengthSpec {
                min_len: 3,
                mean_len: 6.0,
                max_len: 50,
            },
            kernel: KernelSpec::Sparse {
                fanout: 8,
                purchasable_boost: 1.0,
            },
            propensity: PropensitySpec::Concentrated {
                fraction: 0.1,
                high: (0.3, 0.8),
                low: (0.0, 0.02),
            },
            seed: 0,
        }
    }
}

/// The materialized chain: kernel and propensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub kernel: Array2<f64>,
    pub propensity: Array1<f64>,
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{what} {p} is outside [0, 1]")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::Config("synthetic n_items must be positive".into()));
        }
        let l = &self.length;
        if l.min_len == 0 || l.max_len < l.min_len || !(l.mean_len >= l.min_len as f64) {
            return Err(Error::Config(format!(
                "length needs 1 <= min_len <= mean_len and min_len <= max_len, got {l:?}"
            )));
        }
        Ok(())
    }

    fn propensities(&self) -> Result<Array1<f64>> {
        let n = self.n_items;
        let mut rng = substream(self.seed, Stream::Synthetic);
        let p = match &self.propensity {
            PropensitySpec::Constant { p } => {
                check_probability(*p, "propensity")?;
                Array1::from_elem(n, *p)
            }
            PropensitySpec::Concentrated { fraction, high, low } => {
                check_probability(*fraction, "purchasable fraction")?;
                for &(a, b) in [high, low] {
                    check_probability(a, "propensity bound")?;
                    check_probability(b, "propensity bound")?;
                    if a > b {
                        return Err(Error::Config(format!("empty propensity range ({a}, {b})")));
                    }
                }
                let k = ((n as f64) * fraction).round() as usize;
                let mut purchasable = vec![false; n];
                for i in sample(&mut rng, n, k.min(n)) {
                    purchasable[i] = true;
                }
                purchasable
                    .iter()
                    .map(|&hi| {
                        let (a, b) = if hi { *high } else { *low };
                        if a == b {
                            a
                        } else {
                            rng.gen_range(a..b)
                        }
                    })
                    .collect()
            }
            PropensitySpec::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::Shape(format!(
                        "{} propensities for {n} items",
                        values.len()
                    )));
                }
                for &p in values {
                    check_probability(p, "propensity")?;
                }
                Array1::from(values.clone())
            }
        };
        Ok(p)
    }

    fn kernel_matrix(&self, propensity: &Array1<f64>) -> Result<Array2<f64>> {
        let n = self.n_items;
        // separate stream index so the kernel does not depend on how many
        // draws the propensities consumed
        let mut rng = indexed_stream(self.seed, Stream::Synthetic, u64::MAX);
        let k = match &self.kernel {
            KernelSpec::Uniform => Array2::from_elem((n, n), 1.0 / n as f64),
            KernelSpec::Cycle => {
                let mut k = Array2::zeros((n, n));
                for i in 0..n {
                    k[[i, (i + 1) % n]] = 1.0;
                }
                k
            }
            KernelSpec::Sparse {
                fanout,
                purchasable_boost,
            } => {
                if *fanout == 0 || *fanout > n {
                    return Err(Error::Config(format!("fanout must be in 1..={n}, got {fanout}")));
                }
                if !(purchasable_boost.is_finite() && *purchasable_boost > 0.0) {
                    return Err(Error::Config("purchasable_boost must be positive".into()));
                }
                let threshold = propensity_threshold(&self.propensity);
                let mut k = Array2::zeros((n, n));
                for i in 0..n {
                    let succ = sample(&mut rng, n, *fanout);
                    let mut total = 0.0;
                    for j in succ.iter() {
                        let mut w = -(1.0 - rng.gen::<f64>()).ln();
                        if propensity[j] >= threshold {
                            w *= purchasable_boost;
                        }
                        k[[i, j]] = w;
                        total += w;
                    }
                    k.row_mut(i).mapv_inplace(|w| w / total);
                }
                k
            }
            KernelSpec::Explicit { rows } => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Shape(format!("explicit kernel must be {n}x{n}")));
                }
                Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
            }
        };
        check_kernel(&k)?;
        Ok(k)
    }

    pub fn chain(&self) -> Result<Chain> {
        self.validate()?;
        let propensity = self.propensities()?;
        let kernel = self.kernel_matrix(&propensity)?;
        Ok(Chain { kernel, propensity })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Smallest propensity counted as purchasable for the kernel boost.
fn propensity_threshold(p: &PropensitySpec) -> f64 {
    match p {
        PropensitySpec::Concentrated { high, low, .. } if high.0 > low.1 => high.0,
        _ => f64::INFINITY,
    }
}

/// Rows must be finite, non-negative and sum to 1.
pub fn check_kernel(k: &Array2<f64>) -> Result<()> {
    for (row, r) in k.outer_iter().enumerate() {
        if let Some(v) = r.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::DegenerateKernel {
                row,
                reason: format!("entry {v} is not a probability"),
            });
        }
        let s: f64 = r.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateKernel {
                row,
                reason: format!("row sums to {s}"),
            });
        }
    }
    Ok(())
}

fn sample_categorical(rng: &mut ChaCha8Rng, p: ndarray::ArrayView1<f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &w) in p.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

fn sample_length(rng: &mut ChaCha8Rng, l: &LengthSpec) -> usize {
    let extra_mean = l.mean_len - l.min_len as f64;
    let mut len = l.min_len;
    if extra_mean > 0.0 {
        let stop = 1.0 / (1.0 + extra_mean);
        while len < l.max_len && rng.gen::<f64>() >= stop {
            len += 1;
        }
    }
    len
}

/// Samples sessions from the chain. Session `i` uses its own random stream,
/// so sessions are generated in parallel and do not depend on each other.
pub fn generate(spec: &SyntheticSpec) -> Result<SessionSet> {
    let chain = spec.chain()?;
    Ok(generate_from_chain(spec, &chain))
}

pub fn generate_from_chain(spec: &SyntheticSpec, chain: &Chain) -> SessionSet {
    generate_range(spec, chain, 0..spec.n_sessions)
}

/// Sessions with the given indices. Indices past `n_sessions` give fresh
/// sessions from the same chain, e.g. a large held-out evaluation set.
pub fn generate_range(spec: &SyntheticSpec, chain: &Chain, range: std::ops::Range<usize>) -> SessionSet {
    let n = spec.n_items;
    let sessions: Vec<Session> = range
        .into_par_iter()
        .map(|s| {
            let mut rng = indexed_stream(spec.seed, Stream::Synthetic, s as u64);
            let len = sample_length(&mut rng, &spec.length);
            let mut item = rng.gen_range(0..n);
            let mut events = Vec::with_capacity(len);
            for t in 0..len {
                if t > 0 {
                    item = sample_categorical(&mut rng, chain.kernel.row(item));
                }
                let behavior = if rng.gen::<f64>() < chain.propensity[item] {
                    Behavior::Purchase
                } else {
                    Behavior::Click
                };
                events.push(Interaction {
                    item,
                    behavior,
                    timestamp: t as f64,
                });
            }
            Session {
                id: format!("s{s}"),
                events,
            }
        })
        .collect();
    SessionSet {
        sessions,
        n_items: n,
        item_ids: (0..n).map(|i| i.to_string()).collect(),
    }
}

impl Chain {
    /// Next-item distribution after `state`: the kernel row of its last
    /// item, or uniform for an empty state.
    pub fn next_distribution(&self, state: &[usize]) -> Result<Array1<f64>> {
        let n = self.kernel.nrows();
        match state.last() {
            None => Ok(Array1::from_elem(n, 1.0 / n as f64)),
            Some(&i) if i < n => Ok(self.kernel.row(i).to_owned()),
            Some(&i) => Err(Error::ItemOutOfRange { id: i, n_items: n }),
        }
    }

    /// Expected immediate reward of interacting with `item`.
    pub fn expected_reward(&self, schema: &RewardSchema, item: usize) -> f64 {
        let p = self.propensity[item];
        schema.r_click + (schema.r_purchase - schema.r_click) * p
    }

    /// Finite-horizon optimal action values. The agent's action is the item
    /// the user interacts with; from item `a` the next action is restricted
    /// to successors with nonzero kernel probability.
    pub fn q_table(&self, schema: &RewardSchema, horizon: usize) -> Result<Array1<f64>> {
        if horizon == 0 {
            return Err(Error::Config("oracle horizon must be at least 1".into()));
        }
        let n = self.kernel.nrows();
        let r: Array1<f64> = (0..n).map(|a| self.expected_reward(schema, a)).collect();
        let mut q = r.clone();
        for _ in 1..horizon {
            let next: Array1<f64> = (0..n)
                .map(|a| {
                    let best = self
                        .kernel
                        .row(a)
                        .iter()
                        .zip(q.iter())
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(_, &v)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    r[a] + schema.gamma * best
                })
                .collect();
            q = next;
        }
        Ok(q)
    }

    /// Optimal `Q(state, action)` truncated at `horizon`. Under first-order
    /// dynamics the value does not depend on the state beyond validity.
    pub fn oracle_q(
        &self,
        schema: &RewardSchema,
        state: &[usize],
        action: usize,
        horizon: usize,
    ) -> Result<f64> {
        let n = self.kernel.nrows();
        if let Some(&bad) = state.iter().chain([&action]).find(|&&i| i >= n) {
            return Err(Error::ItemOutOfRange { id: bad, n_items: n });
        }
        Ok(self.q_table(schema, horizon)?[action])
    }
}

/// Ranks by the true next-item distribution: the Bayes-optimal next-item
/// predictor for the chain.
pub struct OracleScorer<'a> {
    pub chain: &'a Chain,
}

impl Scorer for OracleScorer<'_> {
    fn n_items(&self) -> usize {
        self.chain.kernel.nrows()
    }

    fn score_batch(&self, batch: &[SeqRef]) -> Result<Array2<f64>> {
        let n = self.n_items();
        let mut out = Array2::zeros((batch.len(), n));
        for (i, s) in batch.iter().enumerate() {
            out.row_mut(i).assign(&self.chain.next_distribution(s.real())?);
        }
        Ok(out)
    }
}

/// Mean over `states` of the Spearman correlation, across all actions,
/// between the network's Q head and the oracle action values.
pub fn critic_rank_agreement(
    network: &Network,
    chain: &Chain,
    schema: &RewardSchema,
    states: &[SeqRef],
    horizon: usize,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let oracle = chain.q_table(schema, horizon)?;
    let oracle = oracle.as_slice().expect("contiguous");
    let q = network.score_batch(states, ScoreSource::QValues)?;
    let mut total = 0.0;
    for row in q.outer_iter() {
        total += spearman(&row.to_vec(), oracle)?;
    }
    Ok(total / states.len() as f64)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!(
            "spearman needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
