//! Training loop: shuffled replay batches, coin-flip copy alternation,
//! periodic validation, best-checkpoint tracking and exact resume.

mod step;

pub use step::{
    compute_gradients, q_only_step, sac_step, sqn_step, supervised_step, td_targets, Batch,
    CriticWeight, LossComponents, Objective, SacSettings, StepRngs, SupervisedTerm,
};

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_replay_buffer, Behavior, DatasetSplit, ReplayBuffer, RewardSchema, SessionSet};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{rolling_evaluate, EvalOptions, Metric, MetricsReport, NetworkScorer};
use crate::model::{DualHeadModel, Network, Role, ScoreSource};
use crate::nn::AdamConfig;
use crate::rng::{substream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sqn,
    Sac,
    QOnly,
    SupervisedOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sqn, Variant::Sac, Variant::QOnly, Variant::SupervisedOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sqn => "sqn",
            Variant::Sac => "sac",
            Variant::QOnly => "q_only",
            Variant::SupervisedOnly => "supervised",
        }
    }

    /// Head that ranks items for this variant.
    pub fn score_source(self) -> ScoreSource {
        match self {
            Variant::QOnly => ScoreSource::QValues,
            _ => ScoreSource::Supervised,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sqn" => Ok(Variant::Sqn),
            "sac" => Ok(Variant::Sac),
            "q_only" | "qonly" | "q" => Ok(Variant::QOnly),
            "supervised" | "supervised_only" => Ok(Variant::SupervisedOnly),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected sqn, sac, q_only or supervised"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_updates: u64,
    /// Validate every this many updates.
    pub eval_every: u64,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
    /// Updates `t <= sac_threshold` are SQN updates; absent means never.
    pub sac_threshold: Option<u64>,
    /// Use actor plus plain cross-entropy after the threshold instead of
    /// actor plus TD.
    pub sac_actor_plus_cross_entropy: bool,
    pub clip_q_weight: bool,
    pub n_negatives: usize,
    pub ks: Vec<usize>,
    /// Cap on scored validation events per evaluation.
    pub eval_max_events: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 0.01,
            max_updates: 20_000,
            eval_every: 2000,
            patience: Some(10),
            sac_threshold: Some(5000),
            sac_actor_plus_cross_entropy: false,
            clip_q_weight: false,
            n_negatives: 1,
            ks: vec![5, 10, 20],
            eval_max_events: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive when set");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be non-empty and positive");
        }
        if !self.ks.contains(&10) {
            return bad("ks must include 10, which selects the best checkpoint");
        }
        Ok(())
    }

    pub fn sac_settings(&self) -> SacSettings {
        SacSettings {
            threshold: self.sac_threshold,
            actor_plus_cross_entropy: self.sac_actor_plus_cross_entropy,
            clip_at_zero: self.clip_q_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            max_events: self.eval_max_events,
            ..EvalOptions::all()
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_metrics_jsonl(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_jsonl(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct LossTotals {
    steps: u64,
    loss: f64,
    ce: (f64, u64),
    td: (f64, u64),
    actor: (f64, u64),
}

impl LossTotals {
    fn add(&mut self, l: &LossComponents) {
        self.steps += 1;
        self.loss += l.loss;
        for (acc, v) in [(&mut self.ce, l.ce), (&mut self.td, l.td), (&mut self.actor, l.actor)] {
            if let Some(v) = v {
                acc.0 += v;
                acc.1 += 1;
            }
        }
    }

    fn records(&self, step: u64) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        if self.steps == 0 {
            return out;
        }
        let mut push = |name: &str, v: f64| {
            out.push(MetricRecord {
                step,
                split: "train".into(),
                metric: name.into(),
                value: v,
            })
        };
        push("loss", self.loss / self.steps as f64);
        for (name, (sum, n)) in [("ce", self.ce), ("td", self.td), ("actor", self.actor)] {
            if n > 0 {
                push(name, sum / n as f64);
            }
        }
        out
    }
}

/// Copy A at its best validation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub step: u64,
    pub purchase_ndcg10: f64,
    pub click_ndcg10: f64,
    pub network: Network,
}

/// Everything besides the model needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub permutation: Vec<usize>,
    pub cursor: usize,
    pub data_rng: ChaCha8Rng,
    pub coin_rng: ChaCha8Rng,
    pub dropout_rng: ChaCha8Rng,
    pub negative_rng: ChaCha8Rng,
    pub role_counts: [u64; 2],
    pub best: Option<BestSnapshot>,
    pub evals_without_improvement: usize,
    pub stopped_early: bool,
    pub history: Vec<MetricRecord>,
    totals: LossTotals,
}

impl TrainState {
    fn new(seed: u64) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            permutation: Vec::new(),
            cursor: 0,
            data_rng: substream(seed, Stream::Data),
            coin_rng: substream(seed, Stream::CoinFlip),
            dropout_rng: substream(seed, Stream::Dropout),
            negative_rng: substream(seed, Stream::Negatives),
            role_counts: [0, 0],
            best: None,
            evals_without_improvement: 0,
            stopped_early: false,
            history: Vec::new(),
            totals: LossTotals::default(),
        }
    }
}

/// Versioned container written by [`Trainer::save`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub config: TrainConfig,
    pub schema: RewardSchema,
    pub model: DualHeadModel,
    pub state: TrainState,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "sqnrec-checkpoint";
    pub const VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != Self::FORMAT || ck.version != Self::VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub variant: Variant,
    /// Copy A at the best validation point, or at the end if never
    /// validated.
    pub best: Network,
    pub best_step: u64,
    pub model: DualHeadModel,
    pub steps: u64,
    pub stopped_early: bool,
    pub history: Vec<MetricRecord>,
}

pub struct Trainer {
    pub variant: Variant,
    pub config: TrainConfig,
    pub schema: RewardSchema,
    pub model: DualHeadModel,
    pub state: TrainState,
    buffer: ReplayBuffer,
    validation: SessionSet,
}

impl Trainer {
    pub fn new(
        variant: Variant,
        config: TrainConfig,
        encoder: &EncoderConfig,
        schema: RewardSchema,
        train: &SessionSet,
        validation: SessionSet,
    ) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        schema.validate()?;
        if encoder.n_items != train.n_items {
            return Err(Error::Shape(format!(
                "model has {} items but the data indexes {}",
                encoder.n_items, train.n_items
            )));
        }
        let buffer = build_replay_buffer(train, encoder.max_len, &schema);
        if buffer.is_empty() {
            return Err(Error::EmptyDataset("no replay tuples in the training split".into()));
        }
        let model = DualHeadModel::init(encoder, config.adam(), config.seed)?;
        Ok(Trainer {
            variant,
            state: TrainState::new(config.seed),
            config,
            schema,
            model,
            buffer,
            validation,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, train: &SessionSet, validation: SessionSet) -> Result<Self> {
        let buffer = build_replay_buffer(train, ck.model.config.max_len, &ck.schema);
        if ck.state.permutation.len() > 0 && ck.state.permutation.len() != buffer.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {} tuples but the data yields {}",
                ck.state.permutation.len(),
                buffer.len()
            )));
        }
        Ok(Trainer {
            variant: ck.variant,
            config: ck.config,
            schema: ck.schema,
            model: ck.model,
            state: ck.state,
            buffer,
            validation,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: Checkpoint::FORMAT.into(),
            version: Checkpoint::VERSION,
            variant: self.variant,
            config: self.config.clone(),
            schema: self.schema,
            model: self.model.clone(),
            state: self.state.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped_early || self.state.step >= self.config.max_updates
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let st = &mut self.state;
        if st.cursor >= st.permutation.len() {
            st.permutation = (0..self.buffer.len()).collect();
            st.permutation.shuffle(&mut st.data_rng);
            st.cursor = 0;
            st.epoch += 1;
        }
        let end = (st.cursor + self.config.batch_size).min(st.permutation.len());
        let idx = st.permutation[st.cursor..end].to_vec();
        st.cursor = end;
        idx
    }

    /// One update on the next batch, validating when due.
    pub fn step(&mut self) -> Result<LossComponents> {
        let idx = self.next_indices();
        let batch = Batch::new(
            idx.iter().map(|&i| &self.buffer.tuples[i]).collect(),
            idx.iter().map(|&i| self.buffer.items_of(i)).collect(),
        );
        let role = Role::draw(&mut self.state.coin_rng);
        let t = self.state.step;
        let rngs = StepRngs {
            dropout: &mut self.state.dropout_rng,
            negatives: &mut self.state.negative_rng,
        };
        let losses = match self.variant {
            Variant::Sqn => sqn_step(&mut self.model, &batch, &self.schema, role, rngs)?,
            Variant::SupervisedOnly => supervised_step(&mut self.model, &batch, &self.schema, role, rngs)?,
            Variant::Sac => {
                let settings = self.config.sac_settings();
                sac_step(&mut self.model, &batch, &self.schema, role, rngs, t, &settings)?
            }
            Variant::QOnly => {
                q_only_step(&mut self.model, &batch, &self.schema, role, rngs, self.config.n_negatives)?
            }
        };
        self.state.role_counts[role.online_index()] += 1;
        self.state.step += 1;
        self.state.totals.add(&losses);
        if self.state.step % self.config.eval_every == 0 || self.state.step == self.config.max_updates {
            self.validate()?;
        }
        Ok(losses)
    }

    /// Evaluates copy A on the validation split and updates the best
    /// snapshot and patience counter.
    pub fn validate(&mut self) -> Result<MetricsReport> {
        let step = self.state.step;
        let scorer = NetworkScorer::new(self.model.serving(), self.variant.score_source());
        let report = rolling_evaluate(
            &scorer,
            &self.validation,
            &self.config.ks,
            self.model.config.max_len,
            self.config.eval_options(),
        )?;
        let mut records = std::mem::take(&mut self.state.totals).records(step);
        for c in &report.cells {
            records.push(MetricRecord {
                step,
                split: "validation".into(),
                metric: c.key(),
                value: c.mean,
            });
        }
        for r in &records {
            log::debug!("step {} {} {} = {:.5}", r.step, r.split, r.metric, r.value);
        }
        self.state.history.extend(records);

        let p = report.value(Behavior::Purchase, Metric::Ndcg, 10).unwrap_or(0.0);
        let c = report.value(Behavior::Click, Metric::Ndcg, 10).unwrap_or(0.0);
        let improved = match &self.state.best {
            None => true,
            Some(b) => p > b.purchase_ndcg10 || (p == b.purchase_ndcg10 && c > b.click_ndcg10),
        };
        if improved {
            self.state.best = Some(BestSnapshot {
                step,
                purchase_ndcg10: p,
                click_ndcg10: c,
                network: self.model.serving().clone(),
            });
            self.state.evals_without_improvement = 0;
        } else {
            self.state.evals_without_improvement += 1;
            if let Some(patience) = self.config.patience {
                if self.state.evals_without_improvement >= patience {
                    log::info!("early stop at step {step}: {patience} evaluations without improvement");
                    self.state.stopped_early = true;
                }
            }
        }
        Ok(report)
    }

    /// Runs until `max_updates` or early stop.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Runs at most `n` more updates.
    pub fn run_for(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        let (best, best_step) = match &self.state.best {
            Some(b) => (b.network.clone(), b.step),
            None => (self.model.serving().clone(), self.state.step),
        };
        TrainOutcome {
            variant: self.variant,
            best,
            best_step,
            steps: self.state.step,
            stopped_early: self.state.stopped_early,
            history: self.state.history,
            model: self.model,
        }
    }
}

/// Trains `variant` on the training split, validating on the validation
/// split, and returns the best copy-A snapshot.
pub fn train(
    variant: Variant,
    config: &TrainConfig,
    encoder: &EncoderConfig,
    schema: &RewardSchema,
    split: &DatasetSplit,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(
        variant,
        config.clone(),
        encoder,
        *schema,
        &split.train,
        split.validation.clone(),
    )?;
    trainer.run()?;
    Ok(trainer.finish())
}
