//! Declarative experiments: TOML configuration with flag overrides, run
//! directories, repeats, sweeps and significance comparisons.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_dataset, split_sessions, DatasetSplit, RewardSchema, SessionSet, SplitRatios};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate_repeats, compare_reports, rolling_evaluate, Comparison, EvalOptions, MetricsReport, NetworkScorer};
use crate::synthetic::{generate_from_chain, generate_range, Chain, SyntheticSpec};
use crate::train::{write_metrics_jsonl, Checkpoint, TrainConfig, TrainOutcome, Trainer, Variant};

/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SQNREC_OUTPUT_ROOT";

pub const CONFIG_FILE: &str = "config.toml";
pub const META_FILE: &str = "meta.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARE_FILE: &str = "compare.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Generated sessions; repeat `r` uses `spec.seed + r`.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        /// When positive, test on this many fresh sessions from the same
        /// chain instead of the test split.
        #[serde(default)]
        held_out_sessions: usize,
    },
    /// A directory written by `preprocess`.
    Preprocessed { dir: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            spec: SyntheticSpec::default(),
            held_out_sessions: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `r_purchase / r_click`, keeping `r_click` fixed.
    RewardRatio,
    Gamma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: Variant,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub save_checkpoints: bool,
    /// Cap on scored test events.
    pub test_max_events: Option<usize>,
    pub reward: RewardSchema,
    pub dataset: DatasetConfig,
    /// `n_items = 0` takes the item count from the data.
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            variant: Variant::Sqn,
            repeats: 5,
            output_dir: PathBuf::from("runs"),
            save_checkpoints: true,
            test_max_events: None,
            reward: RewardSchema::default(),
            dataset: DatasetConfig::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.reward.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            for &v in &s.values {
                self.with_sweep_value(s.axis, v)?.reward.validate()?;
            }
        }
        if let DatasetConfig::Synthetic { spec, .. } = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// Copy with one sweep value applied.
    pub fn with_sweep_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::RewardRatio => c.reward.r_purchase = c.reward.r_click * value,
            SweepAxis::Gamma => c.reward.gamma = value,
        }
        c.reward.validate()?;
        Ok(c)
    }

    /// Output directory with the output-root variable applied to relative
    /// paths.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Command-line values that replace file values when present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub name: Option<String>,
    pub variant: Option<Variant>,
    pub repeats: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub reward_ratio: Option<f64>,
    pub r_click: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_updates: Option<u64>,
    pub eval_every: Option<u64>,
    pub sac_threshold: Option<u64>,
    pub n_negatives: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub embed_dim: Option<usize>,
    pub data_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = &self.$field {
                    $target = v.clone();
                }
            };
        }
        set!(name => cfg.name);
        set!(variant => cfg.variant);
        set!(repeats => cfg.repeats);
        set!(output_dir => cfg.output_dir);
        set!(seed => cfg.train.seed);
        set!(gamma => cfg.reward.gamma);
        set!(r_click => cfg.reward.r_click);
        set!(learning_rate => cfg.train.learning_rate);
        set!(batch_size => cfg.train.batch_size);
        set!(max_updates => cfg.train.max_updates);
        set!(eval_every => cfg.train.eval_every);
        set!(n_negatives => cfg.train.n_negatives);
        set!(hidden_dim => cfg.model.hidden_dim);
        set!(embed_dim => cfg.model.embed_dim);
        if let Some(t) = self.sac_threshold {
            cfg.train.sac_threshold = Some(t);
        }
        // applied after r_click so the ratio refers to the final click reward
        if let Some(ratio) = self.reward_ratio {
            cfg.reward.r_purchase = cfg.reward.r_click * ratio;
        }
        if let Some(dir) = &self.data_dir {
            cfg.dataset = DatasetConfig::Preprocessed { dir: dir.clone() };
        }
    }
}

/// Data for one repeat.
pub struct RepeatData {
    pub split: DatasetSplit,
    /// Sessions scored for the final report.
    pub test: SessionSet,
    pub chain: Option<Chain>,
}

pub fn load_repeat_data(cfg: &ExperimentConfig, repeat: usize) -> Result<RepeatData> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            spec,
            held_out_sessions,
        } => {
            let spec = SyntheticSpec {
                seed: spec.seed + repeat as u64,
                ..spec.clone()
            };
            let chain = spec.chain()?;
            let set = generate_from_chain(&spec, &chain);
            let split = split_sessions(&set, SplitRatios::default(), spec.seed)?;
            let test = if *held_out_sessions > 0 {
                generate_range(&spec, &chain, spec.n_sessions..spec.n_sessions + held_out_sessions)
            } else {
                split.test.clone()
            };
            Ok(RepeatData {
                split,
                test,
                chain: Some(chain),
            })
        }
        DatasetConfig::Preprocessed { dir } => {
            let (_, split) = read_dataset(dir)?;
            let test = split.test.clone();
            Ok(RepeatData {
                split,
                test,
                chain: None,
            })
        }
    }
}

fn encoder_for(cfg: &ExperimentConfig, n_items: usize) -> Result<EncoderConfig> {
    let mut enc = cfg.model.clone();
    if enc.n_items == 0 {
        enc.n_items = n_items;
    } else if enc.n_items != n_items {
        return Err(Error::Shape(format!(
            "model.n_items = {} but the data has {n_items} items",
            enc.n_items
        )));
    }
    Ok(enc)
}

pub fn repeat_train_config(cfg: &ExperimentConfig, repeat: usize) -> TrainConfig {
    TrainConfig {
        seed: cfg.train.seed + repeat as u64,
        ..cfg.train.clone()
    }
}

pub fn checkpoint_path(run_dir: &Path, repeat: usize) -> PathBuf {
    run_dir.join(format!("checkpoint-r{repeat}.json"))
}

pub fn metrics_path(run_dir: &Path, repeat: usize) -> PathBuf {
    run_dir.join(format!("metrics-r{repeat}.jsonl"))
}

pub struct RepeatResult {
    pub repeat: usize,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

/// How to run one repeat.
#[derive(Clone, Copy, Debug, Default)]
pub struct RepeatControl {
    /// Continue from the repeat's checkpoint in the run directory.
    pub resume: bool,
    /// Save a checkpoint and stop after this many updates in this call.
    pub stop_after: Option<u64>,
    /// Replace `max_updates` of a resumed run.
    pub max_updates: Option<u64>,
}

/// Trains and tests one repeat. Returns `None` when stopped early by
/// `control.stop_after`.
pub fn run_repeat(
    cfg: &ExperimentConfig,
    repeat: usize,
    run_dir: Option<&Path>,
    control: RepeatControl,
) -> Result<Option<RepeatResult>> {
    let data = load_repeat_data(cfg, repeat)?;
    let mut trainer = if control.resume {
        let dir = run_dir.ok_or_else(|| Error::Config("resume needs a run directory".into()))?;
        let ck = Checkpoint::load(checkpoint_path(dir, repeat))?;
        let mut t = Trainer::from_checkpoint(ck, &data.split.train, data.split.validation.clone())?;
        if let Some(m) = control.max_updates {
            t.config.max_updates = m;
        }
        t
    } else {
        let enc = encoder_for(cfg, data.split.n_items())?;
        Trainer::new(
            cfg.variant,
            repeat_train_config(cfg, repeat),
            &enc,
            cfg.reward,
            &data.split.train,
            data.split.validation.clone(),
        )?
    };
    log::info!(
        "repeat {repeat}: {} {} tuples, step {}",
        trainer.variant,
        trainer.buffer().len(),
        trainer.state.step
    );

    match control.stop_after {
        Some(n) => trainer.run_for(n)?,
        None => trainer.run()?,
    }
    if let Some(dir) = run_dir {
        write_metrics_jsonl(&trainer.state.history, metrics_path(dir, repeat))?;
        if cfg.save_checkpoints || control.stop_after.is_some() {
            trainer.save(checkpoint_path(dir, repeat))?;
        }
    }
    if !trainer.is_finished() {
        return Ok(None);
    }
    let outcome = trainer.finish();
    let report = test_report(cfg, &outcome, &data)?;
    Ok(Some(RepeatResult {
        repeat,
        outcome,
        report,
    }))
}

fn test_report(cfg: &ExperimentConfig, outcome: &TrainOutcome, data: &RepeatData) -> Result<MetricsReport> {
    let scorer = NetworkScorer::new(&outcome.best, outcome.variant.score_source());
    rolling_evaluate(
        &scorer,
        &data.test,
        &cfg.train.ks,
        outcome.model.config.max_len,
        EvalOptions {
            max_events: cfg.test_max_events,
            ..EvalOptions::all()
        },
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub crate_version: String,
    pub variant: Variant,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub best_steps: Vec<u64>,
    pub steps: Vec<u64>,
}

pub struct ExperimentResult {
    pub repeats: Vec<RepeatResult>,
    pub report: MetricsReport,
}

fn prepare_run_dir(cfg: &ExperimentConfig, run_dir: &Path) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

/// Runs every repeat and, with a run directory, writes the resolved config,
/// metrics logs, checkpoints and the aggregated report.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: Option<&Path>) -> Result<ExperimentResult> {
    run_experiment_with(cfg, run_dir, RepeatControl::default())
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    run_dir: Option<&Path>,
    control: RepeatControl,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if let (Some(dir), false) = (run_dir, control.resume) {
        prepare_run_dir(cfg, dir)?;
    }
    let results: Vec<Option<RepeatResult>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_repeat(cfg, r, run_dir, control))
        .collect::<Result<_>>()?;
    if results.iter().any(Option::is_none) {
        return Err(Error::Config(format!(
            "run stopped after {} updates; resume it to finish",
            control.stop_after.unwrap_or(0)
        )));
    }
    let repeats: Vec<RepeatResult> = results.into_iter().flatten().collect();
    let reports: Vec<MetricsReport> = repeats.iter().map(|r| r.report.clone()).collect();
    let report = aggregate_repeats(&reports)?;
    if let Some(dir) = run_dir {
        let meta = RunMeta {
            name: cfg.name.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            variant: cfg.variant,
            repeats: cfg.repeats,
            seeds: (0..cfg.repeats).map(|r| repeat_train_config(cfg, r).seed).collect(),
            best_steps: repeats.iter().map(|r| r.outcome.best_step).collect(),
            steps: repeats.iter().map(|r| r.outcome.steps).collect(),
        };
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
        fs::write(dir.join(TABLE_FILE), MetricsReport::table_csv(&[(&cfg.name, &report)])?)?;
    }
    Ok(ExperimentResult { repeats, report })
}

/// Resumes every repeat of a run directory from its checkpoint.
pub fn resume_experiment(run_dir: &Path, max_updates: Option<u64>, stop_after: Option<u64>) -> Result<ExperimentResult> {
    let cfg = ExperimentConfig::load(run_dir.join(CONFIG_FILE))?;
    run_experiment_with(
        &cfg,
        Some(run_dir),
        RepeatControl {
            resume: true,
            stop_after,
            max_updates,
        },
    )
}

/// Re-scores the best snapshot stored in each checkpoint of a run.
pub fn evaluate_run(run_dir: &Path, on_validation: bool) -> Result<MetricsReport> {
    let cfg = ExperimentConfig::load(run_dir.join(CONFIG_FILE))?;
    let mut reports = Vec::new();
    for r in 0..cfg.repeats {
        let ck = Checkpoint::load(checkpoint_path(run_dir, r))?;
        let data = load_repeat_data(&cfg, r)?;
        let network = match &ck.state.best {
            Some(b) => &b.network,
            None => ck.model.serving(),
        };
        let sessions = if on_validation { &data.split.validation } else { &data.test };
        let scorer = NetworkScorer::new(network, ck.variant.score_source());
        let options = EvalOptions {
            max_events: if on_validation {
                ck.config.eval_max_events
            } else {
                cfg.test_max_events
            },
            ..EvalOptions::all()
        };
        reports.push(rolling_evaluate(&scorer, sessions, &ck.config.ks, ck.model.config.max_len, options)?);
    }
    aggregate_repeats(&reports)
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub repeat: usize,
    pub behavior: String,
    pub metric: String,
    pub k: usize,
    pub score: f64,
}

pub const SWEEP_COLUMNS: [&str; 6] = ["value", "repeat", "behavior", "metric", "k", "score"];

/// Trains every repeat at every sweep value, in ascending value order.
pub fn run_sweep(cfg: &ExperimentConfig, run_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no [sweep] block in the configuration".into()))?;
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if let Some(dir) = run_dir {
        prepare_run_dir(cfg, dir)?;
    }
    let mut rows = Vec::new();
    for v in values {
        let mut c = cfg.with_sweep_value(sweep.axis, v)?;
        c.sweep = None;
        c.save_checkpoints = false;
        let sub = run_dir.map(|d| d.join(format!("value-{v}")));
        let result = run_experiment(&c, sub.as_deref())?;
        for cell in &result.report.cells {
            for (repeat, &score) in cell.values.iter().enumerate() {
                rows.push(SweepRow {
                    value: v,
                    repeat,
                    behavior: cell.behavior.to_string(),
                    metric: cell.metric.label().to_lowercase(),
                    k: cell.k,
                    score,
                });
            }
        }
    }
    if let Some(dir) = run_dir {
        fs::write(dir.join(SWEEP_FILE), sweep_csv(&rows)?)?;
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.repeat.to_string(),
            r.behavior.clone(),
            r.metric.clone(),
            r.k.to_string(),
            r.score.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_report(run_dir: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(run_dir.join(REPORT_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Paired comparison of two finished runs with the same repeat count.
pub fn compare_runs(variant_dir: &Path, baseline_dir: &Path, alpha: f64) -> Result<Comparison> {
    compare_reports(&read_report(variant_dir)?, &read_report(baseline_dir)?, alpha)
}
