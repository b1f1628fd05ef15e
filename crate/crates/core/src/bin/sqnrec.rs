use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sqnrec::data::{
    load_sessions, preprocess, split_sessions, write_dataset, write_sessions, DatasetStats, InputFormat,
    PreprocessConfig, RewardSchema, SplitRatios, StoreOptions,
};
use sqnrec::eval::MetricsReport;
use sqnrec::experiment::{
    compare_runs, evaluate_run, resolve_output, resume_experiment, run_experiment_with, run_sweep,
    ExperimentConfig, Overrides, RepeatControl, SweepAxis, SweepConfig, COMPARE_FILE,
};
use sqnrec::synthetic::{generate, SyntheticSpec};
use sqnrec::train::Variant;
use sqnrec::{Error, Result};

#[derive(Parser)]
#[command(name = "sqnrec", version, about = "Train and evaluate SQN/SAC sequential recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, split and index a raw session log into a dataset directory.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic session log from a random Markov chain.
    Synth(SynthArgs),
    /// Train one experiment (all repeats), or resume one.
    Train(TrainArgs),
    /// Re-score the best checkpoints of a finished run.
    Eval(EvalArgs),
    /// Train across values of the reward ratio or discount factor.
    Sweep(SweepArgs),
    /// Paired significance test between two finished runs.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Tsv,
}

impl From<Format> for InputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => InputFormat::Csv,
            Format::Tsv => InputFormat::Tsv,
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Log with columns session_id, timestamp, item_id, behavior.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long)]
    min_item_count: Option<usize>,
    /// Keep a random subset of this many sessions.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    r_click: f64,
    #[arg(long, default_value_t = 5.0)]
    reward_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    n_sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// Flags shared by train and sweep; each replaces the config file value.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML experiment file; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Run directory; relative paths go under $SQNREC_OUTPUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train on a directory written by `preprocess`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// r_purchase / r_click.
    #[arg(long)]
    reward_ratio: Option<f64>,
    #[arg(long)]
    r_click: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_updates: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    sac_threshold: Option<u64>,
    #[arg(long)]
    n_negatives: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Overrides {
            name: self.name.clone(),
            variant: self.variant,
            repeats: self.repeats,
            output_dir: None,
            seed: self.seed,
            gamma: self.gamma,
            reward_ratio: self.reward_ratio,
            r_click: self.r_click,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_updates: self.max_updates,
            eval_every: self.eval_every,
            sac_threshold: self.sac_threshold,
            n_negatives: self.n_negatives,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            data_dir: self.data.clone(),
        }
        .apply(&mut cfg);
        cfg.validate()?;
        let dir = match &self.out {
            Some(d) => resolve_output(d),
            None => cfg.resolved_output_dir().join(&cfg.name),
        };
        Ok((cfg, dir))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue the run in this directory from its checkpoints.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    /// Save checkpoints and stop after this many more updates.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Score the validation split instead of the test sessions.
    #[arg(long)]
    validation: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    RewardRatio,
    Gamma,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, requires = "values")]
    axis: Option<Axis>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    variant: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// CSV path; defaults to compare.csv in the variant run.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_stats(s: &DatasetStats) {
    println!("{:<12}{:>10}", "sequences", s.sequences);
    println!("{:<12}{:>10}", "items", s.items);
    println!("{:<12}{:>10}", "clicks", s.clicks);
    println!("{:<12}{:>10}", "purchases", s.purchases);
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let raw = load_sessions(&a.input, a.format.into())?;
    let cfg = PreprocessConfig {
        min_session_len: a.min_len,
        min_item_count: a.min_item_count,
        sample_n: a.sample,
    };
    let set = preprocess(&raw, &cfg, a.seed)?;
    let split = split_sessions(&set, SplitRatios::default(), a.seed)?;
    let schema = RewardSchema::new(a.r_click, a.r_click * a.reward_ratio, a.gamma)?;
    let options = StoreOptions {
        max_len: a.max_len,
        schema,
        seed: a.seed,
        ..Default::default()
    };
    let out = resolve_output(&a.out);
    let manifest = write_dataset(&set, &split, &out, &options)?;
    print_stats(&manifest.stats);
    println!(
        "split       {} / {} / {}   replay tuples {}",
        manifest.split_sizes.train, manifest.split_sizes.validation, manifest.split_sizes.test, manifest.train_tuples
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::load_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.n_items {
        spec.n_items = n;
    }
    if let Some(n) = a.n_sessions {
        spec.n_sessions = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let set = generate(&spec)?;
    let out = resolve_output(&a.out);
    fs::create_dir_all(&out)?;
    let (name, format) = match a.format {
        Format::Csv => ("sessions.csv", InputFormat::Csv),
        Format::Tsv => ("sessions.tsv", InputFormat::Tsv),
    };
    write_sessions(&set, out.join(name), format)?;
    spec.save_json(out.join("spec.json"))?;
    print_stats(&set.stats());
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn print_report(report: &MetricsReport) {
    print!("{}", report.render());
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let result = match &a.resume {
        Some(dir) => {
            let dir = resolve_output(dir);
            resume_experiment(&dir, a.config.max_updates, a.stop_after)
        }
        None => {
            let (cfg, dir) = a.config.resolve()?;
            println!("run directory {}", dir.display());
            run_experiment_with(
                &cfg,
                Some(&dir),
                RepeatControl {
                    stop_after: a.stop_after,
                    ..Default::default()
                },
            )
        }
    };
    match result {
        Ok(r) => {
            print_report(&r.report);
            Ok(())
        }
        Err(Error::Config(m)) if a.stop_after.is_some() && m.starts_with("run stopped") => {
            println!("{m}");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dir = resolve_output(&a.run);
    let report = evaluate_run(&dir, a.validation)?;
    let name = if a.validation { "eval-validation.json" } else { "eval-test.json" };
    fs::write(dir.join(name), serde_json::to_string_pretty(&report)?)?;
    print_report(&report);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (mut cfg, dir) = a.config.resolve()?;
    if let (Some(axis), Some(values)) = (a.axis, a.values) {
        let axis = match axis {
            Axis::RewardRatio => SweepAxis::RewardRatio,
            Axis::Gamma => SweepAxis::Gamma,
        };
        cfg.sweep = Some(SweepConfig { axis, values });
    }
    println!("run directory {}", dir.display());
    let rows = run_sweep(&cfg, Some(&dir))?;
    println!("{} rows written to {}", rows.len(), dir.join(sqnrec::experiment::SWEEP_FILE).display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let variant = resolve_output(&a.variant);
    let baseline = resolve_output(&a.baseline);
    let cmp = compare_runs(&variant, &baseline, a.alpha)?;
    let out = a.out.map(|p| resolve_output(&p)).unwrap_or_else(|| variant.join(COMPARE_FILE));
    let csv = cmp.to_csv()?;
    write_file(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "category": e.category(), "message": e.to_string() }
            });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
