//! Sweep the purchase/click reward ratio with repeated seeds.
//!
//! cargo run --release --example sweep

use sqnrec::experiment::{run_sweep, sweep_csv, DatasetConfig, ExperimentConfig, SweepAxis, SweepConfig};
use sqnrec::synthetic::SyntheticSpec;

fn main() -> sqnrec::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.repeats = 2;
    cfg.save_checkpoints = false;
    cfg.dataset = DatasetConfig::Synthetic {
        spec: SyntheticSpec { n_items: 60, n_sessions: 600, ..Default::default() },
        held_out_sessions: 500,
    };
    cfg.model.embed_dim = 16;
    cfg.model.hidden_dim = 16;
    cfg.train.max_updates = 100;
    cfg.train.eval_every = 50;
    cfg.train.batch_size = 64;
    cfg.sweep = Some(SweepConfig { axis: SweepAxis::RewardRatio, values: vec![1.0, 5.0, 20.0] });

    let dir = tempfile::tempdir()?;
    let rows = run_sweep(&cfg, Some(dir.path()))?;
    let csv = sweep_csv(&rows)?;
    for line in csv.lines().filter(|l| l.starts_with("value") || l.contains(",purchase,hr,10,")) {
        println!("{line}");
    }
    Ok(())
}
