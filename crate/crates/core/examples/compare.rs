//! Paired t-test between two runs over matching seeds.
//!
//! cargo run --release --example compare

use sqnrec::experiment::{compare_runs, run_experiment, DatasetConfig, ExperimentConfig};
use sqnrec::synthetic::SyntheticSpec;
use sqnrec::train::Variant;

fn main() -> sqnrec::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::default();
    cfg.repeats = 3;
    cfg.save_checkpoints = false;
    cfg.dataset = DatasetConfig::Synthetic {
        spec: SyntheticSpec { n_items: 60, n_sessions: 600, ..Default::default() },
        held_out_sessions: 500,
    };
    cfg.model.embed_dim = 16;
    cfg.model.hidden_dim = 16;
    cfg.train.max_updates = 150;
    cfg.train.eval_every = 50;
    cfg.train.batch_size = 64;
    cfg.train.sac_threshold = Some(0);

    for variant in [Variant::SupervisedOnly, Variant::Sac] {
        cfg.variant = variant;
        run_experiment(&cfg, Some(&dir.path().join(variant.as_str())))?;
    }
    let cmp = compare_runs(&dir.path().join("sac"), &dir.path().join("supervised"), 0.05)?;
    print!("{}", cmp.to_csv()?);
    Ok(())
}
