//! Stop a run, save a checkpoint, and continue it bit-exactly.
//!
//! cargo run --example resume

use sqnrec::data::{split_sessions, RewardSchema, SplitRatios};
use sqnrec::encoder::EncoderConfig;
use sqnrec::synthetic::{generate, SyntheticSpec};
use sqnrec::train::{Checkpoint, TrainConfig, Trainer, Variant};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_items: 40, n_sessions: 300, ..Default::default() };
    let split = split_sessions(&generate(&spec)?, SplitRatios::default(), 0)?;
    let encoder = EncoderConfig { n_items: 40, embed_dim: 16, hidden_dim: 16, ..Default::default() };
    let config = TrainConfig { max_updates: 60, eval_every: 20, batch_size: 32, ..Default::default() };
    let new = || Trainer::new(Variant::Sqn, config.clone(), &encoder, RewardSchema::default(), &split.train, split.validation.clone());

    let mut straight = new()?;
    straight.run()?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.json");
    let mut first = new()?;
    first.run_for(25)?;
    first.save(&path)?;
    println!("saved at step {} ({} bytes)", first.state.step, std::fs::metadata(&path)?.len());

    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path)?, &split.train, split.validation.clone())?;
    resumed.run()?;
    println!("resumed to step {}; identical to uninterrupted run: {}", resumed.state.step, resumed.model == straight.model);
    Ok(())
}
