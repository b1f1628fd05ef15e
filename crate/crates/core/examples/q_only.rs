//! Ranking straight from the Q head, trained with TD loss and sampled
//! unseen items as zero-reward negatives.
//!
//! cargo run --release --example q_only

use sqnrec::data::{split_sessions, Behavior, RewardSchema, SplitRatios};
use sqnrec::encoder::EncoderConfig;
use sqnrec::eval::Metric;
use sqnrec::synthetic::{generate, SyntheticSpec};
use sqnrec::train::{TrainConfig, Trainer, Variant};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_items: 100, n_sessions: 1200, ..Default::default() };
    let split = split_sessions(&generate(&spec)?, SplitRatios::default(), 0)?;
    let encoder = EncoderConfig { n_items: 100, embed_dim: 32, hidden_dim: 32, ..Default::default() };
    let config = TrainConfig { max_updates: 200, eval_every: 100, batch_size: 128, n_negatives: 2, ..Default::default() };

    let mut trainer =
        Trainer::new(Variant::QOnly, config, &encoder, RewardSchema::default(), &split.train, split.validation.clone())?;
    let first = trainer.step()?;
    println!("TD terms per update: {} (batch x (1 + negatives))", first.td_terms);
    trainer.run()?;
    let report = trainer.validate()?;
    println!(
        "validation purchase NDCG@10 {:.4}, click NDCG@10 {:.4}",
        report.value(Behavior::Purchase, Metric::Ndcg, 10).unwrap(),
        report.value(Behavior::Click, Metric::Ndcg, 10).unwrap()
    );
    Ok(())
}
