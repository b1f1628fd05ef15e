//! Actor-critic training with a self-attention encoder: SQN warm-up for T
//! updates, then cross-entropy weighted by the detached Q value.
//!
//! cargo run --release --example train_sac

use sqnrec::data::{split_sessions, RewardSchema, SplitRatios};
use sqnrec::encoder::{EncoderConfig, EncoderKind};
use sqnrec::synthetic::{generate, SyntheticSpec};
use sqnrec::train::{TrainConfig, Trainer, Variant};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_items: 80, n_sessions: 1000, ..Default::default() };
    let split = split_sessions(&generate(&spec)?, SplitRatios::default(), 1)?;
    let encoder = EncoderConfig {
        n_items: 80,
        embed_dim: 32,
        hidden_dim: 32,
        kind: EncoderKind::SelfAttention,
        attention_heads: 2,
        ..Default::default()
    };
    let config = TrainConfig {
        max_updates: 200,
        eval_every: 50,
        batch_size: 64,
        sac_threshold: Some(100),
        ..Default::default()
    };
    let mut trainer = Trainer::new(
        Variant::Sac,
        config,
        &encoder,
        RewardSchema::default(),
        &split.train,
        split.validation.clone(),
    )?;
    while !trainer.is_finished() {
        let l = trainer.step()?;
        if trainer.state.step % 25 == 0 {
            let phase = if l.actor.is_some() { "actor" } else { "warm-up" };
            println!(
                "step {:>3} {phase:<8} loss {:.4} ce {:.4} td {:.4}",
                trainer.state.step,
                l.loss,
                l.ce.unwrap_or(f64::NAN),
                l.td.unwrap_or(f64::NAN)
            );
        }
    }
    let out = trainer.finish();
    for r in out.history.iter().filter(|r| r.metric == "purchase_ndcg@10") {
        println!("validation step {:>3} purchase NDCG@10 {:.4}", r.step, r.value);
    }
    Ok(())
}
