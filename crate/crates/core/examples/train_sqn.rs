//! Train SQN and the supervised baseline on the same synthetic split.
//!
//! cargo run --release --example train_sqn

use sqnrec::data::{split_sessions, Behavior, RewardSchema, SplitRatios};
use sqnrec::encoder::EncoderConfig;
use sqnrec::eval::{rolling_evaluate, EvalOptions, Metric, NetworkScorer};
use sqnrec::synthetic::{generate, SyntheticSpec};
use sqnrec::train::{train, TrainConfig, Variant};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_items: 100, n_sessions: 1500, ..Default::default() };
    let split = split_sessions(&generate(&spec)?, SplitRatios::default(), 0)?;
    let encoder = EncoderConfig { n_items: 100, embed_dim: 32, hidden_dim: 32, ..Default::default() };
    let config = TrainConfig { max_updates: 300, eval_every: 100, batch_size: 128, ..Default::default() };
    let schema = RewardSchema::new(1.0, 5.0, 0.5)?;

    for variant in [Variant::SupervisedOnly, Variant::Sqn] {
        let out = train(variant, &config, &encoder, &schema, &split)?;
        let scorer = NetworkScorer::new(&out.best, variant.score_source());
        let report = rolling_evaluate(&scorer, &split.test, &config.ks, encoder.max_len, EvalOptions::all())?;
        println!(
            "{:<11} best step {:>4}  purchase NDCG@10 {:.4}  click NDCG@10 {:.4}",
            variant.as_str(),
            out.best_step,
            report.value(Behavior::Purchase, Metric::Ndcg, 10).unwrap(),
            report.value(Behavior::Click, Metric::Ndcg, 10).unwrap(),
        );
    }
    Ok(())
}
