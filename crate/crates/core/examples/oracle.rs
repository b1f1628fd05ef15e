//! Compare a trained Q head with the chain's finite-horizon action values.
//!
//! cargo run --release --example oracle

use sqnrec::data::{padded_window, split_sessions, RewardSchema, SplitRatios};
use sqnrec::encoder::{EncoderConfig, SeqRef};
use sqnrec::synthetic::{critic_rank_agreement, generate_from_chain, SyntheticSpec};
use sqnrec::train::{train, TrainConfig, Variant};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_items: 60, n_sessions: 1500, ..Default::default() };
    let chain = spec.chain()?;
    let schema = RewardSchema::new(1.0, 5.0, 0.5)?;
    for h in 1..=3 {
        let q = chain.q_table(&schema, h)?;
        println!("horizon {h}: Q[0..5] = {:.3?}", &q.as_slice().unwrap()[..5]);
    }

    let split = split_sessions(&generate_from_chain(&spec, &chain), SplitRatios::default(), 0)?;
    let encoder = EncoderConfig { n_items: 60, embed_dim: 32, hidden_dim: 32, ..Default::default() };
    let config = TrainConfig { max_updates: 300, eval_every: 100, batch_size: 128, ..Default::default() };
    let out = train(Variant::Sqn, &config, &encoder, &schema, &split)?;

    let windows: Vec<(Vec<usize>, usize)> = split
        .test
        .sessions
        .iter()
        .take(50)
        .map(|s| {
            let items: Vec<usize> = s.items().collect();
            padded_window(&items[..items.len() - 1], encoder.max_len, spec.n_items)
        })
        .collect();
    let states: Vec<SeqRef> = windows.iter().map(|(w, l)| SeqRef::new(w, *l)).collect();
    let rho = critic_rank_agreement(&out.best, &chain, &schema, &states, 3)?;
    println!("mean Spearman rho between learned Q and horizon-3 oracle: {rho:.3}");
    Ok(())
}
