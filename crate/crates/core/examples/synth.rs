//! Sample sessions from a Markov chain with item purchase propensities.
//!
//! cargo run --example synth

use sqnrec::data::{Behavior, RewardSchema};
use sqnrec::synthetic::{generate_from_chain, KernelSpec, PropensitySpec, SyntheticSpec};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec {
        n_items: 50,
        n_sessions: 1000,
        kernel: KernelSpec::Sparse { fanout: 5, purchasable_boost: 2.0 },
        propensity: PropensitySpec::Concentrated { fraction: 0.2, high: (0.4, 0.9), low: (0.0, 0.01) },
        seed: 7,
        ..Default::default()
    };
    let chain = spec.chain()?;
    let sessions = generate_from_chain(&spec, &chain);
    println!("{:?}", sessions.stats());

    let first = &sessions.sessions[0];
    let path: Vec<String> = first
        .events
        .iter()
        .map(|e| match e.behavior {
            Behavior::Purchase => format!("{}*", e.item),
            Behavior::Click => e.item.to_string(),
        })
        .collect();
    println!("session 0: {}   (* = purchase)", path.join(" -> "));

    let schema = RewardSchema::default();
    let mut best: Vec<(usize, f64)> = (0..spec.n_items).map(|i| (i, chain.expected_reward(&schema, i))).collect();
    best.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("highest expected rewards: {:?}", &best[..5]);
    Ok(())
}
