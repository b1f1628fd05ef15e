//! Rolling HR@k / NDCG@k for any scorer: here the true next-item
//! distribution of the generating chain, an upper reference for learned
//! models.
//!
//! cargo run --example evaluate

use sqnrec::eval::{rank_of, rolling_evaluate, EvalOptions, MetricsReport};
use sqnrec::synthetic::{generate_from_chain, OracleScorer, SyntheticSpec};

fn main() -> sqnrec::Result<()> {
    let spec = SyntheticSpec { n_sessions: 800, ..Default::default() };
    let chain = spec.chain()?;
    let sessions = generate_from_chain(&spec, &chain);

    let report = rolling_evaluate(&OracleScorer { chain: &chain }, &sessions, &[5, 10, 20], 10, EvalOptions::all())?;
    print!("{}", report.render());
    println!();
    println!("{}", MetricsReport::table_csv(&[("oracle", &report)])?);

    // ties go to the lower item index
    let scores = ndarray::array![0.2, 0.7, 0.2, 0.1];
    println!("rank of item 2 among {scores}: {}", rank_of(scores.view(), 2));
    Ok(())
}
