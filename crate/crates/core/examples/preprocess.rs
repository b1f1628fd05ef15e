//! Filter, split and store a raw session log, then read it back.
//!
//! cargo run --example preprocess

use sqnrec::data::{
    load_sessions, preprocess, read_dataset, split_sessions, write_dataset, write_sessions, InputFormat,
    PreprocessConfig, SplitRatios, StoreOptions,
};
use sqnrec::synthetic::{generate, SyntheticSpec};

fn main() -> sqnrec::Result<()> {
    let dir = tempfile::tempdir()?;
    let log = dir.path().join("events.csv");

    // any log with session_id,timestamp,item_id,behavior columns works here
    let spec = SyntheticSpec { n_sessions: 500, ..Default::default() };
    write_sessions(&generate(&spec)?, &log, InputFormat::Csv)?;

    let raw = load_sessions(&log, InputFormat::Csv)?;
    let set = preprocess(&raw, &PreprocessConfig { min_session_len: 3, ..Default::default() }, 0)?;
    let split = split_sessions(&set, SplitRatios::default(), 0)?;
    let manifest = write_dataset(&set, &split, dir.path().join("data"), &StoreOptions::default())?;

    println!("raw sessions     {}", raw.len());
    println!("after filtering  {:?}", manifest.stats);
    println!("split            {:?}", manifest.split_sizes);
    println!("replay tuples    {} in {} shard(s)", manifest.train_tuples, manifest.shards.len());

    let (_, again) = read_dataset(dir.path().join("data"))?;
    assert_eq!(again.train.len(), split.train.len());
    Ok(())
}
