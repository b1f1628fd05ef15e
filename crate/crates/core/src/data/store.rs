//! Preprocessed dataset directories: split session files, item map, replay
//! shards and a JSON manifest.

use std::fs;
use std::path::Path;

use super::load::{load_sessions_with_vocabulary, read_item_map, write_item_map, write_sessions, InputFormat};
use super::replay::{build_replay_buffer, split_sizes, write_replay_shards, Manifest, SplitFiles};
use super::{DatasetSplit, RewardSchema, SessionSet};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Settings recorded in the manifest of a dataset directory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoreOptions {
    pub max_len: usize,
    pub schema: RewardSchema,
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            max_len: 10,
            schema: RewardSchema::default(),
            shard_size: 100_000,
            seed: 0,
        }
    }
}

/// Writes `split` under `dir`. `full` is the filtered set before splitting
/// and provides the reported statistics.
pub fn write_dataset(
    full: &SessionSet,
    split: &DatasetSplit,
    dir: impl AsRef<Path>,
    options: &StoreOptions,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = SplitFiles {
        train: "train.tsv".into(),
        validation: "validation.tsv".into(),
        test: "test.tsv".into(),
    };
    write_sessions(&split.train, dir.join(&files.train), InputFormat::Tsv)?;
    write_sessions(&split.validation, dir.join(&files.validation), InputFormat::Tsv)?;
    write_sessions(&split.test, dir.join(&files.test), InputFormat::Tsv)?;
    let item_map = "items.tsv".to_string();
    write_item_map(full, dir.join(&item_map))?;
    let buffer = build_replay_buffer(&split.train, options.max_len, &options.schema);
    let shards = write_replay_shards(&buffer, dir, options.shard_size)?;
    let manifest = Manifest {
        format_version: Manifest::VERSION,
        n_items: full.n_items,
        pad_item: full.pad_item(),
        max_len: options.max_len,
        schema: options.schema,
        stats: full.stats(),
        split_sizes: split_sizes(split),
        train_tuples: buffer.len(),
        session_files: files,
        item_map,
        shards,
        seed: options.seed,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads a directory written by [`write_dataset`].
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, DatasetSplit)> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir.join(MANIFEST_FILE))?;
    let vocab = read_item_map(dir.join(&manifest.item_map))?;
    if vocab.len() != manifest.n_items {
        return Err(Error::Shape(format!(
            "item map has {} entries but the manifest declares {}",
            vocab.len(),
            manifest.n_items
        )));
    }
    let load = |name: &str| load_sessions_with_vocabulary(dir.join(name), InputFormat::Tsv, &vocab);
    let split = DatasetSplit {
        train: load(&manifest.session_files.train)?,
        validation: load(&manifest.session_files.validation)?,
        test: load(&manifest.session_files.test)?,
    };
    Ok((manifest, split))
}
