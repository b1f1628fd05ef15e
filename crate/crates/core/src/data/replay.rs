use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Behavior, DatasetSplit, RewardSchema, Session, SessionSet};
use crate::error::{Error, Result};

/// One logged transition: the last `max_len` items before the target, the
/// target item as the action, and the state after taking it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayTuple {
    pub state: Vec<usize>,
    pub state_len: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<usize>,
    pub next_state_len: usize,
    pub terminal: bool,
    pub behavior: Behavior,
}

impl ReplayTuple {
    /// Real (non-padding) items of the state, oldest first.
    pub fn state_items(&self) -> &[usize] {
        &self.state[self.state.len() - self.state_len..]
    }

    pub fn next_state_items(&self) -> &[usize] {
        &self.next_state[self.next_state.len() - self.next_state_len..]
    }
}

/// Left-pads `items` (oldest first) to `max_len`, keeping the most recent
/// `max_len` items.
pub fn padded_window(items: &[usize], max_len: usize, pad_item: usize) -> (Vec<usize>, usize) {
    let len = items.len().min(max_len);
    let mut state = vec![pad_item; max_len - len];
    state.extend_from_slice(&items[items.len() - len..]);
    (state, len)
}

/// One tuple per target position; empty for sessions shorter than 2.
pub fn build_replay_tuples(
    session: &Session,
    max_len: usize,
    pad_item: usize,
    schema: &RewardSchema,
) -> Vec<ReplayTuple> {
    let items: Vec<usize> = session.items().collect();
    let m = items.len();
    if m < 2 || max_len == 0 {
        return Vec::new();
    }
    (1..m)
        .map(|t| {
            let (state, state_len) = padded_window(&items[..t], max_len, pad_item);
            let (next_state, next_state_len) = padded_window(&items[..=t], max_len, pad_item);
            let behavior = session.events[t].behavior;
            ReplayTuple {
                state,
                state_len,
                action: items[t],
                reward: schema.reward(behavior),
                next_state,
                next_state_len,
                terminal: t == m - 1,
                behavior,
            }
        })
        .collect()
}

/// Static replay buffer over a session set. `session_items[k]` holds the
/// sorted distinct items of the session that produced tuple `k`'s source
/// session `tuple_session[k]`, for negative sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub tuples: Vec<ReplayTuple>,
    pub tuple_session: Vec<usize>,
    pub session_items: Vec<Vec<usize>>,
    pub n_items: usize,
    pub max_len: usize,
    pub skipped_sessions: usize,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn pad_item(&self) -> usize {
        self.n_items
    }

    pub fn items_of(&self, tuple: usize) -> &[usize] {
        &self.session_items[self.tuple_session[tuple]]
    }
}

pub fn build_replay_buffer(set: &SessionSet, max_len: usize, schema: &RewardSchema) -> ReplayBuffer {
    let mut tuples = Vec::new();
    let mut tuple_session = Vec::new();
    let mut session_items = Vec::new();
    let mut skipped = 0;
    for session in &set.sessions {
        let built = build_replay_tuples(session, max_len, set.pad_item(), schema);
        if built.is_empty() {
            skipped += 1;
            continue;
        }
        let mut items: Vec<usize> = session.items().collect();
        items.sort_unstable();
        items.dedup();
        let sid = session_items.len();
        session_items.push(items);
        tuple_session.extend(std::iter::repeat_n(sid, built.len()));
        tuples.extend(built);
    }
    if skipped > 0 {
        warn!("skipped {skipped} sessions shorter than 2 events");
    }
    ReplayBuffer {
        tuples,
        tuple_session,
        session_items,
        n_items: set.n_items,
        max_len,
        skipped_sessions: skipped,
    }
}

/// Table-1 style counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub items: usize,
    pub clicks: usize,
    pub purchases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Description of a preprocessed dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_items: usize,
    pub pad_item: usize,
    pub max_len: usize,
    pub schema: RewardSchema,
    pub stats: DatasetStats,
    pub split_sizes: SplitSizes,
    pub train_tuples: usize,
    pub session_files: SplitFiles,
    pub item_map: String,
    pub shards: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    pub validation: String,
    pub test: String,
}

impl Manifest {
    pub const VERSION: u32 = 1;

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let m: Manifest = serde_json::from_reader(File::open(path.as_ref())?)?;
        if m.format_version != Self::VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Writes the training replay tuples as JSON-lines shards and returns the
/// shard file names (relative to `dir`).
pub fn write_replay_shards(
    buffer: &ReplayBuffer,
    dir: impl AsRef<Path>,
    shard_size: usize,
) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let shard_size = shard_size.max(1);
    let mut names = Vec::new();
    for (i, chunk) in buffer.tuples.chunks(shard_size).enumerate() {
        let name = format!("replay-{i:05}.jsonl");
        let mut w = BufWriter::new(File::create(dir.join(&name))?);
        for t in chunk {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        names.push(name);
    }
    Ok(names)
}

pub(crate) fn split_sizes(split: &DatasetSplit) -> SplitSizes {
    SplitSizes {
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
    }
}
