use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Session, SessionSet};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_session_len: usize,
    /// Drop items with fewer interactions than this. Off for RC15-style logs.
    pub min_item_count: Option<usize>,
    /// Uniformly sample this many sessions after filtering.
    pub sample_n: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_session_len: 3,
            min_item_count: None,
            sample_n: None,
        }
    }
}

/// Item-frequency filter, then session-length filter, then optional seeded
/// sampling. Surviving items are re-indexed densely in order of first
/// appearance.
pub fn preprocess(set: &SessionSet, config: &PreprocessConfig, seed: u64) -> Result<SessionSet> {
    if config.min_session_len == 0 {
        return Err(Error::Config("min_session_len must be at least 1".into()));
    }
    let mut sessions: Vec<Session> = set.sessions.clone();

    if let Some(min_count) = config.min_item_count {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for item in sessions.iter().flat_map(|s| s.items()) {
            *counts.entry(item).or_default() += 1;
        }
        for s in &mut sessions {
            s.events.retain(|e| counts[&e.item] >= min_count);
        }
    }

    sessions.retain(|s| s.len() >= config.min_session_len);

    if let Some(n) = config.sample_n {
        if n < sessions.len() {
            let mut rng = substream(seed, Stream::Sample);
            let mut idx: Vec<usize> = (0..sessions.len()).collect();
            idx.shuffle(&mut rng);
            let mut keep: Vec<usize> = idx.into_iter().take(n).collect();
            keep.sort_unstable();
            sessions = keep.into_iter().map(|i| sessions[i].clone()).collect();
        }
    }

    if sessions.is_empty() {
        return Err(Error::EmptyDataset("preprocessing".into()));
    }
    Ok(reindex(set, sessions))
}

fn reindex(original: &SessionSet, mut sessions: Vec<Session>) -> SessionSet {
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut item_ids = Vec::new();
    for s in &mut sessions {
        for e in &mut s.events {
            let next = remap.len();
            e.item = *remap.entry(e.item).or_insert_with(|| {
                item_ids.push(
                    original
                        .item_ids
                        .get(e.item)
                        .cloned()
                        .unwrap_or_else(|| e.item.to_string()),
                );
                next
            });
        }
    }
    SessionSet {
        sessions,
        n_items: item_ids.len(),
        item_ids,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 8.0,
            validation: 1.0,
            test: 1.0,
        }
    }
}

/// Random whole-session split. Validation and test sizes are rounded to the
/// nearest session (at least one each); train takes the remainder.
pub fn split_sessions(set: &SessionSet, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let SplitRatios {
        train,
        validation,
        test,
    } = ratios;
    if !(train > 0.0 && validation > 0.0 && test > 0.0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let n = set.len();
    if n < 3 {
        return Err(Error::TooFewSessions { needed: 3, got: n });
    }
    let total = train + validation + test;
    let n_val = ((n as f64 * validation / total).round() as usize).max(1);
    let n_test = ((n as f64 * test / total).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::TooFewSessions {
            needed: n_val + n_test + 1,
            got: n,
        });
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, Stream::Split));
    let take = |range: &[usize]| {
        let mut keep = range.to_vec();
        keep.sort_unstable();
        set.with_sessions(keep.into_iter().map(|i| set.sessions[i].clone()).collect())
    };
    let n_train = n - n_val - n_test;
    Ok(DatasetSplit {
        train: take(&idx[..n_train]),
        validation: take(&idx[n_train..n_train + n_val]),
        test: take(&idx[n_train + n_val..]),
    })
}
