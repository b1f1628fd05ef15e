//! Session logs, filtering, splitting and replay-tuple construction.

mod load;
mod preprocess;
mod replay;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{
    load_sessions, load_sessions_with_vocabulary, read_item_map, write_item_map, write_sessions,
    InputFormat,
};
pub use store::{read_dataset, write_dataset, StoreOptions, MANIFEST_FILE};
pub use preprocess::{preprocess, split_sessions, PreprocessConfig, SplitRatios};
pub use replay::{
    build_replay_buffer, build_replay_tuples, padded_window, write_replay_shards, DatasetStats,
    Manifest, ReplayBuffer, ReplayTuple, SplitFiles, SplitSizes,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Click,
    Purchase,
}

impl Behavior {
    pub const ALL: [Behavior; 2] = [Behavior::Click, Behavior::Purchase];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Click => "click",
            Behavior::Purchase => "purchase",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behavior {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "click" | "clicks" | "view" => Ok(Behavior::Click),
            "purchase" | "purchases" | "buy" => Ok(Behavior::Purchase),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub item: usize,
    pub behavior: Behavior,
    pub timestamp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub events: Vec<Interaction>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().map(|e| e.item)
    }
}

/// A set of sessions over a dense item vocabulary `0..n_items`.
///
/// `item_ids[i]` is the raw identifier of dense item `i`. The padding item
/// is `n_items`, one past the last real item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSet {
    pub sessions: Vec<Session>,
    pub n_items: usize,
    pub item_ids: Vec<String>,
}

impl SessionSet {
    pub fn pad_item(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Same vocabulary, different sessions.
    pub fn with_sessions(&self, sessions: Vec<Session>) -> SessionSet {
        SessionSet {
            sessions,
            n_items: self.n_items,
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let mut clicks = 0;
        let mut purchases = 0;
        let mut seen = vec![false; self.n_items];
        for e in self.sessions.iter().flat_map(|s| &s.events) {
            match e.behavior {
                Behavior::Click => clicks += 1,
                Behavior::Purchase => purchases += 1,
            }
            if let Some(s) = seen.get_mut(e.item) {
                *s = true;
            }
        }
        DatasetStats {
            sequences: self.sessions.len(),
            items: seen.iter().filter(|&&s| s).count(),
            clicks,
            purchases,
        }
    }
}

/// Reward design: per-behavior immediate reward and the discount factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSchema {
    pub r_click: f64,
    pub r_purchase: f64,
    pub gamma: f64,
}

impl Default for RewardSchema {
    fn default() -> Self {
        RewardSchema {
            r_click: 1.0,
            r_purchase: 5.0,
            gamma: 0.5,
        }
    }
}

impl RewardSchema {
    pub fn new(r_click: f64, r_purchase: f64, gamma: f64) -> Result<Self> {
        let schema = RewardSchema {
            r_click,
            r_purchase,
            gamma,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Click reward fixed at 1, purchase reward equal to `ratio`.
    pub fn from_ratio(ratio: f64, gamma: f64) -> Result<Self> {
        Self::new(1.0, ratio, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_click > 0.0 && self.r_click.is_finite()) {
            return Err(Error::Config(format!("r_click must be positive, got {}", self.r_click)));
        }
        if !(self.r_purchase > 0.0 && self.r_purchase.is_finite()) {
            return Err(Error::Config(format!(
                "r_purchase must be positive, got {}",
                self.r_purchase
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn reward(&self, behavior: Behavior) -> f64 {
        match behavior {
            Behavior::Click => self.r_click,
            Behavior::Purchase => self.r_purchase,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.r_purchase / self.r_click
    }
}

/// Disjoint train / validation / test sessions sharing one vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: SessionSet,
    pub validation: SessionSet,
    pub test: SessionSet,
}

impl DatasetSplit {
    pub fn n_items(&self) -> usize {
        self.train.n_items
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn behavior_tokens() {
        assert_eq!("Click".parse::<Behavior>(), Ok(Behavior::Click));
        assert_eq!(" buy ".parse::<Behavior>(), Ok(Behavior::Purchase));
        assert!("refund".parse::<Behavior>().is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(RewardSchema::new(1.0, 5.0, 0.5).is_ok());
        assert!(RewardSchema::new(0.0, 5.0, 0.5).is_err());
        assert!(RewardSchema::new(1.0, 5.0, 1.5).is_err());
        assert_eq!(RewardSchema::from_ratio(5.0, 0.5).unwrap().ratio(), 5.0);
    }
}
