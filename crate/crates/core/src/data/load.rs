use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Behavior, Interaction, Session, SessionSet};
use crate::error::{Error, Result};

const COLUMNS: [&str; 4] = ["session_id", "timestamp", "item_id", "behavior"];

/// Delimited text with a header row naming at least the four columns
/// `session_id,timestamp,item_id,behavior` (any order, extra columns ignored).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormat {
    Csv,
    Tsv,
    Delimited(u8),
}

impl InputFormat {
    pub fn delimiter(self) -> u8 {
        match self {
            InputFormat::Csv => b',',
            InputFormat::Tsv => b'\t',
            InputFormat::Delimited(d) => d,
        }
    }
}

/// Reads a session log, grouping rows by session and sorting each session by
/// timestamp. Items are re-indexed densely in order of first appearance.
pub fn load_sessions(path: impl AsRef<Path>, format: InputFormat) -> Result<SessionSet> {
    let file = File::open(path.as_ref())?;
    read_sessions(file, format)
}

/// Like [`load_sessions`] but maps raw item ids through a fixed
/// vocabulary, so several files share one dense index. Unknown items are an
/// error.
pub fn load_sessions_with_vocabulary(
    path: impl AsRef<Path>,
    format: InputFormat,
    item_ids: &[String],
) -> Result<SessionSet> {
    let file = File::open(path.as_ref())?;
    read_sessions_impl(file, format, Some(item_ids))
}

pub(crate) fn read_sessions(reader: impl std::io::Read, format: InputFormat) -> Result<SessionSet> {
    read_sessions_impl(reader, format, None)
}

fn read_sessions_impl(
    reader: impl std::io::Read,
    format: InputFormat,
    vocabulary: Option<&[String]>,
) -> Result<SessionSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let [c_session, c_time, c_item, c_behavior] = idx;

    struct Row {
        timestamp: f64,
        raw_item: String,
        behavior: Behavior,
    }
    let known: Option<HashMap<String, usize>> = vocabulary.map(|v| {
        v.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect()
    });
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();

    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| {
            record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let session_id = field(c_session, "session_id")?.to_string();
        let ts_raw = field(c_time, "timestamp")?;
        let timestamp: f64 = ts_raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid timestamp `{ts_raw}`"),
        })?;
        if !timestamp.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite timestamp `{ts_raw}`"),
            });
        }
        let raw_item = field(c_item, "item_id")?.to_string();
        if raw_item.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty item_id".into(),
            });
        }
        if let Some(known) = &known {
            if !known.contains_key(&raw_item) {
                return Err(Error::Parse {
                    line,
                    message: format!("item `{raw_item}` is not in the item map"),
                });
            }
        }
        let token = field(c_behavior, "behavior")?;
        let behavior = token.parse::<Behavior>().map_err(|_| Error::UnknownBehavior {
            line,
            token: token.to_string(),
        })?;
        if !groups.contains_key(&session_id) {
            order.push(session_id.clone());
        }
        groups.entry(session_id).or_default().push(Row {
            timestamp,
            raw_item,
            behavior,
        });
    }

    let mut item_index: HashMap<String, usize> = known.unwrap_or_default();
    let mut item_ids: Vec<String> = vocabulary.map(|v| v.to_vec()).unwrap_or_default();
    let mut sessions = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).unwrap_or_default();
        rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let events = rows
            .into_iter()
            .map(|r| {
                let next = item_index.len();
                let item = *item_index.entry(r.raw_item.clone()).or_insert_with(|| {
                    item_ids.push(r.raw_item);
                    next
                });
                Interaction {
                    item,
                    behavior: r.behavior,
                    timestamp: r.timestamp,
                }
            })
            .collect();
        sessions.push(Session { id, events });
    }

    Ok(SessionSet {
        sessions,
        n_items: item_ids.len(),
        item_ids,
    })
}

/// Writes sessions in the same delimited format `load_sessions` reads, using
/// raw item identifiers.
pub fn write_sessions(set: &SessionSet, path: impl AsRef<Path>, format: InputFormat) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_path(path.as_ref())?;
    w.write_record(COLUMNS)?;
    for s in &set.sessions {
        for e in &s.events {
            let raw = set
                .item_ids
                .get(e.item)
                .cloned()
                .unwrap_or_else(|| e.item.to_string());
            w.write_record([
                s.id.as_str(),
                &format_timestamp(e.timestamp),
                &raw,
                e.behavior.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn format_timestamp(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Reads a map written by [`write_item_map`], returning raw ids by index.
pub fn read_item_map(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (idx, raw) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected `index<TAB>item_id`".into(),
        })?;
        if idx.parse::<usize>().ok() != Some(ids.len()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected index {}, found `{idx}`", ids.len()),
            });
        }
        ids.push(raw.to_string());
    }
    Ok(ids)
}

/// Persists the dense-index to raw-id mapping as `index<TAB>raw_id` lines.
pub fn write_item_map(set: &SessionSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "index\titem_id")?;
    for (i, raw) in set.item_ids.iter().enumerate() {
        writeln!(w, "{i}\t{raw}")?;
    }
    w.flush()?;
    Ok(())
}
