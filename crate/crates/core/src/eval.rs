//! Rolling next-item evaluation, per-behavior HR/NDCG, repeat aggregation
//! and paired significance tests.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{padded_window, Behavior, SessionSet};
use crate::encoder::SeqRef;
use crate::error::{Error, Result};
use crate::model::{Network, ScoreSource};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// Anything that scores every item for a batch of padded states.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;
    fn score_batch(&self, batch: &[SeqRef]) -> Result<Array2<f64>>;
}

/// Ranks with one head of a trained network.
pub struct NetworkScorer<'a> {
    pub network: &'a Network,
    pub source: ScoreSource,
}

impl<'a> NetworkScorer<'a> {
    pub fn new(network: &'a Network, source: ScoreSource) -> Self {
        NetworkScorer { network, source }
    }
}

impl Scorer for NetworkScorer<'_> {
    fn n_items(&self) -> usize {
        self.network.n_items()
    }

    fn score_batch(&self, batch: &[SeqRef]) -> Result<Array2<f64>> {
        self.network.score_batch(batch, self.source)
    }
}

/// Item indices ordered by descending score; equal scores keep index order.
pub fn rank_items(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx
}

/// 1-based position of `truth` in `rank_items(scores)`.
pub fn rank_of(scores: ArrayView1<f64>, truth: usize) -> usize {
    let s = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v.total_cmp(&s) == Ordering::Greater || (v == s && j < truth))
        .count()
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hr,
    Ndcg,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Hr => "HR",
            Metric::Ndcg => "NDCG",
        }
    }
}

/// One metric at one cutoff for one behavior, across repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub behavior: Behavior,
    pub metric: Metric,
    pub k: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Evaluated events of this behavior in one repeat.
    pub events: usize,
}

impl MetricCell {
    pub fn key(&self) -> String {
        format!("{}_{}@{}", self.behavior, self.metric.label().to_lowercase(), self.k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub cells: Vec<MetricCell>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricsReport {
    pub fn cell(&self, behavior: Behavior, metric: Metric, k: usize) -> Option<&MetricCell> {
        self.cells
            .iter()
            .find(|c| c.behavior == behavior && c.metric == metric && c.k == k)
    }

    /// Mean over repeats, or `None` if the cell was not computed.
    pub fn value(&self, behavior: Behavior, metric: Metric, k: usize) -> Option<f64> {
        self.cell(behavior, metric, k).map(|c| c.mean)
    }

    pub fn events(&self, behavior: Behavior) -> usize {
        self.cells
            .iter()
            .find(|c| c.behavior == behavior)
            .map_or(0, |c| c.events)
    }

    pub fn repeats(&self) -> usize {
        self.cells.first().map_or(0, |c| c.values.len())
    }

    /// Header of the table layout: purchase block then click block, each
    /// with HR and NDCG per cutoff.
    pub fn table_header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string()];
        for b in [Behavior::Purchase, Behavior::Click] {
            for &k in &self.ks {
                h.push(format!("{b}_hr@{k}"));
                h.push(format!("{b}_ndcg@{k}"));
            }
        }
        h
    }

    pub fn table_row(&self, model: &str) -> Vec<String> {
        let mut row = vec![model.to_string()];
        for b in [Behavior::Purchase, Behavior::Click] {
            for &k in &self.ks {
                for m in [Metric::Hr, Metric::Ndcg] {
                    row.push(match self.value(b, m, k) {
                        Some(v) => format!("{v:.6}"),
                        None => String::new(),
                    });
                }
            }
        }
        row
    }

    /// Table-layout CSV with one row per named report.
    pub fn table_csv(rows: &[(&str, &MetricsReport)]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if let Some((_, first)) = rows.first() {
            w.write_record(first.table_header())?;
        }
        for (name, report) in rows {
            w.write_record(report.table_row(name))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<9} {:>5} {:>10} {:>10}", "behavior", "k", "HR", "NDCG");
        for b in [Behavior::Purchase, Behavior::Click] {
            for &k in &self.ks {
                let hr = self.value(b, Metric::Hr, k).unwrap_or(f64::NAN);
                let ndcg = self.value(b, Metric::Ndcg, k).unwrap_or(f64::NAN);
                let _ = writeln!(s, "{:<9} {:>5} {:>10.4} {:>10.4}", b.as_str(), k, hr, ndcg);
            }
        }
        s
    }
}

/// Limits on which events are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score at most this many events, taken in session order.
    pub max_events: Option<usize>,
    pub batch_size: usize,
}

impl EvalOptions {
    pub fn all() -> Self {
        EvalOptions {
            max_events: None,
            batch_size: 512,
        }
    }
}

struct Event<'a> {
    window: Vec<usize>,
    len: usize,
    truth: usize,
    behavior: Behavior,
    _session: &'a str,
}

#[derive(Default, Clone)]
struct Tally {
    events: usize,
    hits: Vec<f64>,
    ndcg: Vec<f64>,
}

/// Scores every next-item event `x_{t+1}` from the window ending at `x_t`
/// and reports HR@k and NDCG@k separately for clicks and purchases.
pub fn rolling_evaluate(
    scorer: &dyn Scorer,
    sessions: &SessionSet,
    ks: &[usize],
    max_len: usize,
    options: EvalOptions,
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoffs must be non-empty and positive".into()));
    }
    if scorer.n_items() != sessions.n_items {
        return Err(Error::Shape(format!(
            "scorer ranks {} items but the sessions index {}",
            scorer.n_items(),
            sessions.n_items
        )));
    }
    let pad = sessions.pad_item();
    let cap = options.max_events.unwrap_or(usize::MAX);
    let batch_size = options.batch_size.max(1);

    let mut events = Vec::new();
    'outer: for s in &sessions.sessions {
        let items: Vec<usize> = s.items().collect();
        for t in 1..items.len() {
            if events.len() >= cap {
                break 'outer;
            }
            let (window, len) = padded_window(&items[..t], max_len, pad);
            events.push(Event {
                window,
                len,
                truth: items[t],
                behavior: s.events[t].behavior,
                _session: &s.id,
            });
        }
    }

    let mut tallies = [Tally::default(), Tally::default()];
    for t in &mut tallies {
        t.hits = vec![0.0; ks.len()];
        t.ndcg = vec![0.0; ks.len()];
    }
    for chunk in events.chunks(batch_size) {
        let refs: Vec<SeqRef> = chunk.iter().map(|e| SeqRef::new(&e.window, e.len)).collect();
        let scores = scorer.score_batch(&refs)?;
        for (row, e) in scores.outer_iter().zip(chunk) {
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite("scores contain NaN".into()));
            }
            let rank = rank_of(row, e.truth);
            let tally = &mut tallies[behavior_index(e.behavior)];
            tally.events += 1;
            for (i, &k) in ks.iter().enumerate() {
                tally.hits[i] += hit_at_k(rank, k);
                tally.ndcg[i] += ndcg_at_k(rank, k);
            }
        }
    }

    let mut cells = Vec::new();
    for b in Behavior::ALL {
        let tally = &tallies[behavior_index(b)];
        let denom = tally.events.max(1) as f64;
        for (i, &k) in ks.iter().enumerate() {
            for (metric, sum) in [(Metric::Hr, tally.hits[i]), (Metric::Ndcg, tally.ndcg[i])] {
                let v = if tally.events == 0 { 0.0 } else { sum / denom };
                cells.push(MetricCell {
                    behavior: b,
                    metric,
                    k,
                    values: vec![v],
                    mean: v,
                    events: tally.events,
                });
            }
        }
    }
    Ok(MetricsReport {
        ks: ks.to_vec(),
        cells,
    })
}

fn behavior_index(b: Behavior) -> usize {
    match b {
        Behavior::Click => 0,
        Behavior::Purchase => 1,
    }
}

/// Concatenates per-repeat values of reports with identical cells.
pub fn aggregate_repeats(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("no reports to aggregate".into()))?;
    let mut out = first.clone();
    for r in &reports[1..] {
        if r.ks != first.ks || r.cells.len() != first.cells.len() {
            return Err(Error::Shape("reports have different cutoffs".into()));
        }
        for (acc, c) in out.cells.iter_mut().zip(&r.cells) {
            if (acc.behavior, acc.metric, acc.k) != (c.behavior, c.metric, c.k) {
                return Err(Error::Shape("reports have different cell layouts".into()));
            }
            acc.values.extend_from_slice(&c.values);
        }
    }
    for c in &mut out.cells {
        c.mean = mean(&c.values);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// All paired differences were identical, so the statistic is
    /// degenerate: `p = 1` when they are all zero, `p = 0` otherwise.
    pub zero_variance: bool,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Config("a paired t-test needs at least two repeats".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let scale = d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if d.iter().all(|x| (x - d[0]).abs() <= 1e-12 * scale) {
        let (t, p) = if m == 0.0 {
            (0.0, 1.0)
        } else {
            (m.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            df,
            p_value: p,
            zero_variance: true,
        });
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest {
        t,
        df,
        p_value: p.clamp(0.0, 1.0),
        zero_variance: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub behavior: Behavior,
    pub metric: Metric,
    pub k: usize,
    pub variant_mean: f64,
    pub baseline_mean: f64,
    pub diff: f64,
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
    pub zero_variance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub const COLUMNS: [&'static str; 10] = [
        "behavior",
        "metric",
        "k",
        "variant_mean",
        "baseline_mean",
        "diff",
        "t",
        "p_value",
        "significant",
        "zero_variance",
    ];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.behavior.to_string(),
                r.metric.label().to_lowercase(),
                r.k.to_string(),
                r.variant_mean.to_string(),
                r.baseline_mean.to_string(),
                r.diff.to_string(),
                r.t.to_string(),
                r.p_value.to_string(),
                r.significant.to_string(),
                r.zero_variance.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn row(&self, behavior: Behavior, metric: Metric, k: usize) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.behavior == behavior && r.metric == metric && r.k == k)
    }
}

/// Paired test of every cell of `variant` against `baseline`; repeat `i` of
/// one is paired with repeat `i` of the other.
pub fn compare_reports(variant: &MetricsReport, baseline: &MetricsReport, alpha: f64) -> Result<Comparison> {
    let mut rows = Vec::new();
    for c in &variant.cells {
        let base = baseline
            .cell(c.behavior, c.metric, c.k)
            .ok_or_else(|| Error::Shape(format!("baseline lacks {}", c.key())))?;
        let test = paired_t_test(&c.values, &base.values)?;
        rows.push(ComparisonRow {
            behavior: c.behavior,
            metric: c.metric,
            k: c.k,
            variant_mean: c.mean,
            baseline_mean: base.mean,
            diff: c.mean - base.mean,
            t: test.t,
            p_value: test.p_value,
            significant: test.p_value < alpha,
            zero_variance: test.zero_variance,
        });
    }
    Ok(Comparison { alpha, rows })
}
