//! Training metrics log and the gradient magnitude / direction statistics
//! computed from it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradkit::StepDiagnostics;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("window {start}:{end} contains no update records")]
    EmptyWindow { start: u64, end: u64 },
    #[error("step {found} does not follow step {previous}")]
    NonIncreasingStep { previous: u64, found: u64 },
    #[error("records disagree on the number of gradients ({expected} vs {found} at step {step})")]
    Inconsistent {
        step: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// One training step. Update fields are absent before learning starts and
/// `episode_return` is present only on steps that end an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update: Option<StepDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
}

impl StepRecord {
    pub fn new(step: u64) -> Self {
        Self {
            step,
            losses: None,
            update: None,
            episode_return: None,
        }
    }
}

/// Append-only sequence of step records with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(DiagnosticsError::NonIncreasingStep {
                    previous: last.step,
                    found: record.step,
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.episode_return)
            .collect()
    }

    /// Steps that carry update diagnostics.
    pub fn update_steps(&self) -> impl Iterator<Item = u64> + '_ {
        self.records
            .iter()
            .filter(|r| r.update.is_some())
            .map(|r| r.step)
    }

    /// The window covering the last `count` update records.
    pub fn last_updates(&self, count: usize) -> Window {
        let steps: Vec<u64> = self.update_steps().collect();
        match steps.len() {
            0 => Window { start: 0, end: 0 },
            n => Window {
                start: steps[n.saturating_sub(count)],
                end: steps[n - 1] + 1,
            },
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut log = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|source| DiagnosticsError::Parse {
                line: i + 1,
                source,
            })?;
            log.push(record)?;
        }
        Ok(log)
    }
}

/// Half-open range of step indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn contains(&self, step: u64) -> bool {
        step >= self.start && step < self.end
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    /// Parses `A:B`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("window `{s}` is not of the form START:END"))?;
        let start = a.trim().parse().map_err(|e| format!("window start: {e}"))?;
        let end = b.trim().parse().map_err(|e| format!("window end: {e}"))?;
        if end <= start {
            return Err(format!("window `{s}` is empty"));
        }
        Ok(Window { start, end })
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

fn updates_in(log: &MetricsLog, window: Window) -> Result<Vec<(u64, &StepDiagnostics)>> {
    let items: Vec<_> = log
        .records
        .iter()
        .filter(|r| window.contains(r.step))
        .filter_map(|r| r.update.as_ref().map(|u| (r.step, u)))
        .collect();
    let Some((_, first)) = items.first() else {
        return Err(DiagnosticsError::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    };
    let n = first.per_grad_l2_norm.len();
    for (step, u) in &items {
        if u.per_grad_l2_norm.len() != n || u.pairwise_cosine.len() != n {
            return Err(DiagnosticsError::Inconsistent {
                step: *step,
                expected: n,
                found: u.per_grad_l2_norm.len(),
            });
        }
    }
    Ok(items)
}

/// Mean over the window of each gradient's share of the per-step norm total.
/// Steps where every norm is zero contribute a uniform share.
pub fn magnitude_profile(log: &MetricsLog, window: Window) -> Result<Vec<f64>> {
    let items = updates_in(log, window)?;
    let n = items[0].1.per_grad_l2_norm.len();
    let mut acc = vec![0.0; n];
    for (_, u) in &items {
        let total: f64 = u.per_grad_l2_norm.iter().sum();
        for (a, norm) in acc.iter_mut().zip(&u.per_grad_l2_norm) {
            *a += if total > 0.0 {
                norm / total
            } else {
                1.0 / n as f64
            };
        }
    }
    let count = items.len() as f64;
    Ok(acc.into_iter().map(|a| a / count).collect())
}

/// Largest over smallest profile entry.
pub fn dominance_ratio(profile: &[f64]) -> f64 {
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCosine {
    pub i: usize,
    pub j: usize,
    pub mean_cosine: f64,
    pub negative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineProfile {
    /// Upper-triangle pairs `i < j` in row-major order.
    pub pairs: Vec<PairCosine>,
    /// Share of all `(step, pair)` entries with negative cosine.
    pub negative_fraction: f64,
}

pub fn cosine_profile(log: &MetricsLog, window: Window) -> Result<CosineProfile> {
    let items = updates_in(log, window)?;
    let n = items[0].1.per_grad_l2_norm.len();
    let count = items.len() as f64;
    let mut pairs = Vec::new();
    let mut negatives = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let mut sum = 0.0;
            let mut neg = 0usize;
            for (_, u) in &items {
                let c = u.pairwise_cosine[i][j];
                sum += c;
                neg += usize::from(c < 0.0);
            }
            negatives += neg;
            pairs.push(PairCosine {
                i,
                j,
                mean_cosine: sum / count,
                negative_fraction: neg as f64 / count,
            });
        }
    }
    let entries = pairs.len() as f64 * count;
    let negative_fraction = if entries > 0.0 {
        negatives as f64 / entries
    } else {
        0.0
    };
    Ok(CosineProfile {
        pairs,
        negative_fraction,
    })
}

pub fn conflict_rate(log: &MetricsLog, window: Window) -> Result<f64> {
    let items = updates_in(log, window)?;
    let sum: f64 = items.iter().map(|(_, u)| u.conflict_fraction).sum();
    Ok(sum / items.len() as f64)
}

pub fn write_magnitudes_csv<W: Write>(
    mut w: W,
    labels: &[String],
    profile: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "augmentation,mean_normalized_magnitude")?;
    for (label, v) in labels.iter().zip(profile) {
        writeln!(w, "{},{v}", csv_field(label))?;
    }
    Ok(())
}

pub fn write_cosines_csv<W: Write>(mut w: W, profile: &CosineProfile) -> std::io::Result<()> {
    writeln!(w, "pair_i,pair_j,mean_cosine,negative_fraction")?;
    for p in &profile.pairs {
        writeln!(
            w,
            "{},{},{},{}",
            p.i, p.j, p.mean_cosine, p.negative_fraction
        )?;
    }
    Ok(())
}

pub fn write_conflict_csv<W: Write>(mut w: W, window: Window, rate: f64) -> std::io::Result<()> {
    writeln!(w, "window_start,window_end,mean_conflict_fraction")?;
    writeln!(w, "{},{},{rate}", window.start, window.end)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// The three CSV tables for one window, as bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosticsTables {
    pub magnitudes: Vec<u8>,
    pub cosines: Vec<u8>,
    pub conflict: Vec<u8>,
}

pub fn render_tables(
    log: &MetricsLog,
    window: Window,
    labels: &[String],
) -> Result<DiagnosticsTables> {
    let profile = magnitude_profile(log, window)?;
    let cos = cosine_profile(log, window)?;
    let rate = conflict_rate(log, window)?;
    let mut t = DiagnosticsTables {
        magnitudes: Vec::new(),
        cosines: Vec::new(),
        conflict: Vec::new(),
    };
    write_magnitudes_csv(&mut t.magnitudes, labels, &profile)?;
    write_cosines_csv(&mut t.cosines, &cos)?;
    write_conflict_csv(&mut t.conflict, window, rate)?;
    Ok(t)
}
