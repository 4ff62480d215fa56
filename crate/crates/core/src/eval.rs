//! Match-quality metrics against a ground truth.
//!
//! Three base error rates are computed from a predicted match set: the
//! fraction of predicted pairs that are wrong, and — per direction — the
//! fraction of entities with a true counterpart that the prediction left
//! unmatched. Their complements are the headline accuracies: matched
//! accuracy (MA), forward not-matched accuracy (FNMA), and backward
//! not-matched accuracy (BNMA).

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::align::MatchSet;
use crate::error::{Error, Result};

/// The set of true cross-channel pairs; may be one-to-many in either
/// direction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        GroundTruth {
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn pairs(&self) -> &BTreeSet<(String, String)> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, entity_a: &str, entity_b: &str) -> bool {
        self.pairs
            .contains(&(entity_a.to_string(), entity_b.to_string()))
    }

    /// Distinct channel-A entities possessing a true counterpart.
    pub fn forward_entities(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(a, _)| a.as_str()).collect()
    }

    /// Distinct channel-B entities possessing a true counterpart.
    pub fn backward_entities(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(_, b)| b.as_str()).collect()
    }

    /// Write as CSV `entity_a,entity_b`, sorted.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "entity_a,entity_b")?;
        for (a, b) in &self.pairs {
            writeln!(out, "{a},{b}")?;
        }
        Ok(())
    }

    /// Read a CSV written by [`Self::write_csv`]; duplicate rows are
    /// rejected.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim_end_matches('\r') != "entity_a,entity_b" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `entity_a,entity_b`".into(),
            });
        }
        let mut pairs = BTreeSet::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let line = line.trim_end_matches('\r');
            let fields: Vec<&str> = line.split(',').collect();
            let [a, b] = fields.as_slice() else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 2 fields, found {}", fields.len()),
                });
            };
            if a.is_empty() || b.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty entity id".into(),
                });
            }
            if !pairs.insert((a.to_string(), b.to_string())) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate pair ({a}, {b})"),
                });
            }
        }
        Ok(GroundTruth { pairs })
    }
}

/// Miss-counting direction: channel-A entities (forward) or channel-B
/// entities (backward).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Fraction of predicted pairs not present in the truth. An empty
/// prediction made no wrong matches, so it scores 0 by convention (callers
/// should surface the emptiness separately).
pub fn incorrectly_matched(predicted: &MatchSet, truth: &GroundTruth) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let wrong = predicted
        .records()
        .iter()
        .filter(|r| !truth.contains(&r.entity_a, &r.entity_b))
        .count();
    wrong as f64 / predicted.len() as f64
}

/// Fraction of entities with a true counterpart (on the side picked by
/// `direction`) that appear in no predicted pair. Entity-level: appearing
/// in any predicted pair — right or wrong — counts as matched. Empty truth
/// yields 0 (nothing was there to miss).
pub fn incorrectly_not_matched(
    predicted: &MatchSet,
    truth: &GroundTruth,
    direction: Direction,
) -> f64 {
    let should_match: BTreeSet<&str> = match direction {
        Direction::Forward => truth.forward_entities(),
        Direction::Backward => truth.backward_entities(),
    };
    if should_match.is_empty() {
        return 0.0;
    }
    let matched: BTreeSet<&str> = predicted
        .records()
        .iter()
        .map(|r| match direction {
            Direction::Forward => r.entity_a.as_str(),
            Direction::Backward => r.entity_b.as_str(),
        })
        .collect();
    let missed = should_match.iter().filter(|e| !matched.contains(*e)).count();
    missed as f64 / should_match.len() as f64
}

/// Pair-level alternative to [`incorrectly_not_matched`]: the fraction of
/// truth pairs absent from the prediction (directionless).
pub fn incorrectly_not_matched_pairwise(predicted: &MatchSet, truth: &GroundTruth) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let missed = truth
        .pairs()
        .iter()
        .filter(|(a, b)| !predicted.contains(a, b))
        .count();
    missed as f64 / truth.len() as f64
}

/// The six metrics plus the counts they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub i_m: f64,
    pub i_nm_forward: f64,
    pub i_nm_backward: f64,
    pub ma: f64,
    pub fnma: f64,
    pub bnma: f64,
    pub matched_count: usize,
    pub truth_count: usize,
    /// True when the prediction was empty, in which case `i_m = 0` is a
    /// convention rather than an achievement.
    pub empty_prediction: bool,
}

impl MetricsReport {
    /// Write the metric fields as `key = value` lines.
    pub fn write_fields<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ma = {}", self.ma)?;
        writeln!(out, "fnma = {}", self.fnma)?;
        writeln!(out, "bnma = {}", self.bnma)?;
        writeln!(out, "i_m = {}", self.i_m)?;
        writeln!(out, "i_nm_forward = {}", self.i_nm_forward)?;
        writeln!(out, "i_nm_backward = {}", self.i_nm_backward)?;
        writeln!(out, "matched_count = {}", self.matched_count)?;
        writeln!(out, "truth_count = {}", self.truth_count)?;
        writeln!(out, "empty_prediction = {}", self.empty_prediction)?;
        Ok(())
    }
}

/// Compute every metric of a prediction against the truth.
pub fn build_report(predicted: &MatchSet, truth: &GroundTruth) -> MetricsReport {
    let i_m = incorrectly_matched(predicted, truth);
    let i_nm_forward = incorrectly_not_matched(predicted, truth, Direction::Forward);
    let i_nm_backward = incorrectly_not_matched(predicted, truth, Direction::Backward);
    MetricsReport {
        i_m,
        i_nm_forward,
        i_nm_backward,
        ma: 1.0 - i_m,
        fnma: 1.0 - i_nm_forward,
        bnma: 1.0 - i_nm_backward,
        matched_count: predicted.len(),
        truth_count: truth.len(),
        empty_prediction: predicted.is_empty(),
    }
}
