//! Pairwise cosine alignment between two channels' binned activity series,
//! with threshold/top-n tagging and forward–backward reconciliation.
//!
//! The directional pass compares each source entity against its candidate
//! destination entities — everyone, or only same-cluster entities when a
//! [`ClusterAssignment`](crate::superpoint::ClusterAssignment) is supplied —
//! and keeps the `top_n` best candidates at or above the similarity
//! threshold. Running the pass both ways and intersecting the results gives
//! the final match: pairs that choose each other.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{BinnedTimeSeries, BinningSpec, ChannelSeries};
use crate::superpoint::ClusterAssignment;

/// One matched cross-channel pair and the value that produced it (a cosine
/// similarity on the alignment path; an accumulated log-likelihood score
/// when built by score thresholding).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub entity_a: String,
    pub entity_b: String,
    pub similarity: f64,
}

/// A set of matches oriented `channel_a → channel_b`, sorted by
/// `(entity_a, entity_b)` with no duplicate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    channel_a: String,
    channel_b: String,
    records: Vec<MatchRecord>,
}

const SIM_SLACK: f64 = 1e-9;

impl MatchSet {
    /// Build a match set of cosine similarities; values must lie in
    /// `[-1, 1]` (to within a small rounding allowance).
    pub fn new<A: Into<String>, B: Into<String>>(
        channel_a: A,
        channel_b: B,
        records: Vec<MatchRecord>,
    ) -> Result<Self> {
        for r in &records {
            if !r.similarity.is_finite() || r.similarity.abs() > 1.0 + SIM_SLACK {
                return Err(Error::Contract(format!(
                    "similarity {} for ({}, {}) is outside [-1, 1]",
                    r.similarity, r.entity_a, r.entity_b
                )));
            }
        }
        Self::from_scored(channel_a, channel_b, records)
    }

    /// Build a match set whose values are scores on an open-ended scale
    /// (finiteness is still required).
    pub fn from_scored<A: Into<String>, B: Into<String>>(
        channel_a: A,
        channel_b: B,
        mut records: Vec<MatchRecord>,
    ) -> Result<Self> {
        for r in &records {
            if !r.similarity.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite value for ({}, {})",
                    r.entity_a, r.entity_b
                )));
            }
        }
        records.sort_by(|x, y| {
            (x.entity_a.as_str(), x.entity_b.as_str()).cmp(&(y.entity_a.as_str(), y.entity_b.as_str()))
        });
        for pair in records.windows(2) {
            if pair[0].entity_a == pair[1].entity_a && pair[0].entity_b == pair[1].entity_b {
                return Err(Error::Contract(format!(
                    "duplicate match pair ({}, {})",
                    pair[0].entity_a, pair[0].entity_b
                )));
            }
        }
        Ok(MatchSet {
            channel_a: channel_a.into(),
            channel_b: channel_b.into(),
            records,
        })
    }

    pub fn channel_a(&self) -> &str {
        &self.channel_a
    }

    pub fn channel_b(&self) -> &str {
        &self.channel_b
    }

    pub fn records(&self) -> &[MatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, entity_a: &str, entity_b: &str) -> Option<f64> {
        self.records
            .binary_search_by(|r| {
                (r.entity_a.as_str(), r.entity_b.as_str()).cmp(&(entity_a, entity_b))
            })
            .ok()
            .map(|i| self.records[i].similarity)
    }

    pub fn contains(&self, entity_a: &str, entity_b: &str) -> bool {
        self.get(entity_a, entity_b).is_some()
    }

    /// Write as CSV `entity_a,entity_b,channel_a,channel_b,similarity`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "entity_a,entity_b,channel_a,channel_b,similarity")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.entity_a, r.entity_b, self.channel_a, self.channel_b, r.similarity
            )?;
        }
        Ok(())
    }

    /// Read a CSV written by [`Self::write_csv`]. The orientation is taken
    /// from the rows; a header-only file yields an empty set with unknown
    /// (empty) channel names, which any orientation check accepts.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim_end_matches('\r') != "entity_a,entity_b,channel_a,channel_b,similarity" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `entity_a,entity_b,channel_a,channel_b,similarity`".into(),
            });
        }
        let mut channel_a = String::new();
        let mut channel_b = String::new();
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let line = line.trim_end_matches('\r');
            let fields: Vec<&str> = line.split(',').collect();
            let [a, b, ca, cb, sim] = fields.as_slice() else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 5 fields, found {}", fields.len()),
                });
            };
            if records.is_empty() {
                channel_a = ca.to_string();
                channel_b = cb.to_string();
            } else if *ca != channel_a || *cb != channel_b {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "channel pair ({ca}, {cb}) differs from ({channel_a}, {channel_b})"
                    ),
                });
            }
            let similarity: f64 = sim.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid similarity `{sim}`"),
            })?;
            records.push(MatchRecord {
                entity_a: a.to_string(),
                entity_b: b.to_string(),
                similarity,
            });
        }
        MatchSet::from_scored(channel_a, channel_b, records)
    }
}

/// Directional alignment parameters.
#[derive(Debug, Clone)]
pub struct AlignConfig {
    /// Minimum similarity for a candidate to be tagged a match.
    pub threshold: f64,
    /// Candidates retained per source entity.
    pub top_n: usize,
    /// Parallel sub-task count; never affects the result.
    pub sub_tasks: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            threshold: 0.5,
            top_n: 1,
            sub_tasks: 22,
        }
    }
}

impl AlignConfig {
    fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Param(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        if self.top_n == 0 {
            return Err(Error::Param("top_n must be >= 1".into()));
        }
        if self.sub_tasks == 0 {
            return Err(Error::Param("sub_tasks must be >= 1".into()));
        }
        Ok(())
    }
}

/// One channel's binned series plus the spec they were binned under.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSlice<'a> {
    pub channel: &'a str,
    pub series: &'a ChannelSeries,
    pub spec: BinningSpec,
}

/// What a directional pass produced, plus its cost accounting.
#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub matches: MatchSet,
    /// Candidate pairs whose similarity was evaluated: with clustering,
    /// the summed size of each source entity's candidate cluster; without,
    /// `|src| × |dst|` (zero-activity entities excluded on both sides).
    pub comparisons: u64,
    /// Source entities skipped for having no activity.
    pub zero_src: usize,
    /// Destination entities excluded for having no activity.
    pub zero_dst: usize,
}

/// Cosine similarity of two binned series: the dot product of their
/// L2-normalized sparse vectors, walked over the two supports in ascending
/// bin order. Zero vectors yield 0.
pub fn cosine_sim(u: &BinnedTimeSeries, v: &BinnedTimeSeries) -> f64 {
    let (nu, nv) = (u.l2_norm(), v.l2_norm());
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let (ue, ve) = (u.entries(), v.entries());
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < ue.len() && j < ve.len() {
        let (bu, cu) = ue[i];
        let (bv, cv) = ve[j];
        match bu.cmp(&bv) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += (cu / nu) * (cv / nv);
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

struct DstIndex<'a> {
    ids: Vec<&'a str>,
    labels: Option<Vec<usize>>,
    /// For each bin, the (dst ordinal, normalized count) entries active
    /// there, in ascending ordinal order.
    bins: Vec<Vec<(u32, f64)>>,
    cluster_sizes: Vec<u64>,
    zero_count: usize,
}

fn build_dst_index<'a>(
    dst: &ChannelSlice<'a>,
    assignment: Option<&ClusterAssignment>,
) -> Result<DstIndex<'a>> {
    let mut ids = Vec::new();
    let mut norm_values: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut labels = assignment.map(|_| Vec::new());
    let mut zero_count = 0;
    for (id, series) in dst.series {
        let norm = series.l2_norm();
        if norm == 0.0 {
            zero_count += 1;
            continue;
        }
        if let (Some(labels), Some(assignment)) = (&mut labels, assignment) {
            let label = assignment.get(dst.channel, id).ok_or_else(|| {
                Error::Contract(format!(
                    "entity ({}, {id}) has no cluster label",
                    dst.channel
                ))
            })?;
            labels.push(label);
        }
        ids.push(id.as_str());
        norm_values.push(
            series
                .entries()
                .iter()
                .map(|&(bin, count)| (bin, count / norm))
                .collect(),
        );
    }
    let mut bins: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dst.spec.t_bar];
    for (ord, values) in norm_values.iter().enumerate() {
        for &(bin, value) in values {
            bins[bin as usize].push((ord as u32, value));
        }
    }
    let k = assignment.map(ClusterAssignment::k).unwrap_or(0);
    let mut cluster_sizes = vec![0u64; k];
    if let Some(labels) = &labels {
        for &l in labels {
            cluster_sizes[l] += 1;
        }
    }
    Ok(DstIndex {
        ids,
        labels,
        bins,
        cluster_sizes,
        zero_count,
    })
}

/// Align `src` against `dst`: for every active source entity, evaluate the
/// cosine similarity to each candidate destination entity and keep the
/// `top_n` highest with `similarity ≥ threshold` (exact zeros are never
/// tagged). Candidates are destination entities sharing the source's
/// cluster id when `assignment` is given, all destination entities
/// otherwise.
///
/// Work is sharded over `sub_tasks` disjoint source ranges; the output is
/// identical for any shard count. Per candidate, ties at the `top_n`
/// boundary break toward the lexicographically smaller destination id.
pub fn align_directional(
    src: &ChannelSlice<'_>,
    dst: &ChannelSlice<'_>,
    assignment: Option<&ClusterAssignment>,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    config.validate()?;
    if src.spec != dst.spec {
        return Err(Error::Contract(
            "source and destination series were binned under different specs".into(),
        ));
    }

    let index = build_dst_index(dst, assignment)?;
    let n_dst = index.ids.len();

    struct SrcEntry<'a> {
        id: &'a str,
        norm_values: Vec<(u32, f64)>,
        label: Option<usize>,
    }
    let mut src_entries = Vec::new();
    let mut zero_src = 0;
    for (id, series) in src.series {
        let norm = series.l2_norm();
        if norm == 0.0 {
            zero_src += 1;
            continue;
        }
        let label = match assignment {
            Some(assignment) => Some(assignment.get(src.channel, id).ok_or_else(|| {
                Error::Contract(format!("entity ({}, {id}) has no cluster label", src.channel))
            })?),
            None => None,
        };
        src_entries.push(SrcEntry {
            id,
            norm_values: series
                .entries()
                .iter()
                .map(|&(bin, count)| (bin, count / norm))
                .collect(),
            label,
        });
    }

    let shard_size = src_entries.len().div_ceil(config.sub_tasks).max(1);
    let shards: Vec<&[SrcEntry]> = src_entries.chunks(shard_size).collect();

    let per_shard: Vec<(Vec<MatchRecord>, u64)> = shards
        .par_iter()
        .map(|shard| {
            let mut records = Vec::new();
            let mut comparisons = 0u64;
            // Dense accumulator over destination ordinals, reset lazily via
            // an epoch stamp so each source pays only for bins it touches.
            let mut acc = vec![0.0f64; n_dst];
            let mut stamp = vec![0u32; n_dst];
            let mut touched: Vec<u32> = Vec::new();
            let mut candidates: Vec<(u32, f64)> = Vec::new();
            for (epoch, entry) in shard.iter().enumerate() {
                let epoch = epoch as u32 + 1;
                touched.clear();
                for &(bin, src_value) in &entry.norm_values {
                    for &(ord, dst_value) in &index.bins[bin as usize] {
                        let o = ord as usize;
                        if let (Some(label), Some(labels)) = (entry.label, &index.labels) {
                            if labels[o] != label {
                                continue;
                            }
                        }
                        if stamp[o] != epoch {
                            stamp[o] = epoch;
                            acc[o] = 0.0;
                            touched.push(ord);
                        }
                        acc[o] += src_value * dst_value;
                    }
                }
                comparisons += match entry.label {
                    Some(label) => index.cluster_sizes[label],
                    None => n_dst as u64,
                };
                candidates.clear();
                for &ord in &touched {
                    let sim = acc[ord as usize];
                    if sim > 0.0 && sim >= config.threshold {
                        candidates.push((ord, sim));
                    }
                }
                let kept: &mut [(u32, f64)] = if candidates.len() > config.top_n {
                    candidates
                        .sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    &mut candidates[..config.top_n]
                } else {
                    &mut candidates
                };
                kept.sort_unstable_by_key(|&(ord, _)| ord);
                for &(ord, sim) in kept.iter() {
                    records.push(MatchRecord {
                        entity_a: entry.id.to_string(),
                        entity_b: index.ids[ord as usize].to_string(),
                        similarity: sim,
                    });
                }
            }
            (records, comparisons)
        })
        .collect();

    let mut records = Vec::new();
    let mut comparisons = 0;
    for (shard_records, shard_comparisons) in per_shard {
        records.extend(shard_records);
        comparisons += shard_comparisons;
    }
    Ok(AlignOutcome {
        matches: MatchSet::new(src.channel, dst.channel, records)?,
        comparisons,
        zero_src,
        zero_dst: index.zero_count,
    })
}

/// Intersect a forward `A→B` pass with a backward `B→A` pass: keep `(u, v)`
/// iff the forward set tagged `(u, v)` and the backward set tagged `(v, u)`,
/// carrying the forward similarity. This is the final match.
pub fn reconcile(forward: &MatchSet, backward: &MatchSet) -> Result<MatchSet> {
    let known = |s: &str| !s.is_empty();
    if (known(forward.channel_a()) && known(backward.channel_b())
        && forward.channel_a() != backward.channel_b())
        || (known(forward.channel_b()) && known(backward.channel_a())
            && forward.channel_b() != backward.channel_a())
    {
        return Err(Error::Contract(format!(
            "orientation mismatch: forward ({}, {}) vs backward ({}, {})",
            forward.channel_a(),
            forward.channel_b(),
            backward.channel_a(),
            backward.channel_b()
        )));
    }
    let reverse: HashSet<(&str, &str)> = backward
        .records()
        .iter()
        .map(|r| (r.entity_b.as_str(), r.entity_a.as_str()))
        .collect();
    let records = forward
        .records()
        .iter()
        .filter(|r| reverse.contains(&(r.entity_a.as_str(), r.entity_b.as_str())))
        .cloned()
        .collect();
    MatchSet::from_scored(forward.channel_a(), forward.channel_b(), records)
}
