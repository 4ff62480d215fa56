//! Temporal features: binned activity series and the two cluster features.
//!
//! The alignment feature is the sparse per-entity vector of event counts over
//! `Δt`-second bins ([`BinnedTimeSeries`]). Two compact features summarize it
//! for clustering:
//!
//! * [`ReducedFeature`] — the triple ⟨average event count, average edge
//!   delta, initial event offset⟩, each scaled into `[0, 1]` by its maximum
//!   over all entities in the run;
//! * the spectral embedding built from pairwise DTW distances (see
//!   [`laplacian_embed`]), whose O(n²) similarity matrix limits it to small
//!   or sub-sampled entity sets.

mod dtw;
mod embed;

pub use dtw::dtw;
pub use embed::{laplacian_embed, EmbeddedFeature};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{ActivityMode, EntityIndex, Event};

/// Bin geometry shared by every series in a run (or chunk).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningSpec {
    /// Bin width in seconds.
    pub delta_t: u64,
    /// Timestamp of the start of bin 0.
    pub t0: u64,
    /// Number of bins; every event maps into `[0, t_bar)`.
    pub t_bar: usize,
}

impl BinningSpec {
    /// Spec covering `[t0, t_last]` — the last bin contains `t_last`.
    pub fn from_span(t0: u64, t_last: u64, delta_t: u64) -> Result<Self> {
        if delta_t == 0 {
            return Err(Error::Param("delta_t must be positive".into()));
        }
        if t_last < t0 {
            return Err(Error::Param("t_last precedes t0".into()));
        }
        let t_bar = ((t_last - t0) / delta_t) as usize + 1;
        if t_bar > u32::MAX as usize {
            return Err(Error::Param(format!(
                "binning span too large: {t_bar} bins exceed the u32 bin-index range"
            )));
        }
        Ok(BinningSpec { delta_t, t0, t_bar })
    }

    /// Spec spanning the full event list (`t0` = earliest timestamp).
    pub fn from_events(events: &[Event], delta_t: u64) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Degenerate("no events to derive a binning from".into()));
        }
        let t0 = events.iter().map(|e| e.timestamp).min().expect("non-empty");
        let t_last = events.iter().map(|e| e.timestamp).max().expect("non-empty");
        Self::from_span(t0, t_last, delta_t)
    }

    /// Bin index of `timestamp`; errors if it falls outside `[t0, end)`.
    pub fn bin_of(&self, timestamp: u64) -> Result<usize> {
        if timestamp < self.t0 {
            return Err(Error::Contract(format!(
                "timestamp {timestamp} precedes binning start {}",
                self.t0
            )));
        }
        let bin = ((timestamp - self.t0) / self.delta_t) as usize;
        if bin >= self.t_bar {
            return Err(Error::Contract(format!(
                "timestamp {timestamp} maps to bin {bin}, beyond t_bar {}",
                self.t_bar
            )));
        }
        Ok(bin)
    }
}

/// Sparse per-entity event counts over the bins of a [`BinningSpec`].
///
/// Only non-zero bins are stored, sorted by bin index. The series also
/// remembers the entity's first-event offset (seconds past `t0`), which the
/// reduced feature uses at full precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinnedTimeSeries {
    entries: Vec<(u32, f64)>,
    first_event_offset: Option<u64>,
}

impl BinnedTimeSeries {
    /// Build from `(bin, count)` entries (sorted, unique bins, counts >= 1).
    pub fn from_entries(entries: Vec<(u32, f64)>, first_event_offset: Option<u64>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::Contract("bin entries not strictly sorted".into()));
            }
        }
        if entries.iter().any(|&(_, c)| c < 1.0) {
            return Err(Error::Contract("zero or negative bin count".into()));
        }
        if entries.is_empty() != first_event_offset.is_none() {
            return Err(Error::Contract(
                "first-event offset inconsistent with entries".into(),
            ));
        }
        Ok(BinnedTimeSeries {
            entries,
            first_event_offset,
        })
    }

    /// Non-zero `(bin, count)` entries in ascending bin order.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all counts.
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    /// Seconds between `t0` and the entity's first event, if it has any.
    pub fn first_event_offset(&self) -> Option<u64> {
        self.first_event_offset
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, c)| c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Render the full dense vector over `[0, t_bar)`.
    pub fn densify(&self, t_bar: usize) -> Vec<f64> {
        let mut dense = vec![0.0; t_bar];
        for &(bin, count) in &self.entries {
            dense[bin as usize] = count;
        }
        dense
    }
}

/// All series of one channel, keyed by entity id.
pub type ChannelSeries = BTreeMap<String, BinnedTimeSeries>;

/// Bin every event into its entity series, one pass over the input.
///
/// Every indexed entity gets an entry, even if it has no qualifying events
/// (an all-zero series). Under [`ActivityMode::Both`] an event contributes
/// to both its source's and its target's series, so the conservation
/// invariant is: sum of all counts = events × sides-per-event.
pub fn bin_events(
    events: &[Event],
    spec: &BinningSpec,
    index: &EntityIndex,
    activity_mode: ActivityMode,
) -> Result<BTreeMap<String, ChannelSeries>> {
    // Gather (entity index, bin, timestamp) hits per channel, then sort and
    // run-length encode. Cheaper than per-entity maps at millions of events.
    let mut hits: BTreeMap<&str, Vec<(u32, u32, u64)>> = index
        .channels()
        .map(|(c, _)| (c.as_str(), Vec::new()))
        .collect();

    for e in events {
        let Some(entities) = index.channel(&e.channel) else {
            return Err(Error::Contract(format!(
                "event channel `{}` missing from the entity index",
                e.channel
            )));
        };
        let bin = spec.bin_of(e.timestamp)? as u32;
        let bucket = hits.get_mut(e.channel.as_str()).expect("checked above");
        let mut push = |id: &str| {
            // Entities can be absent under restrictive activity modes.
            if let Some(i) = entities.index_of(id) {
                bucket.push((i as u32, bin, e.timestamp));
            }
        };
        match activity_mode {
            ActivityMode::SourceOnly => push(&e.source),
            ActivityMode::TargetOnly => push(&e.target),
            ActivityMode::Both => {
                push(&e.source);
                push(&e.target);
            }
        }
    }

    let mut out: BTreeMap<String, ChannelSeries> = BTreeMap::new();
    for (channel, mut bucket) in hits {
        let entities = index.channel(channel).expect("from index");
        bucket.sort_unstable();
        let mut series: Vec<BinnedTimeSeries> =
            vec![BinnedTimeSeries::default(); entities.len()];
        let mut i = 0;
        while i < bucket.len() {
            let (ent, _, _) = bucket[i];
            let mut entries: Vec<(u32, f64)> = Vec::new();
            let first_ts = bucket[i].2;
            let mut min_ts = first_ts;
            while i < bucket.len() && bucket[i].0 == ent {
                let bin = bucket[i].1;
                min_ts = min_ts.min(bucket[i].2);
                match entries.last_mut() {
                    Some(last) if last.0 == bin => last.1 += 1.0,
                    _ => entries.push((bin, 1.0)),
                }
                i += 1;
            }
            series[ent as usize] = BinnedTimeSeries {
                entries,
                first_event_offset: Some(min_ts - spec.t0),
            };
        }
        let channel_map: ChannelSeries = entities
            .ids()
            .iter()
            .cloned()
            .zip(series)
            .collect();
        out.insert(channel.to_string(), channel_map);
    }
    Ok(out)
}

/// The reduced clustering feature: ⟨AEC′, DEC′, IE′⟩, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedFeature {
    /// Scaled average event count per bin.
    pub aec: f64,
    /// Scaled mean absolute difference between consecutive bin counts.
    pub dec: f64,
    /// Scaled first-event offset.
    pub ie: f64,
}

impl ReducedFeature {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.aec, self.dec, self.ie]
    }
}

/// Compute the reduced feature for every series in `series`.
///
/// Raw components: AEC = total count / t_bar; DEC = mean of |Δ| over the
/// t_bar − 1 consecutive bin pairs of the full span; IE = first-event offset
/// in seconds (0 for an empty series). Each component is then divided by its
/// maximum over all entities in the mapping — callers wanting cross-channel
/// comparability pass the union of both channels. 0/0 is defined as 0.
pub fn compute_redf<K: Ord + Clone>(
    series: &BTreeMap<K, BinnedTimeSeries>,
    spec: &BinningSpec,
) -> Result<BTreeMap<K, ReducedFeature>> {
    if series.is_empty() {
        return Err(Error::Degenerate("no entities to featurize".into()));
    }
    let t_bar = spec.t_bar as f64;
    let raw: Vec<(K, [f64; 3])> = series
        .iter()
        .map(|(k, s)| {
            let aec = s.total() / t_bar;
            let dec = mean_edge_delta(s, spec.t_bar);
            let ie = s.first_event_offset().unwrap_or(0) as f64;
            (k.clone(), [aec, dec, ie])
        })
        .collect();

    let mut max = [0.0f64; 3];
    for (_, r) in &raw {
        for d in 0..3 {
            max[d] = max[d].max(r[d]);
        }
    }
    let scale = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    Ok(raw
        .into_iter()
        .map(|(k, r)| {
            (
                k,
                ReducedFeature {
                    aec: scale(r[0], max[0]),
                    dec: scale(r[1], max[1]),
                    ie: scale(r[2], max[2]),
                },
            )
        })
        .collect())
}

/// Mean |x[t+1] − x[t]| over the full span, computed from the sparse form.
///
/// Only transitions at the edges of non-zero runs contribute, so this walks
/// the entries instead of densifying.
fn mean_edge_delta(s: &BinnedTimeSeries, t_bar: usize) -> f64 {
    if t_bar < 2 {
        return 0.0;
    }
    let entries = s.entries();
    let mut sum = 0.0;
    for (i, &(bin, count)) in entries.iter().enumerate() {
        let prev = i
            .checked_sub(1)
            .map(|j| entries[j])
            .filter(|&(b, _)| b + 1 == bin);
        match prev {
            Some((_, prev_count)) => sum += (count - prev_count).abs(),
            // Rising edge from an implicit zero, if a left neighbor exists.
            None if bin >= 1 => sum += count,
            None => {}
        }
        // Falling edge to an implicit zero, if a right neighbor exists.
        let next_is_adjacent = entries.get(i + 1).is_some_and(|&(b, _)| b == bin + 1);
        if !next_is_adjacent && (bin as usize) + 1 < t_bar {
            sum += count;
        }
    }
    sum / (t_bar - 1) as f64
}

/// Pairwise DTW similarity matrix `W[i][j] = exp(-dtw(i,j)/tau)`, zero diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    w: Vec<f64>,
    tau: f64,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

/// Build the DTW similarity matrix with an explicit `tau`.
///
/// Distances are computed for the upper triangle in parallel and mirrored.
pub fn build_similarity(series: &[Vec<f64>], tau: f64) -> Result<SimilarityMatrix> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Param(format!("tau must be positive, got {tau}")));
    }
    let dists = pairwise_dtw(series)?;
    Ok(from_distances(&dists, series.len(), tau))
}

/// Build the similarity matrix with the self-scaling default
/// `tau` = mean off-diagonal DTW distance (1.0 if all distances are zero).
pub fn build_similarity_auto(series: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    let n = series.len();
    let dists = pairwise_dtw(series)?;
    let sum: f64 = dists.iter().sum();
    let pairs = (n * (n - 1) / 2) as f64;
    let mut tau = sum / pairs;
    if tau <= 0.0 {
        log::warn!("all pairwise DTW distances are zero; defaulting tau to 1.0");
        tau = 1.0;
    }
    Ok(from_distances(&dists, n, tau))
}

/// Upper-triangle DTW distances, row-major: entry for (i, j), i < j.
fn pairwise_dtw(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Param(format!(
            "similarity matrix needs at least 2 series, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    pairs
        .par_iter()
        .map(|&(i, j)| dtw(&series[i], &series[j]))
        .collect()
}

fn from_distances(dists: &[f64], n: usize, tau: f64) -> SimilarityMatrix {
    let mut w = vec![0.0; n * n];
    let mut it = dists.iter();
    for i in 0..n {
        for j in i + 1..n {
            let v = (-it.next().expect("triangle sized") / tau).exp();
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    SimilarityMatrix { n, w, tau }
}

/// Write a feature cache: a binning header followed by one whitespace-
/// separated record per entity — `entity channel bin:count ...`.
///
/// The cache trades precision for restartability: first-event offsets are
/// re-derived from bin starts on load, so IE values from a cached run are
/// quantized to `delta_t`. Entity and channel ids must be whitespace-free.
pub fn write_series_cache<W: Write>(
    mut out: W,
    channels: &BTreeMap<String, ChannelSeries>,
    spec: &BinningSpec,
) -> Result<()> {
    writeln!(out, "binning {} {} {}", spec.delta_t, spec.t0, spec.t_bar)?;
    for (channel, series) in channels {
        if channel.split_whitespace().count() != 1 {
            return Err(Error::Contract(format!(
                "channel id `{channel}` is not cacheable (contains whitespace)"
            )));
        }
        for (entity, s) in series {
            if entity.split_whitespace().count() != 1 {
                return Err(Error::Contract(format!(
                    "entity id `{entity}` is not cacheable (contains whitespace)"
                )));
            }
            write!(out, "{entity} {channel}")?;
            for &(bin, count) in s.entries() {
                write!(out, " {bin}:{count}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Read a feature cache written by [`write_series_cache`].
pub fn read_series_cache<R: BufRead>(
    input: R,
) -> Result<(BinningSpec, BTreeMap<String, ChannelSeries>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing binning header".into(),
        })??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let spec = match parts.as_slice() {
        ["binning", dt, t0, tb] => {
            let parse = |s: &str, what: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::Parse {
                    line: 1,
                    msg: format!("invalid {what} `{s}`"),
                })
            };
            BinningSpec {
                delta_t: parse(dt, "delta_t")?,
                t0: parse(t0, "t0")?,
                t_bar: parse(tb, "t_bar")? as usize,
            }
        }
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `binning <delta_t> <t0> <t_bar>`, found `{header}`"),
            })
        }
    };
    if spec.delta_t == 0 || spec.t_bar == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "binning header has zero delta_t or t_bar".into(),
        });
    }

    let mut channels: BTreeMap<String, ChannelSeries> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let mut fields = line.split_whitespace();
        let (Some(entity), Some(channel)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected `entity channel [bin:count ...]`".into(),
            });
        };
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for pair in fields {
            let (bin, count) = pair.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("malformed bin:count pair `{pair}`"),
            })?;
            let bin: u32 = bin.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid bin `{bin}`"),
            })?;
            let count: f64 = count.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid count `{count}`"),
            })?;
            if (bin as usize) >= spec.t_bar {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("bin {bin} outside t_bar {}", spec.t_bar),
                });
            }
            entries.push((bin, count));
        }
        // First-event offset quantized to the start of the first bin.
        let first = entries.first().map(|&(b, _)| b as u64 * spec.delta_t);
        let series = BinnedTimeSeries::from_entries(entries, first).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let prev = channels
            .entry(channel.to_string())
            .or_default()
            .insert(entity.to_string(), series);
        if prev.is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate record for entity `{entity}` in channel `{channel}`"),
            });
        }
    }
    Ok((spec, channels))
}
