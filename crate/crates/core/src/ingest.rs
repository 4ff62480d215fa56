//! Event-stream parsing, entity indexing, and temporal chunking.
//!
//! The event file format is a strict CSV: header `source,target,channel,timestamp`,
//! one event per row, integer-second timestamps, no blank lines or comments.
//! Strictness is deliberate — these files are typically machine-generated
//! exports, and silent tolerance hides producer bugs. Parse failures carry
//! 1-based line numbers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Header row of the event file format.
pub const EVENT_HEADER: &str = "source,target,channel,timestamp";

/// One directed information exchange between two entities on a channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub source: String,
    pub target: String,
    pub channel: String,
    /// Seconds since epoch. Sub-second data is out of scope.
    pub timestamp: u64,
}

/// The ordered set of channels a run operates over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelCatalog {
    channels: Vec<String>,
}

impl ChannelCatalog {
    /// Build a catalog; identifiers must be unique and non-empty.
    pub fn new<I, S>(channels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let channels: Vec<String> = channels.into_iter().map(Into::into).collect();
        if channels.is_empty() {
            return Err(Error::Param("channel catalog is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &channels {
            if c.is_empty() {
                return Err(Error::Param("empty channel identifier".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::Param(format!("duplicate channel `{c}`")));
            }
        }
        Ok(ChannelCatalog { channels })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Position of `channel` in the catalog order, if present.
    pub fn ordinal(&self, channel: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == channel)
    }

    pub fn contains(&self, channel: &str) -> bool {
        self.ordinal(channel).is_some()
    }
}

/// Which side(s) of an event count toward an entity's activity series.
///
/// Events are exchanges between two entities, so by default (`Both`) an
/// event contributes to the series of its source and of its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivityMode {
    SourceOnly,
    TargetOnly,
    #[default]
    Both,
}

impl FromStr for ActivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_only" => Ok(ActivityMode::SourceOnly),
            "target_only" => Ok(ActivityMode::TargetOnly),
            "both" => Ok(ActivityMode::Both),
            other => Err(Error::Param(format!(
                "unknown activity mode `{other}` (expected source_only, target_only, or both)"
            ))),
        }
    }
}

impl fmt::Display for ActivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivityMode::SourceOnly => "source_only",
            ActivityMode::TargetOnly => "target_only",
            ActivityMode::Both => "both",
        })
    }
}

/// Parse an event file. Rows keep their input order.
///
/// Every row must have exactly four fields, non-empty source/target ids, a
/// channel present in `catalog`, and a base-10 integer timestamp.
pub fn parse_events<R: BufRead>(input: R, catalog: &ChannelCatalog) -> Result<Vec<Event>> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    if header.trim_end_matches('\r') != EVENT_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{EVENT_HEADER}`, found `{header}`"),
        });
    }

    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "blank line (not permitted after the header)".into(),
            });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let (source, target, channel, ts) = (fields[0], fields[1], fields[2], fields[3]);
        if source.is_empty() || target.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty entity identifier".into(),
            });
        }
        if !catalog.contains(channel) {
            return Err(Error::UnknownChannel {
                line: line_no,
                channel: channel.to_string(),
            });
        }
        let timestamp: u64 = ts.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid timestamp `{ts}`"),
        })?;
        events.push(Event {
            source: source.to_string(),
            target: target.to_string(),
            channel: channel.to_string(),
            timestamp,
        });
    }
    Ok(events)
}

/// Serialize events in the event file format (inverse of [`parse_events`]).
pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    writeln!(out, "{EVENT_HEADER}")?;
    for e in events {
        writeln!(out, "{},{},{},{}", e.source, e.target, e.channel, e.timestamp)?;
    }
    Ok(())
}

/// One temporal chunk of a run: events with `start <= timestamp < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpec {
    pub start: u64,
    pub end: u64,
    pub ordinal: usize,
}

/// Split events into consecutive fixed-length chunks.
///
/// Boundaries are `t0 + i * chunk_length` with `t0` the earliest timestamp.
/// Every event lands in exactly one chunk; chunks inside the span with no
/// events are still emitted (with empty lists) so ordinals track time.
pub fn partition_chunks(
    events: &[Event],
    chunk_length: u64,
) -> Result<Vec<(ChunkSpec, Vec<Event>)>> {
    if chunk_length == 0 {
        return Err(Error::Param("chunk_length must be positive".into()));
    }
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let t0 = events.iter().map(|e| e.timestamp).min().expect("non-empty");
    let t_max = events.iter().map(|e| e.timestamp).max().expect("non-empty");
    let n_chunks = ((t_max - t0) / chunk_length) as usize + 1;

    let mut chunks: Vec<(ChunkSpec, Vec<Event>)> = (0..n_chunks)
        .map(|i| {
            let start = t0 + i as u64 * chunk_length;
            (
                ChunkSpec {
                    start,
                    end: start + chunk_length,
                    ordinal: i,
                },
                Vec::new(),
            )
        })
        .collect();
    for e in events {
        let i = ((e.timestamp - t0) / chunk_length) as usize;
        chunks[i].1.push(e.clone());
    }
    Ok(chunks)
}

/// Per-channel dense entity numbering (lexicographic by identifier).
#[derive(Debug, Clone, Default)]
pub struct ChannelEntities {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl ChannelEntities {
    fn from_ids(ids: BTreeSet<String>) -> Self {
        let ids: Vec<String> = ids.into_iter().collect();
        let lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        ChannelEntities { ids, lookup }
    }

    /// Entity identifiers in index order (sorted).
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Bijective entity ↔ dense-index mapping per channel.
#[derive(Debug, Clone, Default)]
pub struct EntityIndex {
    per_channel: BTreeMap<String, ChannelEntities>,
}

impl EntityIndex {
    pub fn channel(&self, channel: &str) -> Option<&ChannelEntities> {
        self.per_channel.get(channel)
    }

    pub fn channels(&self) -> impl Iterator<Item = (&String, &ChannelEntities)> {
        self.per_channel.iter()
    }

    /// Total entities across channels.
    pub fn total_entities(&self) -> usize {
        self.per_channel.values().map(ChannelEntities::len).sum()
    }
}

/// Enumerate the entities participating in each catalog channel.
///
/// `activity_mode` decides which side(s) of an event make an entity
/// "participate". Channels with no qualifying events still get (empty)
/// entries. Deterministic: identifiers are indexed in sorted order.
pub fn build_index(
    events: &[Event],
    catalog: &ChannelCatalog,
    activity_mode: ActivityMode,
) -> EntityIndex {
    let mut sets: BTreeMap<String, BTreeSet<String>> = catalog
        .channels()
        .iter()
        .map(|c| (c.clone(), BTreeSet::new()))
        .collect();
    for e in events {
        let Some(set) = sets.get_mut(&e.channel) else {
            continue; // channel outside the catalog; callers validate upstream
        };
        match activity_mode {
            ActivityMode::SourceOnly => {
                set.insert(e.source.clone());
            }
            ActivityMode::TargetOnly => {
                set.insert(e.target.clone());
            }
            ActivityMode::Both => {
                set.insert(e.source.clone());
                set.insert(e.target.clone());
            }
        }
    }
    EntityIndex {
        per_channel: sets
            .into_iter()
            .map(|(c, ids)| (c, ChannelEntities::from_ids(ids)))
            .collect(),
    }
}
