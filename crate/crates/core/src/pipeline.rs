//! Run orchestration: a single configuration type driving both the one-shot
//! pipeline and chunked runs that accumulate match evidence across time
//! windows with durable on-disk state.
//!
//! A run flows through fixed stages — bin, (features, cluster), forward and
//! backward alignment, reconcile, (score), metrics — each timed and named in
//! error reports. [`run_single`] processes the whole span as one chunk;
//! [`run_chunked`] splits the span into fixed-length windows, fits the
//! hypothesis model on the first window, scores every window's matches, and
//! folds the scores into a [`ScoreTable`] persisted after every chunk so an
//! interrupted run resumes where it stopped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::align::{align_directional, reconcile, AlignConfig, ChannelSlice, MatchSet};
use crate::error::{Error, Result};
use crate::eval::{build_report, GroundTruth, MetricsReport};
use crate::features::{
    bin_events, build_similarity_auto, compute_redf, laplacian_embed, read_series_cache,
    write_series_cache, BinnedTimeSeries, BinningSpec, ChannelSeries,
};
use crate::ingest::{
    build_index, parse_events, partition_chunks, ActivityMode, ChannelCatalog, ChunkSpec, Event,
};
use crate::likelihood::{
    build_training_set, score_matches, threshold_scores, HypothesisModel, ScoreTable,
};
use crate::superpoint::{
    superpoint_cluster, ClusterAssignment, ClustererKind, SuperPointConfig,
};
use crate::{derive_seed, stream, EntityKey};

/// Which compact feature feeds the clustering stage, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterFeatureKind {
    /// No clustering: every destination entity is a candidate.
    #[default]
    None,
    /// The reduced ⟨activity, edge-delta, onset⟩ triple. Linear cost.
    RedF,
    /// Spectral embedding of pairwise DTW similarities. Quadratic cost,
    /// gated by `embf_cap`.
    EmbF,
}

impl FromStr for ClusterFeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClusterFeatureKind::None),
            "redf" => Ok(ClusterFeatureKind::RedF),
            "embf" => Ok(ClusterFeatureKind::EmbF),
            other => Err(Error::Param(format!(
                "unknown cluster feature `{other}` (expected none, redf, or embf)"
            ))),
        }
    }
}

impl fmt::Display for ClusterFeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterFeatureKind::None => "none",
            ClusterFeatureKind::RedF => "redf",
            ClusterFeatureKind::EmbF => "embf",
        })
    }
}

/// Everything a run needs. Field defaults suit a medium-sized two-channel
/// alignment; a config file and CLI flags override them layer by layer
/// (defaults < file < flags).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Source channel of the forward pass.
    pub channel_a: String,
    /// Destination channel of the forward pass.
    pub channel_b: String,
    /// Bin width in seconds.
    pub delta_t: u64,
    /// Which event side(s) count toward an entity's activity.
    pub activity_mode: ActivityMode,
    /// Feature for the optional clustering stage.
    pub cluster_feature: ClusterFeatureKind,
    /// Clusters per group.
    pub k: usize,
    /// Entities per partition; 0 derives it from the worker count.
    pub partition_size: usize,
    /// Per-partition clusterer.
    pub clusterer: ClustererKind,
    /// Super-points sampled per mixture component (GMM only).
    pub gmm_samples: usize,
    /// Spectral embedding dimensions.
    pub embf_dims: usize,
    /// Hard entity-count gate on the quadratic embedding feature.
    pub embf_cap: usize,
    /// Minimum cosine similarity for a candidate match.
    pub threshold: f64,
    /// Matches kept per source entity.
    pub top_n: usize,
    /// Score matches under the two-hypothesis model (single runs only;
    /// chunked runs always score).
    pub likelihood: bool,
    /// Fraction of the known pairs sampled for model training.
    pub training_fraction: f64,
    /// Non-matching similarity draws per training row.
    pub null_draws: usize,
    /// Accumulated-score cutoff for the final match set.
    pub score_threshold: f64,
    /// Refit the model on every chunk instead of reusing the first fit.
    pub refit_per_chunk: bool,
    /// Chunk window length in seconds.
    pub chunk_length: u64,
    /// Logical shard count: alignment work units and the partition divisor
    /// of the clustering stage. Part of the run's identity — two runs with
    /// the same `sub_tasks` produce identical results whatever `workers` is.
    pub sub_tasks: usize,
    /// Physical worker-pool size. Affects runtime only, never results.
    pub workers: usize,
    /// Master seed; every random stage derives its own stream from it.
    pub seed: u64,
    /// Event file for `channel_a` (may equal `input_b`).
    pub input_a: PathBuf,
    /// Event file for `channel_b`.
    pub input_b: PathBuf,
    /// Known aligned pairs (training and metrics), if available.
    pub truth: Option<PathBuf>,
    /// Binned-series cache: read when present, written after binning
    /// otherwise. Single runs only.
    pub feature_cache: Option<PathBuf>,
    /// Where run artifacts land.
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            channel_a: "a".into(),
            channel_b: "b".into(),
            delta_t: 3,
            activity_mode: ActivityMode::Both,
            cluster_feature: ClusterFeatureKind::None,
            k: 5,
            partition_size: 0,
            clusterer: ClustererKind::KMeans,
            gmm_samples: 10,
            embf_dims: 3,
            embf_cap: 5000,
            threshold: 0.5,
            top_n: 1,
            likelihood: false,
            training_fraction: 0.01,
            null_draws: 100,
            score_threshold: 0.0,
            refit_per_chunk: false,
            chunk_length: 7 * 86_400,
            sub_tasks: 22,
            workers: 22,
            seed: 0,
            input_a: PathBuf::new(),
            input_b: PathBuf::new(),
            truth: None,
            feature_cache: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// The two-channel catalog of this run.
    pub fn catalog(&self) -> Result<ChannelCatalog> {
        ChannelCatalog::new([self.channel_a.clone(), self.channel_b.clone()])
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            threshold: self.threshold,
            top_n: self.top_n,
            sub_tasks: self.sub_tasks,
        }
    }

    /// Clustering configuration for one chunk; the seed is derived from the
    /// master seed and the chunk ordinal so chunks cluster independently.
    pub fn superpoint_config(&self, chunk_ordinal: usize) -> SuperPointConfig {
        SuperPointConfig {
            k: self.k,
            w: self.sub_tasks,
            partition_size: self.partition_size,
            clusterer: self.clusterer,
            gmm_samples_per_component: self.gmm_samples,
            seed: derive_seed(self.seed, &[stream::CHUNK, chunk_ordinal as u64]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog()?;
        if self.delta_t == 0 {
            return Err(Error::Param("delta_t must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Param("workers must be positive".into()));
        }
        if self.sub_tasks == 0 {
            return Err(Error::Param("sub_tasks must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Param("k must be positive".into()));
        }
        if self.partition_size != 0 && self.partition_size < self.k {
            return Err(Error::Param(format!(
                "partition_size {} cannot hold k = {} clusters",
                self.partition_size, self.k
            )));
        }
        if self.gmm_samples == 0 {
            return Err(Error::Param("gmm_samples must be positive".into()));
        }
        if self.embf_dims == 0 {
            return Err(Error::Param("embf_dims must be positive".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Param("top_n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Param(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        if !(self.training_fraction > 0.0 && self.training_fraction <= 1.0) {
            return Err(Error::Param(format!(
                "training_fraction {} must lie in (0, 1]",
                self.training_fraction
            )));
        }
        if self.null_draws == 0 {
            return Err(Error::Param("null_draws must be positive".into()));
        }
        if !self.score_threshold.is_finite() {
            return Err(Error::Param("score_threshold must be finite".into()));
        }
        if self.chunk_length == 0 {
            return Err(Error::Param("chunk_length must be positive".into()));
        }
        Ok(())
    }

    /// Apply one `key = value` setting. Unknown keys and unparseable values
    /// are errors — a typoed config line must not silently fall back to a
    /// default.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| {
                Error::Param(format!("bad value `{value}` for `{key}`: {e}"))
            })
        }
        match key {
            "channel_a" => self.channel_a = value.to_string(),
            "channel_b" => self.channel_b = value.to_string(),
            "delta_t" => self.delta_t = num(key, value)?,
            "activity_mode" => self.activity_mode = value.parse()?,
            "cluster_feature" => self.cluster_feature = value.parse()?,
            "k" => self.k = num(key, value)?,
            "partition_size" => self.partition_size = num(key, value)?,
            "clusterer" => self.clusterer = value.parse()?,
            "gmm_samples" => self.gmm_samples = num(key, value)?,
            "embf_dims" => self.embf_dims = num(key, value)?,
            "embf_cap" => self.embf_cap = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "top_n" => self.top_n = num(key, value)?,
            "likelihood" => self.likelihood = num(key, value)?,
            "training_fraction" => self.training_fraction = num(key, value)?,
            "null_draws" => self.null_draws = num(key, value)?,
            "score_threshold" => self.score_threshold = num(key, value)?,
            "refit_per_chunk" => self.refit_per_chunk = num(key, value)?,
            "chunk_length" => self.chunk_length = num(key, value)?,
            "sub_tasks" => self.sub_tasks = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "input_a" => self.input_a = PathBuf::from(value),
            "input_b" => self.input_b = PathBuf::from(value),
            "truth" => self.truth = Some(PathBuf::from(value)),
            "feature_cache" => self.feature_cache = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => {
                return Err(Error::Param(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    /// Layer a config file over the current values: `key = value` lines,
    /// blank lines and `#` comments ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.into(),
            msg: e.to_string(),
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::File {
                    path: path.into(),
                    msg: format!("line {}: expected `key = value`, found `{line}`", i + 1),
                });
            };
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::File {
                    path: path.into(),
                    msg: format!("line {}: {e}", i + 1),
                })?;
        }
        Ok(())
    }
}

/// Wall-clock bookkeeping for the named stages of a run.
struct StageClock {
    entries: Vec<(String, f64)>,
}

impl StageClock {
    fn new() -> Self {
        StageClock { entries: Vec::new() }
    }

    /// Run one stage: time it and tag any error with the stage name.
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.add(stage, start.elapsed().as_secs_f64());
        out
    }

    fn add(&mut self, stage: &str, seconds: f64) {
        match self.entries.iter_mut().find(|(name, _)| name == stage) {
            Some((_, total)) => *total += seconds,
            None => self.entries.push((stage.to_string(), seconds)),
        }
    }

    fn merge(&mut self, other: &[(String, f64)]) {
        for (name, secs) in other {
            self.add(name, *secs);
        }
    }

    /// Close the books: append an `other` residual so the entries sum to
    /// `runtime` exactly.
    fn finish(mut self, runtime: f64) -> Vec<(String, f64)> {
        let accounted: f64 = self.entries.iter().map(|(_, s)| s).sum();
        self.entries
            .push(("other".to_string(), (runtime - accounted).max(0.0)));
        self.entries
    }
}

/// What one chunk (or the whole span, for single runs) produced.
#[derive(Debug, Clone)]
pub struct ChunkResult {
    /// Reconciled bidirectional matches.
    pub matches: MatchSet,
    /// Candidate pairs evaluated, both directions.
    pub comparisons: u64,
    /// `channel_a` entities with no activity in the window.
    pub zero_a: usize,
    /// `channel_b` entities with no activity in the window.
    pub zero_b: usize,
    /// Cluster labels, when a clustering stage ran.
    pub assignment: Option<ClusterAssignment>,
    /// Log-likelihood-ratio score per matched pair, when a model was given.
    pub scores: Option<BTreeMap<(String, String), f64>>,
    /// Per-stage seconds, in execution order.
    pub timings: Vec<(String, f64)>,
}

/// Bin a chunk's events under a chunk-local spec: bins start at the chunk
/// boundary and share the global `delta_t`.
fn bin_chunk(
    config: &PipelineConfig,
    chunk: &ChunkSpec,
    events: &[Event],
) -> Result<(BinningSpec, BTreeMap<String, ChannelSeries>)> {
    let catalog = config.catalog()?;
    let t_last = events
        .iter()
        .map(|e| e.timestamp)
        .max()
        .ok_or_else(|| Error::Degenerate("no events in chunk".into()))?;
    let spec = BinningSpec::from_span(chunk.start, t_last, config.delta_t)?;
    let index = build_index(events, &catalog, config.activity_mode);
    let channels = bin_events(events, &spec, &index, config.activity_mode)?;
    Ok((spec, channels))
}

/// Pool all channels into one map keyed by `(channel, entity)`. Moves the
/// series; [`split_combined`] reverses it.
fn merge_channels(
    channels: BTreeMap<String, ChannelSeries>,
) -> BTreeMap<EntityKey, BinnedTimeSeries> {
    channels
        .into_iter()
        .flat_map(|(channel, series)| {
            series
                .into_iter()
                .map(move |(entity, s)| ((channel.clone(), entity), s))
        })
        .collect()
}

fn split_combined(
    combined: BTreeMap<EntityKey, BinnedTimeSeries>,
) -> BTreeMap<String, ChannelSeries> {
    let mut out: BTreeMap<String, ChannelSeries> = BTreeMap::new();
    for ((channel, entity), series) in combined {
        out.entry(channel).or_default().insert(entity, series);
    }
    out
}

/// Compute the configured cluster feature for every entity of both channels
/// (pooled, so the scaling and the embedding are comparable across
/// channels) and run the super-point framework over it.
fn cluster_stage(
    config: &PipelineConfig,
    spec: &BinningSpec,
    channels: BTreeMap<String, ChannelSeries>,
    chunk_ordinal: usize,
    clock: &mut StageClock,
) -> Result<(BTreeMap<String, ChannelSeries>, Option<ClusterAssignment>)> {
    if config.cluster_feature == ClusterFeatureKind::None {
        return Ok((channels, None));
    }
    let combined = merge_channels(channels);
    let features: BTreeMap<EntityKey, Vec<f64>> = clock.run("features", || {
        match config.cluster_feature {
            ClusterFeatureKind::None => unreachable!("handled above"),
            ClusterFeatureKind::RedF => Ok(compute_redf(&combined, spec)?
                .into_iter()
                .map(|(k, f)| (k, f.as_vec()))
                .collect()),
            ClusterFeatureKind::EmbF => {
                if combined.len() > config.embf_cap {
                    return Err(Error::Param(format!(
                        "{} entities exceed embf_cap = {}; the pairwise embedding \
                         is quadratic — use cluster_feature = redf at this scale",
                        combined.len(),
                        config.embf_cap
                    )));
                }
                let dense: Vec<Vec<f64>> =
                    combined.values().map(|s| s.densify(spec.t_bar)).collect();
                let w = build_similarity_auto(&dense)?;
                let embedded = laplacian_embed(&w, config.embf_dims)?;
                Ok(combined
                    .keys()
                    .cloned()
                    .zip(embedded.coordinates)
                    .collect())
            }
        }
    })?;
    let assignment = clock.run("cluster", || {
        let outcome = superpoint_cluster(&features, &config.superpoint_config(chunk_ordinal))?;
        Ok(outcome.assignment)
    })?;
    Ok((split_combined(combined), Some(assignment)))
}

/// The alignment (and optional scoring) core, fed with already-binned series.
fn process_binned(
    config: &PipelineConfig,
    spec: &BinningSpec,
    channels: BTreeMap<String, ChannelSeries>,
    chunk_ordinal: usize,
    model: Option<&HypothesisModel>,
    mut clock: StageClock,
) -> Result<ChunkResult> {
    let (channels, assignment) =
        cluster_stage(config, spec, channels, chunk_ordinal, &mut clock)?;
    let series_a = channels.get(&config.channel_a).ok_or_else(|| {
        Error::Contract(format!("channel `{}` missing after binning", config.channel_a))
    })?;
    let series_b = channels.get(&config.channel_b).ok_or_else(|| {
        Error::Contract(format!("channel `{}` missing after binning", config.channel_b))
    })?;
    let slice_a = ChannelSlice {
        channel: &config.channel_a,
        series: series_a,
        spec: *spec,
    };
    let slice_b = ChannelSlice {
        channel: &config.channel_b,
        series: series_b,
        spec: *spec,
    };
    let align = config.align_config();

    let forward = clock.run("align_forward", || {
        align_directional(&slice_a, &slice_b, assignment.as_ref(), &align)
    })?;
    let backward = clock.run("align_backward", || {
        align_directional(&slice_b, &slice_a, assignment.as_ref(), &align)
    })?;
    let matches = clock.run("reconcile", || {
        reconcile(&forward.matches, &backward.matches)
    })?;
    let scores = match model {
        Some(model) => Some(clock.run("score", || Ok(score_matches(&matches, model)))?),
        None => None,
    };
    Ok(ChunkResult {
        matches,
        comparisons: forward.comparisons + backward.comparisons,
        zero_a: forward.zero_src,
        zero_b: forward.zero_dst,
        assignment,
        scores,
        timings: clock.entries,
    })
}

/// Run the full stage sequence over one chunk's events. An empty chunk
/// yields an empty result (and, under a model, an empty score map — a pair
/// absent from a window contributes no evidence either way).
pub fn process_chunk(
    config: &PipelineConfig,
    chunk: &ChunkSpec,
    events: &[Event],
    model: Option<&HypothesisModel>,
) -> Result<ChunkResult> {
    config.validate()?;
    if events.is_empty() {
        return Ok(ChunkResult {
            matches: MatchSet::new(&config.channel_a, &config.channel_b, Vec::new())?,
            comparisons: 0,
            zero_a: 0,
            zero_b: 0,
            assignment: None,
            scores: model.map(|_| BTreeMap::new()),
            timings: Vec::new(),
        });
    }
    let mut clock = StageClock::new();
    let (spec, channels) = clock.run("bin", || bin_chunk(config, chunk, events))?;
    process_binned(config, &spec, channels, chunk.ordinal, model, clock)
}

/// Fit the two-hypothesis model from one window's binned series: sample a
/// training subset of the known pairs and estimate both Rayleigh scales.
fn fit_from_series(
    config: &PipelineConfig,
    channels: &BTreeMap<String, ChannelSeries>,
    truth: &GroundTruth,
    chunk_ordinal: usize,
) -> Result<HypothesisModel> {
    let series_a = channels.get(&config.channel_a).ok_or_else(|| {
        Error::Contract(format!("channel `{}` missing after binning", config.channel_a))
    })?;
    let series_b = channels.get(&config.channel_b).ok_or_else(|| {
        Error::Contract(format!("channel `{}` missing after binning", config.channel_b))
    })?;
    let pairs: Vec<(String, String)> = truth.pairs().iter().cloned().collect();
    let train = build_training_set(
        series_a,
        series_b,
        &pairs,
        config.training_fraction,
        derive_seed(config.seed, &[stream::TRAINING, chunk_ordinal as u64]),
    )?;
    HypothesisModel::fit(
        &train,
        config.null_draws,
        derive_seed(config.seed, &[stream::NULL_DRAWS, chunk_ordinal as u64]),
    )
}

/// Fit the hypothesis model on one chunk's events (binned chunk-locally,
/// exactly as [`process_chunk`] would bin them).
pub fn fit_chunk_model(
    config: &PipelineConfig,
    chunk: &ChunkSpec,
    events: &[Event],
    truth: &GroundTruth,
) -> Result<HypothesisModel> {
    config.validate()?;
    let (_, channels) = bin_chunk(config, chunk, events).map_err(|e| e.in_stage("train"))?;
    fit_from_series(config, &channels, truth, chunk.ordinal).map_err(|e| e.in_stage("train"))
}

/// Final accounting of a run.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Accuracy metrics; present when ground truth was supplied.
    pub metrics: Option<MetricsReport>,
    /// Final matched pairs.
    pub matched_count: usize,
    /// Candidate pairs evaluated over the whole run, both directions.
    pub comparisons_performed: u64,
    /// Zero-activity entities skipped (channel_a, channel_b). For chunked
    /// runs, summed over windows.
    pub zero_a: usize,
    pub zero_b: usize,
    /// Windows processed (1 for single runs).
    pub chunk_count: u32,
    pub runtime_seconds: f64,
    /// Per-stage seconds, execution order, ending with the `other` residual;
    /// sums to `runtime_seconds`.
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    /// Serialize as `key = value` lines (the report file format).
    pub fn write_fields<W: Write>(&self, mut out: W) -> Result<()> {
        if let Some(metrics) = &self.metrics {
            metrics.write_fields(&mut out)?;
        } else {
            writeln!(out, "matched_count = {}", self.matched_count)?;
        }
        writeln!(out, "comparisons_performed = {}", self.comparisons_performed)?;
        writeln!(out, "zero_activity_a = {}", self.zero_a)?;
        writeln!(out, "zero_activity_b = {}", self.zero_b)?;
        writeln!(out, "chunk_count = {}", self.chunk_count)?;
        writeln!(out, "runtime_seconds = {}", self.runtime_seconds)?;
        for (stage, seconds) in &self.timings {
            writeln!(out, "stage_{stage}_seconds = {seconds}")?;
        }
        Ok(())
    }
}

/// A completed single run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The final match set (score-thresholded when likelihood scoring ran,
    /// the reconciled cosine matches otherwise).
    pub matches: MatchSet,
    pub report: RunReport,
    pub assignment: Option<ClusterAssignment>,
    pub model: Option<HypothesisModel>,
    pub table: Option<ScoreTable>,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Param(format!("cannot build a {workers}-worker pool: {e}")))
}

/// Run the whole pipeline over one event span.
///
/// Stages: bin (or read the feature cache) → optional feature/cluster →
/// forward and backward alignment → reconcile → optional likelihood scoring
/// and score thresholding → metrics (when truth is given). Deterministic for
/// a fixed config: the worker count changes only the runtime.
pub fn run_single(
    config: &PipelineConfig,
    events: &[Event],
    truth: Option<&GroundTruth>,
) -> Result<RunOutcome> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::Degenerate("no events to process".into()));
    }
    if config.likelihood && truth.is_none() {
        return Err(Error::Param(
            "likelihood scoring needs known pairs (truth) to train on".into(),
        ));
    }
    let pool = build_pool(config.workers)?;
    pool.install(|| run_single_inner(config, events, truth))
}

fn run_single_inner(
    config: &PipelineConfig,
    events: &[Event],
    truth: Option<&GroundTruth>,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut clock = StageClock::new();

    // Whole span as one chunk, anchored on the earliest event.
    let t0 = events.iter().map(|e| e.timestamp).min().expect("non-empty");
    let t_last = events.iter().map(|e| e.timestamp).max().expect("non-empty");
    let chunk = ChunkSpec {
        start: t0,
        end: t_last + 1,
        ordinal: 0,
    };

    let (spec, channels) = clock.run("bin", || {
        if let Some(cache) = &config.feature_cache {
            if cache.exists() {
                return read_cache_checked(config, cache);
            }
        }
        let binned = bin_chunk(config, &chunk, events)?;
        if let Some(cache) = &config.feature_cache {
            persist_file(cache, |out| write_series_cache(out, &binned.1, &binned.0))?;
        }
        Ok(binned)
    })?;

    let model = if config.likelihood {
        let truth = truth.expect("checked by run_single");
        Some(clock.run("train", || fit_from_series(config, &channels, truth, 0))?)
    } else {
        None
    };

    let result = process_binned(config, &spec, channels, 0, model.as_ref(), clock)?;
    let mut clock = StageClock::new();
    clock.merge(&result.timings);

    let (matches, table) = match (&model, &result.scores) {
        (Some(_), Some(scores)) => {
            let mut table = ScoreTable::new(&config.channel_a, &config.channel_b);
            table.accumulate(scores);
            let thresholded = clock.run("threshold", || {
                threshold_scores(&table, config.score_threshold)
            })?;
            (thresholded, Some(table))
        }
        _ => (result.matches.clone(), None),
    };

    let metrics = truth.map(|t| clock.run("metrics", || Ok(build_report(&matches, t))))
        .transpose()?;

    let runtime = start.elapsed().as_secs_f64();
    let report = RunReport {
        matched_count: matches.len(),
        metrics,
        comparisons_performed: result.comparisons,
        zero_a: result.zero_a,
        zero_b: result.zero_b,
        chunk_count: 1,
        runtime_seconds: runtime,
        timings: clock.finish(runtime),
    };
    Ok(RunOutcome {
        matches,
        report,
        assignment: result.assignment,
        model,
        table,
    })
}

fn read_cache_checked(
    config: &PipelineConfig,
    cache: &Path,
) -> Result<(BinningSpec, BTreeMap<String, ChannelSeries>)> {
    let file = fs::File::open(cache).map_err(|e| Error::File {
        path: cache.into(),
        msg: e.to_string(),
    })?;
    let (spec, channels) = read_series_cache(BufReader::new(file)).map_err(|e| Error::File {
        path: cache.into(),
        msg: e.to_string(),
    })?;
    if spec.delta_t != config.delta_t {
        return Err(Error::File {
            path: cache.into(),
            msg: format!(
                "cache was binned with delta_t = {}, run wants {}",
                spec.delta_t, config.delta_t
            ),
        });
    }
    let got: Vec<&str> = channels.keys().map(String::as_str).collect();
    let mut want = [config.channel_a.as_str(), config.channel_b.as_str()];
    want.sort_unstable();
    if got != want {
        return Err(Error::File {
            path: cache.into(),
            msg: format!(
                "cache holds channels {got:?}, run wants `{}` and `{}`",
                config.channel_a, config.channel_b
            ),
        });
    }
    Ok((spec, channels))
}

/// Durable progress of a chunked run, stored next to the score table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunState {
    pub chunks_done: u32,
    pub comparisons: u64,
    pub model: Option<HypothesisModel>,
}

/// Write the state file: `key = value` lines, model parameters included
/// once fitted.
pub fn write_state<W: Write>(mut out: W, state: &RunState) -> Result<()> {
    writeln!(out, "chunks_done = {}", state.chunks_done)?;
    writeln!(out, "comparisons = {}", state.comparisons)?;
    if let Some(model) = &state.model {
        writeln!(out, "sigma1 = {}", model.h1.sigma)?;
        writeln!(out, "sigma0 = {}", model.h0.sigma)?;
        writeln!(out, "overlap = {}", model.overlap)?;
    }
    Ok(())
}

/// Read a state file written by [`write_state`].
pub fn read_state<R: BufRead>(input: R) -> Result<RunState> {
    let mut chunks_done: Option<u32> = None;
    let mut comparisons: u64 = 0;
    let mut sigma1: Option<f64> = None;
    let mut sigma0: Option<f64> = None;
    let mut overlap: Option<f64> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::Parse {
            line: i + 1,
            msg: format!("invalid {what} `{value}`"),
        };
        match key {
            "chunks_done" => chunks_done = Some(value.parse().map_err(|_| bad("count"))?),
            "comparisons" => comparisons = value.parse().map_err(|_| bad("count"))?,
            "sigma1" => sigma1 = Some(value.parse().map_err(|_| bad("scale"))?),
            "sigma0" => sigma0 = Some(value.parse().map_err(|_| bad("scale"))?),
            "overlap" => overlap = Some(value.parse().map_err(|_| bad("overlap"))?),
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown state key `{other}`"),
                })
            }
        }
    }
    let chunks_done = chunks_done.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "state file lacks `chunks_done`".into(),
    })?;
    let model = match (sigma1, sigma0) {
        (Some(s1), Some(s0)) => {
            let mut model = HypothesisModel {
                h1: crate::likelihood::RayleighParams { sigma: s1 },
                h0: crate::likelihood::RayleighParams { sigma: s0 },
                overlap: 0.0,
            };
            model.overlap = overlap.unwrap_or_else(|| {
                crate::likelihood::compute_overlap(&model)
            });
            Some(model)
        }
        (None, None) => None,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "state file holds only one of sigma1/sigma0".into(),
            })
        }
    };
    Ok(RunState {
        chunks_done,
        comparisons,
        model,
    })
}

/// Write `path` atomically enough for chunk-boundary restarts: the content
/// lands in a sibling temp file first and is renamed over the target.
fn persist_file<F>(path: &Path, write_fn: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = fs::File::create(&tmp).map_err(|e| Error::File {
        path: tmp.clone(),
        msg: e.to_string(),
    })?;
    let mut out = BufWriter::new(file);
    write_fn(&mut out)?;
    out.flush()?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| Error::File {
        path: path.into(),
        msg: e.to_string(),
    })?;
    Ok(())
}

/// Per-window accounting of a chunked run.
#[derive(Debug, Clone)]
pub struct ChunkReport {
    pub ordinal: usize,
    pub events: usize,
    /// Reconciled matches inside this window.
    pub window_matches: usize,
    /// Pairs above the score threshold after folding this window in.
    pub cumulative_matches: usize,
    pub comparisons: u64,
    /// Metrics of the cumulative thresholded set, when truth is given.
    pub cumulative_metrics: Option<MetricsReport>,
    pub seconds: f64,
}

/// A chunked run's outcome — possibly partial, when `max_chunks` stopped it
/// early.
#[derive(Debug, Clone)]
pub struct ChunkedOutcome {
    /// Whether every window of the span has been folded in.
    pub finished: bool,
    pub chunks_total: usize,
    pub chunks_done: usize,
    /// The accumulated evidence table (cumulative across restarts).
    pub table: ScoreTable,
    pub model: Option<HypothesisModel>,
    /// Final thresholded matches; present only when finished.
    pub matches: Option<MatchSet>,
    /// Final report; present only when finished.
    pub report: Option<RunReport>,
    /// Windows processed by this invocation (resumed ones are not re-listed).
    pub chunk_reports: Vec<ChunkReport>,
}

/// Path of the persisted score table under `state_dir`.
pub fn scores_path(state_dir: &Path) -> PathBuf {
    state_dir.join("scores.csv")
}

/// Path of the persisted run state under `state_dir`.
pub fn state_path(state_dir: &Path) -> PathBuf {
    state_dir.join("state.txt")
}

/// Run the pipeline window by window, accumulating score evidence.
///
/// The span is cut into `chunk_length`-second windows; each is binned
/// locally, aligned, scored under the hypothesis model (fitted on the first
/// window, reused afterwards unless `refit_per_chunk`), and folded into the
/// score table. Table and state are persisted under `state_dir` after every
/// window, so a run stopped after any completed window resumes from there —
/// and the resumed run's final table is identical to an uninterrupted one.
/// `max_chunks` caps the total windows processed (for staged runs and
/// restart drills); `None` runs to the end of the span.
pub fn run_chunked(
    config: &PipelineConfig,
    events: &[Event],
    truth: Option<&GroundTruth>,
    state_dir: &Path,
    max_chunks: Option<usize>,
) -> Result<ChunkedOutcome> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::Degenerate("no events to process".into()));
    }
    let pool = build_pool(config.workers)?;
    pool.install(|| run_chunked_inner(config, events, truth, state_dir, max_chunks))
}

fn run_chunked_inner(
    config: &PipelineConfig,
    events: &[Event],
    truth: Option<&GroundTruth>,
    state_dir: &Path,
    max_chunks: Option<usize>,
) -> Result<ChunkedOutcome> {
    let start = Instant::now();
    let mut clock = StageClock::new();

    let chunks = clock.run("chunk", || partition_chunks(events, config.chunk_length))?;
    let chunks_total = chunks.len();

    fs::create_dir_all(state_dir).map_err(|e| Error::File {
        path: state_dir.into(),
        msg: e.to_string(),
    })?;
    let scores_file = scores_path(state_dir);
    let state_file = state_path(state_dir);

    // Resume from persisted state when present; otherwise start fresh.
    let (mut table, mut state) = if state_file.exists() {
        let file = fs::File::open(&state_file).map_err(|e| Error::File {
            path: state_file.clone(),
            msg: e.to_string(),
        })?;
        let state = read_state(BufReader::new(file)).map_err(|e| Error::File {
            path: state_file.clone(),
            msg: e.to_string(),
        })?;
        if state.chunks_done as usize > chunks_total {
            return Err(Error::File {
                path: state_file.clone(),
                msg: format!(
                    "state claims {} chunks done but the span only has {}",
                    state.chunks_done, chunks_total
                ),
            });
        }
        if state.chunks_done > 0 && state.model.is_none() {
            return Err(Error::File {
                path: state_file.clone(),
                msg: "state has completed chunks but no model parameters".into(),
            });
        }
        let file = fs::File::open(&scores_file).map_err(|e| Error::File {
            path: scores_file.clone(),
            msg: format!("state expects a score table here: {e}"),
        })?;
        let mut table =
            ScoreTable::read_csv(&config.channel_a, &config.channel_b, BufReader::new(file))
                .map_err(|e| Error::File {
                    path: scores_file.clone(),
                    msg: e.to_string(),
                })?;
        table.set_chunk_count(state.chunks_done);
        (table, state)
    } else {
        (
            ScoreTable::new(&config.channel_a, &config.channel_b),
            RunState {
                chunks_done: 0,
                comparisons: 0,
                model: None,
            },
        )
    };

    if truth.is_none() && state.model.is_none() {
        return Err(Error::Param(
            "chunked scoring needs known pairs (truth) to train the model on".into(),
        ));
    }

    let stop_at = max_chunks.unwrap_or(chunks_total).min(chunks_total);
    let mut chunk_reports = Vec::new();
    let mut zero_a = 0usize;
    let mut zero_b = 0usize;

    for (chunk, chunk_events) in chunks.iter().skip(state.chunks_done as usize) {
        if chunk.ordinal >= stop_at {
            break;
        }
        let window_start = Instant::now();

        let needs_fit = state.model.is_none()
            || (config.refit_per_chunk && !chunk_events.is_empty());
        if needs_fit {
            let truth = truth.ok_or_else(|| {
                Error::Param(
                    "chunked scoring needs known pairs (truth) to train the model on".into(),
                )
            })?;
            let model = clock.run("train", || {
                let (_, channels) = bin_chunk(config, chunk, chunk_events)?;
                fit_from_series(config, &channels, truth, chunk.ordinal)
            })?;
            state.model = Some(model);
        }

        let result = process_chunk(config, chunk, chunk_events, state.model.as_ref())?;
        clock.merge(&result.timings);
        let scores = result.scores.as_ref().expect("model present");
        table.accumulate(scores);

        state.chunks_done = chunk.ordinal as u32 + 1;
        state.comparisons += result.comparisons;
        zero_a += result.zero_a;
        zero_b += result.zero_b;

        persist_file(&scores_file, |out| table.write_csv(out))
            .map_err(|e| e.in_stage("persist"))?;
        persist_file(&state_file, |out| write_state(out, &state))
            .map_err(|e| e.in_stage("persist"))?;

        let cumulative = threshold_scores(&table, config.score_threshold)?;
        chunk_reports.push(ChunkReport {
            ordinal: chunk.ordinal,
            events: chunk_events.len(),
            window_matches: result.matches.len(),
            cumulative_matches: cumulative.len(),
            comparisons: result.comparisons,
            cumulative_metrics: truth.map(|t| build_report(&cumulative, t)),
            seconds: window_start.elapsed().as_secs_f64(),
        });
    }

    let finished = state.chunks_done as usize == chunks_total;
    let (matches, report) = if finished {
        let matches = clock.run("threshold", || {
            threshold_scores(&table, config.score_threshold)
        })?;
        let metrics = truth
            .map(|t| clock.run("metrics", || Ok(build_report(&matches, t))))
            .transpose()?;
        let runtime = start.elapsed().as_secs_f64();
        let report = RunReport {
            matched_count: matches.len(),
            metrics,
            comparisons_performed: state.comparisons,
            zero_a,
            zero_b,
            chunk_count: state.chunks_done,
            runtime_seconds: runtime,
            timings: clock.finish(runtime),
        };
        (Some(matches), Some(report))
    } else {
        (None, None)
    };

    Ok(ChunkedOutcome {
        finished,
        chunks_total,
        chunks_done: state.chunks_done as usize,
        table,
        model: state.model,
        matches,
        report,
        chunk_reports,
    })
}

/// Parse an event file against the run's channel catalog.
pub fn read_events_file(path: &Path, catalog: &ChannelCatalog) -> Result<Vec<Event>> {
    let file = fs::File::open(path).map_err(|e| Error::File {
        path: path.into(),
        msg: e.to_string(),
    })?;
    parse_events(BufReader::new(file), catalog).map_err(|e| Error::File {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// Read the run's input event files. A shared path is read once; distinct
/// paths are concatenated (each file may hold either or both channels).
pub fn read_inputs(config: &PipelineConfig) -> Result<Vec<Event>> {
    let catalog = config.catalog()?;
    let mut events = read_events_file(&config.input_a, &catalog)?;
    if config.input_b != config.input_a {
        events.extend(read_events_file(&config.input_b, &catalog)?);
    }
    if events.is_empty() {
        return Err(Error::Degenerate(format!(
            "no events in {} / {}",
            config.input_a.display(),
            config.input_b.display()
        )));
    }
    Ok(events)
}

/// Read a ground-truth pair file.
pub fn read_truth_file(path: &Path) -> Result<GroundTruth> {
    let file = fs::File::open(path).map_err(|e| Error::File {
        path: path.into(),
        msg: e.to_string(),
    })?;
    GroundTruth::read_csv(BufReader::new(file)).map_err(|e| Error::File {
        path: path.into(),
        msg: e.to_string(),
    })
}
