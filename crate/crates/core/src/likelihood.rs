//! Likelihood-ratio scoring of candidate matches.
//!
//! A small training subset with known aligned pairs yields two empirical
//! distributions of per-entity maximum similarity: one where true
//! counterparts are present (H1) and one built from random non-matching
//! draws (H0). Both are well described by Rayleigh distributions, so each is
//! fitted with the closed-form MLE. A candidate pair's similarity is then
//! converted to the log ratio of the two densities; summing these scores as
//! successive temporal chunks are processed accumulates evidence, and pairs
//! whose accumulated score clears a threshold are tagged reliable matches.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{cosine_sim, MatchRecord, MatchSet};
use crate::error::{Error, Result};
use crate::features::ChannelSeries;

/// Similarities at or below zero are lifted here before any density or MLE
/// evaluation; the Rayleigh family lives on (0, ∞).
const SIM_FLOOR: f64 = 1e-9;

/// Scale parameter of a fitted Rayleigh distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighParams {
    pub sigma: f64,
}

impl RayleighParams {
    /// Density f(x; σ) = (x/σ²)·exp(−x²/(2σ²)) for x ≥ 0.
    pub fn density(&self, x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (x / s2) * (-x * x / (2.0 * s2)).exp()
    }
}

/// Closed-form Rayleigh maximum-likelihood fit: σ = √(Σx²/2n).
///
/// Zero or negative samples are clamped to a tiny positive floor first; at
/// least two samples are required.
pub fn rayleigh_mle(samples: &[f64]) -> Result<RayleighParams> {
    if samples.len() < 2 {
        return Err(Error::Param(format!(
            "Rayleigh fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut sum_sq = 0.0;
    for &x in samples {
        if !x.is_finite() {
            return Err(Error::Param("non-finite sample in Rayleigh fit".into()));
        }
        let x = x.max(SIM_FLOOR);
        sum_sq += x * x;
    }
    Ok(RayleighParams {
        sigma: (sum_sq / (2.0 * samples.len() as f64)).sqrt(),
    })
}

/// Training subset: per-channel binned-series subsets plus the known
/// aligned pairs between them.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    features_a: ChannelSeries,
    features_b: ChannelSeries,
    true_pairs: BTreeSet<(String, String)>,
}

impl TrainingSet {
    pub fn new(
        features_a: ChannelSeries,
        features_b: ChannelSeries,
        true_pairs: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        if features_a.is_empty() || features_b.is_empty() {
            return Err(Error::Param("training subsets must be non-empty".into()));
        }
        let true_pairs: BTreeSet<(String, String)> = true_pairs.into_iter().collect();
        for (u, v) in &true_pairs {
            if !features_a.contains_key(u) || !features_b.contains_key(v) {
                return Err(Error::Param(format!(
                    "true pair ({u}, {v}) has an endpoint outside the training subsets"
                )));
            }
        }
        Ok(TrainingSet {
            features_a,
            features_b,
            true_pairs,
        })
    }

    pub fn features_a(&self) -> &ChannelSeries {
        &self.features_a
    }

    pub fn features_b(&self) -> &ChannelSeries {
        &self.features_b
    }

    pub fn true_pairs(&self) -> &BTreeSet<(String, String)> {
        &self.true_pairs
    }
}

/// Sample a training set: a fraction of the known aligned pairs (at least
/// two), drawn uniformly without replacement, restricted to pairs whose both
/// endpoints show activity. The destination subset is the sampled pairs'
/// counterparts, so every source row has its true counterpart present and
/// the other rows' counterparts serve as non-matching candidates.
pub fn build_training_set(
    series_a: &ChannelSeries,
    series_b: &ChannelSeries,
    true_pairs: &[(String, String)],
    fraction: f64,
    seed: u64,
) -> Result<TrainingSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Param(format!(
            "training fraction {fraction} must lie in (0, 1]"
        )));
    }
    let mut pool: Vec<&(String, String)> = true_pairs
        .iter()
        .filter(|(u, v)| {
            series_a.get(u).is_some_and(|s| !s.is_empty())
                && series_b.get(v).is_some_and(|s| !s.is_empty())
        })
        .collect();
    pool.sort();
    pool.dedup();
    if pool.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} active aligned pairs available for training (need 2)",
            pool.len()
        )));
    }
    let want = ((fraction * pool.len() as f64).ceil() as usize).clamp(2, pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), want).into_vec();
    picked.sort_unstable();
    let mut features_a = ChannelSeries::new();
    let mut features_b = ChannelSeries::new();
    let mut pairs = Vec::new();
    for i in picked {
        let (u, v) = pool[i];
        features_a.insert(u.clone(), series_a[u].clone());
        features_b.insert(v.clone(), series_b[v].clone());
        pairs.push((u.clone(), v.clone()));
    }
    TrainingSet::new(features_a, features_b, pairs)
}

/// Fit the aligned-hypothesis distribution: each source row's maximum
/// similarity over the whole destination subset (its true counterpart is
/// present, so matched rows peak high).
pub fn fit_h1(train: &TrainingSet) -> Result<RayleighParams> {
    let maxima = row_maxima(train);
    if maxima.iter().all(|&s| s <= 0.0) {
        return Err(Error::Degenerate(
            "every training row has zero maximum similarity".into(),
        ));
    }
    rayleigh_mle(&maxima)
}

fn row_maxima(train: &TrainingSet) -> Vec<f64> {
    train
        .features_a
        .values()
        .map(|u| {
            train
                .features_b
                .values()
                .map(|v| cosine_sim(u, v))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Fit the null-hypothesis distribution: for each source row, the maximum
/// similarity over `null_draws` destination entities drawn uniformly at
/// random (without replacement) from those that are *not* its true
/// counterparts. The draw count is capped at the smallest candidate pool so
/// every row's maximum is over the same number of draws.
pub fn fit_h0(train: &TrainingSet, null_draws: usize, seed: u64) -> Result<RayleighParams> {
    if null_draws == 0 {
        return Err(Error::Param("null_draws must be >= 1".into()));
    }
    let dst: Vec<(&String, &crate::features::BinnedTimeSeries)> =
        train.features_b.iter().collect();
    let counterparts: BTreeMap<&str, HashSet<&str>> = {
        let mut map: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
        for (u, v) in &train.true_pairs {
            map.entry(u.as_str()).or_default().insert(v.as_str());
        }
        map
    };
    let empty = HashSet::new();
    let candidate_lists: Vec<(&String, Vec<usize>)> = train
        .features_a
        .keys()
        .map(|u| {
            let excluded = counterparts.get(u.as_str()).unwrap_or(&empty);
            let candidates: Vec<usize> = (0..dst.len())
                .filter(|&i| !excluded.contains(dst[i].0.as_str()))
                .collect();
            (u, candidates)
        })
        .collect();
    let min_pool = candidate_lists
        .iter()
        .map(|(_, c)| c.len())
        .min()
        .unwrap_or(0);
    if min_pool == 0 {
        return Err(Error::Degenerate(
            "a training row has no non-matching destination candidates".into(),
        ));
    }
    let m = null_draws.min(min_pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maxima = Vec::with_capacity(candidate_lists.len());
    for (u, candidates) in &candidate_lists {
        let src = &train.features_a[*u];
        let max = rand::seq::index::sample(&mut rng, candidates.len(), m)
            .into_iter()
            .map(|i| cosine_sim(src, dst[candidates[i]].1))
            .fold(0.0, f64::max);
        maxima.push(max);
    }
    if maxima.iter().all(|&s| s <= 0.0) {
        log::warn!("all null maxima are zero; H0 scale degenerates to the floor");
    }
    rayleigh_mle(&maxima)
}

/// The fitted pair of hypothesis distributions plus their overlap
/// coefficient (a separability diagnostic: near 1 means the similarity
/// feature barely distinguishes matched from unmatched pairs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisModel {
    pub h1: RayleighParams,
    pub h0: RayleighParams,
    pub overlap: f64,
}

impl HypothesisModel {
    /// Fit both hypotheses from a training set and compute their overlap,
    /// warning when the distributions are too entangled to discriminate.
    pub fn fit(train: &TrainingSet, null_draws: usize, seed: u64) -> Result<Self> {
        let h1 = fit_h1(train)?;
        let h0 = fit_h0(train, null_draws, seed)?;
        let mut model = HypothesisModel {
            h1,
            h0,
            overlap: 0.0,
        };
        model.overlap = compute_overlap(&model);
        if model.overlap > 0.5 {
            log::warn!(
                "hypothesis distributions overlap by {:.3}; similarity has weak \
                 discriminatory power on this data",
                model.overlap
            );
        }
        Ok(model)
    }
}

/// Log-likelihood-ratio score of one similarity under the fitted model:
/// ln f(s; σ₁) − ln f(s; σ₀), with s clamped into [1e−9, 1].
pub fn score_pair(similarity: f64, model: &HypothesisModel) -> f64 {
    let s = similarity.clamp(SIM_FLOOR, 1.0);
    let (s1, s0) = (model.h1.sigma, model.h0.sigma);
    2.0 * (s0 / s1).ln() + 0.5 * s * s * (1.0 / (s0 * s0) - 1.0 / (s1 * s1))
}

/// Score every record of a match set, keyed by entity pair.
pub fn score_matches(
    matches: &MatchSet,
    model: &HypothesisModel,
) -> BTreeMap<(String, String), f64> {
    matches
        .records()
        .iter()
        .map(|r| {
            (
                (r.entity_a.clone(), r.entity_b.clone()),
                score_pair(r.similarity, model),
            )
        })
        .collect()
}

/// Overlap coefficient of the two fitted densities: ∫ min(f₁, f₀) dx over
/// [0, 6·max σ], by composite Simpson quadrature (absolute error well under
/// 1e−4 for these smooth integrands).
pub fn compute_overlap(model: &HypothesisModel) -> f64 {
    let f = |x: f64| model.h1.density(x).min(model.h0.density(x));
    let hi = 6.0 * model.h1.sigma.max(model.h0.sigma);
    simpson(f, 0.0, hi, 4096)
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n >= 2 && n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// A pair's accumulated evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub score: f64,
    /// Chunks in which this pair was compared and scored.
    pub chunks: u32,
}

/// Accumulated per-pair log scores across temporal chunks, oriented like the
/// match sets that feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    channel_a: String,
    channel_b: String,
    scores: BTreeMap<(String, String), PairScore>,
    chunk_count: u32,
}

impl ScoreTable {
    pub fn new<A: Into<String>, B: Into<String>>(channel_a: A, channel_b: B) -> Self {
        ScoreTable {
            channel_a: channel_a.into(),
            channel_b: channel_b.into(),
            scores: BTreeMap::new(),
            chunk_count: 0,
        }
    }

    pub fn channel_a(&self) -> &str {
        &self.channel_a
    }

    pub fn channel_b(&self) -> &str {
        &self.channel_b
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, entity_a: &str, entity_b: &str) -> Option<PairScore> {
        self.scores
            .get(&(entity_a.to_string(), entity_b.to_string()))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &PairScore)> {
        self.scores.iter()
    }

    /// Chunks accumulated so far (including ones that scored no pairs).
    pub fn chunk_count(&self) -> u32 {
        self.chunk_count
    }

    /// Restore the chunk counter when resuming from persisted state.
    pub fn set_chunk_count(&mut self, chunks: u32) {
        self.chunk_count = chunks;
    }

    /// Fold one chunk's scores into the table: per-pair addition, pairs new
    /// to the table start from their chunk value, pairs absent from the
    /// chunk are untouched (a pair not compared in a chunk contributes no
    /// evidence either way).
    pub fn accumulate(&mut self, chunk_scores: &BTreeMap<(String, String), f64>) {
        for (pair, &score) in chunk_scores {
            let entry = self
                .scores
                .entry(pair.clone())
                .or_insert(PairScore { score: 0.0, chunks: 0 });
            entry.score += score;
            entry.chunks += 1;
        }
        self.chunk_count += 1;
    }

    /// Write as CSV `entity_a,entity_b,score,chunks`, sorted by pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "entity_a,entity_b,score,chunks")?;
        for ((a, b), ps) in &self.scores {
            writeln!(out, "{a},{b},{},{}", ps.score, ps.chunks)?;
        }
        Ok(())
    }

    /// Read a CSV written by [`Self::write_csv`]. The table's chunk counter
    /// is restored to the largest per-pair chunk count seen (callers holding
    /// richer state may overwrite it via [`Self::set_chunk_count`]).
    pub fn read_csv<R: BufRead>(channel_a: &str, channel_b: &str, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim_end_matches('\r') != "entity_a,entity_b,score,chunks" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `entity_a,entity_b,score,chunks`".into(),
            });
        }
        let mut table = ScoreTable::new(channel_a, channel_b);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let line = line.trim_end_matches('\r');
            let fields: Vec<&str> = line.split(',').collect();
            let [a, b, score, chunks] = fields.as_slice() else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 4 fields, found {}", fields.len()),
                });
            };
            let score: f64 = score.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid score `{score}`"),
            })?;
            if !score.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "non-finite score".into(),
                });
            }
            let chunks: u32 = chunks.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid chunk count `{chunks}`"),
            })?;
            if table
                .scores
                .insert((a.to_string(), b.to_string()), PairScore { score, chunks })
                .is_some()
            {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate pair ({a}, {b})"),
                });
            }
            table.chunk_count = table.chunk_count.max(chunks);
        }
        Ok(table)
    }
}

/// Tag every pair whose accumulated score reaches `threshold`; the returned
/// set carries accumulated scores in its value column.
pub fn threshold_scores(table: &ScoreTable, threshold: f64) -> Result<MatchSet> {
    let records = table
        .scores
        .iter()
        .filter(|(_, ps)| ps.score >= threshold)
        .map(|((a, b), ps)| MatchRecord {
            entity_a: a.clone(),
            entity_b: b.clone(),
            similarity: ps.score,
        })
        .collect();
    MatchSet::from_scored(table.channel_a.clone(), table.channel_b.clone(), records)
}
