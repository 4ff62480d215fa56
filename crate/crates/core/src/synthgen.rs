//! Deterministic synthetic event streams with known cross-channel identity.
//!
//! Each latent entity draws an activity rate and emits a homogeneous
//! Poisson event process over the configured duration. Shared entities
//! exist in both channels: every latent event projects into each channel
//! independently, surviving with probability `1 − dropout` and landing at a
//! Gaussian-jittered timestamp. Exclusive entities project into exactly one
//! channel. The returned ground truth lists each shared entity's two
//! channel-local identities.
//!
//! All randomness derives from the config seed through per-entity and
//! per-projection substreams, so generation is reproducible and independent
//! of evaluation order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::ingest::{ChannelCatalog, Event};
use crate::{derive_seed, salt_str, stream};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Synthetic-world parameters.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// Entities present in both channels (the alignable population).
    pub n_shared: usize,
    /// Entities present in exactly one channel, per channel.
    pub n_exclusive_per_channel: usize,
    /// World length in seconds.
    pub duration: u64,
    /// Per-entity expected events per day, drawn uniformly per entity.
    pub rate_range: (f64, f64),
    /// Probability that a latent event is omitted from a projection.
    pub dropout: f64,
    /// Standard deviation of Gaussian timestamp noise per projected event,
    /// in seconds.
    pub jitter_sigma: f64,
    /// Exactly two channels; the first is the truth's A side.
    pub channels: ChannelCatalog,
    pub seed: u64,
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.channels.len() != 2 {
            return Err(Error::Param(format!(
                "generator needs exactly 2 channels, got {}",
                self.channels.len()
            )));
        }
        if self.duration == 0 {
            return Err(Error::Param("duration must be positive".into()));
        }
        let (lo, hi) = self.rate_range;
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
            return Err(Error::Param(format!(
                "rate range ({lo}, {hi}) must be positive with min <= max"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if !self.jitter_sigma.is_finite() || self.jitter_sigma < 0.0 {
            return Err(Error::Param(format!(
                "jitter sigma {} must be non-negative",
                self.jitter_sigma
            )));
        }
        if self.n_shared == 1 {
            return Err(Error::Param(
                "a single shared entity has no one to interact with; use 0 or >= 2".into(),
            ));
        }
        if self.n_shared == 0 && self.n_exclusive_per_channel < 2 {
            return Err(Error::Param(
                "need at least 2 entities per channel to draw interaction targets".into(),
            ));
        }
        Ok(())
    }

    fn n_latent(&self) -> usize {
        self.n_shared + 2 * self.n_exclusive_per_channel
    }
}

/// Which channels a latent entity inhabits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Residence {
    Shared,
    /// Exclusive to the channel with this ordinal, with its index among
    /// that channel's exclusives.
    Exclusive(usize, usize),
}

fn residence(config: &GeneratorConfig, ordinal: usize) -> Residence {
    if ordinal < config.n_shared {
        Residence::Shared
    } else {
        let e = ordinal - config.n_shared;
        Residence::Exclusive(e / config.n_exclusive_per_channel, e % config.n_exclusive_per_channel)
    }
}

/// Channel-local identity of a latent entity (suffix `a`/`b` by channel
/// ordinal). Exclusive entities only have an identity in their own channel.
fn local_id(config: &GeneratorConfig, ordinal: usize, channel_ordinal: usize) -> String {
    let suffix = ["a", "b"][channel_ordinal];
    match residence(config, ordinal) {
        Residence::Shared => format!("u{ordinal:05}{suffix}"),
        Residence::Exclusive(c, e) => {
            debug_assert_eq!(c, channel_ordinal);
            format!("x{e:05}{suffix}")
        }
    }
}

/// Draw the latent ordinal of one interaction target for `source`.
///
/// Shared entities interact with other shared entities (both endpoints must
/// exist in both channels); exclusive entities interact with anyone visible
/// in their channel: shared entities or sibling exclusives, never
/// themselves.
fn draw_target(config: &GeneratorConfig, source: usize, rng: &mut ChaCha8Rng) -> usize {
    match residence(config, source) {
        Residence::Shared => {
            let k = rng.gen_range(0..config.n_shared - 1);
            k + usize::from(k >= source)
        }
        Residence::Exclusive(c, e) => {
            let pool = config.n_shared + config.n_exclusive_per_channel - 1;
            let k = rng.gen_range(0..pool);
            if k < config.n_shared {
                k
            } else {
                let j = k - config.n_shared;
                let j = j + usize::from(j >= e);
                config.n_shared + c * config.n_exclusive_per_channel + j
            }
        }
    }
}

/// A latent entity's event process: (timestamp, target ordinal), sorted by
/// timestamp.
fn latent_events(config: &GeneratorConfig, ordinal: usize) -> Result<Vec<(u64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[stream::SYNTH_ENTITY, ordinal as u64],
    ));
    let (lo, hi) = config.rate_range;
    let rate_per_day = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let lambda = rate_per_day * config.duration as f64 / SECONDS_PER_DAY;
    let n = Poisson::new(lambda)
        .map_err(|e| Error::Param(format!("invalid Poisson rate {lambda}: {e}")))?
        .sample(&mut rng) as usize;
    let mut times: Vec<u64> = (0..n).map(|_| rng.gen_range(0..config.duration)).collect();
    times.sort_unstable();
    Ok(times
        .into_iter()
        .map(|t| (t, draw_target(config, ordinal, &mut rng)))
        .collect())
}

/// Project one entity's latent events into one channel: per-event dropout,
/// then Gaussian timestamp jitter rounded to whole seconds and clamped into
/// the world.
fn project(
    config: &GeneratorConfig,
    ordinal: usize,
    channel_ordinal: usize,
    events: &[(u64, usize)],
) -> Vec<Event> {
    let channel = &config.channels.channels()[channel_ordinal];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[stream::SYNTH_PROJECT, ordinal as u64, salt_str(channel)],
    ));
    let jitter = Normal::new(0.0, config.jitter_sigma).expect("validated sigma");
    let source = local_id(config, ordinal, channel_ordinal);
    let mut out = Vec::new();
    for &(t, target) in events {
        if rng.gen::<f64>() < config.dropout {
            continue;
        }
        let shifted = (t as f64 + jitter.sample(&mut rng))
            .round()
            .clamp(0.0, config.duration as f64) as u64;
        out.push(Event {
            source: source.clone(),
            target: local_id(config, target, channel_ordinal),
            channel: channel.clone(),
            timestamp: shifted,
        });
    }
    out
}

/// Generate both channels' event streams and the ground truth.
///
/// Events per channel come back sorted by (timestamp, source, target).
pub fn generate(config: &GeneratorConfig) -> Result<(BTreeMap<String, Vec<Event>>, GroundTruth)> {
    config.validate()?;
    let latents: Vec<Vec<(u64, usize)>> = (0..config.n_latent())
        .into_par_iter()
        .map(|ordinal| latent_events(config, ordinal))
        .collect::<Result<Vec<_>>>()?;

    let mut per_channel = BTreeMap::new();
    for (channel_ordinal, channel) in config.channels.channels().iter().enumerate() {
        let mut events: Vec<Event> = (0..config.n_latent())
            .into_par_iter()
            .filter(|&ordinal| match residence(config, ordinal) {
                Residence::Shared => true,
                Residence::Exclusive(c, _) => c == channel_ordinal,
            })
            .flat_map_iter(|ordinal| project(config, ordinal, channel_ordinal, &latents[ordinal]))
            .collect();
        events.par_sort_unstable_by(|x, y| {
            (x.timestamp, &x.source, &x.target).cmp(&(y.timestamp, &y.source, &y.target))
        });
        per_channel.insert(channel.clone(), events);
    }

    let truth = GroundTruth::new(
        (0..config.n_shared).map(|i| (local_id(config, i, 0), local_id(config, i, 1))),
    );
    Ok((per_channel, truth))
}
