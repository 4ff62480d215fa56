//! End-to-end pipeline checks that cut across module seams: whole-span
//! runs vs single-window chunked runs, clean-world recovery, and the
//! feature cache round-trip.

use crosswire_core::ingest::{ChannelCatalog, Event};
use crosswire_core::eval::GroundTruth;
use crosswire_core::pipeline::{run_chunked, run_single, PipelineConfig};
use crosswire_core::synthgen::{generate, GeneratorConfig};

const DAY: u64 = 86_400;

fn gen_world(
    n_shared: usize,
    n_exclusive: usize,
    duration: u64,
    dropout: f64,
    jitter: f64,
    seed: u64,
) -> (Vec<Event>, GroundTruth) {
    let config = GeneratorConfig {
        n_shared,
        n_exclusive_per_channel: n_exclusive,
        duration,
        rate_range: (12.0, 12.0),
        dropout,
        jitter_sigma: jitter,
        channels: ChannelCatalog::new(["a", "b"]).unwrap(),
        seed,
    };
    let (per_channel, truth) = generate(&config).unwrap();
    (per_channel.into_values().flatten().collect(), truth)
}

#[test]
fn whole_span_run_equals_single_window_chunked_run() {
    let (events, truth) = gen_world(80, 20, 5 * DAY, 0.1, 1.0, 42);
    let config = PipelineConfig {
        delta_t: 3,
        threshold: 0.3,
        top_n: 1,
        likelihood: true,
        training_fraction: 0.2,
        null_draws: 40,
        score_threshold: 0.0,
        chunk_length: 30 * DAY, // wider than the span: exactly one window
        workers: 2,
        seed: 11,
        ..PipelineConfig::default()
    };

    let single = run_single(&config, &events, Some(&truth)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let chunked = run_chunked(&config, &events, Some(&truth), dir.path(), None).unwrap();
    assert!(chunked.finished);
    assert_eq!(chunked.chunks_total, 1);

    let mut single_table = Vec::new();
    single.table.unwrap().write_csv(&mut single_table).unwrap();
    let mut chunked_table = Vec::new();
    chunked.table.write_csv(&mut chunked_table).unwrap();
    assert_eq!(single_table, chunked_table);

    let mut single_matches = Vec::new();
    single.matches.write_csv(&mut single_matches).unwrap();
    let mut chunked_matches = Vec::new();
    chunked
        .matches
        .unwrap()
        .write_csv(&mut chunked_matches)
        .unwrap();
    assert_eq!(single_matches, chunked_matches);
}

#[test]
fn clean_world_is_recovered_perfectly() {
    // no exclusives, no dropout, no jitter: the two channels are identical
    let (events, truth) = gen_world(60, 0, 3 * DAY, 0.0, 0.0, 7);
    let config = PipelineConfig {
        delta_t: 3,
        threshold: 0.99,
        top_n: 1,
        workers: 2,
        seed: 5,
        ..PipelineConfig::default()
    };
    let outcome = run_single(&config, &events, Some(&truth)).unwrap();
    let metrics = outcome.report.metrics.unwrap();
    assert_eq!(metrics.ma, 1.0);
    assert_eq!(metrics.fnma, 1.0);
    assert_eq!(metrics.bnma, 1.0);
    assert_eq!(outcome.matches.len(), 60);
    for record in outcome.matches.records() {
        assert!(record.similarity > 0.99);
    }
}

#[test]
fn feature_cache_round_trip_preserves_results() {
    let (events, truth) = gen_world(40, 10, 2 * DAY, 0.1, 1.0, 99);
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        delta_t: 3,
        threshold: 0.3,
        top_n: 1,
        workers: 2,
        seed: 3,
        feature_cache: Some(dir.path().join("features.txt")),
        ..PipelineConfig::default()
    };

    let cold = run_single(&config, &events, Some(&truth)).unwrap();
    assert!(config.feature_cache.as_ref().unwrap().exists());
    let warm = run_single(&config, &events, Some(&truth)).unwrap();

    let render = |outcome: &crosswire_core::pipeline::RunOutcome| {
        let mut bytes = Vec::new();
        outcome.matches.write_csv(&mut bytes).unwrap();
        bytes
    };
    assert_eq!(render(&cold), render(&warm));
    assert_eq!(
        cold.report.comparisons_performed,
        warm.report.comparisons_performed
    );
}
