//! crosswire — align entities across event-stream channels.
//!
//! Subcommands cover the whole loop: `generate` a synthetic world,
//! `run` / `run-chunked` the alignment pipeline, `evaluate` a match file
//! against ground truth, and `inspect-model` a persisted run state.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgAction, Args, Parser, Subcommand};

use crosswire_core::eval::build_report;
use crosswire_core::ingest::{write_events, ChannelCatalog};
use crosswire_core::likelihood::score_pair;
use crosswire_core::pipeline::{
    read_state, read_truth_file, run_chunked, run_single, state_path, write_state,
    PipelineConfig, RunState,
};
use crosswire_core::synthgen::{generate, GeneratorConfig};

#[derive(Parser)]
#[command(name = "crosswire", version, about = "Entity alignment across event-stream channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-channel world with known alignments
    Generate(GenerateArgs),
    /// Align two channels over the whole span in one pass
    Run(ConfigFlags),
    /// Align window by window, accumulating match evidence resumably
    RunChunked(RunChunkedArgs),
    /// Score a match file against ground truth
    Evaluate(EvaluateArgs),
    /// Print the persisted state and model of a chunked run
    InspectModel(InspectArgs),
}

/// Pipeline settings: every flag mirrors a config-file key and overrides it.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Config file of `key = value` lines (`#` comments allowed)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Source channel of the forward pass
    #[arg(long, value_name = "ID")]
    channel_a: Option<String>,
    /// Destination channel of the forward pass
    #[arg(long, value_name = "ID")]
    channel_b: Option<String>,
    /// Bin width in seconds
    #[arg(long, value_name = "SECONDS")]
    delta_t: Option<String>,
    /// Event side(s) counting toward activity: source_only, target_only, both
    #[arg(long, value_name = "MODE")]
    activity_mode: Option<String>,
    /// Clustering feature: none, redf, embf
    #[arg(long, value_name = "KIND")]
    cluster_feature: Option<String>,
    /// Clusters per group
    #[arg(long, value_name = "N")]
    k: Option<String>,
    /// Entities per clustering partition (0 = derive from sub_tasks)
    #[arg(long, value_name = "N")]
    partition_size: Option<String>,
    /// Per-partition clusterer: kmeans, gmm
    #[arg(long, value_name = "KIND")]
    clusterer: Option<String>,
    /// Super-points sampled per mixture component
    #[arg(long, value_name = "N")]
    gmm_samples: Option<String>,
    /// Spectral embedding dimensions
    #[arg(long, value_name = "N")]
    embf_dims: Option<String>,
    /// Entity-count gate on the quadratic embedding feature
    #[arg(long, value_name = "N")]
    embf_cap: Option<String>,
    /// Minimum cosine similarity for a candidate match
    #[arg(long, value_name = "X")]
    threshold: Option<String>,
    /// Matches kept per source entity
    #[arg(long, value_name = "N")]
    top_n: Option<String>,
    /// Score matches under the two-hypothesis model: true, false
    #[arg(long, value_name = "BOOL")]
    likelihood: Option<String>,
    /// Fraction of known pairs sampled for model training
    #[arg(long, value_name = "X")]
    training_fraction: Option<String>,
    /// Non-matching similarity draws per training row
    #[arg(long, value_name = "N")]
    null_draws: Option<String>,
    /// Accumulated-score cutoff for the final match set
    #[arg(long, value_name = "X")]
    score_threshold: Option<String>,
    /// Refit the model on every window: true, false
    #[arg(long, value_name = "BOOL")]
    refit_per_chunk: Option<String>,
    /// Window length in seconds for chunked runs
    #[arg(long, value_name = "SECONDS")]
    chunk_length: Option<String>,
    /// Logical shard count (part of the run identity)
    #[arg(long, value_name = "N")]
    sub_tasks: Option<String>,
    /// Thread-pool size (runtime only, never results)
    #[arg(long, value_name = "N")]
    workers: Option<String>,
    /// Master seed
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    /// Event file for channel_a
    #[arg(long, value_name = "FILE")]
    input_a: Option<PathBuf>,
    /// Event file for channel_b (may equal input_a)
    #[arg(long, value_name = "FILE")]
    input_b: Option<PathBuf>,
    /// Known aligned pairs (training and metrics)
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Binned-series cache file (single runs)
    #[arg(long, value_name = "FILE")]
    feature_cache: Option<PathBuf>,
    /// Where run artifacts land
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

impl ConfigFlags {
    /// defaults < config file < flags, all through one application path.
    fn build(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        let strings: [(&str, &Option<String>); 19] = [
            ("channel_a", &self.channel_a),
            ("channel_b", &self.channel_b),
            ("delta_t", &self.delta_t),
            ("activity_mode", &self.activity_mode),
            ("cluster_feature", &self.cluster_feature),
            ("k", &self.k),
            ("partition_size", &self.partition_size),
            ("clusterer", &self.clusterer),
            ("gmm_samples", &self.gmm_samples),
            ("embf_dims", &self.embf_dims),
            ("embf_cap", &self.embf_cap),
            ("threshold", &self.threshold),
            ("top_n", &self.top_n),
            ("likelihood", &self.likelihood),
            ("training_fraction", &self.training_fraction),
            ("null_draws", &self.null_draws),
            ("score_threshold", &self.score_threshold),
            ("refit_per_chunk", &self.refit_per_chunk),
            ("chunk_length", &self.chunk_length),
        ];
        for (key, value) in strings {
            if let Some(v) = value {
                config.apply_kv(key, v)?;
            }
        }
        for (key, value) in [
            ("sub_tasks", &self.sub_tasks),
            ("workers", &self.workers),
            ("seed", &self.seed),
        ] {
            if let Some(v) = value {
                config.apply_kv(key, v)?;
            }
        }
        if let Some(p) = &self.input_a {
            config.input_a = p.clone();
        }
        if let Some(p) = &self.input_b {
            config.input_b = p.clone();
        }
        if let Some(p) = &self.truth {
            config.truth = Some(p.clone());
        }
        if let Some(p) = &self.feature_cache {
            config.feature_cache = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            config.output_dir = p.clone();
        }
        config.validate()?;
        if config.input_a.as_os_str().is_empty() {
            bail!("input_a is required (config key `input_a` or flag `--input-a`)");
        }
        if config.input_b.as_os_str().is_empty() {
            bail!("input_b is required (config key `input_b` or flag `--input-b`)");
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunChunkedArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Where scores.csv and state.txt persist (default: <output_dir>/state)
    #[arg(long, value_name = "DIR")]
    state_dir: Option<PathBuf>,
    /// Stop after this many total windows; rerun to resume
    #[arg(long, value_name = "N")]
    max_chunks: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Entities present in both channels
    #[arg(long, default_value_t = 1000)]
    n_shared: usize,
    /// Entities present in exactly one channel, per channel
    #[arg(long, default_value_t = 100)]
    n_exclusive: usize,
    /// World length in days
    #[arg(long, default_value_t = 30.0)]
    duration_days: f64,
    /// Expected events per entity per day: a value or `lo:hi`
    #[arg(long, default_value = "10")]
    rate: String,
    /// Probability that an event is missing from a channel
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Timestamp noise standard deviation, seconds
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    /// Two channel names, comma separated
    #[arg(long, default_value = "a,b")]
    channels: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where events_<channel>.csv and truth.csv land
    #[arg(long, default_value = "data", value_name = "DIR")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Match CSV produced by a run
    #[arg(long, value_name = "FILE")]
    matches: PathBuf,
    /// Ground-truth pair CSV
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Also write the report here
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// A state.txt or model.txt written by a run
    #[arg(long, value_name = "FILE")]
    state: PathBuf,
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe (`crosswire ... | head`) like any
    // other line-oriented tool instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(flags) => cmd_run(flags),
        Command::RunChunked(args) => cmd_run_chunked(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::InspectModel(args) => cmd_inspect(args),
    }
}

fn write_file<F>(path: &Path, write_fn: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> crosswire_core::error::Result<()>,
{
    let file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_fn(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush()?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let names: Vec<&str> = args.channels.split(',').map(str::trim).collect();
    if names.len() != 2 {
        bail!("--channels wants exactly two comma-separated names, got `{}`", args.channels);
    }
    let rate_range = match args.rate.split_once(':') {
        Some((lo, hi)) => (
            lo.parse::<f64>().with_context(|| format!("bad rate `{}`", args.rate))?,
            hi.parse::<f64>().with_context(|| format!("bad rate `{}`", args.rate))?,
        ),
        None => {
            let r = args
                .rate
                .parse::<f64>()
                .with_context(|| format!("bad rate `{}`", args.rate))?;
            (r, r)
        }
    };
    if args.duration_days <= 0.0 {
        bail!("--duration-days must be positive");
    }
    let config = GeneratorConfig {
        n_shared: args.n_shared,
        n_exclusive_per_channel: args.n_exclusive,
        duration: (args.duration_days * 86_400.0).round() as u64,
        rate_range,
        dropout: args.dropout,
        jitter_sigma: args.jitter,
        channels: ChannelCatalog::new([names[0], names[1]])?,
        seed: args.seed,
    };
    let (per_channel, truth) = generate(&config)?;

    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    for (channel, events) in &per_channel {
        let path = args.output_dir.join(format!("events_{channel}.csv"));
        write_file(&path, |out| write_events(out, events))?;
        println!("channel {channel}: {} events -> {}", events.len(), path.display());
    }
    let truth_path = args.output_dir.join("truth.csv");
    write_file(&truth_path, |out| truth.write_csv(out))?;
    println!("truth: {} pairs -> {}", truth.len(), truth_path.display());
    Ok(())
}

fn load_run_inputs(
    config: &PipelineConfig,
) -> anyhow::Result<(Vec<crosswire_core::ingest::Event>, Option<crosswire_core::eval::GroundTruth>)>
{
    let events = crosswire_core::pipeline::read_inputs(config)?;
    let truth = config.truth.as_deref().map(read_truth_file).transpose()?;
    Ok((events, truth))
}

fn cmd_run(flags: ConfigFlags) -> anyhow::Result<()> {
    let config = flags.build()?;
    let (events, truth) = load_run_inputs(&config)?;
    println!("{} events across both inputs", events.len());

    let outcome = run_single(&config, &events, truth.as_ref())?;

    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let matches_path = config.output_dir.join("matches.csv");
    write_file(&matches_path, |out| outcome.matches.write_csv(out))?;
    let report_path = config.output_dir.join("report.txt");
    write_file(&report_path, |out| outcome.report.write_fields(out))?;
    if let Some(assignment) = &outcome.assignment {
        write_file(&config.output_dir.join("clusters.csv"), |out| {
            assignment.write_csv(out)
        })?;
    }
    if let Some(table) = &outcome.table {
        write_file(&config.output_dir.join("scores.csv"), |out| table.write_csv(out))?;
    }
    if let Some(model) = outcome.model {
        let state = RunState {
            chunks_done: 1,
            comparisons: outcome.report.comparisons_performed,
            model: Some(model),
        };
        write_file(&config.output_dir.join("model.txt"), |out| {
            write_state(out, &state)
        })?;
    }

    match &outcome.report.metrics {
        Some(m) => println!(
            "matched {} pairs (truth {}, ma = {:.4})",
            m.matched_count, m.truth_count, m.ma
        ),
        None => println!("matched {} pairs", outcome.matches.len()),
    }
    println!(
        "comparisons: {}; runtime: {:.2}s",
        outcome.report.comparisons_performed, outcome.report.runtime_seconds
    );
    println!("artifacts -> {}", config.output_dir.display());
    Ok(())
}

fn cmd_run_chunked(args: RunChunkedArgs) -> anyhow::Result<()> {
    let config = args.flags.build()?;
    let state_dir = args
        .state_dir
        .unwrap_or_else(|| config.output_dir.join("state"));
    let (events, truth) = load_run_inputs(&config)?;
    println!("{} events across both inputs", events.len());

    let outcome = run_chunked(&config, &events, truth.as_ref(), &state_dir, args.max_chunks)?;

    for report in &outcome.chunk_reports {
        let accuracy = match &report.cumulative_metrics {
            Some(m) => format!(", ma {:.4}", m.ma),
            None => String::new(),
        };
        println!(
            "window {}/{}: {} events, {} matches, cumulative {}{}, {:.2}s",
            report.ordinal + 1,
            outcome.chunks_total,
            report.events,
            report.window_matches,
            report.cumulative_matches,
            accuracy,
            report.seconds
        );
    }

    if outcome.finished {
        let matches = outcome.matches.expect("finished run has matches");
        let report = outcome.report.expect("finished run has a report");
        fs::create_dir_all(&config.output_dir)
            .with_context(|| format!("creating {}", config.output_dir.display()))?;
        write_file(&config.output_dir.join("matches.csv"), |out| {
            matches.write_csv(out)
        })?;
        write_file(&config.output_dir.join("report.txt"), |out| {
            report.write_fields(out)
        })?;
        match &report.metrics {
            Some(m) => println!(
                "finished {} windows: matched {} pairs (truth {}, ma = {:.4})",
                outcome.chunks_done, m.matched_count, m.truth_count, m.ma
            ),
            None => println!(
                "finished {} windows: matched {} pairs",
                outcome.chunks_done,
                matches.len()
            ),
        }
        println!("artifacts -> {}", config.output_dir.display());
    } else {
        println!(
            "stopped after {}/{} windows; rerun the same command to resume from {}",
            outcome.chunks_done,
            outcome.chunks_total,
            state_path(&state_dir).display()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let file = fs::File::open(&args.matches)
        .with_context(|| format!("opening {}", args.matches.display()))?;
    let matches = crosswire_core::align::MatchSet::read_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", args.matches.display()))?;
    let truth = read_truth_file(&args.truth)?;
    let report = build_report(&matches, &truth);

    let mut rendered = Vec::new();
    report.write_fields(&mut rendered)?;
    print!("{}", String::from_utf8_lossy(&rendered));
    if let Some(path) = &args.output {
        write_file(path, |out| report.write_fields(out))?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> anyhow::Result<()> {
    let file = fs::File::open(&args.state)
        .with_context(|| format!("opening {}", args.state.display()))?;
    let state = read_state(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", args.state.display()))?;
    println!("chunks_done = {}", state.chunks_done);
    println!("comparisons = {}", state.comparisons);
    match &state.model {
        Some(model) => {
            println!("sigma1 = {}", model.h1.sigma);
            println!("sigma0 = {}", model.h0.sigma);
            println!("overlap = {}", model.overlap);
            for s in [0.25, 0.5, 0.75, 1.0] {
                println!("llr({s}) = {}", score_pair(s, model));
            }
        }
        None => println!("no model parameters recorded yet"),
    }
    Ok(())
}
