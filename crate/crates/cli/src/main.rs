//! `nextstop` command-line driver.

mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use nextstop::config::{ConfigError, FrameMode, PipelineConfig, SizeFilterSetting};
use nextstop::geometry::MatchingMetric;
use nextstop::kittiio::SequenceDir;
use nextstop::metrics::{parse_key_values, LstqAccumulator};
use nextstop::pipeline::{self, PipelineError, TrackSummary};
use nextstop::synth::{self, Scenario, SynthError};
use nextstop::tracker::TrackerError;

#[derive(Parser)]
#[command(name = "nextstop", version, about = "Two-stage 4D panoptic LiDAR tracking")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track boxes and write temporally consistent panoptic labels.
    Track(TrackArgs),
    /// Stage 2 only: label points from existing track logs.
    Label(LabelArgs),
    /// Score predictions against ground truth with LSTQ.
    Eval(EvalArgs),
    /// Generate a synthetic dataset from a scenario file.
    Synth(SynthArgs),
    /// Render figures from track logs or evaluation reports.
    #[command(subcommand)]
    Plot(PlotCommand),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root containing `sequences/NN`.
    #[arg(long, env = "NEXTSTOP_DATA_ROOT")]
    data_root: PathBuf,
    /// Comma-separated sequence names; all sequences when omitted.
    #[arg(long, value_delimiter = ',')]
    sequences: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    World,
    Ego,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML configuration; compiled-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable motion prediction (boxes keep their last measured state).
    #[arg(long)]
    no_kalman: bool,
    /// Similarity used for matching.
    #[arg(long)]
    matching: Option<MatchingMetric>,
    /// Emit tracklets from their first detection.
    #[arg(long)]
    no_candidate_state: bool,
    /// Treat every detection as high-score.
    #[arg(long)]
    no_score_split: bool,
    /// Coordinate frame for tracking.
    #[arg(long, value_enum)]
    frame_mode: Option<FrameArg>,
    /// Sequences processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output root; receives `sequences/NN/{predictions,tracks.txt,summary.txt}`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Root holding `sequences/NN/tracks.txt` from an earlier run.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth root containing `sequences/NN/labels`.
    #[arg(long, env = "NEXTSTOP_DATA_ROOT")]
    gt_root: PathBuf,
    /// Prediction root containing `sequences/NN/predictions`.
    #[arg(long)]
    pred_root: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sequences: Vec<String>,
    /// Association-score size filters to report.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 50])]
    min_points: Vec<usize>,
    /// Measure instance size over the whole tube instead of per frame.
    #[arg(long)]
    per_tube: bool,
    /// Directory for the report files.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario TOML file.
    scenario: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value = "00")]
    sequence: String,
}

#[derive(Subcommand)]
enum PlotCommand {
    /// Bird's-eye trajectories of a track log.
    Tracks {
        tracks: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// LSTQ per class from one or more `.kv` reports.
    Scores {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FailureKind {
    Other = 1,
    Config = 2,
    Io = 3,
    Eval = 4,
}

struct Failure {
    kind: FailureKind,
    error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self::new(FailureKind::Config, error)
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self::new(FailureKind::Io, error)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Io(_) | PipelineError::TrackFile { .. } => FailureKind::Io,
            PipelineError::Tracker(TrackerError::Config(_)) => FailureKind::Config,
            PipelineError::Eval { .. } | PipelineError::Mismatch { .. } => FailureKind::Eval,
            _ => FailureKind::Other,
        };
        Failure::new(kind, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let kind = match &e {
            ConfigError::Read { .. } | ConfigError::Write { .. } => FailureKind::Io,
            _ => FailureKind::Config,
        };
        Failure::new(kind, e)
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let kind = match &e {
            SynthError::Read { .. } | SynthError::Io(_) => FailureKind::Io,
            _ => FailureKind::Config,
        };
        Failure::new(kind, e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Everything needed to repeat a run, written next to its outputs.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    data_root: PathBuf,
    sequences: Vec<String>,
    config_path: Option<PathBuf>,
    output_root: PathBuf,
    tracks_root: Option<PathBuf>,
    min_points: Vec<usize>,
    config: PipelineConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Label(a) => cmd_label(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Plot(p) => cmd_plot(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.kind as u8)
        }
    }
}

/// Error chain joined with ": ", skipping causes already quoted by the
/// message above them.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn resolve_config(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ab = &mut cfg.tracker.ablation;
    if args.no_kalman {
        ab.use_kalman = false;
    }
    if let Some(m) = args.matching {
        ab.matching_metric = m;
    }
    if args.no_candidate_state {
        ab.use_candidate_state = false;
    }
    if args.no_score_split {
        ab.use_score_split = false;
    }
    if let Some(f) = args.frame_mode {
        cfg.frame_mode = match f {
            FrameArg::World => FrameMode::World,
            FrameArg::Ego => FrameMode::Ego,
        };
    }
    cfg.validate()?;
    if args.jobs == 0 {
        return Err(Failure::config(anyhow!("--jobs must be at least 1")));
    }
    Ok(cfg)
}

fn announce(cfg: &PipelineConfig) -> CliResult {
    eprintln!("# effective configuration\n{}", cfg.to_toml()?);
    Ok(())
}

fn list_sequences(root: &Path, requested: &[String]) -> CliResult<Vec<String>> {
    let dir = root.join("sequences");
    if !requested.is_empty() {
        for s in requested {
            if !dir.join(s).is_dir() {
                return Err(Failure::io(anyhow!("sequence {s} not found under {}", dir.display())));
            }
        }
        return Ok(requested.to_vec());
    }
    let mut names: Vec<String> = fs::read_dir(&dir)
        .with_context(|| format!("cannot list {}", dir.display()))
        .map_err(Failure::io)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::io(anyhow!("no sequences under {}", dir.display())));
    }
    Ok(names)
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(Failure::io)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

fn write_run_files(output: &Path, manifest: &RunManifest) -> CliResult {
    write_file(&output.join("config.toml"), &manifest.config.to_toml()?)?;
    let text = toml::to_string(manifest).map_err(|e| Failure::new(FailureKind::Other, e))?;
    write_file(&output.join("manifest.toml"), &text)
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::new(FailureKind::Other, e))
}

fn cmd_track(args: TrackArgs) -> CliResult {
    let cfg = resolve_config(&args.pipeline)?;
    announce(&cfg)?;
    let sequences = list_sequences(&args.data.data_root, &args.data.sequences)?;
    write_run_files(
        &args.output,
        &RunManifest {
            command: "track".into(),
            data_root: args.data.data_root.clone(),
            sequences: sequences.clone(),
            config_path: args.pipeline.config.clone(),
            output_root: args.output.clone(),
            tracks_root: None,
            min_points: cfg.eval.min_points.clone(),
            config: cfg.clone(),
        },
    )?;
    let results: Vec<CliResult<TrackSummary>> = pool(args.pipeline.jobs)?.install(|| {
        sequences
            .par_iter()
            .map(|name| {
                let seq = SequenceDir::new(&args.data.data_root, name);
                let out = SequenceDir::new(&args.output, name);
                info!(sequence = %name, "tracking");
                let tracks = pipeline::track_sequence(&seq, &cfg)?;
                pipeline::write_tracks(&out.path.join("tracks.txt"), &tracks).map_err(PipelineError::from)?;
                let overlap = pipeline::label_sequence(&seq, &out, &tracks, &cfg)?;
                let identity = pipeline::identity_stats(&seq, &tracks, &cfg)?;
                let summary = TrackSummary::new(&tracks, overlap, identity);
                write_file(&out.path.join("summary.txt"), &summary.to_key_values())?;
                Ok(summary)
            })
            .collect()
    });
    for (name, r) in sequences.iter().zip(results) {
        let s = r?;
        let switches = s
            .identity
            .as_ref()
            .map_or_else(|| "n/a".to_string(), |i| i.total_id_switches().to_string());
        println!(
            "sequence {name}: {} frames, {} tracks, {} id switches",
            s.frames,
            s.track_count(),
            switches
        );
    }
    Ok(())
}

fn cmd_label(args: LabelArgs) -> CliResult {
    let cfg = resolve_config(&args.pipeline)?;
    announce(&cfg)?;
    let sequences = list_sequences(&args.data.data_root, &args.data.sequences)?;
    write_run_files(
        &args.output,
        &RunManifest {
            command: "label".into(),
            data_root: args.data.data_root.clone(),
            sequences: sequences.clone(),
            config_path: args.pipeline.config.clone(),
            output_root: args.output.clone(),
            tracks_root: Some(args.tracks.clone()),
            min_points: cfg.eval.min_points.clone(),
            config: cfg.clone(),
        },
    )?;
    let results: Vec<CliResult> = pool(args.pipeline.jobs)?.install(|| {
        sequences
            .par_iter()
            .map(|name| {
                let seq = SequenceDir::new(&args.data.data_root, name);
                let out = SequenceDir::new(&args.output, name);
                let tracks = pipeline::read_tracks(&SequenceDir::new(&args.tracks, name).path.join("tracks.txt"))?;
                let overlap = pipeline::label_sequence(&seq, &out, &tracks, &cfg)?;
                println!(
                    "sequence {name}: labelled {} frames, {} overlapping box pairs",
                    tracks.len(),
                    overlap.overlapping_pairs
                );
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect()
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    if args.min_points.is_empty() || args.min_points.contains(&0) {
        return Err(Failure::config(anyhow!("--min-points values must be at least 1")));
    }
    let sequences = list_sequences(&args.gt_root, &args.sequences)?;
    let filter = if args.per_tube {
        SizeFilterSetting::PerTube
    } else {
        SizeFilterSetting::PerFrame
    };
    let mut total = LstqAccumulator::new();
    for (k, name) in sequences.iter().enumerate() {
        let gt = SequenceDir::new(&args.gt_root, name);
        let pred = SequenceDir::new(&args.pred_root, name);
        total.merge(pipeline::evaluate_sequence(&gt, &pred, k as u32)?);
    }
    for &m in &args.min_points {
        let report = total
            .report(m, filter.into())
            .map_err(|e| Failure::new(FailureKind::Eval, e))?;
        print!("{}", report.to_table());
        if let Some(dir) = &args.output {
            write_file(&dir.join(format!("lstq_min{m}.txt")), &report.to_table())?;
            write_file(&dir.join(format!("lstq_min{m}.kv")), &report.to_key_values())?;
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let scenario = Scenario::load(&args.scenario)?;
    let path = synth::generate(&scenario, &args.output, &args.sequence)?;
    write_file(
        &args.output.join("scenario.toml"),
        &fs::read_to_string(&args.scenario)
            .with_context(|| format!("cannot read {}", args.scenario.display()))
            .map_err(Failure::io)?,
    )?;
    println!(
        "wrote {} frames with {} objects to {}",
        scenario.frames,
        scenario.objects.len(),
        path.display()
    );
    Ok(())
}

fn cmd_plot(cmd: PlotCommand) -> CliResult {
    match cmd {
        PlotCommand::Tracks { tracks, output } => {
            let log = pipeline::read_tracks(&tracks)?;
            let title = format!("Trajectories: {}", tracks.display());
            let (svg, n) = plot::trajectories(&log, &title);
            if n == 0 {
                warn!("{} contains no tracks; writing empty axes", tracks.display());
            }
            write_file(&output, &svg)
        }
        PlotCommand::Scores { reports, output } => {
            let mut series = Vec::new();
            for path in &reports {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))
                    .map_err(Failure::io)?;
                let kv = parse_key_values(&text);
                let mut values = Vec::new();
                for line in text.lines() {
                    let Some((key, _)) = line.split_once('=') else { continue };
                    if let Some(row) = key.strip_suffix(".lstq") {
                        let v: f64 = kv[key]
                            .parse()
                            .with_context(|| format!("{}: bad value for {key}", path.display()))
                            .map_err(Failure::io)?;
                        values.push((row.to_string(), v));
                    }
                }
                let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                series.push(plot::ScoreSeries { name, values });
            }
            write_file(&output, &plot::grouped_bars(&series, "LSTQ per class", "LSTQ [%]"))
        }
    }
}
