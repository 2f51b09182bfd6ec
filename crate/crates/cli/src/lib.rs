//! The `mevtr` command line. Each subcommand reads its inputs, calls one
//! library operation, and writes the result as JSON (plus optional CSV).

pub mod config;

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use crate::config::parse_config;

/// Environment variable consulted for the log level when `--log-level` is
/// not given.
pub const LOG_ENV: &str = "MEVTR_LOG";

#[derive(Debug, Parser)]
#[command(name = "mevtr", version, about = "Multi-event video-text retrieval tools")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in this invocation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Base directory for relative output paths.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<LevelFilter>,
    /// Worker threads for scoring.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus (manifest, embeddings, frame labels).
    Generate(GenerateArgs),
    /// Pick key-event frames per video with K-Medoids.
    SelectEvents(SelectEventsArgs),
    /// Score every video against every caption.
    Score(ScoreArgs),
    /// Evaluate the contrastive loss of one batch of scores.
    LossEval(LossEvalArgs),
    /// Train the projection head.
    Train(TrainArgs),
    /// Retrieval metrics for a score matrix.
    Evaluate(EvaluateArgs),
    /// Mean caption-to-caption similarity per video.
    DiagnoseCollapse(CollapseArgs),
}

/// Inclusive count range written `lo..hi` or a single `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange(pub usize, pub usize);

impl std::str::FromStr for CountRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad count {t:?}"));
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.strip_prefix('=').unwrap_or(b))?),
            None => {
                let n = parse(s)?;
                (n, n)
            }
        };
        if lo == 0 || lo > hi {
            return Err(format!("range {s:?} must satisfy 1 <= lo <= hi"));
        }
        Ok(CountRange(lo, hi))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 40)]
    pub n_videos: usize,
    /// Events (captions) per video.
    #[arg(long, default_value = "3..6")]
    pub events: CountRange,
    /// Frames per event.
    #[arg(long, default_value = "4..8")]
    pub frames: CountRange,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Minimum `1 - cos` between event anchors within a video.
    #[arg(long, default_value_t = 0.5)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Seconds per sampled frame.
    #[arg(long, default_value_t = 5.0)]
    pub frame_interval: f64,
    /// Output directory.
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Even,
    Plusplus,
}

#[derive(Debug, Clone, Args)]
pub struct SelectEventsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 60)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Even)]
    pub init: InitArg,
    /// Skip the medoid-swap polishing phase.
    #[arg(long)]
    pub no_swap: bool,
    #[arg(long, default_value = "keyevents.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Key-event file; without it every frame is a key event.
    #[arg(long)]
    pub keyevents: Option<PathBuf>,
    /// avg, max or mean.
    #[arg(long, default_value = "avg")]
    pub mode: mevtr::similarity::SimilarityMode,
    /// Optional projection head (`.emb`) applied to frames and captions.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value = "scores.emb")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LossEvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// JSON batch layout, `{"positives": [[0, 1], [2]]}`.
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// `dynamic` or a fixed positive weight.
    #[arg(long, default_value = "dynamic")]
    pub alpha: mevtr::loss::Weighting,
    /// Use the plain softmax baseline instead.
    #[arg(long)]
    pub no_mevtr_loss: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReclusterArg {
    Once,
    Epoch,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_videos: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value = "dynamic")]
    pub alpha: mevtr::loss::Weighting,
    #[arg(long, default_value = "avg")]
    pub mode: mevtr::similarity::SimilarityMode,
    /// Mean-pool every frame instead of key events.
    #[arg(long)]
    pub no_key_events: bool,
    /// Train with the plain softmax baseline.
    #[arg(long)]
    pub no_mevtr_loss: bool,
    #[arg(long, value_enum, default_value_t = ReclusterArg::Once)]
    pub recluster: ReclusterArg,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 60)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
    /// Also write the trained head as an embedding file.
    #[arg(long)]
    pub head_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    V2t,
    T2v,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    None,
    Duration,
    Events,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::V2t)]
    pub task: TaskArg,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,50")]
    pub ks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SubsetArg::None)]
    pub subset_by: SubsetArg,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Also write a flat table of the recalls.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CollapseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Projection head (`.emb`) applied to captions first.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Leave out each caption's similarity with itself.
    #[arg(long)]
    pub no_self_pairs: bool,
    #[arg(long, default_value = "collapse.json")]
    pub out: PathBuf,
    /// Also write the per-event-count table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Lib(mevtr::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Lib(e) if e.is_io() => 2,
            CliError::Lib(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<mevtr::Error> for CliError {
    fn from(e: mevtr::Error) -> Self {
        CliError::Lib(e)
    }
}

const VALUE_GLOBALS: [&str; 5] = ["--config", "--seed", "--out-dir", "--log-level", "--threads"];

fn build_command() -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

/// Position of the subcommand token and the `--config` value, if any.
fn scan(argv: &[String], subcommands: &[String]) -> (Option<usize>, Option<String>) {
    let mut sub = None;
    let mut config = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--" {
            break;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if VALUE_GLOBALS.contains(&a.as_str()) {
            if a == "--config" {
                config = argv.get(i + 1).cloned();
            }
            i += 1;
        } else if sub.is_none() && subcommands.contains(a) {
            sub = Some(i);
        }
        i += 1;
    }
    (sub, config)
}

/// Turns config entries into flags placed right after the subcommand, so
/// later command-line occurrences override them.
fn config_args(cmd: &clap::Command, sub: &str, text: &str) -> Result<Vec<String>, CliError> {
    let cfg = parse_config(text).map_err(|e| CliError::Usage(e.to_string()))?;
    let names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
    if let Some(unknown) = cfg.sections.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(CliError::Usage(format!("config section [{unknown}] names no subcommand")));
    }
    let subcmd = cmd.find_subcommand(sub).expect("scanned subcommand exists");
    let mut out = Vec::new();
    for entry in cfg.entries_for(sub) {
        let arg = subcmd
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(entry.key.as_str()))
            .filter(|a| a.get_id() != "config" && a.get_id() != "help" && a.get_id() != "version")
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: {:?} is not an option of `{sub}`",
                    entry.line, entry.key
                ))
            })?;
        if arg.get_action().takes_values() {
            out.push(format!("--{}={}", entry.key, entry.value));
        } else {
            match entry.value.as_str() {
                "true" => out.push(format!("--{}", entry.key)),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config line {}: flag {:?} takes true or false, got {other:?}",
                        entry.line, entry.key
                    )))
                }
            }
        }
    }
    Ok(out)
}

fn init_logging(level: Option<LevelFilter>) {
    let level = level
        .or_else(|| std::env::var(LOG_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(LevelFilter::Warn);
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = match argv
        .into_iter()
        .map(|a| a.into().into_string())
        .collect::<Result<_, _>>()
    {
        Ok(v) => v,
        Err(bad) => {
            eprintln!("error: argument is not valid UTF-8: {bad:?}");
            return 1;
        }
    };
    match parse_and_run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_and_run(mut argv: Vec<String>) -> Result<(), CliError> {
    let cmd = build_command();
    let subcommands: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    if let (Some(at), Some(path)) = scan(&argv, &subcommands) {
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: PathBuf::from(&path),
            source,
        })?;
        let injected = config_args(&cmd, &argv[at], &text)?;
        argv.splice(at + 1..at + 1, injected);
    }
    let matches = match cmd.try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string().trim_end().trim_start_matches("error: ").to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    init_logging(cli.global.log_level);
    if cli.global.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    commands::dispatch(&cli)
}

/// Resolves an output path against `--out-dir` and creates its parent.
pub(crate) fn output_path(global: &GlobalArgs, path: &Path) -> Result<PathBuf, CliError> {
    let full = match &global.out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    };
    if let Some(parent) = full.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    Ok(full)
}
