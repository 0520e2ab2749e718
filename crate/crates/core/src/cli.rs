//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{env_seed, parse_override, parse_pairs, RunConfig};
use crate::data::{load_csv, synth_generate, write_csv, AnomalyKind};
use crate::error::{Error, Result};
use crate::pipeline::{decision_record, run_offline, run_online, summary_record};
use crate::rank::{aggregate_with, Orientation, Ranking};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adsel", version, about = "Label-free anomaly detector selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Offline selection of the ensemble and single-model branches.
    Select(RunArgs),
    /// Offline selection followed by the online loop.
    Stream(RunArgs),
    /// Write a synthetic labeled series as CSV.
    Synth(SynthArgs),
    /// Fuse rankings given one per line as JSON.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// CSV with one column per feature and an optional `label` column.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Override a config key, e.g. `--set ga.population=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "point")]
    kind: AnomalyKind,
    #[arg(long, default_value_t = 1000)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    dims: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// File of rankings, one JSON array of ids or `{"ids": [...]}` per line.
    #[arg(long)]
    rankings: PathBuf,
    #[arg(long, default_value = "winner_mass")]
    orientation: Orientation,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Select(a) => resolve(&a).and_then(|cfg| select(&a, &cfg)),
        Command::Stream(a) => resolve(&a).and_then(|cfg| stream(&a, &cfg)),
        Command::Synth(a) => synth(&a),
        Command::Aggregate(a) => aggregate(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Config file, then `--set` overrides, then `--seed`; `RAMSES_SEED` only
/// when no seed was given anywhere.
fn resolve(a: &RunArgs) -> CliResult<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = &a.common.config {
        let text = fs::read_to_string(path).map_err(|source| {
            CliError::Usage(format!("cannot read config {}: {source}", path.display()))
        })?;
        pairs.extend(parse_pairs(&text)?);
    }
    for s in &a.set {
        pairs.push(parse_override(s)?);
    }
    let seeded = pairs.iter().any(|(k, _)| k == "seed");
    let mut cfg = RunConfig::default();
    cfg.apply_all(&pairs)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    } else if !seeded {
        if let Some(s) = env_seed()? {
            cfg.seed = s;
        }
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path, source })
}

fn out_writer(dir: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    Ok(match dir {
        Some(d) => Box::new(create(d, name)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io(e: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

fn select(a: &RunArgs, cfg: &RunConfig) -> CliResult<()> {
    let series = load_csv(&a.data)?;
    let sel = run_offline(&series, cfg)?;
    let mut w = out_writer(a.common.out.as_deref(), "selection.jsonl")?;
    sel.report.write_jsonl(&mut w)?;
    w.flush().map_err(io)?;
    Ok(())
}

fn stream(a: &RunArgs, cfg: &RunConfig) -> CliResult<()> {
    let series = load_csv(&a.data)?;
    let out = a.common.out.as_deref();
    let mut w = out_writer(out, "decisions.jsonl")?;
    let run = run_online(&series, cfg, |d| writeln!(w, "{}", decision_record(d)).map_err(io))?;
    writeln!(w, "{}", summary_record(&run.summary)).map_err(io)?;
    w.flush().map_err(io)?;
    let mut s = out_writer(out, "selection.jsonl")?;
    run.offline.write_jsonl(&mut s)?;
    s.flush().map_err(io)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let series = synth_generate(a.kind, a.length, a.dims, a.count, seed)?;
    let name = format!("synth_{}_{seed}.csv", a.kind.as_str());
    let w = create(&a.out, &name)?;
    write_csv(&series, w)?;
    println!("{}", a.out.join(name).display());
    Ok(())
}

fn parse_ranking(line: &str) -> Result<Ranking> {
    if let Ok(ids) = serde_json::from_str::<Vec<String>>(line) {
        return Ok(Ranking::new(ids));
    }
    serde_json::from_str::<Ranking>(line).map_err(|e| Error::invalid(format!("bad ranking line: {e}")))
}

fn aggregate(a: &AggregateArgs) -> CliResult<()> {
    let file = File::open(&a.rankings).map_err(|source| Error::Io {
        path: a.rankings.clone(),
        source,
    })?;
    let mut rankings = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            rankings.push(parse_ranking(line.trim())?);
        }
    }
    let c = aggregate_with(&rankings, a.orientation)?;
    let rec = serde_json::json!({ "record": "consensus", "ranking": c.ranking, "converged": c.converged });
    let mut w = out_writer(a.out.as_deref(), "consensus.jsonl")?;
    writeln!(w, "{rec}").map_err(io)?;
    w.flush().map_err(io)?;
    Ok(())
}
