use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use safenav::environment::{builtin_env, BUILTIN_ENVS};
use safenav::harness::{emit_report, run_batch, HarnessError, Report, ReportFormat, WORKERS_ENV};
use safenav::Config;

#[derive(Parser)]
#[command(name = "safenav", version, about = "Move-or-localize planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded batch of episodes and write a summary report.
    #[command(after_help = format!("The {WORKERS_ENV} environment variable overrides the worker count."))]
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Inspect the built-in environments.
    Envs {
        #[command(subcommand)]
        command: EnvsCommand,
    },
    /// Combine JSON reports into one.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        merge: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum EnvsCommand {
    List,
    /// Print a built-in map in the map file format.
    Render { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            runs,
            out,
            format,
        } => {
            let mut cfg = Config::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(runs) = runs {
                if runs == 0 {
                    return Err(HarnessError::Config("runs must be at least 1".into()));
                }
                cfg.n_runs = runs;
            }
            let summary = run_batch(&cfg)?;
            with_output(out.as_deref(), |w| emit_report(&[summary], format.into(), w))
        }
        Command::Envs { command } => match command {
            EnvsCommand::List => {
                for name in BUILTIN_ENVS {
                    let m = builtin_env(name)?;
                    println!("{name}\t{}x{}\t{} waypoints", m.width(), m.height(), m.path().len());
                }
                Ok(())
            }
            EnvsCommand::Render { name } => {
                print!("{}", builtin_env(&name)?.to_text());
                Ok(())
            }
        },
        Command::Report { merge, out, format } => {
            let mut batches = Vec::new();
            for path in &merge {
                let file = File::open(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                batches.extend(Report::read_json(BufReader::new(file))?.batches);
            }
            with_output(out.as_deref(), |w| emit_report(&batches, format.into(), w))
        }
    }
}

fn with_output(
    out: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|source| HarnessError::Io {
                path: path.to_owned(),
                source,
            })?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}
