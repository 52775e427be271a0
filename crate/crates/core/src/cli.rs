//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 backend error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{compute_stats, load_dataset, Attribute, Dataset, Level, LoadOptions};
use crate::parsing::{parse_corpus, CorpusError};
use crate::prompts::AlignmentTarget;
use crate::report::{
    ablation_rows, emit_ablation, emit_report, label_rows, stats_csv, stats_text, table_csv,
    table_json, table_text, Format, Provenance, ReportBundle, ReportError, TableRow,
};
use crate::runner::{self, read_run_logs, AblationGrid, BackendSpec, Mode, RunConfig, RunError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "align-dm",
    version,
    about = "Steer and score LLM decision-makers on attribute-labeled triage scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset file against the schema and invariants.
    Validate {
        path: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Per-attribute scenario and word counts.
    Stats {
        path: PathBuf,
        #[arg(long)]
        lenient: bool,
        #[arg(long, value_enum)]
        format: Option<OutFormat>,
    },
    /// Run an experiment and report alignment accuracy.
    Run(RunArgs),
    /// Re-score a finished run from its logs, without contacting a backend.
    Replay {
        dir: PathBuf,
        /// Dataset to use instead of the one recorded in config.json.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutFormat>,
    },
    /// Evaluate a grid of positive/negative sample counts on one shared pool.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated POS/NEG cells.
        #[arg(long, default_value = "1/0,3/0,5/0,1/1,3/3,5/5")]
        grid: String,
    },
    /// Build results tables and radar data from one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
    /// Parse a directory of response fixtures and compare with its manifest.
    ParseCorpus { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Unaligned,
    Aligned,
    AlignedSc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    High,
    Low,
    Both,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `http(s)://HOST[:PORT]` or `mock:POLICY`.
    #[arg(long)]
    backend: String,
    /// Model name; queried from the server when omitted.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "aligned-sc")]
    mode: ModeArg,
    /// `all`, or a comma-separated list of attribute names.
    #[arg(long, default_value = "all")]
    attribute: String,
    #[arg(long, value_enum, default_value = "both")]
    target: TargetArg,
    #[arg(long = "pos", default_value_t = 5)]
    n_pos: u32,
    #[arg(long = "neg", default_value_t = 5)]
    n_neg: u32,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = crate::backend::DEFAULT_MAX_TOKENS)]
    max_tokens: u32,
    #[arg(long, default_value_t = 1)]
    runs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    #[arg(long)]
    lenient: bool,
    /// Compress run logs.
    #[arg(long)]
    gzip: bool,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Config(_) => EXIT_USAGE,
            RunError::BackendSetup(_) | RunError::Backend { .. } => EXIT_BACKEND,
            RunError::Dataset(_)
            | RunError::Io { .. }
            | RunError::LogFormat { .. }
            | RunError::IncompleteLog { .. }
            | RunError::DuplicateRecord { .. }
            | RunError::NoScenarios
            | RunError::Metrics(_) => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! data_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure { code: EXIT_DATA, message: e.to_string() }
            }
        }
    )*};
}
data_failure!(crate::dataset::DatasetError, ReportError, CorpusError);

fn targets(attribute: &str, target: TargetArg) -> Result<Vec<AlignmentTarget>, Failure> {
    let attrs: Vec<Attribute> = if attribute.trim() == "all" {
        Attribute::ALL.to_vec()
    } else {
        attribute
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<Attribute>()
                    .map_err(|e| Failure::usage(e.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    let levels: &[Level] = match target {
        TargetArg::High => &[Level::High],
        TargetArg::Low => &[Level::Low],
        TargetArg::Both => &Level::ALL,
    };
    let mut out = Vec::new();
    for a in attrs {
        for &l in levels {
            let t = AlignmentTarget::new(a, l);
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    Ok(out)
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let backend = BackendSpec::parse(&self.backend, self.model.as_deref())?;
        let mode = match self.mode {
            ModeArg::Unaligned => Mode::Unaligned,
            ModeArg::Aligned => Mode::Aligned,
            ModeArg::AlignedSc => Mode::AlignedSc,
        };
        let config = RunConfig {
            lenient: self.lenient,
            targets: targets(&self.attribute, self.target)?,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            runs: self.runs,
            base_seed: self.seed,
            concurrency: self.concurrency,
            out: self.out.clone(),
            gzip: self.gzip,
            ..RunConfig::new(&self.dataset, backend, mode)
        };
        config.validate()?;
        Ok(config)
    }
}

fn load(path: &Path, lenient: bool) -> Result<Dataset, Failure> {
    Ok(load_dataset(path, LoadOptions { lenient })?)
}

fn print_rows(rows: &[TableRow], format: Option<OutFormat>) -> Result<(), Failure> {
    match format {
        None => print!("{}", table_text(rows)),
        Some(OutFormat::Csv) => print!("{}", table_csv(rows)?),
        Some(OutFormat::Json) => println!("{}", table_json(rows)),
    }
    Ok(())
}

fn print_diagnostics(bundle: &ReportBundle) {
    let d = &bundle.diagnostics;
    if d.unparseable_decisions > 0 || d.unlabeled_choices > 0 {
        eprintln!(
            "note: {} unparseable decision(s) and {} unlabeled choice(s) scored as 0",
            d.unparseable_decisions, d.unlabeled_choices
        );
    }
    if !d.parse_failures.is_empty() {
        let parts: Vec<String> = d
            .parse_failures
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        eprintln!("note: parse failures: {}", parts.join(", "));
    }
}

fn cmd_validate(path: &Path, lenient: bool) -> Result<(), Failure> {
    let d = load(path, lenient)?;
    let attrs: Vec<&str> = d.attributes_present().iter().map(|a| a.as_str()).collect();
    println!(
        "ok: {} scenarios across {} attribute(s) [{}]",
        d.scenarios.len(),
        attrs.len(),
        attrs.join(", ")
    );
    Ok(())
}

fn cmd_stats(path: &Path, lenient: bool, format: Option<OutFormat>) -> Result<(), Failure> {
    let stats = compute_stats(&load(path, lenient)?);
    match format {
        None => print!("{}", stats_text(&stats)),
        Some(OutFormat::Csv) => print!("{}", stats_csv(&stats)?),
        Some(OutFormat::Json) => println!(
            "{}",
            serde_json::to_string_pretty(&stats).expect("stats serialize")
        ),
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let config = args.config()?;
    let outcome = runner::run(&config)?;
    let bundle = ReportBundle::from_run(&config, &outcome);
    if let Some(out) = &config.out {
        emit_report(
            std::slice::from_ref(&bundle),
            args.format.unwrap_or(OutFormat::Csv).into(),
            out,
        )?;
    }
    print_rows(&[bundle.table_row()], args.format)?;
    print_diagnostics(&bundle);
    Ok(())
}

fn replay_bundle(dir: &Path, dataset: Option<&Path>) -> Result<ReportBundle, Failure> {
    let (config, eval) = runner::replay_dir(dir, dataset)?;
    let records = read_run_logs(dir)?;
    Ok(ReportBundle::new(
        config.mode.as_str(),
        eval.report,
        Provenance::from_log(&config, &records),
    ))
}

fn cmd_replay(
    dir: &Path,
    dataset: Option<&Path>,
    format: Option<OutFormat>,
) -> Result<(), Failure> {
    let bundle = replay_bundle(dir, dataset)?;
    print_rows(&[bundle.table_row()], format)?;
    print_diagnostics(&bundle);
    Ok(())
}

fn cmd_ablate(args: &RunArgs, grid: &str) -> Result<(), Failure> {
    let grid = AblationGrid::parse(grid)?;
    let config = args.config()?;
    let outcome = runner::ablate(&config, &grid)?;
    if let Some(out) = &config.out {
        emit_ablation(
            &outcome.cells,
            args.format.unwrap_or(OutFormat::Csv).into(),
            out,
        )?;
    }
    print_rows(&ablation_rows(&outcome.cells), args.format)?;
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path, format: OutFormat) -> Result<(), Failure> {
    let mut bundles = runs
        .iter()
        .map(|dir| replay_bundle(dir, None))
        .collect::<Result<Vec<_>, _>>()?;
    label_rows(&mut bundles);
    for path in emit_report(&bundles, format.into(), out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_parse_corpus(dir: &Path) -> Result<(), Failure> {
    let report = parse_corpus(dir)?;
    for m in report.mismatches() {
        println!(
            "MISMATCH {}: expected {}, got {}",
            m.file, m.expected, m.outcome
        );
    }
    let matched = report.results.iter().filter(|r| r.matched).count();
    println!("{matched}/{} fixtures matched", report.results.len());
    for (k, v) in &report.counts {
        println!("  {k}: {v}");
    }
    if report.all_matched() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_DATA,
            message: "fixture corpus has mismatches".into(),
        })
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Validate { path, lenient } => cmd_validate(path, *lenient),
        Command::Stats {
            path,
            lenient,
            format,
        } => cmd_stats(path, *lenient, *format),
        Command::Run(args) => cmd_run(args),
        Command::Replay {
            dir,
            dataset,
            format,
        } => cmd_replay(dir, dataset.as_deref(), *format),
        Command::Ablate { run, grid } => cmd_ablate(run, grid),
        Command::Report { runs, out, format } => cmd_report(runs, out, *format),
        Command::ParseCorpus { dir } => cmd_parse_corpus(dir),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
