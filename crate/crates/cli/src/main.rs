use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use goalaudit_core::config::{AuditConfig, ConfigError, ProviderKind};
use goalaudit_core::pipeline::{self, AuditError, Stage};
use goalaudit_core::report::{emit_plotdata, emit_tables, render_table, TableFormat, TableKind};
use goalaudit_core::synthetic::generate_world;
use goalaudit_core::{AuditReport, TaskKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_STAGE_FAILURE: u8 = 2;
const EXIT_INVALID_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "goalaudit", version, about = "Audit LLM-generated scores for goal leakage around a knowledge cutoff")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `provider.kind`.
    #[arg(long, value_parser = clap::value_parser!(ProviderKind))]
    provider: Option<ProviderKind>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write score_pairs.csv.
    #[arg(long)]
    dump_scores: bool,
    /// Overrides `cutoff_date` (YYYY-MM-DD).
    #[arg(long)]
    cutoff: Option<NaiveDate>,
    /// Overrides `analysis.r2_floor`, the lower bound on each R²_OOS.
    #[arg(long, allow_hyphen_values = true)]
    r2_floor: Option<f64>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    /// Rerun the analyses from panel.json and scores.json in the output
    /// directory instead of ingesting and scoring again.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate inputs, write panel.json.
    Ingest(Common),
    /// Ingest, render prompts and score them, write scores.json.
    Score(Common),
    /// Full audit of the sentiment / return task.
    AuditReturns(AuditArgs),
    /// Full audit of the competition / earnings task.
    AuditEarnings(AuditArgs),
    /// Audit a synthetic world with a known leak.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `synthetic.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Leak strength.
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write the world's transcripts.jsonl and returns.csv.
        #[arg(long)]
        write_corpus: bool,
    },
    /// Render tables from a finished report.json.
    Report {
        /// Report to render; defaults to <out-dir>/report.json.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "audit-out")]
        out_dir: PathBuf,
        /// Print one table to stdout instead of writing every table.
        #[arg(long, value_enum)]
        table: Option<TableArg>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Spreads,
    Fmb,
    OosPanel,
}

impl From<TableArg> for TableKind {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Spreads => TableKind::Spreads,
            TableArg::Fmb => TableKind::Fmb,
            TableArg::OosPanel => TableKind::OosPanel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => TableFormat::Text,
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Json => TableFormat::Json,
        }
    }
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        match e.stage {
            Stage::Config => Failure::Config(e.to_string()),
            _ => Failure::Stage(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(format!("{e:#}"))
    }
}

fn load_config(common: &Common, task: Option<TaskKind>) -> Result<AuditConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => AuditConfig::load(path)?,
        None => AuditConfig::default(),
    };
    if let Some(task) = task {
        if common.config.is_some() && cfg.task != task {
            log::info!("config task {} replaced by {task} for this subcommand", cfg.task);
        }
        cfg.task = task;
    }
    if let Some(kind) = common.provider {
        cfg.provider.kind = kind;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(cutoff) = common.cutoff {
        cfg.cutoff_date = cutoff;
    }
    if let Some(floor) = common.r2_floor {
        cfg.analysis.r2_floor = Some(floor);
    }
    cfg.dump_scores |= common.dump_scores;
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(report: &AuditReport, out_dir: &Path) {
    println!("task: {}", report.task);
    println!("cutoff: {}", report.cutoff_date);
    println!("panel rows: {}, score pairs: {}, missing scores: {}", report.panel_rows, report.score_pairs, report.missing_scores);
    println!("{}", report.leakage.summary);
    println!("outputs: {}", out_dir.display());
}

fn audit(args: &AuditArgs, task: TaskKind) -> Result<(), Failure> {
    let cfg = load_config(&args.common, Some(task))?;
    let report = if args.resume { pipeline::resume_audit(&cfg)? } else { pipeline::run_audit(&cfg)? };
    summarize(&report, &cfg.out_dir);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(common) => {
            let cfg = load_config(&common, None)?;
            let (ingested, path) = pipeline::run_ingest(&cfg)?;
            println!("{} panel rows written to {}", ingested.panel.rows.len(), path.display());
        }
        Command::Score(common) => {
            let cfg = load_config(&common, None)?;
            let (_, scored, path) = pipeline::run_score(&cfg)?;
            let s = scored.stats;
            println!(
                "{} scores ({} missing) written to {}; cache hits {}, provider calls {}, retries {}, failures {}",
                scored.scores.entries.len(),
                scored.scores.missing(),
                path.display(),
                s.cache_hits,
                s.provider_calls,
                s.retries,
                s.failures
            );
        }
        Command::AuditReturns(args) => audit(&args, TaskKind::SentimentReturn)?,
        Command::AuditEarnings(args) => audit(&args, TaskKind::CompetitionEarnings)?,
        Command::Simulate {
            common,
            seed,
            lambda,
            write_corpus,
        } => {
            let common = Common {
                provider: Some(ProviderKind::Synthetic),
                ..common
            };
            let mut cfg = load_config(&common, Some(TaskKind::SentimentReturn))?;
            if let Some(seed) = seed {
                cfg.synthetic.seed = seed;
            }
            if let Some(lambda) = lambda {
                cfg.synthetic.lambda = lambda;
            }
            cfg.validate()?;
            if write_corpus {
                let world = generate_world(&cfg.synthetic).map_err(|e| Failure::Config(e.to_string()))?;
                std::fs::create_dir_all(&cfg.out_dir)
                    .and_then(|()| world.write_corpus_files(&cfg.out_dir))
                    .with_context(|| format!("writing synthetic corpus to {}", cfg.out_dir.display()))?;
            }
            let report = pipeline::run_audit(&cfg)?;
            summarize(&report, &cfg.out_dir);
        }
        Command::Report {
            report,
            out_dir,
            table,
            format,
        } => {
            let path = report.unwrap_or_else(|| out_dir.join(pipeline::REPORT_FILE));
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report = AuditReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            match table {
                Some(kind) => print!("{}", render_table(&report, kind.into(), format.into()).context("rendering table")?),
                None => {
                    let kinds: Vec<TableKind> = TableKind::ALL
                        .into_iter()
                        .filter(|k| render_table(&report, *k, TableFormat::Json).is_ok())
                        .collect();
                    let mut written = emit_tables(&report, &out_dir, &kinds, &[format.into()]).context("writing tables")?;
                    written.extend(emit_plotdata(&report, &out_dir).context("writing plot data")?);
                    for p in written {
                        println!("{}", p.display());
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_STAGE_FAILURE)
        }
    }
}
