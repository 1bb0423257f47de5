mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use policygame::agents::Agent;
use policygame::cot::{KeywordAnalyzer, MatchMode};
use policygame::game::DominanceClass;
use policygame::prompting::{PromptBuilder, VariantRegistry};
use policygame::report::{build_report, stat_rows_table, stats_battery, Format, Report, ReportKind};
use policygame::runner::{read_records, run_grid, GridOptions, RecordLog, RunRecord, RECORDS_FILE};
use policygame::scenarios::{generate_bundle, RenderMode, ScenarioBundle};
use policygame::stats::ContingencyTable;

use config::HarnessConfig;

#[derive(Parser)]
#[command(
    name = "policygame",
    version,
    about = "Policy game experiment harness",
    after_help = "Remote agents send $POLICYGAME_API_KEY as a bearer token when it is set."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load scenario bundles and report each table's dominance class.
    Validate {
        #[arg(long = "bundle", required = true)]
        bundles: Vec<PathBuf>,
    },
    /// Write a synthetic bundle with the requested dominance class.
    Generate {
        /// green or tragedy
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment grid, resuming from any existing record log.
    Run(RunArgs),
    /// Build report tables from a record log.
    Report {
        #[command(flatten)]
        log: LogArgs,
        /// nash_heatmap, outcome_breakdown, selection, stats, cot, sensitivity, or all
        #[arg(long, default_value = "all")]
        kind: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Significance tests on a record log or a literal table such as "0,60;0,60;0,60;54,6".
    Stats {
        #[arg(long, conflicts_with = "log")]
        table: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Keyword analysis of agent rationales.
    Cot {
        #[command(flatten)]
        log: LogArgs,
        /// substring or word
        #[arg(long = "match", default_value = "substring")]
        match_mode: String,
        /// Replacement keyword registry (TOML).
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Distinct outcomes per scenario across persona variants.
    Sensitivity {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "bundle")]
    bundles: Vec<PathBuf>,
    /// Comma-separated agent specs: fixed:PROFILE, best:PROFILE, random:SEED, remote:NAME@URL.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated conditions, or "base" / "variants".
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// own or full
    #[arg(long)]
    render: Option<String>,
    /// Stop after this many new records.
    #[arg(long)]
    limit: Option<usize>,
    /// Pause after each record, in milliseconds.
    #[arg(long, hide = true)]
    pace_ms: Option<u64>,
}

#[derive(Args)]
struct LogArgs {
    /// Record log file, or a run directory containing one.
    #[arg(long)]
    log: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// csv, md or json
    #[arg(long, default_value = "md")]
    format: String,
    /// Directory to write report files into; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { bundles } => Ok(cmd_validate(&bundles)),
        Command::Generate { target, count, seed, name, out } => cmd_generate(&target, count, seed, name, &out),
        Command::Run(args) => cmd_run(args),
        Command::Report { log, kind, output } => {
            let records = load_log(&log.log)?;
            let kinds = if kind == "all" {
                ReportKind::ALL.to_vec()
            } else {
                vec![ReportKind::parse(&kind).ok_or_else(|| anyhow!("unknown report kind {kind:?}"))?]
            };
            let analyzer = KeywordAnalyzer::builtin();
            for k in kinds {
                emit(&build_report(k, &records, &analyzer), &output)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { table, log, output } => {
            let report = match (table, log) {
                (Some(t), _) => {
                    let table = ContingencyTable::parse(&t)?;
                    Report {
                        kind: "stats".into(),
                        warnings: vec![],
                        tables: vec![stat_rows_table(format!("table {t}"), &stats_battery(&table))],
                    }
                }
                (None, Some(log)) => build_report(ReportKind::Stats, &load_log(&log)?, &KeywordAnalyzer::builtin()),
                (None, None) => bail!("give --table or --log"),
            };
            emit(&report, &output)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cot { log, match_mode, keywords, output } => {
            let mode = match match_mode.as_str() {
                "substring" => MatchMode::Substring,
                "word" => MatchMode::WordBoundary,
                other => bail!("unknown match mode {other:?}"),
            };
            let analyzer = match keywords {
                Some(path) => {
                    let labels = policygame::cot::agent_labels(&VariantRegistry::builtin());
                    KeywordAnalyzer::load_path(&path, &labels)?
                }
                None => KeywordAnalyzer::builtin(),
            }
            .with_mode(mode);
            emit(&build_report(ReportKind::Cot, &load_log(&log.log)?, &analyzer), &output)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sensitivity { log, output } => {
            emit(&build_report(ReportKind::Sensitivity, &load_log(&log.log)?, &KeywordAnalyzer::builtin()), &output)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_validate(paths: &[PathBuf]) -> ExitCode {
    let mut clean = true;
    for path in paths {
        println!("{}:", path.display());
        let bundle = match ScenarioBundle::load_path(path) {
            Ok(b) => b,
            Err(e) => {
                println!("  error: {e}");
                clean = false;
                continue;
            }
        };
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in bundle.scenarios() {
            println!("  {} {} {}", s.id(), s.family().key(), s.dominance());
            for tie in s.near_ties() {
                let kind = if tie.exact { "tie" } else { "near tie" };
                println!("    warning: {kind} for {} at {}", tie.role, tie.profile);
            }
            *counts.entry(s.dominance().to_string()).or_default() += 1;
        }
        let mut summary = format!("{} scenarios", bundle.len());
        for class in [DominanceClass::GreenDominant, DominanceClass::TragedyDominant] {
            if let Some(n) = counts.get(&class.to_string()) {
                summary.push_str(&format!(", {n} {class}"));
            }
        }
        println!("{summary}");
    }
    if clean {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_generate(target: &str, count: usize, seed: u64, name: Option<String>, out: &Path) -> Result<ExitCode> {
    let class = match target {
        "green" | "GreenDominant" => DominanceClass::GreenDominant,
        "tragedy" | "TragedyDominant" => DominanceClass::TragedyDominant,
        other => bail!("unknown target {other:?}; use green or tragedy"),
    };
    let name = name.unwrap_or_else(|| format!("synthetic_{target}_{seed}"));
    let bundle = generate_bundle(&name, class, count, seed)?;
    std::fs::write(out, bundle.to_json()).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} scenarios to {}", bundle.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => HarnessConfig::load(path)?,
        None => HarnessConfig::default(),
    };
    if !args.bundles.is_empty() {
        cfg.bundles = args.bundles;
    }
    if !args.models.is_empty() {
        cfg.models = args.models;
        cfg.remote.clear();
    }
    if !args.conditions.is_empty() {
        cfg.conditions = args.conditions;
    }
    cfg.repetitions = args.reps.unwrap_or(cfg.repetitions);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.workers = args.workers.unwrap_or(cfg.workers);
    cfg.out = args.out.unwrap_or(cfg.out);
    cfg.render = args.render.unwrap_or(cfg.render);
    cfg.validate()?;

    let mut scenarios = Vec::new();
    for path in &cfg.bundles {
        let b = ScenarioBundle::load_path(path).with_context(|| format!("loading {}", path.display()))?;
        scenarios.extend(b.scenarios().iter().cloned());
    }
    let bundle = ScenarioBundle::new("combined", scenarios)?;
    let conditions = cfg.parsed_conditions()?;
    let registry = match &cfg.variants {
        Some(p) => VariantRegistry::load_path(p)?,
        None => VariantRegistry::builtin(),
    };
    let render = RenderMode::parse(&cfg.render).ok_or_else(|| anyhow!("unknown render mode {:?}", cfg.render))?;
    let builder = PromptBuilder::new(registry, render);

    let (log, loaded) = RecordLog::open(&cfg.out)?;
    if loaded.truncated_bytes > 0 {
        println!("dropped a torn final line ({} bytes) from the record log", loaded.truncated_bytes);
    }
    let mut budget = args.limit;
    let mut invalid = loaded.records.iter().filter(|r| !r.valid).count();
    for spec in cfg.agent_specs()? {
        if budget == Some(0) {
            break;
        }
        let agent = Agent::new(spec);
        let opts = GridOptions {
            repetitions: cfg.repetitions,
            seed: cfg.seed,
            workers: cfg.workers,
            max_records: budget,
            pace: args.pace_ms.map(Duration::from_millis),
        };
        let outcome = run_grid(&agent, &builder, &bundle, &conditions, &opts, Some(&log))?;
        let bad = outcome.executed.iter().filter(|r| !r.valid).count();
        invalid += bad;
        println!(
            "{}: {} records run ({} invalid), {} already present, {} remaining",
            agent.id(),
            outcome.executed.len(),
            bad,
            outcome.skipped,
            outcome.remaining
        );
        for r in outcome.executed.iter().filter(|r| !r.valid) {
            eprintln!("  invalid {} {} rep {}: {}", r.scenario_id, r.condition, r.repetition, r.error.as_deref().unwrap_or(""));
        }
        budget = budget.map(|b| b - outcome.executed.len());
    }
    println!("record log: {}", log.records_path().display());
    Ok(if invalid > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn load_log(path: &Path) -> Result<Vec<RunRecord>> {
    let file = if path.is_dir() { path.join(RECORDS_FILE) } else { path.to_path_buf() };
    if !file.exists() {
        bail!("no record log at {}", file.display());
    }
    let loaded = read_records(&file)?;
    if loaded.truncated_bytes > 0 {
        eprintln!("warning: ignored a torn final line in {}", file.display());
    }
    Ok(loaded.records)
}

fn emit(report: &Report, output: &OutputArgs) -> Result<()> {
    let format = Format::parse(&output.format).ok_or_else(|| anyhow!("unknown format {:?}", output.format))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = report.render(format);
    match &output.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.{}", report.kind, format.extension()));
            std::fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
