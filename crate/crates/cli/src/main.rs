//! Command-line front end: execute scenarios, drive attack suites, compare
//! protocol pairs, and run the built-in acceptance suite.
//!
//! Exit codes: 0 on success, 1 when a scenario run or check fails, 2 on
//! configuration errors (malformed scenario, unknown case or protocol,
//! insufficient trials).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use momosim_core::adversary::{attack_success_rate, AttackCase, AttackConfig};
use momosim_core::domain::{Duration, ProtocolKind};
use momosim_core::scenario::{
    execute, leakage_report, protocol_kind, write_outputs, AnalyzeOptions, LeakageReport,
    ScenarioConfig, ScenarioError, ScenarioRun,
};
use momosim_core::selftest;

#[derive(Parser)]
#[command(
    name = "momosim",
    version,
    about = "Deterministic simulator and analyzer for agent-facilitated mobile-money protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write events.jsonl, ledger.jsonl, report.json.
    Run(RunArgs),
    /// Run scripted attack cases and write the success-rate table.
    Attack(AttackArgs),
    /// Compare two protocol flows: cost, agent view, leakage, attack table.
    Analyze(AnalyzeArgs),
    /// Run the built-in acceptance suite, one line per criterion.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; the built-in demo scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Master seed, overriding the scenario file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the output files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct AttackArgs {
    /// Scenario file supplying code length, validity window, and oracle rates.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Single case to run, by name (e.g. stale-replay) or id (e.g. p1c4);
    /// all cases when omitted.
    #[arg(long)]
    case: Option<String>,
    /// Trials per case; each case's statistical minimum when omitted.
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Scenario file supplying the population and provider settings.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Baseline and candidate flow, comma-separated.
    #[arg(long, default_value = "current-withdrawal,pp-withdrawal")]
    pair: String,
    /// Trials per deterministic attack case.
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

/// Failure carrying its exit code: configuration mistakes exit 2, everything
/// that failed while running exits 1.
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Failure {
        Failure::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn load_scenario(path: &Option<PathBuf>) -> Result<ScenarioConfig, Failure> {
    match path {
        None => Ok(ScenarioConfig::demo()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            ScenarioConfig::from_json(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn known_protocols() -> String {
    ProtocolKind::ALL
        .iter()
        .map(|k| k.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

fn known_cases() -> String {
    AttackCase::ALL
        .iter()
        .map(|c| match c.alias() {
            Some(alias) => format!("{} ({alias})", c.as_str()),
            None => c.as_str().to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_scenario(&args.scenario)?;
    let run = execute(&config, args.seed).map_err(scenario_failure)?;
    write_outputs(&args.out, &run).map_err(Failure::runtime)?;
    match args.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&run.report).map_err(Failure::runtime)?
        ),
        Format::Table => print_run_table(&args.out, &run),
    }

    let report = &run.report;
    if !report.conservation.holds {
        return Err(Failure::runtime("conservation invariant broken"));
    }
    if report.kyc_audit != "ok" {
        return Err(Failure::Runtime(format!("KYC audit failed: {}", report.kyc_audit)));
    }
    if let Some(bad) = report.runs.iter().find(|r| r.outcome.starts_with("failed:")) {
        return Err(Failure::Runtime(format!(
            "run {} {}",
            bad.protocol, bad.outcome
        )));
    }
    Ok(())
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Parse(_) | ScenarioError::Version { .. } | ScenarioError::Invalid(_) => {
            Failure::config(e)
        }
        other => Failure::runtime(other),
    }
}

fn print_run_table(out: &Path, run: &ScenarioRun) {
    let report = &run.report;
    println!("seed {}", report.seed);
    println!(
        "{:<36} {:>5} {:<14} {:<10} {}",
        "protocol", "txn", "outcome", "state", "conformant"
    );
    for r in &report.runs {
        println!(
            "{:<36} {:>5} {:<14} {:<10} {}",
            r.protocol,
            r.txn.map_or("-".to_string(), |t| t.to_string()),
            r.outcome,
            r.final_state.as_deref().unwrap_or("-"),
            if r.conformant { "yes" } else { "NO" },
        );
    }
    println!(
        "conservation {} ({} -> {}), kyc audit {}, revenue {}",
        if report.conservation.holds { "holds" } else { "BROKEN" },
        report.conservation.initial_total,
        report.conservation.final_total,
        report.kyc_audit,
        report.revenue,
    );
    println!(
        "wrote {}, {}, {}",
        out.join("events.jsonl").display(),
        out.join("ledger.jsonl").display(),
        out.join("report.json").display(),
    );
}

struct AttackRow {
    case: &'static str,
    alias: Option<&'static str>,
    trials: u64,
    successes: u64,
    rate: f64,
    expected_rate: f64,
    within_bounds: bool,
}

fn cmd_attack(args: AttackArgs) -> Result<(), Failure> {
    let config = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(config.seed);
    let attack_cfg = AttackConfig {
        code_length: config.provider.code_length,
        validity_window: Duration(config.provider.validity_window),
        guesses_per_trial: 1,
        far: config.provider.far,
    };

    let cases: Vec<AttackCase> = match &args.case {
        Some(name) => vec![AttackCase::from_str(name).ok_or_else(|| {
            Failure::Config(format!(
                "unknown attack case {name:?}; known cases: {}",
                known_cases()
            ))
        })?],
        None => AttackCase::ALL.to_vec(),
    };

    let mut rows = Vec::new();
    for case in cases {
        let required = attack_cfg.required_trials(case);
        let trials = args.trials.unwrap_or_else(|| required.max(1000));
        if trials < required {
            return Err(Failure::Config(format!(
                "case {} needs at least {required} trials for a meaningful estimate, got --trials {trials}",
                case.as_str()
            )));
        }
        let est = attack_success_rate(case, &attack_cfg, seed, trials).map_err(Failure::runtime)?;
        rows.push(AttackRow {
            case: case.as_str(),
            alias: case.alias(),
            trials: est.trials,
            successes: est.successes,
            rate: est.rate,
            expected_rate: est.expected_rate,
            within_bounds: est.within_bounds,
        });
    }

    let table: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "case": r.case,
                "alias": r.alias,
                "trials": r.trials,
                "successes": r.successes,
                "rate": r.rate,
                "expected_rate": r.expected_rate,
                "within_bounds": r.within_bounds,
            })
        })
        .collect();
    let table = json!({ "seed": seed, "code_length": attack_cfg.code_length, "rows": table });
    std::fs::create_dir_all(&args.out).map_err(Failure::runtime)?;
    let path = args.out.join("attack_table.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&table).map_err(Failure::runtime)?)
        .map_err(Failure::runtime)?;

    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&table).map_err(Failure::runtime)?),
        Format::Table => {
            println!(
                "{:<32} {:<6} {:>8} {:>9} {:>10} {:>10} {}",
                "case", "id", "trials", "successes", "rate", "expected", "in-bounds"
            );
            for r in &rows {
                println!(
                    "{:<32} {:<6} {:>8} {:>9} {:>10.6} {:>10.6} {}",
                    r.case,
                    r.alias.unwrap_or("-"),
                    r.trials,
                    r.successes,
                    r.rate,
                    r.expected_rate,
                    if r.within_bounds { "yes" } else { "NO" },
                );
            }
            println!("wrote {}", path.display());
        }
    }

    if let Some(bad) = rows.iter().find(|r| !r.within_bounds) {
        return Err(Failure::Runtime(format!(
            "case {} outside its expected bounds: rate {:.6}, expected {:.6}",
            bad.case, bad.rate, bad.expected_rate
        )));
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let config = load_scenario(&args.scenario)?;
    let (baseline, candidate) = parse_pair(&args.pair)?;
    let opts = AnalyzeOptions {
        baseline,
        candidate,
        seed: args.seed.unwrap_or(config.seed),
        suite_trials: args.trials,
        guess_trials: 0,
    };
    let report = leakage_report(&config, &opts).map_err(scenario_failure)?;

    std::fs::create_dir_all(&args.out).map_err(Failure::runtime)?;
    let path = args.out.join("report.json");
    std::fs::write(
        &path,
        serde_json::to_vec_pretty(&report).map_err(Failure::runtime)?,
    )
    .map_err(Failure::runtime)?;

    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::runtime)?),
        Format::Table => print_analyze_table(&path, &report),
    }

    if let Some(bad) = report.attack_suites.iter().find(|s| s.successes > 0) {
        return Err(Failure::Runtime(format!(
            "deterministic case {} had {} successes",
            bad.case.as_str(),
            bad.successes
        )));
    }
    if let Some(bad) = report.attack_estimates.iter().find(|e| !e.within_bounds) {
        return Err(Failure::Runtime(format!(
            "case {} outside its expected bounds",
            bad.case.as_str()
        )));
    }
    Ok(())
}

fn parse_pair(pair: &str) -> Result<(ProtocolKind, ProtocolKind), Failure> {
    let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Failure::Config(format!(
            "--pair wants two comma-separated flows, got {pair:?}; known flows: {}",
            known_protocols()
        )));
    }
    let lookup = |name: &str| {
        protocol_kind(name).map_err(|_| {
            Failure::Config(format!(
                "unknown protocol {name:?}; known flows: {}",
                known_protocols()
            ))
        })
    };
    Ok((lookup(parts[0])?, lookup(parts[1])?))
}

fn print_analyze_table(path: &Path, report: &LeakageReport) {
    println!(
        "pair: {} -> {} (seed {})",
        report.pair.baseline, report.pair.candidate, report.pair.seed
    );
    println!(
        "cost: client legs {} -> {} ({:+}), round trips {} -> {} ({:+})",
        report.cost.baseline.client_provider_legs,
        report.cost.candidate.client_provider_legs,
        report.cost.extra_client_legs,
        report.cost.baseline.round_trips,
        report.cost.candidate.round_trips,
        report.cost.extra_round_trips,
    );
    let removed: Vec<&str> = report.views.diff.removed.iter().map(String::as_str).collect();
    let added: Vec<&str> = report.views.diff.added.iter().map(String::as_str).collect();
    println!(
        "agent view: removed {removed:?}, added {added:?}, identity fields removed {}",
        report.views.diff.data_minimization_score
    );
    println!(
        "leakage: I(U;V_S) {:.4}, I(U;T|V_S) {:.4}, I(U;X|V_S) {:.4}, residuals chain {:.1e} collapse {:.1e}",
        report.identity.i_u_vs,
        report.identity.i_u_t_given_vs,
        report.identity.i_u_x_given_vs,
        report.identity.chain_residual,
        report.identity.code_collapse_residual,
    );
    println!("{:<32} {:>8} {:>9} {:>10}", "attack case", "trials", "successes", "rate");
    for s in &report.attack_suites {
        println!(
            "{:<32} {:>8} {:>9} {:>10.6}",
            s.case.as_str(),
            s.trials,
            s.successes,
            s.successes as f64 / s.trials.max(1) as f64,
        );
    }
    for e in &report.attack_estimates {
        println!(
            "{:<32} {:>8} {:>9} {:>10.6}",
            e.case.as_str(),
            e.trials,
            e.successes,
            e.rate,
        );
    }
    println!("wrote {}", path.display());
}

fn cmd_selftest(args: SelftestArgs) -> Result<(), Failure> {
    let outcomes = selftest::run_all();
    match args.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&outcomes).map_err(Failure::runtime)?
        ),
        Format::Table => {
            for outcome in &outcomes {
                println!("{outcome}");
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed}/{} criteria passed", outcomes.len());
        }
    }
    if selftest::all_passed(&outcomes) {
        Ok(())
    } else {
        Err(Failure::Runtime("acceptance criteria failed".into()))
    }
}
