//! Command-line interface.
//!
//! Exit codes: `0` clean; `1` when a simulation exceeds the scenario's
//! hazard threshold or a validation yields at least one violation; `2` for
//! usage, schema, or construction errors. `AEGISPAT_SEED` overrides the
//! scenario seed for `simulate` and `compare`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::assurance::{self, Finding, RuleConfig, Severity};
use crate::geometry;
use crate::harness::{
    self, ArchitectureFile, HarnessError, Scenario, TradeoffFile, SCHEMA_VERSION,
};
use crate::patterns::{catalogue, PatternKind};

#[derive(Parser)]
#[command(
    name = "aegispat",
    about = "Workbench for architectural safety patterns: compose, validate allocations, and evaluate runtime behavior under injected faults",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its report.
    Simulate {
        scenario: PathBuf,
        /// Override the scenario's Monte Carlo trial count.
        #[arg(long)]
        trials: Option<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a DAL allocation file against the rule table.
    Validate { architecture: PathBuf },
    /// Inspect the pattern catalogue.
    Patterns {
        #[command(subcommand)]
        action: PatternsAction,
    },
    /// Numerical reference computations.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
    /// Rank pattern options by weighted attributes.
    Tradeoff { matrix: PathBuf },
    /// Run one scenario across several pattern kinds and tabulate.
    Compare {
        scenario: PathBuf,
        /// Comma-separated pattern kinds.
        #[arg(long, value_delimiter = ',', required = true)]
        kinds: Vec<String>,
    },
}

#[derive(Subcommand)]
enum PatternsAction {
    /// One line per known pattern kind.
    List,
    /// Structure, guarantees, assumptions, and origin of one kind.
    Describe { kind: String },
}

#[derive(Subcommand)]
enum OracleAction {
    /// Smallest symmetric detection enlargement guaranteeing containment
    /// at a given overlap floor: closed form and grid-search witness.
    Enlargement {
        /// Guaranteed overlap bound in (0, 1].
        #[arg(long)]
        iou: f64,
        /// Grid resolution for the search witness.
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the error path too.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate {
            scenario,
            trials,
            out,
        } => simulate(&scenario, trials, out.as_deref()),
        Command::Validate { architecture } => validate(&architecture),
        Command::Patterns { action } => patterns_cmd(action),
        Command::Oracle { action } => oracle_cmd(action),
        Command::Tradeoff { matrix } => tradeoff(&matrix),
        Command::Compare { scenario, kinds } => compare(&scenario, &kinds),
    }
}

fn seed_override() -> Result<Option<u64>, HarnessError> {
    match std::env::var("AEGISPAT_SEED") {
        Ok(text) => text.parse::<u64>().map(Some).map_err(|_| HarnessError::Schema {
            pointer: "/seed".into(),
            message: format!("AEGISPAT_SEED must be an unsigned integer, got `{text}`"),
        }),
        Err(_) => Ok(None),
    }
}

fn load_scenario(path: &std::path::Path) -> Result<Scenario, HarnessError> {
    let mut scenario = Scenario::from_file(path)?;
    if let Some(seed) = seed_override()? {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn simulate(
    path: &std::path::Path,
    trials: Option<u64>,
    out: Option<&std::path::Path>,
) -> Result<i32, HarnessError> {
    let mut scenario = load_scenario(path)?;
    if let Some(trials) = trials {
        if trials == 0 {
            return Err(HarnessError::Schema {
                pointer: "/monte_carlo/trials".into(),
                message: "must be at least 1".into(),
            });
        }
        scenario.monte_carlo = Some(harness::MonteCarlo { trials });
    }
    let (report, _) = harness::run_scenario(&scenario)?;
    print!("{}", report.render());
    if let Some(out) = out {
        std::fs::write(out, report.to_json() + "\n")?;
    }
    Ok(if report.hazard_count > scenario.hazard_threshold {
        1
    } else {
        0
    })
}

fn validate(path: &std::path::Path) -> Result<i32, HarnessError> {
    let arch = ArchitectureFile::from_file(path)?;
    let findings = assurance::validate_tree(&arch.allocation, &RuleConfig::default());
    for finding in &findings {
        println!("{}", serde_json::to_string(finding).expect("finding serializes"));
    }
    print!("{}", render_findings(&findings));
    Ok(if assurance::has_violations(&findings) {
        1
    } else {
        0
    })
}

fn render_findings(findings: &[Finding]) -> String {
    if findings.is_empty() {
        return "no findings: allocation conforms to the rule table\n".into();
    }
    let headers = ["severity", "rule", "location", "message"];
    let mut table: Vec<[String; 4]> = vec![headers.map(str::to_string)];
    for f in findings {
        let severity = match f.severity {
            Severity::Violation => "violation",
            Severity::Warning => "warning",
            Severity::Info => "info",
        };
        table.push([
            severity.to_string(),
            f.rule.clone(),
            f.location.clone(),
            f.message.clone(),
        ]);
    }
    let mut widths = [0usize; 4];
    for row in &table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:<width$}", width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn patterns_cmd(action: PatternsAction) -> Result<i32, HarnessError> {
    match action {
        PatternsAction::List => {
            let entries = catalogue();
            let width = entries
                .iter()
                .map(|e| e.kind.name().len())
                .max()
                .unwrap_or(0);
            for e in entries {
                println!("{:<width$}  {}", e.kind.name(), e.structure);
            }
            Ok(0)
        }
        PatternsAction::Describe { kind } => {
            let parsed = PatternKind::parse(&kind).ok_or_else(|| HarnessError::Schema {
                pointer: "/kind".into(),
                message: format!(
                    "unknown pattern kind `{kind}`; see `aegispat patterns list`"
                ),
            })?;
            let entry = catalogue()
                .into_iter()
                .find(|e| e.kind == parsed)
                .expect("catalogue covers every kind");
            println!("pattern:      {}", entry.kind.name());
            println!("structure:    {}", entry.structure);
            println!("guarantees:   {}", entry.guarantees);
            println!("assumptions:  {}", entry.assumptions);
            println!("origin:       {}", entry.origin);
            Ok(0)
        }
    }
}

fn oracle_cmd(action: OracleAction) -> Result<i32, HarnessError> {
    match action {
        OracleAction::Enlargement { iou, grid } => {
            if grid < 100 {
                return Err(HarnessError::Schema {
                    pointer: "/grid".into(),
                    message: format!("grid resolution must be at least 100, got {grid}"),
                });
            }
            let closed = geometry::min_enlargement(iou).map_err(|e| HarnessError::Schema {
                pointer: "/iou".into(),
                message: e.to_string(),
            })?;
            let witness =
                geometry::oracle_min_enlargement(iou, grid).map_err(|e| HarnessError::Schema {
                    pointer: "/grid".into(),
                    message: e.to_string(),
                })?;
            println!("iou_floor            {iou}");
            println!("closed_form          {closed:.9}");
            println!("search_witness       {:.9}", witness.enlargement);
            println!("difference           {:+.9}", witness.enlargement - closed);
            println!("grid                 {grid}");
            Ok(0)
        }
    }
}

fn tradeoff(path: &std::path::Path) -> Result<i32, HarnessError> {
    let file = TradeoffFile::from_file(path)?;
    let ranked = assurance::score_tradeoffs(&file.matrix).map_err(|e| HarnessError::Schema {
        pointer: "/matrix".into(),
        message: e.to_string(),
    })?;
    let width = ranked
        .iter()
        .map(|r| r.option.len())
        .max()
        .unwrap_or(0)
        .max("option".len());
    println!("{:<width$}  {:>12}", "option", "total");
    for r in &ranked {
        println!("{:<width$}  {:>12.6}", r.option, r.total);
    }
    Ok(0)
}

fn compare(path: &std::path::Path, kinds: &[String]) -> Result<i32, HarnessError> {
    let scenario = load_scenario(path)?;
    let rows = harness::compare_patterns(&scenario, kinds);
    print!("{}", harness::render_comparison(&rows));
    Ok(0)
}

// Keep the file-wrapper version check alongside its schema constant.
const _: () = assert!(SCHEMA_VERSION == 1);
