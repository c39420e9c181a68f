use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbsde_core::barrier::read_barrier_table;
use rbsde_core::rbsde::{read_quadruple_csv, verify_tables};
use rbsde_core::scenario::{run_scenario, Outcome, Registry, Scenario};
use rbsde_core::LabError;

/// Reflected BSDE laboratory: scenario runner and table checks.
#[derive(Parser)]
#[command(name = "rbsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios given as JSON files or built-in names.
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Each scenario writes into <out>/<name>/.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run the scenarios concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// List built-in scenarios.
    List,
    /// Print the JSON of a built-in scenario.
    Show { name: String },
    /// Write the lattice of a scenario as CSV and print its diagnostics.
    DumpModel {
        scenario: String,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a quadruple table against a barrier table.
    Verify {
        quadruple: PathBuf,
        barrier: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

const EXIT_TOLERANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RESOURCE: u8 = 3;

fn exit_code(e: &LabError) -> u8 {
    if e.is_resource() {
        EXIT_RESOURCE
    } else {
        EXIT_CONFIG
    }
}

/// A file path if one exists, otherwise a built-in name. Returns the
/// scenario and the directory relative table paths resolve against.
fn load(arg: &str) -> Result<(Scenario, PathBuf), LabError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        return Ok((Scenario::from_json(&text)?, dir));
    }
    Registry::builtin()
        .get(arg)
        .cloned()
        .map(|s| (s, PathBuf::from(".")))
        .ok_or_else(|| LabError::Config(format!("{arg}: no such file or built-in scenario")))
}

fn write_outcome(dir: &Path, outcome: &Outcome) -> Result<(), LabError> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in &outcome.files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn run_one(arg: &str, out: &Path) -> (String, u8) {
    let result = load(arg).and_then(|(s, dir)| {
        let outcome = run_scenario(&s, &dir)?;
        write_outcome(&out.join(&s.name), &outcome)?;
        Ok(outcome)
    });
    match result {
        Ok(o) => {
            let flags: Vec<String> = o
                .summary
                .pass_flags
                .iter()
                .map(|(k, v)| format!("{k}={}", if *v { "pass" } else { "FAIL" }))
                .collect();
            let line = format!(
                "[{}] {}: {}",
                if o.summary.passed { "PASS" } else { "FAIL" },
                o.summary.scenario,
                flags.join(" ")
            );
            (line, if o.summary.passed { 0 } else { EXIT_TOLERANCE })
        }
        Err(e) => (format!("[ERROR] {arg}: {e}"), exit_code(&e)),
    }
}

fn run(scenarios: &[String], out: &Path, parallel: bool) -> u8 {
    let results: Vec<(String, u8)> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = scenarios
                .iter()
                .map(|a| s.spawn(move || run_one(a, out)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scenario thread panicked"))
                .collect()
        })
    } else {
        scenarios.iter().map(|a| run_one(a, out)).collect()
    };
    for (line, _) in &results {
        println!("{line}");
    }
    // the most severe failure decides
    results.iter().map(|(_, c)| *c).max().unwrap_or(0)
}

fn dump_model(arg: &str, out: Option<&Path>) -> Result<(), LabError> {
    let (s, _) = load(arg)?;
    let spec = s
        .model
        .as_ref()
        .ok_or_else(|| LabError::Config(format!("scenario {} has no model", s.name)))?;
    let model = spec.build::<f64>()?;
    match out {
        Some(p) => model.write_nodes_csv(fs::File::create(p)?)?,
        None => model.write_nodes_csv(std::io::stdout().lock())?,
    }
    let diag = serde_json::to_string_pretty(&model.validate()).expect("diagnostics serialize");
    eprintln!("{diag}");
    Ok(())
}

fn verify(quadruple: &Path, barrier: &Path, tol: f64) -> Result<bool, LabError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(LabError::Config(format!("tolerance must be positive, got {tol}")));
    }
    let q = read_quadruple_csv(fs::File::open(quadruple)?)?;
    let b = read_barrier_table(fs::File::open(barrier)?)?;
    let report = verify_tables(&q, &b, tol)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenarios, out, parallel } => run(&scenarios, &out, parallel),
        Command::List => {
            for (name, description) in Registry::builtin().list() {
                println!("{name:<26} {description}");
            }
            0
        }
        Command::Show { name } => match Registry::builtin().get(&name) {
            Some(s) => {
                println!("{}", s.to_json());
                0
            }
            None => {
                eprintln!("no built-in scenario {name}");
                EXIT_CONFIG
            }
        },
        Command::DumpModel { scenario, out } => match dump_model(&scenario, out.as_deref()) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Verify { quadruple, barrier, tol } => match verify(&quadruple, &barrier, tol) {
            Ok(true) => 0,
            Ok(false) => EXIT_TOLERANCE,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    };
    ExitCode::from(code)
}
