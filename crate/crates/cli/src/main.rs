use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use earl_core::experiments::{reproduce, run_experiment, EnvName, ExperimentConfig, REPRODUCTIONS};
use earl_core::Error;

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "earl", version, about = "Evolutionary and temporal-difference RL experiments")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of independent runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    output: Option<String>,
    /// Genetic operators for rule-set evolution.
    #[arg(long, global = true, value_enum)]
    operators: Option<Operators>,
    /// Suppress progress and summary lines.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Operators {
    Lamarck,
    Standard,
}

#[derive(Subcommand)]
enum Command {
    /// Re-run a named reference experiment and check its assertions.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(REPRODUCTIONS))]
        name: String,
    },
    /// Run an experiment described by a `key = value` config file.
    Run {
        #[arg(long)]
        config: String,
    },
    /// Environment utilities.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Print states, rewards and transitions as `key = value` lines.
    Dump {
        #[arg(value_parser = ["grid", "hidden"])]
        name: String,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::InvalidConfig(_)) { EXIT_CONFIG } else { EXIT_ASSERTION };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: String) -> Failure {
    Failure { code: EXIT_CONFIG, message }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("EARL_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| config_error(format!("invalid value `{raw}` for EARL_THREADS")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(format!("cannot configure thread pool: {e}")))
}

fn emit_csv(csv: &str, output: Option<&str>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, csv).map_err(|e| config_error(format!("cannot write `{path}`: {e}"))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes()).map_err(|e| Failure { code: EXIT_ASSERTION, message: e.to_string() })
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let say = |line: &str| {
        if !cli.quiet {
            eprintln!("{line}");
        }
    };
    match &cli.command {
        Command::Reproduce { name } => {
            let runs = cli.runs.unwrap_or(100);
            let report = reproduce(name, cli.seed.unwrap_or(0), runs)?;
            for line in &report.lines {
                say(line);
            }
            if let Some(csv) = &report.csv {
                emit_csv(csv, cli.output.as_deref())?;
            }
            say(if report.passed { "PASS" } else { "FAIL" });
            if !report.passed {
                return Err(Failure { code: EXIT_ASSERTION, message: format!("{name}: assertions failed") });
            }
        }
        Command::Run { config } => {
            let text = fs::read_to_string(config).map_err(|e| config_error(format!("cannot read `{config}`: {e}")))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(seed) = cli.seed {
                cfg.set("seed", &seed.to_string())?;
            }
            if let Some(runs) = cli.runs {
                cfg.set("runs", &runs.to_string())?;
            }
            if let Some(op) = cli.operators {
                cfg.set("rules.operators", if matches!(op, Operators::Lamarck) { "lamarck" } else { "standard" })?;
            }
            if let Some(out) = &cli.output {
                cfg.output = Some(out.clone());
            }
            let result = run_experiment(&cfg)?;
            emit_csv(&result.csv, cfg.output.as_deref())?;
            say(&result.summary.to_string());
        }
        Command::Env { command: EnvCommand::Dump { name } } => {
            let env = EnvName::parse(name).expect("clap restricts the names").build();
            print!("{}", env.to_kv_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
