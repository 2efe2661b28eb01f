use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlink_cli::{apply_overrides, Config, ScenarioKind};

#[derive(Parser)]
#[command(name = "qlink", version, about = "Run simulation scenarios for cable-linked quantum modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write its data files.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, env = "QLINK_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "QLINK_OUT")]
        out: Option<PathBuf>,
        #[arg(long, env = "QLINK_THREADS")]
        threads: Option<usize>,
    },
    /// Parse and build a scenario without running it.
    Validate {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, env = "QLINK_SEED")]
        seed: Option<u64>,
    },
    /// List scenarios, or print the default config of one.
    List { scenario: Option<ScenarioKind> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), qlink_cli::CliError> {
    match cmd {
        Command::Run { config, seed, out, threads } => {
            let mut cfg = Config::load(&config)?;
            apply_overrides(&mut cfg, seed, out, threads);
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(cfg.scenario.name()));
            let manifest = qlink_cli::run(&cfg, &dir)?;
            println!("{} finished in {:.2} s, {} files in {}", cfg.scenario, manifest.wall_time_s, manifest.files.len(), dir.display());
            println!("{}", serde_json::to_string_pretty(&manifest.summary).expect("summary serializes"));
        }
        Command::Validate { config, seed } => {
            let mut cfg = Config::load(&config)?;
            apply_overrides(&mut cfg, seed, None, None);
            let plan = qlink_cli::validate(&cfg)?;
            println!("{}: ok ({})", config.display(), plan.kind());
            for line in plan.describe() {
                println!("  {line}");
            }
        }
        Command::List { scenario: None } => {
            for k in ScenarioKind::ALL {
                println!("{:<9} {}", k.name(), k.description());
            }
            println!("\nschema_version {}; `qlink list <scenario>` prints its defaults", qlink_cli::SCHEMA_VERSION);
        }
        Command::List { scenario: Some(k) } => print!("{}", Config::template(k)),
    }
    Ok(())
}
