use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bacronym::config::{ExperimentConfig, Presentation};
use bacronym::harness::{emit_figure_data, run_experiment_file, Figure, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "bacronym", version, about = "Bayesian interleaved-RB gate tuning on a simulated qubit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the configured device and write a run directory.
    Run { config: PathBuf },
    /// Write figure data as CSV under <output_dir>/figures.
    Figures {
        config: PathBuf,
        /// objective-curve, rb-params-curve, survival-decay, tuning-trace or all.
        #[arg(long, default_value = "all")]
        which: String,
    },
    /// Print the twirling group with its generator words as JSON.
    DumpGroup {
        #[arg(long, value_enum, default_value_t = PresentationArg::Minimal)]
        presentation: PresentationArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresentationArg {
    Minimal,
    Listed,
}

fn figures(config: &PathBuf, which: &str) -> bacronym::Result<()> {
    let config = ExperimentConfig::load(config)?;
    let selected = if which == "all" { Figure::ALL.to_vec() } else { vec![which.parse()?] };
    for figure in selected {
        let path = emit_figure_data(&config, figure)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn dump_group(presentation: PresentationArg) -> bacronym::Result<()> {
    let table = match presentation {
        PresentationArg::Minimal => Presentation::Minimal,
        PresentationArg::Listed => Presentation::Listed,
    }
    .table()?;
    let doc = serde_json::to_string_pretty(&table.to_json(&["S", "H"]))?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{doc}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => run_experiment_file(&config),
        Command::Figures { config, which } => match figures(&config, &which) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::DumpGroup { presentation } => match dump_group(presentation) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code as u8)
}
