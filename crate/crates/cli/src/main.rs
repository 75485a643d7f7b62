//! `dea`: entity alignment between knowledge graphs with dangling-entity
//! detection. Subcommands: forge (build a benchmark), train, eval, analyze.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (checkpoint format 1, manifest format 1)"
);

// Keep the version string honest about the actual format constants.
const _: () = {
    assert!(dea_core::train::CHECKPOINT_FORMAT_VERSION == 1);
    assert!(crate::manifest::MANIFEST_FORMAT_VERSION == 1);
};

#[derive(Parser, Debug)]
#[command(name = "dea", version = VERSION, about)]
struct Cli {
    /// Worker threads for parallel sections; output is identical for any
    /// count, 1 additionally serializes everything.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an alignment dataset with dangling entities from raw triple files.
    Forge(commands::ForgeArgs),
    /// Train an aligner, optionally with a jointly learned dangling detector.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint under the relaxed or consolidated protocol.
    Eval(commands::EvalArgs),
    /// Dataset and model diagnostics.
    #[command(subcommand)]
    Analyze(commands::AnalyzeCmd),
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("{}", serde_json::json!({ "error": format!("workers: {e}") }));
            std::process::exit(1);
        }
    }
    let result = match &cli.command {
        Command::Forge(args) => commands::run_forge(args),
        Command::Train(args) => commands::run_train(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Analyze(cmd) => commands::run_analyze(cmd),
    };
    if let Err(e) = result {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
