//! Command-line runner: load a JSON run configuration, execute one
//! pipeline, print its summary, exit 0/1/2 for success / invariant
//! failure / unusable configuration.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use stopgame_core::pipeline::{run, Pipeline, PipelineError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "stopgame",
    version,
    about = "Solve, verify and play zero-sum controller-and-stopper games"
)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override the pipeline named in the config
    /// (solve|oracle|sandwich|saddle|convergence|validate).
    #[arg(long)]
    pipeline: Option<String>,

    /// Override the artifact output directory.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Override the Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores. Results are identical at
    /// any thread count.
    #[arg(long, env = "STOPGAME_THREADS")]
    threads: Option<usize>,
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(PipelineError::Config("--threads must be positive".into()));
        }
        // a later init attempt in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut config = RunConfig::from_json(&text)?;

    if let Some(name) = &cli.pipeline {
        let quoted = serde_json::to_string(name).expect("string serializes");
        config.pipeline = serde_json::from_str::<Pipeline>(&quoted).map_err(|_| {
            PipelineError::Config(format!(
                "unknown pipeline {name:?}; expected solve, oracle, sandwich, saddle, convergence or validate"
            ))
        })?;
    }
    if let Some(dir) = cli.output {
        config.output_dir = Some(dir);
    }
    if let Some(seed) = cli.seed {
        config.mc.seed = seed;
    }

    let outcome = run(&config)?;
    println!("pipeline: {}", outcome.pipeline);
    for msg in &outcome.messages {
        println!("{msg}");
    }
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
