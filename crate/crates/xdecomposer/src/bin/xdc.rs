use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xdecomposer::config::RunConfig;
use xdecomposer::pipeline::{
    cmd_decompose, cmd_evaluate, cmd_index, cmd_mix, cmd_prep, cmd_pretrain, cmd_simulate,
    cmd_smoke, cmd_train, PipelineError,
};

#[derive(Parser)]
#[command(name = "xdc", about = "Powder diffraction decomposition toolkit", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a key=value run configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
    /// Worker threads (compute is single-threaded; kept for interface parity)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Print progress details
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render a reference library from a directory of CIF files
    Simulate {
        /// Directory containing .cif files
        #[arg(long)]
        cifs: PathBuf,
    },
    /// Synthesize mixtures from a reference library
    Mix {
        /// Run directory holding a library/ subdirectory
        #[arg(long)]
        library: PathBuf,
        /// Number of mixtures to generate
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Preprocess two-column .xy patterns into a reference library
    Prep {
        /// Directory containing .xy files
        #[arg(long)]
        input: PathBuf,
    },
    /// Stage I masked-reconstruction pretraining
    Pretrain {
        #[arg(long)]
        library: PathBuf,
    },
    /// Stage II decomposition training from a Stage I checkpoint
    Train {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Decompose a pattern file or a directory of patterns
    Decompose {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pattern file (.xy or .xdp) or directory of patterns
        #[arg(long)]
        input: PathBuf,
        /// Activity threshold override
        #[arg(long)]
        tau: Option<f64>,
        /// Use raw weights instead of the averaged ones stored alongside
        #[arg(long)]
        no_ema: bool,
    },
    /// Build the retrieval index and write its id list
    Index {
        #[arg(long)]
        library: PathBuf,
    },
    /// Evaluate a checkpoint on stored mixtures
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mixtures: PathBuf,
        #[arg(long)]
        library: PathBuf,
    },
    /// Run the whole pipeline end to end at toy scale
    Smoke,
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let (cfg, warnings) = RunConfig::from_text(&text)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let common = &cli.common;
    let out = &common.out;
    match &cli.command {
        Command::Simulate { cifs } => {
            let cfg = load_config(common)?;
            let summary = cmd_simulate(&cfg, cifs, out)?;
            println!(
                "simulated {} patterns from {} structures ({} failures)",
                summary.patterns,
                summary.structures,
                summary.failures.len()
            );
            if common.verbose {
                for (name, reason) in &summary.failures {
                    eprintln!("skipped {name}: {reason}");
                }
            }
        }
        Command::Mix { library, count } => {
            let cfg = load_config(common)?;
            let n = cmd_mix(&cfg, library, out, *count)?;
            println!("wrote {n} mixtures to {}", out.display());
        }
        Command::Prep { input } => {
            let cfg = load_config(common)?;
            let n = cmd_prep(&cfg, input, out)?;
            println!("prepared {n} patterns into {}", out.display());
        }
        Command::Pretrain { library } => {
            let cfg = load_config(common)?;
            let ckpt = cmd_pretrain(&cfg, library, out)?;
            println!("stage 1 checkpoint: {}", ckpt.display());
        }
        Command::Train {
            library,
            checkpoint,
        } => {
            let cfg = load_config(common)?;
            let ckpt = cmd_train(&cfg, library, checkpoint, out)?;
            println!("stage 2 checkpoint: {}", ckpt.display());
        }
        Command::Decompose {
            checkpoint,
            input,
            tau,
            no_ema,
        } => {
            let summaries = cmd_decompose(checkpoint, input, out, *tau, !no_ema)?;
            for line in summaries {
                println!("{line}");
            }
        }
        Command::Index { library } => {
            let cfg = load_config(common)?;
            let n = cmd_index(&cfg, library, out)?;
            println!("indexed {n} references");
        }
        Command::Evaluate {
            checkpoint,
            mixtures,
            library,
        } => {
            let cfg = load_config(common)?;
            let report = cmd_evaluate(&cfg, checkpoint, mixtures, library, out)?;
            print!("{}", report.to_table());
        }
        Command::Smoke => {
            let seed = common.seed.unwrap_or(0);
            let report = cmd_smoke(seed, out)?;
            print!("{}", report.to_table());
            println!("smoke run complete: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes; bad usage exits 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
