use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dtfr_core::config::Config;
use dtfr_core::error::Error;
use dtfr_core::pipeline;

#[derive(Parser)]
#[command(name = "dtfr", version, about = "Class-conditional sound generation over discrete mel codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the labelled corpus and its train/test manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Defaults to <work_dir>/data.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train the VQ-VAE on the train split.
    TrainVqvae {
        #[command(flatten)]
        common: Common,
    },
    /// Train the class-conditional prior over VQ-VAE indices.
    TrainPrior {
        #[command(flatten)]
        common: Common,
    },
    /// Encode, quantize and decode one clip; prints the mel-domain MSE.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sample clips of one class from the prior.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Class name or index.
        #[arg(long)]
        class: String,
        /// Defaults to the config's sample count.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the config's prior temperature.
        #[arg(long)]
        temperature: Option<f32>,
        /// Defaults to <work_dir>/samples.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score generated clips with NDB/JSD bins and the probe classifier.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory with a manifest.csv of generated clips.
        #[arg(long)]
        generated: PathBuf,
        /// Reference manifest; defaults to the workspace corpus.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Defaults to <work_dir>/reports.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn threads() -> Result<usize> {
    match std::env::var("DTFR_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("DTFR_THREADS must be a positive integer, got {v:?}")).into()),
        Err(_) => Ok(1),
    }
}

fn load(common: &Common) -> Result<Config> {
    Config::load(&common.config).with_context(|| format!("loading {}", common.config.display()))
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .context("starting the worker pool")?;
    match cli.command {
        Command::SynthData { common, out_dir } => {
            let cfg = load(&common)?;
            let s = pipeline::synth_data(&cfg, out_dir.as_deref())?;
            println!("wrote {} clips ({} train, {} test), manifest {}", s.clips, s.train, s.test, s.manifest.display());
        }
        Command::TrainVqvae { common } => {
            let cfg = load(&common)?;
            let s = pipeline::train_vqvae(&cfg, &mut log)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::TrainPrior { common } => {
            let cfg = load(&common)?;
            let s = pipeline::train_prior(&cfg, &mut log)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Reconstruct { common, input, output } => {
            let cfg = load(&common)?;
            let s = pipeline::reconstruct(&cfg, &input, &output)?;
            println!("mse {:.6}  wrote {}", s.mse, s.output.display());
        }
        Command::Sample {
            common,
            class,
            count,
            seed,
            temperature,
            out_dir,
        } => {
            let cfg = load(&common)?;
            let n = count.unwrap_or(cfg.sample.count);
            let s = pipeline::sample(&cfg, &class, n, seed, temperature, out_dir.as_deref())?;
            for f in &s.files {
                println!("{}", f.display());
            }
        }
        Command::Evaluate {
            common,
            generated,
            reference,
            out_dir,
        } => {
            let cfg = load(&common)?;
            let (_, table) = pipeline::evaluate(&cfg, &generated, reference.as_deref(), out_dir.as_deref(), &mut log)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_usage));
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
