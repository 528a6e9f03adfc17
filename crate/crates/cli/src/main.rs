use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use diffdec_cli::commands::{self, SampleArgs};
use diffdec_cli::error::Result;

#[derive(Parser)]
#[command(
    name = "diffdec",
    version,
    about = "Continuous diffusion over token embeddings with contextual rounding"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the embedding-space denoiser from a run config
    TrainDiffusion {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the training seed from the config
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the rounding decoder (or, without cross-attention, the judge LM)
    TrainDecoder {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pointwise linear readout used as a rounding baseline
    TrainLinear {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw embedding sequences from a denoiser and round them to text
    Sample {
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        /// Optional held-out LM checkpoint for scoring fluency
        #[arg(long)]
        judge: Option<PathBuf>,
        /// ancestral, dpm1, or dpm2
        #[arg(long, default_value = "dpm2")]
        solver: String,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 16)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Text output path; metrics land next to it as <out>.metrics.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an existing samples file with a judge LM
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        judge: PathBuf,
        /// Row label in the metrics CSV; defaults to the samples file stem
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the sequence-risk decomposition on random joint distributions
    Oracle {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Largest sequence length in the sweep
        #[arg(short = 'L', long, default_value_t = 3)]
        positions: usize,
        /// Largest evidence alphabet in the sweep
        #[arg(short = 'A', long, default_value_t = 3)]
        evidence: usize,
        /// Largest token alphabet in the sweep
        #[arg(short = 'K', long, default_value_t = 3)]
        tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare pointwise and contextual token recovery across widths
    Recover {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated embedding widths
        #[arg(long, default_value = "8,16,32")]
        d_list: String,
        /// Noise level the readers must invert
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize the corpus a config describes as a token file
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the corpus seed from the config
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::TrainDiffusion { config, seed, out } => {
            commands::cmd_train_diffusion(&config, seed, &out)
        }
        Cmd::TrainDecoder { config, seed, out } => commands::cmd_train_decoder(&config, seed, &out),
        Cmd::TrainLinear { config, seed, out } => commands::cmd_train_linear(&config, seed, &out),
        Cmd::Sample {
            denoiser,
            decoder,
            judge,
            solver,
            steps,
            temperature,
            n_samples,
            seed,
            out,
        } => commands::cmd_sample(&SampleArgs {
            denoiser,
            decoder,
            judge,
            solver,
            steps,
            temperature,
            n_samples,
            seed,
            out,
        }),
        Cmd::Eval {
            samples,
            judge,
            run_id,
            out,
        } => commands::cmd_eval(&samples, &judge, run_id, &out),
        Cmd::Oracle {
            trials,
            positions,
            evidence,
            tokens,
            seed,
            out,
        } => commands::cmd_oracle(trials, positions, evidence, tokens, seed, &out),
        Cmd::Recover {
            config,
            d_list,
            sigma,
            seed,
            out,
        } => commands::cmd_recover(&config, &d_list, sigma, seed, &out),
        Cmd::GenCorpus { config, seed, out } => commands::cmd_gen_corpus(&config, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful outcomes; anything else is misuse
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
