use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neuroalign::cli::{self, Globals, QuerySource};

#[derive(Parser)]
#[command(name = "neuroalign", version, about = "Neural–visual alignment: blur, screen, train, evaluate")]
struct Cli {
    /// TOML run configuration ([synth], [train], [encoder], [blur], [bands]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override both the synthesis and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing output directory previously written by this tool.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur paths, fused image and weight maps for one P6 image.
    Blur {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trained parameter directory; the fusion query comes from --trial.
        #[arg(long, requires = "trial")]
        params: Option<PathBuf>,
        /// Trial tensor ([C, T] or [N, C, T]) providing the fusion query.
        #[arg(long, requires = "params")]
        trial: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Generate the synthetic image/EEG benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Zero-shot retrieval and calibration report (uses the run config stored with the params).
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck,
    /// Band decomposition and fixed band-pass filters of one trial.
    Bands {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

fn run(cli: Cli) -> neuroalign::Result<bool> {
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        force: cli.force,
        workers: cli.workers,
    };
    match cli.command {
        Command::Blur {
            input,
            out,
            params,
            trial,
            index,
        } => {
            let query = params.zip(trial).map(|(params, trial)| QuerySource { params, trial, index });
            cli::cmd_blur(&g, &input, &out, query.as_ref())?;
        }
        Command::Synth { out } => {
            let m = cli::cmd_synth(&g, &out)?;
            println!("wrote {} files to {}", m.files.len(), out.display());
        }
        Command::Train { data, out, steps } => {
            let outcome = cli::cmd_train(&g, &data, &out, steps)?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "step {}: clip {:.4} overall {:.4} probe_top1 {:.3}",
                    last.step, last.clip_loss, last.overall, last.probe_top1
                );
            }
        }
        Command::Eval { params, data, out } => {
            let r = cli::cmd_eval(&g, &params, &data, &out)?;
            println!(
                "top1 {:.4} top5 {:.4} outliers {:.4} -> {:.4}",
                r.top1, r.top5, r.outlier_frac_before, r.outlier_frac_after
            );
        }
        Command::Gradcheck => {
            let cases = cli::cmd_gradcheck(&g)?;
            let mut ok = true;
            for c in &cases {
                println!(
                    "{:<26} {:>6} scalars  max rel err {:.3e}  {}",
                    c.name,
                    c.report.checked,
                    c.report.max_rel_err,
                    if c.report.pass { "ok" } else { "FAIL" }
                );
                ok &= c.report.pass;
            }
            return Ok(ok);
        }
        Command::Bands { input, out, index } => cli::cmd_bands(&g, &input, &out, index)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
