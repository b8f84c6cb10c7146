//! `rnnlab`: reproducible experiments on online vs batch recurrent decoding.
//!
//! Every command is deterministic given its flags and seeds; data and report
//! files carry no timestamps, so identical invocations produce byte-identical
//! outputs. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
//! failure.

mod config;
mod decode_spec;
mod ops;
mod sweep;

use clap::{Parser, Subcommand};
use config::Config;
use ops::{CliError, DataArgs, TrainArgs};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rnnlab", version, about = "Recurrent decoding laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task dataset: 80/10/10 split files plus a
    /// manifest with the task spec and its Bayes-oracle accuracies.
    GenData {
        /// Task family: markov, modsum or future
        #[arg(long)]
        task: String,
        /// Symbol alphabet size A (markov, future)
        #[arg(long)]
        alphabet: Option<usize>,
        /// Label class count C (markov; fixed for the other tasks)
        #[arg(long)]
        classes: Option<usize>,
        /// Markov window length the labels depend on
        #[arg(long)]
        order: Option<usize>,
        /// Modulus C of the running-sum task (symbols are residues, A = C)
        #[arg(long)]
        modulus: Option<usize>,
        /// How many steps ahead the future task's label sits
        #[arg(long)]
        future_lookahead: Option<usize>,
        /// Standard deviation of the Gaussian noise added to one-hot frames
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Frames per sequence
        #[arg(long)]
        length: usize,
        /// Number of sequences before splitting
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for train.txt, dev.txt, test.txt and manifest
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing output files
        #[arg(long)]
        force: bool,
    },
    /// Train a frame classifier; writes the best checkpoint (dev FER),
    /// per-epoch history, and the effective config.
    Train {
        /// gen-data output directory (train.txt and dev.txt are used)
        #[arg(long)]
        data: PathBuf,
        /// Optional config file; explicit flags override its values
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cell kind: vanilla or lstm
        #[arg(long)]
        cell: Option<String>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Training decode mode: online or batch
        #[arg(long)]
        decode: Option<String>,
        #[arg(long)]
        lookahead: Option<usize>,
        /// Chain length kappa (batch mode)
        #[arg(long)]
        context: Option<usize>,
        /// Consecutive predictions per chain (batch mode)
        #[arg(long)]
        predict: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        clip_norm: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for manifest, checkpoints/ and reports/
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset under one or more decode specs;
    /// one FER row per expanded spec.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (e.g. the test.txt of a gen-data directory)
        #[arg(long)]
        data: PathBuf,
        /// Decode spec, repeatable; lists expand, e.g. batch:context=40,35,30
        #[arg(long)]
        decode: Vec<String>,
        /// Output directory for tables/eval.tsv
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram the norms of per-frame loss gradients with respect to the
    /// input delta steps before each prediction.
    GradProbe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file to probe
        #[arg(long)]
        data: PathBuf,
        /// Decode graph for the probe (a single config, no sweeps)
        #[arg(long, default_value = "online:lookahead=1")]
        decode: String,
        /// Distance between the prediction and the probed input frame
        #[arg(long, default_value_t = 20)]
        delta: usize,
        /// Probe every stride-th prediction time
        #[arg(long, default_value_t = 7)]
        stride: usize,
        #[arg(long, default_value_t = 24)]
        bins: usize,
        /// Output directory for reports/grad_hist.tsv and grad_summary.tsv
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a plan file (generate, train, eval) and aggregate
    /// one master FER table; finished cells are skipped on rerun.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory; cells land under cells/<name>/
        #[arg(long)]
        out: PathBuf,
        /// Run independent cells concurrently
        #[arg(long)]
        parallel: bool,
    },
}

fn setup_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("RNNLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("RNNLAB_THREADS={text}: expected a count >= 1")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Data(format!("cannot configure {n} worker threads: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            task,
            alphabet,
            classes,
            order,
            modulus,
            future_lookahead,
            noise,
            length,
            count,
            seed,
            out,
            force,
        } => {
            let args = DataArgs {
                task,
                alphabet,
                classes,
                order,
                modulus,
                future_lookahead,
                noise,
                length,
                count,
                seed,
            };
            println!("{}", ops::gen_data(&args, &out, force)?);
        }
        Command::Train {
            data,
            config,
            cell,
            layers,
            hidden,
            decode,
            lookahead,
            context,
            predict,
            step_size,
            clip_norm,
            epochs,
            seed,
            out,
        } => {
            let mut args = TrainArgs::defaults(data);
            if let Some(path) = config {
                args.apply_config(&Config::load(&path).map_err(CliError::Data)?)?;
            }
            // flags win over config-file values
            macro_rules! flag {
                ($field:ident) => {
                    if let Some(v) = $field {
                        args.$field = v;
                    }
                };
            }
            flag!(cell);
            flag!(layers);
            flag!(hidden);
            flag!(decode);
            flag!(lookahead);
            flag!(context);
            flag!(predict);
            flag!(step_size);
            flag!(clip_norm);
            flag!(epochs);
            flag!(seed);
            println!("{}", ops::run_train(&args, &out)?);
        }
        Command::Eval { checkpoint, data, decode, out } => {
            print!("{}", ops::run_eval(&checkpoint, &data, &decode, &out)?);
        }
        Command::GradProbe { checkpoint, data, decode, delta, stride, bins, out } => {
            print!("{}", ops::run_grad_probe(&checkpoint, &data, &decode, delta, stride, bins, &out)?);
        }
        Command::Sweep { plan, out, parallel } => {
            print!("{}", sweep::run_sweep(&plan, &out, parallel)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version on stdout (exit 0) and errors on
            // stderr; the latter are usage errors, exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = setup_threads().and_then(|()| dispatch(cli)) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
