//! `spot` - experiments with subpixel token placement on the toy shape task.
//!
//! Subcommands cover the full workflow: dataset generation, training,
//! prior/budget evaluation, oracle placement search, cross-model transfer,
//! adversarial ablations, saliency-gain analysis, trajectory rendering and a
//! throughput benchmark. Every run writes a JSON manifest next to its output
//! recording the resolved configuration, seeds and input/output digests.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spot_core::error::Error;
use spot_core::oracle::{Objective, SearchMode, SnapWhen};
use spot_core::priors::PriorKind;

use commands::*;
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "spot", version, about = "Subpixel token placement experiments")]
struct Cli {
    /// Worker threads for per-image parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory (default: $SPOT_DATA_DIR).
    #[arg(long, env = "SPOT_DATA_DIR")]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenData {
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory (default: $SPOT_DATA_DIR).
        #[arg(long, env = "SPOT_DATA_DIR")]
        out_dir: PathBuf,
    },
    /// Train the toy encoder on subpixel tokens.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Weight file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1.2e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dense training token budget.
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value = "isotropic")]
        prior: String,
        /// Sample the budget from {16,32,64} per batch.
        #[arg(long, default_value_t = false)]
        budget_jitter: bool,
        /// Token window side in pixels.
        #[arg(long, default_value_t = 8)]
        window: usize,
    },
    /// Evaluate a trained model under a prior and token budget.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "isotropic")]
        prior: String,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report accuracy after oracle refinement.
        #[arg(long, default_value_t = false)]
        oracle: bool,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Output stem; writes <out>.txt and <out>.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle placement search and dump trajectories.
    Oracle {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "isotropic")]
        prior: String,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// subpixel | grid
        #[arg(long, default_value = "subpixel")]
        mode: String,
        /// every-step | final
        #[arg(long, default_value = "every-step")]
        snap_when: String,
        /// descent | ascent | obfuscate
        #[arg(long, default_value = "descent")]
        objective: String,
        /// Snap-lattice side for grid mode.
        #[arg(long, default_value_t = 8)]
        grid_g: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap the number of evaluated images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate placements optimized by one model on another model.
    Transfer {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarial ablations: harmful priors and adversarial oracles.
    Ablate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        params: PathBuf,
        /// background | boundary | ascent | obfuscate
        #[arg(long)]
        which: String,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative saliency gain of oracle trajectories.
    Rsg {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a trajectory CSV over its image as a static SVG.
    Render {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window side drawn around final placements.
        #[arg(long, default_value_t = 8)]
        window: usize,
    },
    /// Forward-only throughput across token budgets.
    Bench {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        params: PathBuf,
        /// Comma-separated token budgets.
        #[arg(long, default_value = "8,16,32,64")]
        m_list: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Spread images over the thread pool instead of the default
        /// single-threaded measurement.
        #[arg(long, default_value_t = false)]
        parallel: bool,
        /// Number of images per measurement.
        #[arg(long, default_value_t = 64)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn manifest_path_for(out: &std::path::Path) -> PathBuf {
    let name = out.file_name().and_then(|s| s.to_str()).unwrap_or("run");
    out.with_file_name(format!("{name}.manifest.json"))
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        // a failure here only means the pool was already initialized
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::GenData { n, seed, out_dir } => {
            let args = GenDataArgs { n, seed, out_dir };
            let mut m = RunManifest::start("gen-data", manifest_path_for(&args.out_dir));
            let outputs = cmd_gen_data(&args, &mut m)?;
            m.finalize(&outputs).map_err(|e| Error::io(&args.out_dir, e))
        }
        Command::Train {
            data,
            out,
            epochs,
            batch_size,
            lr,
            seed,
            m,
            prior,
            budget_jitter,
            window,
        } => {
            let args = TrainArgs {
                data: data.data,
                out,
                epochs,
                batch_size,
                lr,
                seed,
                m,
                prior: PriorKind::parse(&prior)?,
                budget_jitter,
                window,
            };
            let mut mf = RunManifest::start("train", manifest_path_for(&args.out));
            let outputs = cmd_train(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Eval { data, params, prior, m, seed, oracle, lr, steps, out } => {
            let args = EvalArgs {
                data: data.data,
                params,
                prior: PriorKind::parse(&prior)?,
                m,
                seed,
                oracle,
                lr,
                steps,
                out,
            };
            let mut mf = RunManifest::start("eval", manifest_path_for(&args.out));
            let outputs = cmd_eval(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Oracle {
            data,
            params,
            prior,
            m,
            lr,
            steps,
            mode,
            snap_when,
            objective,
            grid_g,
            seed,
            limit,
            out_dir,
        } => {
            let args = OracleArgs {
                data: data.data,
                params,
                prior: PriorKind::parse(&prior)?,
                m,
                lr,
                steps,
                mode: parse_mode(&mode)?,
                snap_when: parse_snap_when(&snap_when)?,
                objective: parse_objective(&objective)?,
                grid_g,
                seed,
                limit,
                out_dir,
            };
            let mut mf = RunManifest::start("oracle", manifest_path_for(&args.out_dir));
            let outputs = cmd_oracle(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out_dir, e))
        }
        Command::Transfer { data, source, target, m, lr, steps, seed, out } => {
            let args = TransferArgs { data: data.data, source, target, m, lr, steps, seed, out };
            let mut mf = RunManifest::start("transfer", manifest_path_for(&args.out));
            let outputs = cmd_transfer(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Ablate { data, params, which, m, lr, steps, seed, out } => {
            let args = AblateArgs {
                data: data.data,
                params,
                which: AblateWhich::parse(&which)?,
                m,
                lr,
                steps,
                seed,
                out,
            };
            let mut mf = RunManifest::start("ablate", manifest_path_for(&args.out));
            let outputs = cmd_ablate(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Rsg { data, params, m, lr, steps, seed, out } => {
            let args = RsgArgs { data: data.data, params, m, lr, steps, seed, out };
            let mut mf = RunManifest::start("rsg", manifest_path_for(&args.out));
            let outputs = cmd_rsg(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Render { trajectory, image, out, window } => {
            let args = RenderArgs { trajectory, image, out, window };
            let mut mf = RunManifest::start("render", manifest_path_for(&args.out));
            let outputs = cmd_render(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
        Command::Bench { data, params, m_list, repeats, parallel, images, seed, out } => {
            let m_list = m_list
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Error::InvalidArgument(format!("bad token budget '{s}' in --m-list"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let args =
                BenchArgs { data: data.data, params, m_list, repeats, parallel, images, seed, out };
            let mut mf = RunManifest::start("bench", manifest_path_for(&args.out));
            let outputs = cmd_bench(&args, &mut mf)?;
            mf.finalize(&outputs).map_err(|e| Error::io(&args.out, e))
        }
    }
}

fn parse_mode(s: &str) -> Result<SearchMode, Error> {
    match s {
        "subpixel" => Ok(SearchMode::Subpixel),
        "grid" => Ok(SearchMode::GridSnap),
        other => Err(Error::InvalidArgument(format!("unknown mode '{other}' (subpixel|grid)"))),
    }
}

fn parse_snap_when(s: &str) -> Result<SnapWhen, Error> {
    match s {
        "every-step" => Ok(SnapWhen::EveryStep),
        "final" => Ok(SnapWhen::Final),
        other => {
            Err(Error::InvalidArgument(format!("unknown snap-when '{other}' (every-step|final)")))
        }
    }
}

fn parse_objective(s: &str) -> Result<Objective, Error> {
    match s {
        "descent" => Ok(Objective::Descent),
        "ascent" => Ok(Objective::Ascent),
        "obfuscate" => Ok(Objective::Obfuscated),
        other => Err(Error::InvalidArgument(format!(
            "unknown objective '{other}' (descent|ascent|obfuscate)"
        ))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("error: usage: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidArgument(_) => 1,
                Error::Io { .. } | Error::Format { .. } | Error::ShapeMismatch(_) => 2,
                Error::Numeric(_) => 3,
            };
            ExitCode::from(code)
        }
    }
}
