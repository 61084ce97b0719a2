use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use patchqnn::hessian::ParameterScope;
use patchqnn_cli::commands::{format_report, HessianOverrides};
use patchqnn_cli::{cmd_hessian, cmd_landscape, cmd_prepare, cmd_report, cmd_train, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "patchqnn", version, about = "Patch-based quantum neural networks on MNIST")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    AnglesOnly,
    AnglesAndBias,
}

#[derive(Subcommand)]
enum Command {
    /// Pool and normalize an IDX image/label pair into a prepared dataset file.
    Prepare {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Warm-restart period of the cosine schedule, in epochs.
        #[arg(long)]
        restart_period: Option<usize>,
    },
    /// PCA loss landscape of a finished run.
    Landscape {
        run: PathBuf,
        /// Evaluate grid losses on the first N training samples.
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Largest Hessian eigenvalue at a run's min-loss checkpoint.
    Hessian {
        run: PathBuf,
        #[arg(long, value_enum)]
        scope: Option<Scope>,
        /// Size of the seeded training subsample.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the whole training set.
        #[arg(long)]
        full: bool,
    },
    /// Summary table over finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare { images, labels, out } => {
            let o = cmd_prepare(&images, &labels, &out)?;
            let action = if o.written { "wrote" } else { "unchanged" };
            println!(
                "{action} {}: {} images of {}x{}, sha256 {}",
                out.display(),
                o.count,
                o.side,
                o.side,
                o.checksum
            );
        }
        Command::Train {
            config,
            out,
            seed,
            restart_period,
        } => {
            let cfg = RunConfig::load(
                &config,
                &Overrides {
                    out,
                    seed,
                    restart_period,
                },
            )?;
            let o = cmd_train(&cfg)?;
            println!("{}", o.summary.line());
            println!("run directory: {}", o.run_dir.display());
        }
        Command::Landscape { run, subset } => {
            let r = cmd_landscape(&run, subset)?;
            println!("{}", r.ratio_line());
            println!("origin loss {:.6}, {} grid points", r.grid.origin_loss, r.grid.n_points());
        }
        Command::Hessian {
            run,
            scope,
            subset,
            seed,
            full,
        } => {
            let o = HessianOverrides {
                scope: scope.map(|s| match s {
                    Scope::AnglesOnly => ParameterScope::AnglesOnly,
                    Scope::AnglesAndBias => ParameterScope::AnglesAndBias,
                }),
                subset,
                seed,
                full,
            };
            let r = cmd_hessian(&run, &o)?;
            let flag = if r.converged { "" } else { " (not converged)" };
            println!(
                "lambda_max {:.6} after {} iterations, residual {:.3e}{flag}",
                r.lambda_max, r.iterations, r.residual
            );
            if r.negative {
                println!("dominant curvature is negative; the largest eigenvalue needs deflation");
            }
        }
        Command::Report { runs } => {
            print!("{}", format_report(&cmd_report(&runs)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { patchqnn_cli::EXIT_USAGE as u8 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(patchqnn_cli::EXIT_OTHER as u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
