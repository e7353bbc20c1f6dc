use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inn_sysid::config::{ExperimentConfig, Variant};
use inn_sysid::models::ModelKind;
use inn_sysid::pipeline;
use inn_sysid::Error;

/// Interval neural networks for uncertainty-aware system identification.
#[derive(Parser)]
#[command(name = "inn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML, or JSON by `.json` extension).
    #[arg(long, env = "INN_CONFIG")]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and split the dataset; write the manifest.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train crisp networks with the MSE loss.
    TrainBase {
        #[command(flatten)]
        common: Common,
        /// Model kind; all configured kinds by default.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Seeds to train; the configured seeds by default.
        #[arg(long)]
        seed: Vec<u64>,
    },
    /// Train interval radii around existing crisp checkpoints.
    TrainInn {
        #[command(flatten)]
        common: Common,
        /// ilstm1, ilstm2, inode1 or inode2; all configured by default.
        #[arg(long)]
        variant: Vec<Variant>,
        #[arg(long)]
        seed: Vec<u64>,
        /// Coverage targets; the configured list by default.
        #[arg(long)]
        alpha: Vec<f64>,
    },
    /// Compute test metrics, aggregate over seeds and write reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Vec<Variant>,
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        alpha: Vec<f64>,
    },
    /// Prepare, train and evaluate every selected variant.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Vec<Variant>,
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        alpha: Vec<f64>,
    },
}

fn load(common: &Common) -> inn_sysid::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn or_default<T: Clone>(given: Vec<T>, default: impl FnOnce() -> Vec<T>) -> Vec<T> {
    if given.is_empty() {
        default()
    } else {
        given
    }
}

struct Selection {
    variants: Vec<Variant>,
    seeds: Vec<u64>,
    alphas: Vec<f64>,
}

fn select(cfg: &ExperimentConfig, variant: Vec<Variant>, seed: Vec<u64>, alpha: Vec<f64>) -> inn_sysid::Result<Selection> {
    let variants = or_default(variant, || cfg.variants());
    for v in &variants {
        cfg.model(v.kind)?;
    }
    let alphas = or_default(alpha, || cfg.uq.alphas.clone());
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {a}")));
    }
    Ok(Selection {
        variants,
        seeds: or_default(seed, || cfg.seeds.clone()),
        alphas,
    })
}

fn print_report(r: &inn_sysid::report::UqReport) {
    println!(
        "{} alpha={} PICP={:.2}±{:.2} PINAW={:.2}±{:.2} RMSE={:.4}±{:.4} seeds={}",
        r.variant, r.alpha, r.picp.mean, r.picp.std, r.pinaw.mean, r.pinaw.std, r.rmse.mean, r.rmse.std, r.picp.n
    );
}

fn run(cli: Cli) -> inn_sysid::Result<()> {
    match cli.command {
        Command::Prepare { common } => {
            let cfg = load(&common)?;
            let m = pipeline::cmd_prepare(&cfg)?;
            println!(
                "{}: K={} split={:?} N={} B={}",
                m.dataset, m.samples, m.split, m.window, m.train_windows
            );
        }
        Command::TrainBase { common, model, seed } => {
            let cfg = load(&common)?;
            let kinds = match model {
                Some(k) => {
                    cfg.model(k)?;
                    vec![k]
                }
                None => cfg.models().map(|(k, _)| k).collect(),
            };
            for kind in kinds {
                for &s in &or_default(seed.clone(), || cfg.seeds.clone()) {
                    let r = pipeline::cmd_train_base(&cfg, kind, s)?;
                    println!(
                        "{} seed={} best_epoch={} val_mse={:.6} test_rmse={:.4}",
                        r.model, r.seed, r.best_epoch, r.val_mse, r.test_rmse
                    );
                }
            }
        }
        Command::TrainInn { common, variant, seed, alpha } => {
            let cfg = load(&common)?;
            let sel = select(&cfg, variant, seed, alpha)?;
            for &v in &sel.variants {
                for &a in &sel.alphas {
                    for &s in &sel.seeds {
                        let r = pipeline::cmd_train_inn(&cfg, v, s, a)?;
                        println!(
                            "{} seed={} alpha={} best_epoch={} val_picp={:.2} val_pinaw={:.2}",
                            r.variant, r.seed, r.alpha, r.best_epoch, r.val_picp, r.val_pinaw
                        );
                    }
                }
            }
        }
        Command::Evaluate { common, variant, seed, alpha } => {
            let cfg = load(&common)?;
            let sel = select(&cfg, variant, seed, alpha)?;
            for &v in &sel.variants {
                for &a in &sel.alphas {
                    print_report(&pipeline::cmd_evaluate(&cfg, v, a, &sel.seeds)?);
                }
            }
        }
        Command::Reproduce { common, variant, seed, alpha } => {
            let cfg = load(&common)?;
            let sel = select(&cfg, variant, seed, alpha)?;
            for r in pipeline::reproduce(&cfg, &sel.variants, &sel.alphas, &sel.seeds)? {
                print_report(&r);
            }
            log::info!("reports written to {}", cfg.output_dir.join("reports").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INN_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
