//! Command-line front end. Exit codes: 0 success, 1 runtime failure
//! (including training divergence and a failed gradient check), 2 usage or
//! configuration errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cca::fit_cca;
use crate::cca2d::{fit_2dcca, Cca2dOptions, InitMode, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::depth::{
    depth_loss_report, DepthImage, SsimParams, DEFAULT_DYNAMIC_RANGE, DEFAULT_LAMBDA,
    DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_run_dir, run_experiment, Corruption, ExperimentConfig};
use crate::fusion::ViewSide;
use crate::gradcheck::{check_corr_loss, correlated_batch, DEFAULT_TOLERANCE};
use crate::io::{convert, read_matrix, read_stack};
use crate::metrics::{compute_metrics, load_detections, DEFAULT_IOU_THRESHOLD};
use crate::tensor::DEFAULT_REG_EPSILON;

#[derive(Debug, Parser)]
#[command(
    name = "ccafuse",
    version,
    about = "CCA, 2D-CCA and CCA-based two-view fusion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form CCA between two sample matrices.
    Cca {
        #[command(subcommand)]
        action: CcaAction,
    },
    /// Alternating two-dimensional CCA between two stacks of matrices.
    Cca2d {
        #[command(subcommand)]
        action: Cca2dAction,
    },
    /// Two-view fusion training and evaluation.
    Fuse {
        #[command(subcommand)]
        action: FuseAction,
    },
    /// Detection metrics over JSON box lists.
    Metrics {
        #[command(subcommand)]
        action: MetricsAction,
    },
    /// L1, gradient, SSIM and combined depth losses between two depth images.
    Depthloss(DepthlossArgs),
    /// Check the correlation-loss gradient against central finite differences
    /// over seeded batches (N cycles through 8, 16, 64; k through 1, 2, 3).
    Gradcheck(GradcheckArgs),
    /// Convert a tensor between CSV and the CCAT binary format (by extension).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum CcaAction {
    Fit {
        /// Samples of view X, one row per sample (CSV or CCAT).
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Number of canonical pairs.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Ridge added to both auto-covariances.
        #[arg(long, default_value_t = DEFAULT_REG_EPSILON)]
        eps: f64,
        /// Model JSON destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    /// Leading columns of the identity.
    Identity,
    /// Seeded uniform entries in [-1, 1).
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum Cca2dAction {
    Fit {
        /// 3-D CCAT stack (samples x rows x cols) for view X.
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        d1: usize,
        #[arg(long)]
        d2: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        /// Stop when the objective's relative change over one iteration is at most this.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_REG_EPSILON)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = InitArg::Identity)]
        init: InitArg,
        /// Seed for `--init uniform`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FuseAction {
    /// Train from a JSON config. Each resolved run is written to
    /// `<out>/<config hash>/`; comparisons and sweeps add a summary directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Run the (mode, seed) combinations concurrently.
        #[arg(long)]
        sweep: bool,
        /// Comma-separated seeds; overrides the config's `sweep_seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Re-evaluate a saved run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Test-time noise on one view; overrides the run's own corruption.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_enum, default_value_t = ViewArg::B)]
        view: ViewArg,
        #[arg(long, default_value_t = 0)]
        corrupt_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ViewArg {
    A,
    B,
}

#[derive(Debug, Subcommand)]
pub enum MetricsAction {
    /// mAP (single-threshold precision per class), mRecall and mIoU (per match).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou: f64,
        /// Also report 11-point interpolated AP.
        #[arg(long)]
        ap11: bool,
    },
}

#[derive(Debug, Args)]
pub struct DepthlossArgs {
    /// Reference depth image (2-D CSV or CCAT).
    #[arg(long)]
    pub a: PathBuf,
    /// Predicted depth image.
    #[arg(long)]
    pub b: PathBuf,
    /// Weight of the L1 term in the combined loss.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Odd SSIM window size (uniform weights, valid windows only).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Dynamic range L; c1 = (0.01 L)^2, c2 = (0.03 L)^2.
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_RANGE)]
    pub range: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_REG_EPSILON)]
    pub eps: f64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Outcome of a successful command: `Ok(false)` signals a failed check.
fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Cca {
            action: CcaAction::Fit { x, y, k, eps, out },
        } => {
            let model = fit_cca(&read_matrix(&x)?, &read_matrix(&y)?, k, eps)?;
            if out.is_some() {
                println!("correlations: {:?}", model.correlations);
            }
            emit_json(&model, out.as_ref())?;
        }
        Command::Cca2d {
            action:
                Cca2dAction::Fit {
                    x,
                    y,
                    d1,
                    d2,
                    max_iters,
                    tol,
                    eps,
                    init,
                    seed,
                    out,
                },
        } => {
            let mut opts = Cca2dOptions::new(d1, d2);
            opts.max_iters = max_iters;
            opts.tol = tol;
            opts.reg_epsilon = eps;
            opts.init = match init {
                InitArg::Identity => InitMode::IdentitySlice,
                InitArg::Uniform => InitMode::Uniform { seed },
            };
            let model = fit_2dcca(&read_stack(&x)?, &read_stack(&y)?, &opts)?;
            if out.is_some() {
                println!(
                    "objective {:?} after {} iterations (converged: {})",
                    model.final_objective(),
                    model.iterations,
                    model.converged
                );
            }
            emit_json(&model, out.as_ref())?;
        }
        Command::Fuse {
            action:
                FuseAction::Train {
                    config,
                    out,
                    sweep,
                    seeds,
                },
        } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            if !seeds.is_empty() {
                cfg.sweep_seeds = seeds;
            }
            let report = run_experiment(&cfg, &out, sweep)?;
            for r in &report.runs {
                let m = &r.summary.metrics;
                let s = &r.summary.config.schedule;
                print!(
                    "{} mode={} seed={} test_acc={:.4}",
                    r.dir.display(),
                    crate::experiment::mode_name(s.mode),
                    s.seed,
                    m.test_accuracy
                );
                if let Some(c) = m.corrupted_test_accuracy {
                    print!(" corrupted_test_acc={c:.4}");
                }
                println!();
            }
            if let Some(c) = &report.comparison {
                println!("comparison: {}", report.dir.display());
                for m in &c.modes {
                    print!(
                        "  {:<10} median test {:.4}",
                        crate::experiment::mode_name(m.mode),
                        m.median_test_accuracy
                    );
                    if let (Some(c), Some(d)) = (m.median_corrupted_test_accuracy, m.median_drop) {
                        print!("  corrupted {c:.4}  drop {d:.4}");
                    }
                    println!();
                }
            }
        }
        Command::Fuse {
            action:
                FuseAction::Eval {
                    run,
                    sigma,
                    view,
                    corrupt_seed,
                },
        } => {
            let corruption = sigma.map(|sigma| Corruption {
                view: match view {
                    ViewArg::A => ViewSide::A,
                    ViewArg::B => ViewSide::B,
                },
                sigma,
                seed: corrupt_seed,
            });
            emit_json(&evaluate_run_dir(&run, corruption)?, None)?;
        }
        Command::Metrics {
            action:
                MetricsAction::Eval {
                    pred,
                    gt,
                    iou,
                    ap11,
                },
        } => {
            let images = load_detections(&pred, &gt)?;
            emit_json(&compute_metrics(&images, iou, ap11)?, None)?;
        }
        Command::Depthloss(a) => {
            let y = DepthImage::new(read_matrix(&a.a)?)?;
            let yhat = DepthImage::new(read_matrix(&a.b)?)?;
            let report = depth_loss_report(
                &y,
                &yhat,
                a.lambda,
                SsimParams::for_range(a.window, a.range),
            )?;
            emit_json(&report, None)?;
        }
        Command::Gradcheck(a) => {
            let worst = gradcheck_sweep(a.batches, a.seed, a.eps)?;
            println!("max relative error: {worst:e} over {} batches", a.batches);
            if !(worst <= a.tolerance) {
                eprintln!("gradient check failed: {worst:e} > {:e}", a.tolerance);
                return Ok(false);
            }
        }
        Command::Convert { input, output } => convert(&input, &output)?,
    }
    Ok(true)
}

/// Worst relative error of the correlation-loss gradient over `batches`
/// seeded batches; batch `i` uses N = [8, 16, 64][i % 3] and k = 1 + (i / 3) % 3.
pub fn gradcheck_sweep(batches: usize, seed: u64, reg_epsilon: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let n = [8, 16, 64][i % 3];
        let k = 1 + (i / 3) % 3;
        let (x, y) = correlated_batch(n, k, seed.wrapping_add(i as u64));
        worst = worst.max(check_corr_loss(&x, &y, reg_epsilon)?);
    }
    Ok(worst)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
