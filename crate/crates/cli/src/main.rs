//! `vr3dense`: voxelization, target encoding, losses, gradient checks,
//! evaluation and toy depth fitting from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod fixtures;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vr3dense_core::depth_losses::EdgeVariant;
use vr3dense_core::voxel_grid::DensityMode;

use crate::commands::{DetFrame, DetSource, FitInputs, StereoInputs};
use crate::config::{Overrides, RunConfig, CONFIG_ENV};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vr3dense", version, about = "LiDAR detection and stereo depth kernels")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// raw, log1p or binary.
    #[arg(long, global = true)]
    density_mode: Option<DensityMode>,
    /// dx_dy or dx_dx.
    #[arg(long, global = true)]
    edge_variant: Option<EdgeVariant>,
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    #[arg(long, global = true)]
    conf_threshold: Option<f64>,
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
    /// Maximum step of the depth fitter.
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Steps of the depth fitter.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Random inputs per loss for gradcheck.
    #[arg(long, global = true)]
    inputs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bin a point cloud into the ROI voxel grid.
    Voxelize {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a point cloud into a sparse depth PGM.
    Project {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode KITTI labels into a target tensor.
    EncodeTargets {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate detection and/or depth losses.
    Losses {
        /// Predicted target tensor.
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        /// Ground-truth target tensor.
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        #[arg(long, requires_all = ["right", "depth_left", "depth_right", "focal", "baseline"])]
        left: Option<PathBuf>,
        #[arg(long, requires = "left")]
        right: Option<PathBuf>,
        #[arg(long, requires = "left")]
        depth_left: Option<PathBuf>,
        #[arg(long, requires = "left")]
        depth_right: Option<PathBuf>,
        #[arg(long, requires = "left")]
        focal: Option<f64>,
        #[arg(long, requires = "left")]
        baseline: Option<f64>,
        /// Edge parameters w1,b1,w2,b2.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.0, 0.0, 0.0, 0.0])]
        edge_params: Vec<f64>,
        /// Sparse LiDAR depth PGM for the supervised term.
        #[arg(long, requires = "left")]
        sparse: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AP at 40 recall positions per class, and mAP.
    EvalDetection {
        /// Ground-truth label file, one per frame.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Detection label file with scores, one per frame.
        #[arg(long, conflicts_with = "pred")]
        det: Vec<PathBuf>,
        /// Predicted target tensor, one per frame.
        #[arg(long)]
        pred: Vec<PathBuf>,
        /// Calibration, either one for all frames or one per frame.
        #[arg(long, required = true)]
        calib: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Depth metrics of a prediction against sparse ground truth.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-pixel depth to a stereo pair by gradient descent.
    FitDepth {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        focal: f64,
        #[arg(long)]
        baseline: f64,
        /// Initial depth PGM; constant `fit.init_depth` otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Ground-truth depth PGM for error reporting.
        #[arg(long)]
        gt_depth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_right: Option<PathBuf>,
        /// CSV of the loss per step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write the sample input set.
    MakeFixtures {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            density_mode: self.density_mode,
            edge_variant: self.edge_variant,
            nms_iou: self.nms_iou,
            conf_threshold: self.conf_threshold,
            iou_threshold: self.iou_threshold,
            lr: self.lr,
            steps: self.steps,
            inputs: self.inputs,
        }
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.resolve(&self.overrides())
    }
}

fn det_frames(gt: Vec<PathBuf>, det: Vec<PathBuf>, pred: Vec<PathBuf>, calib: Vec<PathBuf>) -> Result<Vec<DetFrame>, CliError> {
    let n = gt.len();
    let sources: Vec<DetSource> = match (det.is_empty(), pred.is_empty()) {
        (false, true) => det.into_iter().map(DetSource::Labels).collect(),
        (true, false) => pred.into_iter().map(DetSource::Tensor).collect(),
        _ => return Err(CliError::Usage("give either --det or --pred for every frame".into())),
    };
    if sources.len() != n {
        return Err(CliError::Usage(format!("{n} --gt files but {} detection files", sources.len())));
    }
    if calib.len() != 1 && calib.len() != n {
        return Err(CliError::Usage(format!("expected 1 or {n} --calib files, got {}", calib.len())));
    }
    Ok(gt
        .into_iter()
        .zip(sources)
        .enumerate()
        .map(|(k, (gt, detections))| DetFrame {
            gt,
            calib: calib[k.min(calib.len() - 1)].clone(),
            detections,
        })
        .collect())
}

/// Runs the command; the returned text goes to stdout after the header.
fn execute(cfg: &RunConfig, command: Command, out: &mut String) -> Result<(), CliError> {
    let body = match command {
        Command::Voxelize { scan, out } => commands::voxelize(cfg, &scan, &out)?,
        Command::Project { scan, calib, out } => commands::project(cfg, &scan, &calib, &out)?,
        Command::EncodeTargets { labels, calib, out } => commands::encode(cfg, &labels, &calib, &out)?,
        Command::Losses {
            pred,
            gt,
            left,
            right,
            depth_left,
            depth_right,
            focal,
            baseline,
            edge_params,
            sparse,
            epoch,
            out,
        } => {
            let stereo = match (left, right, depth_left, depth_right, focal, baseline) {
                (Some(left), Some(right), Some(depth_left), Some(depth_right), Some(focal), Some(baseline)) => Some(StereoInputs {
                    left,
                    right,
                    depth_left,
                    depth_right,
                    focal,
                    baseline,
                    params: [edge_params[0], edge_params[1], edge_params[2], edge_params[3]],
                    sparse,
                    epoch,
                }),
                _ => None,
            };
            let tensors = pred.as_deref().zip(gt.as_deref());
            commands::losses(cfg, tensors, stereo.as_ref(), out.as_deref())?
        }
        Command::Gradcheck { out: path } => {
            let (table, rows) = commands::gradcheck(cfg, path.as_deref())?;
            out.push_str(&table);
            let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.loss.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Check(format!("gradient check failed for {}", failed.join(", "))));
            }
            String::new()
        }
        Command::EvalDetection { gt, det, pred, calib, out } => {
            commands::eval_detection(cfg, &det_frames(gt, det, pred, calib)?, out.as_deref())?
        }
        Command::EvalDepth { pred, gt, out } => commands::eval_depth(cfg, &pred, &gt, out.as_deref())?,
        Command::FitDepth {
            left,
            right,
            focal,
            baseline,
            init,
            gt_depth,
            out,
            out_right,
            trace,
        } => commands::fit_depth(
            cfg,
            &FitInputs {
                left,
                right,
                focal,
                baseline,
                init,
                gt: gt_depth,
                out,
                out_right,
                trace,
            },
        )?,
        Command::MakeFixtures { out_dir } => {
            let names = fixtures::write_all(&out_dir)?;
            names.iter().map(|n| format!("wrote {n}\n")).collect()
        }
    };
    out.push_str(&body);
    Ok(())
}

fn run(cli: Cli) -> Result<String, (String, CliError)> {
    let cfg = cli.common.resolve().map_err(|e| (String::new(), e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err((String::new(), CliError::Usage("--threads must be at least 1".into())));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| (String::new(), CliError::Usage(e.to_string())))?;
    let mut out = cfg.header();
    match pool.install(|| execute(&cfg, cli.command, &mut out)) {
        Ok(()) => Ok(out),
        Err(e) => Err((out, e)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::from(2);
        }
    };
    let (stdout, err) = match run(cli) {
        Ok(s) => (s, None),
        Err((s, e)) => (s, Some(e)),
    };
    let mut lock = std::io::stdout().lock();
    let _ = lock.write_all(stdout.as_bytes());
    let _ = lock.flush();
    match err {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
