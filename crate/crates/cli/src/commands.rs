use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use vr3dense_core::box_geometry::{label_to_lidar_box, project_points};
use vr3dense_core::certify::{format_table, run_certification, CertRow};
use vr3dense_core::depth_losses::{fit_depth_toy, loss_depth_sup, loss_depth_unsup, sup_weight};
use vr3dense_core::detection_codec::{decode_predictions, encode_targets, nms_bev};
use vr3dense_core::detection_losses::loss_detection_total;
use vr3dense_core::evaluation::{average_precision_40_frames, depth_metrics, sparse_samples, ClassedFrame, Frame};
use vr3dense_core::kitti_io::{parse_calib, parse_label_line, read_depth_pgm, read_image, read_point_cloud, write_depth_pgm};
use vr3dense_core::synthetic::{median_abs_rel, rmse};
use vr3dense_core::voxel_grid::{normalize_density, voxelize_par, write_grid};
use vr3dense_core::{
    Calibration, DepthMap, DepthMetrics, Detection, EdgeParams, ImageGrid, OrientedBox3D, PrCurve, ProjectedPoint, StereoPair, TargetTensor,
};

use crate::config::RunConfig;
use crate::error::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, text.as_bytes())
}

fn calib(path: &Path) -> Result<Calibration, CliError> {
    let c: Calibration = parse_calib(&read_text(path)?)?;
    c.validate()?;
    Ok(c)
}

pub fn voxelize(cfg: &RunConfig, scan: &Path, out: &Path) -> Result<String, CliError> {
    let cloud = read_point_cloud::<f64>(&read(scan)?)?;
    let grid = voxelize_par(&cloud, &cfg.roi)?;
    let in_roi = grid.total();
    let occupied = grid.density.iter().filter(|&&d| d > 0.0).count();
    let grid = normalize_density(&grid, cfg.density_mode);
    write(out, &write_grid(&grid))?;
    Ok(format!(
        "points {}\nin_roi {}\noccupied_voxels {}\ndensity_sum {}\n",
        cloud.len(),
        in_roi,
        occupied,
        grid.total()
    ))
}

pub fn project(cfg: &RunConfig, scan: &Path, calib_path: &Path, out: &Path) -> Result<String, CliError> {
    let cloud = read_point_cloud::<f64>(&read(scan)?)?;
    let calib = calib(calib_path)?;
    let (h, w) = cfg.image_size;
    let projected = project_points(&cloud, &calib, (h, w));
    let mut depth = ImageGrid::zeros(h, w, 1);
    for p in &projected {
        let (row, col) = p.pixel();
        depth.set(row, col, 0, p.depth);
    }
    write(out, &write_depth_pgm(&depth)?)?;
    Ok(format!("points {}\nprojected {}\n", cloud.len(), projected.len()))
}

/// Optional 16th field of a label line; the core parser drops it.
fn score_field(line: &str) -> Result<Option<f64>, CliError> {
    match line.split_whitespace().nth(15) {
        None => Ok(None),
        Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| {
            vr3dense_core::Error::Field {
                index: 16,
                reason: format!("not a finite score: {s:?}"),
            }
            .into()
        }),
    }
}

/// Labels of known classes as LiDAR boxes with their scores; other classes
/// are counted as skipped.
/// Box, class id and optional score.
type Labelled = (OrientedBox3D, usize, Option<f64>);

fn labelled_boxes(text: &str, calib: &Calibration, class_names: &[String]) -> Result<(Vec<Labelled>, usize), CliError> {
    let mut boxes = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let label = parse_label_line::<f64>(line)?;
        match class_names.iter().position(|c| *c == label.class_name) {
            Some(class) => boxes.push((label_to_lidar_box(&label, calib)?, class, score_field(line)?)),
            None => skipped += 1,
        }
    }
    Ok((boxes, skipped))
}

pub fn encode(cfg: &RunConfig, labels: &Path, calib_path: &Path, out: &Path) -> Result<String, CliError> {
    let calib = calib(calib_path)?;
    let (boxes, skipped) = labelled_boxes(&read_text(labels)?, &calib, &cfg.class_names)?;
    let pairs: Vec<(OrientedBox3D, usize)> = boxes.iter().map(|(b, c, _)| (*b, *c)).collect();
    let t = encode_targets(&pairs, &cfg.roi, cfg.class_names.len())?;
    write(out, &t.to_bytes())?;
    Ok(format!(
        "objects {}\nskipped {}\noccupied_cells {}\n",
        pairs.len(),
        skipped,
        t.occupied_count()
    ))
}

#[derive(Debug, Serialize)]
struct DetectionLossOut {
    conf: f64,
    pose: f64,
    class: f64,
    giou: f64,
    total: f64,
    gradient_norm: f64,
}

#[derive(Debug, Serialize)]
struct DepthLossOut {
    eps: f64,
    repr: f64,
    cons: f64,
    app: f64,
    total: f64,
    grad_left_norm: f64,
    grad_right_norm: f64,
    grad_params: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    sup: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct LossReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionLossOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<DepthLossOut>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inputs of the depth part of `losses`.
pub struct StereoInputs {
    pub left: PathBuf,
    pub right: PathBuf,
    pub depth_left: PathBuf,
    pub depth_right: PathBuf,
    pub focal: f64,
    pub baseline: f64,
    pub params: [f64; 4],
    pub sparse: Option<PathBuf>,
    pub epoch: usize,
}

fn load_pair(left: &Path, right: &Path, focal: f64, baseline: f64) -> Result<StereoPair, CliError> {
    let pair = StereoPair {
        left: read_image(&read(left)?)?,
        right: read_image(&read(right)?)?,
        focal,
        baseline,
    };
    pair.validate()?;
    Ok(pair)
}

/// Nonzero pixels of a sparse depth map as points at pixel centres.
fn sparse_points(map: &DepthMap) -> Vec<ProjectedPoint> {
    sparse_samples(map)
        .into_iter()
        .map(|s| ProjectedPoint {
            u: s.col as f64 + 0.5,
            v: s.row as f64 + 0.5,
            depth: s.depth,
        })
        .collect()
}

pub fn losses(
    cfg: &RunConfig,
    tensors: Option<(&Path, &Path)>,
    stereo: Option<&StereoInputs>,
    out: Option<&Path>,
) -> Result<String, CliError> {
    if tensors.is_none() && stereo.is_none() {
        return Err(CliError::Usage("losses needs --pred/--gt and/or the stereo inputs".into()));
    }
    let mut report = LossReport::default();
    let mut text = String::new();
    if let Some((pred, gt)) = tensors {
        let pred = TargetTensor::from_bytes(&read(pred)?)?;
        let gt = TargetTensor::from_bytes(&read(gt)?)?;
        let r = loss_detection_total(&pred, &gt, &cfg.det_weights)?;
        let d = DetectionLossOut {
            conf: r.conf,
            pose: r.pose,
            class: r.class,
            giou: r.giou,
            total: r.total,
            gradient_norm: norm(&r.gradient),
        };
        let _ = writeln!(
            text,
            "det_conf {}\ndet_pose {}\ndet_class {}\ndet_giou {}\ndet_total {}",
            d.conf, d.pose, d.class, d.giou, d.total
        );
        report.detection = Some(d);
    }
    if let Some(s) = stereo {
        let pair = load_pair(&s.left, &s.right, s.focal, s.baseline)?;
        let dl = read_depth_pgm(&read(&s.depth_left)?)?;
        let dr = read_depth_pgm(&read(&s.depth_right)?)?;
        let params = EdgeParams::from_array(s.params);
        let r = loss_depth_unsup(&pair, &dl, &dr, &params, &cfg.depth_weights)?;
        let sup = match &s.sparse {
            Some(p) => {
                let pts = sparse_points(&read_depth_pgm(&read(p)?)?);
                let w = &cfg.depth_weights;
                Some(loss_depth_sup(&dl, &pts, w.sup, s.epoch, w.sup_decay_rate)?)
            }
            None => None,
        };
        let _ = writeln!(
            text,
            "depth_eps {}\ndepth_repr {}\ndepth_cons {}\ndepth_app {}\ndepth_total {}",
            r.eps, r.repr, r.cons, r.app, r.total
        );
        if let Some(v) = sup {
            let _ = writeln!(
                text,
                "depth_sup {}\nsup_weight {}",
                v,
                sup_weight(cfg.depth_weights.sup, s.epoch, cfg.depth_weights.sup_decay_rate)
            );
        }
        report.depth = Some(DepthLossOut {
            eps: r.eps,
            repr: r.repr,
            cons: r.cons,
            app: r.app,
            total: r.total,
            grad_left_norm: norm(&r.grad_left),
            grad_right_norm: norm(&r.grad_right),
            grad_params: r.grad_params.to_array(),
            sup,
        });
    }
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(text)
}

pub fn gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<(String, Vec<CertRow>), CliError> {
    let rows = run_certification(cfg.seed, cfg.gradcheck_inputs)?;
    if let Some(path) = out {
        write_json(path, &rows)?;
    }
    Ok((format_table(&rows), rows))
}

/// One evaluation frame given on the command line.
pub struct DetFrame {
    pub gt: PathBuf,
    pub calib: PathBuf,
    pub detections: DetSource,
}

pub enum DetSource {
    /// KITTI label file with a score column.
    Labels(PathBuf),
    /// Predicted target tensor, decoded and suppressed with the config
    /// thresholds.
    Tensor(PathBuf),
}

#[derive(Debug, Serialize)]
struct ClassReport {
    name: String,
    ground_truth: usize,
    detections: usize,
    ap: f64,
    precision: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct DetectionReport {
    iou_threshold: f64,
    frames: usize,
    classes: Vec<ClassReport>,
    map: f64,
}

fn frame_detections(cfg: &RunConfig, f: &DetFrame, calib: &Calibration) -> Result<Vec<Detection>, CliError> {
    match &f.detections {
        DetSource::Labels(path) => {
            let (boxes, _) = labelled_boxes(&read_text(path)?, calib, &cfg.class_names)?;
            boxes
                .into_iter()
                .map(|(boxed, class_id, score)| {
                    let confidence = score.ok_or_else(|| CliError::Config(format!("{}: detection without a score", path.display())))?;
                    Ok(Detection {
                        boxed,
                        confidence,
                        class_id,
                        class_scores: Vec::new(),
                    })
                })
                .collect()
        }
        DetSource::Tensor(path) => {
            let t = TargetTensor::from_bytes(&read(path)?)?;
            if t.class_count != cfg.class_names.len() {
                return Err(CliError::Config(format!(
                    "{}: tensor has {} classes, config names {}",
                    path.display(),
                    t.class_count,
                    cfg.class_names.len()
                )));
            }
            let decoded = decode_predictions(&t, &cfg.roi, cfg.conf_threshold)?;
            Ok(nms_bev(&decoded, cfg.nms_iou)?)
        }
    }
}

pub fn eval_detection(cfg: &RunConfig, frames: &[DetFrame], out: Option<&Path>) -> Result<String, CliError> {
    let mut loaded: Vec<ClassedFrame<f64>> = Vec::new();
    for f in frames {
        let calib = calib(&f.calib)?;
        let (gts, _) = labelled_boxes(&read_text(&f.gt)?, &calib, &cfg.class_names)?;
        let dets = frame_detections(cfg, f, &calib)?;
        loaded.push((dets, gts.into_iter().map(|(b, c, _)| (b, c)).collect()));
    }
    let classes: Vec<usize> = (0..cfg.class_names.len())
        .filter(|c| loaded.iter().any(|(_, g)| g.iter().any(|(_, gc)| gc == c)))
        .collect();
    if classes.is_empty() {
        return Err(vr3dense_core::Error::Evaluation("no class has ground truth".into()).into());
    }
    let curves: Vec<Result<(usize, usize, usize, PrCurve), CliError>> = classes
        .par_iter()
        .map(|&c| {
            let per_frame: Vec<Frame<f64>> = loaded
                .iter()
                .map(|(d, g)| Frame {
                    detections: d.iter().filter(|x| x.class_id == c).cloned().collect(),
                    ground_truth: g.iter().filter(|(_, gc)| *gc == c).map(|(b, _)| *b).collect(),
                })
                .collect();
            let n_gt = per_frame.iter().map(|f| f.ground_truth.len()).sum();
            let n_det = per_frame.iter().map(|f| f.detections.len()).sum();
            Ok((c, n_gt, n_det, average_precision_40_frames(&per_frame, cfg.iou_threshold)?))
        })
        .collect();
    let mut by_class = BTreeMap::new();
    for r in curves {
        let (c, n_gt, n_det, curve) = r?;
        by_class.insert(c, (n_gt, n_det, curve));
    }
    let class_reports: Vec<ClassReport> = by_class
        .into_iter()
        .map(|(c, (ground_truth, detections, curve))| ClassReport {
            name: cfg.class_names[c].clone(),
            ground_truth,
            detections,
            ap: curve.ap,
            precision: curve.precision,
        })
        .collect();
    let map = class_reports.iter().map(|c| c.ap).sum::<f64>() / class_reports.len() as f64;
    let mut text = String::new();
    for c in &class_reports {
        let _ = writeln!(text, "ap_{} {}", c.name, c.ap);
    }
    let _ = writeln!(text, "map {map}");
    if let Some(path) = out {
        write_json(
            path,
            &DetectionReport {
                iou_threshold: cfg.iou_threshold,
                frames: frames.len(),
                classes: class_reports,
                map,
            },
        )?;
    }
    Ok(text)
}

pub fn eval_depth(cfg: &RunConfig, pred: &Path, gt: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let pred = read_depth_pgm::<f64>(&read(pred)?)?;
    let gt = read_depth_pgm::<f64>(&read(gt)?)?;
    if !pred.same_shape(&gt) {
        return Err(CliError::Config("prediction and ground truth differ in size".into()));
    }
    let m: DepthMetrics = depth_metrics(&pred, &sparse_samples(&gt), cfg.depth_range)?;
    if let Some(path) = out {
        write_json(path, &m)?;
    }
    Ok(m.to_key_value())
}

/// Inputs of `fit-depth`.
pub struct FitInputs {
    pub left: PathBuf,
    pub right: PathBuf,
    pub focal: f64,
    pub baseline: f64,
    pub init: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: PathBuf,
    pub out_right: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

pub fn fit_depth(cfg: &RunConfig, f: &FitInputs) -> Result<String, CliError> {
    let pair = load_pair(&f.left, &f.right, f.focal, f.baseline)?;
    let init = match &f.init {
        Some(p) => read_depth_pgm(&read(p)?)?,
        None => ImageGrid::filled(pair.left.height, pair.left.width, 1, cfg.fit.init_depth),
    };
    let r = fit_depth_toy(&pair, &init, &cfg.fit.weights, &EdgeParams::zero(), cfg.fit.steps, cfg.fit.lr)?;
    write(&f.out, &write_depth_pgm(&r.depth_left)?)?;
    if let Some(p) = &f.out_right {
        write(p, &write_depth_pgm(&r.depth_right)?)?;
    }
    if let Some(p) = &f.trace {
        let mut csv = String::from("step,loss\n");
        for (k, v) in r.trace.iter().enumerate() {
            let _ = writeln!(csv, "{k},{v}");
        }
        write(p, csv.as_bytes())?;
    }
    let mut text = format!(
        "steps {}\ninitial_loss {}\nfinal_loss {}\n",
        r.trace.len(),
        r.trace[0],
        r.trace[r.trace.len() - 1]
    );
    if let Some(p) = &f.gt {
        let gt = read_depth_pgm(&read(p)?)?;
        if !gt.same_shape(&r.depth_left) {
            return Err(CliError::Config("ground-truth depth differs in size from the images".into()));
        }
        let _ = writeln!(
            text,
            "initial_median_abs_rel {}\nfinal_median_abs_rel {}\ninitial_rmse {}\nfinal_rmse {}",
            median_abs_rel(&init, &gt),
            median_abs_rel(&r.depth_left, &gt),
            rmse(&init, &gt),
            rmse(&r.depth_left, &gt)
        );
    }
    Ok(text)
}
