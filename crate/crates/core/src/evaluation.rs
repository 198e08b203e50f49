//! Depth error metrics on sparse LiDAR samples and detection average
//! precision sampled at 40 recall positions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::box_geometry::{iou_3d, OrientedBox3D};
use crate::depth_losses::DepthMap;
use crate::detection_codec::Detection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of recall positions used by [`average_precision_40`].
pub const RECALL_POSITIONS: usize = 40;

/// Floor applied to predictions before taking logs.
pub const MIN_PRED_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics<T> {
    pub abs_rel: T,
    pub sq_rel: T,
    pub rmse: T,
    pub rmse_log: T,
    pub delta1: T,
    pub delta2: T,
    pub delta3: T,
}

impl<T: Scalar> DepthMetrics<T> {
    /// `key value` lines in a fixed order.
    pub fn to_key_value(&self) -> String {
        [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ]
        .iter()
        .map(|(k, v)| format!("{k} {:.6}\n", v.as_f64()))
        .collect()
    }
}

/// A ground-truth depth at integer pixel `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSample<T> {
    pub row: usize,
    pub col: usize,
    pub depth: T,
}

/// Non-zero pixels of a sparse depth map as samples.
pub fn sparse_samples<T: Scalar>(gt: &DepthMap<T>) -> Vec<DepthSample<T>> {
    let mut out = Vec::new();
    for row in 0..gt.height {
        for col in 0..gt.width {
            let d = gt.get(row, col, 0);
            if d > T::zero() {
                out.push(DepthSample { row, col, depth: d });
            }
        }
    }
    out
}

/// Standard depth metrics over samples whose ground truth lies in
/// `[range.0, range.1]`; predictions are clamped to `[0.1, range.1]`.
pub fn depth_metrics<T: Scalar>(pred: &DepthMap<T>, gt: &[DepthSample<T>], range: (T, T)) -> Result<DepthMetrics<T>> {
    let floor = T::lit(MIN_PRED_DEPTH);
    let ceil = range.1.max(floor);
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut hits = [0usize; 3];
    let thresholds = [T::lit(1.25), T::lit(1.25 * 1.25), T::lit(1.25 * 1.25 * 1.25)];
    for s in gt {
        if !(s.depth >= range.0 && s.depth <= range.1) || !(s.depth > T::zero()) {
            continue;
        }
        if s.row >= pred.height || s.col >= pred.width {
            return Err(Error::Evaluation(format!("sample ({}, {}) outside prediction", s.row, s.col)));
        }
        let p = pred.get(s.row, s.col, 0).max(floor).min(ceil);
        let g = s.depth;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(&thresholds) {
            if ratio < *t {
                *h += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Evaluation("no ground-truth samples inside the depth range".into()));
    }
    let nn = T::from_usize_lossy(n);
    let frac = |k: usize| T::from_usize_lossy(k) / nn;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nn,
        sq_rel: sq_rel / nn,
        rmse: (sq / nn).sqrt(),
        rmse_log: (sq_log / nn).sqrt(),
        delta1: frac(hits[0]),
        delta2: frac(hits[1]),
        delta3: frac(hits[2]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve<T> {
    /// `k / 40` for `k = 1..=40`.
    pub recall_thresholds: Vec<T>,
    /// Interpolated precision at each threshold.
    pub precision: Vec<T>,
    pub ap: T,
}

/// Detections and ground truth of one frame. Matching never crosses frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame<T> {
    pub detections: Vec<Detection<T>>,
    pub ground_truth: Vec<OrientedBox3D<T>>,
}

/// AP over a single frame; see [`average_precision_40_frames`].
pub fn average_precision_40<T: Scalar>(dets: &[Detection<T>], gts: &[OrientedBox3D<T>], iou_threshold: T) -> Result<PrCurve<T>> {
    average_precision_40_frames(
        &[Frame {
            detections: dets.to_vec(),
            ground_truth: gts.to_vec(),
        }],
        iou_threshold,
    )
}

/// Average precision at 40 recall positions.
///
/// Detections are visited by descending confidence (stable for ties); each
/// claims the unmatched ground-truth box of its frame with the highest 3D
/// IoU at or above the threshold. Precision at recall `r` is the maximum
/// precision over all prefixes reaching recall `>= r`, or 0.
pub fn average_precision_40_frames<T: Scalar>(frames: &[Frame<T>], iou_threshold: T) -> Result<PrCurve<T>> {
    if !(iou_threshold > T::zero() && iou_threshold <= T::one()) {
        return Err(Error::Evaluation(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let n_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if n_gt == 0 {
        return Err(Error::Evaluation("average precision is undefined without ground truth".into()));
    }
    let mut order: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| (0..f.detections.len()).map(move |di| (fi, di)))
        .collect();
    order.sort_by(|a, b| {
        let ca = frames[a.0].detections[a.1].confidence;
        let cb = frames[b.0].detections[b.1].confidence;
        cb.partial_cmp(&ca).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut matched: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    // (true positives, detections seen) after every detection.
    let mut prefix = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &(fi, di)) in order.iter().enumerate() {
        let d = &frames[fi].detections[di];
        let mut best: Option<(usize, T)> = None;
        for (gi, g) in frames[fi].ground_truth.iter().enumerate() {
            if matched[fi][gi] {
                continue;
            }
            let iou = iou_3d(&d.boxed, g);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            matched[fi][gi] = true;
            tp += 1;
        }
        prefix.push((tp, k + 1));
    }
    Ok(interpolate_40(&prefix, n_gt))
}

fn interpolate_40<T: Scalar>(prefix: &[(usize, usize)], n_gt: usize) -> PrCurve<T> {
    let mut precision = Vec::with_capacity(RECALL_POSITIONS);
    let mut thresholds = Vec::with_capacity(RECALL_POSITIONS);
    for k in 1..=RECALL_POSITIONS {
        thresholds.push(T::from_usize_lossy(k) / T::from_usize_lossy(RECALL_POSITIONS));
        // recall >= k/40  <=>  tp * 40 >= k * n_gt, compared in integers.
        let best = prefix
            .iter()
            .filter(|&&(tp, _)| tp * RECALL_POSITIONS >= k * n_gt)
            .map(|&(tp, seen)| T::from_usize_lossy(tp) / T::from_usize_lossy(seen))
            .fold(T::zero(), T::max);
        precision.push(best);
    }
    let ap = precision.iter().copied().sum::<T>() / T::from_usize_lossy(RECALL_POSITIONS);
    PrCurve {
        recall_thresholds: thresholds,
        precision,
        ap,
    }
}

/// Ground-truth box with its class.
pub type ClassedBox<T> = (OrientedBox3D<T>, usize);

/// Detections and classed ground truth of one frame.
pub type ClassedFrame<T> = (Vec<Detection<T>>, Vec<ClassedBox<T>>);

/// Per-class AP over frames of classed ground truth.
pub fn per_class_ap<T: Scalar>(frames: &[ClassedFrame<T>], iou_threshold: T) -> Result<BTreeMap<usize, PrCurve<T>>> {
    let classes: std::collections::BTreeSet<usize> = frames.iter().flat_map(|(_, g)| g.iter().map(|(_, c)| *c)).collect();
    if classes.is_empty() {
        return Err(Error::Evaluation("no class has ground truth".into()));
    }
    let mut out = BTreeMap::new();
    for c in classes {
        let per_frame: Vec<Frame<T>> = frames
            .iter()
            .map(|(d, g)| Frame {
                detections: d.iter().filter(|x| x.class_id == c).cloned().collect(),
                ground_truth: g.iter().filter(|(_, gc)| *gc == c).map(|(b, _)| *b).collect(),
            })
            .collect();
        out.insert(c, average_precision_40_frames(&per_frame, iou_threshold)?);
    }
    Ok(out)
}

/// Mean AP over classes with at least one ground-truth box (single frame).
pub fn map_multiclass<T: Scalar>(dets: &[Detection<T>], gts: &[ClassedBox<T>], iou_threshold: T) -> Result<T> {
    map_multiclass_frames(&[(dets.to_vec(), gts.to_vec())], iou_threshold)
}

pub fn map_multiclass_frames<T: Scalar>(frames: &[ClassedFrame<T>], iou_threshold: T) -> Result<T> {
    let per = per_class_ap(frames, iou_threshold)?;
    Ok(per.values().map(|c| c.ap).sum::<T>() / T::from_usize_lossy(per.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ImageGrid;

    fn cube(x: f64) -> OrientedBox3D<f64> {
        OrientedBox3D::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0)
    }

    fn det(x: f64, conf: f64, class_id: usize) -> Detection<f64> {
        Detection {
            boxed: cube(x),
            confidence: conf,
            class_id,
            class_scores: vec![],
        }
    }

    #[test]
    fn depth_metric_examples() {
        let pred = ImageGrid::filled(2, 2, 1, 12.0_f64);
        let gt = [DepthSample {
            row: 1,
            col: 1,
            depth: 10.0,
        }];
        let m = depth_metrics(&pred, &gt, (0.0, 80.0)).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert!((m.sq_rel - 0.4).abs() < 1e-12);
        assert!((m.rmse - 2.0).abs() < 1e-12);
        assert!((m.rmse_log - 1.2f64.ln()).abs() < 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));

        let perfect = ImageGrid::filled(2, 2, 1, 10.0_f64);
        let m = depth_metrics(&perfect, &gt, (0.0, 80.0)).unwrap();
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3),
            (0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
        );

        let far = [
            gt[0],
            DepthSample {
                row: 0,
                col: 0,
                depth: 60.0,
            },
        ];
        let m = depth_metrics(&pred, &far, (0.0, 50.0)).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert!(depth_metrics(&pred, &far[1..], (0.0, 50.0)).is_err());
    }

    #[test]
    fn ap_examples() {
        let gts = [cube(0.0), cube(10.0)];
        let perfect = [det(0.0, 0.9, 0), det(10.0, 0.8, 0)];
        assert_eq!(average_precision_40(&perfect, &gts, 0.7).unwrap().ap, 1.0);
        assert_eq!(average_precision_40(&[], &gts, 0.7).unwrap().ap, 0.0);

        let mixed = [det(0.0, 0.9, 0), det(30.0, 0.8, 0), det(10.0, 0.7, 0)];
        let c = average_precision_40(&mixed, &gts, 0.5).unwrap();
        assert!((c.ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(c.precision[..20].iter().all(|&p| p == 1.0));
        assert!(c.precision[20..].iter().all(|&p| (p - 2.0 / 3.0).abs() < 1e-15));
        assert!(c.precision.windows(2).all(|w| w[0] >= w[1]));

        assert!(average_precision_40(&mixed, &[], 0.5).is_err());
        assert!(average_precision_40(&mixed, &gts, 0.0).is_err());
    }

    #[test]
    fn map_examples() {
        let gts = [(cube(0.0), 0), (cube(10.0), 1)];
        let dets = [det(0.0, 0.9, 0)];
        let single = map_multiclass(&dets, &gts[..1], 0.5).unwrap();
        assert_eq!(single, average_precision_40(&dets, &[cube(0.0)], 0.5).unwrap().ap);
        assert_eq!(map_multiclass(&dets, &gts, 0.5).unwrap(), 0.5);
        assert!(map_multiclass::<f64>(&dets, &[], 0.5).is_err());
    }

    #[test]
    fn matching_stays_within_frame() {
        let frames = vec![
            Frame {
                detections: vec![det(0.0, 0.9, 0)],
                ground_truth: vec![],
            },
            Frame {
                detections: vec![],
                ground_truth: vec![cube(0.0)],
            },
        ];
        assert_eq!(average_precision_40_frames(&frames, 0.5).unwrap().ap, 0.0);
    }
}
