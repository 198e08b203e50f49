//! Oracles that recompute results the slow way, plus seeded generators for
//! random test instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vr3dense_core::box_geometry::enclosing_frame;
use vr3dense_core::evaluation::Frame;
use vr3dense_core::{Detection, LidarPoint, OrientedBox3D, RoiConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Point-in-box test in the box's own frame.
pub fn inside(b: &OrientedBox3D, p: [f64; 3]) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (p[0] - b.center[0], p[1] - b.center[1]);
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.size[0] / 2.0 && ly.abs() <= b.size[1] / 2.0 && (p[2] - b.center[2]).abs() <= b.size[2] / 2.0
}

/// Monte-Carlo `(iou, giou)` from `n^3` jittered stratified samples of the
/// enclosing box used by `giou_3d`.
pub fn mc_overlap(a: &OrientedBox3D, b: &OrientedBox3D, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (theta, _) = enclosing_frame(a, b);
    let (s, c) = theta.sin_cos();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for bx in [a, b] {
        for p in corners(bx) {
            let q = [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]];
            for k in 0..3 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
    }
    let step = [0, 1, 2].map(|k| (hi[k] - lo[k]) / n as f64);
    let (mut n_i, mut n_u) = (0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let q = [
                    lo[0] + (i as f64 + rng.gen::<f64>()) * step[0],
                    lo[1] + (j as f64 + rng.gen::<f64>()) * step[1],
                    lo[2] + (k as f64 + rng.gen::<f64>()) * step[2],
                ];
                let p = [c * q[0] - s * q[1], s * q[0] + c * q[1], q[2]];
                let (ia, ib) = (inside(a, p), inside(b, p));
                n_i += u64::from(ia && ib);
                n_u += u64::from(ia || ib);
            }
        }
    }
    let total = (n * n * n) as f64;
    if n_u == 0 {
        return (0.0, 0.0);
    }
    let iou = n_i as f64 / n_u as f64;
    (iou, iou - (total - n_u as f64) / total)
}

fn corners(b: &OrientedBox3D) -> Vec<[f64; 3]> {
    let (s, c) = b.yaw.sin_cos();
    let mut out = Vec::with_capacity(8);
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                let (lx, ly) = (sx * b.size[0], sy * b.size[1]);
                out.push([
                    b.center[0] + c * lx - s * ly,
                    b.center[1] + s * lx + c * ly,
                    b.center[2] + sz * b.size[2],
                ]);
            }
        }
    }
    out
}

/// A random box with its centre inside the default ROI.
pub fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox3D {
    OrientedBox3D::new(
        [rng.gen_range(2.0..68.0), rng.gen_range(-23.0..23.0), rng.gen_range(-2.0..0.5)],
        [rng.gen_range(0.5..5.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..2.5)],
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// A pair that usually overlaps: the second box is a perturbation of the first.
pub fn random_box_pair(rng: &mut ChaCha8Rng) -> (OrientedBox3D, OrientedBox3D) {
    let a = random_box(rng);
    let mut b = a;
    for k in 0..3 {
        b.center[k] += rng.gen_range(-0.6..0.6) * a.size[k];
        b.size[k] *= rng.gen_range(0.6..1.5);
    }
    b.yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    (a, b)
}

/// Single-frame AP instance with at most `max_boxes` ground-truth boxes and
/// detections; confidences are distinct so the ranking is unambiguous.
pub fn random_ap_instance(rng: &mut ChaCha8Rng, max_boxes: usize) -> (Vec<Detection>, Vec<OrientedBox3D>) {
    let n_gt = rng.gen_range(1..=max_boxes);
    let gts: Vec<OrientedBox3D> = (0..n_gt)
        .map(|k| {
            let mut b = random_box(rng);
            // Spread along x so ground-truth boxes rarely overlap each other.
            b.center[0] = 3.0 + 3.3 * k as f64;
            b
        })
        .collect();
    let n_det = rng.gen_range(0..=max_boxes);
    let mut confs: Vec<f64> = (0..n_det).map(|i| (i as f64 + 1.0) / (n_det as f64 + 1.0)).collect();
    confs.shuffle(rng);
    let dets = confs
        .into_iter()
        .map(|confidence| {
            let boxed = if rng.gen_bool(0.7) {
                let mut b = gts[rng.gen_range(0..n_gt)];
                for k in 0..3 {
                    b.center[k] += rng.gen_range(-0.3..0.3) * b.size[k];
                }
                b.yaw += rng.gen_range(-0.4..0.4);
                b
            } else {
                random_box(rng)
            };
            Detection {
                boxed,
                confidence,
                class_id: 0,
                class_scores: vec![1.0],
            }
        })
        .collect();
    (dets, gts)
}

/// AP over 40 recall positions by enumerating every confidence-ranked prefix
/// and re-running greedy matching on it from scratch.
pub fn ap40_bruteforce(frames: &[Frame<f64>], iou_threshold: f64) -> f64 {
    let n_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    let mut ranked: Vec<(usize, &Detection)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.detections.iter().map(move |d| (fi, d)))
        .collect();
    ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
    let mut points: Vec<(usize, usize)> = Vec::new();
    for len in 1..=ranked.len() {
        let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
        let mut tp = 0;
        for (fi, d) in &ranked[..len] {
            let gts = &frames[*fi].ground_truth;
            let mut pick: Option<usize> = None;
            let mut pick_iou = f64::NEG_INFINITY;
            for (gi, g) in gts.iter().enumerate() {
                let iou = vr3dense_core::box_geometry::iou_3d(&d.boxed, g);
                if !used[*fi][gi] && iou >= iou_threshold && iou > pick_iou {
                    pick = Some(gi);
                    pick_iou = iou;
                }
            }
            if let Some(gi) = pick {
                used[*fi][gi] = true;
                tp += 1;
            }
        }
        points.push((tp, len));
    }
    let mut sum = 0.0;
    for r in 1..=40 {
        let mut best = 0.0_f64;
        for &(tp, len) in &points {
            if tp * 40 >= r * n_gt {
                best = best.max(tp as f64 / len as f64);
            }
        }
        sum += best;
    }
    sum / 40.0
}

/// Uniform points over a box somewhat larger than the ROI, so that a share
/// falls outside it.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, roi: &RoiConfig) -> Vec<LidarPoint> {
    let pad = |(lo, hi): (f64, f64)| (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo));
    let (x, y, z) = (pad(roi.x_range), pad(roi.y_range), pad(roi.z_range));
    (0..n)
        .map(|_| {
            LidarPoint::new(
                rng.gen_range(x.0..x.1),
                rng.gen_range(y.0..y.1),
                rng.gen_range(z.0..z.1),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect()
}

/// Points inside the half-open ROI, counted directly.
pub fn count_in_roi(points: &[LidarPoint], roi: &RoiConfig) -> usize {
    let within = |v: f64, (lo, hi): (f64, f64)| lo <= v && v < hi;
    points
        .iter()
        .filter(|p| within(p.x, roi.x_range) && within(p.y, roi.y_range) && within(p.z, roi.z_range))
        .count()
}
