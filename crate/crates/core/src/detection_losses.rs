//! Detection losses over grid tensors: pose and confidence squared errors,
//! class cross-entropy, and the GIoU penalty, each with its gradient with
//! respect to the prediction tensor.

use serde::{Deserialize, Serialize};

use crate::box_geometry::{giou_3d, OrientedBox3D};
use crate::detection_codec::{TargetTensor, CLASS_OFFSET, POSE_CHANNELS, POSE_OFFSET};
use crate::error::{param, Result};
use crate::scalar::Scalar;

/// Floor applied to softmax probabilities inside the logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Step used for the per-cell numerical GIoU gradient.
const GIOU_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetLossWeights<T> {
    pub conf: T,
    pub pose: T,
    pub class: T,
    pub giou: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for DetLossWeights<T> {
    fn default() -> Self {
        Self {
            conf: T::one(),
            pose: T::one(),
            class: T::one(),
            giou: T::one(),
            epsilon: T::lit(1e-6),
        }
    }
}

impl<T: Scalar> DetLossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) {
            return Err(param("detection loss epsilon must be positive"));
        }
        for (name, w) in [("conf", self.conf), ("pose", self.pose), ("class", self.class), ("giou", self.giou)] {
            if !(w >= T::zero()) || !w.is_finite() {
                return Err(param(format!("detection loss weight {name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetLossReport<T> {
    pub conf: T,
    pub pose: T,
    pub class: T,
    pub giou: T,
    pub total: T,
    /// d(total)/d(prediction), in the tensor's layout.
    pub gradient: Vec<T>,
}

fn check<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>) -> Result<()> {
    pred.ensure_compatible(gt)
}

/// Squared pose error over ground-truth cells, normalized by the object count.
pub fn loss_pose<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T) -> Result<T> {
    pose_term(pred, gt, eps, None)
}

/// [`loss_pose`] and its gradient.
pub fn loss_pose_grad<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T) -> Result<(T, Vec<T>)> {
    let mut g = vec![T::zero(); pred.data.len()];
    let v = pose_term(pred, gt, eps, Some((&mut g, T::one())))?;
    Ok((v, g))
}

fn pose_term<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T, grad: Option<(&mut [T], T)>) -> Result<T> {
    check(pred, gt)?;
    let denom = T::from_usize_lossy(gt.occupied_count()) + eps;
    let stride = pred.stride();
    let mut sum = T::zero();
    let mut grad = grad;
    for i in 0..gt.cell_count() {
        if !gt.is_occupied(i) {
            continue;
        }
        for k in POSE_OFFSET..POSE_OFFSET + POSE_CHANNELS {
            let r = pred.cell(i)[k] - gt.cell(i)[k];
            sum += r * r;
            if let Some((g, scale)) = grad.as_mut() {
                g[i * stride + k] += *scale * T::two() * r / denom;
            }
        }
    }
    Ok(sum / denom)
}

/// Confidence squared error, with positive and negative cells normalized by
/// their own counts.
pub fn loss_conf<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T) -> Result<T> {
    conf_term(pred, gt, eps, None)
}

pub fn loss_conf_grad<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T) -> Result<(T, Vec<T>)> {
    let mut g = vec![T::zero(); pred.data.len()];
    let v = conf_term(pred, gt, eps, Some((&mut g, T::one())))?;
    Ok((v, g))
}

fn conf_term<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, eps: T, grad: Option<(&mut [T], T)>) -> Result<T> {
    check(pred, gt)?;
    let n_true = gt.occupied_count();
    let pos_denom = T::from_usize_lossy(n_true) + eps;
    let neg_denom = T::from_usize_lossy(gt.cell_count() - n_true) + eps;
    let stride = pred.stride();
    let (mut pos, mut neg) = (T::zero(), T::zero());
    let mut grad = grad;
    for i in 0..gt.cell_count() {
        let r = pred.confidence(i) - gt.confidence(i);
        let denom = if gt.is_occupied(i) {
            pos += r * r;
            pos_denom
        } else {
            neg += r * r;
            neg_denom
        };
        if let Some((g, scale)) = grad.as_mut() {
            g[i * stride] += *scale * T::two() * r / denom;
        }
    }
    Ok(pos / pos_denom + neg / neg_denom)
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Mean cross-entropy of softmaxed class logits over ground-truth cells.
pub fn loss_class<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>) -> Result<T> {
    class_term(pred, gt, None)
}

pub fn loss_class_grad<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>) -> Result<(T, Vec<T>)> {
    let mut g = vec![T::zero(); pred.data.len()];
    let v = class_term(pred, gt, Some((&mut g, T::one())))?;
    Ok((v, g))
}

fn class_term<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>, grad: Option<(&mut [T], T)>) -> Result<T> {
    check(pred, gt)?;
    let n = gt.occupied_count();
    if n == 0 || pred.class_count == 0 {
        return Ok(T::zero());
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let floor = T::lit(PROB_FLOOR);
    let stride = pred.stride();
    let mut total = T::zero();
    let mut grad = grad;
    for i in 0..gt.cell_count() {
        if !gt.is_occupied(i) {
            continue;
        }
        let p = softmax(&pred.cell(i)[CLASS_OFFSET..]);
        let y = &gt.cell(i)[CLASS_OFFSET..];
        let mut ce = T::zero();
        // Mass of targets whose probability is above the floor; floored
        // entries are constant and carry no gradient.
        let mut live_mass = T::zero();
        for (&pc, &yc) in p.iter().zip(y) {
            ce -= yc * pc.max(floor).ln();
            if pc > floor {
                live_mass += yc;
            }
        }
        total += ce;
        if let Some((g, scale)) = grad.as_mut() {
            for (j, &pj) in p.iter().enumerate() {
                let direct = if p[j] > floor { y[j] } else { T::zero() };
                g[i * stride + CLASS_OFFSET + j] += *scale * inv_n * (live_mass * pj - direct);
            }
        }
    }
    Ok(total * inv_n)
}

/// Mean of `(GIoU - 1)^2` over paired boxes.
pub fn loss_giou<T: Scalar>(pairs: &[(OrientedBox3D<T>, OrientedBox3D<T>)]) -> T {
    if pairs.is_empty() {
        return T::zero();
    }
    let sum: T = pairs
        .iter()
        .map(|(p, g)| {
            let r = giou_3d(p, g) - T::one();
            r * r
        })
        .sum();
    sum / T::from_usize_lossy(pairs.len())
}

/// [`loss_giou`] over the occupied cells of `gt`, boxes decoded per cell.
pub fn loss_giou_tensor<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>) -> Result<T> {
    check(pred, gt)?;
    let pairs: Vec<_> = (0..gt.cell_count())
        .filter(|&i| gt.is_occupied(i))
        .map(|i| (pred.cell_box(i), gt.cell_box(i)))
        .collect();
    Ok(loss_giou(&pairs))
}

/// GIoU term and its gradient; the per-cell box derivative is taken by
/// central differences over the eight pose channels.
pub fn loss_giou_grad<T: Scalar>(pred: &TargetTensor<T>, gt: &TargetTensor<T>) -> Result<(T, Vec<T>)> {
    check(pred, gt)?;
    let occupied: Vec<usize> = (0..gt.cell_count()).filter(|&i| gt.is_occupied(i)).collect();
    let mut g = vec![T::zero(); pred.data.len()];
    if occupied.is_empty() {
        return Ok((T::zero(), g));
    }
    let inv_n = T::one() / T::from_usize_lossy(occupied.len());
    let h = T::lit(GIOU_FD_STEP);
    let stride = pred.stride();
    let mut total = T::zero();
    let mut scratch = pred.clone();
    for &i in &occupied {
        let target = gt.cell_box(i);
        let term = |t: &TargetTensor<T>| {
            let r = giou_3d(&t.cell_box(i), &target) - T::one();
            r * r
        };
        total += term(pred);
        for k in POSE_OFFSET..POSE_OFFSET + POSE_CHANNELS {
            let idx = i * stride + k;
            let x = pred.data[idx];
            scratch.data[idx] = x + h;
            let plus = term(&scratch);
            scratch.data[idx] = x - h;
            let minus = term(&scratch);
            scratch.data[idx] = x;
            g[idx] = inv_n * (plus - minus) / (T::two() * h);
        }
    }
    Ok((total * inv_n, g))
}

/// Weighted detection loss with its gradient.
pub fn loss_detection_total<T: Scalar>(
    pred: &TargetTensor<T>,
    gt: &TargetTensor<T>,
    weights: &DetLossWeights<T>,
) -> Result<DetLossReport<T>> {
    weights.validate()?;
    check(pred, gt)?;
    let (conf, g_conf) = loss_conf_grad(pred, gt, weights.epsilon)?;
    let (pose, g_pose) = loss_pose_grad(pred, gt, weights.epsilon)?;
    let (class, g_class) = loss_class_grad(pred, gt)?;
    let (giou, g_giou) = if weights.giou > T::zero() {
        loss_giou_grad(pred, gt)?
    } else {
        (loss_giou_tensor(pred, gt)?, vec![T::zero(); pred.data.len()])
    };
    let total = weights.conf * conf + weights.pose * pose + weights.class * class + weights.giou * giou;
    let gradient = (0..pred.data.len())
        .map(|k| weights.conf * g_conf[k] + weights.pose * g_pose[k] + weights.class * g_class[k] + weights.giou * g_giou[k])
        .collect();
    Ok(DetLossReport {
        conf,
        pose,
        class,
        giou,
        total,
        gradient,
    })
}

/// Weighted total without the GIoU term's gradient (analytic part only).
pub fn loss_detection_analytic<T: Scalar>(
    pred: &TargetTensor<T>,
    gt: &TargetTensor<T>,
    weights: &DetLossWeights<T>,
) -> Result<(T, Vec<T>)> {
    let mut g = vec![T::zero(); pred.data.len()];
    let conf = conf_term(pred, gt, weights.epsilon, Some((&mut g, weights.conf)))?;
    let pose = pose_term(pred, gt, weights.epsilon, Some((&mut g, weights.pose)))?;
    let class = class_term(pred, gt, Some((&mut g, weights.class)))?;
    Ok((weights.conf * conf + weights.pose * pose + weights.class * class, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection_codec::encode_targets;
    use crate::voxel_grid::RoiConfig;

    fn gt_one() -> TargetTensor<f64> {
        let b = OrientedBox3D::new([35.0, 0.0, -1.0], [1.0, 1.0, 1.0], 0.0);
        encode_targets(&[(b, 0)], &RoiConfig::default(), 3).unwrap()
    }

    #[test]
    fn pose_examples() {
        let gt = gt_one();
        assert_eq!(loss_pose(&gt, &gt, 1e-6).unwrap(), 0.0);
        let empty = TargetTensor::<f64>::zeros(3);
        let mut pred = empty.clone();
        pred.data.iter_mut().for_each(|v| *v = 0.3);
        assert_eq!(loss_pose(&pred, &empty, 1e-6).unwrap(), 0.0);

        let mut pred = gt.clone();
        let i = gt.cell_index(8, 8);
        pred.cell_mut(i)[2] += 0.5;
        let v = loss_pose(&pred, &gt, 1e-6).unwrap();
        assert!((v - 0.25 / (1.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn conf_examples() {
        let gt = gt_one();
        assert_eq!(loss_conf(&gt, &gt, 1e-6).unwrap(), 0.0);

        let mut pred = gt.clone();
        pred.cell_mut(gt.cell_index(8, 8))[0] = 0.5;
        assert!((loss_conf(&pred, &gt, 1e-6).unwrap() - 0.25 / (1.0 + 1e-6)).abs() < 1e-15);

        let empty = TargetTensor::<f64>::zeros(3);
        let mut pred = empty.clone();
        pred.cell_mut(17)[0] = 1.0;
        assert!((loss_conf(&pred, &empty, 1e-6).unwrap() - 1.0 / (256.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn class_examples() {
        let gt = gt_one();
        let i = gt.cell_index(8, 8);
        let mut pred = gt.clone();
        pred.cell_mut(i)[9..].copy_from_slice(&[60.0, 0.0, 0.0]);
        assert!(loss_class(&pred, &gt).unwrap() < 1e-20);

        pred.cell_mut(i)[9..].copy_from_slice(&[0.7, 0.7, 0.7]);
        assert!((loss_class(&pred, &gt).unwrap() - 3f64.ln()).abs() < 1e-12);

        let empty = TargetTensor::<f64>::zeros(3);
        assert_eq!(loss_class(&pred, &empty).unwrap(), 0.0);
    }

    #[test]
    fn giou_examples() {
        let a = OrientedBox3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let b = OrientedBox3D::new([0.5, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(loss_giou(&[(a, a)]), 0.0);
        assert!((loss_giou(&[(b, a)]) - 4.0_f64 / 9.0).abs() < 1e-12);
        assert_eq!(loss_giou::<f64>(&[]), 0.0);

        let gt = gt_one();
        assert_eq!(loss_giou_tensor(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn total_examples() {
        let gt = gt_one();
        let w = DetLossWeights::default();
        let r = loss_detection_total(&gt, &gt, &w).unwrap();
        // One-hot logits still carry cross-entropy; every other term vanishes.
        assert_eq!((r.conf, r.pose, r.giou), (0.0, 0.0, 0.0));
        let ce = -(1.0_f64.exp() / (1.0_f64.exp() + (gt.class_count - 1) as f64)).ln();
        assert!((r.total - ce).abs() < 1e-12);
        let empty = TargetTensor::<f64>::zeros(gt.class_count);
        assert_eq!(loss_detection_total(&empty, &empty, &w).unwrap().total, 0.0);
        let stride = gt.stride();
        for (k, g) in r.gradient.iter().enumerate() {
            if k % stride < CLASS_OFFSET {
                assert!(g.abs() < 1e-9, "channel {k}: {g}");
            }
        }

        let mut pred = gt.clone();
        let i = gt.cell_index(8, 8);
        pred.cell_mut(i)[0] = 0.5;
        pred.cell_mut(i)[2] += 0.5;
        pred.cell_mut(i)[9..].copy_from_slice(&[0.7, 0.7, 0.7]);
        let only_conf = DetLossWeights {
            pose: 0.0,
            class: 0.0,
            giou: 0.0,
            ..w
        };
        let r = loss_detection_total(&pred, &gt, &only_conf).unwrap();
        assert_eq!(r.total, loss_conf(&pred, &gt, 1e-6).unwrap());

        let r = loss_detection_total(&pred, &gt, &w).unwrap();
        let expect = 0.25 / (1.0 + 1e-6) + 0.25 / (1.0 + 1e-6) + 3f64.ln() + r.giou;
        assert!((r.total - expect).abs() < 1e-12);
        assert!(r.giou > 0.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = TargetTensor::<f64>::zeros(3);
        let b = TargetTensor::<f64>::zeros(2);
        assert!(loss_pose(&a, &b, 1e-6).is_err());
        assert!(loss_conf(&a, &b, 1e-6).is_err());
        assert!(loss_class(&a, &b).is_err());
    }
}
