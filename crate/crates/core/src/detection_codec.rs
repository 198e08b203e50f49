//! Grid target tensors: one object slot per bird's-eye-view cell holding
//! `(confidence, x, y, z, l, w, h, cos yaw, sin yaw, class scores...)`.

use serde::{Deserialize, Serialize};

use crate::box_geometry::{bev_iou, lidar_box_to_label, OrientedBox3D};
use crate::error::{param, Error, Result};
use crate::kitti_io::{format_label_line, Calibration};
use crate::scalar::Scalar;
use crate::voxel_grid::{axis_cell, RoiConfig};

/// Cells per BEV axis.
pub const GRID_CELLS: usize = 16;
/// Channels ahead of the class scores.
pub const POSE_OFFSET: usize = 1;
pub const POSE_CHANNELS: usize = 8;
pub const CLASS_OFFSET: usize = POSE_OFFSET + POSE_CHANNELS;

/// Smallest box extent produced when decoding non-positive predicted sizes.
const MIN_DECODED_SIZE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTensor<T> {
    /// Cells along x and y.
    pub cells: (usize, usize),
    pub class_count: usize,
    /// `cells.0 * cells.1` rows of `9 + class_count` values; cell `(ix, iy)`
    /// is row `ix * cells.1 + iy`.
    pub data: Vec<T>,
}

impl<T: Scalar> TargetTensor<T> {
    pub fn zeros(class_count: usize) -> Self {
        Self::zeros_with_cells((GRID_CELLS, GRID_CELLS), class_count)
    }

    pub fn zeros_with_cells(cells: (usize, usize), class_count: usize) -> Self {
        Self {
            cells,
            class_count,
            data: vec![T::zero(); cells.0 * cells.1 * (CLASS_OFFSET + class_count)],
        }
    }

    pub fn stride(&self) -> usize {
        CLASS_OFFSET + self.class_count
    }

    pub fn cell_count(&self) -> usize {
        self.cells.0 * self.cells.1
    }

    pub fn cell(&self, i: usize) -> &[T] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.cells.1 + iy
    }

    pub fn confidence(&self, i: usize) -> T {
        self.cell(i)[0]
    }

    /// Cells whose confidence is exactly 1 in a ground-truth tensor.
    pub fn is_occupied(&self, i: usize) -> bool {
        self.confidence(i) > T::half()
    }

    pub fn occupied_count(&self) -> usize {
        (0..self.cell_count()).filter(|&i| self.is_occupied(i)).count()
    }

    /// Box stored in cell `i`, with yaw recovered by `atan2`.
    pub fn cell_box(&self, i: usize) -> OrientedBox3D<T> {
        let c = self.cell(i);
        let p = &c[POSE_OFFSET..POSE_OFFSET + POSE_CHANNELS];
        let floor = T::lit(MIN_DECODED_SIZE);
        OrientedBox3D {
            center: [p[0], p[1], p[2]],
            size: [p[3].max(floor), p[4].max(floor), p[5].max(floor)],
            yaw: p[7].atan2(p[6]),
        }
    }

    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if self.cells != other.cells || self.class_count != other.class_count || self.data.len() != other.data.len() {
            return Err(param(format!(
                "tensor shape mismatch: {:?}x{} vs {:?}x{}",
                self.cells, self.class_count, other.cells, other.class_count
            )));
        }
        Ok(())
    }

    /// Little-endian dump: `u32` magic `VR3T`, `u32` cells x, cells y,
    /// class count, then `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [self.cells.0, self.cells.1, self.class_count] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
            return Err(Error::ByteOffset {
                offset: 0,
                reason: "missing tensor magic".into(),
            });
        }
        let word = |i: usize| u32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]) as usize;
        let mut t = Self::zeros_with_cells((word(1), word(2)), word(3));
        let payload = &bytes[16..];
        if payload.len() != 8 * t.data.len() {
            return Err(Error::ByteOffset {
                offset: 16 + payload.len().min(8 * t.data.len()),
                reason: format!("tensor payload has {} bytes, expected {}", payload.len(), 8 * t.data.len()),
            });
        }
        for (v, c) in t.data.iter_mut().zip(payload.chunks_exact(8)) {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            *v = T::lit(f64::from_le_bytes(b));
        }
        Ok(t)
    }
}

const TENSOR_MAGIC: &[u8; 4] = b"VR3T";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub boxed: OrientedBox3D<T>,
    pub confidence: T,
    pub class_id: usize,
    pub class_scores: Vec<T>,
}

/// BEV cell of a point on a `cells`-sized partition of the ROI.
pub fn bev_cell<T: Scalar>(x: T, y: T, roi: &RoiConfig<T>, cells: (usize, usize)) -> Option<(usize, usize)> {
    Some((
        axis_cell(x, roi.x_range.0, roi.x_range.1, cells.0)?,
        axis_cell(y, roi.y_range.0, roi.y_range.1, cells.1)?,
    ))
}

/// Encodes ground-truth boxes into a 16x16 target tensor.
pub fn encode_targets<T: Scalar>(boxes: &[(OrientedBox3D<T>, usize)], roi: &RoiConfig<T>, n_classes: usize) -> Result<TargetTensor<T>> {
    encode_targets_with_cells(boxes, roi, n_classes, (GRID_CELLS, GRID_CELLS))
}

/// [`encode_targets`] on an arbitrary cell partition.
///
/// Boxes whose center lies outside the ROI are dropped. When two boxes share
/// a cell the larger footprint wins; equal footprints keep the earlier box.
pub fn encode_targets_with_cells<T: Scalar>(
    boxes: &[(OrientedBox3D<T>, usize)],
    roi: &RoiConfig<T>,
    n_classes: usize,
    cells: (usize, usize),
) -> Result<TargetTensor<T>> {
    roi.validate()?;
    if let Some((_, bad)) = boxes.iter().find(|(_, c)| *c >= n_classes) {
        return Err(param(format!("class id {bad} out of range for {n_classes} classes")));
    }
    let mut t = TargetTensor::zeros_with_cells(cells, n_classes);
    let mut winner: Vec<Option<usize>> = vec![None; t.cell_count()];
    for (k, (b, _)) in boxes.iter().enumerate() {
        if !roi.contains(b.center) {
            continue;
        }
        let Some((ix, iy)) = bev_cell(b.center[0], b.center[1], roi, cells) else {
            continue;
        };
        let slot = &mut winner[t.cell_index(ix, iy)];
        match slot {
            Some(prev) if boxes[*prev].0.footprint_area() >= b.footprint_area() => {}
            _ => *slot = Some(k),
        }
    }
    for (i, w) in winner.into_iter().enumerate() {
        let Some(k) = w else { continue };
        let (b, class_id) = &boxes[k];
        let (s, c) = b.yaw.sin_cos();
        let cell = t.cell_mut(i);
        cell[0] = T::one();
        cell[1..4].copy_from_slice(&b.center);
        cell[4..7].copy_from_slice(&b.size);
        cell[7] = c;
        cell[8] = s;
        cell[CLASS_OFFSET + class_id] = T::one();
    }
    Ok(t)
}

/// Every cell with confidence `>= conf_threshold` becomes a detection.
pub fn decode_predictions<T: Scalar>(t: &TargetTensor<T>, roi: &RoiConfig<T>, conf_threshold: T) -> Result<Vec<Detection<T>>> {
    roi.validate()?;
    if !(conf_threshold >= T::zero() && conf_threshold <= T::one()) {
        return Err(param(format!("confidence threshold {conf_threshold} outside [0, 1]")));
    }
    let mut out = Vec::new();
    for i in 0..t.cell_count() {
        let cell = t.cell(i);
        if !(cell[0] >= conf_threshold) {
            continue;
        }
        let scores = cell[CLASS_OFFSET..].to_vec();
        let class_id = scores
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (k, &v)| if v > bv { (k, v) } else { (bi, bv) })
            .0;
        out.push(Detection {
            boxed: t.cell_box(i),
            confidence: cell[0].max(T::zero()).min(T::one()),
            class_id,
            class_scores: scores,
        });
    }
    Ok(out)
}

/// Greedy class-aware non-maximum suppression on BEV IoU.
pub fn nms_bev<T: Scalar>(dets: &[Detection<T>], iou_threshold: T) -> Result<Vec<Detection<T>>> {
    if !(iou_threshold >= T::zero() && iou_threshold <= T::one()) {
        return Err(param(format!("NMS threshold {iou_threshold} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps input order among equal confidences.
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<&Detection<T>> = Vec::new();
    for i in order {
        let d = &dets[i];
        if kept
            .iter()
            .filter(|k| k.class_id == d.class_id)
            .all(|k| bev_iou(&k.boxed, &d.boxed) < iou_threshold)
        {
            kept.push(d);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

/// Detections as KITTI label lines (camera frame) with the score field set.
pub fn detections_to_label_lines<T: Scalar>(dets: &[Detection<T>], class_names: &[String], calib: &Calibration<T>) -> Vec<String> {
    dets.iter()
        .map(|d| {
            let name = class_names.get(d.class_id).map(String::as_str).unwrap_or("Unknown");
            format_label_line(&lidar_box_to_label(&d.boxed, name, calib, Some(d.confidence)))
        })
        .collect()
}
