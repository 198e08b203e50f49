//! Yaw-oriented 3D boxes: corners, bird's-eye-view polygon clipping,
//! 3D IoU / GIoU, and the KITTI camera/LiDAR frame chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti_io::{Calibration, ObjectLabel, PointCloud};
use crate::mat::{self, Vec3};
use crate::scalar::{wrap_angle, Scalar};

/// Areas below this are treated as an empty intersection.
const AREA_EPS: f64 = 1e-12;

/// Cuboid in the LiDAR frame rotated by `yaw` about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D<T> {
    pub center: [T; 3],
    /// length (along heading), width, height.
    pub size: [T; 3],
    pub yaw: T,
}

impl<T: Scalar> OrientedBox3D<T> {
    pub fn new(center: [T; 3], size: [T; 3], yaw: T) -> Self {
        Self { center, size, yaw }
    }

    pub fn volume(&self) -> T {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn footprint_area(&self) -> T {
        self.size[0] * self.size[1]
    }

    pub fn is_valid(&self) -> bool {
        self.size.iter().all(|&s| s > T::zero() && s.is_finite()) && self.center.iter().all(|c| c.is_finite()) && self.yaw.is_finite()
    }

    /// Bird's-eye-view footprint, counter-clockwise.
    pub fn bev_polygon(&self) -> [[T; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size[0] * T::half();
        let hw = self.size[1] * T::half();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| [self.center[0] + c * lx - s * ly, self.center[1] + s * lx + c * ly])
    }

    pub fn z_interval(&self) -> (T, T) {
        let hh = self.size[2] * T::half();
        (self.center[2] - hh, self.center[2] + hh)
    }
}

/// Eight corners: the bottom face counter-clockwise seen from above
/// (front-left, rear-left, rear-right, front-right), then the top face in
/// the same order.
pub fn box_corners<T: Scalar>(b: &OrientedBox3D<T>) -> [[T; 3]; 8] {
    let poly = b.bev_polygon();
    let (z0, z1) = b.z_interval();
    let mut out = [[T::zero(); 3]; 8];
    for (i, p) in poly.iter().enumerate() {
        out[i] = [p[0], p[1], z0];
        out[i + 4] = [p[0], p[1], z1];
    }
    out
}

fn cross<T: Scalar>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    acc * T::half()
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`
/// (Sutherland-Hodgman).
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let dc = cross(e0, e1, cur);
            let dp = cross(e0, e1, prev);
            let cur_in = dc >= T::zero();
            let prev_in = dp >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(segment_hit(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_hit(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn segment_hit<T: Scalar>(p: [T; 2], q: [T; 2], dp: T, dq: T) -> [T; 2] {
    let t = dp / (dp - dq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Intersection area of two bird's-eye-view footprints.
pub fn bev_intersection_area<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let inter = clip_convex(&a.bev_polygon(), &b.bev_polygon());
    let area = polygon_area(&inter);
    if area > T::lit(AREA_EPS) {
        area
    } else {
        T::zero()
    }
}

pub fn bev_iou<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let inter = bev_intersection_area(a, b);
    let union = a.footprint_area() + b.footprint_area() - inter;
    if union > T::zero() {
        (inter / union).max(T::zero()).min(T::one())
    } else {
        T::zero()
    }
}

fn z_overlap<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let (a0, a1) = a.z_interval();
    let (b0, b1) = b.z_interval();
    (a1.min(b1) - a0.max(b0)).max(T::zero())
}

pub fn intersection_volume<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let dz = z_overlap(a, b);
    if dz == T::zero() {
        return T::zero();
    }
    bev_intersection_area(a, b) * dz
}

pub fn iou_3d<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union > T::zero() {
        (inter / union).max(T::zero()).min(T::one())
    } else {
        T::zero()
    }
}

/// Volume of the smallest box with heading `theta` (about z) holding every
/// corner of both boxes.
pub fn enclosing_volume_in_frame<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>, theta: T) -> T {
    let (s, c) = theta.sin_cos();
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for p in box_corners(a).iter().chain(box_corners(b).iter()) {
        let q = [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]];
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
}

/// Heading of the smallest enclosing box among the LiDAR axes and the two
/// box headings, with its volume.
pub fn enclosing_frame<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> (T, T) {
    let mut best = (T::zero(), T::infinity());
    for t in [T::zero(), a.yaw, b.yaw] {
        let v = enclosing_volume_in_frame(a, b, t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

/// Enclosing volume used by [`giou_3d`]; axis-aligned pairs get the plain
/// axis-aligned bound.
pub fn enclosing_volume<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    enclosing_frame(a, b).1
}

/// Generalized IoU with a box-shaped enclosing region, see [`enclosing_frame`].
pub fn giou_3d<T: Scalar>(a: &OrientedBox3D<T>, b: &OrientedBox3D<T>) -> T {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    let hull = enclosing_volume(a, b).max(union);
    if !(union > T::zero()) {
        return T::zero();
    }
    let iou = (inter / union).max(T::zero()).min(T::one());
    iou - (hull - union) / hull
}

/// `R0_rect * Tr_velo_to_cam * (p, 1)`.
pub fn lidar_to_camera<T: Scalar>(p: Vec3<T>, calib: &Calibration<T>) -> Vec3<T> {
    mat::mul3v(&calib.r0_rect, mat::mul34v(&calib.tr_velo_to_cam, p))
}

/// Inverse of [`lidar_to_camera`].
pub fn camera_to_lidar<T: Scalar>(p: Vec3<T>, calib: &Calibration<T>) -> Result<Vec3<T>> {
    let r0_inv = mat::inverse3(&calib.r0_rect).ok_or_else(|| Error::Calibration("R0_rect is singular".into()))?;
    let rot = mat::rotation_part(&calib.tr_velo_to_cam);
    let rot_inv = mat::inverse3(&rot).ok_or_else(|| Error::Calibration("Tr_velo_to_cam is singular".into()))?;
    let unrect = mat::mul3v(&r0_inv, p);
    let t = &calib.tr_velo_to_cam;
    Ok(mat::mul3v(
        &rot_inv,
        [unrect[0] - t[0][3], unrect[1] - t[1][3], unrect[2] - t[2][3]],
    ))
}

/// A LiDAR point projected into the left camera image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint<T> {
    pub u: T,
    pub v: T,
    /// Camera-frame z, meters.
    pub depth: T,
}

impl<T: Scalar> ProjectedPoint<T> {
    /// Integer pixel `(row, col)` the point falls in.
    pub fn pixel(&self) -> (usize, usize) {
        (self.v.floor().to_usize().unwrap_or(0), self.u.floor().to_usize().unwrap_or(0))
    }
}

/// Projects a cloud into a `(height, width)` image through `P2`.
///
/// Points behind the camera or outside the image are dropped. When several
/// points fall into the same pixel (by `floor(u), floor(v)`) the nearest
/// wins; the result is ordered by row then column.
pub fn project_points<T: Scalar>(pc: &PointCloud<T>, calib: &Calibration<T>, (height, width): (usize, usize)) -> Vec<ProjectedPoint<T>> {
    let mut best: Vec<Option<ProjectedPoint<T>>> = vec![None; height * width];
    let (h, w) = (T::from_usize_lossy(height), T::from_usize_lossy(width));
    for p in &pc.points {
        let cam = lidar_to_camera(p.xyz(), calib);
        if !(cam[2] > T::zero()) {
            continue;
        }
        let hom = mat::mul34v(&calib.p2, cam);
        if !(hom[2] > T::zero()) {
            continue;
        }
        let u = hom[0] / hom[2];
        let v = hom[1] / hom[2];
        if !(u >= T::zero() && u < w && v >= T::zero() && v < h) {
            continue;
        }
        let proj = ProjectedPoint { u, v, depth: cam[2] };
        let (row, col) = proj.pixel();
        let slot = &mut best[row * width + col];
        match slot {
            Some(prev) if prev.depth <= proj.depth => {}
            _ => *slot = Some(proj),
        }
    }
    best.into_iter().flatten().collect()
}

/// Converts a camera-frame KITTI label into a LiDAR-frame box centered on
/// its geometric center.
pub fn label_to_lidar_box<T: Scalar>(label: &ObjectLabel<T>, calib: &Calibration<T>) -> Result<OrientedBox3D<T>> {
    let [h, w, l] = label.dimensions;
    let bottom = camera_to_lidar(label.location, calib)?;
    Ok(OrientedBox3D {
        center: [bottom[0], bottom[1], bottom[2] + h * T::half()],
        size: [l, w, h],
        yaw: wrap_angle(-label.rotation_y - T::FRAC_PI_2()),
    })
}

/// Inverse of [`label_to_lidar_box`], filling the camera-frame fields of a
/// label. 2D box, alpha and truncation are left at zero.
pub fn lidar_box_to_label<T: Scalar>(b: &OrientedBox3D<T>, class_name: &str, calib: &Calibration<T>, score: Option<T>) -> ObjectLabel<T> {
    let [l, w, h] = b.size;
    let bottom = [b.center[0], b.center[1], b.center[2] - h * T::half()];
    ObjectLabel {
        class_name: class_name.to_string(),
        truncated: T::zero(),
        occluded: 0,
        alpha: T::zero(),
        bbox2d: [T::zero(); 4],
        dimensions: [h, w, l],
        location: lidar_to_camera(bottom, calib),
        rotation_y: wrap_angle(-b.yaw - T::FRAC_PI_2()),
        score,
    }
}
