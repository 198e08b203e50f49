//! Deterministic sample inputs for every subcommand.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vr3dense_core::box_geometry::lidar_box_to_label;
use vr3dense_core::detection_codec::encode_targets;
use vr3dense_core::kitti_io::{format_label_line, parse_calib, write_depth_pgm, write_point_cloud, write_ppm};
use vr3dense_core::synthetic::default_scene;
use vr3dense_core::{Calibration, ImageGrid, LidarPoint, OrientedBox3D, PointCloud, RoiConfig};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CALIB: &str = "\
P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P1: 7.215377e+02 0.000000e+00 6.095593e+02 -3.875744e+02 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
P3: 7.215377e+02 0.000000e+00 6.095593e+02 -3.395242e+02 0.000000e+00 7.215377e+02 1.728540e+02 2.199936e+00 0.000000e+00 0.000000e+00 1.000000e+00 2.729905e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
Tr_imu_to_velo: 9.999976e-01 7.553071e-04 -2.035826e-03 -8.086759e-01 -7.854027e-04 9.998898e-01 -1.482298e-02 3.195559e-01 2.024406e-03 1.482454e-02 9.998881e-01 -7.997231e-01
";

const FIXTURE_SEED: u64 = 20_200_601;

/// Objects of the fixture scene in the LiDAR frame: `(box, class id)`.
pub fn scene_objects() -> Vec<(OrientedBox3D, usize)> {
    vec![
        (OrientedBox3D::new([12.0, 2.5, -0.95], [4.2, 1.7, 1.5], 0.05), 0),
        (OrientedBox3D::new([24.5, -4.0, -0.9], [3.9, 1.6, 1.45], 1.52), 0),
        (OrientedBox3D::new([37.0, 6.0, -0.92], [4.5, 1.8, 1.6], -0.4), 0),
        (OrientedBox3D::new([9.0, -6.5, -0.85], [0.8, 0.6, 1.75], 2.0), 1),
        (OrientedBox3D::new([18.0, 9.0, -0.95], [1.8, 0.6, 1.7], -1.1), 2),
    ]
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Ground plane plus points on the surfaces of the scene objects, with a
/// share of points outside the default ROI.
pub fn scan(rng: &mut ChaCha8Rng) -> PointCloud {
    let mut pts = Vec::new();
    let mut push = |x: f64, y: f64, z: f64, i: f64| pts.push(LidarPoint::new(f32_round(x), f32_round(y), f32_round(z), f32_round(i)));
    for _ in 0..12_000 {
        let x = rng.gen_range(-10.0..90.0);
        let y = rng.gen_range(-35.0..35.0);
        push(x, y, -1.73 + rng.gen_range(-0.03..0.03), rng.gen_range(0.0..0.4));
    }
    for (b, _) in scene_objects() {
        let (s, c) = b.yaw.sin_cos();
        for _ in 0..1_500 {
            let face = rng.gen_range(0..3);
            let mut local = [
                rng.gen_range(-0.5..0.5) * b.size[0],
                rng.gen_range(-0.5..0.5) * b.size[1],
                rng.gen_range(-0.5..0.5) * b.size[2],
            ];
            local[face] = if rng.gen_bool(0.5) { 0.5 } else { -0.5 } * b.size[face];
            push(
                b.center[0] + c * local[0] - s * local[1],
                b.center[1] + s * local[0] + c * local[1],
                b.center[2] + local[2],
                rng.gen_range(0.2..1.0),
            );
        }
    }
    // Overhead clutter above the ROI.
    for _ in 0..500 {
        push(rng.gen_range(0.0..70.0), rng.gen_range(-25.0..25.0), rng.gen_range(1.2..4.0), 0.1);
    }
    PointCloud::new(pts)
}

pub fn labels(calib: &Calibration, class_names: &[String]) -> String {
    let mut out: Vec<String> = scene_objects()
        .iter()
        .map(|(b, c)| format_label_line(&lidar_box_to_label(b, &class_names[*c], calib, None)))
        .collect();
    out.push("DontCare -1 -1 -10.00 500.00 170.00 540.00 190.00 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00".into());
    out.join("\n") + "\n"
}

/// Perturbed copies of the scene objects with scores, plus one false positive.
pub fn detections(rng: &mut ChaCha8Rng, calib: &Calibration, class_names: &[String]) -> String {
    let mut out = Vec::new();
    for (b, c) in scene_objects() {
        let mut d = b;
        for k in 0..3 {
            d.center[k] += rng.gen_range(-0.08..0.08) * b.size[k];
        }
        d.yaw += rng.gen_range(-0.1..0.1);
        let score = rng.gen_range(0.55..0.99);
        out.push(format_label_line(&lidar_box_to_label(&d, &class_names[c], calib, Some(score))));
    }
    let fp = OrientedBox3D::new([30.0, -12.0, -0.9], [4.0, 1.7, 1.5], 0.3);
    out.push(format_label_line(&lidar_box_to_label(&fp, &class_names[0], calib, Some(0.6))));
    out.join("\n") + "\n"
}

/// Ground-truth tensor of the scene objects with noise on every channel.
pub fn noisy_prediction(rng: &mut ChaCha8Rng, roi: &RoiConfig, n_classes: usize) -> Result<Vec<u8>, CliError> {
    let mut t = encode_targets(&scene_objects(), roi, n_classes)?;
    for v in t.data.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    Ok(t.to_bytes())
}

/// Every third row/column of the ground-truth left depth, zero elsewhere.
pub fn sparse_depth(depth: &ImageGrid) -> ImageGrid {
    ImageGrid::from_fn(depth.height, depth.width, 1, |y, x, _| {
        if y % 3 == 0 && x % 3 == 0 {
            depth.get(y, x, 0)
        } else {
            0.0
        }
    })
}

/// Writes the fixture set into `dir`; returns the file names written.
pub fn write_all(dir: &Path) -> Result<Vec<&'static str>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let config = RunConfig::default();
    let calib: Calibration = parse_calib(CALIB)?;
    let mut rng = ChaCha8Rng::seed_from_u64(FIXTURE_SEED);
    let scene = default_scene::<f64>();
    let files: Vec<(&'static str, Vec<u8>)> = vec![
        ("scan.bin", write_point_cloud(&scan(&mut rng))),
        ("calib.txt", CALIB.as_bytes().to_vec()),
        ("labels.txt", labels(&calib, &config.class_names).into_bytes()),
        ("detections.txt", detections(&mut rng, &calib, &config.class_names).into_bytes()),
        (
            "gt.bin",
            encode_targets(&scene_objects(), &config.roi, config.class_names.len())?.to_bytes(),
        ),
        ("pred.bin", noisy_prediction(&mut rng, &config.roi, config.class_names.len())?),
        ("left.ppm", write_ppm(&scene.pair.left)?),
        ("right.ppm", write_ppm(&scene.pair.right)?),
        ("depth_left.pgm", write_depth_pgm(&scene.depth_left)?),
        ("depth_right.pgm", write_depth_pgm(&scene.depth_right)?),
        ("init_depth.pgm", write_depth_pgm(&scene.depth_left.map(|d| 1.5 * d))?),
        ("sparse_depth.pgm", write_depth_pgm(&sparse_depth(&scene.depth_left))?),
    ];
    let mut names = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        names.push(name);
    }
    Ok(names)
}
