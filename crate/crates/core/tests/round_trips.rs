use rand::Rng;
use vr3dense_core::depth_losses::{warp_image, WarpDirection};
use vr3dense_core::detection_codec::{decode_predictions, encode_targets, GRID_CELLS};
use vr3dense_core::kitti_io::{read_image, read_point_cloud, write_pgm, write_point_cloud, write_ppm};
use vr3dense_core::{ImageGrid, OrientedBox3D, PointCloud, RoiConfig};
use vr3dense_testkit::{random_points, rng};

#[test]
fn zero_disparity_warp_is_identity() {
    let mut r = rng(1);
    let src = ImageGrid::from_fn(9, 13, 3, |_, _, _| r.gen::<f64>());
    for dir in [WarpDirection::LeftToRight, WarpDirection::RightToLeft] {
        let (img, mask) = warp_image(&src, &ImageGrid::zeros(9, 13, 1), dir).unwrap();
        assert_eq!(img.data, src.data);
        assert!(mask.data.iter().all(|&m| m == 1.0));
    }
}

fn wrap_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

#[test]
fn decode_inverts_encode_on_single_box_cells() {
    let roi = RoiConfig::default();
    let mut r = rng(17);
    let (cw, ch) = (70.0 / GRID_CELLS as f64, 50.0 / GRID_CELLS as f64);
    for _ in 0..100 {
        let mut cells: Vec<usize> = (0..GRID_CELLS * GRID_CELLS).collect();
        rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut r);
        let n = r.gen_range(1..30);
        let boxes: Vec<(OrientedBox3D, usize)> = cells[..n]
            .iter()
            .map(|&c| {
                let (ix, iy) = (c / GRID_CELLS, c % GRID_CELLS);
                let b = OrientedBox3D::new(
                    [
                        (ix as f64 + r.gen_range(0.05..0.95)) * cw,
                        -25.0 + (iy as f64 + r.gen_range(0.05..0.95)) * ch,
                        r.gen_range(-2.4..0.9),
                    ],
                    [r.gen_range(1.0..5.0), r.gen_range(0.5..2.5), r.gen_range(0.5..2.5)],
                    r.gen_range(-3.1..3.1),
                );
                (b, r.gen_range(0..3))
            })
            .collect();
        let t = encode_targets(&boxes, &roi, 3).unwrap();
        let dets = decode_predictions(&t, &roi, 0.5).unwrap();
        assert_eq!(dets.len(), n);
        for (b, class) in &boxes {
            let d = dets
                .iter()
                .find(|d| (0..3).all(|k| (d.boxed.center[k] - b.center[k]).abs() < 1e-9))
                .expect("decoded box");
            assert_eq!(d.class_id, *class);
            for k in 0..3 {
                assert!((d.boxed.size[k] - b.size[k]).abs() < 1e-9);
            }
            assert!(wrap_diff(d.boxed.yaw, b.yaw) < 1e-9);
        }
    }
}

#[test]
fn image_and_cloud_io_round_trip_bitwise() {
    let mut r = rng(3);
    let rgb = ImageGrid::from_fn(7, 11, 3, |_, _, _| f64::from(r.gen_range(0u8..=255)) / 255.0);
    let ppm = write_ppm(&rgb).unwrap();
    let back = read_image::<f64>(&ppm).unwrap();
    assert_eq!(back, rgb);
    assert_eq!(write_ppm(&back).unwrap(), ppm);

    for (bits, max) in [(false, 255u32), (true, 65535)] {
        let gray = ImageGrid::from_fn(5, 6, 1, |_, _, _| f64::from(r.gen_range(0..=max)) / f64::from(max));
        let pgm = write_pgm(&gray, bits).unwrap();
        let back = read_image::<f64>(&pgm).unwrap();
        assert_eq!(back, gray);
        assert_eq!(write_pgm(&back, bits).unwrap(), pgm);
    }

    let pts: Vec<_> = random_points(&mut r, 1000, &RoiConfig::default())
        .into_iter()
        .map(|p| vr3dense_core::LidarPoint::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64, p.intensity as f32 as f64))
        .collect();
    let cloud = PointCloud::new(pts);
    let bytes = write_point_cloud(&cloud);
    let back = read_point_cloud::<f64>(&bytes).unwrap();
    assert_eq!(back, cloud);
    assert_eq!(write_point_cloud(&back), bytes);
}
