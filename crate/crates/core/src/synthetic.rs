//! Procedural stereo scenes with known depth, built so that the warping
//! conventions of [`crate::depth_losses`] reconstruct each view exactly up
//! to interpolation error at the true depth.

use crate::depth_losses::{DepthMap, StereoPair};
use crate::numerics::ImageGrid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene<T> {
    pub pair: StereoPair<T>,
    pub depth_left: DepthMap<T>,
    pub depth_right: DepthMap<T>,
}

/// Smooth RGB texture in `[0, 1]`, continuous in `x`.
fn texture(x: f64, y: f64, c: usize) -> f64 {
    let c = c as f64;
    let tau = std::f64::consts::TAU;
    let v = 0.5
        + 0.17 * (tau * x / 17.0 + 1.3 * c + 0.45 * y).sin()
        + 0.13 * (tau * x / 11.0 - 0.9 * c + 0.2 * y).sin()
        + 0.08 * (tau * y / 9.0 + 0.7 * c).sin()
        + 0.06 * (tau * (x + 2.0 * y) / 23.0 + c).cos();
    v.clamp(0.0, 1.0)
}

/// Left-view depth in meters: a receding ground-like slope with a gentle
/// lateral undulation.
fn scene_depth(x: f64, y: f64, width: usize, height: usize) -> f64 {
    let tau = std::f64::consts::TAU;
    let rows = height.max(2) as f64 - 1.0;
    12.0 - 6.0 * (y / rows) + 0.8 * (tau * x / width as f64).sin()
}

/// A `height x width` textured stereo pair with its ground-truth depth maps.
///
/// The right image is the left texture sampled at `u + fb / D_l(u)`; the
/// right depth solves `d_r(u) = d_l(u - d_r(u))` so that resampling the right
/// image at `u - d_r(u)` reproduces the left view.
pub fn textured_stereo_scene<T: Scalar>(height: usize, width: usize, focal: f64, baseline: f64) -> SyntheticScene<T> {
    let fb = focal * baseline;
    let disp_l = |x: f64, y: f64| fb / scene_depth(x, y, width, height);
    let left = ImageGrid::from_fn(height, width, 3, |y, x, c| T::lit(texture(x as f64, y as f64, c)));
    let right = ImageGrid::from_fn(height, width, 3, |y, u, c| {
        let (u, y) = (u as f64, y as f64);
        T::lit(texture(u + disp_l(u, y), y, c))
    });
    let depth_left = ImageGrid::from_fn(height, width, 1, |y, x, _| T::lit(scene_depth(x as f64, y as f64, width, height)));
    let depth_right = ImageGrid::from_fn(height, width, 1, |y, u, _| {
        let (u, y) = (u as f64, y as f64);
        let mut d = disp_l(u, y);
        for _ in 0..100 {
            d = disp_l(u - d, y);
        }
        T::lit(fb / d)
    });
    SyntheticScene {
        pair: StereoPair {
            left,
            right,
            focal: T::lit(focal),
            baseline: T::lit(baseline),
        },
        depth_left,
        depth_right,
    }
}

/// The 64x32 scene used by the fitting checks (focal 60 px, baseline 0.54 m).
pub fn default_scene<T: Scalar>() -> SyntheticScene<T> {
    textured_stereo_scene(32, 64, 60.0, 0.54)
}

/// Median of `|pred - gt| / gt` over all pixels.
pub fn median_abs_rel<T: Scalar>(pred: &DepthMap<T>, gt: &DepthMap<T>) -> f64 {
    let mut e: Vec<f64> = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| ((p - g).abs() / g).as_f64())
        .collect();
    e.sort_by(f64::total_cmp);
    let n = e.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        e[n / 2]
    } else {
        0.5 * (e[n / 2 - 1] + e[n / 2])
    }
}

/// Root mean squared depth error over all pixels.
pub fn rmse<T: Scalar>(pred: &DepthMap<T>, gt: &DepthMap<T>) -> f64 {
    let n = pred.data.len().max(1) as f64;
    let s: f64 = pred.data.iter().zip(&gt.data).map(|(&p, &g)| (p - g).as_f64().powi(2)).sum();
    (s / n).sqrt()
}
