//! Non-cubic voxel density grid over a fixed LiDAR region of interest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kitti_io::PointCloud;
use crate::scalar::Scalar;

/// Axis-aligned region of interest in the LiDAR frame and its voxel counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig<T> {
    pub x_range: (T, T),
    pub y_range: (T, T),
    pub z_range: (T, T),
    pub dims: (usize, usize, usize),
}

impl<T: Scalar> Default for RoiConfig<T> {
    fn default() -> Self {
        Self {
            x_range: (T::zero(), T::lit(70.0)),
            y_range: (T::lit(-25.0), T::lit(25.0)),
            z_range: (T::lit(-2.5), T::lit(1.0)),
            dims: (256, 256, 16),
        }
    }
}

impl<T: Scalar> RoiConfig<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("x", self.x_range), ("y", self.y_range), ("z", self.z_range)] {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(param(format!("ROI {name} range must satisfy min < max, got ({lo}, {hi})")));
            }
        }
        let (nx, ny, nz) = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(param("ROI voxel dims must be at least 1 per axis"));
        }
        Ok(())
    }

    pub fn ranges(&self) -> [(T, T); 3] {
        [self.x_range, self.y_range, self.z_range]
    }

    pub fn dims_array(&self) -> [usize; 3] {
        [self.dims.0, self.dims.1, self.dims.2]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn contains(&self, p: [T; 3]) -> bool {
        self.ranges().iter().zip(p).all(|(&(lo, hi), v)| v >= lo && v < hi)
    }
}

/// Cell index of `v` on an axis `[lo, hi)` split into `n` cells.
pub(crate) fn axis_cell<T: Scalar>(v: T, lo: T, hi: T, n: usize) -> Option<usize> {
    if !(v >= lo && v < hi) {
        return None;
    }
    let width = (hi - lo) / T::from_usize_lossy(n);
    let i = ((v - lo) / width).floor().to_usize()?;
    // Rounding can push points just below `hi` onto `n`.
    Some(i.min(n - 1))
}

/// Voxel containing `point`, or `None` outside the half-open ROI.
pub fn voxel_index<T: Scalar>(point: [T; 3], config: &RoiConfig<T>) -> Option<(usize, usize, usize)> {
    let [(x0, x1), (y0, y1), (z0, z1)] = config.ranges();
    let (nx, ny, nz) = config.dims;
    Some((
        axis_cell(point[0], x0, x1, nx)?,
        axis_cell(point[1], y0, y1, ny)?,
        axis_cell(point[2], z0, z1, nz)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    #[default]
    Raw,
    Log1p,
    Binary,
}

impl std::str::FromStr for DensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "log1p" => Ok(Self::Log1p),
            "binary" => Ok(Self::Binary),
            other => Err(param(format!("unknown density mode {other:?}"))),
        }
    }
}

/// Per-voxel density, laid out `(ix, iy, iz)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid<T> {
    pub config: RoiConfig<T>,
    pub density: Vec<T>,
}

impl<T: Scalar> VoxelGrid<T> {
    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        flat(&self.config, (ix, iy, iz))
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> T {
        self.density[self.flat_index(ix, iy, iz)]
    }

    pub fn total(&self) -> T {
        self.density.iter().copied().sum()
    }
}

#[inline]
fn flat<T: Scalar>(config: &RoiConfig<T>, (ix, iy, iz): (usize, usize, usize)) -> usize {
    (ix * config.dims.1 + iy) * config.dims.2 + iz
}

fn counts_to_grid<T: Scalar>(config: &RoiConfig<T>, counts: Vec<u32>) -> VoxelGrid<T> {
    VoxelGrid {
        config: *config,
        density: counts.into_iter().map(|c| T::lit(c as f64)).collect(),
    }
}

/// Counts points per voxel; points outside the ROI are ignored.
pub fn voxelize<T: Scalar>(pc: &PointCloud<T>, config: &RoiConfig<T>) -> Result<VoxelGrid<T>> {
    config.validate()?;
    let mut counts = vec![0u32; config.voxel_count()];
    for p in &pc.points {
        if let Some(idx) = voxel_index(p.xyz(), config) {
            counts[flat(config, idx)] += 1;
        }
    }
    Ok(counts_to_grid(config, counts))
}

/// Parallel [`voxelize`]. Integer accumulation makes the result bitwise
/// identical to the sequential version for any thread count.
pub fn voxelize_par<T: Scalar>(pc: &PointCloud<T>, config: &RoiConfig<T>) -> Result<VoxelGrid<T>> {
    config.validate()?;
    let n = config.voxel_count();
    let counts = pc
        .points
        .par_chunks(1 << 14)
        .map(|chunk| {
            let mut local = vec![0u32; n];
            for p in chunk {
                if let Some(idx) = voxel_index(p.xyz(), config) {
                    local[flat(config, idx)] += 1;
                }
            }
            local
        })
        .reduce(
            || vec![0u32; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts_to_grid(config, counts))
}

pub fn normalize_density<T: Scalar>(grid: &VoxelGrid<T>, mode: DensityMode) -> VoxelGrid<T> {
    let f: fn(T) -> T = match mode {
        DensityMode::Raw => |v| v,
        DensityMode::Log1p => |v: T| v.ln_1p(),
        DensityMode::Binary => |v: T| if v > T::zero() { T::one() } else { T::zero() },
    };
    VoxelGrid {
        config: grid.config,
        density: grid.density.iter().map(|&v| f(v)).collect(),
    }
}

/// Scale of the ROI bounds stored in the grid file header (millimeters).
pub const GRID_BOUND_SCALE: f64 = 1000.0;

/// Number of `i32` words in the grid file header.
pub const GRID_HEADER_WORDS: usize = 9;

/// Serializes a grid as a header of nine little-endian `i32`
/// (`nx ny nz x_min x_max y_min y_max z_min z_max`, bounds in millimeters)
/// followed by `nx*ny*nz` little-endian `f32` densities.
pub fn write_grid<T: Scalar>(grid: &VoxelGrid<T>) -> Vec<u8> {
    let c = &grid.config;
    let mut out = Vec::with_capacity(4 * (GRID_HEADER_WORDS + grid.density.len()));
    let mm = |v: T| (v.as_f64() * GRID_BOUND_SCALE).round() as i32;
    let header = [
        c.dims.0 as i32,
        c.dims.1 as i32,
        c.dims.2 as i32,
        mm(c.x_range.0),
        mm(c.x_range.1),
        mm(c.y_range.0),
        mm(c.y_range.1),
        mm(c.z_range.0),
        mm(c.z_range.1),
    ];
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for &d in &grid.density {
        out.extend_from_slice(&(d.as_f64() as f32).to_le_bytes());
    }
    out
}

/// Inverse of [`write_grid`].
pub fn read_grid<T: Scalar>(bytes: &[u8]) -> Result<VoxelGrid<T>> {
    let header_len = 4 * GRID_HEADER_WORDS;
    if bytes.len() < header_len {
        return Err(Error::ByteOffset {
            offset: bytes.len(),
            reason: "truncated grid header".into(),
        });
    }
    let word = |i: usize| i32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    let dim = |i: usize| -> Result<usize> {
        usize::try_from(word(i)).map_err(|_| Error::ByteOffset {
            offset: 4 * i,
            reason: "negative grid dimension".into(),
        })
    };
    let bound = |i: usize| T::lit(word(i) as f64 / GRID_BOUND_SCALE);
    let config = RoiConfig {
        dims: (dim(0)?, dim(1)?, dim(2)?),
        x_range: (bound(3), bound(4)),
        y_range: (bound(5), bound(6)),
        z_range: (bound(7), bound(8)),
    };
    config.validate()?;
    let expected = header_len + 4 * config.voxel_count();
    if bytes.len() != expected {
        return Err(Error::ByteOffset {
            offset: bytes.len().min(expected),
            reason: format!("grid payload length {} != {}", bytes.len(), expected),
        });
    }
    let density = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(VoxelGrid { config, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti_io::LidarPoint;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, z: f64) -> LidarPoint<f64> {
        LidarPoint::new(x, y, z, 0.0)
    }

    #[test]
    fn index_examples() {
        let roi = RoiConfig::<f64>::default();
        assert_eq!(voxel_index([35.0, 0.0, -0.75], &roi), Some((128, 128, 8)));
        assert_eq!(voxel_index([0.0, -25.0, -2.5], &roi), Some((0, 0, 0)));
        assert_eq!(voxel_index([80.0, 0.0, 0.0], &roi), None);
        assert_eq!(voxel_index([70.0, 0.0, 0.0], &roi), None, "max bound is exclusive");
        assert_eq!(voxel_index([70.0 - 1e-12, 25.0 - 1e-12, 1.0 - 1e-12], &roi), Some((255, 255, 15)));
    }

    #[test]
    fn voxelize_examples() {
        let roi = RoiConfig::<f64>::default();
        let g = voxelize(&PointCloud::new(vec![pt(35.0, 0.0, -0.75)]), &roi).unwrap();
        let nonzero: Vec<_> = g.density.iter().enumerate().filter(|(_, &v)| v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(g.get(128, 128, 8), 1.0);

        let g = voxelize(&PointCloud::new(vec![pt(35.0, 0.0, -0.75); 10]), &roi).unwrap();
        assert_eq!(g.get(128, 128, 8), 10.0);
        assert_eq!(g.total(), 10.0);
    }

    #[test]
    fn normalize_examples() {
        let roi = RoiConfig::<f64> {
            dims: (2, 1, 1),
            ..Default::default()
        };
        let g = VoxelGrid {
            config: roi,
            density: vec![0.0, 9.0],
        };
        assert_eq!(normalize_density(&g, DensityMode::Raw), g);
        let l = normalize_density(&g, DensityMode::Log1p);
        assert_eq!(l.density[0], 0.0);
        assert!((l.density[1] - 10.0_f64.ln()).abs() < 1e-12);
        assert_eq!(normalize_density(&g, DensityMode::Binary).density, vec![0.0, 1.0]);
    }

    #[test]
    fn invalid_roi_rejected() {
        let roi = RoiConfig::<f64> {
            x_range: (1.0, 1.0),
            ..Default::default()
        };
        assert!(voxelize(&PointCloud::default(), &roi).is_err());
        let roi = RoiConfig::<f64> {
            dims: (0, 1, 1),
            ..Default::default()
        };
        assert!(roi.validate().is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let roi = RoiConfig::<f64> {
            dims: (4, 3, 2),
            ..Default::default()
        };
        let pc = PointCloud::new(vec![pt(1.0, 0.0, 0.0), pt(50.0, -20.0, -2.0), pt(50.0, -20.0, -2.0)]);
        let g = voxelize(&pc, &roi).unwrap();
        let bytes = write_grid(&g);
        assert_eq!(bytes.len(), 4 * (9 + 24));
        assert_eq!(&bytes[..4], &4i32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0i32.to_le_bytes());
        assert_eq!(&bytes[16..20], &70000i32.to_le_bytes());
        assert_eq!(read_grid::<f64>(&bytes).unwrap(), g);
        assert!(read_grid::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn locality_within_cell(ix in 0_usize..256, iy in 0_usize..256, iz in 0_usize..16,
                                fa in 0.01_f64..0.99, fb in 0.01_f64..0.99) {
            let roi = RoiConfig::<f64>::default();
            let at = |f: f64| [
                (ix as f64 + f) * 70.0 / 256.0,
                -25.0 + (iy as f64 + f) * 50.0 / 256.0,
                -2.5 + (iz as f64 + f) * 3.5 / 16.0,
            ];
            prop_assert_eq!(voxel_index(at(fa), &roi), Some((ix, iy, iz)));
            prop_assert_eq!(voxel_index(at(fb), &roi), Some((ix, iy, iz)));
        }

        #[test]
        fn counted_points_map_to_incremented_voxel(
            pts in proptest::collection::vec((-5.0_f64..75.0, -30.0_f64..30.0, -3.0_f64..1.5), 1..200)
        ) {
            let roi = RoiConfig::<f64>::default();
            let pc = PointCloud::new(pts.iter().map(|&(x, y, z)| pt(x, y, z)).collect());
            let g = voxelize(&pc, &roi).unwrap();
            for p in &pc.points {
                if let Some((a, b, c)) = voxel_index(p.xyz(), &roi) {
                    prop_assert!(g.get(a, b, c) >= 1.0);
                }
            }
            let inside = pc.points.iter().filter(|p| roi.contains(p.xyz())).count();
            prop_assert_eq!(g.total(), inside as f64);
            prop_assert_eq!(voxelize_par(&pc, &roi).unwrap(), g);
        }
    }
}
