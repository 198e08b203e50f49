//! Dense grids and the scalar helpers shared by every loss: Huber penalty,
//! forward-difference image gradients, nearest-neighbour resizing and the
//! central-difference gradient oracle.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::scalar::Scalar;

/// Row-major `height x width x channels` grid of reals.
///
/// Photometric images hold values in `[0, 1]`; depth maps hold meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImageGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(param(format!(
                "grid data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    /// Builds a grid from `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(param(format!(
                "{what}: shape {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub(crate) fn ensure_same_extent(&self, other: &Self, what: &str) -> Result<()> {
        if self.height == other.height && self.width == other.width {
            Ok(())
        } else {
            Err(param(format!(
                "{what}: extent {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Channel mean, producing a single-channel grid.
    pub fn channel_mean(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let inv = T::one() / T::from_usize_lossy(self.channels);
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().copied().sum::<T>() * inv)
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Huber penalty: quadratic inside `[-delta, delta]`, linear outside.
pub fn huber<T: Scalar>(residual: T, delta: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(param(format!("huber delta must be positive, got {delta}")));
    }
    Ok(huber_value(residual, delta))
}

#[inline]
pub(crate) fn huber_value<T: Scalar>(r: T, delta: T) -> T {
    let a = r.abs();
    if a <= delta {
        T::half() * r * r
    } else {
        delta * (a - T::half() * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
#[inline]
pub fn huber_derivative<T: Scalar>(r: T, delta: T) -> T {
    r.max(-delta).min(delta)
}

/// Forward-difference gradients `(d/dx, d/dy)` per channel.
///
/// The last column of `d/dx` and the last row of `d/dy` are zero so the
/// outputs keep the input shape.
pub fn image_gradients<T: Scalar>(img: &ImageGrid<T>) -> Result<(ImageGrid<T>, ImageGrid<T>)> {
    if img.width < 2 || img.height < 2 {
        return Err(param(format!(
            "image gradients need at least 2x2 pixels, got {}x{}",
            img.height, img.width
        )));
    }
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut dx = ImageGrid::zeros(h, w, ch);
    let mut dy = ImageGrid::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = img.get(y, x, c);
                if x + 1 < w {
                    dx.set(y, x, c, img.get(y, x + 1, c) - v);
                }
                if y + 1 < h {
                    dy.set(y, x, c, img.get(y + 1, x, c) - v);
                }
            }
        }
    }
    Ok((dx, dy))
}

/// Nearest-neighbour resize using `floor(i * src / dst)` source indices.
pub fn resize_nearest<T: Scalar>(img: &ImageGrid<T>, new_h: usize, new_w: usize) -> Result<ImageGrid<T>> {
    if new_h == 0 || new_w == 0 {
        return Err(param("resize target dimensions must be at least 1"));
    }
    let ch = img.channels;
    Ok(ImageGrid::from_fn(new_h, new_w, ch, |y, x, c| {
        let sy = y * img.height / new_h;
        let sx = x * img.width / new_w;
        img.get(sy, sx, c)
    }))
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Coordinates are probed in order on a single thread so the result is
/// reproducible bit for bit.
pub fn finite_diff_gradient<T, F>(mut f: F, x: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(eps > T::zero()) {
        return Err(param(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle { coordinate: i });
        }
        grad.push((plus - minus) / (T::two() * eps));
    }
    Ok(grad)
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(T::one())
}

/// Largest [`relative_error`] over paired gradient vectors.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(T::zero(), T::max)
}
