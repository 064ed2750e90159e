//! Dense feature grids and normalized coordinates.
//!
//! A [`FeatureGrid`] stores `channels × height × width` values, channel-major
//! then row-major. Normalized coordinates are corner-aligned: `-1` maps to
//! index `0` and `+1` maps to index `n - 1` along each axis.

use crate::error::{dim_err, FgosError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Wraps an existing buffer. Fails if the length does not match the shape
    /// or any value is non-finite.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return dim_err(format!(
                "buffer of {} values does not match shape {channels}x{height}x{width}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(FgosError::Input(format!("non-finite value at flat index {bad}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a grid by evaluating `f(channel, row, col)` at every cell.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.index(c, r, col)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let i = self.index(c, r, col);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &FeatureGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            dim_err(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureGrid {
        FeatureGrid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_with(&self, other: &FeatureGrid, f: impl Fn(f64, f64) -> f64) -> Result<FeatureGrid> {
        self.ensure_same_shape(other, "zip_with")?;
        Ok(FeatureGrid {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn add(&self, other: &FeatureGrid) -> Result<FeatureGrid> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> FeatureGrid {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &FeatureGrid) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Mean over the spatial plane of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = self.plane_len().max(1) as f64;
        (0..self.channels)
            .map(|c| self.plane(c).iter().sum::<f64>() / n)
            .collect()
    }

    /// Copies a single channel out as a 1-channel grid.
    pub fn channel(&self, c: usize) -> FeatureGrid {
        FeatureGrid {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks grids with equal spatial size along the channel axis.
    pub fn concat_channels(grids: &[&FeatureGrid]) -> Result<FeatureGrid> {
        let first = grids
            .first()
            .ok_or_else(|| FgosError::Dimension("concat of zero grids".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for g in grids {
            if g.height != h || g.width != w {
                return dim_err(format!(
                    "concat: spatial size {}x{} does not match {h}x{w}",
                    g.height, g.width
                ));
            }
            channels += g.channels;
            data.extend_from_slice(&g.data);
        }
        Ok(FeatureGrid {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Left-right mirror of every channel.
    pub fn flip_horizontal(&self) -> FeatureGrid {
        FeatureGrid::from_fn(self.channels, self.height, self.width, |c, r, col| {
            self.get(c, r, self.width - 1 - col)
        })
    }

    /// 180 degree rotation of every channel.
    pub fn rotate_180(&self) -> FeatureGrid {
        FeatureGrid::from_fn(self.channels, self.height, self.width, |c, r, col| {
            self.get(c, self.height - 1 - r, self.width - 1 - col)
        })
    }
}

/// A point in normalized image space, `[-1, 1]²` once clamped.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NormCoord {
    pub x: f64,
    pub y: f64,
}

impl NormCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(-1.0, 1.0),
            y: self.y.clamp(-1.0, 1.0),
        }
    }

    pub fn distance(self, other: NormCoord) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Normalized coordinate of a lattice cell center.
    pub fn from_pixel(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            x: index_to_norm(col, width),
            y: index_to_norm(row, height),
        }
    }
}

/// Lattice index `i` on an axis of `n` cells to its normalized coordinate.
pub fn index_to_norm(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Normalized coordinate to continuous pixel position, unclamped.
pub fn norm_to_pixel(v: f64, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (v + 1.0) * (n - 1) as f64 / 2.0
    }
}
