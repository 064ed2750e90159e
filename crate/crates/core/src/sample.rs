//! Bilinear sampling with border clamping and its analytic spatial gradient.

use crate::error::{dim_err, FgosError, Result};
use crate::grid::{norm_to_pixel, FeatureGrid, NormCoord};

/// Interpolation stencil along one axis: the two lattice indices, the
/// fractional weight of the upper index, and whether the coordinate was
/// clamped (in which case the derivative along this axis vanishes).
#[derive(Clone, Copy, Debug)]
struct Axis {
    lo: usize,
    hi: usize,
    frac: f64,
    clamped: bool,
    /// d(pixel)/d(normalized coordinate).
    scale: f64,
}

fn axis(v: f64, n: usize) -> Axis {
    axis_px(norm_to_pixel(v, n), n)
}

fn axis_px(p: f64, n: usize) -> Axis {
    if n <= 1 {
        return Axis {
            lo: 0,
            hi: 0,
            frac: 0.0,
            clamped: true,
            scale: 0.0,
        };
    }
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&p);
    let p = p.clamp(0.0, max);
    // the last cell owns the upper border so `hi` stays in range
    let lo = (p.floor() as usize).min(n - 2);
    Axis {
        lo,
        hi: lo + 1,
        frac: p - lo as f64,
        clamped,
        scale: max / 2.0,
    }
}

fn check(grid: &FeatureGrid) -> Result<()> {
    if grid.is_empty() {
        return dim_err("cannot sample an empty grid");
    }
    Ok(())
}

fn check_coord(c: NormCoord) -> Result<()> {
    if c.x.is_finite() && c.y.is_finite() {
        Ok(())
    } else {
        Err(FgosError::Input(format!("non-finite sample coordinate {c:?}")))
    }
}

#[inline]
fn sample_plane(plane: &[f64], width: usize, ax: &Axis, ay: &Axis) -> f64 {
    let v00 = plane[ay.lo * width + ax.lo];
    let v01 = plane[ay.lo * width + ax.hi];
    let v10 = plane[ay.hi * width + ax.lo];
    let v11 = plane[ay.hi * width + ax.hi];
    // convex form so frac = 0 or 1 returns a lattice value exactly
    let (fx, fy) = (ax.frac, ay.frac);
    let top = (1.0 - fx) * v00 + fx * v01;
    let bottom = (1.0 - fx) * v10 + fx * v11;
    (1.0 - fy) * top + fy * bottom
}

/// Samples every channel of `grid` at each coordinate. Returns one vector of
/// length `channels` per coordinate.
pub fn bilinear_sample(grid: &FeatureGrid, coords: &[NormCoord]) -> Result<Vec<Vec<f64>>> {
    check(grid)?;
    coords
        .iter()
        .map(|&c| {
            check_coord(c)?;
            Ok(sample_point(grid, c))
        })
        .collect()
}

/// Samples every channel at one coordinate without validation.
pub(crate) fn sample_point(grid: &FeatureGrid, c: NormCoord) -> Vec<f64> {
    let ax = axis(c.x, grid.width());
    let ay = axis(c.y, grid.height());
    (0..grid.channels())
        .map(|ch| sample_plane(grid.plane(ch), grid.width(), &ax, &ay))
        .collect()
}

/// Samples every channel at a continuous pixel position `(row, col)`,
/// clamped to the lattice. Integral positions reproduce cells exactly.
pub fn sample_pixel(grid: &FeatureGrid, row: f64, col: f64) -> Vec<f64> {
    let ax = axis_px(col, grid.width());
    let ay = axis_px(row, grid.height());
    (0..grid.channels())
        .map(|ch| sample_plane(grid.plane(ch), grid.width(), &ax, &ay))
        .collect()
}

/// Analytic derivative of the bilinear surface of channel 0 with respect to
/// the normalized coordinate, `(d/dx, d/dy)`.
pub fn bilinear_gradient(grid: &FeatureGrid, coord: NormCoord) -> Result<[f64; 2]> {
    check(grid)?;
    check_coord(coord)?;
    let w = grid.width();
    let plane = grid.plane(0);
    let ax = axis(coord.x, w);
    let ay = axis(coord.y, grid.height());
    let v00 = plane[ay.lo * w + ax.lo];
    let v01 = plane[ay.lo * w + ax.hi];
    let v10 = plane[ay.hi * w + ax.lo];
    let v11 = plane[ay.hi * w + ax.hi];
    let dx = if ax.clamped {
        0.0
    } else {
        ((1.0 - ay.frac) * (v01 - v00) + ay.frac * (v11 - v10)) * ax.scale
    };
    let dy = if ay.clamped {
        0.0
    } else {
        ((1.0 - ax.frac) * (v10 - v00) + ax.frac * (v11 - v01)) * ay.scale
    };
    Ok([dx, dy])
}

/// Corner-aligned bilinear resize of every channel to `height × width`.
pub fn resize_bilinear(grid: &FeatureGrid, height: usize, width: usize) -> Result<FeatureGrid> {
    check(grid)?;
    if height == 0 || width == 0 {
        return dim_err("resize target must be non-empty");
    }
    if grid.height() == height && grid.width() == width {
        return Ok(grid.clone());
    }
    let xs: Vec<Axis> = (0..width)
        .map(|c| axis(crate::grid::index_to_norm(c, width), grid.width()))
        .collect();
    let ys: Vec<Axis> = (0..height)
        .map(|r| axis(crate::grid::index_to_norm(r, height), grid.height()))
        .collect();
    let mut out = FeatureGrid::zeros(grid.channels(), height, width);
    for ch in 0..grid.channels() {
        let src = grid.plane(ch);
        let dst = out.plane_mut(ch);
        for (r, ay) in ys.iter().enumerate() {
            for (c, ax) in xs.iter().enumerate() {
                dst[r * width + c] = sample_plane(src, grid.width(), ax, ay);
            }
        }
    }
    Ok(out)
}
