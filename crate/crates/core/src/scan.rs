//! Scan orders: bijective serializations of an `H × W` lattice, plus the
//! locality diagnostics used to compare them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{dim_err, FgosError, Result};
use crate::grid::FeatureGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanKind {
    Raster,
    Snake,
    Horizontal,
    Vertical,
    Hilbert,
    ZOrder,
}

impl ScanKind {
    pub const ALL: [ScanKind; 6] = [
        ScanKind::Raster,
        ScanKind::Snake,
        ScanKind::Horizontal,
        ScanKind::Vertical,
        ScanKind::Hilbert,
        ScanKind::ZOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Raster => "raster",
            ScanKind::Snake => "snake",
            ScanKind::Horizontal => "horizontal",
            ScanKind::Vertical => "vertical",
            ScanKind::Hilbert => "hilbert",
            ScanKind::ZOrder => "zorder",
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanKind {
    type Err = FgosError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "raster" | "r" => ScanKind::Raster,
            "snake" | "s" | "bidir" => ScanKind::Snake,
            "horizontal" | "horz" | "h" => ScanKind::Horizontal,
            "vertical" | "vert" | "v" => ScanKind::Vertical,
            "hilbert" => ScanKind::Hilbert,
            "zorder" | "z-order" | "z" | "morton" => ScanKind::ZOrder,
            other => return Err(FgosError::Config(format!("unknown scan kind `{other}`"))),
        })
    }
}

/// A fixed visiting order over an `H × W` lattice.
///
/// `forward[r * W + c]` is the 1D position of cell `(r, c)`;
/// `inverse[i]` is the flat lattice index visited at step `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    kind: ScanKind,
    height: usize,
    width: usize,
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl ScanOrder {
    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    /// Visit sequence as `(row, col)` pairs.
    pub fn visits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.inverse
            .iter()
            .map(move |&i| (i as usize / self.width, i as usize % self.width))
    }

    /// Reverses the visiting sequence.
    pub fn reversed(&self) -> ScanOrder {
        let inverse: Vec<u32> = self.inverse.iter().rev().copied().collect();
        Self::from_inverse(self.kind, self.height, self.width, inverse)
    }

    fn from_inverse(kind: ScanKind, height: usize, width: usize, inverse: Vec<u32>) -> ScanOrder {
        let mut forward = vec![0u32; inverse.len()];
        for (step, &cell) in inverse.iter().enumerate() {
            forward[cell as usize] = step as u32;
        }
        ScanOrder {
            kind,
            height,
            width,
            forward,
            inverse,
        }
    }

    /// Shared, lazily built instance for `(kind, height, width)`.
    pub fn cached(kind: ScanKind, height: usize, width: usize) -> Result<Arc<ScanOrder>> {
        type Cache = Mutex<HashMap<(ScanKind, usize, usize), Arc<ScanOrder>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(hit) = cache.lock().expect("scan cache poisoned").get(&(kind, height, width)) {
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(build_scan_order(kind, height, width)?);
        cache
            .lock()
            .expect("scan cache poisoned")
            .entry((kind, height, width))
            .or_insert_with(|| Arc::clone(&built));
        Ok(built)
    }
}

/// Hilbert index `d` on a `n × n` grid (`n` a power of two) to `(x, y)`.
fn hilbert_d2xy(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

fn morton_decode(d: usize) -> (usize, usize) {
    let mut x = 0;
    let mut y = 0;
    for bit in 0..(usize::BITS as usize / 2) {
        x |= ((d >> (2 * bit)) & 1) << bit;
        y |= ((d >> (2 * bit + 1)) & 1) << bit;
    }
    (x, y)
}

/// Builds the visiting order of `kind` over `height × width`.
///
/// Hilbert and Z-order curves are generated on the smallest enclosing
/// power-of-two square and filtered to in-bounds cells, keeping visit order.
pub fn build_scan_order(kind: ScanKind, height: usize, width: usize) -> Result<ScanOrder> {
    if height == 0 || width == 0 {
        return dim_err(format!("scan order needs a non-empty lattice, got {height}x{width}"));
    }
    let n = height * width;
    if n > u32::MAX as usize {
        return dim_err("lattice too large for 32-bit scan indices");
    }
    let flat = |r: usize, c: usize| (r * width + c) as u32;
    let inverse: Vec<u32> = match kind {
        ScanKind::Raster | ScanKind::Horizontal => (0..n as u32).collect(),
        ScanKind::Vertical => (0..width)
            .flat_map(|c| (0..height).map(move |r| flat(r, c)))
            .collect(),
        ScanKind::Snake => (0..height)
            .flat_map(|r| {
                let cols: Box<dyn Iterator<Item = usize>> = if r % 2 == 0 {
                    Box::new(0..width)
                } else {
                    Box::new((0..width).rev())
                };
                cols.map(move |c| flat(r, c))
            })
            .collect(),
        ScanKind::Hilbert | ScanKind::ZOrder => {
            let side = height.max(width).next_power_of_two();
            (0..side * side)
                .map(|d| {
                    if kind == ScanKind::Hilbert {
                        hilbert_d2xy(side, d)
                    } else {
                        morton_decode(d)
                    }
                })
                .filter(|&(x, y)| y < height && x < width)
                .map(|(x, y)| flat(y, x))
                .collect()
        }
    };
    debug_assert_eq!(inverse.len(), n);
    Ok(ScanOrder::from_inverse(kind, height, width, inverse))
}

fn check_order(grid: &FeatureGrid, order: &ScanOrder) -> Result<()> {
    if grid.height() != order.height || grid.width() != order.width {
        return dim_err(format!(
            "grid is {}x{} but scan order is {}x{}",
            grid.height(),
            grid.width(),
            order.height,
            order.width
        ));
    }
    Ok(())
}

/// One 1D sequence per channel, in visiting order.
pub fn serialize(grid: &FeatureGrid, order: &ScanOrder) -> Result<Vec<Vec<f64>>> {
    check_order(grid, order)?;
    Ok((0..grid.channels())
        .map(|c| {
            let plane = grid.plane(c);
            order.inverse.iter().map(|&i| plane[i as usize]).collect()
        })
        .collect())
}

/// Exact inverse of [`serialize`].
pub fn deserialize(seqs: &[Vec<f64>], order: &ScanOrder) -> Result<FeatureGrid> {
    let mut out = FeatureGrid::zeros(seqs.len(), order.height, order.width);
    for (c, seq) in seqs.iter().enumerate() {
        if seq.len() != order.len() {
            return dim_err(format!(
                "sequence {c} has length {}, scan order covers {}",
                seq.len(),
                order.len()
            ));
        }
        let plane = out.plane_mut(c);
        for (&cell, &v) in order.inverse.iter().zip(seq) {
            plane[cell as usize] = v;
        }
    }
    Ok(out)
}

/// Token-major serialization: step `t` holds the channel vector of the cell
/// visited at `t`, laid out as `t * channels + c`.
pub fn serialize_tokens(grid: &FeatureGrid, order: &ScanOrder) -> Result<Vec<f64>> {
    check_order(grid, order)?;
    let ch = grid.channels();
    let plane = grid.plane_len();
    let data = grid.data();
    let mut out = vec![0.0; order.len() * ch];
    for (t, &cell) in order.inverse.iter().enumerate() {
        for c in 0..ch {
            out[t * ch + c] = data[c * plane + cell as usize];
        }
    }
    Ok(out)
}

/// Exact inverse of [`serialize_tokens`].
pub fn deserialize_tokens(tokens: &[f64], channels: usize, order: &ScanOrder) -> Result<FeatureGrid> {
    if tokens.len() != order.len() * channels {
        return dim_err(format!(
            "token buffer of {} values does not match {} steps x {channels} channels",
            tokens.len(),
            order.len()
        ));
    }
    let mut out = FeatureGrid::zeros(channels, order.height, order.width);
    let plane = order.len();
    let data = out.data_mut();
    for (t, &cell) in order.inverse.iter().enumerate() {
        for c in 0..channels {
            data[c * plane + cell as usize] = tokens[t * channels + c];
        }
    }
    Ok(out)
}

/// Sum and count of `|forward(u) - forward(v)|` over all 4-neighbor pairs.
pub fn locality_cost_exact(order: &ScanOrder) -> Result<(u64, u64)> {
    let (h, w) = (order.height, order.width);
    if h < 2 || w < 2 {
        return dim_err(format!("locality cost needs H, W >= 2, got {h}x{w}"));
    }
    let f = &order.forward;
    let mut sum = 0u64;
    let mut count = 0u64;
    for r in 0..h {
        for c in 0..w {
            let here = i64::from(f[r * w + c]);
            if c + 1 < w {
                sum += (here - i64::from(f[r * w + c + 1])).unsigned_abs();
                count += 1;
            }
            if r + 1 < h {
                sum += (here - i64::from(f[(r + 1) * w + c])).unsigned_abs();
                count += 1;
            }
        }
    }
    Ok((sum, count))
}

/// Mean 1D distance between 2D 4-neighbors.
pub fn locality_cost(order: &ScanOrder) -> Result<f64> {
    let (sum, count) = locality_cost_exact(order)?;
    Ok(sum as f64 / count as f64)
}

/// Gaps between consecutive structure pixels in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct GapStats {
    pub gaps: Vec<u32>,
    pub mean: f64,
    pub max: u32,
    /// Fraction of gaps equal to 1.
    pub unit_fraction: f64,
}

/// Structure pixels are cells of channel 0 with value `> 0.5`.
pub fn along_structure_gaps(mask: &FeatureGrid, order: &ScanOrder) -> Result<GapStats> {
    check_order(mask, order)?;
    let mut idx: Vec<u32> = mask
        .plane(0)
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(cell, _)| order.forward[cell])
        .collect();
    if idx.len() < 2 {
        return Err(FgosError::InsufficientStructure { found: idx.len() });
    }
    idx.sort_unstable();
    let gaps: Vec<u32> = idx.windows(2).map(|w| w[1] - w[0]).collect();
    let n = gaps.len() as f64;
    Ok(GapStats {
        mean: gaps.iter().map(|&g| f64::from(g)).sum::<f64>() / n,
        max: gaps.iter().copied().max().unwrap_or(0),
        unit_fraction: gaps.iter().filter(|&&g| g == 1).count() as f64 / n,
        gaps,
    })
}
