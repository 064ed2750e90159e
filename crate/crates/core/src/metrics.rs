//! Region metrics, dataset-scale F1 and skeleton-based connectivity scores
//! for binary thin-structure segmentation.

use crate::error::{dim_err, FgosError, Result};
use crate::grid::FeatureGrid;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return dim_err(format!("{} bits for a {height}x{width} mask", bits.len()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { height, width, bits }
    }

    /// Foreground wherever channel 0 is `>= threshold`.
    pub fn from_grid(grid: &FeatureGrid, threshold: f64) -> Self {
        Self {
            height: grid.height(),
            width: grid.width(),
            bits: grid.plane(0).iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// `1.0` for foreground, `0.0` elsewhere.
    pub fn to_grid(&self) -> FeatureGrid {
        FeatureGrid::from_vec(1, self.height, self.width, self.bits.iter().map(|&b| f64::from(u8::from(b))).collect())
            .expect("shape matches")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..*self
        }
    }

    /// `|self ∩ other|`.
    pub fn overlap(&self, other: &BinaryMask) -> Result<usize> {
        self.check_shape(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    /// Every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = self.shape();
        // separable max filter
        let mut rows = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(w - 1);
                rows[r * w + c] = (lo..=hi).any(|k| self.bits[r * w + k]);
            }
        }
        Self::from_fn(h, w, |r, c| {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(h - 1);
            (lo..=hi).any(|k| rows[k * w + c])
        })
    }

    /// Number of 8-connected foreground components.
    pub fn component_count(&self) -> usize {
        let (h, w) = self.shape();
        let labels = label_components(&self.bits, h, w);
        labels.iter().copied().max().map_or(0, |m| m as usize)
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!("mask shapes {:?} and {:?} differ", self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// 8-connected labels, `0` for background and `1..` for components in
/// raster order of first appearance.
fn label_components(bits: &[bool], h: usize, w: usize) -> Vec<u32> {
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if bits[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    labels
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Pixelwise counts with `pred >= threshold` as positive.
    pub fn at_threshold(pred: &FeatureGrid, gt: &BinaryMask, threshold: f64) -> Result<Self> {
        check_pair(pred, gt)?;
        let mut out = Self::default();
        for (&p, &g) in pred.plane(0).iter().zip(gt.bits()) {
            out.add_pixel(p >= threshold, g);
        }
        Ok(out)
    }

    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        pred.check_shape(gt)?;
        let mut out = Self::default();
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            out.add_pixel(p, g);
        }
        Ok(out)
    }

    /// Counts with a matching tolerance of `tol` pixels (Chebyshev): a
    /// predicted positive is a true positive if ground truth lies within
    /// `tol`, and a ground-truth pixel is missed if no prediction lies
    /// within `tol`. `tol = 0` is the pixelwise count.
    pub fn with_tolerance(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<Self> {
        if tol == 0 {
            return Self::from_masks(pred, gt);
        }
        pred.check_shape(gt)?;
        let (gt_near, pred_near) = (gt.dilate(tol), pred.dilate(tol));
        let mut out = Self::default();
        for i in 0..pred.bits.len() {
            match (pred.bits[i], gt.bits[i]) {
                (true, _) if gt_near.bits[i] => out.tp += 1,
                (true, _) => out.fp += 1,
                (false, true) if !pred_near.bits[i] => out.fn_ += 1,
                (false, true) => {}
                (false, false) => out.tn += 1,
            }
        }
        Ok(out)
    }

    fn add_pixel(&mut self, p: bool, g: bool) {
        match (p, g) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fp, 0.0)
    }

    pub fn recall(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fn_, 0.0)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Mean of foreground and background IoU; an absent class scores 1.
    pub fn miou(&self) -> f64 {
        let fg = ratio_or(self.tp, self.tp + self.fp + self.fn_, 1.0);
        let bg = ratio_or(self.tn, self.tn + self.fp + self.fn_, 1.0);
        0.5 * (fg + bg)
    }

    pub fn metrics(&self) -> RegionMetrics {
        RegionMetrics {
            miou: self.miou(),
            f1: self.f1(),
            precision: self.precision(),
            recall: self.recall(),
        }
    }
}

fn ratio_or(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn check_pair(pred: &FeatureGrid, gt: &BinaryMask) -> Result<()> {
    if pred.channels() != 1 || (pred.height(), pred.width()) != gt.shape() {
        return dim_err(format!(
            "prediction {:?} does not match ground truth {:?}",
            pred.shape(),
            gt.shape()
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMetrics {
    pub miou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn region_metrics(pred: &FeatureGrid, gt: &BinaryMask, threshold: f64) -> Result<RegionMetrics> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FgosError::Input(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(Confusion::at_threshold(pred, gt, threshold)?.metrics())
}

/// `k / 100` for `k = 1..=99`.
pub fn ods_thresholds() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdsResult {
    pub f1: f64,
    /// Smallest threshold attaining the best F1.
    pub threshold: f64,
    /// Dataset-wide counts at each threshold of [`ods_thresholds`].
    pub per_threshold: Vec<Confusion>,
}

/// Best dataset-wide F1 over the fixed threshold grid, pixelwise matching.
pub fn ods(preds: &[FeatureGrid], gts: &[BinaryMask]) -> Result<OdsResult> {
    ods_with_tolerance(preds, gts, 0)
}

pub fn ods_with_tolerance(preds: &[FeatureGrid], gts: &[BinaryMask], tol: usize) -> Result<OdsResult> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(FgosError::Input(format!(
            "ODS needs equal non-empty lists, got {} predictions and {} masks",
            preds.len(),
            gts.len()
        )));
    }
    let thresholds = ods_thresholds();
    let mut totals = vec![Confusion::default(); thresholds.len()];
    for (pred, gt) in preds.iter().zip(gts) {
        check_pair(pred, gt)?;
        if tol == 0 {
            accumulate_pixelwise(pred, gt, &thresholds, &mut totals);
        } else {
            for (t, total) in thresholds.iter().zip(totals.iter_mut()) {
                let p = BinaryMask::from_grid(pred, *t);
                total.merge(&Confusion::with_tolerance(&p, gt, tol)?);
            }
        }
    }
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (i, c) in totals.iter().enumerate() {
        let f = c.f1();
        if f > best {
            best = f;
            arg = i;
        }
    }
    Ok(OdsResult {
        f1: best,
        threshold: thresholds[arg],
        per_threshold: totals,
    })
}

/// One pass per image: each pixel is positive for exactly the thresholds
/// `t <= p`, a prefix of the sorted grid.
fn accumulate_pixelwise(pred: &FeatureGrid, gt: &BinaryMask, thresholds: &[f64], totals: &mut [Confusion]) {
    let n = thresholds.len();
    let mut pos_fg = vec![0u64; n + 1];
    let mut pos_bg = vec![0u64; n + 1];
    let (mut fg, mut bg) = (0u64, 0u64);
    for (&p, &g) in pred.plane(0).iter().zip(gt.bits()) {
        let k = thresholds.partition_point(|&t| t <= p);
        if g {
            pos_fg[k] += 1;
            fg += 1;
        } else {
            pos_bg[k] += 1;
            bg += 1;
        }
    }
    // suffix sums: positives at threshold i are pixels with k > i
    let (mut acc_fg, mut acc_bg) = (0u64, 0u64);
    for i in (0..n).rev() {
        acc_fg += pos_fg[i + 1];
        acc_bg += pos_bg[i + 1];
        let t = &mut totals[i];
        t.tp += acc_fg;
        t.fn_ += fg - acc_fg;
        t.fp += acc_bg;
        t.tn += bg - acc_bg;
    }
}

/// Zhang–Suen thinning. Components that one sub-iteration would erase
/// entirely (e.g. 2×2 blocks) keep their first pixel in raster order.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    let mut img = mask.bits.clone();
    let at = |img: &[bool], r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && img[r as usize * w + c as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut doomed = Vec::new();
            for r in 0..h as isize {
                for c in 0..w as isize {
                    if !at(&img, r, c) {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p = [
                        at(&img, r - 1, c),
                        at(&img, r - 1, c + 1),
                        at(&img, r, c + 1),
                        at(&img, r + 1, c + 1),
                        at(&img, r + 1, c),
                        at(&img, r + 1, c - 1),
                        at(&img, r, c - 1),
                        at(&img, r - 1, c - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        doomed.push(r as usize * w + c as usize);
                    }
                }
            }
            if doomed.is_empty() {
                continue;
            }
            let labels = label_components(&img, h, w);
            let ncomp = labels.iter().copied().max().unwrap_or(0) as usize;
            let mut size = vec![0usize; ncomp + 1];
            labels.iter().for_each(|&l| size[l as usize] += 1);
            let mut hit = vec![0usize; ncomp + 1];
            doomed.iter().for_each(|&i| hit[labels[i] as usize] += 1);
            let mut spared = vec![false; ncomp + 1];
            for i in doomed {
                let l = labels[i] as usize;
                if hit[l] == size[l] && !spared[l] {
                    spared[l] = true;
                    continue;
                }
                img[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask { height: h, width: w, bits: img }
}

/// `2|P ∩ G| / (|P| + |G|)`, `1` when both are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = pred.overlap(gt)?;
    let total = pred.count() + gt.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClDice {
    pub tprec: f64,
    pub tsens: f64,
    pub score: f64,
}

/// Skeleton-overlap precision/sensitivity and their harmonic mean.
pub fn cldice_parts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ClDice> {
    pred.check_shape(gt)?;
    let (sp, sg) = (skeletonize(pred), skeletonize(gt));
    let (np, ng) = (sp.count(), sg.count());
    if np == 0 && ng == 0 {
        return Ok(ClDice {
            tprec: 1.0,
            tsens: 1.0,
            score: 1.0,
        });
    }
    if np == 0 || ng == 0 {
        return Ok(ClDice {
            tprec: 0.0,
            tsens: 0.0,
            score: 0.0,
        });
    }
    let tprec = sp.overlap(gt)? as f64 / np as f64;
    let tsens = sg.overlap(pred)? as f64 / ng as f64;
    let score = if tprec + tsens == 0.0 {
        0.0
    } else {
        2.0 * tprec * tsens / (tprec + tsens)
    };
    Ok(ClDice { tprec, tsens, score })
}

pub fn cldice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(cldice_parts(pred, gt)?.score)
}
