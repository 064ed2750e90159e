//! Orthonormal single-level 2D Haar analysis and synthesis.
//!
//! For a 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2
//! LH = (a + b - c - d) / 2   horizontal structures
//! HL = (a - b + c - d) / 2   vertical structures
//! HH = (a - b - c + d) / 2
//! ```
//!
//! The first letter names the filter along the horizontal axis and the second
//! the filter along the vertical axis. Odd sizes are edge-replicated to even
//! before analysis and cropped after synthesis.

use crate::error::{dim_err, Result};
use crate::grid::FeatureGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: FeatureGrid,
    pub lh: FeatureGrid,
    pub hl: FeatureGrid,
    pub hh: FeatureGrid,
}

impl SubbandSet {
    pub fn new(ll: FeatureGrid, lh: FeatureGrid, hl: FeatureGrid, hh: FeatureGrid) -> Result<Self> {
        let s = Self { ll, lh, hl, hh };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let shape = self.ll.shape();
        for (name, band) in [("LH", &self.lh), ("HL", &self.hl), ("HH", &self.hh)] {
            if band.shape() != shape {
                return dim_err(format!(
                    "sub-band {name} has shape {:?}, LL has {shape:?}",
                    band.shape()
                ));
            }
        }
        Ok(())
    }

    /// `(channels, band height, band width)`.
    pub fn band_shape(&self) -> (usize, usize, usize) {
        self.ll.shape()
    }

    pub fn energy(&self) -> f64 {
        self.ll.energy() + self.lh.energy() + self.hl.energy() + self.hh.energy()
    }

    /// The three directional bands, `[LH, HL, HH]`.
    pub fn high(&self) -> [&FeatureGrid; 3] {
        [&self.lh, &self.hl, &self.hh]
    }
}

/// Forward transform. Requires `height, width >= 2`.
pub fn dwt_haar(x: &FeatureGrid) -> Result<SubbandSet> {
    let (ch, h, w) = x.shape();
    if h < 2 || w < 2 {
        return dim_err(format!("Haar DWT needs height and width >= 2, got {h}x{w}"));
    }
    let (bh, bw) = (h.div_ceil(2), w.div_ceil(2));
    let mut bands = [
        FeatureGrid::zeros(ch, bh, bw),
        FeatureGrid::zeros(ch, bh, bw),
        FeatureGrid::zeros(ch, bh, bw),
        FeatureGrid::zeros(ch, bh, bw),
    ];
    for c in 0..ch {
        let src = x.plane(c);
        for br in 0..bh {
            let r0 = 2 * br;
            let r1 = (r0 + 1).min(h - 1);
            for bc in 0..bw {
                let c0 = 2 * bc;
                let c1 = (c0 + 1).min(w - 1);
                let a = src[r0 * w + c0];
                let b = src[r0 * w + c1];
                let cc = src[r1 * w + c0];
                let d = src[r1 * w + c1];
                let i = br * bw + bc;
                bands[0].plane_mut(c)[i] = 0.5 * (a + b + cc + d);
                bands[1].plane_mut(c)[i] = 0.5 * (a + b - cc - d);
                bands[2].plane_mut(c)[i] = 0.5 * (a - b + cc - d);
                bands[3].plane_mut(c)[i] = 0.5 * (a - b - cc + d);
            }
        }
    }
    let [ll, lh, hl, hh] = bands;
    Ok(SubbandSet { ll, lh, hl, hh })
}

/// Inverse transform onto a `target_h × target_w` grid. The target must be
/// the band size doubled, or one less along an axis (cropping replication).
pub fn idwt_haar(s: &SubbandSet, target_h: usize, target_w: usize) -> Result<FeatureGrid> {
    s.check()?;
    let (ch, bh, bw) = s.band_shape();
    let fits = |t: usize, b: usize| t <= 2 * b && t + 1 >= 2 * b && t > 0;
    if !fits(target_h, bh) || !fits(target_w, bw) {
        return dim_err(format!(
            "target {target_h}x{target_w} incompatible with band size {bh}x{bw}"
        ));
    }
    let mut out = FeatureGrid::zeros(ch, target_h, target_w);
    for c in 0..ch {
        let (ll, lh, hl, hh) = (s.ll.plane(c), s.lh.plane(c), s.hl.plane(c), s.hh.plane(c));
        let dst = out.plane_mut(c);
        for br in 0..bh {
            for bc in 0..bw {
                let i = br * bw + bc;
                let (p, q, u, v) = (ll[i], lh[i], hl[i], hh[i]);
                let block = [
                    0.5 * (p + q + u + v),
                    0.5 * (p + q - u - v),
                    0.5 * (p - q + u - v),
                    0.5 * (p - q - u + v),
                ];
                for (k, val) in block.into_iter().enumerate() {
                    let r = 2 * br + k / 2;
                    let col = 2 * bc + k % 2;
                    if r < target_h && col < target_w {
                        dst[r * target_w + col] = val;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::FgosError;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2(v: [f64; 4]) -> FeatureGrid {
        FeatureGrid::from_vec(1, 2, 2, v.to_vec()).unwrap()
    }

    fn bands_of(s: &SubbandSet) -> [f64; 4] {
        [s.ll.data()[0], s.lh.data()[0], s.hl.data()[0], s.hh.data()[0]]
    }

    #[test]
    fn constant_block_has_only_ll() {
        assert_eq!(bands_of(&dwt_haar(&grid2([1.0; 4])).unwrap()), [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn horizontal_edge_lands_in_lh() {
        let s = dwt_haar(&grid2([1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(bands_of(&s), [1.0, 1.0, 0.0, 0.0]);
        let s = dwt_haar(&grid2([1.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(bands_of(&s), [1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn parseval_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FeatureGrid::from_fn(3, 16, 16, |_, _, _| rng.gen_range(-2.0..2.0));
        let direct: f64 = x.data().iter().map(|v| v * v).sum();
        let s = dwt_haar(&x).unwrap();
        let banded: f64 = [&s.ll, &s.lh, &s.hl, &s.hh]
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|v| v * v)
            .sum();
        assert!((direct - banded).abs() <= 1e-5 * direct);
    }

    #[test]
    fn zero_bands_give_zero_grid() {
        let z = FeatureGrid::zeros(2, 3, 3);
        let s = SubbandSet::new(z.clone(), z.clone(), z.clone(), z).unwrap();
        assert!(idwt_haar(&s, 6, 6).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_ll_inverts_to_ones() {
        let z = FeatureGrid::zeros(1, 2, 3);
        let s = SubbandSet::new(FeatureGrid::filled(1, 2, 3, 2.0), z.clone(), z.clone(), z).unwrap();
        let x = idwt_haar(&s, 4, 6).unwrap();
        assert!(x.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_dims_roundtrip_through_replication() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = FeatureGrid::from_fn(2, 7, 5, |_, _, _| rng.gen_range(-1.0..1.0));
        let s = dwt_haar(&x).unwrap();
        assert_eq!(s.band_shape(), (2, 4, 3));
        let back = idwt_haar(&s, 7, 5).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn too_small_input_is_rejected() {
        assert!(matches!(
            dwt_haar(&FeatureGrid::zeros(1, 1, 4)),
            Err(FgosError::Dimension(_))
        ));
    }

    #[test]
    fn inconsistent_bands_are_rejected() {
        let a = FeatureGrid::zeros(1, 2, 2);
        let b = FeatureGrid::zeros(1, 2, 3);
        assert!(SubbandSet::new(a.clone(), b, a.clone(), a.clone()).is_err());
        let s = dwt_haar(&FeatureGrid::zeros(1, 4, 4)).unwrap();
        assert!(idwt_haar(&s, 8, 4).is_err());
    }

    #[test]
    fn directional_selectivity_and_transpose_swap() {
        // horizontal stripes: rows alternate in blocks of one
        let stripes = FeatureGrid::from_fn(1, 16, 16, |_, r, _| if r % 4 == 1 { 1.0 } else { 0.0 });
        let s = dwt_haar(&stripes).unwrap();
        assert!(s.lh.energy() > 100.0 * s.hl.energy().max(f64::MIN_POSITIVE));
        let transposed = FeatureGrid::from_fn(1, 16, 16, |_, r, c| stripes.get(0, c, r));
        let t = dwt_haar(&transposed).unwrap();
        assert_eq!(t.hl.energy(), s.lh.energy());
        assert_eq!(t.lh.energy(), s.hl.energy());
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(c in 1usize..4, hh in 1usize..10, ww in 1usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = FeatureGrid::from_fn(c, 2 * hh, 2 * ww, |_, _, _| rng.gen_range(-5.0..5.0));
            let back = idwt_haar(&dwt_haar(&x).unwrap(), 2 * hh, 2 * ww).unwrap();
            prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-5);
        }

        #[test]
        fn bandwise_linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = FeatureGrid::from_fn(2, 8, 6, |_, _, _| rng.gen_range(-1.0..1.0));
            let y = FeatureGrid::from_fn(2, 8, 6, |_, _, _| rng.gen_range(-1.0..1.0));
            let mix = x.zip_with(&y, |a, b| alpha * a + beta * b).unwrap();
            let (sx, sy, sm) = (dwt_haar(&x).unwrap(), dwt_haar(&y).unwrap(), dwt_haar(&mix).unwrap());
            for (bx, by, bm) in [(&sx.ll, &sy.ll, &sm.ll), (&sx.lh, &sy.lh, &sm.lh), (&sx.hl, &sy.hl, &sm.hl), (&sx.hh, &sy.hh, &sm.hh)] {
                let expect = bx.zip_with(by, |a, b| alpha * a + beta * b).unwrap();
                prop_assert!(bm.max_abs_diff(&expect).unwrap() <= 1e-6);
            }
        }
    }
}
