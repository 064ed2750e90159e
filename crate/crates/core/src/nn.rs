//! Small dense kernels shared by the blocks: replicate-padded convolutions,
//! pointwise projections and activations. Weights are row-major `f64`
//! slices with PyTorch-style layouts (`out × in × k × k`).

use crate::error::{dim_err, Result};
use crate::grid::FeatureGrid;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_grid(x: &FeatureGrid) -> FeatureGrid {
    x.map(relu)
}

/// Output extent of a "same"-padded convolution with the given stride.
pub fn conv_out_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Replicate-pads one plane by `pad` cells on every side.
fn pad_plane(src: &[f64], h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; ph * pw];
    for r in 0..ph {
        let sr = r.saturating_sub(pad).min(h - 1);
        let row = &src[sr * w..(sr + 1) * w];
        let dst = &mut out[r * pw..(r + 1) * pw];
        dst[pad..pad + w].copy_from_slice(row);
        let (first, last) = (row[0], row[w - 1]);
        dst[..pad].iter_mut().for_each(|v| *v = first);
        dst[pad + w..].iter_mut().for_each(|v| *v = last);
    }
    out
}

/// Dense `k × k` convolution, replicate padding `k / 2`, given stride.
/// `weight` is `cout × cin × k × k`, `bias` is `cout`.
pub fn conv2d(x: &FeatureGrid, weight: &[f64], bias: &[f64], cout: usize, k: usize, stride: usize) -> Result<FeatureGrid> {
    let (cin, h, w) = x.shape();
    if k.is_multiple_of(2) || stride == 0 {
        return dim_err(format!("conv2d needs an odd kernel and positive stride, got k={k} stride={stride}"));
    }
    if weight.len() != cout * cin * k * k || bias.len() != cout {
        return dim_err(format!(
            "conv2d weight {} / bias {} do not match {cout}x{cin}x{k}x{k}",
            weight.len(),
            bias.len()
        ));
    }
    if h == 0 || w == 0 {
        return dim_err("conv2d on empty grid");
    }
    let pad = k / 2;
    let pw = w + 2 * pad;
    let (ho, wo) = (conv_out_len(h, stride), conv_out_len(w, stride));
    let padded: Vec<Vec<f64>> = (0..cin).map(|c| pad_plane(x.plane(c), h, w, pad)).collect();
    let mut out = FeatureGrid::zeros(cout, ho, wo);
    for co in 0..cout {
        let dst = out.plane_mut(co);
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for (ci, src) in padded.iter().enumerate() {
            let kw = &weight[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kw[ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for r in 0..ho {
                        let srow = &src[(r * stride + ky) * pw + kx..];
                        let drow = &mut dst[r * wo..(r + 1) * wo];
                        if stride == 1 {
                            for (d, s) in drow.iter_mut().zip(&srow[..wo]) {
                                *d += wv * s;
                            }
                        } else {
                            for (c, d) in drow.iter_mut().enumerate() {
                                *d += wv * srow[c * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depthwise `k × k` convolution, stride 1, replicate padding.
/// `weight` is `c × k × k`, `bias` is `c`.
pub fn depthwise_conv(x: &FeatureGrid, weight: &[f64], bias: &[f64], k: usize) -> Result<FeatureGrid> {
    let (ch, h, w) = x.shape();
    if k.is_multiple_of(2) || weight.len() != ch * k * k || bias.len() != ch {
        return dim_err(format!(
            "depthwise weight {} / bias {} do not match {ch}x{k}x{k}",
            weight.len(),
            bias.len()
        ));
    }
    let pad = k / 2;
    let pw = w + 2 * pad;
    let mut out = FeatureGrid::zeros(ch, h, w);
    for c in 0..ch {
        let src = pad_plane(x.plane(c), h, w, pad);
        let kw = &weight[c * k * k..(c + 1) * k * k];
        let dst = out.plane_mut(c);
        dst.iter_mut().for_each(|v| *v = bias[c]);
        for ky in 0..k {
            for kx in 0..k {
                let wv = kw[ky * k + kx];
                if wv == 0.0 {
                    continue;
                }
                for r in 0..h {
                    let srow = &src[(r + ky) * pw + kx..(r + ky) * pw + kx + w];
                    for (d, s) in dst[r * w..(r + 1) * w].iter_mut().zip(srow) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1×1 convolution. `weight` is `cout × cin`.
pub fn pointwise(x: &FeatureGrid, weight: &[f64], bias: &[f64], cout: usize) -> Result<FeatureGrid> {
    let (cin, h, w) = x.shape();
    if weight.len() != cout * cin || bias.len() != cout {
        return dim_err(format!(
            "pointwise weight {} / bias {} do not match {cout}x{cin}",
            weight.len(),
            bias.len()
        ));
    }
    let mut out = FeatureGrid::zeros(cout, h, w);
    for co in 0..cout {
        let dst = out.plane_mut(co);
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let wv = weight[co * cin + ci];
            if wv == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(x.plane(ci)) {
                *d += wv * s;
            }
        }
    }
    Ok(out)
}

/// `y = W x + b` for a row-major `out × in` matrix.
pub fn dense(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weight[o * n..(o + 1) * n].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Multiplies channel `c` by `gate[c]`.
pub fn scale_channels(x: &FeatureGrid, gate: &[f64]) -> FeatureGrid {
    let mut out = x.clone();
    for (c, g) in gate.iter().enumerate() {
        out.plane_mut(c).iter_mut().for_each(|v| *v *= g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct definition with explicit clamped indexing.
    fn conv_oracle(x: &FeatureGrid, wt: &[f64], b: &[f64], cout: usize, k: usize, stride: usize) -> FeatureGrid {
        let (cin, h, w) = x.shape();
        let pad = (k / 2) as isize;
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        FeatureGrid::from_fn(cout, ho, wo, |co, r, c| {
            let mut acc = b[co];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sr = ((r * stride) as isize + ky as isize - pad).clamp(0, h as isize - 1) as usize;
                        let sc = ((c * stride) as isize + kx as isize - pad).clamp(0, w as isize - 1) as usize;
                        acc += wt[((co * cin + ci) * k + ky) * k + kx] * x.get(ci, sr, sc);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv2d_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FeatureGrid::from_fn(3, 9, 7, |_, _, _| rng.gen_range(-1.0..1.0));
        for &(k, stride) in &[(3, 1), (3, 2), (1, 1), (5, 2)] {
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d(&x, &wt, &b, 4, k, stride).unwrap();
            let want = conv_oracle(&x, &wt, &b, 4, k, stride);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "k={k} s={stride}");
        }
    }

    #[test]
    fn depthwise_and_pointwise_match_dense_equivalents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = FeatureGrid::from_fn(2, 6, 5, |_, _, _| rng.gen_range(-1.0..1.0));
        let dw: Vec<f64> = (0..2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = vec![0.3, -0.2];
        let mut full = vec![0.0; 2 * 2 * 9];
        for c in 0..2 {
            full[(c * 2 + c) * 9..(c * 2 + c + 1) * 9].copy_from_slice(&dw[c * 9..(c + 1) * 9]);
        }
        let a = depthwise_conv(&x, &dw, &b, 3).unwrap();
        let d = conv2d(&x, &full, &b, 2, 3, 1).unwrap();
        assert!(a.max_abs_diff(&d).unwrap() < 1e-12);

        let pw: Vec<f64> = (0..3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pb = vec![0.0, 1.0, -1.0];
        let p = pointwise(&x, &pw, &pb, 3).unwrap();
        let q = conv2d(&x, &pw, &pb, 3, 1, 1).unwrap();
        assert!(p.max_abs_diff(&q).unwrap() < 1e-12);
    }

    #[test]
    fn laplacian_of_constant_is_zero_with_replicate_padding() {
        let x = FeatureGrid::filled(1, 5, 5, 3.0);
        let lap = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        let y = depthwise_conv(&x, &lap, &[0.0], 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(0.6) - 0.645_656_306_225_795).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = FeatureGrid::zeros(2, 4, 4);
        assert!(conv2d(&x, &[0.0; 9], &[0.0], 1, 3, 1).is_err());
        assert!(pointwise(&x, &[0.0; 3], &[0.0], 1).is_err());
    }
}
