//! Frequency-aligned scanning and the LightGate bottleneck mixer.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{dim_err, FgosError, Result};
use crate::grid::FeatureGrid;
use crate::nn::{depthwise_conv, dense, pointwise, relu, relu_grid, scale_channels, sigmoid};
use crate::scan::{deserialize_tokens, serialize_tokens, ScanKind, ScanOrder};
use crate::ssm::{ssm_scan_sequential, SsmParams};
use crate::wavelet::{dwt_haar, idwt_haar, SubbandSet};
use crate::weights::{ParamSpec, WeightStore};

/// Traversal used for each internal sub-band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanAssignment {
    pub ll: ScanKind,
    pub lh: ScanKind,
    pub hl: ScanKind,
    pub hh: ScanKind,
}

impl Default for ScanAssignment {
    fn default() -> Self {
        Self {
            ll: ScanKind::Hilbert,
            lh: ScanKind::Horizontal,
            hl: ScanKind::Vertical,
            hh: ScanKind::Hilbert,
        }
    }
}

impl ScanAssignment {
    pub fn uniform(kind: ScanKind) -> Self {
        Self {
            ll: kind,
            lh: kind,
            hl: kind,
            hh: kind,
        }
    }

    /// Trajectory ablation rows `D1`..`D6`. The isotropic path is shared by
    /// LL and HH.
    pub fn ablation_row(row: &str) -> Result<Self> {
        let d = Self::default();
        Ok(match row.to_ascii_uppercase().as_str() {
            "D1" => d,
            "D2" => Self {
                ll: ScanKind::Raster,
                hh: ScanKind::Raster,
                ..d
            },
            "D3" => Self {
                ll: ScanKind::ZOrder,
                hh: ScanKind::ZOrder,
                ..d
            },
            "D4" => Self {
                lh: ScanKind::Vertical,
                hl: ScanKind::Horizontal,
                ..d
            },
            "D5" => Self {
                lh: ScanKind::Snake,
                hl: ScanKind::Snake,
                ..d
            },
            "D6" => Self::uniform(ScanKind::Hilbert),
            other => return Err(FgosError::Config(format!("unknown ablation row `{other}`"))),
        })
    }

    /// `[LL, LH, HL, HH]`.
    pub fn kinds(&self) -> [ScanKind; 4] {
        [self.ll, self.lh, self.hl, self.hh]
    }
}

impl fmt::Display for ScanAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ll={},lh={},hl={},hh={}", self.ll, self.lh, self.hl, self.hh)
    }
}

/// Parses `ll=hilbert,lh=h,hl=v,hh=hilbert` or an ablation row name such as
/// `D4`. Bands left out keep their default trajectory.
impl FromStr for ScanAssignment {
    type Err = FgosError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if !s.contains('=') {
            return Self::ablation_row(s);
        }
        let mut out = Self::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| FgosError::Config(format!("expected band=kind, got `{part}`")))?;
            let kind: ScanKind = value.parse()?;
            match key.trim().to_ascii_lowercase().as_str() {
                "ll" => out.ll = kind,
                "lh" => out.lh = kind,
                "hl" => out.hl = kind,
                "hh" => out.hh = kind,
                other => return Err(FgosError::Config(format!("unknown sub-band `{other}`"))),
            }
        }
        Ok(out)
    }
}

fn check_scan_input(x: &FeatureGrid, psi: &SsmParams) -> Result<()> {
    let (c, h, w) = x.shape();
    if h < 4 || w < 4 || h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("scan block needs even spatial dims >= 4, got {h}x{w}"));
    }
    if c != psi.dim {
        return dim_err(format!("scan operator has dim {}, input has {c} channels", psi.dim));
    }
    Ok(())
}

/// Runs `psi` over `band` along each order and averages the results back on
/// the lattice.
fn scan_band(band: &FeatureGrid, psi: &SsmParams, orders: &[Arc<ScanOrder>]) -> Result<FeatureGrid> {
    let ch = band.channels();
    let mut acc: Option<FeatureGrid> = None;
    for order in orders {
        let tokens = serialize_tokens(band, order)?;
        let y = ssm_scan_sequential(psi, &tokens)?;
        let back = deserialize_tokens(&y, ch, order)?;
        acc = Some(match acc {
            None => back,
            Some(sum) => sum.add(&back)?,
        });
    }
    let sum = acc.ok_or_else(|| FgosError::Config("no scan orders".into()))?;
    Ok(if orders.len() == 1 {
        sum
    } else {
        sum.scale(1.0 / orders.len() as f64)
    })
}

fn scan_subbands(
    x: &FeatureGrid,
    psi: &SsmParams,
    orders_for: impl Fn(usize, usize, usize) -> Result<Vec<Arc<ScanOrder>>>,
) -> Result<FeatureGrid> {
    check_scan_input(x, psi)?;
    let bands = dwt_haar(x)?;
    let (_, bh, bw) = bands.band_shape();
    let mut out = Vec::with_capacity(4);
    for (i, band) in [&bands.ll, &bands.lh, &bands.hl, &bands.hh].into_iter().enumerate() {
        out.push(scan_band(band, psi, &orders_for(i, bh, bw)?)?);
    }
    let [ll, lh, hl, hh]: [FeatureGrid; 4] = out.try_into().expect("four bands");
    idwt_haar(&SubbandSet::new(ll, lh, hl, hh)?, x.height(), x.width())
}

/// Frequency-aligned scan: internal Haar split, each band serialized along
/// its assigned trajectory, the shared operator `psi`, inverse permutation,
/// Haar merge. Output shape equals input shape.
pub fn fa_scan(x: &FeatureGrid, psi: &SsmParams, assign: &ScanAssignment) -> Result<FeatureGrid> {
    let kinds = assign.kinds();
    scan_subbands(x, psi, |band, h, w| Ok(vec![ScanOrder::cached(kinds[band], h, w)?]))
}

/// The four flattened raster directions applied to every band: row-major,
/// its reversal, column-major, its reversal.
pub fn cross_scan_orders(h: usize, w: usize) -> Result<Vec<Arc<ScanOrder>>> {
    let rows = ScanOrder::cached(ScanKind::Raster, h, w)?;
    let cols = ScanOrder::cached(ScanKind::Vertical, h, w)?;
    let rows_rev = Arc::new(rows.reversed());
    let cols_rev = Arc::new(cols.reversed());
    Ok(vec![rows, rows_rev, cols, cols_rev])
}

/// Four-direction cross-scan baseline: every band is scanned along all four
/// raster directions with the shared operator and the outputs averaged.
pub fn cross_scan(x: &FeatureGrid, psi: &SsmParams) -> Result<FeatureGrid> {
    scan_subbands(x, psi, |_, h, w| cross_scan_orders(h, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateKind {
    /// Efficient channel attention: 1D convolution over pooled channels.
    Eca,
    /// Squeeze-and-excitation: reduce, rectify, expand.
    Gse,
}

impl GateKind {
    pub fn letter(self) -> char {
        match self {
            GateKind::Eca => 'E',
            GateKind::Gse => 'G',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LgbConfig {
    /// 1-based stage index selecting the policy letter.
    pub stage: usize,
    /// One letter per stage from `{E, G}`.
    pub policy: String,
    pub ratio: usize,
    pub eca_kernel: usize,
    pub gse_reduction: usize,
}

impl Default for LgbConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            policy: "EEGG".into(),
            ratio: 4,
            eca_kernel: 3,
            gse_reduction: 4,
        }
    }
}

impl LgbConfig {
    pub fn for_stage(&self, stage: usize) -> Self {
        Self {
            stage,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.policy.len() != 4 || !self.policy.chars().all(|c| matches!(c, 'E' | 'G')) {
            return Err(FgosError::Config(format!(
                "gating policy must be 4 letters from {{E, G}}, got `{}`",
                self.policy
            )));
        }
        if !(1..=4).contains(&self.stage) {
            return Err(FgosError::Config(format!("stage must be 1..=4, got {}", self.stage)));
        }
        if self.ratio == 0 || self.gse_reduction == 0 || self.eca_kernel.is_multiple_of(2) {
            return Err(FgosError::Config(
                "ratio and reduction must be positive, ECA kernel odd".into(),
            ));
        }
        Ok(())
    }

    pub fn gate(&self) -> Result<GateKind> {
        self.validate()?;
        Ok(match self.policy.as_bytes()[self.stage - 1] {
            b'E' => GateKind::Eca,
            _ => GateKind::Gse,
        })
    }

    fn hidden(&self, channels: usize) -> Result<usize> {
        if channels == 0 || !channels.is_multiple_of(self.ratio) || !channels.is_multiple_of(self.gse_reduction) {
            return dim_err(format!(
                "LGB needs channels divisible by {} and {}, got {channels}",
                self.ratio, self.gse_reduction
            ));
        }
        Ok(channels / self.ratio)
    }

    /// Weight blocks under `prefix` for a block of `channels` width.
    pub fn param_specs(&self, prefix: &str, channels: usize) -> Result<Vec<ParamSpec>> {
        let hid = self.hidden(channels)?;
        let p = |n: &str, s: &[usize]| ParamSpec::new(format!("{prefix}{n}"), s);
        let mut specs = vec![
            p("pw1.w", &[hid, channels]),
            p("pw1.b", &[hid]),
            p("dw.w", &[hid, 3, 3]),
            p("dw.b", &[hid]),
            p("pw2.w", &[channels, hid]),
            p("pw2.b", &[channels]),
        ];
        match self.gate()? {
            GateKind::Eca => {
                specs.push(p("eca.w", &[self.eca_kernel]));
                specs.push(p("eca.b", &[1]));
            }
            GateKind::Gse => {
                let r = channels / self.gse_reduction;
                specs.push(p("gse.w1", &[r, channels]));
                specs.push(p("gse.b1", &[r]));
                specs.push(p("gse.w2", &[channels, r]));
                specs.push(p("gse.b2", &[channels]));
            }
        }
        Ok(specs)
    }

    pub fn param_count(&self, channels: usize) -> Result<usize> {
        Ok(self
            .param_specs("", channels)?
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum())
    }
}

/// Parameters of a standard feed-forward block with `expansion`× hidden
/// width (two 1×1 projections with biases).
pub fn ffn_param_count(channels: usize, expansion: usize) -> usize {
    let hid = channels * expansion;
    channels * hid + hid + hid * channels + channels
}

/// Channel gate `G_s(y)` in `(0, 1)`.
pub fn lgb_gate(y: &FeatureGrid, cfg: &LgbConfig, w: &WeightStore, prefix: &str) -> Result<Vec<f64>> {
    let c = y.channels();
    cfg.hidden(c)?;
    let pooled = y.channel_means();
    let pre: Vec<f64> = match cfg.gate()? {
        GateKind::Eca => {
            let k = cfg.eca_kernel;
            let kw = w.expect(&format!("{prefix}eca.w"), &[k])?;
            let kb = w.expect(&format!("{prefix}eca.b"), &[1])?[0];
            let half = (k / 2) as isize;
            (0..c as isize)
                .map(|i| {
                    kb + (0..k as isize)
                        .map(|j| {
                            let src = i + j - half;
                            if (0..c as isize).contains(&src) {
                                kw[j as usize] * pooled[src as usize]
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                })
                .collect()
        }
        GateKind::Gse => {
            let r = c / cfg.gse_reduction;
            let w1 = w.expect(&format!("{prefix}gse.w1"), &[r, c])?;
            let b1 = w.expect(&format!("{prefix}gse.b1"), &[r])?;
            let w2 = w.expect(&format!("{prefix}gse.w2"), &[c, r])?;
            let b2 = w.expect(&format!("{prefix}gse.b2"), &[c])?;
            let hidden: Vec<f64> = dense(&w1, &b1, &pooled).into_iter().map(relu).collect();
            dense(&w2, &b2, &hidden)
        }
    };
    Ok(pre.into_iter().map(sigmoid).collect())
}

/// Bottleneck branch `F(y)`: project down, depthwise 3×3, rectify, project up.
pub fn lgb_branch(y: &FeatureGrid, cfg: &LgbConfig, w: &WeightStore, prefix: &str) -> Result<FeatureGrid> {
    let c = y.channels();
    let hid = cfg.hidden(c)?;
    let get = |n: &str, s: &[usize]| w.expect(&format!("{prefix}{n}"), s);
    let down = pointwise(y, &get("pw1.w", &[hid, c])?, &get("pw1.b", &[hid])?, hid)?;
    let mixed = depthwise_conv(&down, &get("dw.w", &[hid, 3, 3])?, &get("dw.b", &[hid])?, 3)?;
    pointwise(&relu_grid(&mixed), &get("pw2.w", &[c, hid])?, &get("pw2.b", &[c])?, c)
}

/// `y + G_s(y) ⊙ F(y)`.
pub fn lgb(y: &FeatureGrid, cfg: &LgbConfig, w: &WeightStore, prefix: &str) -> Result<FeatureGrid> {
    let gate = lgb_gate(y, cfg, w, prefix)?;
    let branch = lgb_branch(y, cfg, w, prefix)?;
    y.add(&scale_channels(&branch, &gate))
}
