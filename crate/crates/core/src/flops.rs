//! Multiply-accumulate counts per operator, a runtime meter and the
//! per-component report.

use std::collections::BTreeMap;
use std::fmt;

use crate::asgp::{AsgpConfig, GateMode};
use crate::fablock::{GateKind, LgbConfig};
use crate::error::Result;

/// Dense `k × k` convolution producing `ho × wo × cout`.
pub fn conv_macs(ho: usize, wo: usize, cin: usize, cout: usize, k: usize) -> u64 {
    (ho * wo * cin * cout * k * k) as u64
}

pub fn depthwise_macs(h: usize, w: usize, c: usize, k: usize) -> u64 {
    (h * w * c * k * k) as u64
}

pub fn pointwise_macs(h: usize, w: usize, cin: usize, cout: usize) -> u64 {
    (h * w * cin * cout) as u64
}

/// One Haar analysis or synthesis on a `c × h × w` grid.
pub fn haar_macs(c: usize, h: usize, w: usize) -> u64 {
    (4 * c * h * w) as u64
}

/// Bilinear resize to `h × w` (four taps per output value); free when the
/// size is unchanged.
pub fn resize_macs(c: usize, from: (usize, usize), to: (usize, usize)) -> u64 {
    if from == to {
        0
    } else {
        (4 * c * to.0 * to.1) as u64
    }
}

/// Shared selective operator cost per token.
pub fn ssm_token_macs(dim: usize, state_dim: usize, selective: bool) -> u64 {
    let (d, n) = (dim as u64, state_dim as u64);
    let proj = if selective { d * d + 2 * n * d } else { 0 };
    proj + 3 * d * n + d
}

/// Internal split/merge plus one pass per band over a `c × h × w` input.
pub fn fa_scan_macs(c: usize, h: usize, w: usize, token_macs: u64) -> u64 {
    let tokens = (h.div_ceil(2) * w.div_ceil(2)) as u64;
    2 * haar_macs(c, h, w) + 4 * tokens * token_macs
}

/// As [`fa_scan_macs`] with four directional passes per band.
pub fn cross_scan_macs(c: usize, h: usize, w: usize, token_macs: u64) -> u64 {
    let tokens = (h.div_ceil(2) * w.div_ceil(2)) as u64;
    2 * haar_macs(c, h, w) + 4 * 4 * tokens * token_macs
}

/// Offset predictor (two 3×3 convolutions) and bilinear resampling on a
/// band of `c × h × w`.
pub fn align_macs(c: usize, h: usize, w: usize, hidden: usize) -> u64 {
    conv_macs(h, w, 3 * c, hidden, 3) + conv_macs(h, w, hidden, 2, 3) + (4 * c * h * w) as u64
}

pub fn lgb_macs(c: usize, h: usize, w: usize, cfg: &LgbConfig) -> Result<u64> {
    let hid = c / cfg.ratio;
    let gate = match cfg.gate()? {
        GateKind::Eca => (c * cfg.eca_kernel) as u64,
        GateKind::Gse => (2 * c * (c / cfg.gse_reduction)) as u64,
    };
    Ok(pointwise_macs(h, w, c, hid)
        + depthwise_macs(h, w, hid, 3)
        + pointwise_macs(h, w, hid, c)
        + gate
        + (h * w * c) as u64)
}

/// Probe module on a carrier of `c × h × w` gating three bands of the same
/// shape.
pub fn asgp_macs(c: usize, h: usize, w: usize, cfg: &AsgpConfig) -> u64 {
    let (hw, d, n) = ((h * w) as u64, cfg.embed_dim as u64, cfg.probes as u64);
    let c64 = c as u64;
    let gate = 3 * c64 * hw;
    let potential = d * c64 * hw + n * d * hw + n * hw;
    match cfg.gate {
        GateMode::Open => 0,
        GateMode::StaticM0 => potential + gate,
        GateMode::Active => {
            let per_probe = 4 * c64 + d * c64 + 2 * d + 4 + 2 * n;
            let evolve = cfg.steps as u64 * n * per_probe;
            let score = n * (4 * c64 + c64);
            potential + evolve + score + n * hw + gate
        }
    }
}

/// Accumulates MACs by component name as operators execute.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Meter {
    counts: BTreeMap<String, u64>,
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, component: impl Into<String>, macs: u64) {
        *self.counts.entry(component.into()).or_insert(0) += macs;
    }

    pub fn get(&self, component: &str) -> u64 {
        self.counts.get(component).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn into_report(self) -> FlopReport {
        FlopReport { components: self.counts }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub components: BTreeMap<String, u64>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.components.values().sum()
    }

    pub fn get(&self, component: &str) -> u64 {
        self.components.get(component).copied().unwrap_or(0)
    }

    /// Sum over components whose name ends with `.{suffix}` or equals it,
    /// e.g. `scan` across all stages.
    pub fn by_kind(&self, suffix: &str) -> u64 {
        let dotted = format!(".{suffix}");
        self.components
            .iter()
            .filter(|(k, _)| k.as_str() == suffix || k.ends_with(&dotted))
            .map(|(_, v)| v)
            .sum()
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "component,macs")?;
        for (k, v) in &self.components {
            writeln!(f, "{k},{v}")?;
        }
        write!(f, "total,{}", self.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_closed_form_and_area_scaling() {
        assert_eq!(conv_macs(10, 12, 3, 5, 3), 10 * 12 * 3 * 5 * 9);
        assert_eq!(conv_macs(20, 24, 3, 5, 3), 4 * conv_macs(10, 12, 3, 5, 3));
        assert_eq!(pointwise_macs(4, 4, 2, 3), conv_macs(4, 4, 2, 3, 1));
    }

    #[test]
    fn cross_scan_costs_four_times_the_scan_term() {
        let tok = ssm_token_macs(16, 8, true);
        let (fa, cross) = (fa_scan_macs(16, 32, 32, tok), cross_scan_macs(16, 32, 32, tok));
        let haar = 2 * haar_macs(16, 32, 32);
        assert!(cross > fa);
        assert_eq!(cross - haar, 4 * (fa - haar));
    }

    #[test]
    fn open_gate_is_free() {
        let cfg = AsgpConfig {
            gate: GateMode::Open,
            ..AsgpConfig::default()
        };
        assert_eq!(asgp_macs(16, 32, 32, &cfg), 0);
        assert!(asgp_macs(16, 32, 32, &AsgpConfig::default()) > 0);
    }

    #[test]
    fn meter_accumulates() {
        let mut m = Meter::new();
        m.add("s1.scan", 5);
        m.add("s1.scan", 7);
        m.add("s2.scan", 1);
        m.add("head", 2);
        let r = m.into_report();
        assert_eq!(r.get("s1.scan"), 12);
        assert_eq!(r.by_kind("scan"), 13);
        assert_eq!(r.total(), 15);
    }
}
