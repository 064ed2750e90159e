//! Active probing on the low-frequency carrier: a coarse attention potential,
//! gradient-guided probe evolution with truncated repulsion, splatted
//! refinement and the blended high-frequency gate.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, FgosError, Result};
use crate::grid::{FeatureGrid, NormCoord};
use crate::nn::{dense, relu, sigmoid};
use crate::sample::{bilinear_gradient, sample_point};
use crate::weights::{ParamSpec, WeightStore};

/// Single-channel map with values in `(0, 1)`.
pub type Mask = FeatureGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub coords: Vec<NormCoord>,
    /// Query vectors, one per probe.
    pub embeddings: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

impl ProbeSet {
    pub fn new(coords: Vec<NormCoord>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if coords.is_empty() {
            return Err(FgosError::Config("a probe set needs at least one probe".into()));
        }
        if embeddings.len() != coords.len() {
            return dim_err(format!("{} coords but {} embeddings", coords.len(), embeddings.len()));
        }
        let d = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != d) {
            return dim_err("probe embeddings differ in length");
        }
        if coords.iter().any(|c| !(c.x.is_finite() && c.y.is_finite())) {
            return Err(FgosError::Input("non-finite probe coordinate".into()));
        }
        let n = coords.len();
        Ok(Self {
            coords: coords.into_iter().map(NormCoord::clamped).collect(),
            embeddings,
            scores: vec![0.5; n],
        })
    }

    /// `n` probes on a jittered grid covering `[-1, 1]²`, zero embeddings.
    pub fn jittered_grid(n: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        let coords = jittered_coords(n, seed)?;
        Self::new(coords, vec![vec![0.0; embed_dim]; n])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(self.coords[i].distance(self.coords[j]));
            }
        }
        best
    }
}

/// One point per cell of a `g × ceil(n/g)` layout, jittered by up to a
/// quarter cell around the cell center.
pub fn jittered_coords(n: usize, seed: u64) -> Result<Vec<NormCoord>> {
    if n == 0 {
        return Err(FgosError::Config("probe count must be positive".into()));
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cw, ch) = (2.0 / cols as f64, 2.0 / rows as f64);
    Ok((0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let jx = rng.gen_range(-0.25..0.25) * cw;
            let jy = rng.gen_range(-0.25..0.25) * ch;
            NormCoord::new(-1.0 + (c as f64 + 0.5) * cw + jx, -1.0 + (r as f64 + 0.5) * ch + jy)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GateMode {
    /// Blend of the coarse potential and the evolved splat mask.
    #[default]
    Active,
    /// Coarse potential only; no evolution.
    StaticM0,
    /// Pass-through, `M = 1`.
    Open,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Active => "active",
            GateMode::StaticM0 => "static",
            GateMode::Open => "open",
        })
    }
}

impl FromStr for GateMode {
    type Err = FgosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "active" => Ok(GateMode::Active),
            "static" | "static-m0" | "m0" => Ok(GateMode::StaticM0),
            "open" | "off" | "none" => Ok(GateMode::Open),
            other => Err(FgosError::Config(format!("unknown gate mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsgpConfig {
    pub steps: usize,
    pub probes: usize,
    pub radius: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
    pub blend: f64,
    /// Gaussian splat bandwidth in normalized units.
    pub splat_sigma: f64,
    pub embed_dim: usize,
    /// Bound on the per-step semantic offset, applied through `tanh`.
    pub offset_scale: f64,
    pub gate: GateMode,
}

impl Default for AsgpConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            probes: 64,
            radius: 0.15,
            lambda1: 0.1,
            lambda2: 0.05,
            eps: 1e-5,
            blend: 0.5,
            splat_sigma: 0.1,
            embed_dim: 16,
            offset_scale: 0.05,
            gate: GateMode::Active,
        }
    }
}

impl AsgpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("radius", self.radius),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("eps", self.eps),
            ("splat_sigma", self.splat_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FgosError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(FgosError::Config(format!("blend must lie in [0, 1], got {}", self.blend)));
        }
        if self.probes == 0 || self.embed_dim == 0 {
            return Err(FgosError::Config("probe count and embedding width must be positive".into()));
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return Err(FgosError::Config("offset_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Learned tensors of one probing module.
#[derive(Clone, Debug, PartialEq)]
pub struct AsgpWeights {
    pub channels: usize,
    pub embed_dim: usize,
    /// `embed_dim × channels` key projection.
    pub key: Vec<f64>,
    /// `probes × embed_dim` query embeddings.
    pub query: Vec<f64>,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
    pub score_w: Vec<f64>,
    pub score_b: f64,
}

impl AsgpWeights {
    pub fn param_specs(prefix: &str, channels: usize, cfg: &AsgpConfig) -> Vec<ParamSpec> {
        let d = cfg.embed_dim;
        let p = |n: &str, s: &[usize]| ParamSpec::new(format!("{prefix}{n}"), s);
        vec![
            p("asgp.key", &[d, channels]),
            p("asgp.query", &[cfg.probes, d]),
            p("asgp.mlp1.w", &[d, channels]),
            p("asgp.mlp1.b", &[d]),
            p("asgp.mlp2.w", &[2, d]),
            p("asgp.mlp2.b", &[2]),
            p("asgp.score.w", &[1, channels]),
            p("asgp.score.b", &[1]),
        ]
    }

    pub fn from_store(store: &WeightStore, prefix: &str, channels: usize, cfg: &AsgpConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let get = |n: &str, s: &[usize]| store.expect(&format!("{prefix}{n}"), s);
        Ok(Self {
            channels,
            embed_dim: d,
            key: get("asgp.key", &[d, channels])?,
            query: get("asgp.query", &[cfg.probes, d])?,
            mlp_w1: get("asgp.mlp1.w", &[d, channels])?,
            mlp_b1: get("asgp.mlp1.b", &[d])?,
            mlp_w2: get("asgp.mlp2.w", &[2, d])?,
            mlp_b2: get("asgp.mlp2.b", &[2])?,
            score_w: get("asgp.score.w", &[1, channels])?,
            score_b: get("asgp.score.b", &[1])?[0],
        })
    }

    /// All-zero weights: uniform attention, no semantic offset, score 0.5.
    pub fn zeros(channels: usize, cfg: &AsgpConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            channels,
            embed_dim: d,
            key: vec![0.0; d * channels],
            query: vec![0.0; cfg.probes * d],
            mlp_w1: vec![0.0; d * channels],
            mlp_b1: vec![0.0; d],
            mlp_w2: vec![0.0; 2 * d],
            mlp_b2: vec![0.0; 2],
            score_w: vec![0.0; channels],
            score_b: 0.0,
        }
    }

    /// Probe set with stored queries on a seeded jittered grid.
    pub fn probes(&self, cfg: &AsgpConfig, seed: u64) -> Result<ProbeSet> {
        let coords = jittered_coords(cfg.probes, seed)?;
        let embeddings = self.query.chunks(self.embed_dim).map(<[f64]>::to_vec).collect();
        ProbeSet::new(coords, embeddings)
    }

    fn check_channels(&self, x: &FeatureGrid) -> Result<()> {
        if x.channels() != self.channels {
            return dim_err(format!(
                "probe weights expect {} channels, carrier has {}",
                self.channels,
                x.channels()
            ));
        }
        Ok(())
    }

    /// Bounded semantic offset `scale · tanh(MLP(f))`.
    pub fn semantic_offset(&self, features: &[f64], scale: f64) -> [f64; 2] {
        let hidden: Vec<f64> = dense(&self.mlp_w1, &self.mlp_b1, features).into_iter().map(relu).collect();
        let out = dense(&self.mlp_w2, &self.mlp_b2, &hidden);
        [scale * out[0].tanh(), scale * out[1].tanh()]
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        sigmoid(dense(&self.score_w, &[self.score_b], features)[0])
    }
}

/// `σ(mean_i HW · softmax_p(q_i · k_p / √d))`.
pub fn coarse_potential(probes: &ProbeSet, x_ll: &FeatureGrid, w: &AsgpWeights) -> Result<Mask> {
    w.check_channels(x_ll)?;
    let d = probes.embed_dim();
    if d != w.embed_dim {
        return dim_err(format!("probe embeddings have width {d}, keys have {}", w.embed_dim));
    }
    let (c, h, wd) = x_ll.shape();
    let hw = h * wd;
    // keys laid out position-major, `hw × d`
    let mut keys = vec![0.0; hw * d];
    for k in 0..d {
        let row = &w.key[k * c..(k + 1) * c];
        for (ch, &wv) in row.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            for (p, &v) in x_ll.plane(ch).iter().enumerate() {
                keys[p * d + k] += wv * v;
            }
        }
    }
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut acc = vec![0.0; hw];
    let mut logits = vec![0.0; hw];
    for q in &probes.embeddings {
        let mut max = f64::NEG_INFINITY;
        for (p, l) in logits.iter_mut().enumerate() {
            *l = keys[p * d..(p + 1) * d].iter().zip(q).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_d;
            max = max.max(*l);
        }
        let mut z = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        let s = hw as f64 / z;
        for (a, l) in acc.iter_mut().zip(&logits) {
            *a += l * s;
        }
    }
    let n = probes.len() as f64;
    Mask::from_vec(1, h, wd, acc.into_iter().map(|v| sigmoid(v / n)).collect())
}

/// Truncated pairwise repulsion on probe `i`.
pub fn diversity_force(coords: &[NormCoord], i: usize, radius: f64, eps: f64) -> [f64; 2] {
    let ci = coords[i];
    let mut f = [0.0; 2];
    for (j, &cj) in coords.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = ci.distance(cj);
        let weight = (1.0 - d / radius).max(0.0);
        if weight == 0.0 {
            continue;
        }
        f[0] += (ci.x - cj.x) / (d + eps) * weight;
        f[1] += (ci.y - cj.y) / (d + eps) * weight;
    }
    f
}

fn check_mask(m: &Mask) -> Result<()> {
    if m.channels() != 1 {
        return dim_err(format!("mask must be single-channel, got {}", m.channels()));
    }
    Ok(())
}

/// One synchronous update of every probe.
fn evolve_step(m0: &Mask, x_ll: &FeatureGrid, coords: &[NormCoord], cfg: &AsgpConfig, w: &AsgpWeights) -> Result<Vec<NormCoord>> {
    coords
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let feat = sample_point(x_ll, c);
            let sem = w.semantic_offset(&feat, cfg.offset_scale);
            let g = bilinear_gradient(m0, c)?;
            let rep = diversity_force(coords, i, cfg.radius, cfg.eps);
            Ok(NormCoord::new(
                c.x + sem[0] + cfg.lambda1 * g[0] + cfg.lambda2 * rep[0],
                c.y + sem[1] + cfg.lambda1 * g[1] + cfg.lambda2 * rep[1],
            )
            .clamped())
        })
        .collect()
}

/// Runs `cfg.steps` evolution steps and returns the coordinates after every
/// step, starting with the initial ones (`steps + 1` entries).
pub fn evolve_probes_traced(
    m0: &Mask,
    x_ll: &FeatureGrid,
    probes: &ProbeSet,
    cfg: &AsgpConfig,
    w: &AsgpWeights,
) -> Result<Vec<Vec<NormCoord>>> {
    cfg.validate()?;
    check_mask(m0)?;
    w.check_channels(x_ll)?;
    let mut trace = vec![probes.coords.clone()];
    for _ in 0..cfg.steps {
        let next = evolve_step(m0, x_ll, trace.last().expect("non-empty"), cfg, w)?;
        trace.push(next);
    }
    Ok(trace)
}

/// Evolves the probes and scores them at their final positions.
pub fn evolve_probes(m0: &Mask, x_ll: &FeatureGrid, probes: &ProbeSet, cfg: &AsgpConfig, w: &AsgpWeights) -> Result<ProbeSet> {
    let coords = evolve_probes_traced(m0, x_ll, probes, cfg, w)?.pop().expect("non-empty");
    let scores = coords.iter().map(|&c| w.score(&sample_point(x_ll, c))).collect();
    Ok(ProbeSet {
        coords,
        embeddings: probes.embeddings.clone(),
        scores,
    })
}

/// `σ(Σ_i score_i · exp(-|p - c_i|² / 2σ_s²))` on a `height × width` lattice.
pub fn refine_mask(probes: &ProbeSet, height: usize, width: usize, splat_sigma: f64) -> Result<Mask> {
    if height == 0 || width == 0 {
        return dim_err("mask shape must be non-empty");
    }
    if probes.scores.len() != probes.len() {
        return dim_err("probe scores do not match probe count");
    }
    let inv = 1.0 / (2.0 * splat_sigma * splat_sigma);
    let xs: Vec<f64> = (0..width).map(|c| crate::grid::index_to_norm(c, width)).collect();
    let ys: Vec<f64> = (0..height).map(|r| crate::grid::index_to_norm(r, height)).collect();
    let mut acc = vec![0.0; height * width];
    for (c, &s) in probes.coords.iter().zip(&probes.scores) {
        if s == 0.0 {
            continue;
        }
        // separable Gaussian
        let gx: Vec<f64> = xs.iter().map(|x| (-(x - c.x).powi(2) * inv).exp()).collect();
        for (r, y) in ys.iter().enumerate() {
            let gy = s * (-(y - c.y).powi(2) * inv).exp();
            for (a, g) in acc[r * width..(r + 1) * width].iter_mut().zip(&gx) {
                *a += gy * g;
            }
        }
    }
    Mask::from_vec(1, height, width, acc.into_iter().map(sigmoid).collect())
}

/// Averages 2×2 blocks when `m` is twice the target size; otherwise the
/// shapes must already agree.
fn fit_mask(m: &Mask, h: usize, w: usize) -> Result<Mask> {
    check_mask(m)?;
    if m.height() == h && m.width() == w {
        return Ok(m.clone());
    }
    if m.height().div_ceil(2) == h && m.width().div_ceil(2) == w {
        let (mh, mw) = (m.height(), m.width());
        return Ok(Mask::from_fn(1, h, w, |_, r, c| {
            let r1 = (2 * r + 1).min(mh - 1);
            let c1 = (2 * c + 1).min(mw - 1);
            0.25 * (m.get(0, 2 * r, 2 * c) + m.get(0, 2 * r, c1) + m.get(0, r1, 2 * c) + m.get(0, r1, c1))
        }));
    }
    dim_err(format!("mask {}x{} does not fit bands {h}x{w}", m.height(), m.width()))
}

/// The blended spatial gate `σ(w M1 + (1 - w) M0)` at `height × width`.
pub fn blend_gate(m0: &Mask, m1: &Mask, height: usize, width: usize, cfg: &AsgpConfig) -> Result<Mask> {
    let m0 = fit_mask(m0, height, width)?;
    match cfg.gate {
        GateMode::Open => Ok(Mask::filled(1, height, width, 1.0)),
        GateMode::StaticM0 => Ok(m0.map(sigmoid)),
        GateMode::Active => {
            let m1 = fit_mask(m1, height, width)?;
            let wgt = cfg.blend;
            m1.zip_with(&m0, |a, b| sigmoid(wgt * a + (1.0 - wgt) * b))
        }
    }
}

/// Multiplies every high band by the blended gate.
pub fn asgp_gate(m0: &Mask, m1: &Mask, high: [&FeatureGrid; 3], cfg: &AsgpConfig) -> Result<[FeatureGrid; 3]> {
    let shape = high[0].shape();
    if high.iter().any(|b| b.shape() != shape) {
        return dim_err("high bands differ in shape");
    }
    let gate = blend_gate(m0, m1, shape.1, shape.2, cfg)?;
    Ok(high.map(|b| apply_spatial(b, &gate)))
}

pub(crate) fn apply_spatial(x: &FeatureGrid, gate: &Mask) -> FeatureGrid {
    let mut out = x.clone();
    let g = gate.plane(0);
    for c in 0..out.channels() {
        out.plane_mut(c).iter_mut().zip(g).for_each(|(v, m)| *v *= m);
    }
    out
}

/// Coarse potential, evolution and refinement for one carrier. Returns
/// `(M0, M1, evolved probes)`; under [`GateMode::StaticM0`] and
/// [`GateMode::Open`] the probes are not evolved and `M1` is the initial splat.
pub fn probe_masks(x_ll: &FeatureGrid, cfg: &AsgpConfig, w: &AsgpWeights, seed: u64) -> Result<(Mask, Mask, ProbeSet)> {
    cfg.validate()?;
    let probes = w.probes(cfg, seed)?;
    let m0 = coarse_potential(&probes, x_ll, w)?;
    let evolved = match cfg.gate {
        GateMode::Active => evolve_probes(&m0, x_ll, &probes, cfg, w)?,
        _ => probes,
    };
    let m1 = refine_mask(&evolved, x_ll.height(), x_ll.width(), cfg.splat_sigma)?;
    Ok((m0, m1, evolved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::seeded_init;

    fn cfg() -> AsgpConfig {
        AsgpConfig::default()
    }

    fn random_grid(seed: u64, c: usize, h: usize, w: usize) -> FeatureGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureGrid::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_weights(c: usize, seed: u64) -> AsgpWeights {
        let store = seeded_init(&AsgpWeights::param_specs("", c, &cfg()), seed).unwrap();
        AsgpWeights::from_store(&store, "", c, &cfg()).unwrap()
    }

    fn single(c: NormCoord, d: usize) -> ProbeSet {
        ProbeSet::new(vec![c], vec![vec![0.0; d]]).unwrap()
    }

    #[test]
    fn uniform_attention_gives_sigmoid_one() {
        let x = random_grid(1, 4, 6, 6);
        let w = AsgpWeights::zeros(4, &cfg());
        let probes = w.probes(&cfg(), 0).unwrap();
        let m0 = coarse_potential(&probes, &x, &w).unwrap();
        for &v in m0.data() {
            assert!((v - 0.731_058_578_630_004_9).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_key_concentrates_potential() {
        let mut x = FeatureGrid::zeros(2, 5, 5);
        x.set(0, 3, 1, 10.0);
        let c = AsgpConfig {
            embed_dim: 2,
            probes: 1,
            ..cfg()
        };
        let mut w = AsgpWeights::zeros(2, &c);
        w.key = vec![1.0, 0.0, 0.0, 1.0];
        let probes = ProbeSet::new(vec![NormCoord::new(0.0, 0.0)], vec![vec![3.0, 0.0]]).unwrap();
        let m0 = coarse_potential(&probes, &x, &w).unwrap();
        let (best, _) = m0
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        assert_eq!(best, 3 * 5 + 1);
    }

    #[test]
    fn potential_is_in_range_and_permutation_invariant() {
        let x = random_grid(2, 8, 7, 9);
        let w = random_weights(8, 3);
        let probes = w.probes(&cfg(), 4).unwrap();
        let m0 = coarse_potential(&probes, &x, &w).unwrap();
        assert!(m0.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut shuffled = probes.clone();
        shuffled.embeddings.reverse();
        shuffled.coords.reverse();
        let m0b = coarse_potential(&shuffled, &x, &w).unwrap();
        assert!(m0.max_abs_diff(&m0b).unwrap() < 1e-12);
    }

    #[test]
    fn potential_rejects_mismatched_widths() {
        let x = random_grid(2, 8, 4, 4);
        let w = random_weights(8, 3);
        let probes = ProbeSet::new(vec![NormCoord::default()], vec![vec![0.0; 5]]).unwrap();
        assert!(matches!(coarse_potential(&probes, &x, &w), Err(FgosError::Dimension(_))));
        assert!(coarse_potential(&w.probes(&cfg(), 0).unwrap(), &random_grid(1, 3, 4, 4), &w).is_err());
    }

    #[test]
    fn ramp_gradient_moves_probe_by_lambda1_times_slope() {
        // slope 0.2 per normalized unit: 0.05 per pixel, 4 pixels per unit
        let m0 = Mask::from_fn(1, 9, 9, |_, _, c| 0.05 * c as f64);
        let x = FeatureGrid::zeros(2, 9, 9);
        let c = AsgpConfig { steps: 1, ..cfg() };
        let w = AsgpWeights::zeros(2, &c);
        let p = single(NormCoord::new(0.1, 0.3), c.embed_dim);
        let out = evolve_probes(&m0, &x, &p, &c, &w).unwrap();
        assert!((out.coords[0].x - 0.12).abs() < 1e-12);
        assert!((out.coords[0].y - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_probe_repulsion() {
        let c = AsgpConfig { steps: 1, ..cfg() };
        let m0 = Mask::filled(1, 8, 8, 0.5);
        let x = FeatureGrid::zeros(2, 8, 8);
        let w = AsgpWeights::zeros(2, &c);
        let p = ProbeSet::new(
            vec![NormCoord::new(-0.0375, 0.0), NormCoord::new(0.0375, 0.0)],
            vec![vec![0.0; c.embed_dim]; 2],
        )
        .unwrap();
        let out = evolve_probes(&m0, &x, &p, &c, &w).unwrap();
        let exact = 0.05 * 0.075 / (0.075 + 1e-5) * 0.5;
        assert!((out.coords[0].x - (-0.0375 - exact)).abs() < 1e-12);
        assert!((out.coords[1].x - (0.0375 + exact)).abs() < 1e-12);
        assert!((exact - 0.025).abs() < 1e-5);
        assert!((out.coords[1].x - out.coords[0].x - 0.125).abs() < 1e-5);
    }

    #[test]
    fn projection_clamps_to_unit_square() {
        let c = AsgpConfig {
            steps: 1,
            offset_scale: 0.05,
            ..cfg()
        };
        let mut w = AsgpWeights::zeros(2, &c);
        w.mlp_b2 = vec![50.0, 0.0];
        let p = single(NormCoord::new(0.999, 0.0), c.embed_dim);
        let m0 = Mask::filled(1, 6, 6, 0.5);
        let out = evolve_probes(&m0, &FeatureGrid::zeros(2, 6, 6), &p, &c, &w).unwrap();
        assert_eq!(out.coords[0], NormCoord::new(1.0, 0.0));
    }

    #[test]
    fn evolution_keeps_coords_in_range_with_random_weights() {
        let x = random_grid(5, 8, 16, 16);
        let w = random_weights(8, 6);
        let c = AsgpConfig { steps: 7, ..cfg() };
        let probes = w.probes(&c, 7).unwrap();
        let m0 = coarse_potential(&probes, &x, &w).unwrap();
        for step in evolve_probes_traced(&m0, &x, &probes, &c, &w).unwrap() {
            assert!(step.iter().all(|p| p.x.abs() <= 1.0 && p.y.abs() <= 1.0));
        }
    }

    #[test]
    fn repulsion_is_resolution_invariant() {
        let c = AsgpConfig { steps: 1, ..cfg() };
        let coords = jittered_coords(64, 3).unwrap();
        let p = ProbeSet::new(coords, vec![vec![0.0; c.embed_dim]; 64]).unwrap();
        let run = |n: usize| {
            let w = AsgpWeights::zeros(2, &c);
            evolve_probes(&Mask::filled(1, n, n, 0.3), &FeatureGrid::zeros(2, n, n), &p, &c, &w).unwrap()
        };
        assert_eq!(run(16).coords, run(32).coords);
    }

    #[test]
    fn refine_mask_basics() {
        let mut p = ProbeSet::new(
            vec![NormCoord::new(-0.4, 0.2), NormCoord::new(0.4, 0.2)],
            vec![vec![0.0; 2]; 2],
        )
        .unwrap();
        p.scores = vec![0.0, 0.0];
        let m = refine_mask(&p, 9, 11, 0.1).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.5));

        p.scores = vec![0.7, 0.7];
        let m = refine_mask(&p, 9, 11, 0.1).unwrap();
        assert!(m.max_abs_diff(&m.flip_horizontal()).unwrap() < 1e-6);

        let mut one = single(NormCoord::new(0.0, 0.0), 2);
        one.scores = vec![20.0];
        let m = refine_mask(&one, 9, 9, 0.1).unwrap();
        let center = m.get(0, 4, 4);
        assert!(m.data().iter().all(|&v| v <= center));
        for k in 0..4 {
            assert!(m.get(0, 4, 4 + k) > m.get(0, 4, 5 + k));
        }
    }

    #[test]
    fn gate_values() {
        let c = cfg();
        let z = Mask::zeros(1, 4, 4);
        let band = FeatureGrid::filled(2, 4, 4, 3.0);
        let out = asgp_gate(&z, &z, [&band, &band, &band], &c).unwrap();
        assert!(out.iter().all(|b| b.data().iter().all(|&v| v == 1.5)));

        let m0 = Mask::filled(1, 4, 4, 0.8);
        let m1 = Mask::filled(1, 4, 4, 0.4);
        let g = blend_gate(&m0, &m1, 4, 4, &c).unwrap();
        assert!((g.get(0, 0, 0) - 0.645_656_306_225_795).abs() < 1e-12);

        let zero = FeatureGrid::zeros(2, 4, 4);
        let out = asgp_gate(&m0, &m1, [&zero, &zero, &zero], &c).unwrap();
        assert!(out.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));

        let open = AsgpConfig {
            gate: GateMode::Open,
            ..c
        };
        let out = asgp_gate(&m0, &m1, [&band, &band, &band], &open).unwrap();
        assert_eq!(out[0], band);
    }

    #[test]
    fn full_resolution_masks_are_pooled() {
        let c = cfg();
        let m0 = Mask::from_fn(1, 8, 8, |_, r, _| if r < 4 { 1.0 } else { 0.0 });
        let g = blend_gate(&m0, &Mask::zeros(1, 4, 4), 4, 4, &c).unwrap();
        assert!((g.get(0, 0, 0) - sigmoid(0.5)).abs() < 1e-12);
        assert!(blend_gate(&Mask::zeros(1, 5, 4), &Mask::zeros(1, 4, 4), 4, 4, &c).is_err());
    }

    #[test]
    fn gate_preserves_signs() {
        let x = random_grid(9, 3, 6, 6);
        let m0 = random_grid(10, 1, 6, 6);
        let m1 = random_grid(11, 1, 6, 6);
        let out = asgp_gate(&m0, &m1, [&x, &x, &x], &cfg()).unwrap();
        for (a, b) in out[1].data().iter().zip(x.data()) {
            assert!(a.signum() == b.signum() && a.abs() < b.abs());
        }
    }

    #[test]
    fn config_validation() {
        assert!(AsgpConfig { radius: 0.0, ..cfg() }.validate().is_err());
        assert!(AsgpConfig { blend: 1.5, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
        assert_eq!("static".parse::<GateMode>().unwrap(), GateMode::StaticM0);
    }

    #[test]
    fn jittered_grid_spreads_probes() {
        let c = jittered_coords(64, 1).unwrap();
        assert_eq!(c.len(), 64);
        assert!(c.iter().all(|p| p.x.abs() < 1.0 && p.y.abs() < 1.0));
        let p = ProbeSet::new(c, vec![vec![0.0]; 64]).unwrap();
        assert!(p.min_pairwise_distance() > 0.1);
        assert_eq!(jittered_coords(64, 1).unwrap(), jittered_coords(64, 1).unwrap());
    }
}
