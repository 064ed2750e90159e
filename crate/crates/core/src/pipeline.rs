//! Forward-only segmentation network: stem, four resolution-preserving
//! frequency blocks with strided downsampling between them, multi-scale
//! gated fusion, boundary refinement and a logistic head.

use std::fmt;
use std::str::FromStr;

use crate::asgp::{apply_spatial, blend_gate, coarse_potential, probe_masks, AsgpConfig, AsgpWeights, GateMode, Mask, ProbeSet};
use crate::error::{dim_err, FgosError, Result};
use crate::fablock::{cross_scan, fa_scan, lgb, LgbConfig, ScanAssignment};
use crate::flops::{
    align_macs, asgp_macs, conv_macs, cross_scan_macs, depthwise_macs, fa_scan_macs, haar_macs, lgb_macs,
    pointwise_macs, resize_macs, ssm_token_macs, FlopReport, Meter,
};
use crate::grid::FeatureGrid;
use crate::nn::{conv2d, dense, depthwise_conv, pointwise, relu, relu_grid, scale_channels, sigmoid};
use crate::sample::{resize_bilinear, sample_pixel};
use crate::ssm::SsmParams;
use crate::wavelet::{dwt_haar, idwt_haar, SubbandSet};
use crate::weights::{seeded_init, ParamSpec, WeightStore};

pub const STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// One trajectory per band chosen by the assignment.
    #[default]
    FrequencyAligned,
    /// Four raster directions per band, averaged.
    Cross,
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMode::FrequencyAligned => "fa",
            ScanMode::Cross => "cross",
        })
    }
}

impl FromStr for ScanMode {
    type Err = FgosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fa" | "fa-scan" | "aligned" => Ok(ScanMode::FrequencyAligned),
            "cross" | "cross-scan" => Ok(ScanMode::Cross),
            other => Err(FgosError::Config(format!("unknown scan mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PsiMode {
    /// Input-dependent operator loaded from the weights.
    #[default]
    Selective,
    /// Pass-through operator: zero readout, unit skip.
    Identity,
}

impl FromStr for PsiMode {
    type Err = FgosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "selective" => Ok(PsiMode::Selective),
            "identity" => Ok(PsiMode::Identity),
            other => Err(FgosError::Config(format!("unknown psi mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub channels: [usize; STAGES],
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub state_dim: usize,
    pub lgb: LgbConfig,
    pub assignment: ScanAssignment,
    pub scan: ScanMode,
    pub psi: PsiMode,
    pub asgp: AsgpConfig,
    /// Shared width of the fusion decoder.
    pub gfa_width: usize,
    /// Maximum alignment displacement in normalized units.
    pub align_bound: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 64, 128],
            stem_kernel: 3,
            stem_stride: 1,
            state_dim: 8,
            lgb: LgbConfig::default(),
            assignment: ScanAssignment::default(),
            scan: ScanMode::FrequencyAligned,
            psi: PsiMode::Selective,
            asgp: AsgpConfig::default(),
            gfa_width: 16,
            align_bound: 0.25,
            seed: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| FgosError::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl PipelineConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FgosError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "channels" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse_num(key, p)).collect::<Result<_>>()?;
                self.channels = parts
                    .try_into()
                    .map_err(|_| FgosError::Config(format!("channels needs {STAGES} values")))?;
            }
            "stem_kernel" => self.stem_kernel = parse_num(key, v)?,
            "stem_stride" => self.stem_stride = parse_num(key, v)?,
            "state_dim" => self.state_dim = parse_num(key, v)?,
            "policy" => self.lgb.policy = v.to_ascii_uppercase(),
            "assignment" => self.assignment = v.parse()?,
            "scan" => self.scan = v.parse()?,
            "psi" => self.psi = v.parse()?,
            "gfa_width" => self.gfa_width = parse_num(key, v)?,
            "align_bound" => self.align_bound = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "asgp.steps" => self.asgp.steps = parse_num(key, v)?,
            "asgp.probes" => self.asgp.probes = parse_num(key, v)?,
            "asgp.radius" => self.asgp.radius = parse_num(key, v)?,
            "asgp.lambda1" => self.asgp.lambda1 = parse_num(key, v)?,
            "asgp.lambda2" => self.asgp.lambda2 = parse_num(key, v)?,
            "asgp.eps" => self.asgp.eps = parse_num(key, v)?,
            "asgp.blend" => self.asgp.blend = parse_num(key, v)?,
            "asgp.splat_sigma" => self.asgp.splat_sigma = parse_num(key, v)?,
            "asgp.embed_dim" => self.asgp.embed_dim = parse_num(key, v)?,
            "asgp.offset_scale" => self.asgp.offset_scale = parse_num(key, v)?,
            "asgp.gate" => self.asgp.gate = v.parse()?,
            other => return Err(FgosError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Back to `key = value` text accepted by [`PipelineConfig::parse`].
    pub fn to_text(&self) -> String {
        let c = &self.channels;
        let a = &self.asgp;
        format!(
            "channels = {},{},{},{}\nstem_kernel = {}\nstem_stride = {}\nstate_dim = {}\npolicy = {}\n\
             assignment = {}\nscan = {}\npsi = {}\ngfa_width = {}\nalign_bound = {}\nseed = {}\n\
             asgp.steps = {}\nasgp.probes = {}\nasgp.radius = {}\nasgp.lambda1 = {}\nasgp.lambda2 = {}\n\
             asgp.eps = {}\nasgp.blend = {}\nasgp.splat_sigma = {}\nasgp.embed_dim = {}\n\
             asgp.offset_scale = {}\nasgp.gate = {}\n",
            c[0],
            c[1],
            c[2],
            c[3],
            self.stem_kernel,
            self.stem_stride,
            self.state_dim,
            self.lgb.policy,
            self.assignment,
            self.scan,
            match self.psi {
                PsiMode::Selective => "selective",
                PsiMode::Identity => "identity",
            },
            self.gfa_width,
            self.align_bound,
            self.seed,
            a.steps,
            a.probes,
            a.radius,
            a.lambda1,
            a.lambda2,
            a.eps,
            a.blend,
            a.splat_sigma,
            a.embed_dim,
            a.offset_scale,
            a.gate
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0 || c % 4 != 0) {
            return Err(FgosError::Config(format!("stage channels must be positive multiples of 4, got {:?}", self.channels)));
        }
        if self.stem_kernel.is_multiple_of(2) || self.stem_stride == 0 {
            return Err(FgosError::Config("stem kernel must be odd and stride positive".into()));
        }
        if self.gfa_width == 0 || !self.gfa_width.is_multiple_of(4) || self.state_dim == 0 {
            return Err(FgosError::Config("fusion width must be a positive multiple of 4, state_dim positive".into()));
        }
        if !(self.align_bound >= 0.0 && self.align_bound.is_finite()) {
            return Err(FgosError::Config("align_bound must be non-negative".into()));
        }
        self.lgb.validate()?;
        for (i, &c) in self.channels.iter().enumerate() {
            self.lgb.for_stage(i + 1).param_specs("", c)?;
        }
        self.asgp.validate()
    }

    /// Smallest accepted square input side.
    pub fn min_input(&self) -> usize {
        64 * self.stem_stride
    }

    /// Input sides must be multiples of `32 · stride` and at least
    /// `64 · stride`, so every block sees even sides `>= 8` whose low band
    /// is itself even.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let unit = 32 * self.stem_stride;
        if h < self.min_input() || w < self.min_input() || !h.is_multiple_of(unit) || !w.is_multiple_of(unit) {
            return dim_err(format!(
                "input {h}x{w} must have sides divisible by {unit} and at least {}",
                self.min_input()
            ));
        }
        Ok(())
    }

    /// Spatial size entering each stage.
    pub fn stage_shapes(&self, h: usize, w: usize) -> [(usize, usize); STAGES] {
        let (mut sh, mut sw) = (h / self.stem_stride, w / self.stem_stride);
        let mut out = [(0, 0); STAGES];
        for slot in out.iter_mut() {
            *slot = (sh, sw);
            sh /= 2;
            sw /= 2;
        }
        out
    }

    fn align_hidden(&self, stage: usize) -> usize {
        self.channels[stage] / 4
    }

    pub fn weight_specs(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let mut specs = Vec::new();
        let k = self.stem_kernel;
        let c = self.channels;
        let g = self.gfa_width;
        specs.push(ParamSpec::new("stem.w", &[c[0], 1, k, k]));
        specs.push(ParamSpec::new("stem.b", &[c[0]]));
        for s in 0..STAGES {
            let p = format!("s{}.", s + 1);
            let hid = self.align_hidden(s);
            specs.push(ParamSpec::new(format!("{p}align.conv1.w"), &[hid, 3 * c[s], 3, 3]));
            specs.push(ParamSpec::new(format!("{p}align.conv1.b"), &[hid]));
            specs.push(ParamSpec::new(format!("{p}align.conv2.w"), &[2, hid, 3, 3]));
            specs.push(ParamSpec::new(format!("{p}align.conv2.b"), &[2]));
            specs.extend(SsmParams::param_specs(&p, c[s], self.state_dim));
            specs.extend(self.lgb.for_stage(s + 1).param_specs(&format!("{p}lgb."), c[s])?);
            specs.extend(AsgpWeights::param_specs(&p, c[s], &self.asgp));
            if s + 1 < STAGES {
                specs.push(ParamSpec::new(format!("down{}.w", s + 1), &[c[s + 1], c[s], 3, 3]));
                specs.push(ParamSpec::new(format!("down{}.b", s + 1), &[c[s + 1]]));
            }
        }
        for (i, &ci) in c.iter().enumerate() {
            let p = format!("gfa.l{}.", i + 1);
            specs.push(ParamSpec::new(format!("{p}proj.w"), &[g, ci]));
            specs.push(ParamSpec::new(format!("{p}proj.b"), &[g]));
            specs.push(ParamSpec::new(format!("{p}gate.w1"), &[g / 4, g]));
            specs.push(ParamSpec::new(format!("{p}gate.b1"), &[g / 4]));
            specs.push(ParamSpec::new(format!("{p}gate.w2"), &[g, g / 4]));
            specs.push(ParamSpec::new(format!("{p}gate.b2"), &[g]));
        }
        specs.push(ParamSpec::new("gfa.fuse.w", &[g, g, 3, 3]));
        specs.push(ParamSpec::new("gfa.fuse.b", &[g]));
        specs.extend(brm_param_specs("brm.", g));
        specs.push(ParamSpec::new("head.w", &[1, g]));
        specs.push(ParamSpec::new("head.b", &[1]));
        Ok(specs)
    }

    pub fn seeded_weights(&self) -> Result<WeightStore> {
        seeded_init(&self.weight_specs()?, self.seed)
    }

    fn stage_prefix(stage: usize) -> String {
        format!("s{}.", stage + 1)
    }

    /// Probe initialization seed for a 0-based stage.
    pub fn probe_seed(&self, stage: usize) -> u64 {
        self.seed.wrapping_add(stage as u64 + 1)
    }

    fn token_macs(&self, c: usize) -> u64 {
        match self.psi {
            PsiMode::Selective => ssm_token_macs(c, self.state_dim, true),
            PsiMode::Identity => SsmParams::identity(c).macs_per_token(),
        }
    }
}

/// Offset-predictor weights of one alignment unit.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignWeights {
    pub channels: usize,
    pub hidden: usize,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub bound: f64,
}

impl AlignWeights {
    pub fn from_store(store: &WeightStore, prefix: &str, channels: usize, hidden: usize, bound: f64) -> Result<Self> {
        let get = |n: &str, s: &[usize]| store.expect(&format!("{prefix}align.{n}"), s);
        Ok(Self {
            channels,
            hidden,
            conv1_w: get("conv1.w", &[hidden, 3 * channels, 3, 3])?,
            conv1_b: get("conv1.b", &[hidden])?,
            conv2_w: get("conv2.w", &[2, hidden, 3, 3])?,
            conv2_b: get("conv2.b", &[2])?,
            bound,
        })
    }

    pub fn zeros(channels: usize, hidden: usize, bound: f64) -> Self {
        Self {
            channels,
            hidden,
            conv1_w: vec![0.0; hidden * 3 * channels * 9],
            conv1_b: vec![0.0; hidden],
            conv2_w: vec![0.0; 2 * hidden * 9],
            conv2_b: vec![0.0; 2],
            bound,
        }
    }
}

/// Bounded normalized displacement field `(dx, dy)` predicted from the
/// concatenated high bands.
pub fn align_offsets(high: [&FeatureGrid; 3], w: &AlignWeights) -> Result<FeatureGrid> {
    let input = FeatureGrid::concat_channels(&high)?;
    if input.channels() != 3 * w.channels {
        return dim_err(format!(
            "alignment expects {} band channels, got {}",
            3 * w.channels,
            input.channels()
        ));
    }
    let hidden = relu_grid(&conv2d(&input, &w.conv1_w, &w.conv1_b, w.hidden, 3, 1)?);
    let raw = conv2d(&hidden, &w.conv2_w, &w.conv2_b, 2, 3, 1)?;
    let bound = w.bound;
    Ok(raw.map(|v| bound * v.tanh()))
}

/// Resamples `x_ll` at the identity lattice displaced by `offsets`
/// (normalized units), clamping at the border.
pub fn warp(x_ll: &FeatureGrid, offsets: &FeatureGrid) -> Result<FeatureGrid> {
    let (c, h, w) = x_ll.shape();
    if offsets.shape() != (2, h, w) {
        return dim_err(format!("offset field {:?} does not match {h}x{w}", offsets.shape()));
    }
    let (sx, sy) = ((w.max(2) - 1) as f64 / 2.0, (h.max(2) - 1) as f64 / 2.0);
    let mut out = FeatureGrid::zeros(c, h, w);
    for r in 0..h {
        for col in 0..w {
            let dx = offsets.get(0, r, col);
            let dy = offsets.get(1, r, col);
            let v = sample_pixel(x_ll, r as f64 + dy * sy, col as f64 + dx * sx);
            for (ch, val) in v.into_iter().enumerate() {
                out.set(ch, r, col, val);
            }
        }
    }
    Ok(out)
}

/// Warps the low band along offsets predicted from the high bands.
pub fn align(x_ll: &FeatureGrid, high: [&FeatureGrid; 3], w: &AlignWeights) -> Result<FeatureGrid> {
    if high.iter().any(|b| b.shape() != x_ll.shape()) {
        return dim_err("low and high bands differ in shape");
    }
    if x_ll.channels() != w.channels {
        return dim_err(format!("alignment expects {} channels, got {}", w.channels, x_ll.channels()));
    }
    warp(x_ll, &align_offsets(high, w)?)
}

pub fn brm_param_specs(prefix: &str, g: usize) -> Vec<ParamSpec> {
    let p = |n: &str, s: &[usize]| ParamSpec::new(format!("{prefix}{n}"), s);
    vec![
        p("ctx.dw.w", &[g, 3, 3]),
        p("ctx.dw.b", &[g]),
        p("ctx.pw.w", &[g, g]),
        p("ctx.pw.b", &[g]),
        p("edge.dw.w", &[g, 3, 3]),
        p("edge.dw.b", &[g]),
        p("proj.w", &[g, 2 * g]),
        p("proj.b", &[g]),
    ]
}

/// Context branch `relu(pw(dw(x)))`.
pub fn brm_context(x: &FeatureGrid, w: &WeightStore, prefix: &str) -> Result<FeatureGrid> {
    let g = x.channels();
    let get = |n: &str, s: &[usize]| w.expect(&format!("{prefix}{n}"), s);
    let dw = depthwise_conv(x, &get("ctx.dw.w", &[g, 3, 3])?, &get("ctx.dw.b", &[g])?, 3)?;
    Ok(relu_grid(&pointwise(&dw, &get("ctx.pw.w", &[g, g])?, &get("ctx.pw.b", &[g])?, g)?))
}

/// Edge branch: one depthwise 3×3.
pub fn brm_edge(x: &FeatureGrid, w: &WeightStore, prefix: &str) -> Result<FeatureGrid> {
    let g = x.channels();
    depthwise_conv(
        x,
        &w.expect(&format!("{prefix}edge.dw.w"), &[g, 3, 3])?,
        &w.expect(&format!("{prefix}edge.dw.b"), &[g])?,
        3,
    )
}

/// `x + proj(concat(context(x), edge(x)))`.
pub fn brm(x: &FeatureGrid, w: &WeightStore, prefix: &str) -> Result<FeatureGrid> {
    let g = x.channels();
    let both = FeatureGrid::concat_channels(&[&brm_context(x, w, prefix)?, &brm_edge(x, w, prefix)?])?;
    let proj = pointwise(
        &both,
        &w.expect(&format!("{prefix}proj.w"), &[g, 2 * g])?,
        &w.expect(&format!("{prefix}proj.b"), &[g])?,
        g,
    )?;
    x.add(&proj)
}

/// Intermediate values of the fusion decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GfaParts {
    /// Projected levels resized to the finest resolution.
    pub levels: Vec<FeatureGrid>,
    /// Channel gates per level.
    pub gates: Vec<Vec<f64>>,
    /// Gated sum before the final convolution.
    pub sum: FeatureGrid,
    pub fused: FeatureGrid,
}

pub fn gfa_parts(features: &[FeatureGrid], w: &WeightStore, width: usize) -> Result<GfaParts> {
    if features.len() != STAGES {
        return Err(FgosError::Config(format!("fusion needs {STAGES} levels, got {}", features.len())));
    }
    let (th, tw) = (features[0].height(), features[0].width());
    let g = width;
    let mut levels = Vec::with_capacity(STAGES);
    let mut gates = Vec::with_capacity(STAGES);
    let mut sum = FeatureGrid::zeros(g, th, tw);
    for (i, f) in features.iter().enumerate() {
        let p = format!("gfa.l{}.", i + 1);
        let get = |n: &str, s: &[usize]| w.expect(&format!("{p}{n}"), s);
        let c = f.channels();
        let proj = pointwise(f, &get("proj.w", &[g, c])?, &get("proj.b", &[g])?, g)?;
        let up = resize_bilinear(&proj, th, tw)?;
        let pooled = up.channel_means();
        let hidden: Vec<f64> = dense(&get("gate.w1", &[g / 4, g])?, &get("gate.b1", &[g / 4])?, &pooled)
            .into_iter()
            .map(relu)
            .collect();
        let gate: Vec<f64> = dense(&get("gate.w2", &[g, g / 4])?, &get("gate.b2", &[g])?, &hidden)
            .into_iter()
            .map(sigmoid)
            .collect();
        sum = sum.add(&scale_channels(&up, &gate))?;
        levels.push(up);
        gates.push(gate);
    }
    let fused = conv2d(&sum, &w.expect("gfa.fuse.w", &[g, g, 3, 3])?, &w.expect("gfa.fuse.b", &[g])?, g, 3, 1)?;
    Ok(GfaParts {
        levels,
        gates,
        sum,
        fused,
    })
}

/// Projects, resizes, gates and sums the four levels, then a 3×3 conv.
pub fn gfa(features: &[FeatureGrid], w: &WeightStore, width: usize) -> Result<FeatureGrid> {
    Ok(gfa_parts(features, w, width)?.fused)
}

/// Gate state of one block, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    pub m0: Option<Mask>,
    pub m1: Option<Mask>,
    pub gate: Mask,
    pub probes: Option<ProbeSet>,
}

/// Weights resolved for one stage.
struct StageModel {
    channels: usize,
    align: AlignWeights,
    psi: SsmParams,
    asgp: AsgpWeights,
    lgb: LgbConfig,
    prefix: String,
    probe_seed: u64,
}

/// A configuration bound to a weight store, with per-stage tensors
/// resolved once.
pub struct Model<'a> {
    cfg: PipelineConfig,
    store: &'a WeightStore,
    stages: Vec<StageModel>,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &PipelineConfig, store: &'a WeightStore) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(STAGES);
        for s in 0..STAGES {
            let c = cfg.channels[s];
            let prefix = PipelineConfig::stage_prefix(s);
            let psi = match cfg.psi {
                PsiMode::Selective => SsmParams::from_store(store, &prefix, c, cfg.state_dim)?,
                PsiMode::Identity => SsmParams::identity(c),
            };
            stages.push(StageModel {
                channels: c,
                align: AlignWeights::from_store(store, &prefix, c, cfg.align_hidden(s), cfg.align_bound)?,
                psi,
                asgp: AsgpWeights::from_store(store, &prefix, c, &cfg.asgp)?,
                lgb: cfg.lgb.for_stage(s + 1),
                prefix,
                probe_seed: cfg.probe_seed(s),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            store,
            stages,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// One frequency block of 0-based `stage`.
    pub fn block(&self, stage: usize, x: &FeatureGrid, meter: &mut Meter) -> Result<(FeatureGrid, BlockTrace)> {
        let st = self.stages.get(stage).ok_or_else(|| FgosError::Config(format!("no stage {stage}")))?;
        let (c, h, w) = x.shape();
        if c != st.channels {
            return dim_err(format!("stage {} expects {} channels, got {c}", stage + 1, st.channels));
        }
        if h < 8 || w < 8 || h % 4 != 0 || w % 4 != 0 {
            return dim_err(format!("block input {h}x{w} must have sides >= 8 divisible by 4"));
        }
        let name = |part: &str| format!("s{}.{part}", stage + 1);
        let bands = dwt_haar(x)?;
        meter.add(name("dwt"), haar_macs(c, h, w));
        let (bh, bw) = (h / 2, w / 2);
        let high = bands.high();

        let x_ll = align(&bands.ll, high, &st.align)?;
        meter.add(name("align"), align_macs(c, bh, bw, st.align.hidden));

        let scanned = match self.cfg.scan {
            ScanMode::FrequencyAligned => {
                meter.add(name("scan"), fa_scan_macs(c, bh, bw, st.psi.macs_per_token()));
                fa_scan(&x_ll, &st.psi, &self.cfg.assignment)?
            }
            ScanMode::Cross => {
                meter.add(name("scan"), cross_scan_macs(c, bh, bw, st.psi.macs_per_token()));
                cross_scan(&x_ll, &st.psi)?
            }
        };
        let low = lgb(&scanned, &st.lgb, self.store, &format!("{}lgb.", st.prefix))?;
        meter.add(name("lgb"), lgb_macs(c, bh, bw, &st.lgb)?);

        let acfg = &self.cfg.asgp;
        let trace = match acfg.gate {
            GateMode::Open => BlockTrace {
                m0: None,
                m1: None,
                gate: Mask::filled(1, bh, bw, 1.0),
                probes: None,
            },
            GateMode::StaticM0 => {
                let probes = st.asgp.probes(acfg, st.probe_seed)?;
                let m0 = coarse_potential(&probes, &x_ll, &st.asgp)?;
                let gate = blend_gate(&m0, &m0, bh, bw, acfg)?;
                BlockTrace {
                    m0: Some(m0),
                    m1: None,
                    gate,
                    probes: Some(probes),
                }
            }
            GateMode::Active => {
                let (m0, m1, probes) = probe_masks(&x_ll, acfg, &st.asgp, st.probe_seed)?;
                let gate = blend_gate(&m0, &m1, bh, bw, acfg)?;
                BlockTrace {
                    m0: Some(m0),
                    m1: Some(m1),
                    gate,
                    probes: Some(probes),
                }
            }
        };
        meter.add(name("asgp"), asgp_macs(c, bh, bw, acfg));
        let [lh, hl, hh] = high.map(|b| apply_spatial(b, &trace.gate));

        let out = idwt_haar(&SubbandSet::new(low, lh, hl, hh)?, h, w)?;
        meter.add(name("idwt"), haar_macs(c, h, w));
        Ok((out, trace))
    }

    pub fn forward(&self, image: &FeatureGrid) -> Result<Mask> {
        Ok(self.forward_metered(image, &mut Meter::new())?.mask)
    }

    pub fn forward_metered(&self, image: &FeatureGrid, meter: &mut Meter) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let (ic, h, w) = image.shape();
        if ic != 1 {
            return dim_err(format!("forward expects a single-channel image, got {ic} channels"));
        }
        cfg.check_input(h, w)?;
        let shapes = cfg.stage_shapes(h, w);
        let k = cfg.stem_kernel;
        let c = cfg.channels;
        let s = self.store;
        let mut x = relu_grid(&conv2d(
            image,
            &s.expect("stem.w", &[c[0], 1, k, k])?,
            &s.expect("stem.b", &[c[0]])?,
            c[0],
            k,
            cfg.stem_stride,
        )?);
        meter.add("stem", conv_macs(x.height(), x.width(), 1, c[0], k));
        let mut features = Vec::with_capacity(STAGES);
        let mut traces = Vec::with_capacity(STAGES);
        for stage in 0..STAGES {
            if (x.height(), x.width()) != shapes[stage] || x.channels() != c[stage] {
                return dim_err(format!(
                    "stage {} received {:?}, planned {:?}",
                    stage + 1,
                    x.shape(),
                    shapes[stage]
                ));
            }
            let (y, trace) = self.block(stage, &x, meter)?;
            traces.push(trace);
            if stage + 1 < STAGES {
                let name = format!("down{}", stage + 1);
                x = relu_grid(&conv2d(
                    &y,
                    &s.expect(&format!("{name}.w"), &[c[stage + 1], c[stage], 3, 3])?,
                    &s.expect(&format!("{name}.b"), &[c[stage + 1]])?,
                    c[stage + 1],
                    3,
                    2,
                )?);
                meter.add(name, conv_macs(x.height(), x.width(), c[stage], c[stage + 1], 3));
            }
            features.push(y);
        }
        let g = cfg.gfa_width;
        let fused = gfa(&features, s, g)?;
        meter.add("gfa", gfa_macs(&features.iter().map(FeatureGrid::shape).collect::<Vec<_>>(), g));
        let refined = brm(&fused, s, "brm.")?;
        meter.add("brm", brm_macs(refined.height(), refined.width(), g));
        let mut logits = pointwise(&refined, &s.expect("head.w", &[1, g])?, &s.expect("head.b", &[1])?, 1)?;
        meter.add("head", pointwise_macs(logits.height(), logits.width(), g, 1));
        if (logits.height(), logits.width()) != (h, w) {
            meter.add("head", resize_macs(1, (logits.height(), logits.width()), (h, w)));
            logits = resize_bilinear(&logits, h, w)?;
        }
        Ok(ForwardOutput {
            mask: logits.map(sigmoid),
            features,
            traces,
            fused,
            refined,
        })
    }
}

fn gfa_macs(shapes: &[(usize, usize, usize)], g: usize) -> u64 {
    let (_, th, tw) = shapes[0];
    let mut total = 0;
    for &(c, h, w) in shapes {
        total += pointwise_macs(h, w, c, g) + resize_macs(g, (h, w), (th, tw)) + (2 * g * (g / 4)) as u64;
    }
    total + (shapes.len() * g * th * tw) as u64 + conv_macs(th, tw, g, g, 3)
}

fn brm_macs(h: usize, w: usize, g: usize) -> u64 {
    2 * depthwise_macs(h, w, g, 3) + pointwise_macs(h, w, g, g) + pointwise_macs(h, w, 2 * g, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub mask: Mask,
    /// Block outputs per stage, before downsampling.
    pub features: Vec<FeatureGrid>,
    pub traces: Vec<BlockTrace>,
    pub fused: FeatureGrid,
    pub refined: FeatureGrid,
}

/// `image` (1×H×W) to a mask in `(0, 1)` of the same size.
pub fn forward(image: &FeatureGrid, cfg: &PipelineConfig, w: &WeightStore) -> Result<Mask> {
    Model::new(cfg, w)?.forward(image)
}

/// One frequency block of 1-based `stage` with weights from `w`.
pub fn fgos_block(x: &FeatureGrid, stage: usize, cfg: &PipelineConfig, w: &WeightStore) -> Result<FeatureGrid> {
    if !(1..=STAGES).contains(&stage) {
        return Err(FgosError::Config(format!("stage must be 1..={STAGES}, got {stage}")));
    }
    Ok(Model::new(cfg, w)?.block(stage - 1, x, &mut Meter::new())?.0)
}

/// Closed-form MACs for an input of `h × w`, computed from the
/// configuration alone.
pub fn flop_estimate(cfg: &PipelineConfig, h: usize, w: usize) -> Result<FlopReport> {
    cfg.validate()?;
    cfg.check_input(h, w)?;
    let mut m = Meter::new();
    let shapes = cfg.stage_shapes(h, w);
    let c = cfg.channels;
    m.add("stem", conv_macs(shapes[0].0, shapes[0].1, 1, c[0], cfg.stem_kernel));
    for s in 0..STAGES {
        let (sh, sw) = shapes[s];
        let (bh, bw) = (sh / 2, sw / 2);
        let name = |part: &str| format!("s{}.{part}", s + 1);
        m.add(name("dwt"), haar_macs(c[s], sh, sw));
        m.add(name("align"), align_macs(c[s], bh, bw, cfg.align_hidden(s)));
        let tok = cfg.token_macs(c[s]);
        m.add(
            name("scan"),
            match cfg.scan {
                ScanMode::FrequencyAligned => fa_scan_macs(c[s], bh, bw, tok),
                ScanMode::Cross => cross_scan_macs(c[s], bh, bw, tok),
            },
        );
        m.add(name("lgb"), lgb_macs(c[s], bh, bw, &cfg.lgb.for_stage(s + 1))?);
        m.add(name("asgp"), asgp_macs(c[s], bh, bw, &cfg.asgp));
        m.add(name("idwt"), haar_macs(c[s], sh, sw));
        if s + 1 < STAGES {
            let (nh, nw) = shapes[s + 1];
            m.add(format!("down{}", s + 1), conv_macs(nh, nw, c[s], c[s + 1], 3));
        }
    }
    let levels: Vec<_> = (0..STAGES).map(|s| (c[s], shapes[s].0, shapes[s].1)).collect();
    let g = cfg.gfa_width;
    m.add("gfa", gfa_macs(&levels, g));
    m.add("brm", brm_macs(shapes[0].0, shapes[0].1, g));
    m.add("head", pointwise_macs(shapes[0].0, shapes[0].1, g, 1));
    m.add("head", resize_macs(1, shapes[0], (h, w)));
    Ok(m.into_report())
}
