//! Python bindings. Grids cross the boundary as nested lists:
//! `[C][H][W]` for feature grids and `[H][W]` for single-channel images
//! and masks.

use std::path::PathBuf;

use fgos_core::asgp::{blend_gate, evolve_probes, evolve_probes_traced, refine_mask};
use fgos_core::io::{load_weights, save_weights};
use fgos_core::metrics::cldice_parts;
use fgos_core::scan::{along_structure_gaps, locality_cost};
use fgos_core::synth::Orientation;
use fgos_core::{
    build_scan_order, cross_scan, dwt_haar, fa_scan, flop_estimate, generate_sample, idwt_haar, ods, region_metrics, AsgpConfig,
    AsgpWeights, BinaryMask, FeatureGrid, FgosError, Model, PipelineConfig, ProbeSet, ScanAssignment, ScanKind, SsmParams,
    SubbandSet, SynthConfig, WeightStore,
};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Grid3 = Vec<Vec<Vec<f64>>>;
type Grid2 = Vec<Vec<f64>>;
type Bits = Vec<Vec<bool>>;
type Trajectory = Vec<Vec<(f64, f64)>>;

fn err(e: FgosError) -> PyErr {
    match e {
        FgosError::Io { .. } => PyIOError::new_err(e.to_string()),
        FgosError::MissingWeight(_) => PyKeyError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_grid(x: Grid3) -> PyResult<FeatureGrid> {
    let c = x.len();
    let h = x.first().map_or(0, Vec::len);
    let w = x.first().and_then(|p| p.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(c * h * w);
    for plane in x {
        if plane.len() != h {
            return Err(PyValueError::new_err("ragged grid: planes differ in height"));
        }
        for row in plane {
            if row.len() != w {
                return Err(PyValueError::new_err("ragged grid: rows differ in width"));
            }
            data.extend(row);
        }
    }
    FeatureGrid::from_vec(c, h, w, data).map_err(err)
}

fn to_image(x: Grid2) -> PyResult<FeatureGrid> {
    to_grid(vec![x])
}

fn from_grid(g: &FeatureGrid) -> Grid3 {
    let (c, h, w) = g.shape();
    (0..c)
        .map(|k| (0..h).map(|r| (0..w).map(|col| g.get(k, r, col)).collect()).collect())
        .collect()
}

fn from_plane(g: &FeatureGrid) -> Grid2 {
    from_grid(g).swap_remove(0)
}

fn to_mask(x: Bits) -> PyResult<BinaryMask> {
    let h = x.len();
    let w = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged mask"));
    }
    BinaryMask::from_bits(h, w, x.into_iter().flatten().collect()).map_err(err)
}

fn from_mask(m: &BinaryMask) -> Bits {
    (0..m.height()).map(|r| (0..m.width()).map(|c| m.get(r, c)).collect()).collect()
}

/// Haar analysis; returns `(ll, lh, hl, hh)`.
#[pyfunction]
fn dwt(x: Grid3) -> PyResult<(Grid3, Grid3, Grid3, Grid3)> {
    let s = dwt_haar(&to_grid(x)?).map_err(err)?;
    Ok((from_grid(&s.ll), from_grid(&s.lh), from_grid(&s.hl), from_grid(&s.hh)))
}

/// Haar synthesis back to `height × width`.
#[pyfunction]
fn idwt(ll: Grid3, lh: Grid3, hl: Grid3, hh: Grid3, height: usize, width: usize) -> PyResult<Grid3> {
    let s = SubbandSet::new(to_grid(ll)?, to_grid(lh)?, to_grid(hl)?, to_grid(hh)?).map_err(err)?;
    Ok(from_grid(&idwt_haar(&s, height, width).map_err(err)?))
}

#[pyclass(name = "ScanOrder", frozen)]
struct PyScanOrder {
    inner: fgos_core::ScanOrder,
}

#[pymethods]
impl PyScanOrder {
    #[new]
    fn new(kind: &str, height: usize, width: usize) -> PyResult<Self> {
        let kind: ScanKind = kind.parse().map_err(err)?;
        Ok(Self { inner: build_scan_order(kind, height, width).map_err(err)? })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.height(), self.inner.width())
    }

    /// Visit index of every row-major cell.
    fn forward(&self) -> Vec<u32> {
        self.inner.forward().to_vec()
    }

    /// Row-major cell visited at every step.
    fn inverse(&self) -> Vec<u32> {
        self.inner.inverse().to_vec()
    }

    fn visits(&self) -> Vec<(usize, usize)> {
        self.inner.visits().collect()
    }

    fn locality_cost(&self) -> PyResult<f64> {
        locality_cost(&self.inner).map_err(err)
    }

    /// Gaps between consecutive structure pixels (`> 0.5`) along the order.
    fn structure_gaps(&self, mask: Grid2) -> PyResult<Vec<u32>> {
        Ok(along_structure_gaps(&to_image(mask)?, &self.inner).map_err(err)?.gaps)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("ScanOrder('{}', {}, {})", self.inner.kind(), self.inner.height(), self.inner.width())
    }
}

#[pyclass(name = "Ssm", frozen)]
struct PySsm {
    inner: SsmParams,
}

#[pymethods]
impl PySsm {
    /// Single-state recurrence `h = a h + b u`, `y = c h + skip u` per channel.
    #[staticmethod]
    #[pyo3(signature = (dim, transition, b=1.0, c=1.0, skip=0.0))]
    fn static_decay(dim: usize, transition: f64, b: f64, c: f64, skip: f64) -> PyResult<Self> {
        Ok(Self { inner: SsmParams::static_decay(dim, transition, b, c, skip).map_err(err)? })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self { inner: SsmParams::identity(dim) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Runs the recurrence over `tokens` given as `[L][dim]`.
    #[pyo3(signature = (tokens, parallel=false))]
    fn scan(&self, tokens: Grid2, parallel: bool) -> PyResult<Grid2> {
        let d = self.inner.dim;
        if tokens.iter().any(|t| t.len() != d) {
            return Err(PyValueError::new_err(format!("every token needs {d} values")));
        }
        let flat: Vec<f64> = tokens.into_iter().flatten().collect();
        let y = if parallel {
            fgos_core::ssm_scan_parallel(&self.inner, &flat)
        } else {
            fgos_core::ssm_scan_sequential(&self.inner, &flat)
        }
        .map_err(err)?;
        Ok(y.chunks(d.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// Frequency-aligned scan of a `[C][H][W]` grid; `assign` is a row name
    /// such as `"D1"` or `"ll=hilbert,lh=h,hl=v,hh=hilbert"`.
    #[pyo3(signature = (x, assign="D1"))]
    fn fa_scan(&self, x: Grid3, assign: &str) -> PyResult<Grid3> {
        let a: ScanAssignment = assign.parse().map_err(err)?;
        Ok(from_grid(&fa_scan(&to_grid(x)?, &self.inner, &a).map_err(err)?))
    }

    fn cross_scan(&self, x: Grid3) -> PyResult<Grid3> {
        Ok(from_grid(&cross_scan(&to_grid(x)?, &self.inner).map_err(err)?))
    }
}

#[pyclass(name = "Pipeline", frozen)]
struct PyPipeline {
    cfg: PipelineConfig,
    weights: WeightStore,
}

#[pymethods]
impl PyPipeline {
    /// `config` is `key = value` text; weights are seeded from it unless a
    /// `.fgw` path is given.
    #[new]
    #[pyo3(signature = (config="", weights=None))]
    fn new(config: &str, weights: Option<PathBuf>) -> PyResult<Self> {
        let cfg = PipelineConfig::parse(config).map_err(err)?;
        let weights = match weights {
            Some(p) => load_weights(&p).map_err(err)?,
            None => cfg.seeded_weights().map_err(err)?,
        };
        Model::new(&cfg, &weights).map_err(err)?;
        Ok(Self { cfg, weights })
    }

    #[getter]
    fn config(&self) -> String {
        self.cfg.to_text()
    }

    #[getter]
    fn min_input(&self) -> usize {
        self.cfg.min_input()
    }

    fn parameter_count(&self) -> usize {
        self.weights.iter().map(|(_, b)| b.data.len()).sum()
    }

    fn save_weights(&self, path: PathBuf) -> PyResult<()> {
        save_weights(&path, &self.weights).map_err(err)
    }

    /// Structure probability for an `[H][W]` image in `[0, 1]`.
    fn forward(&self, py: Python<'_>, image: Grid2) -> PyResult<Grid2> {
        let img = to_image(image)?;
        let mask = py
            .detach(|| Model::new(&self.cfg, &self.weights).and_then(|m| m.forward(&img)))
            .map_err(err)?;
        Ok(from_plane(&mask))
    }

    /// Multiply-accumulate counts per component.
    fn flops<'py>(&self, py: Python<'py>, height: usize, width: usize) -> PyResult<Bound<'py, PyDict>> {
        let report = flop_estimate(&self.cfg, height, width).map_err(err)?;
        let d = PyDict::new(py);
        for (k, v) in &report.components {
            d.set_item(k, v)?;
        }
        Ok(d)
    }
}

/// Evolves probes on a potential field `m0` (`[H][W]`) with zero semantic
/// weights. Returns the trajectory `[steps + 1][N](x, y)`, the refined mask
/// and the blended gate.
#[pyfunction]
#[pyo3(signature = (m0, steps=3, probes=64, seed=0))]
fn evolve(m0: Grid2, steps: usize, probes: usize, seed: u64) -> PyResult<(Trajectory, Grid2, Grid2)> {
    let cfg = AsgpConfig { steps, probes, ..AsgpConfig::default() };
    let m0 = to_image(m0)?;
    let (_, h, w) = m0.shape();
    let weights = AsgpWeights::zeros(1, &cfg);
    let start = ProbeSet::jittered_grid(probes, cfg.embed_dim, seed).map_err(err)?;
    let trace = evolve_probes_traced(&m0, &m0, &start, &cfg, &weights).map_err(err)?;
    let evolved = evolve_probes(&m0, &m0, &start, &cfg, &weights).map_err(err)?;
    let m1 = refine_mask(&evolved, h, w, cfg.splat_sigma).map_err(err)?;
    let gate = blend_gate(&m0, &m1, h, w, &cfg).map_err(err)?;
    let trace = trace.into_iter().map(|cs| cs.into_iter().map(|p| (p.x, p.y)).collect()).collect();
    Ok((trace, from_plane(&m1), from_plane(&gate)))
}

/// `{miou, f1, precision, recall}` of `pred >= threshold` against `gt`.
#[pyfunction]
#[pyo3(signature = (pred, gt, threshold=0.5))]
fn metrics<'py>(py: Python<'py>, pred: Grid2, gt: Bits, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = region_metrics(&to_image(pred)?, &to_mask(gt)?, threshold).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("miou", m.miou)?;
    d.set_item("f1", m.f1)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    Ok(d)
}

/// Dataset-wide best F1 over the threshold grid; returns `(f1, threshold)`.
#[pyfunction]
fn ods_score(preds: Vec<Grid2>, gts: Vec<Bits>) -> PyResult<(f64, f64)> {
    let preds = preds.into_iter().map(to_image).collect::<PyResult<Vec<_>>>()?;
    let gts = gts.into_iter().map(to_mask).collect::<PyResult<Vec<_>>>()?;
    let r = ods(&preds, &gts).map_err(err)?;
    Ok((r.f1, r.threshold))
}

/// `(score, topology_precision, topology_sensitivity)`.
#[pyfunction]
fn cldice(pred: Bits, gt: Bits) -> PyResult<(f64, f64, f64)> {
    let c = cldice_parts(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?;
    Ok((c.score, c.tprec, c.tsens))
}

#[pyfunction]
fn dice(pred: Bits, gt: Bits) -> PyResult<f64> {
    fgos_core::dice(&to_mask(pred)?, &to_mask(gt)?).map_err(err)
}

#[pyfunction]
fn skeletonize(mask: Bits) -> PyResult<Bits> {
    Ok(from_mask(&fgos_core::skeletonize(&to_mask(mask)?)))
}

/// Synthetic curvilinear sample; returns `(image, gt, skeleton)`.
#[pyfunction]
#[pyo3(signature = (seed=0, size=64, orientation="bezier", curves=3))]
fn synth(seed: u64, size: usize, orientation: &str, curves: usize) -> PyResult<(Grid2, Bits, Bits)> {
    let orientation: Orientation = orientation.parse().map_err(err)?;
    let cfg = SynthConfig { height: size, width: size, orientation, curves, seed, ..SynthConfig::default() };
    let s = generate_sample(&cfg).map_err(err)?;
    Ok((from_plane(&s.image), from_mask(&s.gt), from_mask(&s.skeleton)))
}

#[pymodule]
fn fgos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScanOrder>()?;
    m.add_class::<PySsm>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(dwt, m)?)?;
    m.add_function(wrap_pyfunction!(idwt, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(ods_score, m)?)?;
    m.add_function(wrap_pyfunction!(cldice, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(skeletonize, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
