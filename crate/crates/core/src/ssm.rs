//! Diagonal selective state-space scan.
//!
//! Per channel `d` and state `n`, with `A[n] = -exp(a_log[n])`:
//!
//! ```text
//! h_t[d, n] = exp(Δ_t[d] · A[n]) · h_{t-1}[d, n] + Δ_t[d] · B_t[n] · u_t[d]
//! y_t[d]    = Σ_n C_t[n] · h_t[d, n] + skip[d] · u_t[d]
//! ```
//!
//! In selective mode `Δ_t = softplus(W_Δ u_t + b_Δ)`, `B_t = W_B u_t`,
//! `C_t = W_C u_t`; in static mode `Δ`, `B`, `C` are fixed vectors.
//!
//! Sequences are token-major buffers: step `t`, channel `d` lives at
//! `t * dim + d`.

use rayon::prelude::*;

use crate::error::{dim_err, FgosError, Result};
use crate::weights::{ParamSpec, WeightStore};

/// How `Δ`, `B` and `C` are produced at each step.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    /// Input-independent: `delta` per channel (already positive), `b` and
    /// `c` per state.
    Static {
        delta: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
    },
    /// Input-dependent projections. `w_delta` is `dim × dim`, `w_b` and
    /// `w_c` are `state_dim × dim`, all row-major.
    Selective {
        w_delta: Vec<f64>,
        b_delta: Vec<f64>,
        w_b: Vec<f64>,
        w_c: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub dim: usize,
    pub state_dim: usize,
    /// Log of the negated diagonal state matrix, one entry per state.
    pub a_log: Vec<f64>,
    /// Forces `A = 0`: the recurrence becomes a pure accumulator.
    pub integrator: bool,
    pub d_skip: Vec<f64>,
    pub selection: Selection,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl SsmParams {
    /// Static single-state operator with scalar `Δ`, `B`, `C` shared by all
    /// channels and the given per-step transition factor `exp(Δ·A)`.
    pub fn static_decay(dim: usize, transition: f64, b: f64, c: f64, skip: f64) -> Result<Self> {
        if !(transition > 0.0 && transition <= 1.0) {
            return Err(FgosError::Config(format!(
                "transition factor must lie in (0, 1], got {transition}"
            )));
        }
        // Δ = 1, A = ln(transition)
        let integrator = transition == 1.0;
        let a_log = if integrator {
            vec![0.0]
        } else {
            vec![(-transition.ln()).ln()]
        };
        Self::new(
            dim,
            1,
            a_log,
            integrator,
            vec![skip; dim],
            Selection::Static {
                delta: vec![1.0; dim],
                b: vec![b],
                c: vec![c],
            },
        )
    }

    /// `y = u` exactly: zero readout, unit skip.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            state_dim: 1,
            a_log: vec![0.0],
            integrator: false,
            d_skip: vec![1.0; dim],
            selection: Selection::Static {
                delta: vec![1.0; dim],
                b: vec![0.0],
                c: vec![0.0],
            },
        }
    }

    pub fn new(
        dim: usize,
        state_dim: usize,
        a_log: Vec<f64>,
        integrator: bool,
        d_skip: Vec<f64>,
        selection: Selection,
    ) -> Result<Self> {
        let p = Self {
            dim,
            state_dim,
            a_log,
            integrator,
            d_skip,
            selection,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.dim, self.state_dim);
        if d == 0 || n == 0 {
            return dim_err("SSM needs dim and state_dim >= 1");
        }
        let want = |name: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return dim_err(format!("SSM `{name}` has {} entries, expected {len}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FgosError::Input(format!("SSM `{name}` has non-finite entries")));
            }
            Ok(())
        };
        want("a_log", &self.a_log, n)?;
        want("d_skip", &self.d_skip, d)?;
        match &self.selection {
            Selection::Static { delta, b, c } => {
                want("delta", delta, d)?;
                want("b", b, n)?;
                want("c", c, n)?;
                if delta.iter().any(|&x| x <= 0.0) {
                    return Err(FgosError::Config("static Δ must be positive".into()));
                }
            }
            Selection::Selective {
                w_delta,
                b_delta,
                w_b,
                w_c,
            } => {
                want("w_delta", w_delta, d * d)?;
                want("b_delta", b_delta, d)?;
                want("w_b", w_b, n * d)?;
                want("w_c", w_c, n * d)?;
            }
        }
        Ok(())
    }

    pub fn is_selective(&self) -> bool {
        matches!(self.selection, Selection::Selective { .. })
    }

    /// Diagonal of `A`.
    pub fn a_diag(&self) -> Vec<f64> {
        if self.integrator {
            vec![0.0; self.state_dim]
        } else {
            self.a_log.iter().map(|a| -a.exp()).collect()
        }
    }

    /// Weight blocks for a selective operator under `prefix`.
    pub fn param_specs(prefix: &str, dim: usize, state_dim: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}ssm.a_log"), &[state_dim]),
            ParamSpec::new(format!("{prefix}ssm.d"), &[dim]),
            ParamSpec::new(format!("{prefix}ssm.proj_delta.w"), &[dim, dim]),
            ParamSpec::new(format!("{prefix}ssm.proj_delta.b"), &[dim]),
            ParamSpec::new(format!("{prefix}ssm.proj_b.w"), &[state_dim, dim]),
            ParamSpec::new(format!("{prefix}ssm.proj_c.w"), &[state_dim, dim]),
        ]
    }

    /// Loads a selective operator stored under `prefix`.
    pub fn from_store(store: &WeightStore, prefix: &str, dim: usize, state_dim: usize) -> Result<Self> {
        Self::new(
            dim,
            state_dim,
            store.expect(&format!("{prefix}ssm.a_log"), &[state_dim])?,
            false,
            store.expect(&format!("{prefix}ssm.d"), &[dim])?,
            Selection::Selective {
                w_delta: store.expect(&format!("{prefix}ssm.proj_delta.w"), &[dim, dim])?,
                b_delta: store.expect(&format!("{prefix}ssm.proj_delta.b"), &[dim])?,
                w_b: store.expect(&format!("{prefix}ssm.proj_b.w"), &[state_dim, dim])?,
                w_c: store.expect(&format!("{prefix}ssm.proj_c.w"), &[state_dim, dim])?,
            },
        )
    }

    /// Multiply-accumulates per token.
    pub fn macs_per_token(&self) -> u64 {
        let (d, n) = (self.dim as u64, self.state_dim as u64);
        let projections = match self.selection {
            Selection::Static { .. } => 0,
            Selection::Selective { .. } => d * d + 2 * n * d,
        };
        // transition + input term, readout, skip
        projections + 2 * d * n + d * n + d
    }

    /// Fills `delta` (dim), `b` and `c` (state_dim) for one token.
    fn step_inputs(&self, u: &[f64], delta: &mut [f64], b: &mut [f64], c: &mut [f64]) {
        match &self.selection {
            Selection::Static {
                delta: sd,
                b: sb,
                c: sc,
            } => {
                delta.copy_from_slice(sd);
                b.copy_from_slice(sb);
                c.copy_from_slice(sc);
            }
            Selection::Selective {
                w_delta,
                b_delta,
                w_b,
                w_c,
            } => {
                let d = self.dim;
                for (i, out) in delta.iter_mut().enumerate() {
                    let row = &w_delta[i * d..(i + 1) * d];
                    *out = softplus(dot(row, u) + b_delta[i]);
                }
                for (k, (bo, co)) in b.iter_mut().zip(c.iter_mut()).enumerate() {
                    *bo = dot(&w_b[k * d..(k + 1) * d], u);
                    *co = dot(&w_c[k * d..(k + 1) * d], u);
                }
            }
        }
    }

    fn check_tokens(&self, tokens: &[f64]) -> Result<usize> {
        self.validate()?;
        if tokens.is_empty() {
            return dim_err("SSM scan needs a non-empty sequence");
        }
        if !tokens.len().is_multiple_of(self.dim) {
            return dim_err(format!(
                "token buffer of {} values is not a multiple of dim {}",
                tokens.len(),
                self.dim
            ));
        }
        Ok(tokens.len() / self.dim)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference left-to-right evaluation.
pub fn ssm_scan_sequential(params: &SsmParams, tokens: &[f64]) -> Result<Vec<f64>> {
    let len = params.check_tokens(tokens)?;
    let (d, n) = (params.dim, params.state_dim);
    let a = params.a_diag();
    let mut h = vec![0.0; d * n];
    let mut delta = vec![0.0; d];
    let mut bv = vec![0.0; n];
    let mut cv = vec![0.0; n];
    let mut y = vec![0.0; len * d];
    for t in 0..len {
        let u = &tokens[t * d..(t + 1) * d];
        params.step_inputs(u, &mut delta, &mut bv, &mut cv);
        for ch in 0..d {
            let hs = &mut h[ch * n..(ch + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                hs[k] = (delta[ch] * a[k]).exp() * hs[k] + delta[ch] * bv[k] * u[ch];
                acc += cv[k] * hs[k];
            }
            y[t * d + ch] = acc + params.d_skip[ch] * u[ch];
        }
    }
    Ok(y)
}

/// Composition of two affine maps `h -> a·h + b`, earlier one first.
#[inline]
fn combine(prev: (f64, f64), cur: (f64, f64)) -> (f64, f64) {
    (prev.0 * cur.0, cur.0 * prev.1 + cur.1)
}

/// Inclusive scan of per-step affine maps along the time axis, in place.
/// `a` and `b` are `len × width`; each column is an independent recurrence.
///
/// Three phases: local scans inside chunks, a carry pass over chunk totals,
/// then carry application. Phases one and three run chunks in parallel.
pub fn affine_scan_parallel(a: &mut [f64], b: &mut [f64], width: usize, chunk: usize) {
    debug_assert_eq!(a.len(), b.len());
    let chunk_elems = chunk.max(1) * width;
    a.par_chunks_mut(chunk_elems)
        .zip(b.par_chunks_mut(chunk_elems))
        .for_each(|(ac, bc)| {
            let steps = ac.len() / width;
            for t in 1..steps {
                for j in 0..width {
                    let (na, nb) = combine(
                        (ac[(t - 1) * width + j], bc[(t - 1) * width + j]),
                        (ac[t * width + j], bc[t * width + j]),
                    );
                    ac[t * width + j] = na;
                    bc[t * width + j] = nb;
                }
            }
        });
    let chunks = a.len().div_ceil(chunk_elems);
    if chunks <= 1 {
        return;
    }
    // carries[k] = combined map of every chunk before chunk k
    let mut carries = vec![(vec![1.0; width], vec![0.0; width]); chunks];
    for k in 1..chunks {
        let last = (k * chunk_elems) - width;
        let (pa, pb) = carries[k - 1].clone();
        let (ca, cb) = &mut carries[k];
        for j in 0..width {
            let (na, nb) = combine((pa[j], pb[j]), (a[last + j], b[last + j]));
            ca[j] = na;
            cb[j] = nb;
        }
    }
    a.par_chunks_mut(chunk_elems)
        .zip(b.par_chunks_mut(chunk_elems))
        .zip(carries.par_iter())
        .skip(1)
        .for_each(|((ac, bc), (pa, pb))| {
            let steps = ac.len() / width;
            for t in 0..steps {
                for j in 0..width {
                    let (na, nb) = combine((pa[j], pb[j]), (ac[t * width + j], bc[t * width + j]));
                    ac[t * width + j] = na;
                    bc[t * width + j] = nb;
                }
            }
        });
}

/// Default chunk length for [`ssm_scan_parallel`].
pub const DEFAULT_SCAN_CHUNK: usize = 64;

/// Same contract as [`ssm_scan_sequential`], evaluated as a prefix scan over
/// the per-step affine state maps.
pub fn ssm_scan_parallel(params: &SsmParams, tokens: &[f64]) -> Result<Vec<f64>> {
    ssm_scan_parallel_chunked(params, tokens, DEFAULT_SCAN_CHUNK)
}

pub fn ssm_scan_parallel_chunked(params: &SsmParams, tokens: &[f64], chunk: usize) -> Result<Vec<f64>> {
    let len = params.check_tokens(tokens)?;
    let (d, n) = (params.dim, params.state_dim);
    let width = d * n;
    let a_diag = params.a_diag();
    let mut trans = vec![0.0; len * width];
    let mut inp = vec![0.0; len * width];
    let mut readout = vec![0.0; len * n];
    trans
        .par_chunks_mut(width)
        .zip(inp.par_chunks_mut(width))
        .zip(readout.par_chunks_mut(n))
        .enumerate()
        .for_each(|(t, ((at, bt), ct))| {
            let u = &tokens[t * d..(t + 1) * d];
            let mut delta = vec![0.0; d];
            let mut bv = vec![0.0; n];
            params.step_inputs(u, &mut delta, &mut bv, ct);
            for ch in 0..d {
                for k in 0..n {
                    at[ch * n + k] = (delta[ch] * a_diag[k]).exp();
                    bt[ch * n + k] = delta[ch] * bv[k] * u[ch];
                }
            }
        });
    affine_scan_parallel(&mut trans, &mut inp, width, chunk);
    let mut y = vec![0.0; len * d];
    y.par_chunks_mut(d).enumerate().for_each(|(t, yt)| {
        let h = &inp[t * width..(t + 1) * width];
        let c = &readout[t * n..(t + 1) * n];
        for ch in 0..d {
            yt[ch] = dot(c, &h[ch * n..(ch + 1) * n]) + params.d_skip[ch] * tokens[t * d + ch];
        }
    });
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, d: usize, n: usize, selective: bool) -> SsmParams {
        let mut v = |k: usize, s: f64| (0..k).map(|_| rng.gen_range(-s..s)).collect::<Vec<_>>();
        let a_log = v(n, 1.0);
        let d_skip = v(d, 1.0);
        let selection = if selective {
            Selection::Selective {
                w_delta: v(d * d, 0.5),
                b_delta: v(d, 0.5),
                w_b: v(n * d, 0.5),
                w_c: v(n * d, 0.5),
            }
        } else {
            Selection::Static {
                delta: v(d, 1.0).into_iter().map(|x| x.abs() + 0.05).collect(),
                b: v(n, 1.0),
                c: v(n, 1.0),
            }
        };
        SsmParams::new(d, n, a_log, false, d_skip, selection).unwrap()
    }

    fn max_rel(p: &[f64], s: &[f64]) -> f64 {
        let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        p.iter().zip(s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn integrator_gives_prefix_sums() {
        let p = SsmParams::static_decay(1, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(ssm_scan_sequential(&p, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 3.0, 6.0]);
        let ones = vec![1.0; 10];
        let y = ssm_scan_parallel_chunked(&p, &ones, 3).unwrap();
        let expect: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn half_transition_decays_geometrically() {
        let p = SsmParams::static_decay(1, 0.5, 1.0, 1.0, 0.0).unwrap();
        let y = ssm_scan_sequential(&p, &[1.0, 0.0, 0.0]).unwrap();
        for (got, want) in y.iter().zip([1.0, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_operator_copies_input() {
        let p = SsmParams::identity(3);
        let u: Vec<f64> = (0..12).map(|i| i as f64 * 0.7 - 2.0).collect();
        assert_eq!(ssm_scan_sequential(&p, &u).unwrap(), u);
        assert_eq!(ssm_scan_parallel(&p, &u).unwrap(), u);
    }

    #[test]
    fn length_one_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 4, 3, true);
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(ssm_scan_sequential(&p, &u).unwrap(), ssm_scan_parallel(&p, &u).unwrap());
    }

    #[test]
    fn parallel_matches_sequential_selective_257() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 5, 4, true);
        let u: Vec<f64> = (0..257 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = ssm_scan_sequential(&p, &u).unwrap();
        for chunk in [1, 2, 7, 64, 300] {
            let q = ssm_scan_parallel_chunked(&p, &u, chunk).unwrap();
            assert!(max_rel(&q, &s) <= 1e-5, "chunk {chunk}");
        }
    }

    #[test]
    fn causality_under_future_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 3, 2, true);
        let mut u: Vec<f64> = (0..40 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = ssm_scan_sequential(&p, &u).unwrap();
        for v in &mut u[20 * 3..] {
            *v += 5.0;
        }
        let moved = ssm_scan_sequential(&p, &u).unwrap();
        assert_eq!(&base[..20 * 3], &moved[..20 * 3]);
        assert_ne!(&base[20 * 3..], &moved[20 * 3..]);
    }

    #[test]
    fn zero_input_zero_output_without_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&mut rng, 4, 3, true);
        p.d_skip = vec![0.0; 4];
        let y = ssm_scan_sequential(&p, &[0.0; 40]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bounded_state_for_bounded_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 2, 2, false);
        let u = vec![1.0; 2 * 5000];
        let y = ssm_scan_sequential(&p, &u).unwrap();
        let a = p.a_diag();
        let Selection::Static { delta, b, c } = &p.selection else { unreachable!() };
        // |h| <= Δ|B|/(1 - exp(ΔA)) at the fixed point
        let mut bound = 0.0;
        for ch in 0..2 {
            for k in 0..2 {
                let tr = (delta[ch] * a[k]).exp();
                assert!(tr > 0.0 && tr < 1.0);
                bound += c[k].abs() * delta[ch] * b[k].abs() / (1.0 - tr);
            }
        }
        let skip: f64 = p.d_skip.iter().map(|v| v.abs()).sum();
        assert!(y.iter().all(|v| v.abs() <= bound + skip + 1e-9));
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let p = SsmParams::identity(3);
        assert!(matches!(ssm_scan_sequential(&p, &[1.0; 4]), Err(FgosError::Dimension(_))));
        assert!(matches!(ssm_scan_parallel(&p, &[]), Err(FgosError::Dimension(_))));
    }

    #[test]
    fn store_roundtrip_loads_selective() {
        let specs = SsmParams::param_specs("s1.", 4, 2);
        let store = crate::weights::seeded_init(&specs, 1).unwrap();
        let p = SsmParams::from_store(&store, "s1.", 4, 2).unwrap();
        assert!(p.is_selective());
        assert!(SsmParams::from_store(&store, "s1.", 5, 2).is_err());
    }
}
