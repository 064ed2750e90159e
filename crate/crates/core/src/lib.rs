//! Frequency-geometric disentanglement toolkit.
//!
//! Haar split/merge ([`wavelet`]), geometry-aligned serialization
//! ([`scan`]), a diagonal selective state-space scan ([`ssm`]), the
//! frequency-aligned scan block ([`fablock`]), gradient-guided probe
//! evolution ([`asgp`]), the forward-only pipeline ([`pipeline`]),
//! thin-structure metrics ([`metrics`]) and a synthetic data generator
//! ([`synth`]).

pub mod asgp;
pub mod bench;
pub mod error;
pub mod fablock;
pub mod flops;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sample;
pub mod scan;
pub mod ssm;
pub mod synth;
pub mod wavelet;
pub mod weights;

pub use asgp::{asgp_gate, coarse_potential, evolve_probes, refine_mask, AsgpConfig, AsgpWeights, GateMode, Mask, ProbeSet};
pub use bench::{run_bench, BenchReport};
pub use error::{FgosError, Result};
pub use fablock::{cross_scan, fa_scan, lgb, LgbConfig, ScanAssignment};
pub use flops::{FlopReport, Meter};
pub use grid::{FeatureGrid, NormCoord};
pub use metrics::{cldice, dice, ods, region_metrics, skeletonize, BinaryMask, RegionMetrics};
pub use pipeline::{flop_estimate, forward, Model, PipelineConfig};
pub use sample::{bilinear_gradient, bilinear_sample};
pub use scan::{build_scan_order, ScanKind, ScanOrder};
pub use ssm::{ssm_scan_parallel, ssm_scan_sequential, SsmParams};
pub use synth::{generate_sample, SynthConfig};
pub use wavelet::{dwt_haar, idwt_haar, SubbandSet};
pub use weights::{seeded_init, ParamSpec, WeightStore};
