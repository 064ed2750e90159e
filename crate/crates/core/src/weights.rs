//! Named parameter blocks and their seeded initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FgosError, Result};

/// One parameter block: a declared shape plus `f32` values (the on-disk
/// precision, so save/load is bit-exact).
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Block {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FgosError::Dimension(format!(
                "block shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Requested parameter block: name and shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    /// Inputs feeding one output unit: every dimension but the first, or the
    /// block length for vectors.
    pub fn fan_in(&self) -> usize {
        match self.shape.as_slice() {
            [] => 1,
            [n] => *n,
            [_, rest @ ..] => rest.iter().product(),
        }
    }
}

/// Ordered collection of named blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    blocks: BTreeMap<String, Block>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, block: Block) {
        self.blocks.insert(name.into(), block);
    }

    pub fn get(&self, name: &str) -> Result<&Block> {
        self.blocks
            .get(name)
            .ok_or_else(|| FgosError::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Block> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| FgosError::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    /// Fetches a block and checks it against the shape its consumer expects.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let b = self.get(name)?;
        if b.shape != shape {
            return Err(FgosError::Dimension(format!(
                "weight `{name}` has shape {:?}, expected {shape:?}",
                b.shape
            )));
        }
        Ok(b.to_f64())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Block)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.values().map(Block::len).sum()
    }

    /// Sets every value of the named block.
    pub fn fill(&mut self, name: &str, value: f32) -> Result<()> {
        self.get_mut(name)?.data.iter_mut().for_each(|v| *v = value);
        Ok(())
    }

    /// Zeroes every block whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, b) in self.blocks.iter_mut() {
            if name.starts_with(prefix) {
                b.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Little-endian byte image of every block in name order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, b) in &self.blocks {
            out.extend_from_slice(name.as_bytes());
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

fn stream_id(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic initialization: each block is drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` on its own ChaCha8 stream keyed by
/// the block name, so adding a block never perturbs the others.
pub fn seeded_init(specs: &[ParamSpec], seed: u64) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    for spec in specs {
        if spec.shape.is_empty() || spec.shape.contains(&0) {
            return Err(FgosError::Config(format!(
                "block `{}` has non-positive shape {:?}",
                spec.name, spec.shape
            )));
        }
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(&spec.name));
        let n: usize = spec.shape.iter().product();
        let data = (0..n)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) as f32 * bound as f32)
            .collect();
        store.insert(spec.name.clone(), Block::new(spec.shape.clone(), data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("a.w", &[4, 4]),
            ParamSpec::new("a.b", &[4]),
            ParamSpec::new("conv", &[8, 3, 3, 3]),
        ]
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = seeded_init(&specs(), 9).unwrap();
        let b = seeded_init(&specs(), 9).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn different_seeds_differ() {
        let a = seeded_init(&specs(), 1).unwrap();
        let b = seeded_init(&specs(), 2).unwrap();
        assert_ne!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn blocks_are_independent_of_spec_order() {
        let mut rev = specs();
        rev.reverse();
        let a = seeded_init(&specs(), 4).unwrap();
        let b = seeded_init(&rev, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fan_in_scaled_uniform_law() {
        // shape (4,4): bound 1/sqrt(4) = 0.5, so E|v| = 0.25 and Var = 1/12
        let spec = [ParamSpec::new("w", &[4, 4])];
        let mut draws = Vec::new();
        for seed in 0..625 {
            let s = seeded_init(&spec, seed).unwrap();
            draws.extend(s.get("w").unwrap().to_f64());
        }
        assert_eq!(draws.len(), 10_000);
        assert!(draws.iter().all(|v| v.abs() < 1.0 && v.abs() <= 0.5));
        let mean_abs = draws.iter().map(|v| v.abs()).sum::<f64>() / draws.len() as f64;
        // sd of |v| is 0.5/sqrt(12); 5 sigma over 1e4 draws is ~0.0072
        assert!((mean_abs - 0.25).abs() < 0.0075, "mean |v| = {mean_abs}");
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.015);
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert!(seeded_init(&[ParamSpec::new("x", &[0, 3])], 1).is_err());
    }

    #[test]
    fn expect_checks_shape() {
        let s = seeded_init(&specs(), 1).unwrap();
        assert!(s.expect("a.w", &[4, 4]).is_ok());
        assert!(matches!(s.expect("a.w", &[16]), Err(FgosError::Dimension(_))));
        assert!(matches!(s.expect("nope", &[1]), Err(FgosError::MissingWeight(_))));
    }
}
