//! File formats: `FGT1` tensors, `.fgw` weight bundles and binary PGM images.
//!
//! `FGT1` layout: magic `FGT1`, `u32` LE rank, `rank × u32` LE dims, then
//! `f32` LE values in row-major order of the dims.
//!
//! `.fgw` layout: `u32` LE block count `n`, then `n` names each as `u32` LE
//! byte length plus UTF-8 bytes, then `n` `FGT1` tensors in the same order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FgosError, Result};
use crate::grid::FeatureGrid;
use crate::wavelet::SubbandSet;
use crate::weights::{Block, WeightStore};

pub const FGT1_MAGIC: &[u8; 4] = b"FGT1";

fn io_err(path: &Path, source: std::io::Error) -> FgosError {
    FgosError::Io {
        path: path.to_path_buf(),
        err: source,
    }
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FgosError::Format(msg.into()))
}

/// Writes one tensor.
pub fn write_fgt1(out: &mut impl Write, dims: &[usize], values: &[f32]) -> std::io::Result<()> {
    out.write_all(FGT1_MAGIC)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|e| FgosError::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor, returning `(dims, values)`.
pub fn read_fgt1(input: &mut impl Read) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| FgosError::Format(format!("missing FGT1 magic: {e}")))?;
    if &magic != FGT1_MAGIC {
        return format_err(format!("bad magic {magic:?}, expected FGT1"));
    }
    let rank = read_u32(input)? as usize;
    if rank > 16 {
        return format_err(format!("implausible rank {rank}"));
    }
    let dims = (0..rank)
        .map(|_| read_u32(input).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * 4];
    input
        .read_exact(&mut raw)
        .map_err(|e| FgosError::Format(format!("truncated FGT1 payload: {e}")))?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, values))
}

pub fn grid_to_fgt1(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::new();
    let values: Vec<f32> = grid.data().iter().map(|&v| v as f32).collect();
    let (c, h, w) = grid.shape();
    write_fgt1(&mut out, &[c, h, w], &values).expect("writing to a Vec cannot fail");
    out
}

/// Reads a rank-3 (or rank-2, as one channel) tensor into a grid.
pub fn grid_from_fgt1(input: &mut impl Read) -> Result<FeatureGrid> {
    let (dims, values) = read_fgt1(input)?;
    let (c, h, w) = match dims.as_slice() {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        _ => return format_err(format!("expected rank 2 or 3 tensor, got dims {dims:?}")),
    };
    FeatureGrid::from_vec(c, h, w, values.into_iter().map(f64::from).collect())
}

/// Four consecutive tensors in LL, LH, HL, HH order.
pub fn subbands_to_bytes(s: &SubbandSet) -> Vec<u8> {
    [&s.ll, &s.lh, &s.hl, &s.hh]
        .into_iter()
        .flat_map(grid_to_fgt1)
        .collect()
}

pub fn subbands_from_bytes(input: &mut impl Read) -> Result<SubbandSet> {
    let ll = grid_from_fgt1(input)?;
    let lh = grid_from_fgt1(input)?;
    let hl = grid_from_fgt1(input)?;
    let hh = grid_from_fgt1(input)?;
    SubbandSet::new(ll, lh, hl, hh)
}

pub fn weights_to_bytes(store: &WeightStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, _) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for (_, block) in store.iter() {
        write_fgt1(&mut out, &block.shape, &block.data).expect("writing to a Vec cannot fail");
    }
    out
}

pub fn weights_from_bytes(input: &mut impl Read) -> Result<WeightStore> {
    let count = read_u32(input)? as usize;
    let mut names = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(input)? as usize;
        let mut raw = vec![0u8; len];
        input
            .read_exact(&mut raw)
            .map_err(|e| FgosError::Format(format!("truncated name table: {e}")))?;
        names.push(
            String::from_utf8(raw).map_err(|e| FgosError::Format(format!("non-UTF-8 name: {e}")))?,
        );
    }
    let mut store = WeightStore::new();
    for name in names {
        let (dims, values) = read_fgt1(input)?;
        store.insert(name, Block::new(dims, values)?);
    }
    Ok(store)
}

pub fn save_weights(path: &Path, store: &WeightStore) -> Result<()> {
    fs::write(path, weights_to_bytes(store)).map_err(|e| io_err(path, e))
}

pub fn load_weights(path: &Path) -> Result<WeightStore> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    weights_from_bytes(&mut bytes.as_slice())
}

pub fn save_grid(path: &Path, grid: &FeatureGrid) -> Result<()> {
    fs::write(path, grid_to_fgt1(grid)).map_err(|e| io_err(path, e))
}

pub fn load_grid(path: &Path) -> Result<FeatureGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    grid_from_fgt1(&mut bytes.as_slice())
}

/// Encodes channel 0 as a binary (P5, maxval 255) PGM; values are clamped
/// to `[0, 1]` and scaled.
pub fn encode_pgm(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(
        grid.plane(0)
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Decodes a P5 PGM with maxval ≤ 255 into a 1-channel grid in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err("truncated PGM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return format_err(format!("unsupported PGM magic `{}` (need P5)", fields[0]));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FgosError::Format(format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return format_err(format!("unsupported PGM maxval {maxval}"));
    }
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| FgosError::Format("truncated PGM raster".into()))?;
    let scale = maxval as f64;
    FeatureGrid::from_vec(1, h, w, raster.iter().map(|&b| f64::from(b) / scale).collect())
}

pub fn write_pgm(path: &Path, grid: &FeatureGrid) -> Result<()> {
    fs::write(path, encode_pgm(grid)).map_err(|e| io_err(path, e))
}

pub fn read_pgm(path: &Path) -> Result<FeatureGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        FgosError::Format(m) => FgosError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
