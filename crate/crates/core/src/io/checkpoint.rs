//! Binary model checkpoints.
//!
//! Layout, all little endian:
//!
//! ```text
//! "TUGS"  u32 version  u32 R  u32 N  u32 M
//! f32 U¹[2×R]  f32 U²[N×R]  f32 U³[M×R]   (row-major)
//! f32 γ∞[3]  f32 conv_w[3]  f32 conv_b[3]
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::medium::MediumParams;
use crate::tensor::CpFactors;

pub const MAGIC: &[u8; 4] = b"TUGS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub factors: CpFactors,
    pub medium: MediumParams,
}

impl Checkpoint {
    /// Size of the encoded checkpoint in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * (self.factors.parameter_count() + 9)
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
        }
    }
}

/// Values are stored as `f32`, so encoding rounds the in-memory `f64` state.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let f = &ck.factors;
    if f.slices() != 2 {
        return Err(Error::Format(format!("expected 2 mode-1 slices, got {}", f.slices())));
    }
    let dim = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")));
    let mut out = Vec::with_capacity(ck.encoded_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim(f.rank(), "rank")?.to_le_bytes());
    out.extend_from_slice(&dim(f.num_gaussians(), "gaussian count")?.to_le_bytes());
    out.extend_from_slice(&dim(f.num_attributes(), "attribute count")?.to_le_bytes());
    put_matrix(&mut out, f.medium());
    put_matrix(&mut out, f.number());
    put_matrix(&mut out, f.template());
    for v in ck.medium.to_array() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TUGS magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (r, n, m) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let floats = (2 + n + m)
        .checked_mul(r)
        .and_then(|v| v.checked_add(9))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let expected = HEADER_LEN + 4 * floats;
    if bytes.len() != expected {
        return Err(Error::Format(format!("length {} does not match header (expected {expected})", bytes.len())));
    }
    let mut vals = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut take = |rows: usize| DMatrix::from_row_iterator(rows, r, vals.by_ref().take(rows * r));
    let (u1, u2, u3) = (take(2), take(n), take(m));
    let mut medium = [0.0; 9];
    for (slot, v) in medium.iter_mut().zip(vals) {
        *slot = v;
    }
    let factors = CpFactors::new(u1, u2, u3).map_err(|e| Error::Format(e.to_string()))?;
    let medium = MediumParams::from_array(medium);
    if !medium.is_finite() {
        return Err(Error::Format("medium parameters are not finite".into()));
    }
    Ok(Checkpoint { factors, medium })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    super::write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_checkpoint(&bytes).map_err(|e| Error::load(path, e.to_string()))
}
