//! `HDMM` model files: every float stored as little-endian `f64`, so a
//! round trip is bit-exact on any host.
//!
//! Layout: magic, version `u16`, family tag `u8` (0 Gaussian, 1 Student),
//! reserved `u8`, `M: u32`, `K: u32`, `K` weights, then per component
//! `d: u32`, `nu`, `b`, `mu[M]`, `a[d]` and `Dstar` column-major `[M·d]`,
//! closed by a CRC-32 of all preceding bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::bytes::{put_f64s, seal, unseal, Cursor};
use crate::elliptical::{FamilyTag, HdEdComponent, MixingFamily};
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

pub const MODEL_MAGIC: [u8; 4] = *b"HDMM";
pub const MODEL_VERSION: u16 = 1;

pub fn serialize_model(model: &HdMedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(match model.family() {
        FamilyTag::Gaussian => 0,
        FamilyTag::Student => 1,
    });
    out.push(0);
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.n_components() as u32).to_le_bytes());
    put_f64s(&mut out, model.weights().iter().copied());
    for c in model.components() {
        out.extend_from_slice(&(c.intrinsic_dim() as u32).to_le_bytes());
        let nu = match c.mixing() {
            MixingFamily::Gaussian => 0.0,
            MixingFamily::Student { nu } => *nu,
        };
        put_f64s(&mut out, [nu, c.b()]);
        put_f64s(&mut out, c.mu().iter().copied());
        put_f64s(&mut out, c.a().iter().copied());
        put_f64s(&mut out, c.dstar().iter().copied());
    }
    seal(&mut out);
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<HdMedModel> {
    let mut cur = Cursor::new(unseal(bytes, &MODEL_MAGIC, MODEL_VERSION, "model file")?);
    let model = read_model(&mut cur)?;
    cur.finish()?;
    Ok(model)
}

fn read_model(cur: &mut Cursor<'_>) -> Result<HdMedModel> {
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = cur.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let family = cur.u8()?;
    if family > 1 {
        return Err(Error::Format(format!("unknown family tag {family}")));
    }
    cur.u8()?;
    let m = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let weights = cur.f64s(k)?;
    let mut components = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let d = cur.u32()? as usize;
        if d == 0 || d > m {
            return Err(Error::Format(format!("intrinsic dimension {d} invalid for M = {m}")));
        }
        let nu = cur.f64()?;
        let b = cur.f64()?;
        let mu = DVector::from_vec(cur.f64s(m)?);
        let a = DVector::from_vec(cur.f64s(d)?);
        let dstar = DMatrix::from_vec(m, d, cur.f64s(m * d)?);
        let mixing = if family == 0 { MixingFamily::Gaussian } else { MixingFamily::Student { nu } };
        components.push(HdEdComponent::new(mu, dstar, a, b, mixing).map_err(|e| Error::Format(e.to_string()))?);
    }
    HdMedModel::new(components, weights).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &HdMedModel) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HdMedModel> {
    deserialize_model(&std::fs::read(path)?)
}
