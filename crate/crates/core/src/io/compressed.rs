//! Cluster-wise reduced dictionaries and their `HDMC` file format.
//!
//! Layout: magic, version `u16`, dtype tag `u8`, normalized flag `u8`,
//! `N: u64`, `L: u32`, `K: u32`, model length `u64` and the embedded
//! `HDMM` bytes, then for every cluster `n_k: u64`, `d_k: u32`, reserved
//! `u32`, the `n_k × d_k` reduced rows, the `n_k × L` parameter rows (both
//! in the dictionary dtype) and `n_k` original row indices as `u64`. A
//! CRC-32 of all preceding bytes closes the file.

use std::path::Path;

use rayon::prelude::*;

use super::bytes::{seal, unseal, Cursor};
use super::format::{DictionaryReader, Dtype};
use super::model::{deserialize_model, serialize_model};
use crate::block::RowBlock;
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;
use crate::projection::ProjectionOperator;

pub const COMPRESSED_MAGIC: [u8; 4] = *b"HDMC";
pub const COMPRESSED_VERSION: u16 = 1;

/// Rows of one cluster: reduced coordinates, parameters, original indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub reduced: RowBlock,
    pub params: RowBlock,
    pub indices: Vec<u64>,
}

impl ClusterPartition {
    fn empty(d: usize, l: usize) -> Self {
        Self { reduced: RowBlock::with_capacity(d, 0), params: RowBlock::with_capacity(l, 0), indices: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedDictionary {
    model: HdMedModel,
    operators: Vec<ProjectionOperator>,
    dtype: Dtype,
    n_total: u64,
    n_params: usize,
    normalized: bool,
    clusters: Vec<ClusterPartition>,
}

#[derive(Debug, Clone, Copy)]
pub struct CompressOptions {
    pub chunk_rows: usize,
    /// Scale every signal to unit ℓ2 norm before assignment and projection.
    pub normalize: bool,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self { chunk_rows: 8192, normalize: false }
    }
}

pub(crate) fn normalize_in_place(y: &mut [f64]) {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        y.iter_mut().for_each(|v| *v /= norm);
    }
}

impl CompressedDictionary {
    pub fn new(
        model: HdMedModel,
        dtype: Dtype,
        n_params: usize,
        normalized: bool,
        clusters: Vec<ClusterPartition>,
    ) -> Result<Self> {
        if clusters.len() != model.n_components() {
            return Err(Error::dim(model.n_components(), clusters.len()));
        }
        let n_total: u64 = clusters.iter().map(|c| c.len() as u64).sum();
        let mut seen = vec![false; n_total as usize];
        for (k, (c, comp)) in clusters.iter().zip(model.components()).enumerate() {
            if c.reduced.dim() != comp.intrinsic_dim() || c.reduced.rows() != c.len() {
                return Err(Error::Format(format!("cluster {k}: reduced block shape mismatch")));
            }
            if c.params.dim() != n_params || c.params.rows() != c.len() {
                return Err(Error::Format(format!("cluster {k}: parameter block shape mismatch")));
            }
            for &i in &c.indices {
                match seen.get_mut(i as usize) {
                    Some(s) if !*s => *s = true,
                    _ => return Err(Error::Format(format!("row index {i} duplicated or out of range"))),
                }
            }
        }
        let operators = model.components().iter().map(ProjectionOperator::from_component).collect();
        Ok(Self { model, operators, dtype, n_total, n_params, normalized, clusters })
    }

    pub fn model(&self) -> &HdMedModel {
        &self.model
    }

    pub fn operators(&self) -> &[ProjectionOperator] {
        &self.operators
    }

    pub fn clusters(&self) -> &[ClusterPartition] {
        &self.clusters
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }

    /// `Σ n_k·d_k·sizeof(dtype)`.
    pub fn reduced_payload_bytes(&self) -> u64 {
        self.clusters.iter().map(|c| (c.len() * c.reduced.dim() * self.dtype.size()) as u64).sum()
    }

    /// Per-signal reduction factor `M / (Σ n_k·d_k / N)`.
    pub fn compression_ratio(&self) -> f64 {
        let stored: usize = self.clusters.iter().map(|c| c.len() * c.reduced.dim()).sum();
        if stored == 0 {
            return f64::NAN;
        }
        self.model.dim() as f64 / (stored as f64 / self.n_total as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let model = serialize_model(&self.model);
        let mut out = Vec::with_capacity(model.len() + 64 + self.reduced_payload_bytes() as usize);
        out.extend_from_slice(&COMPRESSED_MAGIC);
        out.extend_from_slice(&COMPRESSED_VERSION.to_le_bytes());
        out.push(self.dtype.tag());
        out.push(u8::from(self.normalized));
        out.extend_from_slice(&self.n_total.to_le_bytes());
        out.extend_from_slice(&(self.n_params as u32).to_le_bytes());
        out.extend_from_slice(&(self.clusters.len() as u32).to_le_bytes());
        out.extend_from_slice(&(model.len() as u64).to_le_bytes());
        out.extend_from_slice(&model);
        for c in &self.clusters {
            out.extend_from_slice(&(c.len() as u64).to_le_bytes());
            out.extend_from_slice(&(c.reduced.dim() as u32).to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes());
            self.dtype.encode(c.reduced.as_slice(), &mut out);
            self.dtype.encode(c.params.as_slice(), &mut out);
            for i in &c.indices {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        seal(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(unseal(bytes, &COMPRESSED_MAGIC, COMPRESSED_VERSION, "compressed dictionary")?);
        cur.take(6)?;
        let dtype = Dtype::from_tag(cur.u8()?)?;
        let normalized = cur.u8()? != 0;
        let n_total = cur.u64()?;
        let l = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let model_len = cur.u64()? as usize;
        let model = deserialize_model(cur.take(model_len)?)?;
        if model.n_components() != k {
            return Err(Error::Format("cluster count disagrees with embedded model".into()));
        }
        let mut clusters = Vec::with_capacity(k);
        for _ in 0..k {
            let n = cur.u64()? as usize;
            let d = cur.u32()? as usize;
            cur.u32()?;
            let read_block = |cur: &mut Cursor<'_>, width: usize| -> Result<RowBlock> {
                let len = n.checked_mul(width).ok_or_else(|| Error::Format("length overflow".into()))?;
                let raw = cur.take(len.checked_mul(dtype.size()).ok_or_else(|| Error::Format("length overflow".into()))?)?;
                let mut vals = Vec::with_capacity(len);
                dtype.decode(raw, &mut vals);
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format("non-finite value in compressed dictionary".into()));
                }
                RowBlock::new(n, width, vals)
            };
            let reduced = read_block(&mut cur, d)?;
            let params = read_block(&mut cur, l)?;
            let mut indices = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                indices.push(cur.u64()?);
            }
            clusters.push(ClusterPartition { reduced, params, indices });
        }
        cur.finish()?;
        let cd = Self::new(model, dtype, l, normalized, clusters)?;
        if cd.n_total != n_total {
            return Err(Error::Format(format!("header declares {n_total} rows, partitions hold {}", cd.n_total)));
        }
        Ok(cd)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Streams the dictionary once, assigning every row to its most probable
/// cluster and storing its projection on that cluster's latent coordinates.
pub fn compress(store: &DictionaryReader, model: &HdMedModel, opts: &CompressOptions) -> Result<CompressedDictionary> {
    let h = store.header();
    if h.signal_len() != model.dim() {
        return Err(Error::dim(model.dim(), h.signal_len()));
    }
    let ops: Vec<ProjectionOperator> = model.components().iter().map(ProjectionOperator::from_component).collect();
    let mut clusters: Vec<ClusterPartition> =
        ops.iter().map(|op| ClusterPartition::empty(op.reduced_dim(), h.param_len())).collect();
    let dtype = h.dtype;
    for chunk in store.chunks(opts.chunk_rows)? {
        let chunk = chunk?;
        let assigned: Vec<Result<(usize, Vec<f64>)>> = (0..chunk.signals.rows())
            .into_par_iter()
            .map(|i| {
                let mut y = chunk.signals.row(i).to_vec();
                if opts.normalize {
                    normalize_in_place(&mut y);
                }
                let k = model.assign(&y)?;
                let mut reduced = vec![0.0; ops[k].reduced_dim()];
                ops[k].project_into(&y, &mut reduced);
                reduced.iter_mut().for_each(|v| *v = dtype.round(*v));
                Ok((k, reduced))
            })
            .collect();
        for (i, item) in assigned.into_iter().enumerate() {
            let (k, reduced) = item?;
            let part = &mut clusters[k];
            part.reduced.push_row(&reduced)?;
            part.params.push_row(chunk.params.row(i))?;
            part.indices.push(chunk.start_row + i as u64);
        }
    }
    CompressedDictionary::new(model.clone(), dtype, h.param_len(), opts.normalize, clusters)
}
