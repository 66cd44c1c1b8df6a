//! Expected sufficient statistics and their stochastic-approximation blend.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::block::RowBlock;
use crate::elliptical::weight_posterior_at;
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

/// Rows per parallel work item. Fixed so that the reduction order, and with
/// it the floating-point result, does not depend on the thread count.
const STATS_CHUNK_ROWS: usize = 256;

/// Statistics of one component, weighted by its responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    /// Responsibility mass.
    pub s0: f64,
    /// `E[w·y]`.
    pub s1: DVector<f64>,
    /// `E[w·y·yᵀ]`.
    pub s2: DMatrix<f64>,
    /// `E[w·yᵀy]`.
    pub s3: f64,
    /// `E[w]`.
    pub s4: f64,
    /// Mixing statistics `(E[w], E[log w])`.
    pub s5: [f64; 2],
}

impl ComponentStats {
    pub fn zeros(m: usize) -> Self {
        Self {
            s0: 0.0,
            s1: DVector::zeros(m),
            s2: DMatrix::zeros(m, m),
            s3: 0.0,
            s4: 0.0,
            s5: [0.0; 2],
        }
    }

    fn scale(&mut self, c: f64) {
        self.s0 *= c;
        self.s1 *= c;
        self.s2 *= c;
        self.s3 *= c;
        self.s4 *= c;
        self.s5[0] *= c;
        self.s5[1] *= c;
    }

    fn add_scaled(&mut self, other: &ComponentStats, c: f64) {
        self.s0 += c * other.s0;
        self.s1.axpy(c, &other.s1, 1.0);
        self.s2.zip_apply(&other.s2, |x, y| *x += c * y);
        self.s3 += c * other.s3;
        self.s4 += c * other.s4;
        self.s5[0] += c * other.s5[0];
        self.s5[1] += c * other.s5[1];
    }
}

/// Running sufficient statistics of a `K`-component mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub components: Vec<ComponentStats>,
}

impl SuffStats {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self { components: (0..k).map(|_| ComponentStats::zeros(m)).collect() }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.s1.len())
    }

    pub fn masses(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.s0).collect()
    }

    pub(crate) fn scale(&mut self, c: f64) {
        for comp in &mut self.components {
            comp.scale(c);
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &SuffStats, c: f64) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.add_scaled(b, c);
        }
    }

    fn same_shape(&self, other: &SuffStats) -> Result<()> {
        if self.n_components() != other.n_components() {
            return Err(Error::dim(self.n_components(), other.n_components()));
        }
        if self.dim() != other.dim() {
            return Err(Error::dim(self.dim(), other.dim()));
        }
        Ok(())
    }
}

/// `E[s(Y, Z) | Y = y]` for a single observation.
pub fn expected_stats(model: &HdMedModel, y: &[f64]) -> Result<SuffStats> {
    if y.len() != model.dim() {
        return Err(Error::dim(model.dim(), y.len()));
    }
    let block = RowBlock::new(1, y.len(), y.to_vec())?;
    batch_stats(model, &block)
}

/// Within-batch average of [`expected_stats`] over every row of `block`.
pub fn batch_stats(model: &HdMedModel, block: &RowBlock) -> Result<SuffStats> {
    if block.dim() != model.dim() {
        return Err(Error::dim(model.dim(), block.dim()));
    }
    if block.is_empty() {
        return Err(Error::EmptyStream);
    }
    let partials: Vec<Result<SuffStats>> = (0..block.rows())
        .into_par_iter()
        .chunks(STATS_CHUNK_ROWS)
        .map(|idx| chunk_stats(model, block, &idx))
        .collect();
    let mut total = SuffStats::zeros(model.n_components(), model.dim());
    for p in partials {
        total.add_scaled(&p?, 1.0);
    }
    total.scale(1.0 / block.rows() as f64);
    Ok(total)
}

fn chunk_stats(model: &HdMedModel, block: &RowBlock, rows: &[usize]) -> Result<SuffStats> {
    let k = model.n_components();
    let m = model.dim();
    let n = rows.len();
    let mut out = SuffStats::zeros(k, m);
    let mut u = vec![0.0; k];
    let mut joint = vec![0.0; k];
    // ys holds the rows as columns; coef[k][j] = r_jk·E[w | y_j, k]
    let mut ys = DMatrix::<f64>::zeros(m, n);
    let mut coef = vec![vec![0.0; n]; k];
    for (j, &i) in rows.iter().enumerate() {
        let y = block.row(i);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value in row {i}")));
        }
        ys.column_mut(j).copy_from_slice(y);
        model.distances_and_log_joint(y, &mut u, &mut joint);
        HdMedModel::normalize_log_joint(&mut joint)?;
        let yty: f64 = y.iter().map(|v| v * v).sum();
        for (c, comp) in model.components().iter().enumerate() {
            let r = joint[c];
            let wp = weight_posterior_at(comp.mixing(), u[c], m);
            let cw = r * wp.e_w;
            coef[c][j] = cw;
            let st = &mut out.components[c];
            st.s0 += r;
            st.s3 += cw * yty;
            st.s4 += cw;
            st.s5[0] += cw;
            st.s5[1] += r * wp.e_logw;
        }
    }
    for (c, st) in out.components.iter_mut().enumerate() {
        let weights = DVector::from_column_slice(&coef[c]);
        st.s1 = &ys * &weights;
        let mut scaled = ys.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= coef[c][j];
        }
        st.s2 = &scaled * ys.transpose();
    }
    Ok(out)
}

/// `s = γ·s_new + (1 − γ)·s_prev`, fieldwise. Requires `0 < γ < 1`.
pub fn sa_update(prev: &SuffStats, new: &SuffStats, gamma: f64) -> Result<SuffStats> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("learning rate {gamma} outside (0, 1)")));
    }
    prev.same_shape(new)?;
    let mut out = prev.clone();
    out.scale(1.0 - gamma);
    out.add_scaled(new, gamma);
    Ok(out)
}
