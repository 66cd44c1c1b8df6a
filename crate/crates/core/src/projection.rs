//! Cluster-wise compression: posterior-mean projection onto the latent
//! coordinates of a component and the matching reconstruction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::block::{for_each_block, SignalSource};
use crate::elliptical::HdEdComponent;
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

const RMSE_BLOCK_ROWS: usize = 4096;

/// Loading matrix `V = Dstar·sqrt(diag(a) − b·I)` and the inverse of
/// `U = b·I + VᵀV`, which is diagonal (`U = diag(a)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    v: DMatrix<f64>,
    u_inv: DVector<f64>,
    mu: DVector<f64>,
    b: f64,
    // V·diag(u_inv), so that project() is a single transposed product
    projector: DMatrix<f64>,
}

impl ProjectionOperator {
    /// Builds the operator of a validated component (`a_m > b` holds by
    /// construction of [`HdEdComponent`]).
    pub fn from_component(comp: &HdEdComponent) -> Self {
        let b = comp.b();
        let mut v = comp.dstar().clone();
        for (k, mut col) in v.column_iter_mut().enumerate() {
            col *= (comp.a()[k] - b).sqrt();
        }
        let u_inv = comp.a().map(|a| 1.0 / a);
        let mut projector = v.clone();
        for (k, mut col) in projector.column_iter_mut().enumerate() {
            col *= u_inv[k];
        }
        Self { v, u_inv, mu: comp.mu().clone(), b, projector }
    }

    pub fn loading(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Diagonal of `U⁻¹`.
    pub fn u_inv_diag(&self) -> &DVector<f64> {
        &self.u_inv
    }

    pub fn u_inv(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.u_inv)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.v.ncols()
    }

    /// `E[X | Y = y] = U⁻¹·Vᵀ·(y − μ)`.
    pub fn project(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.dim() {
            return Err(Error::dim(self.dim(), y.len()));
        }
        let mut out = DVector::zeros(self.reduced_dim());
        self.project_into(y, out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn project_into(&self, y: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(self.projector.column_iter()) {
            *o = col.iter().zip(y.iter().zip(self.mu.iter())).map(|(p, (yi, mi))| p * (yi - mi)).sum();
        }
    }

    /// `E[Y | X = xhat] = V·xhat + μ`.
    pub fn reconstruct(&self, xhat: &[f64]) -> Result<DVector<f64>> {
        if xhat.len() != self.reduced_dim() {
            return Err(Error::dim(self.reduced_dim(), xhat.len()));
        }
        let mut out = self.mu.clone();
        for (x, col) in xhat.iter().zip(self.v.column_iter()) {
            out.axpy(*x, &col, 1.0);
        }
        Ok(out)
    }

    /// Squared error of `reconstruct(project(y))` without allocating the
    /// reconstruction.
    pub(crate) fn roundtrip_sq_error(&self, y: &[f64], scratch: &mut [f64]) -> f64 {
        self.project_into(y, scratch);
        let mut err = 0.0;
        for i in 0..self.dim() {
            let mut rec = self.mu[i];
            for (k, x) in scratch.iter().enumerate() {
                rec += self.v[(i, k)] * x;
            }
            let r = y[i] - rec;
            err += r * r;
        }
        err
    }
}

/// Root mean squared reconstruction error over a stream: each row goes
/// through the projection of its most probable cluster and back.
///
/// Returns `sqrt(Σ_i ‖y_i − y̌_i‖² / N)`, a per-signal error comparable to
/// signal norms.
pub fn reconstruction_rmse(model: &HdMedModel, data: &mut dyn SignalSource) -> Result<f64> {
    if data.dim() != model.dim() {
        return Err(Error::dim(model.dim(), data.dim()));
    }
    let ops: Vec<ProjectionOperator> = model.components().iter().map(ProjectionOperator::from_component).collect();
    let max_d = ops.iter().map(|o| o.reduced_dim()).max().unwrap_or(0);
    let mut total = 0.0;
    let mut rows = 0u64;
    for_each_block(data, RMSE_BLOCK_ROWS, |block| {
        let partials: Vec<Result<f64>> = (0..block.rows())
            .into_par_iter()
            .chunks(256)
            .map(|idx| {
                let mut scratch = vec![0.0; max_d];
                let mut acc = 0.0;
                for i in idx {
                    let y = block.row(i);
                    let k = model.assign(y)?;
                    let op = &ops[k];
                    acc += op.roundtrip_sq_error(y, &mut scratch[..op.reduced_dim()]);
                }
                Ok(acc)
            })
            .collect();
        for p in partials {
            total += p?;
        }
        rows += block.rows() as u64;
        Ok(())
    })?;
    if rows == 0 {
        return Err(Error::EmptyStream);
    }
    Ok((total / rows as f64).sqrt())
}
