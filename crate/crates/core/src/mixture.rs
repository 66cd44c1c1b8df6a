//! Finite mixtures of high-dimensional elliptical components.

use rayon::prelude::*;

use crate::block::{for_each_block, SignalSource};
use crate::elliptical::{FamilyTag, HdEdComponent};
use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const LL_BLOCK_ROWS: usize = 4096;

/// `K` weighted components sharing ambient dimension and mixing family.
#[derive(Debug, Clone, PartialEq)]
pub struct HdMedModel {
    dim: usize,
    components: Vec<HdEdComponent>,
    weights: Vec<f64>,
}

/// Posterior cluster probabilities of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub Vec<f64>);

impl Responsibilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Most probable cluster, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// `log Σ exp(x_k)`, `-inf` when every term is `-inf`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl HdMedModel {
    pub fn new(components: Vec<HdEdComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("a mixture needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let dim = components[0].dim();
        let tag = components[0].mixing().tag();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::dim(dim, c.dim()));
            }
            if c.mixing().tag() != tag {
                return Err(Error::InvalidModel("components mix different families".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidModel("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidModel(format!("weights sum to {total}")));
        }
        Ok(Self { dim, components, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[HdEdComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn family(&self) -> FamilyTag {
        self.components[0].mixing().tag()
    }

    pub fn intrinsic_dims(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.intrinsic_dim()).collect()
    }

    /// Every component truncated to `min(d_k, dims[k])` latent directions.
    pub fn truncated(&self, dims: &[usize]) -> Result<Self> {
        if dims.len() != self.n_components() {
            return Err(Error::dim(self.n_components(), dims.len()));
        }
        let components = self
            .components
            .iter()
            .zip(dims)
            .map(|(c, &d)| c.truncated(d.min(c.intrinsic_dim())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, self.weights.clone())
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::dim(self.dim, y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        Ok(())
    }

    /// `log π_k + log f_k(y)` for every component, written into `out`.
    pub(crate) fn log_joint_into(&self, y: &[f64], out: &mut [f64]) {
        for ((o, c), w) in out.iter_mut().zip(&self.components).zip(&self.weights) {
            *o = w.ln() + c.log_pdf_unchecked(y);
        }
    }

    /// Squared distances `u_k` and joint log terms in one pass.
    pub(crate) fn distances_and_log_joint(&self, y: &[f64], u: &mut [f64], joint: &mut [f64]) {
        for (k, c) in self.components.iter().enumerate() {
            u[k] = c.mahalanobis_unchecked(y);
            joint[k] = self.weights[k].ln() + c.log_pdf_at(u[k]);
        }
    }

    /// Turns joint log terms into normalized responsibilities in place and
    /// returns the log marginal density.
    pub(crate) fn normalize_log_joint(joint: &mut [f64]) -> Result<f64> {
        let lse = log_sum_exp(joint);
        if !lse.is_finite() {
            return Err(Error::Degenerate("observation has zero density under every component".into()));
        }
        for v in joint.iter_mut() {
            *v = (*v - lse).exp();
        }
        Ok(lse)
    }

    pub fn responsibilities(&self, y: &[f64]) -> Result<Responsibilities> {
        self.check(y)?;
        let mut r = vec![0.0; self.n_components()];
        self.log_joint_into(y, &mut r);
        Self::normalize_log_joint(&mut r)?;
        Ok(Responsibilities(r))
    }

    /// `log Σ_k π_k f_k(y)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        self.check(y)?;
        let mut r = vec![0.0; self.n_components()];
        self.log_joint_into(y, &mut r);
        let lse = log_sum_exp(&r);
        if lse.is_nan() || lse == f64::INFINITY {
            return Err(Error::Degenerate("non-finite mixture density".into()));
        }
        Ok(lse)
    }

    /// Index of the most probable cluster, lowest index on ties.
    pub fn assign(&self, y: &[f64]) -> Result<usize> {
        self.check(y)?;
        let mut r = vec![0.0; self.n_components()];
        self.log_joint_into(y, &mut r);
        if r.iter().all(|v| *v == f64::NEG_INFINITY) || r.iter().any(|v| v.is_nan()) {
            return Err(Error::Degenerate("observation has zero density under every component".into()));
        }
        Ok(argmax(&r))
    }

    /// Log-likelihood of every row of the stream and the row count.
    pub fn log_likelihood_counted(&self, data: &mut dyn SignalSource) -> Result<(f64, u64)> {
        if data.dim() != self.dim {
            return Err(Error::dim(self.dim, data.dim()));
        }
        let mut total = 0.0;
        let mut n = 0u64;
        for_each_block(data, LL_BLOCK_ROWS, |block| {
            let partials: Vec<Result<f64>> = (0..block.rows())
                .into_par_iter()
                .chunks(256)
                .map(|idx| idx.into_iter().map(|i| self.log_density(block.row(i))).sum())
                .collect();
            for p in partials {
                total += p?;
            }
            n += block.rows() as u64;
            Ok(())
        })?;
        if n == 0 {
            return Err(Error::EmptyStream);
        }
        Ok((total, n))
    }

    /// `Σ_i log Σ_k π_k f_k(y_i)` over the stream.
    pub fn log_likelihood(&self, data: &mut dyn SignalSource) -> Result<f64> {
        self.log_likelihood_counted(data).map(|(ll, _)| ll)
    }

    /// Free parameters: weights, means, Stiefel directions, eigenvalues,
    /// residual eigenvalue and mixing parameters.
    pub fn free_parameter_count(&self) -> usize {
        let m = self.dim;
        let per_component: usize = self
            .components
            .iter()
            .map(|c| {
                let d = c.intrinsic_dim();
                m + (d * m - d * (d + 1) / 2) + d + 1 + c.mixing().free_params()
            })
            .sum();
        self.n_components() - 1 + per_component
    }

    /// `-2·loglik + ρ·log n`; `n` must be the number of streamed rows.
    pub fn bic(&self, data: &mut dyn SignalSource, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("BIC needs at least one observation".into()));
        }
        let (ll, seen) = self.log_likelihood_counted(data)?;
        if seen != n {
            return Err(Error::InvalidArgument(format!("declared {n} observations but streamed {seen}")));
        }
        Ok(-2.0 * ll + self.free_parameter_count() as f64 * (n as f64).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{MemorySource, RowBlock};
    use crate::elliptical::MixingFamily;
    use nalgebra::{dvector, DMatrix, DVector};

    fn comp(mu: [f64; 3]) -> HdEdComponent {
        HdEdComponent::new(
            DVector::from_row_slice(&mu),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            dvector![4.0],
            1.0,
            MixingFamily::Gaussian,
        )
        .unwrap()
    }

    #[test]
    fn single_component_responsibility_is_one() {
        let m = HdMedModel::new(vec![comp([0.0; 3])], vec![1.0]).unwrap();
        assert_eq!(m.responsibilities(&[5.0, 1.0, -2.0]).unwrap().0, vec![1.0]);
        assert_eq!(m.assign(&[5.0, 1.0, -2.0]).unwrap(), 0);
    }

    #[test]
    fn separated_components() {
        let m = HdMedModel::new(vec![comp([0.0; 3]), comp([50.0, 50.0, 50.0])], vec![0.5, 0.5]).unwrap();
        let r = m.responsibilities(&[0.0, 0.0, 0.0]).unwrap();
        assert!(r.0[0] > 1.0 - 1e-6);
        assert_eq!(m.assign(&[50.0, 50.0, 50.0]).unwrap(), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = HdMedModel::new(vec![comp([1.0, 0.0, 0.0]), comp([-1.0, 0.0, 0.0])], vec![0.5, 0.5]).unwrap();
        assert_eq!(m.assign(&[0.0, 0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn parameter_count_hand_case() {
        let m = HdMedModel::new(vec![comp([0.0; 3])], vec![1.0]).unwrap();
        assert_eq!(m.free_parameter_count(), 7);
        let t = HdMedModel::new(vec![comp([0.0; 3]).with_mixing(MixingFamily::Student { nu: 3.0 })], vec![1.0]).unwrap();
        assert_eq!(t.free_parameter_count(), 8);
    }

    #[test]
    fn single_point_loglik_equals_log_pdf() {
        let c = comp([1.0, 2.0, 3.0]);
        let m = HdMedModel::new(vec![c.clone()], vec![1.0]).unwrap();
        let data = RowBlock::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let ll = m.log_likelihood(&mut MemorySource::new(&data)).unwrap();
        assert!((ll - c.log_pdf(&[1.0, 2.0, 3.0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(HdMedModel::new(vec![], vec![]).is_err());
        assert!(HdMedModel::new(vec![comp([0.0; 3])], vec![0.9]).is_err());
        let t = comp([0.0; 3]).with_mixing(MixingFamily::Student { nu: 3.0 });
        assert!(HdMedModel::new(vec![comp([0.0; 3]), t], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn empty_stream_and_bad_n() {
        let m = HdMedModel::new(vec![comp([0.0; 3])], vec![1.0]).unwrap();
        let empty = RowBlock::zeros(0, 3);
        assert!(matches!(m.log_likelihood(&mut MemorySource::new(&empty)), Err(Error::EmptyStream)));
        let one = RowBlock::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(m.bic(&mut MemorySource::new(&one), 0).is_err());
        assert!(m.bic(&mut MemorySource::new(&one), 2).is_err());
    }
}
