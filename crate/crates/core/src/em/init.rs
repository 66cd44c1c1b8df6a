//! Spectral initialization: batch EM on a subsample, then per-cluster
//! eigendecomposition with the intrinsic dimension read off the scree plot.

use nalgebra::DVector;

use super::batch::{fit_batch, BatchConfig, BatchFit, DenseMixture};
use super::kneedle::kneedle;
use super::mstep::sorted_eigen;
use crate::block::RowBlock;
use crate::elliptical::{HdEdComponent, MixingFamily};
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

#[derive(Debug, Clone)]
pub struct InitSpec {
    /// Rows drawn from the dictionary for the batch fit.
    pub subsample: usize,
    pub sensitivity: f64,
    /// Upper bound on every intrinsic dimension.
    pub d_max: usize,
    pub batch_iters: usize,
    pub restarts: usize,
    /// Explained-variance share used when no knee is found.
    pub variance_fallback: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { subsample: 5000, sensitivity: 1.0, d_max: 64, batch_iters: 30, restarts: 3, variance_fallback: 0.95 }
    }
}

/// How an intrinsic dimension was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionRule {
    Knee,
    VarianceFallback,
}

/// Intrinsic dimension for a non-increasing eigenvalue sequence, in
/// `1..=min(d_max, M − 1)`.
pub fn choose_dimension(eigenvalues: &[f64], spec: &InitSpec) -> Result<(usize, DimensionRule)> {
    let m = eigenvalues.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two eigenvalues".into()));
    }
    let cap = spec.d_max.min(m - 1).max(1);
    let knee = if m >= 3 { kneedle(eigenvalues, spec.sensitivity)? } else { None };
    if let Some(idx) = knee {
        return Ok((idx.clamp(1, cap), DimensionRule::Knee));
    }
    let positive: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = positive.iter().sum();
    let mut acc = 0.0;
    let mut d = m;
    for (i, v) in positive.iter().enumerate() {
        acc += v;
        if acc >= spec.variance_fallback * total {
            d = i + 1;
            break;
        }
    }
    Ok((d.clamp(1, cap), DimensionRule::VarianceFallback))
}

#[derive(Debug, Clone)]
pub struct SpectralInit {
    pub model: HdMedModel,
    pub rules: Vec<DimensionRule>,
    pub batch: BatchFit,
}

/// Converts a dense mixture: leading eigenpairs become `(Dstar, a)` and the
/// trailing eigenvalues are averaged into `b`.
pub fn from_dense(mixture: &DenseMixture, spec: &InitSpec) -> Result<(HdMedModel, Vec<DimensionRule>)> {
    let mut components = Vec::with_capacity(mixture.components.len());
    let mut rules = Vec::with_capacity(mixture.components.len());
    for dense in &mixture.components {
        let m = dense.mu.len();
        let (values, vectors) = sorted_eigen(dense.cov.clone());
        let (mut d, rule) = choose_dimension(values.as_slice(), spec)?;
        let trailing_mean = |d: usize| values.rows(d, m - d).sum() / (m - d) as f64;
        // ties at the cut would violate a_d > b
        while d > 1 && values[d - 1] <= trailing_mean(d) {
            d -= 1;
        }
        let b = trailing_mean(d);
        let mut a: DVector<f64> = values.rows(0, d).into_owned();
        if !(b > 0.0) {
            return Err(Error::Degenerate("non-positive residual eigenvalue after initialization".into()));
        }
        if a[d - 1] <= b {
            a[d - 1] = b * (1.0 + 1e-6);
        }
        components.push(HdEdComponent::new(dense.mu.clone(), vectors.columns(0, d).into_owned(), a, b, dense.mixing)?);
        rules.push(rule);
    }
    Ok((HdMedModel::new(components, mixture.weights.clone())?, rules))
}

pub fn spectral_init(
    data: &RowBlock,
    k: usize,
    family: MixingFamily,
    spec: &InitSpec,
    seed: u64,
) -> Result<SpectralInit> {
    if data.dim() < 2 {
        return Err(Error::InvalidArgument("signals need at least two samples".into()));
    }
    let cfg = BatchConfig { k, family, iters: spec.batch_iters, restarts: spec.restarts, seed };
    let batch = fit_batch(data, &cfg)?;
    let (model, rules) = from_dense(&batch.mixture, spec)?;
    Ok(SpectralInit { model, rules, batch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_spectrum_gives_three() {
        let mut eig = vec![10.0, 8.0, 5.0];
        eig.extend(std::iter::repeat_n(0.1, 17));
        let (d, rule) = choose_dimension(&eig, &InitSpec::default()).unwrap();
        assert_eq!((d, rule), (3, DimensionRule::Knee));
    }

    #[test]
    fn flat_spectrum_falls_back() {
        let eig = vec![1.0; 10];
        let spec = InitSpec { d_max: 4, ..Default::default() };
        assert_eq!(choose_dimension(&eig, &spec).unwrap(), (4, DimensionRule::VarianceFallback));
        let spec = InitSpec { d_max: 64, ..Default::default() };
        // 95% of ten equal eigenvalues needs all ten, capped at M - 1
        assert_eq!(choose_dimension(&eig, &spec).unwrap(), (9, DimensionRule::VarianceFallback));
    }

    #[test]
    fn b_is_mean_of_trailing_eigenvalues() {
        let comp = HdEdComponent::new(
            DVector::from_element(6, 1.0),
            nalgebra::DMatrix::identity(6, 2),
            nalgebra::dvector![9.0, 4.0],
            0.5,
            MixingFamily::Gaussian,
        )
        .unwrap();
        let data = comp.sample(3000, 4);
        let init = spectral_init(&data, 1, MixingFamily::Gaussian, &InitSpec::default(), 1).unwrap();
        let c = &init.model.components()[0];
        let (values, _) = sorted_eigen(init.batch.mixture.components[0].cov.clone());
        let d = c.intrinsic_dim();
        assert_eq!(d, 2);
        let expected = values.rows(d, 6 - d).sum() / (6 - d) as f64;
        assert_eq!(c.b(), expected);
    }
}
