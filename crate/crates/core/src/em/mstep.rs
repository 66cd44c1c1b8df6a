//! Maximization step: parameters from normalized sufficient statistics.
//!
//! Jointly maximizing the expected complete-data log-likelihood over the
//! Stiefel directions and the leading eigenvalues reduces to the top
//! eigenpairs of the weighted scatter matrix
//! `M_s = S2/s0 − (s1/s0)(s1/s0)ᵀ/(s4/s0)`, so the update is a symmetric
//! eigendecomposition rather than an iterative manifold search.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::stats::{ComponentStats, SuffStats};
use super::student::solve_student_dof;
use crate::elliptical::{HdEdComponent, MixingFamily};
use crate::error::{Error, Result};
use crate::mixture::HdMedModel;

/// Components whose share of the responsibility mass falls below this are
/// considered collapsed.
pub const COLLAPSE_FLOOR: f64 = 1e-8;

/// Relative floor on `b`, as a fraction of the average scatter eigenvalue.
pub const RESIDUAL_FLOOR: f64 = 1e-10;

/// Corrections applied to keep a component valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Repair {
    /// `b` raised to the eigenvalue floor.
    ResidualFloor { component: usize },
    /// Leading eigenvalues at or below `b` dropped.
    DimensionShrunk { component: usize, from: usize, to: usize },
    /// No direction with variance above the floor: a single direction was
    /// kept with an artificial gap over `b`.
    Degenerate { component: usize },
}

impl Repair {
    pub fn component(&self) -> usize {
        match *self {
            Repair::ResidualFloor { component }
            | Repair::DimensionShrunk { component, .. }
            | Repair::Degenerate { component } => component,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MStep {
    pub model: HdMedModel,
    pub repairs: Vec<Repair>,
}

/// Indices of components whose normalized mass is below [`COLLAPSE_FLOOR`].
pub fn collapsed_components(stats: &SuffStats) -> Vec<usize> {
    let total: f64 = stats.masses().iter().sum();
    stats
        .components
        .iter()
        .enumerate()
        .filter(|(_, c)| !(c.s0 / total >= COLLAPSE_FLOOR))
        .map(|(k, _)| k)
        .collect()
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue. The
/// sort is stable, so ties keep the solver's order.
pub(crate) fn sorted_eigen(mat: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(order.iter());
    (values, vectors)
}

/// Mean and scatter matrix `M_s` of one component's statistics.
pub(crate) fn mean_and_scatter(stats: &ComponentStats) -> (DVector<f64>, DMatrix<f64>) {
    let inv0 = 1.0 / stats.s0;
    let s1 = &stats.s1 * inv0;
    let s4 = stats.s4 * inv0;
    let mu = &s1 / s4;
    let mut scatter = &stats.s2 * inv0 - (&s1 * s1.transpose()) / s4;
    scatter = (&scatter + scatter.transpose()) * 0.5;
    (mu, scatter)
}

/// Re-estimates every component. `prev` supplies the intrinsic dimensions
/// and the mixing family.
pub fn m_step(stats: &SuffStats, prev: &HdMedModel) -> Result<MStep> {
    if stats.n_components() != prev.n_components() {
        return Err(Error::dim(prev.n_components(), stats.n_components()));
    }
    if stats.dim() != prev.dim() {
        return Err(Error::dim(prev.dim(), stats.dim()));
    }
    if let Some(&k) = collapsed_components(stats).first() {
        let total: f64 = stats.masses().iter().sum();
        return Err(Error::Collapse { component: k, mass: stats.components[k].s0 / total });
    }
    let total: f64 = stats.masses().iter().sum();
    let mut components = Vec::with_capacity(stats.n_components());
    let mut repairs = Vec::new();
    for (k, (cs, old)) in stats.components.iter().zip(prev.components()).enumerate() {
        let (comp, mut fixes) = component_m_step(k, cs, old.intrinsic_dim(), old.mixing())?;
        components.push(comp);
        repairs.append(&mut fixes);
    }
    let weights = stats.components.iter().map(|c| c.s0 / total).collect();
    Ok(MStep { model: HdMedModel::new(components, weights)?, repairs })
}

pub(crate) fn component_m_step(
    k: usize,
    cs: &ComponentStats,
    d: usize,
    mixing: &MixingFamily,
) -> Result<(HdEdComponent, Vec<Repair>)> {
    let m = cs.s1.len();
    if d >= m {
        return Err(Error::InvalidArgument(format!(
            "component {k}: intrinsic dimension {d} leaves no residual subspace in dimension {m}"
        )));
    }
    let mut repairs = Vec::new();
    let (mu, scatter) = mean_and_scatter(cs);
    let trace = scatter.trace();
    let (values, vectors) = sorted_eigen(scatter);

    let inv0 = 1.0 / cs.s0;
    let (s1, s3, s4) = (&cs.s1 * inv0, cs.s3 * inv0, cs.s4 * inv0);
    let lead: f64 = values.rows(0, d).sum();
    let mut b = (s4 * mu.dot(&mu) + s3 - 2.0 * mu.dot(&s1) - lead) / (m - d) as f64;

    let mut floor = RESIDUAL_FLOOR * trace / m as f64;
    if !(floor > 0.0) {
        floor = f64::MIN_POSITIVE.sqrt();
    }
    if !(b >= floor) {
        b = floor;
        repairs.push(Repair::ResidualFloor { component: k });
    }

    let kept = values.iter().take(d).take_while(|&&a| a > b).count();
    let (a, dstar) = if kept == 0 {
        repairs.push(Repair::Degenerate { component: k });
        (DVector::from_element(1, 2.0 * b), vectors.columns(0, 1).into_owned())
    } else {
        if kept < d {
            repairs.push(Repair::DimensionShrunk { component: k, from: d, to: kept });
        }
        (values.rows(0, kept).into_owned(), vectors.columns(0, kept).into_owned())
    };

    let mixing = match mixing {
        MixingFamily::Gaussian => MixingFamily::Gaussian,
        MixingFamily::Student { .. } => {
            MixingFamily::Student { nu: solve_student_dof(cs.s5[0] * inv0, cs.s5[1] * inv0) }
        }
    };
    let comp = HdEdComponent::new(mu, dstar, a, b, mixing)?;
    Ok((comp, repairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::RowBlock;
    use crate::em::stats::batch_stats;
    use nalgebra::dvector;

    fn start_model(m: usize, d: usize, mixing: MixingFamily) -> HdMedModel {
        let c = HdEdComponent::new(
            DVector::zeros(m),
            DMatrix::identity(m, d),
            DVector::from_fn(d, |i, _| 10.0 - i as f64),
            1.0,
            mixing,
        )
        .unwrap();
        HdMedModel::new(vec![c], vec![1.0]).unwrap()
    }

    #[test]
    fn all_mass_in_one_component_collapses() {
        let m = 3;
        let c0 = start_model(m, 1, MixingFamily::Gaussian).components()[0].clone();
        let c1 = c0.clone().with_mu(dvector![5.0, 5.0, 5.0]).unwrap();
        let model = HdMedModel::new(vec![c0, c1], vec![0.5, 0.5]).unwrap();
        let block = RowBlock::new(2, 3, vec![0.0, 0.1, 0.0, 0.2, 0.0, 0.1]).unwrap();
        let mut stats = batch_stats(&model, &block).unwrap();
        stats.components[1] = ComponentStats::zeros(3);
        stats.components[0].s0 = 1.0;
        match m_step(&stats, &model) {
            Err(Error::Collapse { component, .. }) => assert_eq!(component, 1),
            other => panic!("expected collapse, got {other:?}"),
        }
    }

    #[test]
    fn constant_data_hits_the_floor() {
        let model = start_model(4, 2, MixingFamily::Gaussian);
        let block = RowBlock::new(3, 4, [1.0, 2.0, 3.0, 4.0].repeat(3)).unwrap();
        let stats = batch_stats(&model, &block).unwrap();
        let out = m_step(&stats, &model).unwrap();
        assert!(out.repairs.iter().any(|r| matches!(r, Repair::Degenerate { .. })));
        let c = &out.model.components()[0];
        assert!(c.b() <= f64::MIN_POSITIVE.sqrt() * 1.0001);
        assert!((c.mu() - dvector![1.0, 2.0, 3.0, 4.0]).amax() < 1e-12);
    }

    #[test]
    fn full_dimension_is_rejected() {
        let model = start_model(3, 2, MixingFamily::Gaussian);
        let block = start_model(3, 2, MixingFamily::Gaussian).components()[0].sample(50, 1);
        let stats = batch_stats(&model, &block).unwrap();
        assert!(component_m_step(0, &stats.components[0], 3, &MixingFamily::Gaussian).is_err());
    }
}
