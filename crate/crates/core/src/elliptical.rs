//! High-dimensional elliptical components: Gaussian scale mixtures whose
//! scale matrix is `b·I` plus a rank-`d` term along orthonormal directions.
//!
//! All densities are evaluated in log space from the reduced quantities
//! (`Dstar`, `a`, `b`), so nothing of size `M × M` is ever formed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::block::RowBlock;
use crate::error::{Error, Result};
use crate::projection::ProjectionOperator;

const ORTHONORMAL_TOL: f64 = 1e-10;

/// Discriminant of [`MixingFamily`], shared by every component of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyTag {
    Gaussian,
    Student,
}

/// Distribution of the positive mixing variable `W` scaling each Gaussian draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingFamily {
    /// Degenerate mixing `W ≡ 1`.
    Gaussian,
    /// `W ~ Gamma(nu/2, rate = nu/2)`.
    Student { nu: f64 },
}

impl MixingFamily {
    pub fn student(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidArgument(format!("degrees of freedom must be positive, got {nu}")));
        }
        Ok(MixingFamily::Student { nu })
    }

    pub fn tag(&self) -> FamilyTag {
        match self {
            MixingFamily::Gaussian => FamilyTag::Gaussian,
            MixingFamily::Student { .. } => FamilyTag::Student,
        }
    }

    /// Gamma shape and rate of the mixing variable, `None` for the Gaussian.
    pub fn gamma_params(&self) -> Option<(f64, f64)> {
        match *self {
            MixingFamily::Gaussian => None,
            MixingFamily::Student { nu } => Some((nu / 2.0, nu / 2.0)),
        }
    }

    /// Number of free mixing parameters.
    pub fn free_params(&self) -> usize {
        match self {
            MixingFamily::Gaussian => 0,
            MixingFamily::Student { .. } => 1,
        }
    }
}

/// Log density generator and its derivative at a squared Mahalanobis distance.
///
/// `log_g` is normalized: `log_pdf(y) = -0.5·log|Σ| + log_g(u(y))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorEval {
    pub log_g: f64,
    pub dlog_g: f64,
}

pub fn generator_eval(mixing: &MixingFamily, u: f64, m: usize) -> GeneratorEval {
    let half_m = m as f64 / 2.0;
    match mixing.gamma_params() {
        None => GeneratorEval { log_g: -half_m * (2.0 * PI).ln() - 0.5 * u, dlog_g: -0.5 },
        Some((alpha, beta)) => {
            let shape = alpha + half_m;
            let log_g = ln_gamma(shape) - ln_gamma(alpha) + alpha * beta.ln()
                - half_m * (2.0 * PI).ln()
                - shape * (beta + 0.5 * u).ln();
            GeneratorEval { log_g, dlog_g: -shape / (2.0 * beta + u) }
        }
    }
}

/// Posterior moments `E[W | y]` and `E[log W | y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightPosterior {
    pub e_w: f64,
    pub e_logw: f64,
}

/// Posterior moments of the mixing variable given the squared distance `u`.
/// For Gamma mixing the posterior is `Gamma(alpha + M/2, beta + u/2)`.
pub fn weight_posterior_at(mixing: &MixingFamily, u: f64, m: usize) -> WeightPosterior {
    match mixing.gamma_params() {
        None => WeightPosterior { e_w: 1.0, e_logw: 0.0 },
        Some((alpha, beta)) => {
            let m = m as f64;
            WeightPosterior {
                e_w: (2.0 * alpha + m) / (u + 2.0 * beta),
                e_logw: digamma(alpha + m / 2.0) - (beta + u / 2.0).ln(),
            }
        }
    }
}

/// One elliptical component with parsimonious scale matrix
/// `Σ = Dstar·diag(a)·Dstarᵀ + b·(I − Dstar·Dstarᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HdEdComponent {
    mu: DVector<f64>,
    dstar: DMatrix<f64>,
    a: DVector<f64>,
    b: f64,
    mixing: MixingFamily,
}

impl HdEdComponent {
    /// Validates shapes, orthonormality of `dstar`, and `a_1 ≥ … ≥ a_d > b > 0`.
    pub fn new(
        mu: DVector<f64>,
        dstar: DMatrix<f64>,
        a: DVector<f64>,
        b: f64,
        mixing: MixingFamily,
    ) -> Result<Self> {
        let m = mu.len();
        let d = a.len();
        if d == 0 || d > m {
            return Err(Error::InvalidComponent(format!("intrinsic dimension {d} outside 1..={m}")));
        }
        if dstar.nrows() != m || dstar.ncols() != d {
            return Err(Error::InvalidComponent(format!(
                "Dstar is {}x{}, expected {m}x{d}",
                dstar.nrows(),
                dstar.ncols()
            )));
        }
        if mu.iter().chain(dstar.iter()).chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidComponent("non-finite parameter".into()));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidComponent(format!("residual eigenvalue must be positive, got {b}")));
        }
        if a.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidComponent("eigenvalues not in non-increasing order".into()));
        }
        if a[d - 1] <= b {
            return Err(Error::InvalidComponent(format!(
                "smallest leading eigenvalue {} does not exceed b = {b}",
                a[d - 1]
            )));
        }
        let gram = dstar.tr_mul(&dstar);
        let err = (gram - DMatrix::<f64>::identity(d, d)).amax();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidComponent(format!("Dstar columns not orthonormal (error {err:.2e})")));
        }
        if let MixingFamily::Student { nu } = mixing {
            MixingFamily::student(nu).map_err(|e| Error::InvalidComponent(e.to_string()))?;
        }
        Ok(Self { mu, dstar, a, b, mixing })
    }

    /// Ambient dimension `M`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Intrinsic dimension `d`.
    pub fn intrinsic_dim(&self) -> usize {
        self.a.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn dstar(&self) -> &DMatrix<f64> {
        &self.dstar
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mixing(&self) -> &MixingFamily {
        &self.mixing
    }

    pub fn with_mixing(mut self, mixing: MixingFamily) -> Self {
        self.mixing = mixing;
        self
    }

    /// Same scale structure, shifted location.
    pub fn with_mu(mut self, mu: DVector<f64>) -> Result<Self> {
        if mu.len() != self.dim() {
            return Err(Error::dim(self.dim(), mu.len()));
        }
        self.mu = mu;
        Ok(self)
    }

    /// Keeps the `d` leading latent directions and the same `b`.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.intrinsic_dim() {
            return Err(Error::InvalidArgument(format!("cannot truncate to {d} of {} dimensions", self.intrinsic_dim())));
        }
        Ok(Self {
            mu: self.mu.clone(),
            dstar: self.dstar.columns(0, d).into_owned(),
            a: self.a.rows(0, d).into_owned(),
            b: self.b,
            mixing: self.mixing,
        })
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::dim(self.dim(), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        Ok(())
    }

    /// Squared Mahalanobis distance in `O(M·d)`: the in-subspace part weighted
    /// by `1/a_m` plus the orthogonal residual weighted by `1/b`.
    pub fn mahalanobis_reduced(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        Ok(self.mahalanobis_unchecked(y))
    }

    pub(crate) fn mahalanobis_unchecked(&self, y: &[f64]) -> f64 {
        let m = self.dim();
        let mut resid: Vec<f64> = y.iter().zip(self.mu.iter()).map(|(yi, mi)| yi - mi).collect();
        let mut inside = 0.0;
        for (k, col) in self.dstar.column_iter().enumerate() {
            let c: f64 = col.iter().zip(&resid).map(|(di, ri)| di * ri).sum();
            inside += c * c / self.a[k];
            for i in 0..m {
                resid[i] -= c * col[i];
            }
        }
        let outside: f64 = resid.iter().map(|r| r * r).sum();
        inside + outside / self.b
    }

    /// `log|Σ| = Σ log a_m + (M − d)·log b`.
    pub fn log_det_scale(&self) -> f64 {
        let trailing = (self.dim() - self.intrinsic_dim()) as f64;
        self.a.iter().map(|v| v.ln()).sum::<f64>() + trailing * self.b.ln()
    }

    /// Fully normalized log density.
    pub fn log_pdf(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        Ok(self.log_pdf_unchecked(y))
    }

    pub(crate) fn log_pdf_unchecked(&self, y: &[f64]) -> f64 {
        let u = self.mahalanobis_unchecked(y);
        self.log_pdf_at(u)
    }

    pub(crate) fn log_pdf_at(&self, u: f64) -> f64 {
        -0.5 * self.log_det_scale() + generator_eval(&self.mixing, u, self.dim()).log_g
    }

    pub fn weight_posterior(&self, y: &[f64]) -> Result<WeightPosterior> {
        self.check_dim(y)?;
        let u = self.mahalanobis_unchecked(y);
        Ok(weight_posterior_at(&self.mixing, u, self.dim()))
    }

    /// Dense `M × M` scale matrix. Only meant for small `M`.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut sigma = DMatrix::<f64>::identity(m, m) * self.b;
        for (k, col) in self.dstar.column_iter().enumerate() {
            sigma += (col * col.transpose()) * (self.a[k] - self.b);
        }
        sigma
    }

    /// `n` draws from the latent generative model, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> RowBlock {
        let op = ProjectionOperator::from_component(self);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = RowBlock::zeros(n, self.dim());
        for i in 0..n {
            self.sample_into(&mut rng, &op, out.row_mut(i));
        }
        out
    }

    /// Writes one draw `V·x + μ + e` into `out`, with `x ~ N(0, I/w)`,
    /// `e ~ N(0, b/w·I)` and `w` from the mixing law.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, op: &ProjectionOperator, out: &mut [f64]) {
        let w = match self.mixing.gamma_params() {
            None => 1.0,
            Some((alpha, beta)) => {
                let gamma = Gamma::new(alpha, 1.0 / beta).expect("gamma parameters validated");
                gamma.sample(rng)
            }
        };
        let sd = 1.0 / w.sqrt();
        let noise_sd = (self.b / w).sqrt();
        for (o, mu) in out.iter_mut().zip(self.mu.iter()) {
            let e: f64 = rng.sample(StandardNormal);
            *o = mu + noise_sd * e;
        }
        for col in op.loading().column_iter() {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
            for (o, v) in out.iter_mut().zip(col.iter()) {
                *o += v * x;
            }
        }
    }
}
