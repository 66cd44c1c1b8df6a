//! In-memory EM for full-covariance Gaussian or Student mixtures, used to
//! initialize the online fit from a subsample.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::student::solve_student_dof;
use crate::block::RowBlock;
use crate::elliptical::{generator_eval, weight_posterior_at, MixingFamily};
use crate::error::{Error, Result};
use crate::mixture::{argmax, log_sum_exp};

const KMEANS_ITERS: usize = 20;
const RIDGE_START: f64 = 1e-9;
const RIDGE_TRIES: usize = 12;
// squared Cholesky pivots below this fraction of the mean variance count as singular
const MIN_PIVOT: f64 = 1e-12;
const MIN_WEIGHT: f64 = 1e-300;
const BLOCK_ROWS: usize = 256;

/// Full-covariance elliptical component with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseComponent {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mixing: MixingFamily,
    chol: Cholesky<f64, Dyn>,
    l_inv: DMatrix<f64>,
    log_det: f64,
}

impl DenseComponent {
    /// Factorizes `cov`, adding a growing ridge when it is not positive
    /// definite. Returns the component and whether a ridge was needed.
    pub fn new(mu: DVector<f64>, cov: DMatrix<f64>, mixing: MixingFamily) -> Result<(Self, bool)> {
        let m = mu.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::dim(m, cov.nrows()));
        }
        let mut cov = (&cov + cov.transpose()) * 0.5;
        let scale = (cov.trace() / m as f64).abs().max(f64::MIN_POSITIVE.sqrt());
        let mut ridged = false;
        let mut ridge = RIDGE_START * scale;
        for _ in 0..=RIDGE_TRIES {
            if let Some(chol) = Cholesky::new(cov.clone()) {
                let diag = chol.l_dirty().diagonal();
                let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
                let min_pivot = diag.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
                if log_det.is_finite() && min_pivot >= MIN_PIVOT * scale {
                    let l_inv = chol
                        .l_dirty()
                        .solve_lower_triangular(&DMatrix::identity(m, m))
                        .expect("factor is nonsingular");
                    return Ok((Self { mu, cov, mixing, chol, l_inv, log_det }, ridged));
                }
            }
            for i in 0..m {
                cov[(i, i)] += ridge;
            }
            ridged = true;
            ridge *= 10.0;
        }
        Err(Error::Degenerate("covariance could not be repaired".into()))
    }

    pub fn mahalanobis(&self, y: &[f64]) -> f64 {
        let diff = DVector::from_iterator(y.len(), y.iter().zip(self.mu.iter()).map(|(a, b)| a - b));
        let z = self.chol.l_dirty().solve_lower_triangular(&diff).expect("factor is nonsingular");
        z.norm_squared()
    }

    /// Squared Mahalanobis distances of rows `start..end` of `data`.
    pub fn mahalanobis_rows(&self, data: &RowBlock, start: usize, end: usize) -> Vec<f64> {
        let m = self.mu.len();
        let mut diff = DMatrix::<f64>::zeros(m, end - start);
        for (col, i) in (start..end).enumerate() {
            for (j, (y, mu)) in data.row(i).iter().zip(self.mu.iter()).enumerate() {
                diff[(j, col)] = y - mu;
            }
        }
        let z = &self.l_inv * diff;
        z.column_iter().map(|c| c.norm_squared()).collect()
    }

    pub fn log_pdf_at(&self, u: f64) -> f64 {
        -0.5 * self.log_det + generator_eval(&self.mixing, u, self.mu.len()).log_g
    }

    pub fn log_pdf(&self, y: &[f64]) -> f64 {
        self.log_pdf_at(self.mahalanobis(y))
    }
}

/// Result of [`fit_batch`]: a dense mixture ready for spectral decomposition.
#[derive(Debug, Clone)]
pub struct DenseMixture {
    pub weights: Vec<f64>,
    pub components: Vec<DenseComponent>,
}

impl DenseMixture {
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let joint: Vec<f64> =
            self.components.iter().zip(&self.weights).map(|(c, w)| w.ln() + c.log_pdf(y)).collect();
        log_sum_exp(&joint)
    }

    pub fn log_likelihood(&self, data: &RowBlock) -> f64 {
        let parts: Vec<f64> = block_starts(data.rows())
            .into_par_iter()
            .map(|start| {
                let (_, joint) = self.block_terms(data, start);
                joint.iter().map(|j| log_sum_exp(j)).sum()
            })
            .collect();
        parts.into_iter().sum()
    }

    /// Distances and joint log densities `log π_k + log f_k` for the rows of
    /// the block starting at `start`, indexed `[row][component]`.
    fn block_terms(&self, data: &RowBlock, start: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let end = (start + BLOCK_ROWS).min(data.rows());
        let per_comp: Vec<Vec<f64>> = self.components.iter().map(|c| c.mahalanobis_rows(data, start, end)).collect();
        let u: Vec<Vec<f64>> = (0..end - start).map(|i| per_comp.iter().map(|d| d[i]).collect()).collect();
        let joint = u
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.components)
                    .zip(&self.weights)
                    .map(|((&ui, c), w)| w.ln() + c.log_pdf_at(ui))
                    .collect()
            })
            .collect();
        (u, joint)
    }
}

fn block_starts(n: usize) -> Vec<usize> {
    (0..n).step_by(BLOCK_ROWS).collect()
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub k: usize,
    pub family: MixingFamily,
    pub iters: usize,
    /// Independent k-means++ starts; the best final likelihood is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { k: 1, family: MixingFamily::Gaussian, iters: 50, restarts: 1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchFit {
    pub mixture: DenseMixture,
    /// Log-likelihood before each iteration and after the last one.
    pub loglik_trace: Vec<f64>,
    /// Number of covariance updates that needed a ridge.
    pub ridge_repairs: usize,
}

impl BatchFit {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace has at least one entry")
    }
}

pub fn fit_batch(data: &RowBlock, cfg: &BatchConfig) -> Result<BatchFit> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if data.rows() < cfg.k {
        return Err(Error::InvalidArgument(format!("{} rows cannot seed {} clusters", data.rows(), cfg.k)));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in batch data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<BatchFit> = None;
    for _ in 0..cfg.restarts.max(1) {
        let labels = kmeans_labels(data, cfg.k, &mut rng);
        let fit = run_em(data, cfg, &labels)?;
        if best.as_ref().is_none_or(|b| fit.final_loglik() > b.final_loglik()) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn d2_sample(nearest: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let n = nearest.len();
    let total: f64 = nearest.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..n);
    }
    let mut target = rng.random::<f64>() * total;
    for (i, d) in nearest.iter().enumerate() {
        if target < *d {
            return i;
        }
        target -= d;
    }
    n - 1
}

/// Greedy k-means++ seeding followed by Lloyd iterations. Each new center is
/// the best of several D²-sampled candidates by total potential, so isolated
/// outliers rarely become seeds.
fn kmeans_labels(data: &RowBlock, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers: Vec<Vec<f64>> = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = data.iter_rows().map(|y| sq_dist(y, &centers[0])).collect();
    while centers.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let c = d2_sample(&nearest, rng);
            let updated: Vec<f64> =
                (0..n).into_par_iter().map(|i| nearest[i].min(sq_dist(data.row(i), data.row(c)))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, c, updated));
            }
        }
        let (_, best, updated) = best.expect("at least one trial");
        nearest = updated;
        centers.push(data.row(best).to_vec());
    }
    let mut labels = vec![0; n];
    for _ in 0..KMEANS_ITERS {
        let new_labels: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = data.row(i);
                let d: Vec<f64> = centers.iter().map(|c| -sq_dist(y, c)).collect();
                argmax(&d)
            })
            .collect();
        let changed = new_labels != labels;
        labels = new_labels;
        let m = data.dim();
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // empty cluster: move it to the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(data.row(a), &centers[labels[a]]);
                        let db = sq_dist(data.row(b), &centers[labels[b]]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centers[c] = data.row(far).to_vec();
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

struct EStep {
    loglik: f64,
    /// n × k responsibilities
    resp: Vec<Vec<f64>>,
    /// n × k posterior weight moments
    e_w: Vec<Vec<f64>>,
    e_logw: Vec<Vec<f64>>,
}

fn e_step(data: &RowBlock, mix: &DenseMixture) -> Result<EStep> {
    let m = data.dim();
    let blocks: Vec<Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>> = block_starts(data.rows())
        .into_par_iter()
        .map(|start| {
            let (u, joint) = mix.block_terms(data, start);
            u.into_iter()
                .zip(joint)
                .map(|(u_row, mut joint)| {
                    let mut ew = Vec::with_capacity(u_row.len());
                    let mut elw = Vec::with_capacity(u_row.len());
                    for (c, &ui) in mix.components.iter().zip(&u_row) {
                        let wp = weight_posterior_at(&c.mixing, ui, m);
                        ew.push(wp.e_w);
                        elw.push(wp.e_logw);
                    }
                    let lse = log_sum_exp(&joint);
                    for v in &mut joint {
                        *v = (*v - lse).exp();
                    }
                    (lse, joint, ew, elw)
                })
                .collect()
        })
        .collect();
    let rows = blocks.into_iter().flatten();
    let mut out = EStep { loglik: 0.0, resp: Vec::new(), e_w: Vec::new(), e_logw: Vec::new() };
    for (lse, r, ew, elw) in rows {
        if !lse.is_finite() {
            return Err(Error::Degenerate("batch EM produced a zero-density observation".into()));
        }
        out.loglik += lse;
        out.resp.push(r);
        out.e_w.push(ew);
        out.e_logw.push(elw);
    }
    Ok(out)
}

/// Weighted mean and covariance update of every component.
fn m_step(data: &RowBlock, cfg: &BatchConfig, e: &EStep, prev: Option<&DenseMixture>) -> Result<(DenseMixture, usize)> {
    let (n, m) = (data.rows(), data.dim());
    let mut weights = Vec::with_capacity(cfg.k);
    let mut components = Vec::with_capacity(cfg.k);
    let mut ridges = 0;
    for c in 0..cfg.k {
        let mass: f64 = e.resp.iter().map(|r| r[c]).sum();
        let coef: Vec<f64> = (0..n).map(|i| e.resp[i][c] * e.e_w[i][c]).collect();
        let wsum: f64 = coef.iter().sum();
        let mixing = match (&cfg.family, prev) {
            (MixingFamily::Gaussian, _) => MixingFamily::Gaussian,
            (MixingFamily::Student { nu }, None) => MixingFamily::Student { nu: *nu },
            (MixingFamily::Student { .. }, Some(_)) if mass > 0.0 => {
                let mean_w = wsum / mass;
                let mean_logw = (0..n).map(|i| e.resp[i][c] * e.e_logw[i][c]).sum::<f64>() / mass;
                MixingFamily::Student { nu: solve_student_dof(mean_w, mean_logw) }
            }
            (MixingFamily::Student { .. }, Some(p)) => p.components[c].mixing,
        };
        let (mu, cov) = if wsum > 0.0 && mass > 0.0 {
            let mut mu = DVector::<f64>::zeros(m);
            for (i, y) in data.iter_rows().enumerate() {
                mu.axpy(coef[i], &DVector::from_column_slice(y), 1.0);
            }
            mu /= wsum;
            let mut centered = DMatrix::<f64>::zeros(m, n);
            for (i, y) in data.iter_rows().enumerate() {
                for j in 0..m {
                    centered[(j, i)] = y[j] - mu[j];
                }
            }
            let mut scaled = centered.clone();
            for (i, mut col) in scaled.column_iter_mut().enumerate() {
                col *= coef[i];
            }
            let cov = (&scaled * centered.transpose()) / mass;
            (mu, cov)
        } else {
            // empty component keeps its previous parameters
            let p = prev.ok_or_else(|| Error::Degenerate("empty initial cluster".into()))?;
            (p.components[c].mu.clone(), p.components[c].cov.clone())
        };
        let (comp, ridged) = DenseComponent::new(mu, cov, mixing)?;
        ridges += usize::from(ridged);
        components.push(comp);
        weights.push((mass / n as f64).max(MIN_WEIGHT));
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok((DenseMixture { weights, components }, ridges))
}

fn run_em(data: &RowBlock, cfg: &BatchConfig, labels: &[usize]) -> Result<BatchFit> {
    let k = cfg.k;
    let hard = EStep {
        loglik: f64::NAN,
        resp: labels.iter().map(|&l| (0..k).map(|c| f64::from(u8::from(c == l))).collect()).collect(),
        e_w: vec![vec![1.0; k]; labels.len()],
        e_logw: vec![vec![0.0; k]; labels.len()],
    };
    let (mut mix, mut ridge_repairs) = m_step(data, cfg, &hard, None)?;
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    for _ in 0..cfg.iters {
        let e = e_step(data, &mix)?;
        trace.push(e.loglik);
        let (next, ridges) = m_step(data, cfg, &e, Some(&mix))?;
        mix = next;
        ridge_repairs += ridges;
    }
    trace.push(mix.log_likelihood(data));
    Ok(BatchFit { mixture: mix, loglik_trace: trace, ridge_repairs })
}
