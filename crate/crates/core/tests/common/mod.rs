//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use hdmed::{HdEdComponent, HdMedModel, MixingFamily, ProjectionOperator, Result, RowBlock, SignalSource};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthonormal `m × d` matrix from the QR factor of a Gaussian matrix.
pub fn random_orthonormal(rng: &mut impl Rng, m: usize, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, m, d).qr().q()
}

/// Random valid component with `a` spread over `[b·1.5, b·20]`.
pub fn random_component(rng: &mut impl Rng, m: usize, d: usize, mixing: MixingFamily) -> HdEdComponent {
    let b = rng.random_range(0.2..2.0);
    let mut a: Vec<f64> = (0..d).map(|_| b * rng.random_range(1.5..20.0)).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mu = DVector::from_vec(gaussian_vec(rng, m));
    HdEdComponent::new(mu, random_orthonormal(rng, m, d), DVector::from_vec(a), b, mixing).unwrap()
}

pub fn random_model(rng: &mut impl Rng, m: usize, dims: &[usize], mixing: MixingFamily, spread: f64) -> HdMedModel {
    let comps: Vec<HdEdComponent> = dims
        .iter()
        .map(|&d| {
            let c = random_component(rng, m, d, mixing);
            let mu = c.mu() * spread;
            c.with_mu(mu).unwrap()
        })
        .collect();
    let raw: Vec<f64> = dims.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - head;
    HdMedModel::new(comps, weights).unwrap()
}

/// Dense scale matrix built from `Dstar` completed to a full orthonormal
/// basis, with eigenvalues `a` on the leading columns and `b` elsewhere.
pub fn dense_scale(comp: &HdEdComponent) -> DMatrix<f64> {
    let m = comp.dim();
    let d = comp.intrinsic_dim();
    let mut r = rng(0xC0FFEE);
    let mut basis = gaussian_matrix(&mut r, m, m);
    basis.columns_mut(0, d).copy_from(comp.dstar());
    let q = basis.qr().q();
    let mut eig = DVector::from_element(m, comp.b());
    eig.rows_mut(0, d).copy_from(comp.a());
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Squared Mahalanobis distance and log-determinant from a Cholesky factor.
pub fn dense_mahalanobis_logdet(sigma: &DMatrix<f64>, mu: &DVector<f64>, y: &[f64]) -> (f64, f64) {
    let chol = sigma.clone().cholesky().expect("positive definite");
    let diff = DVector::from_column_slice(y) - mu;
    let z = chol.l().solve_lower_triangular(&diff).unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    (z.norm_squared(), logdet)
}

/// Multivariate normal or Student-t log density from the dense scale.
pub fn dense_log_pdf(sigma: &DMatrix<f64>, mu: &DVector<f64>, mixing: &MixingFamily, y: &[f64]) -> f64 {
    let m = y.len() as f64;
    let (u, logdet) = dense_mahalanobis_logdet(sigma, mu, y);
    match *mixing {
        MixingFamily::Gaussian => -0.5 * m * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * u,
        MixingFamily::Student { nu } => {
            ln_gamma(0.5 * (nu + m)) - ln_gamma(0.5 * nu) - 0.5 * m * (nu * PI).ln() - 0.5 * logdet
                - 0.5 * (nu + m) * (u / nu).ln_1p()
        }
    }
}

pub fn dense_model_log_density(model: &HdMedModel, y: &[f64]) -> f64 {
    let terms: Vec<f64> = model
        .components()
        .iter()
        .zip(model.weights())
        .map(|(c, w)| w.ln() + dense_log_pdf(&dense_scale(c), c.mu(), c.mixing(), y))
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `∫ f(s) ds` over `[lo, hi]` by the trapezoid rule on `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut sum = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        sum += f(lo + i as f64 * h);
    }
    sum * h
}

/// Posterior moments `(E[W], E[log W])` of the mixing weight given the
/// squared distance `u`, with `W ~ Gamma(alpha, rate beta)` and a Gaussian
/// kernel `w^{M/2} exp(−w·u/2)`, integrated in `s = log w`.
pub fn quadrature_weight_moments(alpha: f64, beta: f64, m: usize, u: f64) -> (f64, f64) {
    let log_kernel = |s: f64| (alpha + 0.5 * m as f64) * s - (beta + 0.5 * u) * s.exp();
    let (lo, hi, peak) = kernel_window(alpha, beta, m, u);
    let h0 = log_kernel(peak);
    let n = 200_000;
    let z = trapezoid(|s| (log_kernel(s) - h0).exp(), lo, hi, n);
    let ew = trapezoid(|s| s.exp() * (log_kernel(s) - h0).exp(), lo, hi, n) / z;
    let elog = trapezoid(|s| s * (log_kernel(s) - h0).exp(), lo, hi, n) / z;
    (ew, elog)
}

fn kernel_window(alpha: f64, beta: f64, m: usize, u: f64) -> (f64, f64, f64) {
    let shape = alpha + 0.5 * m as f64;
    let peak = (shape / (beta + 0.5 * u)).ln();
    (peak - 60.0 / shape - 10.0, peak + 6.0, peak)
}

/// `log ∫ (2π)^{−M/2} w^{M/2} e^{−w·u/2} Gamma(w; alpha, beta) dw`.
pub fn quadrature_log_generator(alpha: f64, beta: f64, m: usize, u: f64) -> f64 {
    let log_kernel = |s: f64| (alpha + 0.5 * m as f64) * s - (beta + 0.5 * u) * s.exp();
    let (lo, hi, peak) = kernel_window(alpha, beta, m, u);
    let h0 = log_kernel(peak);
    let z = trapezoid(|s| (log_kernel(s) - h0).exp(), lo, hi, 200_000);
    alpha * beta.ln() - ln_gamma(alpha) - 0.5 * m as f64 * (2.0 * PI).ln() + h0 + z.ln()
}

/// Adjusted Rand index from a contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// Principal angles in degrees between the column spans of two orthonormal
/// matrices, largest first.
pub fn principal_angles_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let sv = (a.transpose() * b).singular_values();
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).acos().to_degrees()).collect();
    angles.sort_by(|x, y| y.total_cmp(x));
    angles
}

/// Permutation `p` minimizing `Σ_k cost[k][p[k]]`, by enumeration.
pub fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    fn rec(cost: &[Vec<f64>], k: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if k == cost.len() {
            let total: f64 = cur.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if total < best.0 {
                *best = (total, cur.clone());
            }
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(cost, k + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    rec(cost, 0, &mut vec![false; cost.len()], &mut Vec::new(), &mut best);
    best.1
}

/// Endless-until-`n` stream of draws from a mixture, generated block by
/// block so the full data set never exists in memory. Rows flagged as
/// outliers are drawn uniformly from a box and labelled `K`.
pub struct MixtureStream {
    model: HdMedModel,
    ops: Vec<ProjectionOperator>,
    n: u64,
    seed: u64,
    outlier_rate: f64,
    outlier_box: f64,
    pos: u64,
    rng: ChaCha8Rng,
    labels: Vec<usize>,
    pub max_block: usize,
}

impl MixtureStream {
    pub fn new(model: HdMedModel, n: u64, seed: u64) -> Self {
        let ops = model.components().iter().map(ProjectionOperator::from_component).collect();
        Self { model, ops, n, seed, outlier_rate: 0.0, outlier_box: 0.0, pos: 0, rng: rng(seed), labels: Vec::new(), max_block: 0 }
    }

    pub fn with_outliers(mut self, rate: f64, half_width: f64) -> Self {
        self.outlier_rate = rate;
        self.outlier_box = half_width;
        self
    }

    /// Labels of the rows in the most recent block.
    pub fn last_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn model(&self) -> &HdMedModel {
        &self.model
    }
}

impl SignalSource for MixtureStream {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn len_hint(&self) -> Option<u64> {
        Some(self.n)
    }

    fn rewind(&mut self) -> Result<()> {
        self.pos = 0;
        self.rng = rng(self.seed);
        Ok(())
    }

    fn next_block(&mut self, max_rows: usize) -> Result<Option<RowBlock>> {
        if self.pos >= self.n {
            return Ok(None);
        }
        let rows = (max_rows as u64).min(self.n - self.pos) as usize;
        self.max_block = self.max_block.max(rows);
        let m = self.model.dim();
        let mut out = RowBlock::zeros(rows, m);
        self.labels.clear();
        let k = self.model.n_components();
        for i in 0..rows {
            if self.outlier_rate > 0.0 && self.rng.random::<f64>() < self.outlier_rate {
                for v in out.row_mut(i) {
                    *v = self.rng.random_range(-self.outlier_box..self.outlier_box);
                }
                self.labels.push(k);
                continue;
            }
            let mut x = self.rng.random::<f64>();
            let mut label = k - 1;
            for (j, w) in self.model.weights().iter().enumerate() {
                if x < *w {
                    label = j;
                    break;
                }
                x -= w;
            }
            self.model.components()[label].sample_into(&mut self.rng, &self.ops[label], out.row_mut(i));
            self.labels.push(label);
        }
        self.pos += rows as u64;
        Ok(Some(out))
    }
}

/// Peak resident set size in bytes, when the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn block_from_matrix(m: &DMatrix<f64>) -> RowBlock {
    RowBlock::new(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

pub fn matrix_from_block(b: &RowBlock) -> DMatrix<f64> {
    DMatrix::from_row_slice(b.rows(), b.dim(), b.as_slice())
}
