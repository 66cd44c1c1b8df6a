//! Degrees-of-freedom update for Student (Gamma-mixed) components.

use statrs::function::gamma::digamma;

pub const NU_MIN: f64 = 0.1;
pub const NU_MAX: f64 = 1e3;

/// Left-hand side of the first-order condition for `nu` given the
/// normalized mixing statistics `E[w]` and `E[log w]`. Decreasing in `nu`.
pub fn dof_residual(nu: f64, mean_w: f64, mean_logw: f64) -> f64 {
    mean_logw - mean_w - digamma(nu / 2.0) + (nu / 2.0).ln() + 1.0
}

/// Trigamma by upward recurrence and the asymptotic series.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0))))
}

/// Solves the degrees-of-freedom root equation on `[NU_MIN, NU_MAX]`,
/// clamping to the bracket ends when the root lies outside.
pub fn solve_student_dof(mean_w: f64, mean_logw: f64) -> f64 {
    let f = |nu: f64| dof_residual(nu, mean_w, mean_logw);
    if !(mean_w.is_finite() && mean_logw.is_finite()) {
        return NU_MAX;
    }
    if f(NU_MAX) >= 0.0 {
        return NU_MAX;
    }
    if f(NU_MIN) <= 0.0 {
        return NU_MIN;
    }
    let (mut lo, mut hi) = (NU_MIN, NU_MAX);
    // bisect in log space, the bracket spans four decades
    while hi / lo > 1.0 + 1e-6 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut nu = 0.5 * (lo + hi);
    for _ in 0..8 {
        let slope = 1.0 / nu - 0.5 * trigamma(nu / 2.0);
        if slope >= 0.0 {
            break;
        }
        let next = nu - f(nu) / slope;
        if !(next > lo && next < hi) {
            break;
        }
        let done = (next - nu).abs() <= 1e-14 * nu;
        nu = next;
        if done {
            break;
        }
    }
    nu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_reference_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_dof() {
        let nu0: f64 = 7.0;
        let logw = digamma(nu0 / 2.0) - (nu0 / 2.0).ln();
        assert!((solve_student_dof(1.0, logw) - nu0).abs() < 1e-9);
    }

    #[test]
    fn clamps_outside_bracket() {
        // E[log w] = log E[w] means no dispersion: Gaussian limit
        assert_eq!(solve_student_dof(1.0, 0.0), NU_MAX);
        assert_eq!(solve_student_dof(1.0, -50.0), NU_MIN);
    }
}
