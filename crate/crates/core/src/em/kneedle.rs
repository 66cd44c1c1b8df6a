//! Knee detection on decreasing curves (scree plots, BIC curves).

use crate::error::{Error, Result};

/// Knee of a non-increasing sequence sampled at unit spacing.
///
/// Returns `Ok(None)` when no point clears the sensitivity threshold.
pub fn kneedle(values: &[f64], sensitivity: f64) -> Result<Option<usize>> {
    let x: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    kneedle_xy(&x, values, sensitivity)
}

/// Knee of a convex, non-increasing curve `y(x)` with increasing `x`.
///
/// Both axes are min-max normalized, `y` is flipped so the curve rises,
/// and the difference curve `y' − x` is searched for local maxima. A local
/// maximum is a knee when the difference curve later drops below it by
/// more than `sensitivity` times the mean normalized `x` spacing before
/// the next local maximum. Among knees the one with the largest difference
/// wins.
pub fn kneedle_xy(x: &[f64], y: &[f64], sensitivity: f64) -> Result<Option<usize>> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::dim(n, x.len()));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("knee detection needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite curve value".into()));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("x must be strictly increasing".into()));
    }
    if y.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("curve must be non-increasing".into()));
    }
    let (y_max, y_min) = (y[0], y[n - 1]);
    if y_max == y_min {
        return Ok(None);
    }
    let (x0, x_span) = (x[0], x[n - 1] - x[0]);
    let diff: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let xn = (xi - x0) / x_span;
            let yn = (yi - y_min) / (y_max - y_min);
            (1.0 - yn) - xn
        })
        .collect();

    let maxima: Vec<usize> = (1..n - 1).filter(|&i| diff[i] > diff[i - 1] && diff[i] >= diff[i + 1]).collect();
    let step = sensitivity / (n - 1) as f64;
    let mut best: Option<usize> = None;
    for (pos, &i) in maxima.iter().enumerate() {
        let end = maxima.get(pos + 1).copied().unwrap_or(n);
        let threshold = diff[i] - step;
        if (i + 1..end).any(|j| diff[j] < threshold) && best.is_none_or(|b| diff[i] > diff[b]) {
            best = Some(i);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_after_plateau() {
        assert_eq!(kneedle(&[10.0, 9.5, 9.0, 1.0, 0.9, 0.8], 1.0).unwrap(), Some(3));
    }

    #[test]
    fn linear_has_no_knee() {
        let v: Vec<f64> = (0..20).map(|i| 100.0 - 3.0 * i as f64).collect();
        assert_eq!(kneedle(&v, 1.0).unwrap(), None);
    }

    #[test]
    fn single_gap() {
        assert_eq!(kneedle(&[100.0, 1.0, 1.0, 1.0], 1.0).unwrap(), Some(1));
    }

    #[test]
    fn flat_curve_has_no_knee() {
        assert_eq!(kneedle(&[2.0; 6], 1.0).unwrap(), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kneedle(&[1.0, 2.0], 1.0).is_err());
        assert!(kneedle(&[1.0, 2.0, 0.5], 1.0).is_err());
    }
}
