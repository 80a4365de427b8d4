//! Autoregressive linear-regression concurrency predictor.
//!
//! Regresses each tick's mean concurrency on the `lags` preceding tick means
//! plus an intercept, by ordinary least squares (minimum-norm solution when
//! the lag columns are collinear).

use nalgebra::{DMatrix, DVector};

/// A predictor of next-tick concurrency from recent tick means.
pub trait ConcurrencyPredictor: std::fmt::Debug + Send {
    /// `recent` holds tick means oldest first.
    fn predict(&self, recent: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    intercept: f64,
    /// `coef[i]` multiplies the value `i + 1` ticks back.
    coef: Vec<f64>,
}

impl LinearModel {
    pub fn lags(&self) -> usize {
        self.coef.len()
    }

    /// Fits on `history` (oldest first). `None` for degenerate input: too
    /// short, non-finite, or constant.
    pub fn fit(history: &[f64], lags: usize) -> Option<LinearModel> {
        if lags == 0 || history.len() < lags + 2 || history.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let first = history[0];
        if history.iter().all(|&v| v == first) {
            return None;
        }
        let rows = history.len() - lags;
        let x = DMatrix::from_fn(rows, lags + 1, |r, c| if c == 0 { 1.0 } else { history[r + lags - c] });
        let y = DVector::from_iterator(rows, history[lags..].iter().copied());
        let beta = x.svd(true, true).solve(&y, 1e-10).ok()?;
        if beta.iter().any(|b| !b.is_finite()) {
            return None;
        }
        Some(LinearModel { intercept: beta[0], coef: beta.iter().skip(1).copied().collect() })
    }
}

impl ConcurrencyPredictor for LinearModel {
    fn predict(&self, recent: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (i, c) in self.coef.iter().enumerate() {
            let v = recent.len().checked_sub(i + 1).map_or(0.0, |k| recent[k]);
            y += c * v;
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_history_is_degenerate() {
        assert!(LinearModel::fit(&[0.0; 50], 8).is_none());
        assert!(LinearModel::fit(&[3.0; 50], 8).is_none());
        assert!(LinearModel::fit(&[1.0, 2.0, 3.0], 8).is_none());
    }

    #[test]
    fn linear_ramp_extrapolates_exactly() {
        let history: Vec<f64> = (0..60).map(|t| 2.0 + 0.5 * t as f64).collect();
        let m = LinearModel::fit(&history, 8).unwrap();
        let next = m.predict(&history);
        assert!((next - (2.0 + 0.5 * 60.0)).abs() < 1e-6, "{next}");
    }

    #[test]
    fn recovers_ar1_coefficients() {
        // y_t = 1 + 0.5 y_{t-1} + deterministic perturbation
        let mut h = vec![1.0];
        for t in 1..400 {
            let prev = h[t - 1];
            h.push(1.0 + 0.5 * prev + ((t * 7919) % 13) as f64 * 0.01);
        }
        let m = LinearModel::fit(&h, 1).unwrap();
        assert!((m.coef[0] - 0.5).abs() < 0.05, "{:?}", m);
    }

    #[test]
    fn sinusoid_prediction_has_nonzero_error() {
        let h: Vec<f64> = (0..200).map(|t| 3.0 + 2.0 * (t as f64 * 0.7).sin() + ((t * 31) % 7) as f64 * 0.3).collect();
        let m = LinearModel::fit(&h[..150], 8).unwrap();
        let err: f64 = (150..200).map(|t| (m.predict(&h[..t]) - h[t]).abs()).sum();
        assert!(err > 0.0);
    }
}
