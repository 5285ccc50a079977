//! Generalized linear model fitters and the nuisance regression forest.
//!
//! Everything here is written against plain dense matrices: logistic
//! regression by iteratively reweighted least squares (the oracle model and
//! the negative-control diagnostic), cross-validated lasso for the X-learner
//! base models, and a subsampled regression forest whose out-of-bag
//! predictions drive the causal forest's local centering.

pub mod forest;
pub mod lasso;
pub mod logistic;

pub use forest::{fit_regression_forest, ForestParams, RegressionForest};
pub use lasso::{fit_lasso, Family, LassoFit};
pub use logistic::{fit_logistic, fit_logistic_ridge, LogisticFit};

/// Numerically stable inverse logit.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_roundtrip_and_tails() {
        for &p in &[1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((expit(logit(p)) - p).abs() < 1e-12);
        }
        assert!(expit(-800.0) >= 0.0);
        assert!(expit(800.0) <= 1.0);
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
    }
}
