//! Two-stage X-learner with cross-validated LASSO base learners.
//!
//! Stage 1 fits arm-specific logistic outcome models mu1 and mu0. Each row
//! then gets an imputed individual effect: treated rows compare their
//! observed outcome against mu0's counterfactual, untreated rows compare
//! mu1's counterfactual against their observed outcome. Stage 2 regresses
//! those pseudo-outcomes on the covariates within each arm, and a logistic
//! propensity model blends the two stage-2 surfaces.

use crate::error::{Error, Result};
use crate::glm::lasso::{fit_lasso, Family, LassoFit};
use crate::matrix::Matrix;
use crate::stream::Stream;

const MIN_ARM_ROWS: usize = 50;
const CV_FOLDS: usize = 10;
const PROPENSITY_CLAMP: (f64, f64) = (0.01, 0.99);

/// A fitted X-learner.
#[derive(Debug)]
pub struct XLearnerFit {
    /// Logistic outcome model on the treated arm.
    pub mu1: LassoFit,
    /// Logistic outcome model on the untreated arm.
    pub mu0: LassoFit,
    /// Linear pseudo-outcome model on the treated arm.
    pub tau1: LassoFit,
    /// Linear pseudo-outcome model on the untreated arm.
    pub tau0: LassoFit,
    /// Logistic propensity model on all rows.
    pub propensity: LassoFit,
}

/// Blends the two stage-2 predictions with the propensity weight. Exposed
/// so the boundary behavior is directly testable: pi = 0 returns tau1
/// exactly, pi = 1 returns tau0 exactly.
pub fn combine_cate(tau1: f64, tau0: f64, pi: f64) -> f64 {
    tau1 * (1.0 - pi) + tau0 * pi
}

impl XLearnerFit {
    /// Risk-difference effect predictions (negative = benefit), one per row.
    pub fn predict_cate(&self, x: &Matrix) -> Vec<f64> {
        let tau1 = self.tau1.predict(x);
        let tau0 = self.tau0.predict(x);
        let pi = self.propensity.predict(x);
        tau1.iter()
            .zip(&tau0)
            .zip(&pi)
            .map(|((t1, t0), p)| {
                combine_cate(*t1, *t0, p.clamp(PROPENSITY_CLAMP.0, PROPENSITY_CLAMP.1))
            })
            .collect()
    }
}

/// Fits the X-learner. `a` is the 0/1 treatment indicator; both arms must
/// have at least 50 rows.
pub fn fit_xlearner(x: &Matrix, y: &[f64], a: &[f64], stream: &Stream) -> Result<XLearnerFit> {
    let n = x.rows();
    if y.len() != n || a.len() != n {
        return Err(Error::fit("X-learner inputs must share row count"));
    }
    if a.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::fit("treatment indicator must be 0/1"));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| a[i] == 1.0).collect();
    let untreated: Vec<usize> = (0..n).filter(|&i| a[i] == 0.0).collect();
    if treated.len() < MIN_ARM_ROWS {
        return Err(Error::fit(format!(
            "treated arm has {} rows; X-learner requires at least {MIN_ARM_ROWS}",
            treated.len()
        )));
    }
    if untreated.len() < MIN_ARM_ROWS {
        return Err(Error::fit(format!(
            "untreated arm has {} rows; X-learner requires at least {MIN_ARM_ROWS}",
            untreated.len()
        )));
    }

    let x1 = x.select_rows(&treated);
    let x0 = x.select_rows(&untreated);
    let y1: Vec<f64> = treated.iter().map(|&i| y[i]).collect();
    let y0: Vec<f64> = untreated.iter().map(|&i| y[i]).collect();

    let mu1 = fit_lasso(&x1, &y1, Family::Binomial, CV_FOLDS, &stream.child("mu1"))?;
    let mu0 = fit_lasso(&x0, &y0, Family::Binomial, CV_FOLDS, &stream.child("mu0"))?;

    // Imputed effects: observed minus counterfactual, oriented so both arms
    // estimate E[Y(1) - Y(0) | x] on the risk-difference scale.
    let d1: Vec<f64> = y1
        .iter()
        .zip(mu0.predict(&x1))
        .map(|(yi, m0)| yi - m0)
        .collect();
    let d0: Vec<f64> = y0
        .iter()
        .zip(mu1.predict(&x0))
        .map(|(yi, m1)| m1 - yi)
        .collect();

    let tau1 = fit_lasso(&x1, &d1, Family::Gaussian, CV_FOLDS, &stream.child("tau1"))?;
    let tau0 = fit_lasso(&x0, &d0, Family::Gaussian, CV_FOLDS, &stream.child("tau0"))?;
    let propensity = fit_lasso(
        x,
        a,
        Family::Binomial,
        CV_FOLDS,
        &stream.child("propensity"),
    )?;

    Ok(XLearnerFit {
        mu1,
        mu0,
        tau1,
        tau0,
        propensity,
    })
}
