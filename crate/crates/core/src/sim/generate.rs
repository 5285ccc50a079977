//! Cohort generation from a validated [`ScenarioSpec`].
//!
//! Three logistic models drive the draws: treatment assignment, the primary
//! outcome (with treatment effect and effect modifiers), and the negative
//! control outcome (treatment never enters). Each model's intercept is
//! calibrated by bisection against this population's own linear predictors,
//! so marginal rates land on the configured targets in every replication.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::matrix::Matrix;
use crate::sim::{CovariateKind, ScenarioSpec};
use crate::stream::Stream;

/// Calibrated intercepts of the three generating models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intercepts {
    pub treatment: f64,
    pub outcome: f64,
    pub nco: f64,
}

/// One generated cohort with ground truth attached.
#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    /// n x p covariate matrix, including the unmeasured confounder.
    pub covariates: Matrix,
    pub covariate_names: Vec<String>,
    /// Per-column measurement flags; false only at `u_column`.
    pub measured: Vec<bool>,
    pub treatment: Vec<f64>,
    pub outcome: Vec<f64>,
    pub nco: Vec<f64>,
    /// Risk-difference scale individual treatment effects (negative = benefit).
    pub true_ite: Vec<f64>,
    pub u_column: usize,
    pub intercepts: Intercepts,
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Covariate matrix as seen by an estimator: all columns when the
    /// confounder is observed, measured columns only when it is not.
    pub fn covariate_view(&self, include_u: bool) -> Matrix {
        if include_u {
            self.covariates.clone()
        } else {
            self.covariates.select_columns(&self.measured_indices())
        }
    }

    pub fn measured_indices(&self) -> Vec<usize> {
        (0..self.covariates.cols())
            .filter(|&j| self.measured[j])
            .collect()
    }
}

/// Draws the covariate matrix; columns are mutually independent.
pub fn gen_covariates(spec: &ScenarioSpec, stream: &Stream) -> Matrix {
    let n = spec.n;
    let mut m = Matrix::zeros(n, spec.p());
    for (j, cov) in spec.covariates.iter().enumerate() {
        let mut rng = stream.child("col").child_idx(j as u64).rng();
        match cov.kind {
            CovariateKind::Binary { prevalence } => {
                for i in 0..n {
                    let v = if rng.random::<f64>() < prevalence {
                        1.0
                    } else {
                        0.0
                    };
                    m.set(i, j, v);
                }
            }
            CovariateKind::Continuous { mean, sd } => {
                let normal = Normal::new(mean, sd).expect("validated sd > 0");
                for i in 0..n {
                    m.set(i, j, normal.sample(&mut rng));
                }
            }
        }
    }
    m
}

/// Finds the intercept c with mean_i expit(c + lp_i) at the target rate.
///
/// The mean probability is strictly increasing in c, so bisection on
/// [-20, 20] converges unconditionally; the bracket is shrunk far below the
/// 1e-4 tolerance on the achieved mean.
pub fn calibrate_intercept(linear_predictors: &[f64], target: f64) -> Result<f64> {
    if linear_predictors.len() < 1000 {
        return Err(Error::Calibration(format!(
            "needs at least 1000 rows, got {}",
            linear_predictors.len()
        )));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!(
            "target must lie in (0, 1), got {target}"
        )));
    }
    if linear_predictors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("non-finite linear predictor".into()));
    }
    let n = linear_predictors.len() as f64;
    let mean_prob = |c: f64| {
        linear_predictors
            .iter()
            .map(|&lp| expit(c + lp))
            .sum::<f64>()
            / n
    };

    let (mut lo, mut hi) = (-20.0_f64, 20.0_f64);
    if mean_prob(lo) > target || mean_prob(hi) < target {
        return Err(Error::Calibration(format!(
            "target {target} not bracketed by intercepts in [-20, 20]"
        )));
    }
    while hi - lo > 1e-11 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    debug_assert!((mean_prob(c) - target).abs() <= 1e-4);
    Ok(c)
}

/// Treatment assignment: A_i ~ Bernoulli(expit(intercept + x_i . betas)).
pub fn gen_treatment(
    covariates: &Matrix,
    betas: &[f64],
    intercept: f64,
    stream: &Stream,
) -> Result<Vec<f64>> {
    check_betas(covariates, betas)?;
    let lp = linear_predictor(covariates, betas);
    Ok(bernoulli(&lp, intercept, stream))
}

/// Primary outcome: the linear predictor adds the treatment effect and the
/// effect-modifier interactions for treated rows.
pub fn gen_outcome(
    covariates: &Matrix,
    betas: &[f64],
    treatment: &[f64],
    treatment_effect: f64,
    interactions: &[(usize, f64)],
    intercept: f64,
    stream: &Stream,
) -> Result<Vec<f64>> {
    check_betas(covariates, betas)?;
    let lp = outcome_linear_predictor(covariates, betas, treatment, treatment_effect, interactions);
    Ok(bernoulli(&lp, intercept, stream))
}

/// Negative control outcome; treatment is not an input by construction.
pub fn gen_nco(
    covariates: &Matrix,
    betas: &[f64],
    intercept: f64,
    stream: &Stream,
) -> Result<Vec<f64>> {
    check_betas(covariates, betas)?;
    let lp = linear_predictor(covariates, betas);
    Ok(bernoulli(&lp, intercept, stream))
}

/// Ground-truth ITE on the risk-difference scale: counterfactual outcome
/// probability treated minus untreated, at the calibrated outcome intercept.
pub fn true_ite(
    covariates: &Matrix,
    betas: &[f64],
    treatment_effect: f64,
    interactions: &[(usize, f64)],
    outcome_intercept: f64,
) -> Vec<f64> {
    let base = linear_predictor(covariates, betas);
    let delta = effect_log_odds(covariates, treatment_effect, interactions);
    base.iter()
        .zip(&delta)
        .map(|(&eta, &d)| expit(outcome_intercept + eta + d) - expit(outcome_intercept + eta))
        .collect()
}

/// Log-odds shift a row experiences when treated: the main treatment effect
/// plus its effect-modifier interactions.
pub fn effect_log_odds(
    covariates: &Matrix,
    treatment_effect: f64,
    interactions: &[(usize, f64)],
) -> Vec<f64> {
    (0..covariates.rows())
        .map(|i| {
            let row = covariates.row(i);
            treatment_effect
                + interactions
                    .iter()
                    .map(|&(idx, beta)| beta * row[idx])
                    .sum::<f64>()
        })
        .collect()
}

/// Generates the complete cohort for one replication of a scenario cell.
///
/// Identical (spec, rep) always produce a byte-identical dataset: every draw
/// comes from a stream derived from the master seed, the cell id, and the
/// replication index, independent of thread count or call order.
pub fn generate(spec: &ScenarioSpec, rep: u64) -> Result<SimDataset> {
    let stream = Stream::root(spec.master_seed)
        .child("sim")
        .child(&spec.cell_id())
        .child_idx(rep);

    let covariates = gen_covariates(spec, &stream.child("covariates"));

    let treat_betas = spec.treatment_betas();
    let lp_treat = linear_predictor(&covariates, &treat_betas);
    let b_treat = calibrate_intercept(&lp_treat, spec.targets.treated)?;
    let treatment = gen_treatment(
        &covariates,
        &treat_betas,
        b_treat,
        &stream.child("treatment"),
    )?;

    // The outcome intercept is calibrated against the factual population,
    // i.e. with the realized treatment vector plugged in.
    let outcome_betas = spec.outcome_betas();
    let lp_outcome = outcome_linear_predictor(
        &covariates,
        &outcome_betas,
        &treatment,
        spec.treatment_effect,
        &spec.interactions,
    );
    let b_outcome = calibrate_intercept(&lp_outcome, spec.targets.outcome)?;
    let outcome = gen_outcome(
        &covariates,
        &outcome_betas,
        &treatment,
        spec.treatment_effect,
        &spec.interactions,
        b_outcome,
        &stream.child("outcome"),
    )?;

    let nco_betas = spec.nco_betas();
    let lp_nco = linear_predictor(&covariates, &nco_betas);
    let b_nco = calibrate_intercept(&lp_nco, spec.targets.nco)?;
    let nco = gen_nco(&covariates, &nco_betas, b_nco, &stream.child("nco"))?;

    let ite = true_ite(
        &covariates,
        &outcome_betas,
        spec.treatment_effect,
        &spec.interactions,
        b_outcome,
    );

    Ok(SimDataset {
        covariates,
        covariate_names: spec.covariates.iter().map(|c| c.name.clone()).collect(),
        measured: spec.covariates.iter().map(|c| c.measured).collect(),
        treatment,
        outcome,
        nco,
        true_ite: ite,
        u_column: spec.u_index(),
        intercepts: Intercepts {
            treatment: b_treat,
            outcome: b_outcome,
            nco: b_nco,
        },
    })
}

fn check_betas(covariates: &Matrix, betas: &[f64]) -> Result<()> {
    if covariates.cols() != betas.len() {
        return Err(Error::config(format!(
            "coefficient count {} does not match covariate count {}",
            betas.len(),
            covariates.cols()
        )));
    }
    Ok(())
}

fn linear_predictor(x: &Matrix, betas: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().zip(betas).map(|(v, b)| v * b).sum())
        .collect()
}

fn outcome_linear_predictor(
    x: &Matrix,
    betas: &[f64],
    treatment: &[f64],
    treatment_effect: f64,
    interactions: &[(usize, f64)],
) -> Vec<f64> {
    let base = linear_predictor(x, betas);
    let delta = effect_log_odds(x, treatment_effect, interactions);
    base.iter()
        .zip(&delta)
        .zip(treatment)
        .map(|((&eta, &d), &a)| eta + a * d)
        .collect()
}

fn bernoulli(lp: &[f64], intercept: f64, stream: &Stream) -> Vec<f64> {
    let mut rng = stream.rng();
    lp.iter()
        .map(|&v| {
            if rng.random::<f64>() < expit(intercept + v) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
