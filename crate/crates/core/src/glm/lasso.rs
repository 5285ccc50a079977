//! Cross-validated LASSO for linear and logistic models.
//!
//! Coordinate descent on standardized predictors with an unpenalized
//! intercept. A 100-point log-spaced lambda path is built from the full
//! data, k-fold cross-validation scores every path point, and the final
//! model is refit on the full data at the error-minimizing lambda. The
//! Gaussian solver uses the covariance update (precomputed X'X/n); the
//! logistic solver wraps weighted coordinate descent in an outer
//! iteratively-reweighted loop, glmnet style.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::glm::{expit, logit};
use crate::matrix::Matrix;
use crate::stream::Stream;

const LAMBDA_PATH_LEN: usize = 100;
const LAMBDA_MIN_RATIO: f64 = 1e-4;
const CD_TOL: f64 = 1e-10;
const CD_MAX_CYCLES: usize = 2000;
const IRLS_TOL: f64 = 1e-9;
const IRLS_MAX_OUTER: usize = 50;
const PROB_CLAMP: f64 = 1e-5;
/// Columns with standard deviation below this are left out of the model.
const SD_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Binomial,
}

/// A fitted cross-validated LASSO model.
#[derive(Clone, Debug)]
pub struct LassoFit {
    pub family: Family,
    /// Intercept on the original covariate scale.
    pub intercept: f64,
    /// Slopes on the original covariate scale.
    pub coefficients: Vec<f64>,
    /// Slopes on the standardized scale (what the penalty acts on).
    pub std_coefficients: Vec<f64>,
    /// Selected penalty level.
    pub lambda: f64,
    pub lambda_index: usize,
    pub lambdas: Vec<f64>,
    /// Mean cross-validation error per path point (MSE or deviance).
    pub cv_errors: Vec<f64>,
    /// Set when the response was constant and only an intercept was fit.
    pub degenerate: bool,
}

impl LassoFit {
    pub fn linear_predictor(&self, x: &Matrix) -> Vec<f64> {
        assert_eq!(
            x.cols(),
            self.coefficients.len(),
            "covariate count mismatch"
        );
        (0..x.rows())
            .map(|i| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * x.get(i, j))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Predictions on the response scale: the linear predictor for Gaussian
    /// fits, probabilities for binomial fits.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let lp = self.linear_predictor(x);
        match self.family {
            Family::Gaussian => lp,
            Family::Binomial => lp.into_iter().map(expit).collect(),
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.std_coefficients.iter().filter(|b| **b != 0.0).count()
    }

    /// Largest violation of the subgradient stationarity conditions at the
    /// selected lambda, measured on the standardized scale. Near zero for a
    /// converged fit.
    pub fn kkt_violation(&self, x: &Matrix, y: &[f64]) -> f64 {
        let design = StdDesign::build(x);
        let beta = &self.std_coefficients;
        let grad: Vec<f64> = match self.family {
            Family::Gaussian => {
                let ybar = mean(y);
                let fitted: Vec<f64> = (0..design.n)
                    .map(|i| {
                        design
                            .cols
                            .iter()
                            .enumerate()
                            .map(|(j, c)| beta[j] * c[i])
                            .sum::<f64>()
                    })
                    .collect();
                (0..design.p)
                    .map(|j| {
                        design.cols[j]
                            .iter()
                            .zip(y.iter().zip(&fitted))
                            .map(|(xij, (yi, fi))| xij * (yi - ybar - fi))
                            .sum::<f64>()
                            / design.n as f64
                    })
                    .collect()
            }
            Family::Binomial => {
                let std_intercept = self.intercept
                    + beta
                        .iter()
                        .zip(&design.means)
                        .zip(&design.sds)
                        .map(|((b, m), s)| if *s < SD_FLOOR { 0.0 } else { b * m / s })
                        .sum::<f64>();
                let probs: Vec<f64> = (0..design.n)
                    .map(|i| {
                        expit(
                            std_intercept
                                + design
                                    .cols
                                    .iter()
                                    .enumerate()
                                    .map(|(j, c)| beta[j] * c[i])
                                    .sum::<f64>(),
                        )
                    })
                    .collect();
                (0..design.p)
                    .map(|j| {
                        design.cols[j]
                            .iter()
                            .zip(y.iter().zip(&probs))
                            .map(|(xij, (yi, pi))| xij * (yi - pi))
                            .sum::<f64>()
                            / design.n as f64
                    })
                    .collect()
            }
        };
        let mut worst = 0.0f64;
        for j in 0..design.p {
            if design.sds[j] < SD_FLOOR {
                continue;
            }
            let v = if beta[j] == 0.0 {
                (grad[j].abs() - self.lambda).max(0.0)
            } else {
                (grad[j] - self.lambda * beta[j].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Fits a k-fold cross-validated LASSO.
pub fn fit_lasso(
    x: &Matrix,
    y: &[f64],
    family: Family,
    folds: usize,
    stream: &Stream,
) -> Result<LassoFit> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n {
        return Err(Error::fit("response length mismatch"));
    }
    if folds < 2 || n < 2 * folds {
        return Err(Error::fit(format!(
            "cross-validation needs at least 2 folds and 2 rows per fold, got {folds} folds for {n} rows"
        )));
    }
    if family == Family::Binomial && y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::fit("binomial response must be 0/1"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit("response contains non-finite values"));
    }

    let design = StdDesign::build(x);
    let ybar = mean(y);

    // Constant response: nothing to regularize, return an intercept model.
    let constant = y.iter().all(|v| (*v - y[0]).abs() < 1e-300);
    if constant {
        let intercept = match family {
            Family::Gaussian => ybar,
            Family::Binomial => logit(ybar.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)),
        };
        return Ok(LassoFit {
            family,
            intercept,
            coefficients: vec![0.0; p],
            std_coefficients: vec![0.0; p],
            lambda: 0.0,
            lambda_index: 0,
            lambdas: vec![0.0],
            cv_errors: vec![],
            degenerate: true,
        });
    }

    let lambdas = lambda_path(&design, y, family);

    // Shuffled balanced fold assignment.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream.child("cv-folds").rng();
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let mut cv_errors = vec![0.0f64; lambdas.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| fold_of[*i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| fold_of[*i] == fold).collect();
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fold_design = StdDesign::build(&x_train);
        let path = fit_path(&fold_design, &y_train, family, &lambdas);
        for (k, sol) in path.iter().enumerate() {
            let (b0, b) = sol.original_scale(&fold_design);
            let err: f64 = test
                .iter()
                .map(|&i| {
                    let lp = b0 + (0..p).map(|j| b[j] * x.get(i, j)).sum::<f64>();
                    match family {
                        Family::Gaussian => {
                            let r = y[i] - lp;
                            r * r
                        }
                        Family::Binomial => {
                            let prob = expit(lp).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                            -2.0 * (y[i] * prob.ln() + (1.0 - y[i]) * (1.0 - prob).ln())
                        }
                    }
                })
                .sum::<f64>()
                / test.len() as f64;
            cv_errors[k] += err / folds as f64;
        }
    }

    let lambda_index = cv_errors
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("non-empty path");
    let lambda = lambdas[lambda_index];

    // Refit the full data up to the selected lambda with warm starts, then
    // tighten at the selection itself.
    let full_path = fit_path(&design, y, family, &lambdas[..=lambda_index]);
    let mut chosen = full_path[lambda_index].clone();
    refine(&design, y, family, lambda, &mut chosen);
    let (intercept, coefficients) = chosen.original_scale(&design);

    Ok(LassoFit {
        family,
        intercept,
        coefficients,
        std_coefficients: chosen.beta,
        lambda,
        lambda_index,
        lambdas,
        cv_errors,
        degenerate: false,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn soft(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Column-standardized design: each kept column has mean 0 and unit
/// (population) standard deviation.
struct StdDesign {
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
    n: usize,
    p: usize,
}

impl StdDesign {
    fn build(x: &Matrix) -> StdDesign {
        let n = x.rows();
        let p = x.cols();
        let mut cols = Vec::with_capacity(p);
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        for j in 0..p {
            let mut col = x.column(j);
            let m = mean(&col);
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd < SD_FLOOR {
                // Constant column: zero it so it can never enter the model.
                col.iter_mut().for_each(|v| *v = 0.0);
            } else {
                col.iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
            cols.push(col);
            means.push(m);
            sds.push(sd);
        }
        StdDesign {
            cols,
            means,
            sds,
            n,
            p,
        }
    }
}

/// Solution on the standardized scale. For Gaussian fits `intercept` lives
/// in centered-response space (add the training response mean back).
#[derive(Clone)]
struct StdSolution {
    intercept: f64,
    beta: Vec<f64>,
    ybar: f64,
}

impl StdSolution {
    fn original_scale(&self, design: &StdDesign) -> (f64, Vec<f64>) {
        let mut coefs = vec![0.0; design.p];
        let mut shift = 0.0;
        for (j, coef) in coefs.iter_mut().enumerate() {
            if design.sds[j] >= SD_FLOOR {
                *coef = self.beta[j] / design.sds[j];
                shift += *coef * design.means[j];
            }
        }
        (self.intercept + self.ybar - shift, coefs)
    }
}

fn lambda_path(design: &StdDesign, y: &[f64], family: Family) -> Vec<f64> {
    let n = design.n as f64;
    let ybar = mean(y);
    let lambda_max = (0..design.p)
        .map(|j| {
            design.cols[j]
                .iter()
                .zip(y)
                .map(|(xij, yi)| xij * (yi - ybar))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let _ = family;
    (0..LAMBDA_PATH_LEN)
        .map(|k| lambda_max * LAMBDA_MIN_RATIO.powf(k as f64 / (LAMBDA_PATH_LEN - 1) as f64))
        .collect()
}

fn fit_path(design: &StdDesign, y: &[f64], family: Family, lambdas: &[f64]) -> Vec<StdSolution> {
    match family {
        Family::Gaussian => fit_gaussian_path(design, y, lambdas),
        Family::Binomial => fit_binomial_path(design, y, lambdas),
    }
}

/// Tightens the solution at a single lambda (used after CV selection).
fn refine(design: &StdDesign, y: &[f64], family: Family, lambda: f64, sol: &mut StdSolution) {
    match family {
        Family::Gaussian => {
            let gram = gram_matrix(design);
            let ybar = mean(y);
            let corr: Vec<f64> = (0..design.p)
                .map(|j| {
                    design.cols[j]
                        .iter()
                        .zip(y)
                        .map(|(xij, yi)| xij * (yi - ybar))
                        .sum::<f64>()
                        / design.n as f64
                })
                .collect();
            gaussian_cd(
                &gram,
                &corr,
                &design.sds,
                lambda,
                &mut sol.beta,
                CD_TOL / 100.0,
            );
        }
        Family::Binomial => {
            binomial_solve(design, y, lambda, sol, IRLS_TOL / 100.0);
        }
    }
}

fn gram_matrix(design: &StdDesign) -> Vec<f64> {
    let p = design.p;
    let n = design.n as f64;
    let mut gram = vec![0.0; p * p];
    for j in 0..p {
        for k in j..p {
            let dot = design.cols[j]
                .iter()
                .zip(&design.cols[k])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n;
            gram[j * p + k] = dot;
            gram[k * p + j] = dot;
        }
    }
    gram
}

fn gaussian_cd(gram: &[f64], corr: &[f64], sds: &[f64], lambda: f64, beta: &mut [f64], tol: f64) {
    let p = beta.len();
    for _ in 0..CD_MAX_CYCLES {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if sds[j] < SD_FLOOR {
                continue;
            }
            let mut dot = 0.0;
            for k in 0..p {
                if beta[k] != 0.0 {
                    dot += gram[j * p + k] * beta[k];
                }
            }
            // Unit diagonal on the standardized scale.
            let z = corr[j] - dot + beta[j];
            let new = soft(z, lambda);
            if new != beta[j] {
                max_delta = max_delta.max((new - beta[j]).abs());
                beta[j] = new;
            }
        }
        if max_delta < tol {
            break;
        }
    }
}

fn fit_gaussian_path(design: &StdDesign, y: &[f64], lambdas: &[f64]) -> Vec<StdSolution> {
    let ybar = mean(y);
    let gram = gram_matrix(design);
    let corr: Vec<f64> = (0..design.p)
        .map(|j| {
            design.cols[j]
                .iter()
                .zip(y)
                .map(|(xij, yi)| xij * (yi - ybar))
                .sum::<f64>()
                / design.n as f64
        })
        .collect();
    let mut beta = vec![0.0; design.p];
    lambdas
        .iter()
        .map(|&lambda| {
            gaussian_cd(&gram, &corr, &design.sds, lambda, &mut beta, CD_TOL);
            StdSolution {
                intercept: 0.0,
                beta: beta.clone(),
                ybar,
            }
        })
        .collect()
}

fn fit_binomial_path(design: &StdDesign, y: &[f64], lambdas: &[f64]) -> Vec<StdSolution> {
    let ybar = mean(y);
    let mut sol = StdSolution {
        intercept: logit(ybar.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)),
        beta: vec![0.0; design.p],
        ybar: 0.0,
    };
    lambdas
        .iter()
        .map(|&lambda| {
            binomial_solve(design, y, lambda, &mut sol, IRLS_TOL);
            sol.clone()
        })
        .collect()
}

/// Penalized IRLS: quadratic approximation at the current coefficients,
/// weighted coordinate descent on the working response, repeat.
fn binomial_solve(design: &StdDesign, y: &[f64], lambda: f64, sol: &mut StdSolution, tol: f64) {
    let n = design.n;
    let nf = n as f64;
    let p = design.p;
    for _ in 0..IRLS_MAX_OUTER {
        // Working weights and residuals at the current solution.
        let mut weights = vec![0.0f64; n];
        let mut residual = vec![0.0f64; n];
        for i in 0..n {
            let lp = sol.intercept + (0..p).map(|j| sol.beta[j] * design.cols[j][i]).sum::<f64>();
            let prob = expit(lp).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let w = prob * (1.0 - prob);
            weights[i] = w;
            residual[i] = (y[i] - prob) / w;
        }
        let denom: Vec<f64> = (0..p)
            .map(|j| {
                design.cols[j]
                    .iter()
                    .zip(&weights)
                    .map(|(xij, w)| w * xij * xij)
                    .sum::<f64>()
                    / nf
            })
            .collect();
        let weight_sum: f64 = weights.iter().sum();

        let mut outer_delta = 0.0f64;
        for _ in 0..CD_MAX_CYCLES {
            let mut max_delta = 0.0f64;
            #[allow(clippy::needless_range_loop)] // j indexes four parallel arrays
            for j in 0..p {
                if design.sds[j] < SD_FLOOR || denom[j] <= 0.0 {
                    continue;
                }
                let wx_res: f64 = design.cols[j]
                    .iter()
                    .zip(&weights)
                    .zip(&residual)
                    .map(|((xij, w), r)| w * xij * r)
                    .sum::<f64>()
                    / nf;
                let new = soft(wx_res + denom[j] * sol.beta[j], lambda) / denom[j];
                let delta = new - sol.beta[j];
                if delta != 0.0 {
                    for (r, xij) in residual.iter_mut().zip(&design.cols[j]) {
                        *r -= delta * xij;
                    }
                    sol.beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            let d0: f64 = weights
                .iter()
                .zip(&residual)
                .map(|(w, r)| w * r)
                .sum::<f64>()
                / weight_sum;
            if d0 != 0.0 {
                sol.intercept += d0;
                residual.iter_mut().for_each(|r| *r -= d0);
                max_delta = max_delta.max(d0.abs());
            }
            outer_delta = outer_delta.max(max_delta);
            if max_delta < tol {
                break;
            }
        }
        if outer_delta < tol * 10.0 {
            break;
        }
    }
}
