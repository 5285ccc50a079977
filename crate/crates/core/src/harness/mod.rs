//! Experiment orchestration: deterministic train/test splits, the six model
//! fits per replication (oracle, causal forest, X-learner; the learners in
//! both confounder regimes), the replication loop, and artifact emission.

mod output;

pub use output::{
    read_replications, replication_row, NCO_PLOT_FILE, NCO_PLOT_HEADER, REPLICATIONS_FILE,
    REPLICATIONS_HEADER, SUMMARY_FILE, SUMMARY_HEADER,
};

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::causal::{center_locally, fit_causal_forest, tune_causal_forest, CausalForestParams};
use crate::error::{Error, Result};
use crate::glm::{expit, fit_logistic, fit_logistic_ridge};
use crate::matrix::Matrix;
use crate::metrics::{
    assign_quartiles, c_for_benefit, nco_subgroup_effects, rmse_vs_oracle, summarize_ate,
    summarize_study, Estimator, Regime, ReplicationResult, StudySummary,
};
use crate::sim::{generate, ScenarioSpec, SimDataset};
use crate::stream::Stream;

/// Replications per cell in a full production run.
pub const DEFAULT_REPLICATIONS: u64 = 500;
/// Fraction of each cohort used for model training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.75;

/// Fitting budgets, separated from the study definition so smoke tests and
/// reduced-tree CI runs can shrink them without touching the scenarios.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Trees in each final causal forest.
    pub forest_trees: usize,
    /// Random hyperparameter candidates beyond the default; 0 skips tuning.
    pub tune_draws: usize,
    /// Trees per tuning pilot forest.
    pub pilot_trees: usize,
    /// Trees in each nuisance regression forest.
    pub nuisance_trees: usize,
    /// Plug the generating coefficients into the oracle instead of refitting.
    pub oracle_plugin: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            forest_trees: 4000,
            tune_draws: 50,
            pilot_trees: 200,
            nuisance_trees: 500,
            oracle_plugin: false,
        }
    }
}

/// A full study: which cells to run, how many replications, where artifacts
/// go, and the seed everything derives from.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub specs: Vec<ScenarioSpec>,
    pub replications: u64,
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the ambient rayon pool. Results are identical
    /// for every value.
    pub threads: usize,
    pub master_seed: u64,
    pub engine: EngineConfig,
}

impl RunPlan {
    pub fn new(specs: Vec<ScenarioSpec>, output_dir: PathBuf, master_seed: u64) -> Self {
        RunPlan {
            specs,
            replications: DEFAULT_REPLICATIONS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            output_dir,
            threads: 0,
            master_seed,
            engine: EngineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::config("run plan has no scenario specs"));
        }
        let mut ids: Vec<String> = self.specs.iter().map(|s| s.cell_id()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.specs.len() {
            return Err(Error::config("run plan contains duplicate scenario cells"));
        }
        if self.replications < 1 {
            return Err(Error::config("replications must be at least 1"));
        }
        if !(self.train_fraction > 0.5 && self.train_fraction < 0.9) {
            return Err(Error::config(format!(
                "train_fraction must lie in (0.5, 0.9), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// A model fit that could not be completed; the rest of the replication
/// still runs.
#[derive(Clone, Debug, PartialEq)]
pub struct FailureRecord {
    pub cell_id: String,
    pub replication: u64,
    /// Which fit failed, e.g. `causal_forest/without_u`.
    pub cell: String,
    pub message: String,
}

/// One estimator-regime slot of a replication: a finished result or a
/// failure marker.
#[derive(Clone, Debug, PartialEq)]
pub enum CellOutcome {
    Done(ReplicationResult),
    Failed(FailureRecord),
}

/// The six slots every replication produces, in emission order. The oracle
/// appears twice with identical predictions: its second row carries the
/// negative-control diagnostic computed without the confounder in the
/// adjustment set.
pub const REPLICATION_CELLS: [(Estimator, Regime); 6] = [
    (Estimator::Oracle, Regime::WithU),
    (Estimator::Oracle, Regime::WithoutU),
    (Estimator::CausalForest, Regime::WithU),
    (Estimator::CausalForest, Regime::WithoutU),
    (Estimator::XLearner, Regime::WithU),
    (Estimator::XLearner, Regime::WithoutU),
];

/// Everything run_plan leaves behind in memory (the same content lands in
/// the output directory).
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub results: Vec<ReplicationResult>,
    pub failures: Vec<FailureRecord>,
    pub summary: StudySummary,
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Simple random train/test split; indices come back sorted within each half.
fn split_indices(n: usize, train_fraction: f64, stream: &Stream) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream.rng();
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// The outcome-generating term set: intercept, treatment, every covariate
/// (confounder included), and the active treatment interactions.
#[derive(Clone, Debug)]
pub(crate) struct OracleCoefs {
    intercept: f64,
    treatment: f64,
    betas: Vec<f64>,
    /// (covariate column, interaction coefficient), zero terms excluded.
    gammas: Vec<(usize, f64)>,
}

impl OracleCoefs {
    /// Predicted risk difference treated minus untreated, row by row.
    pub(crate) fn ite(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows())
            .map(|i| {
                let row = x.row(i);
                let lp0 =
                    self.intercept + row.iter().zip(&self.betas).map(|(v, b)| v * b).sum::<f64>();
                let lp1 = lp0
                    + self.treatment
                    + self.gammas.iter().map(|&(j, g)| g * row[j]).sum::<f64>();
                expit(lp1) - expit(lp0)
            })
            .collect()
    }
}

/// Oracle coefficients: refit by maximum likelihood on the training rows, or
/// the generating values themselves when `plugin` is set.
pub(crate) fn oracle_coefs(
    spec: &ScenarioSpec,
    data: &SimDataset,
    x_train: &Matrix,
    a_train: &[f64],
    y_train: &[f64],
    plugin: bool,
) -> Result<OracleCoefs> {
    let active: Vec<(usize, f64)> = spec
        .interactions
        .iter()
        .copied()
        .filter(|&(_, g)| g != 0.0)
        .collect();

    if plugin {
        return Ok(OracleCoefs {
            intercept: data.intercepts.outcome,
            treatment: spec.treatment_effect,
            betas: spec.outcome_betas(),
            gammas: active,
        });
    }

    let p = x_train.cols();
    let n = x_train.rows();
    let mut design = Matrix::zeros(n, 1 + p + active.len());
    for (i, &ai) in a_train.iter().enumerate() {
        design.set(i, 0, ai);
        let row = x_train.row(i);
        for (j, &v) in row.iter().enumerate() {
            design.set(i, j + 1, v);
        }
        for (k, &(j, _)) in active.iter().enumerate() {
            design.set(i, 1 + p + k, a_train[i] * row[j]);
        }
    }
    let fit = match fit_logistic(&design, y_train) {
        Ok(f) if f.converged && !f.separation => f,
        _ => fit_logistic_ridge(&design, y_train, 1e-6)?,
    };
    let c = &fit.coefficients;
    Ok(OracleCoefs {
        intercept: c[0],
        treatment: c[1],
        betas: c[2..2 + p].to_vec(),
        gammas: active
            .iter()
            .enumerate()
            .map(|(k, &(j, _))| (j, c[2 + p + k]))
            .collect(),
    })
}

/// Shared per-replication test-set context.
struct TestContext<'a> {
    spec: &'a ScenarioSpec,
    replication: u64,
    x_with: &'a Matrix,
    x_without: &'a Matrix,
    treatment: &'a [f64],
    outcome: &'a [f64],
    nco: &'a [f64],
    true_ite: &'a [f64],
}

impl TestContext<'_> {
    fn build_result(
        &self,
        estimator: Estimator,
        regime: Regime,
        predictions: &[f64],
        against_truth: bool,
    ) -> Result<ReplicationResult> {
        let q = assign_quartiles(predictions)?;
        let ate = summarize_ate(predictions);
        let mut quartile_means = [0.0f64; 4];
        for qi in 0..4u8 {
            let rows = q.members(qi);
            quartile_means[qi as usize] =
                rows.iter().map(|&i| predictions[i]).sum::<f64>() / rows.len() as f64;
        }
        let rmse = if against_truth {
            Some(rmse_vs_oracle(predictions, self.true_ite)?)
        } else {
            None
        };
        let cfb = c_for_benefit(predictions, self.treatment, self.outcome);
        let adjust = match regime {
            Regime::WithU => self.x_with,
            Regime::WithoutU => self.x_without,
        };
        let nco = nco_subgroup_effects(
            adjust,
            self.treatment,
            self.nco,
            &q,
            regime == Regime::WithU,
        )?;
        Ok(ReplicationResult {
            scenario: self.spec.scenario,
            setting: self.spec.setting,
            replication: self.replication,
            estimator,
            regime,
            ate,
            quartile_means,
            quartile_sizes: q.sizes,
            rmse_vs_oracle: rmse,
            c_for_benefit: cfb,
            nco,
            degenerate_quartiles: q.degenerate,
        })
    }

    fn outcome_for(
        &self,
        estimator: Estimator,
        regime: Regime,
        fitted: Result<Vec<f64>>,
        against_truth: bool,
    ) -> CellOutcome {
        let built =
            fitted.and_then(|pred| self.build_result(estimator, regime, &pred, against_truth));
        match built {
            Ok(r) => CellOutcome::Done(r),
            Err(e) => CellOutcome::Failed(FailureRecord {
                cell_id: self.spec.cell_id(),
                replication: self.replication,
                cell: format!("{}/{}", estimator.as_str(), regime.as_str()),
                message: e.to_string(),
            }),
        }
    }
}

/// Run one replication of one cell: generate the cohort, split it, fit the
/// oracle once and each learner under both covariate views, and score
/// everything on the held-out quarter. Fit failures become failure markers;
/// the remaining slots still complete.
pub fn run_replication(
    spec: &ScenarioSpec,
    rep: u64,
    engine: &EngineConfig,
    train_fraction: f64,
) -> Vec<CellOutcome> {
    let fail_all = |message: String| -> Vec<CellOutcome> {
        REPLICATION_CELLS
            .iter()
            .map(|&(est, reg)| {
                CellOutcome::Failed(FailureRecord {
                    cell_id: spec.cell_id(),
                    replication: rep,
                    cell: format!("{}/{}", est.as_str(), reg.as_str()),
                    message: message.clone(),
                })
            })
            .collect()
    };

    let data = match generate(spec, rep) {
        Ok(d) => d,
        Err(e) => return fail_all(format!("cohort generation failed: {e}")),
    };
    let stream = Stream::root(spec.master_seed)
        .child("fit")
        .child(&spec.cell_id())
        .child_idx(rep);
    let (train, test) = split_indices(data.n(), train_fraction, &stream.child("split"));

    let x_with = data.covariate_view(true);
    let x_without = data.covariate_view(false);
    let x_with_train = x_with.select_rows(&train);
    let x_without_train = x_without.select_rows(&train);
    let x_with_test = x_with.select_rows(&test);
    let x_without_test = x_without.select_rows(&test);
    let y_train = gather(&data.outcome, &train);
    let a_train = gather(&data.treatment, &train);
    let y_test = gather(&data.outcome, &test);
    let a_test = gather(&data.treatment, &test);
    let nco_test = gather(&data.nco, &test);
    let ite_test = gather(&data.true_ite, &test);

    let ctx = TestContext {
        spec,
        replication: rep,
        x_with: &x_with_test,
        x_without: &x_without_test,
        treatment: &a_test,
        outcome: &y_test,
        nco: &nco_test,
        true_ite: &ite_test,
    };

    let mut out = Vec::with_capacity(6);

    // Oracle: one fit, two rows. The second row re-runs only the
    // negative-control adjustment without U.
    match oracle_coefs(
        spec,
        &data,
        &x_with_train,
        &a_train,
        &y_train,
        engine.oracle_plugin,
    )
    .map(|c| c.ite(&x_with_test))
    {
        Ok(pred) => {
            out.push(ctx.outcome_for(Estimator::Oracle, Regime::WithU, Ok(pred.clone()), false));
            out.push(ctx.outcome_for(Estimator::Oracle, Regime::WithoutU, Ok(pred), false));
        }
        Err(e) => {
            let message = e.to_string();
            for regime in [Regime::WithU, Regime::WithoutU] {
                out.push(CellOutcome::Failed(FailureRecord {
                    cell_id: spec.cell_id(),
                    replication: rep,
                    cell: format!("{}/{}", Estimator::Oracle.as_str(), regime.as_str()),
                    message: message.clone(),
                }));
            }
        }
    }

    // Causal forest, each regime: local centering, optional tuning, honest
    // fit, test-set prediction.
    for (regime, x_tr, x_te, label) in [
        (Regime::WithU, &x_with_train, &x_with_test, "cf-with-u"),
        (
            Regime::WithoutU,
            &x_without_train,
            &x_without_test,
            "cf-without-u",
        ),
    ] {
        let branch = stream.child(label);
        let fitted = (|| -> Result<Vec<f64>> {
            let centered = center_locally(
                x_tr,
                &y_train,
                &a_train,
                engine.nuisance_trees,
                &branch.child("center"),
            )?;
            let base = CausalForestParams {
                num_trees: engine.forest_trees,
                ..CausalForestParams::default()
            };
            let params = if engine.tune_draws == 0 {
                base
            } else {
                tune_causal_forest(
                    x_tr,
                    &a_train,
                    &centered.y_res,
                    &centered.a_res,
                    &base,
                    engine.tune_draws,
                    engine.pilot_trees,
                    &branch.child("tune"),
                )?
                .params
            };
            let forest = fit_causal_forest(
                x_tr,
                &a_train,
                &centered.y_res,
                &centered.a_res,
                &params,
                false,
                &branch.child("forest"),
            )?;
            Ok(forest.predict_cate(x_te))
        })();
        out.push(ctx.outcome_for(Estimator::CausalForest, regime, fitted, true));
    }

    // X-learner, each regime.
    for (regime, x_tr, x_te, label) in [
        (Regime::WithU, &x_with_train, &x_with_test, "xl-with-u"),
        (
            Regime::WithoutU,
            &x_without_train,
            &x_without_test,
            "xl-without-u",
        ),
    ] {
        let fitted = crate::xlearner::fit_xlearner(x_tr, &y_train, &a_train, &stream.child(label))
            .map(|fit| fit.predict_cate(x_te));
        out.push(ctx.outcome_for(Estimator::XLearner, regime, fitted, true));
    }

    out
}

/// Execute every (spec, replication) job, write all artifacts into the
/// plan's output directory, and return the in-memory results. Output is
/// byte-identical for any thread count and across reruns.
pub fn run_plan(plan: &RunPlan) -> Result<RunArtifacts> {
    plan.validate()?;
    let mut specs = plan.specs.clone();
    for s in &mut specs {
        s.master_seed = plan.master_seed;
    }
    std::fs::create_dir_all(&plan.output_dir)?;

    let jobs: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|i| (0..plan.replications).map(move |r| (i, r)))
        .collect();
    let execute = || -> Vec<Vec<CellOutcome>> {
        jobs.par_iter()
            .map(|&(i, rep)| run_replication(&specs[i], rep, &plan.engine, plan.train_fraction))
            .collect()
    };
    let outcomes = if plan.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.threads)
            .build()
            .map_err(|e| Error::config(format!("building thread pool: {e}")))?
            .install(execute)
    } else {
        execute()
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for cell in outcomes.into_iter().flatten() {
        match cell {
            CellOutcome::Done(r) => results.push(r),
            CellOutcome::Failed(f) => failures.push(f),
        }
    }

    output::write_replications(&plan.output_dir, &results)?;
    output::write_manifest(&plan.output_dir, plan, &specs, &results, &failures)?;
    let summary = summarize_study(&results)?;
    output::write_summary(&plan.output_dir, &summary)?;
    output::write_nco_plot(&plan.output_dir, &summary)?;

    Ok(RunArtifacts {
        results,
        failures,
        summary,
    })
}

/// Re-aggregate a finished run from its per-replication CSV, rewriting the
/// summary and plot-data files.
pub fn summarize_dir(dir: &Path) -> Result<StudySummary> {
    let results = read_replications(&dir.join(REPLICATIONS_FILE))?;
    let summary = summarize_study(&results)?;
    output::write_summary(dir, &summary)?;
    output::write_nco_plot(dir, &summary)?;
    Ok(summary)
}
