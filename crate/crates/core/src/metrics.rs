//! Replication-level metrics: quartile subgroups, ATE/RMSE summaries,
//! c-for-benefit concordance, negative-control subgroup effects, and
//! study-level aggregation across replications.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::glm::{fit_logistic, fit_logistic_ridge};
use crate::matrix::Matrix;
use crate::sim::{Scenario, Setting};

/// Ridge penalty used when a subgroup logistic fit separates.
const NCO_RIDGE_PENALTY: f64 = 1e-6;
/// A column is treated as constant within a subgroup below this spread.
const CONST_COL_EPS: f64 = 1e-12;

/// Which model produced a set of individual treatment-effect predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Oracle,
    CausalForest,
    XLearner,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Oracle => "oracle",
            Estimator::CausalForest => "causal_forest",
            Estimator::XLearner => "x_learner",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Estimator::Oracle),
            "causal_forest" => Ok(Estimator::CausalForest),
            "x_learner" => Ok(Estimator::XLearner),
            other => Err(Error::config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Whether the estimator's covariate view included the unmeasured confounder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    WithU,
    WithoutU,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::WithU => "with_u",
            Regime::WithoutU => "without_u",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "with_u" => Ok(Regime::WithU),
            "without_u" => Ok(Regime::WithoutU),
            other => Err(Error::config(format!("unknown regime '{other}'"))),
        }
    }
}

/// Individual treatment-effect predictions on the risk-difference scale
/// (negative values mean predicted benefit), tagged with the estimator and
/// regime that produced them.
#[derive(Clone, Debug)]
pub struct ItePredictions {
    pub values: Vec<f64>,
    pub estimator: Estimator,
    pub regime: Regime,
}

/// Quartile subgroup assignment of predicted effects, most negative first.
#[derive(Clone, Debug)]
pub struct QuartileAssignment {
    /// Quartile index 0..=3 per input position (0 = most benefit).
    pub labels: Vec<u8>,
    /// Smallest predicted value in Q2, Q3, Q4 respectively.
    pub boundaries: [f64; 3],
    pub sizes: [usize; 4],
    /// All predictions identical; the split is by input order only.
    pub degenerate: bool,
}

impl QuartileAssignment {
    /// Row indices belonging to quartile `q` (0..=3), in input order.
    pub fn members(&self, q: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == q).then_some(i))
            .collect()
    }
}

/// Split predictions into four ordered, near-equal subgroups.
///
/// Sorting is ascending with ties broken by original position, so Q1 holds
/// the most negative (largest predicted benefit) quarter. Requires at least
/// eight predictions; flags the assignment as degenerate when every value is
/// identical.
pub fn assign_quartiles(values: &[f64]) -> Result<QuartileAssignment> {
    let n = values.len();
    if n < 8 {
        return Err(Error::config(format!(
            "quartile assignment needs at least 8 predictions, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(
            "quartile assignment saw a non-finite prediction",
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));

    let cut = |k: usize| k * n / 4;
    let starts = [0, cut(1), cut(2), cut(3), n];
    let mut labels = vec![0u8; n];
    let mut sizes = [0usize; 4];
    for q in 0..4 {
        for &row in &order[starts[q]..starts[q + 1]] {
            labels[row] = q as u8;
        }
        sizes[q] = starts[q + 1] - starts[q];
    }
    let boundaries = [
        values[order[starts[1]]],
        values[order[starts[2]]],
        values[order[starts[3]]],
    ];
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    Ok(QuartileAssignment {
        labels,
        boundaries,
        sizes,
        degenerate: max == min,
    })
}

/// Average predicted treatment effect.
pub fn summarize_ate(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Root-mean-squared error of predictions against the oracle effects.
pub fn rmse_vs_oracle(predicted: &[f64], oracle: &[f64]) -> Result<f64> {
    if predicted.len() != oracle.len() {
        return Err(Error::config(format!(
            "prediction/oracle length mismatch: {} vs {}",
            predicted.len(),
            oracle.len()
        )));
    }
    let mse = predicted
        .iter()
        .zip(oracle)
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(mse.sqrt())
}

/// Matched-pairs c-for-benefit.
///
/// Each arm is sorted by predicted effect (ties by position) and the k-th
/// treated unit is paired with the k-th untreated unit, dropping the longer
/// arm's tail. A pair's observed benefit is `y_untreated - y_treated` and its
/// predicted benefit the mean of the two predictions. Over all pairs of pairs
/// with unequal observed benefit, the statistic is the fraction where the
/// pair with the more negative predicted effect also shows the greater
/// observed benefit, counting predicted ties as one half. Returns `None` when
/// fewer than two usable pairs exist.
pub fn c_for_benefit(predictions: &[f64], treatment: &[f64], outcome: &[f64]) -> Option<f64> {
    assert_eq!(predictions.len(), treatment.len());
    assert_eq!(predictions.len(), outcome.len());

    let mut treated: Vec<usize> = Vec::new();
    let mut untreated: Vec<usize> = Vec::new();
    for (i, &a) in treatment.iter().enumerate() {
        if a == 1.0 {
            treated.push(i);
        } else {
            untreated.push(i);
        }
    }
    let by_pred = |a: &usize, b: &usize| {
        predictions[*a]
            .partial_cmp(&predictions[*b])
            .unwrap()
            .then(a.cmp(b))
    };
    treated.sort_by(by_pred);
    untreated.sort_by(by_pred);

    let pairs: Vec<(f64, f64)> = treated
        .iter()
        .zip(&untreated)
        .map(|(&t, &u)| {
            let pred = 0.5 * (predictions[t] + predictions[u]);
            let obs = outcome[u] - outcome[t];
            (pred, obs)
        })
        .collect();
    if pairs.len() < 2 {
        return None;
    }

    let mut usable = 0u64;
    let mut score = 0.0f64;
    for i in 0..pairs.len() {
        for j in (i + 1)..pairs.len() {
            let (pi, oi) = pairs[i];
            let (pj, oj) = pairs[j];
            if oi == oj {
                continue;
            }
            usable += 1;
            if pi == pj {
                score += 0.5;
            } else {
                // More negative prediction = more predicted benefit; greater
                // observed difference = more realized benefit.
                let pred_says_i = pi < pj;
                let obs_says_i = oi > oj;
                if pred_says_i == obs_says_i {
                    score += 1.0;
                }
            }
        }
    }
    if usable == 0 {
        None
    } else {
        Some(score / usable as f64)
    }
}

/// Adjusted negative-control effect within one predicted-benefit quartile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcoSubgroupEffect {
    /// Quartile index 0..=3 (0 = most predicted benefit).
    pub quartile: u8,
    /// Standardized adjusted risk difference for treatment on the control
    /// outcome; zero in expectation when confounding is fully adjusted.
    pub effect: f64,
    /// Treatment log-odds coefficient from the same fit.
    pub log_odds: f64,
    /// Whether the adjustment set included the latent confounder.
    pub adjusted_for_u: bool,
    /// Maximum-likelihood fit separated; estimate comes from the ridge
    /// fallback.
    pub ridge_fallback: bool,
}

/// Estimate the treatment effect on the control outcome within each quartile.
///
/// Fits a logistic model of the control outcome on treatment plus the given
/// adjustment covariates, then averages the per-row difference between the
/// treated and untreated predicted probabilities (a standardized risk
/// difference). Subgroup-constant covariate columns are dropped from the fit;
/// separated fits fall back to a lightly ridged refit and are flagged.
pub fn nco_subgroup_effects(
    covariates: &Matrix,
    treatment: &[f64],
    nco: &[f64],
    quartiles: &QuartileAssignment,
    adjusted_for_u: bool,
) -> Result<[NcoSubgroupEffect; 4]> {
    let n = covariates.rows();
    if treatment.len() != n || nco.len() != n || quartiles.labels.len() != n {
        return Err(Error::config(
            "nco_subgroup_effects: input lengths disagree",
        ));
    }

    let mut out = Vec::with_capacity(4);
    for q in 0..4u8 {
        let rows = quartiles.members(q);
        let n_treated = rows.iter().filter(|&&i| treatment[i] == 1.0).count();
        if n_treated == 0 || n_treated == rows.len() {
            return Err(Error::fit(format!(
                "quartile {} has a single treatment arm; control-outcome effect undefined",
                q + 1
            )));
        }

        // Keep only columns that vary within the subgroup.
        let mut keep = Vec::new();
        for j in 0..covariates.cols() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &rows {
                let v = covariates.get(i, j);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > CONST_COL_EPS {
                keep.push(j);
            }
        }

        let mut design = Matrix::zeros(rows.len(), 1 + keep.len());
        let mut y = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            design.set(r, 0, treatment[i]);
            for (c, &j) in keep.iter().enumerate() {
                design.set(r, c + 1, covariates.get(i, j));
            }
            y.push(nco[i]);
        }

        let (fit, ridge_fallback) = match fit_logistic(&design, &y) {
            Ok(f) if f.converged && !f.separation => (f, false),
            _ => (fit_logistic_ridge(&design, &y, NCO_RIDGE_PENALTY)?, true),
        };

        let mut diff_sum = 0.0;
        let mut row = vec![0.0; design.cols()];
        for r in 0..design.rows() {
            row.copy_from_slice(design.row(r));
            row[0] = 1.0;
            let p1 = fit.predict_proba_row(&row);
            row[0] = 0.0;
            let p0 = fit.predict_proba_row(&row);
            diff_sum += p1 - p0;
        }

        out.push(NcoSubgroupEffect {
            quartile: q,
            effect: diff_sum / design.rows() as f64,
            log_odds: fit.coefficients[1],
            adjusted_for_u,
            ridge_fallback,
        });
    }
    Ok(out.try_into().expect("four quartiles"))
}

/// Everything recorded for one estimator/regime combination within one
/// simulated replication.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationResult {
    pub scenario: Scenario,
    pub setting: Setting,
    pub replication: u64,
    pub estimator: Estimator,
    pub regime: Regime,
    pub ate: f64,
    pub quartile_means: [f64; 4],
    pub quartile_sizes: [usize; 4],
    /// Absent for the oracle itself.
    pub rmse_vs_oracle: Option<f64>,
    /// Absent when fewer than two matched pairs were usable.
    pub c_for_benefit: Option<f64>,
    pub nco: [NcoSubgroupEffect; 4],
    pub degenerate_quartiles: bool,
}

impl ReplicationResult {
    /// Size-weighted mean of the quartile means; equals `ate` exactly up to
    /// floating-point reassociation.
    pub fn weighted_quartile_mean(&self) -> f64 {
        let total: usize = self.quartile_sizes.iter().sum();
        self.quartile_means
            .iter()
            .zip(&self.quartile_sizes)
            .map(|(m, &s)| m * s as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Median with a central 95% percentile interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStat {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linearly interpolated percentile of sorted values, q in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn summary_stat(values: &mut [f64]) -> SummaryStat {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SummaryStat {
        median: percentile(values, 0.5),
        lo: percentile(values, 0.025),
        hi: percentile(values, 0.975),
    }
}

/// Aggregate of one (scenario, setting, estimator, regime) cell across
/// replications.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub scenario: Scenario,
    pub setting: Setting,
    pub estimator: Estimator,
    pub regime: Regime,
    pub replications: usize,
    pub ate: SummaryStat,
    /// Absent for oracle cells.
    pub rmse: Option<SummaryStat>,
    /// Absent when no replication produced a usable pair set.
    pub c_for_benefit: Option<SummaryStat>,
    /// Mean over replications of each per-replication quartile mean.
    pub quartile_means: [f64; 4],
    pub nco: [SummaryStat; 4],
}

/// Study-level summary over all cells present in the input.
#[derive(Clone, Debug)]
pub struct StudySummary {
    pub cells: Vec<CellSummary>,
}

impl StudySummary {
    pub fn cell(
        &self,
        scenario: Scenario,
        setting: Setting,
        estimator: Estimator,
        regime: Regime,
    ) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            c.scenario == scenario
                && c.setting == setting
                && c.estimator == estimator
                && c.regime == regime
        })
    }
}

/// Summarize replication results per cell: median and central 95% interval
/// for ATE, RMSE, c-for-benefit and each quartile's control-outcome effect,
/// plus the mean of quartile means. Cells with fewer than two replications
/// are an error, never silently dropped.
pub fn summarize_study(results: &[ReplicationResult]) -> Result<StudySummary> {
    if results.is_empty() {
        return Err(Error::config("summarize_study: no replication results"));
    }

    let mut groups: BTreeMap<(Scenario, Setting, Estimator, Regime), Vec<&ReplicationResult>> =
        BTreeMap::new();
    for r in results {
        groups
            .entry((r.scenario, r.setting, r.estimator, r.regime))
            .or_default()
            .push(r);
    }

    let thin: Vec<String> = groups
        .iter()
        .filter(|(_, v)| v.len() < 2)
        .map(|((sc, se, es, rg), v)| {
            format!(
                "{}/{}/{}/{} has {} replication(s)",
                sc.as_str(),
                se.as_str(),
                es.as_str(),
                rg.as_str(),
                v.len()
            )
        })
        .collect();
    if !thin.is_empty() {
        return Err(Error::config(format!(
            "summarize_study: cells too thin to summarize: {}",
            thin.join("; ")
        )));
    }

    let mut cells = Vec::with_capacity(groups.len());
    for ((scenario, setting, estimator, regime), reps) in groups {
        let n = reps.len();
        let mut ates: Vec<f64> = reps.iter().map(|r| r.ate).collect();
        let ate = summary_stat(&mut ates);

        let mut rmses: Vec<f64> = reps.iter().filter_map(|r| r.rmse_vs_oracle).collect();
        let rmse = (!rmses.is_empty()).then(|| summary_stat(&mut rmses));

        let mut cfbs: Vec<f64> = reps.iter().filter_map(|r| r.c_for_benefit).collect();
        let c_for_benefit = (!cfbs.is_empty()).then(|| summary_stat(&mut cfbs));

        let mut quartile_means = [0.0f64; 4];
        let mut nco = Vec::with_capacity(4);
        for (q, qm) in quartile_means.iter_mut().enumerate() {
            *qm = reps.iter().map(|r| r.quartile_means[q]).sum::<f64>() / n as f64;
            let mut effects: Vec<f64> = reps.iter().map(|r| r.nco[q].effect).collect();
            nco.push(summary_stat(&mut effects));
        }

        cells.push(CellSummary {
            scenario,
            setting,
            estimator,
            regime,
            replications: n,
            ate,
            rmse,
            c_for_benefit,
            quartile_means,
            nco: nco.try_into().expect("four quartiles"),
        });
    }

    Ok(StudySummary { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn quartiles_order_eight_points() {
        let values = [-4.0, -3.5, -3.0, -2.5, -2.0, -1.5, -1.0, -0.5];
        let q = assign_quartiles(&values).unwrap();
        assert_eq!(q.labels, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(q.sizes, [2, 2, 2, 2]);
        assert_eq!(q.boundaries, [-3.0, -2.0, -1.0]);
        assert!(!q.degenerate);

        // Scrambled input maps back to the same value->quartile relation.
        let scrambled = [-0.5, -4.0, -2.0, -3.5, -1.0, -2.5, -3.0, -1.5];
        let qs = assign_quartiles(&scrambled).unwrap();
        assert_eq!(qs.labels, vec![3, 0, 2, 0, 3, 1, 1, 2]);
    }

    #[test]
    fn quartiles_split_5000_evenly() {
        let mut r = rng(11);
        let values: Vec<f64> = (0..5000).map(|_| r.random::<f64>() - 0.5).collect();
        let q = assign_quartiles(&values).unwrap();
        assert_eq!(q.sizes, [1250, 1250, 1250, 1250]);
        let max = q.sizes.iter().max().unwrap();
        let min = q.sizes.iter().min().unwrap();
        assert!(max - min <= 3);
        // Boundaries are honored: every Q1 value < boundary 1, etc.
        for (i, &l) in q.labels.iter().enumerate() {
            match l {
                0 => assert!(values[i] <= q.boundaries[0]),
                3 => assert!(values[i] >= q.boundaries[2]),
                _ => {}
            }
        }
    }

    #[test]
    fn quartiles_uneven_sizes_stay_within_three() {
        for n in [8usize, 9, 10, 11, 13, 17, 4998, 5001] {
            let mut r = rng(n as u64);
            let values: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let q = assign_quartiles(&values).unwrap();
            assert_eq!(q.sizes.iter().sum::<usize>(), n);
            let max = q.sizes.iter().max().unwrap();
            let min = q.sizes.iter().min().unwrap();
            assert!(max - min <= 3, "n={n} sizes={:?}", q.sizes);
        }
    }

    #[test]
    fn quartiles_constant_input_is_degenerate() {
        let values = [0.25; 12];
        let q = assign_quartiles(&values).unwrap();
        assert!(q.degenerate);
        assert_eq!(q.sizes, [3, 3, 3, 3]);
        // Stable order: first three inputs land in Q1.
        assert_eq!(&q.labels[..3], &[0, 0, 0]);
    }

    #[test]
    fn quartiles_ties_break_by_position() {
        let values = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let q = assign_quartiles(&values).unwrap();
        // Zeros (positions 1,3,5,7) occupy Q1/Q2 in positional order.
        assert_eq!(q.labels[1], 0);
        assert_eq!(q.labels[3], 0);
        assert_eq!(q.labels[5], 1);
        assert_eq!(q.labels[7], 1);
        assert_eq!(q.labels[0], 2);
        assert_eq!(q.labels[2], 2);
        assert_eq!(q.labels[4], 3);
        assert_eq!(q.labels[6], 3);
    }

    #[test]
    fn quartiles_reject_small_input() {
        assert!(assign_quartiles(&[1.0; 7]).is_err());
    }

    #[test]
    fn weighted_quartile_means_reproduce_ate() {
        let mut r = rng(7);
        let values: Vec<f64> = (0..517).map(|_| r.random::<f64>() * 0.2 - 0.15).collect();
        let q = assign_quartiles(&values).unwrap();
        let mut means = [0.0; 4];
        for qi in 0..4u8 {
            let rows = q.members(qi);
            means[qi as usize] = rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64;
        }
        let ate = summarize_ate(&values);
        let weighted = means
            .iter()
            .zip(&q.sizes)
            .map(|(m, &s)| m * s as f64)
            .sum::<f64>()
            / values.len() as f64;
        assert!((ate - weighted).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_hand_computation() {
        let pred = [0.1, -0.2, 0.3];
        let oracle = [0.0, 0.0, 0.0];
        // sqrt((0.01 + 0.04 + 0.09) / 3)
        let expected = (0.14f64 / 3.0).sqrt();
        assert!((rmse_vs_oracle(&pred, &oracle).unwrap() - expected).abs() < 1e-15);
        assert!(rmse_vs_oracle(&pred, &oracle[..2]).is_err());
    }

    #[test]
    fn c_for_benefit_perfect_concordance_fixture() {
        // Four matched pairs by predicted benefit (ascending = most benefit
        // first): observed benefits +1, +1, 0, -1. Five of six pair-pairs
        // have unequal observed benefit and all agree with the prediction
        // ordering, so the statistic is exactly 1.
        let predictions = vec![-0.4, -0.3, -0.2, -0.1, -0.45, -0.35, -0.15, -0.05];
        let treatment = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let outcome = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let c = c_for_benefit(&predictions, &treatment, &outcome).unwrap();
        assert_eq!(c, 1.0);

        // Reversing the prediction ordering flips every concordant
        // comparison to discordant.
        let flipped: Vec<f64> = predictions.iter().map(|p| -p).collect();
        let c_flip = c_for_benefit(&flipped, &treatment, &outcome).unwrap();
        assert_eq!(c_flip, 0.0);
    }

    #[test]
    fn c_for_benefit_invariant_under_monotone_transform() {
        let mut r = rng(23);
        let n = 400;
        let predictions: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.6).collect();
        let treatment: Vec<f64> = (0..n).map(|_| f64::from(r.random::<bool>())).collect();
        let outcome: Vec<f64> = (0..n).map(|_| f64::from(r.random::<f64>() < 0.3)).collect();

        let base = c_for_benefit(&predictions, &treatment, &outcome).unwrap();
        // Strictly increasing map: scaled shifted cubic-plus-linear.
        let transformed: Vec<f64> = predictions
            .iter()
            .map(|p| 0.2 * p.powi(3) + 1.5 * p - 3.0)
            .collect();
        let after = c_for_benefit(&transformed, &treatment, &outcome).unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn c_for_benefit_noise_is_near_half() {
        let mut r = rng(31);
        let n = 4000;
        let predictions: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let treatment: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        let outcome: Vec<f64> = (0..n).map(|_| f64::from(r.random::<f64>() < 0.3)).collect();
        let c = c_for_benefit(&predictions, &treatment, &outcome).unwrap();
        assert!((c - 0.5).abs() < 0.03, "independent predictions gave c {c}");
    }

    #[test]
    fn c_for_benefit_needs_two_usable_pairs() {
        // One treated unit: a single pair, no pair-pairs.
        let predictions = vec![-0.2, -0.1, -0.3];
        let treatment = vec![1.0, 0.0, 0.0];
        let outcome = vec![0.0, 1.0, 0.0];
        assert!(c_for_benefit(&predictions, &treatment, &outcome).is_none());

        // Two pairs but identical observed benefit everywhere.
        let predictions = vec![-0.2, -0.1, -0.3, -0.4];
        let treatment = vec![1.0, 1.0, 0.0, 0.0];
        let outcome = vec![0.0, 0.0, 0.0, 0.0];
        assert!(c_for_benefit(&predictions, &treatment, &outcome).is_none());
    }

    #[test]
    fn nco_effect_is_near_zero_for_pure_noise() {
        let mut r = rng(41);
        let n = 2400;
        let p = 3;
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                x.set(i, j, r.random::<f64>() - 0.5);
            }
        }
        let treatment: Vec<f64> = (0..n).map(|_| f64::from(r.random::<f64>() < 0.4)).collect();
        let nco: Vec<f64> = (0..n).map(|_| f64::from(r.random::<f64>() < 0.5)).collect();
        let preds: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let q = assign_quartiles(&preds).unwrap();

        let effects = nco_subgroup_effects(&x, &treatment, &nco, &q, false).unwrap();
        // Subgroups of 600 rows: the risk-difference standard error is about
        // sqrt(.25/240 + .25/360) ~= 0.042; allow three of those.
        for e in &effects {
            assert!(
                e.effect.abs() < 0.13,
                "null control outcome gave effect {} in quartile {}",
                e.effect,
                e.quartile
            );
            assert!(e.effect.abs() <= 1.0);
            assert!(!e.ridge_fallback);
            assert!(!e.adjusted_for_u);
        }
    }

    #[test]
    fn nco_effect_detects_planted_association() {
        // Control outcome depends on treatment (log-odds 1.0) only inside
        // what will become quartile 1.
        let mut r = rng(43);
        let n = 4000;
        let x = Matrix::zeros(n, 0);
        let treatment: Vec<f64> = (0..n).map(|_| f64::from(r.random::<f64>() < 0.5)).collect();
        let preds: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let q = assign_quartiles(&preds).unwrap();
        let nco: Vec<f64> = (0..n)
            .map(|i| {
                let lp = if q.labels[i] == 0 {
                    -0.5 + treatment[i]
                } else {
                    -0.5
                };
                f64::from(r.random::<f64>() < crate::glm::expit(lp))
            })
            .collect();
        let effects = nco_subgroup_effects(&x, &treatment, &nco, &q, false).unwrap();
        assert!(
            effects[0].effect > 0.15,
            "planted effect {}",
            effects[0].effect
        );
        assert!(effects[0].log_odds > 0.6);
        for e in &effects[1..] {
            assert!(e.effect.abs() < 0.1, "null quartile effect {}", e.effect);
        }
    }

    #[test]
    fn nco_single_arm_quartile_is_an_error() {
        let n = 16;
        let x = Matrix::zeros(n, 0);
        let preds: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let q = assign_quartiles(&preds).unwrap();
        // Quartile 1 (first four rows) is all treated.
        let mut treatment = vec![0.0; n];
        for t in treatment.iter_mut().take(8) {
            *t = 1.0;
        }
        treatment[6] = 0.0;
        let nco = vec![
            0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0,
        ];
        let err = nco_subgroup_effects(&x, &treatment, &nco, &q, false).unwrap_err();
        assert!(err.to_string().contains("single treatment arm"));
    }

    fn stub_result(ate_shift: f64, rep: u64) -> ReplicationResult {
        let nco_eff = NcoSubgroupEffect {
            quartile: 0,
            effect: 0.01 * ate_shift,
            log_odds: 0.0,
            adjusted_for_u: false,
            ridge_fallback: false,
        };
        let nco = [
            NcoSubgroupEffect {
                quartile: 0,
                ..nco_eff
            },
            NcoSubgroupEffect {
                quartile: 1,
                ..nco_eff
            },
            NcoSubgroupEffect {
                quartile: 2,
                ..nco_eff
            },
            NcoSubgroupEffect {
                quartile: 3,
                ..nco_eff
            },
        ];
        ReplicationResult {
            scenario: Scenario::TrueHte,
            setting: Setting::Primary,
            replication: rep,
            estimator: Estimator::CausalForest,
            regime: Regime::WithU,
            ate: -0.07 + ate_shift,
            quartile_means: [-0.15 + ate_shift, -0.08, -0.05, -0.01],
            quartile_sizes: [1250, 1250, 1250, 1250],
            rmse_vs_oracle: Some(0.03 + ate_shift.abs()),
            c_for_benefit: Some(0.5 + ate_shift),
            nco,
            degenerate_quartiles: false,
        }
    }

    #[test]
    fn summary_medians_and_intervals() {
        let results = vec![stub_result(0.01, 0), stub_result(-0.01, 1)];
        let summary = summarize_study(&results).unwrap();
        assert_eq!(summary.cells.len(), 1);
        let cell = &summary.cells[0];
        assert_eq!(cell.replications, 2);
        // Median of {-0.06, -0.08} by interpolation.
        assert!((cell.ate.median - -0.07).abs() < 1e-15);
        assert!(cell.ate.lo <= cell.ate.median && cell.ate.median <= cell.ate.hi);
        assert!((cell.quartile_means[0] - -0.15).abs() < 1e-12);
        let rmse = cell.rmse.unwrap();
        assert!((rmse.median - 0.04).abs() < 1e-15);
    }

    #[test]
    fn summary_constant_values_give_point_interval() {
        let results = vec![
            stub_result(0.0, 0),
            stub_result(0.0, 1),
            stub_result(0.0, 2),
        ];
        let summary = summarize_study(&results).unwrap();
        let cell = &summary.cells[0];
        assert_eq!(cell.ate.lo, cell.ate.median);
        assert_eq!(cell.ate.hi, cell.ate.median);
    }

    #[test]
    fn summary_reports_thin_cells() {
        let mut results = vec![stub_result(0.01, 0), stub_result(-0.01, 1)];
        let mut lone = stub_result(0.0, 0);
        lone.estimator = Estimator::XLearner;
        results.push(lone);
        let err = summarize_study(&results).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x_learner"), "{msg}");
        assert!(msg.contains("1 replication"), "{msg}");
        assert!(summarize_study(&[]).is_err());
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&sorted, 0.5), 2.5);
        assert_eq!(percentile(&sorted, 0.0), 1.0);
        assert_eq!(percentile(&sorted, 1.0), 4.0);
        assert!((percentile(&sorted, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn estimator_and_regime_round_trip() {
        for e in [
            Estimator::Oracle,
            Estimator::CausalForest,
            Estimator::XLearner,
        ] {
            assert_eq!(Estimator::parse(e.as_str()).unwrap(), e);
        }
        for r in [Regime::WithU, Regime::WithoutU] {
            assert_eq!(Regime::parse(r.as_str()).unwrap(), r);
        }
        assert!(Estimator::parse("bogus").is_err());
        assert!(Regime::parse("bogus").is_err());
    }
}
