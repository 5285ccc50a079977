//! Honest causal forest with local centering.
//!
//! The estimator works on residualized data: out-of-bag nuisance forests
//! predict the outcome surface m(x) and the propensity e(x), and the forest
//! is grown on Y - m(x) and A - e(x). Each tree draws a subsample without
//! replacement and splits it into a build half, which chooses the splits
//! through gradient pseudo-outcomes, and an estimation half, which alone
//! determines the leaf effects. Every retained leaf must hold at least
//! `min_per_arm_leaf` estimation rows of each treatment arm; nodes that
//! cannot meet that bar stay in the tree only as fallbacks, so predictions
//! landing there walk back up to the nearest valid ancestor.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm::forest::{fit_regression_forest, BinnedData, Binner, ForestParams};
use crate::matrix::Matrix;
use crate::stream::Stream;

/// Smallest improvement in the split criterion worth acting on.
const GAIN_EPS: f64 = 1e-12;
const NUISANCE_CLAMP: f64 = 1e-3;

/// Residualized training data produced by [`center_locally`].
pub struct CenteredData {
    /// Y minus the out-of-bag outcome prediction.
    pub y_res: Vec<f64>,
    /// A minus the out-of-bag propensity prediction.
    pub a_res: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub a_hat: Vec<f64>,
    /// Number of nuisance predictions pulled back inside [1e-3, 1 - 1e-3].
    pub clamp_count: usize,
}

/// Local centering: out-of-bag nuisance predictions subtracted from the
/// observed outcome and treatment so no row is centered by its own trees.
pub fn center_locally(
    x: &Matrix,
    y: &[f64],
    a: &[f64],
    nuisance_trees: usize,
    stream: &Stream,
) -> Result<CenteredData> {
    let n = x.rows();
    if y.len() != n || a.len() != n {
        return Err(Error::fit("centering inputs must share row count"));
    }
    let params = ForestParams {
        num_trees: nuisance_trees,
        ..ForestParams::default()
    };
    let outcome = fit_regression_forest(x, y, &params, &stream.child("outcome-nuisance"))?;
    let propensity = fit_regression_forest(x, a, &params, &stream.child("treatment-nuisance"))?;

    let mut clamp_count = 0usize;
    let mut clamp = |v: f64| {
        let c = v.clamp(NUISANCE_CLAMP, 1.0 - NUISANCE_CLAMP);
        if c != v {
            clamp_count += 1;
        }
        c
    };
    let y_hat: Vec<f64> = outcome.oob_predictions.iter().map(|&v| clamp(v)).collect();
    let a_hat: Vec<f64> = propensity
        .oob_predictions
        .iter()
        .map(|&v| clamp(v))
        .collect();
    let y_res = y.iter().zip(&y_hat).map(|(yi, mh)| yi - mh).collect();
    let a_res = a.iter().zip(&a_hat).map(|(ai, eh)| ai - eh).collect();
    Ok(CenteredData {
        y_res,
        a_res,
        y_hat,
        a_hat,
        clamp_count,
    })
}

/// Causal forest hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalForestParams {
    pub num_trees: usize,
    /// Minimum estimation rows of each arm in a retained leaf; never below 5.
    pub min_per_arm_leaf: usize,
    /// Subsample fraction per tree, drawn without replacement; at most 0.5.
    pub sample_fraction: f64,
    /// Fraction of the subsample that forms the build half.
    pub honesty_fraction: f64,
    /// Candidate features per split; 0 selects max(2, ceil(p / 3)).
    pub mtry: usize,
    /// Minimum build rows of each arm in a child node.
    pub min_node_size: usize,
    /// Grow on the build half alone and let invalid leaves fall back to
    /// ancestors (true), or refuse splits whose children would violate the
    /// estimation-arm constraint (false).
    pub honesty_prune: bool,
    /// Each child must keep at least this fraction of the parent's build rows.
    pub alpha_child_fraction: f64,
    /// Penalty discouraging lopsided children in the split criterion.
    pub imbalance_penalty: f64,
}

impl Default for CausalForestParams {
    fn default() -> Self {
        CausalForestParams {
            num_trees: 4000,
            min_per_arm_leaf: 5,
            sample_fraction: 0.5,
            honesty_fraction: 0.5,
            mtry: 0,
            min_node_size: 5,
            honesty_prune: true,
            alpha_child_fraction: 0.05,
            imbalance_penalty: 0.0,
        }
    }
}

impl CausalForestParams {
    fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::config("num_trees must be at least 1"));
        }
        if self.min_per_arm_leaf < 5 {
            return Err(Error::config("min_per_arm_leaf must be at least 5"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 0.5) {
            return Err(Error::config("sample_fraction must lie in (0, 0.5]"));
        }
        if !(self.honesty_fraction > 0.1 && self.honesty_fraction < 0.9) {
            return Err(Error::config("honesty_fraction must lie in (0.1, 0.9)"));
        }
        if !(self.alpha_child_fraction > 0.0 && self.alpha_child_fraction <= 0.25) {
            return Err(Error::config("alpha_child_fraction must lie in (0, 0.25]"));
        }
        if self.imbalance_penalty < 0.0 {
            return Err(Error::config("imbalance_penalty must be non-negative"));
        }
        Ok(())
    }

    fn resolved_mtry(&self, p: usize) -> usize {
        if self.mtry == 0 {
            p.div_ceil(3).max(2).min(p)
        } else {
            self.mtry.clamp(1, p)
        }
    }
}

#[derive(Clone, Copy)]
struct CNode {
    feature: u16,
    cut: u8,
    is_leaf: bool,
    /// Estimation-half arms both reached `min_per_arm_leaf`.
    valid: bool,
    /// Left child index; the right child is `left + 1`.
    left: u32,
    /// Estimation-half effect at this node.
    value: f64,
}

struct CausalTree {
    nodes: Vec<CNode>,
}

impl CausalTree {
    /// Walks the tree; rows ending in an invalid leaf take the value of the
    /// nearest valid ancestor (the root's value if nothing was valid).
    fn predict_row(&self, data: &BinnedData, row: usize) -> f64 {
        let mut idx = 0usize;
        let mut fallback = self.nodes[0].value;
        loop {
            let node = &self.nodes[idx];
            if node.valid {
                fallback = node.value;
            }
            if node.is_leaf {
                return if node.valid { node.value } else { fallback };
            }
            idx = if data.code(row, node.feature as usize) <= node.cut {
                node.left as usize
            } else {
                node.left as usize + 1
            };
        }
    }

    fn is_root_only(&self) -> bool {
        self.nodes.len() == 1
    }
}

/// A fitted honest causal forest.
pub struct CausalForest {
    trees: Vec<CausalTree>,
    binner: Binner,
    pub params: CausalForestParams,
    /// Mean squared debiased error over rows with out-of-bag coverage:
    /// (Y_res - tau_oob * A_res)^2.
    pub oob_error: f64,
    /// Out-of-bag effect prediction per training row (NaN without coverage).
    pub oob_cate: Vec<f64>,
    /// Trees whose root could not satisfy the estimation-arm constraint.
    pub degenerate_trees: usize,
    /// Per-tree (build, estimation) row ids when `record_samples` was set.
    pub samples: Option<Vec<(Vec<u32>, Vec<u32>)>>,
}

impl CausalForest {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict_cate(&self, x: &Matrix) -> Vec<f64> {
        let data = self.binner.codes(x);
        let inv = 1.0 / self.trees.len() as f64;
        (0..x.rows())
            .map(|i| {
                self.trees
                    .iter()
                    .map(|t| t.predict_row(&data, i))
                    .sum::<f64>()
                    * inv
            })
            .collect()
    }
}

/// Grows an honest causal forest on residualized data. `treated` carries the
/// original arm indicator used for the per-arm node constraints.
pub fn fit_causal_forest(
    x: &Matrix,
    treated: &[f64],
    y_res: &[f64],
    a_res: &[f64],
    params: &CausalForestParams,
    record_samples: bool,
    stream: &Stream,
) -> Result<CausalForest> {
    params.validate()?;
    let n = x.rows();
    if treated.len() != n || y_res.len() != n || a_res.len() != n {
        return Err(Error::fit("causal forest inputs must share row count"));
    }
    if n < 50 {
        return Err(Error::fit(format!("causal forest needs n >= 50, got {n}")));
    }
    if treated.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::fit("treatment indicator must be 0/1"));
    }

    let p = x.cols();
    let mtry = params.resolved_mtry(p);
    let binner = Binner::fit(x, 64);
    let data = binner.codes(x);
    let bag_size = ((params.sample_fraction * n as f64).round() as usize).clamp(2, n);

    let grown: Vec<(CausalTree, Vec<u32>, Vec<u32>)> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child_idx(t as u64).rng();
            let sampled: Vec<u32> = rand::seq::index::sample(&mut rng, n, bag_size)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            // The sample arrives in random order, so a prefix split is an
            // honest random partition.
            let build_size = ((params.honesty_fraction * bag_size as f64).round() as usize)
                .clamp(1, bag_size - 1);
            let build = sampled[..build_size].to_vec();
            let est = sampled[build_size..].to_vec();
            let tree = grow_causal_tree(
                &data, treated, y_res, a_res, &build, &est, mtry, params, &binner, &mut rng,
            );
            (tree, build, est)
        })
        .collect();

    // Out-of-bag accumulation in fixed tree order for thread-count invariance.
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0u32; n];
    let mut in_bag = vec![false; n];
    let mut degenerate_trees = 0usize;
    for (tree, build, est) in &grown {
        if tree.is_root_only() && !tree.nodes[0].valid {
            degenerate_trees += 1;
        }
        for &i in build.iter().chain(est.iter()) {
            in_bag[i as usize] = true;
        }
        for i in 0..n {
            if !in_bag[i] {
                oob_sum[i] += tree.predict_row(&data, i);
                oob_count[i] += 1;
            }
        }
        for &i in build.iter().chain(est.iter()) {
            in_bag[i as usize] = false;
        }
    }
    let oob_cate: Vec<f64> = (0..n)
        .map(|i| {
            if oob_count[i] > 0 {
                oob_sum[i] / oob_count[i] as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    for i in 0..n {
        if oob_count[i] > 0 {
            let r = y_res[i] - oob_cate[i] * a_res[i];
            err_sum += r * r;
            err_n += 1;
        }
    }
    let oob_error = if err_n > 0 {
        err_sum / err_n as f64
    } else {
        f64::INFINITY
    };

    let mut trees = Vec::with_capacity(grown.len());
    let mut samples = record_samples.then(Vec::new);
    for (tree, build, est) in grown {
        trees.push(tree);
        if let Some(s) = samples.as_mut() {
            s.push((build, est));
        }
    }
    Ok(CausalForest {
        trees,
        binner,
        params: params.clone(),
        oob_error,
        oob_cate,
        degenerate_trees,
        samples,
    })
}

struct NodeStats {
    value: f64,
    valid: bool,
}

fn est_stats(
    est: &[u32],
    treated: &[f64],
    y_res: &[f64],
    a_res: &[f64],
    min_per_arm: usize,
) -> NodeStats {
    let mut sum_ay = 0.0;
    let mut sum_aa = 0.0;
    let mut n_treated = 0usize;
    let mut n_control = 0usize;
    for &i in est {
        let i = i as usize;
        sum_ay += a_res[i] * y_res[i];
        sum_aa += a_res[i] * a_res[i];
        if treated[i] == 1.0 {
            n_treated += 1;
        } else {
            n_control += 1;
        }
    }
    NodeStats {
        value: if sum_aa > 1e-12 { sum_ay / sum_aa } else { 0.0 },
        valid: n_treated >= min_per_arm && n_control >= min_per_arm,
    }
}

#[allow(clippy::too_many_arguments)]
fn grow_causal_tree(
    data: &BinnedData,
    treated: &[f64],
    y_res: &[f64],
    a_res: &[f64],
    build: &[u32],
    est: &[u32],
    mtry: usize,
    params: &CausalForestParams,
    binner: &Binner,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> CausalTree {
    let p = data.features();
    let mut nodes: Vec<CNode> = Vec::new();
    let mut b_rows = build.to_vec();
    let mut e_rows = est.to_vec();
    let mut b_scratch: Vec<u32> = Vec::with_capacity(b_rows.len());
    let mut e_scratch: Vec<u32> = Vec::with_capacity(e_rows.len());
    let mut rho = vec![0.0f64; 0];

    nodes.push(CNode {
        feature: 0,
        cut: 0,
        is_leaf: true,
        valid: false,
        left: 0,
        value: 0.0,
    });
    // Frames hold (node, build range, estimation range).
    let mut stack = vec![(0usize, 0usize, b_rows.len(), 0usize, e_rows.len())];

    while let Some((node_idx, b0, b1, e0, e1)) = stack.pop() {
        let stats = est_stats(
            &e_rows[e0..e1],
            treated,
            y_res,
            a_res,
            params.min_per_arm_leaf,
        );
        nodes[node_idx].value = stats.value;
        nodes[node_idx].valid = stats.valid;

        // No descendant can regain an arm this node already lacks, so an
        // invalid node can never host a valid leaf: stop here and let
        // prediction fall back to an ancestor.
        if !stats.valid {
            continue;
        }

        let n_b = b1 - b0;
        if n_b < 2 * params.min_node_size.max(1) {
            continue;
        }

        // Parent effect and pseudo-outcomes from the build half.
        let mut sum_ay = 0.0;
        let mut sum_aa = 0.0;
        let mut sum_a = 0.0;
        for &i in &b_rows[b0..b1] {
            let i = i as usize;
            sum_ay += a_res[i] * y_res[i];
            sum_aa += a_res[i] * a_res[i];
            sum_a += a_res[i];
        }
        if sum_aa < 1e-12 {
            continue;
        }
        let tau_parent = sum_ay / sum_aa;
        let a_mean = sum_a / n_b as f64;
        let var_a = b_rows[b0..b1]
            .iter()
            .map(|&i| {
                let d = a_res[i as usize] - a_mean;
                d * d
            })
            .sum::<f64>()
            / n_b as f64;
        if var_a < 1e-12 {
            continue;
        }
        rho.clear();
        rho.extend(b_rows[b0..b1].iter().map(|&i| {
            let i = i as usize;
            a_res[i] * (y_res[i] - a_res[i] * tau_parent) / var_a
        }));
        let rho_total: f64 = rho.iter().sum();
        let parent_score = rho_total * rho_total / n_b as f64;
        let min_child = ((params.alpha_child_fraction * n_b as f64).ceil() as usize).max(1);

        let mut best: Option<(f64, usize, u8)> = None;
        for f in rand::seq::index::sample(rng, p, mtry).into_iter() {
            let code_count = binner.code_count(f);
            if code_count < 2 {
                continue;
            }
            let mut counts = [0u32; 64];
            let mut rho_sums = [0.0f64; 64];
            let mut b_treated = [0u32; 64];
            for (pos, &i) in b_rows[b0..b1].iter().enumerate() {
                let c = data.code(i as usize, f) as usize;
                counts[c] += 1;
                rho_sums[c] += rho[pos];
                b_treated[c] += (treated[i as usize] == 1.0) as u32;
            }
            // Stop-early honesty also histograms the estimation half so the
            // child arm constraint can be enforced at split time.
            let mut e_treated = [0u32; 64];
            let mut e_control = [0u32; 64];
            if !params.honesty_prune {
                for &i in &e_rows[e0..e1] {
                    let c = data.code(i as usize, f) as usize;
                    if treated[i as usize] == 1.0 {
                        e_treated[c] += 1;
                    } else {
                        e_control[c] += 1;
                    }
                }
            }
            let est_treated_total: u32 = e_treated.iter().sum();
            let est_control_total: u32 = e_control.iter().sum();
            let total_treated: u32 = b_treated[..code_count].iter().sum();

            let mut l_n = 0u32;
            let mut l_rho = 0.0;
            let mut l_treated = 0u32;
            let mut l_est_t = 0u32;
            let mut l_est_c = 0u32;
            for c in 0..code_count - 1 {
                l_n += counts[c];
                l_rho += rho_sums[c];
                l_treated += b_treated[c];
                l_est_t += e_treated[c];
                l_est_c += e_control[c];
                let r_n = n_b as u32 - l_n;
                if (l_n as usize) < min_child {
                    continue;
                }
                if (r_n as usize) < min_child {
                    break;
                }
                let l_control = l_n - l_treated;
                let r_treated = total_treated - l_treated;
                let r_control = r_n - r_treated;
                let m = params.min_node_size as u32;
                if l_treated < m || l_control < m || r_treated < m || r_control < m {
                    continue;
                }
                if !params.honesty_prune {
                    let ma = params.min_per_arm_leaf as u32;
                    let r_est_t = est_treated_total - l_est_t;
                    let r_est_c = est_control_total - l_est_c;
                    if l_est_t < ma || l_est_c < ma || r_est_t < ma || r_est_c < ma {
                        continue;
                    }
                }
                let r_rho = rho_total - l_rho;
                let gain = l_rho * l_rho / l_n as f64 + r_rho * r_rho / r_n as f64
                    - parent_score
                    - params.imbalance_penalty * (1.0 / l_n as f64 + 1.0 / r_n as f64);
                if gain > GAIN_EPS && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, c as u8));
                }
            }
        }

        let Some((_, feature, cut)) = best else {
            continue;
        };

        let b_split = partition(&mut b_rows, b0, b1, &mut b_scratch, data, feature, cut);
        let e_split = partition(&mut e_rows, e0, e1, &mut e_scratch, data, feature, cut);
        let left_idx = nodes.len();
        let blank = CNode {
            feature: 0,
            cut: 0,
            is_leaf: true,
            valid: false,
            left: 0,
            value: 0.0,
        };
        nodes.push(blank);
        nodes.push(blank);
        let node = &mut nodes[node_idx];
        node.feature = feature as u16;
        node.cut = cut;
        node.is_leaf = false;
        node.left = left_idx as u32;
        stack.push((left_idx + 1, b_split, b1, e_split, e1));
        stack.push((left_idx, b0, b_split, e0, e_split));
    }
    CausalTree { nodes }
}

/// Stable in-place partition of `rows[start..end]` by the binned split;
/// returns the boundary index.
fn partition(
    rows: &mut [u32],
    start: usize,
    end: usize,
    scratch: &mut Vec<u32>,
    data: &BinnedData,
    feature: usize,
    cut: u8,
) -> usize {
    scratch.clear();
    let mut write = start;
    for k in start..end {
        let i = rows[k];
        if data.code(i as usize, feature) <= cut {
            rows[write] = i;
            write += 1;
        } else {
            scratch.push(i);
        }
    }
    rows[write..end].copy_from_slice(scratch);
    write
}

/// Outcome of a random hyperparameter search.
pub struct TuningOutcome {
    pub params: CausalForestParams,
    /// Pilot out-of-bag error per candidate; index 0 is the default.
    pub errors: Vec<f64>,
    pub chosen: usize,
}

/// Random search over the tunable hyperparameters. Candidate 0 is `base`;
/// `draws` further candidates are sampled, each scored with a pilot forest
/// of `pilot_trees` trees by the out-of-bag debiased error. The winner is
/// returned with `num_trees` restored from `base`.
#[allow(clippy::too_many_arguments)]
pub fn tune_causal_forest(
    x: &Matrix,
    treated: &[f64],
    y_res: &[f64],
    a_res: &[f64],
    base: &CausalForestParams,
    draws: usize,
    pilot_trees: usize,
    stream: &Stream,
) -> Result<TuningOutcome> {
    base.validate()?;
    let p = x.cols();
    let mut candidates = vec![base.clone()];
    let mut rng = stream.child("params").rng();
    for _ in 0..draws {
        use rand::Rng;
        candidates.push(CausalForestParams {
            num_trees: base.num_trees,
            min_per_arm_leaf: base.min_per_arm_leaf,
            sample_fraction: rng.random_range(0.15..=0.5),
            honesty_fraction: rng.random_range(0.5..=0.8),
            mtry: rng.random_range(2..=p.max(2)),
            min_node_size: rng.random_range(5..=50),
            honesty_prune: rng.random::<f64>() < 0.5,
            alpha_child_fraction: rng.random_range(0.05..=0.25),
            imbalance_penalty: rng.random_range(0.0..=2.0),
        });
    }

    let errors: Vec<f64> = candidates
        .par_iter()
        .enumerate()
        .map(|(idx, cand)| {
            let pilot = CausalForestParams {
                num_trees: pilot_trees,
                ..cand.clone()
            };
            match fit_causal_forest(
                x,
                treated,
                y_res,
                a_res,
                &pilot,
                false,
                &stream.child("pilot").child_idx(idx as u64),
            ) {
                Ok(fit) => fit.oob_error,
                Err(_) => f64::INFINITY,
            }
        })
        .collect();

    let chosen = errors
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            let a = if a.is_nan() { f64::INFINITY } else { **a };
            let b = if b.is_nan() { f64::INFINITY } else { **b };
            a.partial_cmp(&b).unwrap().then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .expect("at least the default candidate");
    let params = CausalForestParams {
        num_trees: base.num_trees,
        ..candidates[chosen].clone()
    };
    Ok(TuningOutcome {
        params,
        errors,
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{self, Covariate, CovariateKind, Scenario, ScenarioSpec, Setting, Targets};

    fn stream() -> Stream {
        Stream::root(55).child("causal-test")
    }

    /// A small unconfounded scenario: treatment depends on nothing, outcome
    /// on two measured covariates, no effect heterogeneity or confounding.
    fn unconfounded_spec(n: usize, treatment_effect: f64) -> ScenarioSpec {
        ScenarioSpec {
            scenario: if treatment_effect == 0.0 {
                Scenario::NoHte
            } else {
                Scenario::TrueHte
            },
            setting: Setting::Primary,
            n,
            replications: 1,
            master_seed: 9,
            targets: Targets {
                treated: 0.4,
                outcome: 0.3,
                nco: 0.5,
            },
            treatment_effect,
            covariates: vec![
                Covariate {
                    name: "x1".into(),
                    kind: CovariateKind::Binary { prevalence: 0.35 },
                    measured: true,
                    beta_treatment: 0.0,
                    beta_outcome: 0.6,
                    beta_nco: 0.0,
                },
                Covariate {
                    name: "x2".into(),
                    kind: CovariateKind::Continuous { mean: 0.0, sd: 1.0 },
                    measured: true,
                    beta_treatment: 0.0,
                    beta_outcome: -0.4,
                    beta_nco: 0.0,
                },
                Covariate {
                    name: "u".into(),
                    kind: CovariateKind::Binary { prevalence: 0.1 },
                    measured: false,
                    beta_treatment: 0.0,
                    beta_outcome: 0.0,
                    beta_nco: 0.0,
                },
            ],
            interactions: if treatment_effect == 0.0 {
                vec![]
            } else {
                vec![(0, -0.5)]
            },
        }
    }

    #[test]
    fn centering_residual_means_near_zero_on_primary_data() {
        let spec = sim::fixtures::load(Scenario::TrueHte, Setting::Primary).unwrap();
        let data = sim::generate(&spec, 3).unwrap();
        let x = data.covariate_view(true);
        let centered = center_locally(
            &x,
            &data.outcome,
            &data.treatment,
            100,
            &stream().child("c"),
        )
        .unwrap();
        let n = x.rows() as f64;
        let ym = centered.y_res.iter().sum::<f64>() / n;
        let am = centered.a_res.iter().sum::<f64>() / n;
        assert!(ym.abs() < 0.01, "outcome residual mean {ym}");
        assert!(am.abs() < 0.01, "treatment residual mean {am}");
    }

    #[test]
    fn constant_propensity_gives_bernoulli_residual_variance() {
        let spec = unconfounded_spec(6000, -0.2);
        let data = sim::generate(&spec, 0).unwrap();
        let x = data.covariate_view(false);
        let centered = center_locally(
            &x,
            &data.outcome,
            &data.treatment,
            100,
            &stream().child("v"),
        )
        .unwrap();
        let n = x.rows() as f64;
        let am = centered.a_res.iter().sum::<f64>() / n;
        let var = centered
            .a_res
            .iter()
            .map(|a| (a - am) * (a - am))
            .sum::<f64>()
            / n;
        assert!(
            (var - 0.24).abs() < 0.015,
            "treatment residual variance {var}, expected about 0.4 * 0.6"
        );
    }

    #[test]
    fn omitting_u_biases_residual_slope_upward() {
        // The residual-on-residual slope is the forest's root-level effect
        // estimate. With U in the view it sits near the true ATE; dropping U
        // leaves a materially nonzero confounded correlation and pulls the
        // slope toward zero, which is the mechanism behind the confounded
        // ATE attenuation.
        let spec = sim::fixtures::load(Scenario::TrueHte, Setting::Primary).unwrap();
        let data = sim::generate(&spec, 1).unwrap();
        let stats = |with_u: bool| {
            let x = data.covariate_view(with_u);
            let c = center_locally(
                &x,
                &data.outcome,
                &data.treatment,
                100,
                &stream().child("u"),
            )
            .unwrap();
            let n = x.rows() as f64;
            let ay: f64 = c.a_res.iter().zip(&c.y_res).map(|(a, y)| a * y).sum();
            let aa: f64 = c.a_res.iter().map(|a| a * a).sum();
            let am = c.a_res.iter().sum::<f64>() / n;
            let ym = c.y_res.iter().sum::<f64>() / n;
            let cov = c
                .a_res
                .iter()
                .zip(&c.y_res)
                .map(|(a, y)| (a - am) * (y - ym))
                .sum::<f64>()
                / n;
            let va = c.a_res.iter().map(|a| (a - am) * (a - am)).sum::<f64>() / n;
            let vy = c.y_res.iter().map(|y| (y - ym) * (y - ym)).sum::<f64>() / n;
            (ay / aa, cov / (va * vy).sqrt())
        };
        let (slope_with, _) = stats(true);
        let (slope_without, corr_without) = stats(false);
        assert!(
            slope_with < -0.05,
            "slope with U should sit near the ATE, got {slope_with}"
        );
        assert!(
            corr_without.abs() > 0.005,
            "confounded residual correlation should be materially nonzero, got {corr_without}"
        );
        assert!(
            slope_without > slope_with + 0.02,
            "omitting U should attenuate the slope: {slope_without} vs {slope_with}"
        );
    }

    #[test]
    fn null_effect_forest_ate_near_zero() {
        // A single dataset's forest ATE wobbles by about 0.013 at this size,
        // so average over six fixed replicates.
        let spec = unconfounded_spec(8000, 0.0);
        let mut total = 0.0;
        let reps = 6u64;
        for rep in 0..reps {
            let data = sim::generate(&spec, rep).unwrap();
            let x = data.covariate_view(false);
            let centered = center_locally(
                &x,
                &data.outcome,
                &data.treatment,
                150,
                &stream().child("n"),
            )
            .unwrap();
            let params = CausalForestParams {
                num_trees: 300,
                ..CausalForestParams::default()
            };
            let fit = fit_causal_forest(
                &x,
                &data.treatment,
                &centered.y_res,
                &centered.a_res,
                &params,
                false,
                &stream().child("null-fit"),
            )
            .unwrap();
            let preds = fit.predict_cate(&x);
            total += preds.iter().sum::<f64>() / preds.len() as f64;
        }
        let ate = total / reps as f64;
        assert!(ate.abs() < 0.01, "null-effect ATE {ate}");
    }

    fn small_fit(honesty_prune: bool) -> (CausalForest, Matrix, Vec<f64>, Vec<f64>, Vec<f64>) {
        let spec = unconfounded_spec(1200, -0.3);
        let data = sim::generate(&spec, 4).unwrap();
        let x = data.covariate_view(false);
        let centered =
            center_locally(&x, &data.outcome, &data.treatment, 60, &stream().child("s")).unwrap();
        let params = CausalForestParams {
            num_trees: 25,
            honesty_prune,
            ..CausalForestParams::default()
        };
        let fit = fit_causal_forest(
            &x,
            &data.treatment,
            &centered.y_res,
            &centered.a_res,
            &params,
            true,
            &stream().child(if honesty_prune { "sp" } else { "se" }),
        )
        .unwrap();
        (
            fit,
            x,
            data.treatment.clone(),
            centered.y_res,
            centered.a_res,
        )
    }

    #[test]
    fn honesty_split_is_disjoint_and_leaf_values_come_from_estimation_rows() {
        for prune in [true, false] {
            let (fit, x, treated, y_res, a_res) = small_fit(prune);
            let data = fit.binner.codes(&x);
            let samples = fit.samples.as_ref().unwrap();
            for (tree, (build, est)) in fit.trees.iter().zip(samples) {
                assert!(
                    build.iter().all(|i| !est.contains(i)),
                    "build and est overlap"
                );

                // Route estimation rows to leaves and recompute each value.
                let mut per_leaf: std::collections::HashMap<usize, Vec<usize>> =
                    std::collections::HashMap::new();
                for &i in est {
                    let mut idx = 0usize;
                    loop {
                        let node = &tree.nodes[idx];
                        if node.is_leaf {
                            break;
                        }
                        idx = if data.code(i as usize, node.feature as usize) <= node.cut {
                            node.left as usize
                        } else {
                            node.left as usize + 1
                        };
                    }
                    per_leaf.entry(idx).or_default().push(i as usize);
                }
                for (leaf, rows) in per_leaf {
                    let node = &tree.nodes[leaf];
                    let sum_ay: f64 = rows.iter().map(|&i| a_res[i] * y_res[i]).sum();
                    let sum_aa: f64 = rows.iter().map(|&i| a_res[i] * a_res[i]).sum();
                    if sum_aa > 1e-12 {
                        assert!(
                            (node.value - sum_ay / sum_aa).abs() < 1e-10,
                            "leaf value diverges from estimation rows"
                        );
                    }
                    if node.valid {
                        let t = rows.iter().filter(|&&i| treated[i] == 1.0).count();
                        let c = rows.len() - t;
                        assert!(
                            t >= fit.params.min_per_arm_leaf && c >= fit.params.min_per_arm_leaf,
                            "valid leaf with thin arms: {t} treated, {c} control"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn stop_early_mode_keeps_every_leaf_valid() {
        let (fit, _, _, _, _) = small_fit(false);
        for tree in &fit.trees {
            if tree.is_root_only() {
                continue;
            }
            for node in &tree.nodes {
                if node.is_leaf {
                    assert!(node.valid, "stop-early tree produced an invalid leaf");
                }
            }
        }
    }

    #[test]
    fn degenerate_roots_are_counted_and_finite() {
        // 60 rows with a 0.5 subsample and honest split leaves about 15
        // estimation rows; with 40% treated, arms of 5 will often fail.
        let spec = unconfounded_spec(1000, -0.2);
        let data = sim::generate(&spec, 6).unwrap();
        let x = data
            .covariate_view(false)
            .select_rows(&(0..60).collect::<Vec<_>>());
        let treated: Vec<f64> = data.treatment[..60].to_vec();
        let y_res: Vec<f64> = data.outcome[..60].iter().map(|y| y - 0.3).collect();
        let a_res: Vec<f64> = treated.iter().map(|&t| t - 0.4).collect();
        let params = CausalForestParams {
            num_trees: 50,
            ..CausalForestParams::default()
        };
        let fit = fit_causal_forest(
            &x,
            &treated,
            &y_res,
            &a_res,
            &params,
            false,
            &stream().child("degen"),
        )
        .unwrap();
        assert!(fit.degenerate_trees > 0, "expected some degenerate trees");
        assert!(fit.predict_cate(&x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fit_is_deterministic_for_a_fixed_stream() {
        let (a_fit, x, treated, y_res, a_res) = small_fit(true);
        let params = a_fit.params.clone();
        let b_fit = fit_causal_forest(
            &x,
            &treated,
            &y_res,
            &a_res,
            &params,
            true,
            &stream().child("sp"),
        )
        .unwrap();
        assert_eq!(a_fit.predict_cate(&x), b_fit.predict_cate(&x));
        assert_eq!(a_fit.oob_error, b_fit.oob_error);
    }

    #[test]
    fn tuning_never_beats_itself_and_zero_draws_returns_default() {
        let spec = unconfounded_spec(2500, -0.3);
        let data = sim::generate(&spec, 5).unwrap();
        let x = data.covariate_view(false);
        let centered =
            center_locally(&x, &data.outcome, &data.treatment, 80, &stream().child("t")).unwrap();
        let base = CausalForestParams {
            num_trees: 400,
            ..CausalForestParams::default()
        };
        let outcome = tune_causal_forest(
            &x,
            &data.treatment,
            &centered.y_res,
            &centered.a_res,
            &base,
            6,
            60,
            &stream().child("tune"),
        )
        .unwrap();
        assert_eq!(outcome.errors.len(), 7);
        assert!(
            outcome.errors[outcome.chosen] <= outcome.errors[0],
            "tuned {} vs default {}",
            outcome.errors[outcome.chosen],
            outcome.errors[0]
        );
        assert_eq!(outcome.params.num_trees, 400);

        let trivial = tune_causal_forest(
            &x,
            &data.treatment,
            &centered.y_res,
            &centered.a_res,
            &base,
            0,
            60,
            &stream().child("tune0"),
        )
        .unwrap();
        assert_eq!(trivial.chosen, 0);
        assert_eq!(trivial.params, base);
    }

    #[test]
    fn tuning_is_deterministic() {
        let spec = unconfounded_spec(1500, -0.3);
        let data = sim::generate(&spec, 7).unwrap();
        let x = data.covariate_view(false);
        let centered = center_locally(
            &x,
            &data.outcome,
            &data.treatment,
            60,
            &stream().child("td"),
        )
        .unwrap();
        let base = CausalForestParams::default();
        let run = || {
            tune_causal_forest(
                &x,
                &data.treatment,
                &centered.y_res,
                &centered.a_res,
                &base,
                4,
                40,
                &stream().child("td-tune"),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn rejects_bad_params() {
        let spec = unconfounded_spec(1000, -0.2);
        let data = sim::generate(&spec, 8).unwrap();
        let x = data.covariate_view(false);
        let y_res = vec![0.0; 1000];
        let a_res = vec![0.1; 1000];
        for bad in [
            CausalForestParams {
                min_per_arm_leaf: 4,
                ..CausalForestParams::default()
            },
            CausalForestParams {
                sample_fraction: 0.6,
                ..CausalForestParams::default()
            },
            CausalForestParams {
                honesty_fraction: 0.05,
                ..CausalForestParams::default()
            },
            CausalForestParams {
                alpha_child_fraction: 0.3,
                ..CausalForestParams::default()
            },
            CausalForestParams {
                imbalance_penalty: -1.0,
                ..CausalForestParams::default()
            },
            CausalForestParams {
                num_trees: 0,
                ..CausalForestParams::default()
            },
        ] {
            assert!(fit_causal_forest(
                &x,
                &data.treatment,
                &y_res,
                &a_res,
                &bad,
                false,
                &stream().child("bad"),
            )
            .is_err());
        }
    }
}
