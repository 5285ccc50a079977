//! Subsampled regression forest with out-of-bag predictions.
//!
//! This is the nuisance engine behind local centering: the causal forest
//! needs m(x) = E[Y|X] and e(x) = P(A=1|X) predicted for every training row
//! without that row's own trees. Split finding runs on pre-binned feature
//! codes (at most 64 bins per feature), which turns the inner loop into
//! histogram accumulation and keeps tree growth fast enough for the
//! replication counts the study needs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stream::Stream;

/// Regression forest hyperparameters.
#[derive(Clone, Debug)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Candidate features per split; 0 selects ceil(p / 3).
    pub mtry: usize,
    pub min_leaf: usize,
    /// Subsample fraction per tree, drawn without replacement.
    pub sample_fraction: f64,
    pub max_bins: usize,
    /// Keep per-tree in-bag row lists (tests only; costs memory).
    pub record_samples: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 500,
            mtry: 0,
            min_leaf: 5,
            sample_fraction: 0.5,
            max_bins: 64,
            record_samples: false,
        }
    }
}

/// Quantile-style feature discretizer shared by all forests.
///
/// Cut k of a feature is a raw data value; bin code c means the row's value
/// lies above cuts[0..c] and at or below cuts[c], so the split "code <= c"
/// is exactly the raw-scale split "x <= cuts[c]".
#[derive(Clone, Debug)]
pub struct Binner {
    cuts: Vec<Vec<f64>>,
}

impl Binner {
    pub fn fit(x: &Matrix, max_bins: usize) -> Binner {
        assert!((2..=64).contains(&max_bins), "max_bins must lie in 2..=64");
        let n = x.rows();
        let cuts = (0..x.cols())
            .map(|j| {
                let mut values = x.column(j);
                values.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
                values.dedup();
                if values.len() <= max_bins {
                    // Midpoints between consecutive distinct values.
                    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let mut qcuts: Vec<f64> = (1..max_bins)
                        .map(|q| values[q * (values.len() - 1) / max_bins])
                        .collect();
                    qcuts.dedup();
                    let _ = n;
                    qcuts
                }
            })
            .collect();
        Binner { cuts }
    }

    pub fn num_features(&self) -> usize {
        self.cuts.len()
    }

    /// Column-major bin codes for a matrix under this binner's cuts.
    pub fn codes(&self, x: &Matrix) -> BinnedData {
        assert_eq!(x.cols(), self.cuts.len(), "feature count mismatch");
        let n = x.rows();
        let p = x.cols();
        let mut codes = vec![0u8; n * p];
        for j in 0..p {
            let cuts = &self.cuts[j];
            for i in 0..n {
                let v = x.get(i, j);
                codes[j * n + i] = cuts.partition_point(|&t| t < v) as u8;
            }
        }
        BinnedData { codes, n, p }
    }

    /// Number of distinct codes feature j can take.
    pub fn code_count(&self, j: usize) -> usize {
        self.cuts[j].len() + 1
    }
}

/// Bin codes for one matrix, column-major for cache-friendly histogramming.
pub struct BinnedData {
    codes: Vec<u8>,
    n: usize,
    p: usize,
}

impl BinnedData {
    #[inline]
    pub fn code(&self, row: usize, feature: usize) -> u8 {
        self.codes[feature * self.n + row]
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> usize {
        self.p
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    feature: u16,
    cut: u8,
    is_leaf: bool,
    /// Left child index; the right child is `left + 1`.
    left: u32,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Node {
        Node {
            feature: 0,
            cut: 0,
            is_leaf: true,
            left: 0,
            value,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub(crate) fn predict_row(&self, data: &BinnedData, row: usize) -> f64 {
        let mut idx = 0usize;
        loop {
            let node = &self.nodes[idx];
            if node.is_leaf {
                return node.value;
            }
            idx = if data.code(row, node.feature as usize) <= node.cut {
                node.left as usize
            } else {
                node.left as usize + 1
            };
        }
    }
}

/// A fitted regression forest.
pub struct RegressionForest {
    trees: Vec<Tree>,
    binner: Binner,
    pub params: ForestParams,
    /// Out-of-bag prediction per training row (overall mean where no tree
    /// left the row out, which does not occur at study sizes).
    pub oob_predictions: Vec<f64>,
    /// Number of trees for which each row was out of bag.
    pub oob_counts: Vec<u32>,
    /// Per-tree in-bag rows when `record_samples` was set.
    pub in_bag: Option<Vec<Vec<u32>>>,
}

impl RegressionForest {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
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

/// Fits a regression forest on (x, y) with subsampling without replacement.
pub fn fit_regression_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    stream: &Stream,
) -> Result<RegressionForest> {
    let n = x.rows();
    if n < 50 {
        return Err(Error::fit(format!(
            "regression forest needs n >= 50, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::fit("response length mismatch"));
    }
    if params.num_trees == 0 {
        return Err(Error::fit("num_trees must be at least 1"));
    }
    if !(params.sample_fraction > 0.0 && params.sample_fraction <= 1.0) {
        return Err(Error::fit("sample_fraction must lie in (0, 1]"));
    }
    let p = x.cols();
    let mtry = if params.mtry == 0 {
        p.div_ceil(3)
    } else {
        params.mtry.min(p)
    };

    let binner = Binner::fit(x, params.max_bins);
    let data = binner.codes(x);
    let bag_size = ((params.sample_fraction * n as f64).round() as usize).clamp(1, n);

    let grown: Vec<(Tree, Vec<u32>)> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child_idx(t as u64).rng();
            let bag: Vec<u32> = rand::seq::index::sample(&mut rng, n, bag_size)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let tree = grow_tree(&data, y, &bag, mtry, params.min_leaf, &binner, &mut rng);
            (tree, bag)
        })
        .collect();

    // Accumulate out-of-bag sums in fixed tree order so the result does not
    // depend on the thread count.
    let mut oob_sum = vec![0.0; n];
    let mut oob_counts = vec![0u32; n];
    let mut in_bag_flag = vec![false; n];
    for (tree, bag) in &grown {
        for &i in bag {
            in_bag_flag[i as usize] = true;
        }
        for i in 0..n {
            if !in_bag_flag[i] {
                oob_sum[i] += tree.predict_row(&data, i);
                oob_counts[i] += 1;
            }
        }
        for &i in bag {
            in_bag_flag[i as usize] = false;
        }
    }
    let overall_mean = y.iter().sum::<f64>() / n as f64;
    let oob_predictions = (0..n)
        .map(|i| {
            if oob_counts[i] > 0 {
                oob_sum[i] / oob_counts[i] as f64
            } else {
                overall_mean
            }
        })
        .collect();

    let (trees, bags): (Vec<Tree>, Vec<Vec<u32>>) = grown.into_iter().unzip();
    Ok(RegressionForest {
        trees,
        binner,
        params: params.clone(),
        oob_predictions,
        oob_counts,
        in_bag: params.record_samples.then_some(bags),
    })
}

fn grow_tree(
    data: &BinnedData,
    y: &[f64],
    bag: &[u32],
    mtry: usize,
    min_leaf: usize,
    binner: &Binner,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Tree {
    let mut nodes = vec![Node::leaf(0.0)];
    let mut rows: Vec<u32> = bag.to_vec();
    let mut scratch: Vec<u32> = Vec::with_capacity(rows.len());
    // Frames reference contiguous row ranges in `rows`.
    let mut stack: Vec<(usize, usize, usize)> = vec![(0, 0, rows.len())];
    let p = data.features();

    while let Some((node_idx, start, end)) = stack.pop() {
        let slice_len = end - start;
        let sum: f64 = rows[start..end].iter().map(|&i| y[i as usize]).sum();
        let mean = sum / slice_len as f64;

        let mut best: Option<(f64, usize, u8)> = None;
        if slice_len >= 2 * min_leaf {
            let parent_score = sum * sum / slice_len as f64;
            for f in rand::seq::index::sample(rng, p, mtry.min(p)).into_iter() {
                let code_count = binner.code_count(f);
                if code_count < 2 {
                    continue;
                }
                let mut counts = [0u32; 64];
                let mut sums = [0.0f64; 64];
                for &i in &rows[start..end] {
                    let c = data.code(i as usize, f) as usize;
                    counts[c] += 1;
                    sums[c] += y[i as usize];
                }
                let mut left_n = 0u32;
                let mut left_sum = 0.0;
                for c in 0..code_count - 1 {
                    left_n += counts[c];
                    left_sum += sums[c];
                    let right_n = slice_len as u32 - left_n;
                    if (left_n as usize) < min_leaf {
                        continue;
                    }
                    if (right_n as usize) < min_leaf {
                        break;
                    }
                    let right_sum = sum - left_sum;
                    let decrease = left_sum * left_sum / left_n as f64
                        + right_sum * right_sum / right_n as f64
                        - parent_score;
                    if decrease > 1e-10 && best.is_none_or(|(b, _, _)| decrease > b) {
                        best = Some((decrease, f, c as u8));
                    }
                }
            }
        }

        match best {
            None => {
                nodes[node_idx] = Node::leaf(mean);
            }
            Some((_, feature, cut)) => {
                // Stable partition: left rows keep their order, then right rows.
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
                rows[write..end].copy_from_slice(&scratch);

                let left_idx = nodes.len();
                nodes.push(Node::leaf(0.0));
                nodes.push(Node::leaf(0.0));
                nodes[node_idx] = Node {
                    feature: feature as u16,
                    cut,
                    is_leaf: false,
                    left: left_idx as u32,
                    value: mean,
                };
                stack.push((left_idx + 1, write, end));
                stack.push((left_idx, start, write));
            }
        }
    }
    Tree { nodes }
}
