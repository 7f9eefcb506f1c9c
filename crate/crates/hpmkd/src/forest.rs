//! Seeded random-forest regression: bagged variance-reduction trees with
//! per-split feature subsampling.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{mix, SplitMix64};

#[derive(Debug, Clone)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    pub target_min: f64,
    pub target_max: f64,
}

impl RegressionForest {
    /// Fits `n_trees` trees, each on a seeded bootstrap sample. Splits
    /// minimize within-node squared error over ceil(sqrt(d)) candidate
    /// features per node.
    pub fn fit(features: &Matrix, targets: &[f64], params: &ForestParams) -> Result<Self> {
        if features.rows() == 0 || targets.is_empty() {
            return Err(Error::InsufficientHistory);
        }
        if features.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} targets",
                features.rows(),
                targets.len()
            )));
        }
        let n = features.rows();
        let mtry = (features.cols() as f64).sqrt().ceil() as usize;
        let mut trees = Vec::with_capacity(params.n_trees);
        for t in 0..params.n_trees {
            let mut rng = SplitMix64::new(mix(params.seed, t as u64));
            let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            let mut tree = Tree { nodes: Vec::new() };
            grow(
                &mut tree,
                features,
                targets,
                sample,
                0,
                params,
                mtry,
                &mut rng,
            );
            trees.push(tree);
        }
        let target_min = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let target_max = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            trees,
            target_min,
            target_max,
        })
    }

    /// Mean of the tree outputs.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Grows one subtree rooted at the next free node index; returns that index.
#[allow(clippy::too_many_arguments)]
fn grow(
    tree: &mut Tree,
    features: &Matrix,
    targets: &[f64],
    idx: Vec<usize>,
    depth: usize,
    params: &ForestParams,
    mtry: usize,
    rng: &mut SplitMix64,
) -> usize {
    let node_id = tree.nodes.len();
    let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64;
    tree.nodes.push(Node::Leaf(mean));

    if depth >= params.max_depth || idx.len() < 2 * params.min_leaf {
        return node_id;
    }
    let constant = idx.iter().all(|&i| targets[i] == targets[idx[0]]);
    if constant {
        return node_id;
    }

    // Candidate features in seeded random order. The first mtry are
    // always examined; if none of them admits a valid split (constant
    // columns, leaf-size limits) the search keeps drawing features until
    // one does or all are exhausted.
    let order = rng.choose_distinct(features.cols(), features.cols());
    let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
    for (rank, &f) in order.iter().enumerate() {
        if rank >= mtry && best.is_some() {
            break;
        }
        let mut pairs: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| (features.get(i, f), targets[i]))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
        let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..pairs.len() - 1 {
            left_sum += pairs[k].1;
            left_sq += pairs[k].1 * pairs[k].1;
            if pairs[k].0 == pairs[k + 1].0 {
                continue; // cannot split between equal values
            }
            let n_l = (k + 1) as f64;
            let n_r = (pairs.len() - k - 1) as f64;
            if (n_l as usize) < params.min_leaf || (n_r as usize) < params.min_leaf {
                continue;
            }
            let sse = (left_sq - left_sum * left_sum / n_l)
                + ((total_sq - left_sq) - (total_sum - left_sum) * (total_sum - left_sum) / n_r);
            let threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
            if best.map_or(true, |(b, _, _)| sse < b) {
                best = Some((sse, f, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return node_id;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| features.get(i, feature) <= threshold);
    let left = grow(
        tree, features, targets, left_idx, depth + 1, params, mtry, rng,
    );
    let right = grow(
        tree, features, targets, right_idx, depth + 1, params, mtry, rng,
    );
    tree.nodes[node_id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    node_id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_features(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn constant_targets_predict_constant() {
        let x = grid_features(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = vec![0.7; 5];
        let f = RegressionForest::fit(&x, &y, &ForestParams::default()).unwrap();
        assert!((f.predict(&[2.5]) - 0.7).abs() < 1e-12);
        assert!((f.predict(&[100.0]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_entry_predicts_it_everywhere() {
        let x = grid_features(&[1.0]);
        let f = RegressionForest::fit(&x, &[0.42], &ForestParams::default()).unwrap();
        assert!((f.predict(&[-5.0]) - 0.42).abs() < 1e-12);
        assert!((f.predict(&[9.0]) - 0.42).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_monotone_response() {
        // y = x / 50 on x in 0..50; predictions must track the trend.
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x / 50.0).collect();
        let f = RegressionForest::fit(&grid_features(&xs), &ys, &ForestParams::default()).unwrap();
        let preds: Vec<f64> = xs.iter().map(|&x| f.predict(&[x])).collect();
        // Spearman-like check: rank correlation of predictions vs x.
        let mut concordant = 0usize;
        let mut total = 0usize;
        for i in 0..preds.len() {
            for j in (i + 1)..preds.len() {
                total += 1;
                if preds[j] > preds[i] {
                    concordant += 1;
                }
            }
        }
        let corr = concordant as f64 / total as f64;
        assert!(corr > 0.9, "concordance {corr}");
    }

    #[test]
    fn deterministic_under_seed() {
        let xs: Vec<f64> = (0..30).map(|i| (i as f64) * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.7).sin()).collect();
        let x = grid_features(&xs);
        let p = ForestParams {
            seed: 9,
            ..Default::default()
        };
        let a = RegressionForest::fit(&x, &ys, &p).unwrap();
        let b = RegressionForest::fit(&x, &ys, &p).unwrap();
        for q in &[0.0, 1.7, 8.0] {
            assert_eq!(a.predict(&[*q]), b.predict(&[*q]));
        }
    }

    #[test]
    fn predictions_bounded_by_target_extrema() {
        let mut rng = SplitMix64::new(5);
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.range_f64(-2.0, 2.0), rng.range_f64(-2.0, 2.0)])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|v| v[0] * v[1]).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let f = RegressionForest::fit(&x, &ys, &ForestParams::default()).unwrap();
        for _ in 0..200 {
            let q = [rng.range_f64(-3.0, 3.0), rng.range_f64(-3.0, 3.0)];
            let p = f.predict(&q);
            assert!(p >= f.target_min - 1e-12 && p <= f.target_max + 1e-12);
        }
    }

    #[test]
    fn empty_history_is_error() {
        let x = Matrix::zeros(0, 1);
        assert!(matches!(
            RegressionForest::fit(&x, &[], &ForestParams::default()),
            Err(Error::InsufficientHistory)
        ));
    }
}
