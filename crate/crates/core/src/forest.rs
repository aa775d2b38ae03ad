//! Bagged CART regression trees with impurity-based feature importances.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionKind, AttributionMap};
use crate::error::{check_len, Error, Result};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    /// Candidate features per split; `None` means `ceil(p / 3)`.
    pub features_per_split: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree_count: 50,
            max_depth: 8,
            features_per_split: None,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn features_for(&self, p: usize) -> usize {
        self.features_per_split
            .unwrap_or(p.div_ceil(3))
            .clamp(1, p.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Training samples reaching this node.
        samples: usize,
        /// Sum-of-squares reduction achieved by the split.
        sse_decrease: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        prediction: f64,
        sample_count: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { prediction, .. } => return *prediction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Leaf { sample_count, .. } => *sample_count,
            TreeNode::Split { samples, .. } => *samples,
        }
    }

    fn credit(&self, root_samples: f64, out: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            sse_decrease,
            left,
            right,
            ..
        } = self
        {
            // (n_node / n_root) · (variance reduction) == SSE decrease / n_root
            out[*feature] += sse_decrease / root_samples;
            left.credit(root_samples, out);
            right.credit(root_samples, out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub seed: u64,
    pub feature_names: Vec<String>,
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if y.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a tree to empty data".into(),
        ));
    }
    check_len(y.len(), x.len())?;
    let p = x[0].len();
    for row in x {
        check_len(p, row.len())?;
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "training data contains non-finite values".into(),
        ));
    }
    Ok(p)
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct TreeBuilder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    k: usize,
    rng: &'a mut R,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let first = self.y[idx[0]];
        let prediction = if idx.iter().all(|&i| self.y[i] == first) {
            first
        } else {
            let (lo, hi) = idx
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(self.y[i]), hi.max(self.y[i]))
                });
            (idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64).clamp(lo, hi)
        };
        TreeNode::Leaf {
            prediction,
            sample_count: idx.len(),
        }
    }

    fn best_split(&mut self, idx: &[usize], candidates: &[usize]) -> Option<Best> {
        let n = idx.len();
        let first = self.y[idx[0]];
        if idx.iter().all(|&i| self.y[i] == first) {
            return None;
        }
        let msl = self.params.min_samples_leaf.max(1);
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse_parent: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if sse_parent <= 0.0 {
            return None;
        }
        let tie = 1e-12 * sse_parent;
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in candidates {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i] - mean)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (total, total_sq) = pairs
                .iter()
                .fold((0.0, 0.0), |(s, q), p| (s + p.1, q + p.1 * p.1));
            let (mut s, mut q) = (0.0, 0.0);
            for i in 0..n - 1 {
                s += pairs[i].1;
                q += pairs[i].1 * pairs[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if pairs[i].0 == pairs[i + 1].0 || nl < msl || nr < msl {
                    continue;
                }
                let sse_l = q - s * s / nl as f64;
                let sse_r = (total_sq - q) - (total - s).powi(2) / nr as f64;
                let gain = sse_parent - sse_l - sse_r;
                // gains within rounding of each other are ties
                if gain > best.as_ref().map_or(0.0, |b| b.gain + tie) {
                    best = Some(Best {
                        feature: f,
                        threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > tie)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let msl = self.params.min_samples_leaf.max(1);
        if depth >= self.params.max_depth || idx.len() < 2 * msl {
            return self.leaf(&idx);
        }
        let p = self.x[0].len();
        let mut candidates: Vec<usize> = if self.k >= p {
            (0..p).collect()
        } else {
            sample(self.rng, p, self.k).into_vec()
        };
        candidates.sort_unstable();
        let Some(best) = self.best_split(&idx, &candidates) else {
            return self.leaf(&idx);
        };
        let samples = idx.len();
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            samples,
            sse_decrease: best.gain,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }
}

/// Grows one regression tree on all rows of `(x, y)`.
///
/// Each node draws `features_per_split` candidate features from `rng` and
/// takes the split with the largest sum-of-squares reduction, thresholds at
/// midpoints of consecutive distinct values. Equal gains keep the lowest
/// feature index, then the lowest threshold.
pub fn fit_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    params: &ForestParams,
    rng: &mut R,
) -> Result<TreeNode> {
    let p = check_data(x, y)?;
    let mut builder = TreeBuilder {
        x,
        y,
        params,
        k: params.features_for(p),
        rng,
    };
    Ok(builder.grow((0..y.len()).collect(), 0))
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = seed::rng(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    fit_forest_with(x, y, params, seed, &[], Execution::default())
}

/// Fits `tree_count` trees, tree `i` drawing its bootstrap sample and
/// feature subsets from stream `i` of the seeded generator.
pub fn fit_forest_with(
    x: &[Vec<f64>],
    y: &[f64],
    params: &ForestParams,
    seed: u64,
    feature_names: &[String],
    exec: Execution,
) -> Result<Forest> {
    let p = check_data(x, y)?;
    if params.tree_count == 0 {
        return Err(Error::InvalidArgument("tree_count must be positive".into()));
    }
    let n = y.len();
    let trees = par::map_range(exec, params.tree_count, |t| {
        let mut rng = tree_rng(seed, t);
        if params.bootstrap {
            let draws: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx: Vec<Vec<f64>> = draws.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<f64> = draws.iter().map(|&i| y[i]).collect();
            fit_tree(&bx, &by, params, &mut rng)
        } else {
            fit_tree(x, y, params, &mut rng)
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let feature_names = if feature_names.len() == p {
        feature_names.to_vec()
    } else {
        (0..p).map(|j| format!("x{j}")).collect()
    };
    Ok(Forest {
        trees,
        params: *params,
        seed,
        feature_names,
    })
}

pub fn predict_forest(forest: &Forest, x: &[f64]) -> Result<f64> {
    check_len(forest.feature_names.len(), x.len())?;
    let preds: Vec<f64> = forest.trees.iter().map(|t| t.predict(x)).collect();
    let (lo, hi) = preds
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    Ok((preds.iter().sum::<f64>() / preds.len() as f64).clamp(lo, hi))
}

/// Mean decrease in impurity per feature, normalized to sum to one.
pub fn importance_values(forest: &Forest) -> Vec<f64> {
    let p = forest.feature_names.len();
    let mut total = vec![0.0; p];
    for tree in &forest.trees {
        let mut per_tree = vec![0.0; p];
        tree.credit(tree.samples().max(1) as f64, &mut per_tree);
        total.iter_mut().zip(&per_tree).for_each(|(t, v)| *t += v);
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    total
}

pub fn forest_importances(forest: &Forest) -> AttributionMap {
    AttributionMap::per_feature(
        AttributionKind::Importances,
        &forest.feature_names,
        &importance_values(forest),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn no_bag(max_depth: usize) -> ForestParams {
        ForestParams {
            tree_count: 1,
            max_depth,
            features_per_split: Some(usize::MAX),
            min_samples_leaf: 1,
            bootstrap: false,
        }
    }

    #[test]
    fn single_sample_leaf() {
        let t = fit_tree(&[vec![1.0, 2.0]], &[7.0], &no_bag(4), &mut seed::rng(0)).unwrap();
        assert_eq!(
            t,
            TreeNode::Leaf {
                prediction: 7.0,
                sample_count: 1
            }
        );
    }

    #[test]
    fn perfect_separator() {
        let x = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        let t = fit_tree(&x, &[0.0, 0.0, 10.0, 10.0], &no_bag(1), &mut seed::rng(0)).unwrap();
        match t {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!((feature, threshold), (0, 0.5));
                assert_eq!(left.predict(&[0.0]), 0.0);
                assert_eq!(right.predict(&[1.0]), 10.0);
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let t = fit_tree(&x, &[1.0, 2.0], &no_bag(3), &mut seed::rng(0)).unwrap();
        assert!(matches!(t, TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn constant_targets() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * 7 % 5) as f64])
            .collect();
        let y = vec![0.3; 20];
        let f = fit_forest(
            &x,
            &y,
            &ForestParams {
                tree_count: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        for row in &x {
            assert_eq!(predict_forest(&f, row).unwrap(), 0.3);
        }
        assert_eq!(importance_values(&f), vec![0.0, 0.0]);
        assert!(predict_forest(&f, &[1.0]).is_err());
    }

    #[test]
    fn averaging_trees() {
        let leaf = |v| TreeNode::Leaf {
            prediction: v,
            sample_count: 1,
        };
        let f = Forest {
            trees: vec![leaf(1.0), leaf(3.0)],
            params: ForestParams::default(),
            seed: 0,
            feature_names: vec!["a".into()],
        };
        assert_eq!(predict_forest(&f, &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn single_feature_importance() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 5.0, 5.0]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i / 10) as f64).collect();
        let f = fit_forest(
            &x,
            &y,
            &ForestParams {
                tree_count: 4,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        assert_eq!(importance_values(&f), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn planted_dependence() {
        let mut rng = seed::rng(42);
        let x: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                3.0 * r[0] + if r[1] > 0.5 { 2.0 } else { 0.0 } + 0.1 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let all = ForestParams {
            tree_count: 30,
            features_per_split: Some(6),
            ..Default::default()
        };
        let imp = importance_values(&fit_forest(&x, &y, &all, 3).unwrap());
        assert!(imp[0] + imp[1] >= 0.9, "{imp:?}");

        // two candidates out of six: a noise feature often wins the root
        let subset = ForestParams {
            tree_count: 30,
            ..Default::default()
        };
        let imp = importance_values(&fit_forest(&x, &y, &subset, 3).unwrap());
        assert!(imp[0] + imp[1] >= 0.8, "{imp:?}");
        assert!(imp[2..].iter().all(|v| *v < 0.06), "{imp:?}");
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let mut rng = seed::rng(8);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[2] * r[3] + r[0]).collect();
        let params = ForestParams {
            tree_count: 12,
            ..Default::default()
        };
        let a = fit_forest_with(&x, &y, &params, 5, &[], Execution::Sequential).unwrap();
        let b = fit_forest_with(&x, &y, &params, 5, &[], Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fit_forest(&x, &y, &params, 6).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn structural_invariants(seed in 0u64..1000, depth in 0usize..6, n in 1usize..40) {
            let mut rng = crate::seed::rng(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let params = ForestParams { tree_count: 6, max_depth: depth, ..Default::default() };
            let f = fit_forest_with(&x, &y, &params, seed, &[], Execution::Sequential).unwrap();
            prop_assert!(f.trees.iter().all(|t| t.depth() <= depth));
            let imp = importance_values(&f);
            let s: f64 = imp.iter().sum();
            prop_assert!(imp.iter().all(|v| *v >= 0.0));
            prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            for _ in 0..10 {
                let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..2.0)).collect();
                let p = predict_forest(&f, &probe).unwrap();
                prop_assert!(p >= lo && p <= hi);
            }
        }
    }
}
