//! Greedy CART regression tree.
//!
//! Splits minimize the summed child SSE over midpoints of consecutive
//! distinct sorted values, with deterministic tie-breaking (lowest feature
//! index, then lowest threshold), so identically seeded fits reproduce the
//! same tree on any platform.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ml::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Route a row to its leaf: left when x[feature] <= threshold.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { prediction } => return *prediction,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    /// Features considered per split; `None` means all features.
    pub mtry: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means unlimited depth.
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            mtry: None,
            min_samples_leaf: 5,
            max_depth: None,
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    prefix_sse: f64,
}

/// Near-ties under the fast prefix-sum formula are re-resolved with the
/// exact two-pass SSE; candidates within this relative band of the best go
/// to the exact pass.
const SSE_TIE_BAND: f64 = 1e-9;

/// Fit a CART tree on the rows `sample` of `x`/`y`. The rng drives the
/// per-node feature subsampling; bootstrap sampling is the caller's job.
pub fn fit_tree(
    x: &Matrix,
    y: &[f64],
    sample: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree> {
    if sample.is_empty() || x.n_rows() != y.len() {
        return Err(Error::Model(format!(
            "tree fit needs non-empty aligned data, got {} rows, {} labels, {} sampled",
            x.n_rows(),
            y.len(),
            sample.len()
        )));
    }
    if x.n_cols() == 0 {
        return Err(Error::Model("tree fit needs at least one feature".into()));
    }
    for &r in sample {
        if !y[r].is_finite() || x.row(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite value in training row {r}")));
        }
    }
    let mut builder = Builder {
        x,
        y,
        params: *params,
        nodes: Vec::new(),
    };
    let mut indices = sample.to_vec();
    builder.grow(&mut indices, 0, rng);
    Ok(Tree {
        nodes: builder.nodes,
    })
}

impl Builder<'_> {
    /// Grow the subtree over `indices`, returning its node id.
    fn grow(&mut self, indices: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at_depth_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        let too_small = indices.len() < 2 * self.params.min_samples_leaf.max(1);
        let split = if at_depth_limit || too_small {
            None
        } else {
            self.best_split(indices, rng)
        };
        match split {
            None => {
                let prediction =
                    indices.iter().map(|&r| self.y[r]).sum::<f64>() / indices.len() as f64;
                self.nodes.push(Node::Leaf { prediction });
                self.nodes.len() - 1
            }
            Some(best) => {
                // partition preserving relative order on both sides, so the
                // tree is independent of how callers ordered the sample
                let (mut left, mut right): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .copied()
                    .partition(|&r| self.x.at(r, best.feature) <= best.threshold);
                debug_assert!(!left.is_empty() && !right.is_empty());
                let id = self.nodes.len();
                self.nodes.push(Node::Leaf { prediction: 0.0 }); // placeholder
                let left_id = self.grow(&mut left, depth + 1, rng);
                let right_id = self.grow(&mut right, depth + 1, rng);
                self.nodes[id] = Node::Internal {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: left_id,
                    right: right_id,
                };
                id
            }
        }
    }

    /// The SSE-minimizing (feature, threshold) over an mtry feature draw, or
    /// `None` when no candidate strictly reduces the node SSE. Candidate
    /// order never affects the result: features are scanned in ascending
    /// index order and exact ties keep the earliest candidate, which
    /// implements the lowest-feature / lowest-threshold tie-break.
    fn best_split(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x.n_cols();
        let mtry = self.params.mtry.unwrap_or(p).clamp(1, p);
        let mut features = draw_without_replacement(p, mtry, rng);
        features.sort_unstable();

        let m = indices.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let parent_sse = {
            let mean: f64 = indices.iter().map(|&r| self.y[r]).sum::<f64>() / m as f64;
            indices.iter().map(|&r| (self.y[r] - mean).powi(2)).sum::<f64>()
        };
        let tie_band = parent_sse * SSE_TIE_BAND + f64::MIN_POSITIVE;

        let mut best_prefix = f64::INFINITY;
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for feature in features {
            pairs.clear();
            pairs.extend(indices.iter().map(|&r| (self.x.at(r, feature), self.y[r])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_sum = 0.0;
            let mut left_sum2 = 0.0;
            let total_sum: f64 = pairs.iter().map(|&(_, v)| v).sum();
            let total_sum2: f64 = pairs.iter().map(|&(_, v)| v * v).sum();
            for k in 1..m {
                let (value, label) = pairs[k - 1];
                left_sum += label;
                left_sum2 += label * label;
                if pairs[k].0 == value {
                    continue; // threshold must separate distinct values
                }
                if k < min_leaf || m - k < min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sum2 = total_sum2 - left_sum2;
                let sse = (left_sum2 - left_sum * left_sum / k as f64)
                    + (right_sum2 - right_sum * right_sum / (m - k) as f64);
                if sse <= best_prefix + tie_band {
                    if sse < best_prefix {
                        best_prefix = sse;
                        candidates.retain(|c| c.prefix_sse <= best_prefix + tie_band);
                    }
                    if candidates.len() < 64 {
                        // midpoint, nudged down to the left value if
                        // rounding lands on the right one (adjacent floats)
                        let mid = 0.5 * (value + pairs[k].0);
                        let threshold = if mid < pairs[k].0 { mid } else { value };
                        candidates.push(Candidate {
                            feature,
                            threshold,
                            prefix_sse: sse,
                        });
                    }
                }
            }
        }
        candidates.retain(|c| c.prefix_sse <= best_prefix + tie_band);

        // near-ties resolve by the exact two-pass SSE; earliest wins exact ties
        let mut best: Option<(f64, &Candidate)> = None;
        for candidate in &candidates {
            let exact = self.exact_split_sse(indices, candidate);
            if best.as_ref().is_none_or(|&(b, _)| exact < b) {
                best = Some((exact, candidate));
            }
        }
        let (exact_sse, winner) = best?;
        if exact_sse >= parent_sse {
            return None;
        }
        Some(BestSplit {
            feature: winner.feature,
            threshold: winner.threshold,
        })
    }

    /// Two-pass child SSE (means first, then squared deviations), summed in
    /// feature-sorted order.
    fn exact_split_sse(&self, indices: &[usize], candidate: &Candidate) -> f64 {
        let mut pairs: Vec<(f64, f64)> = indices
            .iter()
            .map(|&r| (self.x.at(r, candidate.feature), self.y[r]))
            .collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let k = pairs.partition_point(|&(v, _)| v <= candidate.threshold);
        let sse_of = |slice: &[(f64, f64)]| {
            let mean = slice.iter().map(|&(_, v)| v).sum::<f64>() / slice.len() as f64;
            slice.iter().map(|&(_, v)| (v - mean).powi(2)).sum::<f64>()
        };
        sse_of(&pairs[..k]) + sse_of(&pairs[k..])
    }
}

/// `k` distinct values from `0..n` drawn from the rng.
fn draw_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_rows(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    fn fit(x: &Matrix, y: &[f64], params: &TreeParams) -> Tree {
        let mut rng = crate::rng::rng(1);
        let n = x.n_rows();
        fit_tree(x, y, &all_rows(n), params, &mut rng).unwrap()
    }

    /// Exhaustive reference: every feature, every split position, child SSE
    /// computed by direct two-pass loops.
    fn exhaustive_tree(x: &Matrix, y: &[f64], rows: &[usize], depth_left: usize, min_leaf: usize) -> Tree {
        fn sse_of(y: &[f64], rows: &[usize]) -> f64 {
            let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
        }
        fn grow(
            x: &Matrix,
            y: &[f64],
            rows: &[usize],
            depth_left: usize,
            min_leaf: usize,
            nodes: &mut Vec<Node>,
        ) -> usize {
            let leaf = |nodes: &mut Vec<Node>| {
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
                nodes.push(Node::Leaf { prediction: mean });
                nodes.len() - 1
            };
            if depth_left == 0 || rows.len() < 2 * min_leaf {
                return leaf(nodes);
            }
            let parent = sse_of(y, rows);
            let mut best: Option<(usize, f64, f64)> = None;
            for feature in 0..x.n_cols() {
                let mut sorted = rows.to_vec();
                sorted.sort_by(|&a, &b| x.at(a, feature).total_cmp(&x.at(b, feature)));
                for k in min_leaf..=(sorted.len() - min_leaf) {
                    let lo = x.at(sorted[k - 1], feature);
                    let hi = x.at(sorted[k], feature);
                    if lo == hi {
                        continue;
                    }
                    let sse = sse_of(y, &sorted[..k]) + sse_of(y, &sorted[k..]);
                    let better = match best {
                        None => sse < parent,
                        Some((_, _, b)) => sse < b,
                    };
                    if better {
                        best = Some((feature, 0.5 * (lo + hi), sse));
                    }
                }
            }
            match best {
                None => leaf(nodes),
                Some((feature, threshold, _)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .copied()
                        .partition(|&row| x.at(row, feature) <= threshold);
                    let id = nodes.len();
                    nodes.push(Node::Leaf { prediction: 0.0 });
                    let left = grow(x, y, &l, depth_left - 1, min_leaf, nodes);
                    let right = grow(x, y, &r, depth_left - 1, min_leaf, nodes);
                    nodes[id] = Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    id
                }
            }
        }
        let mut nodes = Vec::new();
        grow(x, y, rows, depth_left, min_leaf, &mut nodes);
        Tree { nodes }
    }

    fn trees_equal(a: &Tree, b: &Tree, ai: usize, bi: usize) -> bool {
        match (&a.nodes[ai], &b.nodes[bi]) {
            (Node::Leaf { prediction: pa }, Node::Leaf { prediction: pb }) => {
                (pa - pb).abs() <= 1e-9 * pa.abs().max(pb.abs()).max(1.0)
            }
            (
                Node::Internal {
                    feature: fa,
                    threshold: ta,
                    left: la,
                    right: ra,
                },
                Node::Internal {
                    feature: fb,
                    threshold: tb,
                    left: lb,
                    right: rb,
                },
            ) => {
                fa == fb
                    && (ta - tb).abs() <= 1e-12 * ta.abs().max(1.0)
                    && trees_equal(a, b, *la, *lb)
                    && trees_equal(a, b, *ra, *rb)
            }
            _ => false,
        }
    }

    #[test]
    fn constant_labels_single_leaf() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = vec![7.0, 7.0, 7.0];
        let tree = fit(&x, &y, &TreeParams { min_samples_leaf: 1, ..Default::default() });
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[9.9]), 7.0);
    }

    #[test]
    fn step_function_splits_at_midpoint() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let y = vec![0.0, 0.0, 10.0, 10.0];
        let tree = fit(
            &x,
            &y,
            &TreeParams {
                min_samples_leaf: 1,
                max_depth: Some(1),
                ..Default::default()
            },
        );
        match &tree.nodes[0] {
            Node::Internal { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
            }
            other => panic!("expected a root split, got {other:?}"),
        }
        assert_eq!(tree.predict_row(&[1.5]), 0.0);
        assert_eq!(tree.predict_row(&[3.5]), 10.0);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_data() {
        use rand::Rng;
        for seed in 0..20 {
            let mut rng = crate::rng::rng(seed);
            let rows: Vec<Vec<f64>> = (0..50)
                .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let y: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let params = TreeParams {
                mtry: None,
                min_samples_leaf: 1,
                max_depth: Some(2),
            };
            let got = fit(&x, &y, &params);
            let want = exhaustive_tree(&x, &y, &all_rows(50), 2, 1);
            assert!(trees_equal(&got, &want, 0, 0), "seed {seed}");
        }
    }

    #[test]
    fn every_training_row_reaches_exactly_one_leaf() {
        use rand::Rng;
        let mut rng = crate::rng::rng(77);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let tree = fit(&x, &y, &TreeParams::default());
        for r in 0..80 {
            // predict_row walks to exactly one leaf by construction; verify
            // the routing invariant explicitly
            let mut at = 0;
            let mut steps = 0;
            loop {
                match &tree.nodes[at] {
                    Node::Leaf { .. } => break,
                    Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        at = if x.at(r, *feature) <= *threshold { *left } else { *right };
                    }
                }
                steps += 1;
                assert!(steps <= tree.nodes.len(), "routing loop");
            }
        }
    }

    #[test]
    fn empty_sample_is_an_error() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let mut rng = crate::rng::rng(1);
        assert!(fit_tree(&x, &[1.0], &[], &TreeParams::default(), &mut rng).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let x = Matrix::from_rows(&[vec![1.0], vec![f64::NAN]]).unwrap();
        let mut rng = crate::rng::rng(1);
        assert!(fit_tree(&x, &[1.0, 2.0], &[0, 1], &TreeParams::default(), &mut rng).is_err());
    }
}
