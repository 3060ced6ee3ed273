//! Histogram-based gradient boosted regression trees.
//!
//! Splits are scored with the second-order gain under unit curvature
//! (`G_L²/n_L + G_R²/n_R − G²/n`); leaf values are refit directly from the
//! leaf residuals: their mean for squared error, their τ-quantile for the
//! pinball loss.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pinball::pinball_subgradient;
use super::Objective;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary regression tree; rows with `x[feature] <= threshold` go left.
/// Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: left },
                Node::Leaf { value: right },
            ],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub(crate) fn is_well_formed(&self) -> bool {
        let n = self.nodes.len();
        n > 0
            && self.nodes.iter().enumerate().all(|(i, node)| match node {
                Node::Leaf { value } => value.is_finite(),
                Node::Split {
                    left,
                    right,
                    threshold,
                    ..
                } => *left > i && *right > i && *left < n && *right < n && !threshold.is_nan(),
            })
    }
}

/// Additive tree model: `base + Σ tree(x)`. Leaf values already include the
/// learning-rate shrinkage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base: f64,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            subsample: 1.0,
            max_bins: 64,
            seed: 0,
        }
    }
}

/// Feature matrix quantized to at most 256 bins per column, column-major.
pub(crate) struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<u8>,
    /// Upper edge of each bin except the last; a value `x` lands in the first
    /// bin whose edge is `>= x`.
    edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    /// `features` is row-major `n_rows × n_features`.
    pub(crate) fn new(features: &[f64], n_rows: usize, n_features: usize, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, 256);
        let columns: Vec<(Vec<f64>, Vec<u8>)> = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let col: Vec<f64> = (0..n_rows).map(|i| features[i * n_features + f]).collect();
                let edges = bin_edges(&col, max_bins);
                let bins = col
                    .iter()
                    .map(|&x| edges.partition_point(|&e| e < x) as u8)
                    .collect();
                (edges, bins)
            })
            .collect();
        let mut bins = Vec::with_capacity(n_rows * n_features);
        let mut edges = Vec::with_capacity(n_features);
        for (e, b) in columns {
            edges.push(e);
            bins.extend(b);
        }
        BinnedMatrix {
            n_rows,
            bins,
            edges,
        }
    }

    fn n_features(&self) -> usize {
        self.edges.len()
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }

    #[inline]
    fn bin(&self, f: usize, row: usize) -> u8 {
        self.bins[f * self.n_rows + row]
    }
}

fn bin_edges(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq = sorted.clone();
    uniq.dedup();
    if uniq.len() <= max_bins {
        return uniq
            .windows(2)
            .map(|w| w[0] + (w[1] - w[0]) / 2.0)
            .collect();
    }
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..max_bins).map(|k| sorted[k * n / max_bins]).collect();
    edges.dedup();
    // the top edge must leave something above it
    if edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}

#[derive(Clone, Copy, Default)]
struct BinStat {
    grad: f64,
    count: u32,
}

type Histogram = Vec<Vec<BinStat>>;

struct SplitChoice {
    feature: usize,
    bin: u8,
    gain: f64,
}

struct Grower<'a> {
    data: &'a BinnedMatrix,
    grad: &'a [f64],
    residual: &'a [f64],
    objective: Objective,
    params: &'a TreeParams,
    /// Nodes with split thresholds still expressed as bin indices.
    nodes: Vec<(Node, Option<(usize, u8)>)>,
}

impl Grower<'_> {
    fn histogram(&self, rows: &[u32]) -> Histogram {
        (0..self.data.n_features())
            .into_par_iter()
            .map(|f| {
                let mut h = vec![BinStat::default(); self.data.n_bins(f)];
                for &r in rows {
                    let s = &mut h[self.data.bin(f, r as usize) as usize];
                    s.grad += self.grad[r as usize];
                    s.count += 1;
                }
                h
            })
            .collect()
    }

    fn best_split(&self, hist: &Histogram, total_grad: f64, n: usize) -> Option<SplitChoice> {
        let min_leaf = self.params.min_samples_leaf.max(1) as u32;
        let parent = total_grad * total_grad / n as f64;
        let per_feature: Vec<Option<SplitChoice>> = hist
            .par_iter()
            .enumerate()
            .map(|(f, h)| {
                let mut best: Option<SplitChoice> = None;
                let (mut gl, mut nl) = (0.0, 0u32);
                for (b, s) in h.iter().enumerate().take(h.len() - 1) {
                    gl += s.grad;
                    nl += s.count;
                    let nr = n as u32 - nl;
                    if nl < min_leaf {
                        continue;
                    }
                    if nr < min_leaf {
                        break;
                    }
                    let gr = total_grad - gl;
                    let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                    if best.as_ref().is_none_or(|c| gain > c.gain) {
                        best = Some(SplitChoice {
                            feature: f,
                            bin: b as u8,
                            gain,
                        });
                    }
                }
                best
            })
            .collect();
        let tol = 1e-10 * parent.abs().max(1e-12);
        per_feature
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<SplitChoice>, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            })
            .filter(|c| c.gain > tol)
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let mut r: Vec<f64> = rows.iter().map(|&i| self.residual[i as usize]).collect();
        let raw = match self.objective {
            Objective::SquaredError => r.iter().sum::<f64>() / r.len() as f64,
            Objective::Quantile { tau } => order_statistic_quantile(&mut r, tau),
        };
        raw * self.params.learning_rate
    }

    fn grow(&mut self, rows: Vec<u32>, hist: Histogram, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push((Node::Leaf { value: 0.0 }, None));

        let n = rows.len();
        let can_split =
            depth < self.params.max_depth && n >= 2 * self.params.min_samples_leaf.max(1);
        let total_grad: f64 = hist
            .first()
            .map(|h| h.iter().map(|s| s.grad).sum())
            .unwrap_or(0.0);
        let choice = if can_split {
            self.best_split(&hist, total_grad, n)
        } else {
            None
        };

        let Some(choice) = choice else {
            self.nodes[id].0 = Node::Leaf {
                value: self.leaf_value(&rows),
            };
            return id;
        };

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| self.data.bin(choice.feature, r as usize) <= choice.bin);
        drop(rows);
        let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
            let small = self.histogram(&left_rows);
            let large = subtract(&hist, &small);
            (small, large)
        } else {
            let small = self.histogram(&right_rows);
            let large = subtract(&hist, &small);
            (large, small)
        };
        drop(hist);

        let left = self.grow(left_rows, left_hist, depth + 1);
        let right = self.grow(right_rows, right_hist, depth + 1);
        let threshold = self.data.edges[choice.feature][choice.bin as usize];
        self.nodes[id] = (
            Node::Split {
                feature: choice.feature,
                threshold,
                left,
                right,
            },
            Some((choice.feature, choice.bin)),
        );
        id
    }

    fn finish(self) -> (Tree, Vec<Option<(usize, u8)>>) {
        let (nodes, bins): (Vec<Node>, Vec<Option<(usize, u8)>>) = self.nodes.into_iter().unzip();
        (Tree { nodes }, bins)
    }
}

fn subtract(parent: &Histogram, child: &Histogram) -> Histogram {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| {
            p.iter()
                .zip(c)
                .map(|(a, b)| BinStat {
                    grad: a.grad - b.grad,
                    count: a.count - b.count,
                })
                .collect()
        })
        .collect()
}

/// Route a training row through a tree using bin indices, so the training
/// path and the raw-threshold path agree exactly.
fn binned_predict(
    tree: &Tree,
    bins: &[Option<(usize, u8)>],
    data: &BinnedMatrix,
    row: usize,
) -> f64 {
    let mut idx = 0;
    loop {
        match &tree.nodes[idx] {
            Node::Leaf { value } => return *value,
            Node::Split { left, right, .. } => {
                let (f, b) = bins[idx].expect("split nodes carry a bin");
                idx = if data.bin(f, row) <= b { *left } else { *right };
            }
        }
    }
}

/// The pinball-loss minimizer over a sample: the order statistic at rank
/// `⌈τ n⌉` (1-based).
pub(crate) fn order_statistic_quantile(values: &mut [f64], tau: f64) -> f64 {
    let n = values.len();
    let k = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Fit one boosted ensemble to a single target column.
pub(crate) fn fit_ensemble(
    data: &BinnedMatrix,
    y: &[f64],
    objective: Objective,
    params: &TreeParams,
    stream: u64,
) -> TreeEnsemble {
    let n = y.len();
    let base = match objective {
        Objective::SquaredError => y.iter().sum::<f64>() / n as f64,
        Objective::Quantile { tau } => order_statistic_quantile(&mut y.to_vec(), tau),
    };
    let mut pred = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    let n_sub = ((params.subsample * n as f64).floor() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
            grad[i] = match objective {
                Objective::SquaredError => -residual[i],
                Objective::Quantile { tau } => pinball_subgradient(y[i], pred[i], tau),
            };
        }
        let rows: Vec<u32> = if n_sub < n {
            let mut idx: Vec<u32> = sample(&mut rng, n, n_sub)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            idx.sort_unstable();
            idx
        } else {
            (0..n as u32).collect()
        };

        let mut grower = Grower {
            data,
            grad: &grad,
            residual: &residual,
            objective,
            params,
            nodes: Vec::new(),
        };
        let hist = grower.histogram(&rows);
        grower.grow(rows, hist, 0);
        let (tree, bins) = grower.finish();

        pred.par_iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p += binned_predict(&tree, &bins, data, i));
        trees.push(tree);
    }
    TreeEnsemble { base, trees }
}
