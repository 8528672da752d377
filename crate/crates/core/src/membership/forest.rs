//! Random forest of axis-aligned CART trees for binary targets.
//!
//! Splits have the form `x[feature] <= threshold` with the threshold taken
//! from the training values, so a strictly increasing transform of a feature
//! (applied to training and query rows alike) leaves every prediction unchanged.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(bool),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, row: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(class) => return class,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 100, max_depth: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    params: ForestParams,
    n_features: usize,
    trees: Vec<DecisionTree>,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

/// Majority class; ties go to `false`.
fn majority(pos: usize, total: usize) -> bool {
    2 * pos > total
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    mtry: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut crate::Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(pos, idx.len())));
        if depth >= self.max_depth || pos == 0 || pos == idx.len() {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(idx, pos, rng) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let left = self.build(&l, depth + 1, rng);
        let right = self.build(&r, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }

    fn best_split(&self, idx: &[usize], pos: usize, rng: &mut crate::Rng) -> Option<(usize, f64)> {
        let f = self.rows[0].len();
        let n = idx.len();
        let parent = gini(pos, n);
        let mut features = sample(rng, f, self.mtry.min(f)).into_vec();
        features.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for feature in features {
            order.sort_by(|&a, &b| self.rows[a][feature].total_cmp(&self.rows[b][feature]));
            let mut left_pos = 0;
            for k in 0..n - 1 {
                if self.labels[order[k]] {
                    left_pos += 1;
                }
                let v = self.rows[order[k]][feature];
                if v == self.rows[order[k + 1]][feature] {
                    continue;
                }
                let nl = k + 1;
                let impurity = (nl as f64 * gini(left_pos, nl) + (n - nl) as f64 * gini(pos - left_pos, n - nl)) / n as f64;
                let gain = parent - impurity;
                if gain > MIN_GAIN && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, feature, v));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

impl RandomForest {
    /// Fits `params.trees` trees, each on a bootstrap sample with
    /// `ceil(sqrt(f))` candidate features per split.
    pub fn fit(rows: &[Vec<f64>], labels: &[bool], params: ForestParams) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(invalid("forest needs a non-empty feature matrix with one label per row"));
        }
        let f = rows[0].len();
        if f == 0 || rows.iter().any(|r| r.len() != f) {
            return Err(invalid("every row must have the same, non-zero number of features"));
        }
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            return Err(invalid("attack training data must contain both classes"));
        }
        if params.trees == 0 {
            return Err(invalid("forest needs at least one tree"));
        }
        let mtry = (f as f64).sqrt().ceil() as usize;
        let m = rows.len();
        let trees = crate::par::map_range(params.trees, |t| {
            let mut rng = crate::rng(crate::sub_seed(params.seed, t as u64));
            let boot: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            let mut b = Builder { rows, labels, mtry, max_depth: params.max_depth, nodes: Vec::new() };
            b.build(&boot, 0, &mut rng);
            DecisionTree { nodes: b.nodes }
        });
        Ok(RandomForest { params, n_features: f, trees })
    }

    pub fn params(&self) -> ForestParams {
        self.params
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn votes(&self, row: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.predict(row)).count()
    }

    /// Majority vote; ties go to `false`.
    pub fn predict(&self, row: &[f64]) -> Result<bool> {
        crate::error::check_dim(self.n_features, row.len())?;
        Ok(majority(self.votes(row), self.trees.len()))
    }
}
