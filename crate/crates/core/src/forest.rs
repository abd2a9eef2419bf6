//! Totally randomized tree ensembles used as frozen kernel smoothers.
//!
//! A tree is grown by picking, at every node, a feature uniformly among the
//! features that are not constant over the node's points, then a threshold
//! uniformly in the open interval between that feature's min and max. Nodes
//! with fewer than `n_min` points, or whose points are all identical, become
//! leaves. The partition is computed once and never refitted: only the
//! outputs attached to the training inputs change between iterations.
//!
//! For a query `i` the ensemble kernel weight of training input `l` is
//!
//! ```text
//! w_l(i) = (1/e) * sum_k [l in leaf_k(i)] / |leaf_k(i)|
//! ```
//!
//! so weights are non-negative and sum to one, and a regression prediction is
//! a convex combination of the training outputs.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::seeding::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees `e`.
    pub trees: usize,
    /// Nodes holding fewer points than this are not split.
    pub n_min: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 5, n_min: 10 }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::config("ensemble needs at least one tree"));
        }
        if self.n_min == 0 {
            return Err(Error::config("n_min must be at least 1"));
        }
        Ok(())
    }
}

/// Nested tree description, used for JSON export and for hand-built trees.
/// A point goes left when `value <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        members: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        members: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, query: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if query[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    fn members(&self, leaf: usize) -> &[usize] {
        match &self.nodes[leaf] {
            Node::Leaf { members } => members,
            Node::Split { .. } => unreachable!("route always ends in a leaf"),
        }
    }

    fn grow<R: Rng>(inputs: &[FeatureVector], n_min: usize, rng: &mut R) -> Tree {
        let dim = inputs[0].len();
        let mut nodes = vec![Node::Leaf { members: Vec::new() }];
        let mut pending = vec![(0usize, (0..inputs.len()).collect::<Vec<_>>())];
        while let Some((slot, points)) = pending.pop() {
            let split = if points.len() < n_min {
                None
            } else {
                let ranges: Vec<(usize, f64, f64)> = (0..dim)
                    .filter_map(|f| {
                        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                            (lo.min(inputs[p][f]), hi.max(inputs[p][f]))
                        });
                        (lo < hi).then_some((f, lo, hi))
                    })
                    .collect();
                (!ranges.is_empty()).then(|| ranges[rng.gen_range(0..ranges.len())])
            };
            match split {
                None => nodes[slot] = Node::Leaf { members: points },
                Some((feature, lo, hi)) => {
                    let threshold = loop {
                        let t = rng.gen_range(lo..hi);
                        if t > lo {
                            break t;
                        }
                    };
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        points.iter().partition(|&&p| inputs[p][feature] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    };
                    pending.push((left + 1, r));
                    pending.push((left, l));
                }
            }
        }
        Tree { nodes }
    }

    fn to_nested(&self, at: usize) -> TreeNode {
        match &self.nodes[at] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(self.to_nested(*left)),
                right: Box::new(self.to_nested(*right)),
            },
            Node::Leaf { members } => TreeNode::Leaf {
                members: members.clone(),
            },
        }
    }

    /// Rebuilds the arena in the same layout `grow` produces: both children
    /// are allocated when a split is expanded, then the left subtree is
    /// filled before the right one.
    fn from_nested(root: &TreeNode, dim: usize, n_inputs: usize) -> Result<Tree> {
        fn fill(node: &TreeNode, slot: usize, dim: usize, n_inputs: usize, nodes: &mut Vec<Node>) -> Result<()> {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= dim {
                        return Err(Error::parse(format!("split feature {feature} >= dimension {dim}")));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::parse("split threshold must be finite"));
                    }
                    let l = nodes.len();
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes.push(Node::Leaf { members: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: l + 1,
                    };
                    fill(left, l, dim, n_inputs, nodes)?;
                    fill(right, l + 1, dim, n_inputs, nodes)?;
                }
                TreeNode::Leaf { members } => {
                    if members.is_empty() {
                        return Err(Error::parse("empty leaf"));
                    }
                    if let Some(&bad) = members.iter().find(|&&m| m >= n_inputs) {
                        return Err(Error::parse(format!("leaf member {bad} >= input count {n_inputs}")));
                    }
                    nodes[slot] = Node::Leaf {
                        members: members.clone(),
                    };
                }
            }
            Ok(())
        }
        let mut nodes = vec![Node::Leaf { members: Vec::new() }];
        fill(root, 0, dim, n_inputs, &mut nodes)?;
        Ok(Tree { nodes })
    }

    /// Leaf node of every training input; fails unless the leaves partition
    /// `0..n_inputs`.
    fn input_leaves(&self, n_inputs: usize) -> Result<Vec<usize>> {
        let held: usize = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { members } => members.len(),
                Node::Split { .. } => 0,
            })
            .sum();
        if held != n_inputs {
            return Err(Error::parse(format!("leaves hold {held} inputs, expected {n_inputs}")));
        }
        let mut out = vec![usize::MAX; n_inputs];
        for (at, node) in self.nodes.iter().enumerate() {
            if let Node::Leaf { members } = node {
                for &m in members {
                    if out[m] != usize::MAX {
                        return Err(Error::parse(format!("input {m} appears in two leaves")));
                    }
                    out[m] = at;
                }
            }
        }
        if let Some(missing) = out.iter().position(|&v| v == usize::MAX) {
            return Err(Error::parse(format!("input {missing} is in no leaf")));
        }
        Ok(out)
    }
}

/// Leaf reached by a query in each tree of an ensemble.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Route(Vec<usize>);

/// Per-leaf averages of a set of outputs; turns a [`Route`] into a prediction
/// with `e` lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafMeans {
    means: Vec<Vec<f64>>,
}

impl LeafMeans {
    pub fn predict(&self, route: &Route) -> f64 {
        let total: f64 = self
            .means
            .iter()
            .zip(&route.0)
            .map(|(tree, &leaf)| tree[leaf])
            .sum();
        total / self.means.len() as f64
    }
}

/// Normalized kernel weights of every training input for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelWeights(pub Vec<f64>);

impl KernelWeights {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, outputs: &[f64]) -> f64 {
        self.0.iter().zip(outputs).map(|(w, o)| w * o).sum()
    }
}

/// Summary of one node, for structural checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeSummary {
    pub leaf: bool,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRepr", into = "EnsembleRepr")]
pub struct TreeEnsemble {
    dim: usize,
    n_inputs: usize,
    seed: u64,
    trees: Vec<Tree>,
    /// `input_leaves[k][l]`: leaf of training input `l` in tree `k`.
    input_leaves: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRepr {
    dim: usize,
    n_inputs: usize,
    seed: u64,
    trees: Vec<TreeNode>,
}

impl From<TreeEnsemble> for EnsembleRepr {
    fn from(e: TreeEnsemble) -> Self {
        EnsembleRepr {
            dim: e.dim,
            n_inputs: e.n_inputs,
            seed: e.seed,
            trees: e.trees.iter().map(|t| t.to_nested(0)).collect(),
        }
    }
}

impl TryFrom<EnsembleRepr> for TreeEnsemble {
    type Error = Error;

    fn try_from(r: EnsembleRepr) -> Result<Self> {
        let mut e = TreeEnsemble::from_trees(r.dim, r.n_inputs, &r.trees)?;
        e.seed = r.seed;
        Ok(e)
    }
}

impl TreeEnsemble {
    /// Grows `params.trees` totally randomized trees over `inputs`. Tree `k`
    /// draws from its own stream derived from one seed taken from `rng`.
    pub fn build<R: Rng + ?Sized>(inputs: &[FeatureVector], params: ForestParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let Some(first) = inputs.first() else {
            return Err(Error::config("cannot build an ensemble on an empty input set"));
        };
        let dim = first.len();
        for v in inputs {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("feature values must be finite"));
            }
        }
        let seed: u64 = rng.gen();
        let trees: Vec<Tree> = (0..params.trees)
            .map(|k| Tree::grow(inputs, params.n_min, &mut stream_rng(seed, k as u64)))
            .collect();
        let input_leaves = trees
            .iter()
            .map(|t| t.input_leaves(inputs.len()))
            .collect::<Result<_>>()?;
        Ok(TreeEnsemble {
            dim,
            n_inputs: inputs.len(),
            seed,
            trees,
            input_leaves,
        })
    }

    /// Assembles an ensemble from explicit trees over `n_inputs` training inputs.
    pub fn from_trees(dim: usize, n_inputs: usize, trees: &[TreeNode]) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::parse("ensemble has no trees"));
        }
        if n_inputs == 0 {
            return Err(Error::parse("ensemble has no training inputs"));
        }
        let trees: Vec<Tree> = trees
            .iter()
            .map(|t| Tree::from_nested(t, dim, n_inputs))
            .collect::<Result<_>>()?;
        let input_leaves = trees
            .iter()
            .map(|t| t.input_leaves(n_inputs))
            .collect::<Result<_>>()?;
        Ok(TreeEnsemble {
            dim,
            n_inputs,
            seed: 0,
            trees,
            input_leaves,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of training inputs `L`.
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_nested(&self) -> Vec<TreeNode> {
        self.trees.iter().map(|t| t.to_nested(0)).collect()
    }

    pub fn nodes_summary(&self) -> Vec<Vec<NodeSummary>> {
        self.trees
            .iter()
            .map(|t| {
                let mut sizes = vec![0usize; t.nodes.len()];
                for at in (0..t.nodes.len()).rev() {
                    sizes[at] = match &t.nodes[at] {
                        Node::Leaf { members } => members.len(),
                        Node::Split { left, right, .. } => sizes[*left] + sizes[*right],
                    };
                }
                t.nodes
                    .iter()
                    .zip(sizes)
                    .map(|(n, size)| NodeSummary {
                        leaf: matches!(n, Node::Leaf { .. }),
                        size,
                    })
                    .collect()
            })
            .collect()
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    fn check_outputs(&self, outputs: &[f64]) -> Result<()> {
        if outputs.len() != self.n_inputs {
            return Err(Error::Dimension {
                expected: self.n_inputs,
                got: outputs.len(),
            });
        }
        Ok(())
    }

    pub fn route(&self, query: &[f64]) -> Result<Route> {
        self.check_query(query)?;
        Ok(Route(self.trees.iter().map(|t| t.leaf_of(query)).collect()))
    }

    /// Route of training input `l`, read from the stored partition.
    pub fn training_route(&self, l: usize) -> Route {
        Route(self.input_leaves.iter().map(|leaves| leaves[l]).collect())
    }

    pub fn kernel_weights(&self, query: &[f64]) -> Result<KernelWeights> {
        let route = self.route(query)?;
        Ok(self.route_weights(&route))
    }

    pub fn route_weights(&self, route: &Route) -> KernelWeights {
        let mut w = vec![0.0; self.n_inputs];
        let e = self.trees.len() as f64;
        for (tree, &leaf) in self.trees.iter().zip(&route.0) {
            let members = tree.members(leaf);
            let share = 1.0 / (e * members.len() as f64);
            for &m in members {
                w[m] += share;
            }
        }
        KernelWeights(w)
    }

    pub fn leaf_means(&self, outputs: &[f64]) -> Result<LeafMeans> {
        self.check_outputs(outputs)?;
        let means = self
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match n {
                        Node::Leaf { members } => {
                            members.iter().map(|&m| outputs[m]).sum::<f64>() / members.len() as f64
                        }
                        Node::Split { .. } => 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(LeafMeans { means })
    }

    /// `sum_l w_l(query) * outputs[l]`.
    pub fn predict_regression(&self, outputs: &[f64], query: &[f64]) -> Result<f64> {
        let route = self.route(query)?;
        Ok(self.leaf_means(outputs)?.predict(&route))
    }

    /// Kernel-sum image of `outputs` at every training input.
    pub fn smooth(&self, outputs: &[f64]) -> Result<Vec<f64>> {
        let means = self.leaf_means(outputs)?;
        Ok((0..self.n_inputs)
            .map(|l| means.predict(&self.training_route(l)))
            .collect())
    }

    /// Label carrying the largest kernel mass at `query`; ties go to the
    /// smallest label.
    pub fn classify(&self, labels: &[usize], query: &[f64]) -> Result<usize> {
        self.check_outputs_len(labels.len())?;
        let weights = self.kernel_weights(query)?;
        let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
        for (&label, &w) in labels.iter().zip(&weights.0) {
            if w > 0.0 {
                *mass.entry(label).or_insert(0.0) += w;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (label, m) in mass {
            match best {
                Some((_, b)) if m <= b + 1e-12 => {}
                _ => best = Some((label, m)),
            }
        }
        Ok(best.expect("weights sum to one").0)
    }

    fn check_outputs_len(&self, len: usize) -> Result<()> {
        if len != self.n_inputs {
            return Err(Error::Dimension {
                expected: self.n_inputs,
                got: len,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
