//! Additive tree ensembles over binary features.
//!
//! The ensemble outputs log-odds `base_score + Σ leaf weights`; the decision
//! is positive when the log-odds reach the threshold (inclusive). Splits send
//! feature value 0 to `false_child` and 1 to `true_child`.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::PartialInstance;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        false_child: usize,
        true_child: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

/// The literals tested along one root-to-leaf path and the leaf reached.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConjunction {
    /// `(feature, value)` pairs sorted by feature.
    pub literals: Vec<(usize, bool)>,
    pub leaf_weight: f64,
}

impl PathConjunction {
    #[inline]
    pub fn consistent_with(&self, z: &PartialInstance) -> bool {
        self.literals
            .iter()
            .all(|&(f, v)| z.get(f).is_none_or(|zv| zv == v))
    }

    #[inline]
    pub fn satisfied_by(&self, x: &[bool]) -> bool {
        self.literals.iter().all(|&(f, v)| x[f] == v)
    }

    /// The path's literals as evidence over `n` features.
    pub fn to_instance(&self, n: usize) -> PartialInstance {
        let mut out = PartialInstance::empty(n);
        for &(f, v) in &self.literals {
            out.set(f, v);
        }
        out
    }
}

impl Tree {
    pub fn new(nodes: Vec<TreeNode>, root: usize) -> Self {
        Self { nodes, root }
    }

    /// Single-leaf tree.
    pub fn constant(weight: f64) -> Self {
        Self::new(vec![TreeNode::Leaf { weight }], 0)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Leaf weight reached by a complete assignment.
    pub fn predict(&self, x: &[bool]) -> f64 {
        let mut i = self.root;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    false_child,
                    true_child,
                } => i = if x[feature] { true_child } else { false_child },
            }
        }
    }

    /// Enumerates root-to-leaf paths, checking ranges, cycles, and repeated
    /// features on a path.
    fn paths(&self, tree_idx: usize, n: usize) -> Result<Vec<PathConjunction>> {
        let bad = |node: usize, reason: String| Error::InvalidTree {
            tree: tree_idx,
            node,
            reason,
        };
        if self.root >= self.nodes.len() {
            return Err(bad(self.root, "root id out of range".into()));
        }
        // depth-first, false branch first
        let mut out = Vec::new();
        let mut stack = vec![(self.root, Vec::<(usize, bool)>::new())];
        while let Some((i, lits)) = stack.pop() {
            if lits.len() > self.nodes.len() {
                return Err(bad(i, "cycle in tree".into()));
            }
            match self.nodes[i] {
                TreeNode::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(bad(i, format!("leaf weight {weight} is not finite")));
                    }
                    let mut literals = lits;
                    literals.sort_unstable();
                    out.push(PathConjunction {
                        literals,
                        leaf_weight: weight,
                    });
                }
                TreeNode::Split {
                    feature,
                    false_child,
                    true_child,
                } => {
                    if feature >= n {
                        return Err(bad(i, format!("feature {feature} out of range for n = {n}")));
                    }
                    if lits.iter().any(|&(f, _)| f == feature) {
                        return Err(Error::RepeatedFeatureOnPath {
                            tree: tree_idx,
                            feature,
                        });
                    }
                    for (child, value) in [(true_child, true), (false_child, false)] {
                        if child >= self.nodes.len() {
                            return Err(bad(i, format!("child {child} out of range")));
                        }
                        let mut next = lits.clone();
                        next.push((feature, value));
                        stack.push((child, next));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// An additive tree ensemble producing log-odds.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    base_score: f64,
    threshold: f64,
    num_features: usize,
    paths: Vec<Vec<PathConjunction>>,
}

impl Ensemble {
    pub fn new(num_features: usize, trees: Vec<Tree>, base_score: f64, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!("threshold {threshold} is not finite")));
        }
        if !base_score.is_finite() {
            return Err(Error::InvalidArgument(format!("base score {base_score} is not finite")));
        }
        let paths = trees
            .iter()
            .enumerate()
            .map(|(t, tree)| tree.paths(t, num_features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trees,
            base_score,
            threshold,
            num_features,
            paths,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnsembleFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_ensemble()
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = EnsembleFile {
            n: self.num_features,
            base_score: self.base_score,
            threshold: self.threshold,
            trees: self
                .trees
                .iter()
                .map(|t| TreeRecord {
                    root: t.root,
                    nodes: t
                        .nodes
                        .iter()
                        .enumerate()
                        .map(|(id, node)| match *node {
                            TreeNode::Split {
                                feature,
                                false_child,
                                true_child,
                            } => TreeNodeRecord::Split {
                                id,
                                feature,
                                false_child,
                                true_child,
                            },
                            TreeNode::Leaf { weight } => TreeNodeRecord::Leaf {
                                id,
                                leaf_weight: weight,
                            },
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("ensemble serializes")
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    /// Decision threshold in log-odds space.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_leaves(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }

    /// Per tree, every leaf with the literals on its root path. Within a
    /// tree the conjunctions are mutually exclusive and exhaustive.
    pub fn leaf_paths(&self) -> &[Vec<PathConjunction>] {
        &self.paths
    }

    pub fn log_odds(&self, x: &PartialInstance) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.log_odds_full(&x.require_full()?))
    }

    /// Log-odds of a complete assignment given as a plain slice.
    pub fn log_odds_full(&self, x: &[bool]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Probability-space prediction `sigmoid(log_odds)`.
    pub fn predict_proba_full(&self, x: &[bool]) -> f64 {
        sigmoid(self.log_odds_full(x))
    }

    pub fn classify(&self, x: &PartialInstance) -> Result<bool> {
        Ok(self.decide(self.log_odds(x)?))
    }

    pub fn classify_full(&self, x: &[bool]) -> bool {
        self.decide(self.log_odds_full(x))
    }

    /// Decision for a log-odds value; the threshold itself is positive.
    #[inline]
    pub fn decide(&self, log_odds: f64) -> bool {
        log_odds >= self.threshold
    }

    /// `base + Σ_trees max{leaf weight : path consistent with z}`, an upper
    /// bound on the log-odds of every completion of `z`. Loose: the maximal
    /// leaves of different trees may require contradicting literals.
    pub fn upper_bound_logodds(&self, z: &PartialInstance) -> Result<f64> {
        self.extreme_consistent(z, f64::max)
    }

    /// Mirror of [`Self::upper_bound_logodds`] with the minimal consistent leaf.
    pub fn lower_bound_logodds(&self, z: &PartialInstance) -> Result<f64> {
        self.extreme_consistent(z, f64::min)
    }

    fn extreme_consistent(&self, z: &PartialInstance, pick: fn(f64, f64) -> f64) -> Result<f64> {
        self.check_dim(z)?;
        let mut total = self.base_score;
        for (t, paths) in self.paths.iter().enumerate() {
            let best = paths
                .iter()
                .filter(|p| p.consistent_with(z))
                .map(|p| p.leaf_weight)
                .reduce(pick)
                .ok_or(Error::NoConsistentLeaf { tree: t })?;
            total += best;
        }
        Ok(total)
    }

    fn check_dim(&self, x: &PartialInstance) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::DimensionMismatch(format!(
                "instance over {} features, ensemble over {}",
                x.len(),
                self.num_features
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    n: usize,
    #[serde(default)]
    base_score: f64,
    #[serde(default)]
    threshold: f64,
    trees: Vec<TreeRecord>,
}

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    nodes: Vec<TreeNodeRecord>,
    root: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TreeNodeRecord {
    Split {
        id: usize,
        feature: usize,
        false_child: usize,
        true_child: usize,
    },
    Leaf {
        id: usize,
        leaf_weight: f64,
    },
}

impl TreeNodeRecord {
    fn id(&self) -> usize {
        match self {
            Self::Split { id, .. } | Self::Leaf { id, .. } => *id,
        }
    }
}

impl EnsembleFile {
    fn into_ensemble(self) -> Result<Ensemble> {
        let trees = self
            .trees
            .into_iter()
            .enumerate()
            .map(|(t, rec)| {
                let mut nodes = rec.nodes;
                nodes.sort_by_key(TreeNodeRecord::id);
                for (pos, node) in nodes.iter().enumerate() {
                    if node.id() != pos {
                        return Err(Error::Parse(format!(
                            "tree {t}: node ids are not dense: expected {pos}, found {}",
                            node.id()
                        )));
                    }
                }
                let nodes = nodes
                    .into_iter()
                    .map(|n| match n {
                        TreeNodeRecord::Split {
                            feature,
                            false_child,
                            true_child,
                            ..
                        } => TreeNode::Split {
                            feature,
                            false_child,
                            true_child,
                        },
                        TreeNodeRecord::Leaf { leaf_weight, .. } => TreeNode::Leaf {
                            weight: leaf_weight,
                        },
                    })
                    .collect();
                Ok(Tree::new(nodes, rec.root))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(self.n, trees, self.base_score, self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(feature: usize, w_false: f64, w_true: f64) -> Tree {
        Tree::new(
            vec![
                TreeNode::Split {
                    feature,
                    false_child: 1,
                    true_child: 2,
                },
                TreeNode::Leaf { weight: w_false },
                TreeNode::Leaf { weight: w_true },
            ],
            0,
        )
    }

    #[test]
    fn constant_tree_log_odds() {
        let e = Ensemble::new(2, vec![Tree::constant(0.7)], 0.0, 0.0).unwrap();
        for x in [[false, false], [true, false], [true, true]] {
            assert_eq!(e.log_odds(&PartialInstance::full(&x)).unwrap(), 0.7);
        }
        let e = Ensemble::new(2, vec![Tree::constant(0.7)], 0.25, 0.0).unwrap();
        assert_eq!(e.log_odds_full(&[false, true]), 0.95);
    }

    #[test]
    fn additivity_of_constant_trees() {
        let e = Ensemble::new(1, vec![Tree::constant(0.5), Tree::constant(-1.25)], 0.0, 0.0).unwrap();
        assert_eq!(e.log_odds_full(&[true]), -0.75);
    }

    #[test]
    fn classify_threshold_inclusive() {
        let pos = Ensemble::new(1, vec![Tree::constant(0.7)], 0.0, 0.0).unwrap();
        let neg = Ensemble::new(1, vec![Tree::constant(-0.7)], 0.0, 0.0).unwrap();
        let at = Ensemble::new(1, vec![Tree::constant(0.7)], 0.0, 0.7).unwrap();
        let x = PartialInstance::full(&[true]);
        assert!(pos.classify(&x).unwrap());
        assert!(!neg.classify(&x).unwrap());
        assert!(at.classify(&x).unwrap());
    }

    #[test]
    fn incomplete_instance_rejected() {
        let e = Ensemble::new(2, vec![split(0, -1.0, 1.0)], 0.0, 0.0).unwrap();
        let z = PartialInstance::from_pairs(2, [(0, true)]).unwrap();
        assert_eq!(e.log_odds(&z), Err(Error::IncompleteInstance { expected: 2 }));
        assert!(matches!(
            e.log_odds(&PartialInstance::full(&[true])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn repeated_feature_rejected() {
        let tree = Tree::new(
            vec![
                TreeNode::Split {
                    feature: 1,
                    false_child: 1,
                    true_child: 2,
                },
                TreeNode::Leaf { weight: 0.0 },
                TreeNode::Split {
                    feature: 1,
                    false_child: 3,
                    true_child: 4,
                },
                TreeNode::Leaf { weight: 1.0 },
                TreeNode::Leaf { weight: 2.0 },
            ],
            0,
        );
        assert_eq!(
            Ensemble::new(3, vec![tree], 0.0, 0.0),
            Err(Error::RepeatedFeatureOnPath { tree: 0, feature: 1 })
        );
    }

    #[test]
    fn leaf_paths_of_single_split_and_constant() {
        let e = Ensemble::new(2, vec![split(0, -0.3, 0.4), Tree::constant(1.0)], 0.0, 0.0).unwrap();
        let paths = e.leaf_paths();
        assert_eq!(
            paths[0],
            vec![
                PathConjunction {
                    literals: vec![(0, false)],
                    leaf_weight: -0.3
                },
                PathConjunction {
                    literals: vec![(0, true)],
                    leaf_weight: 0.4
                },
            ]
        );
        assert_eq!(paths[1].len(), 1);
        assert!(paths[1][0].literals.is_empty());
        assert_eq!(e.num_leaves(), 3);
    }

    #[test]
    fn bounds_on_constant_and_split() {
        let e = Ensemble::new(2, vec![split(1, -0.3, 0.4), Tree::constant(1.0)], 0.5, 0.0).unwrap();
        let empty = PartialInstance::empty(2);
        assert_eq!(e.upper_bound_logodds(&empty).unwrap(), 0.5 + 0.4 + 1.0);
        assert_eq!(e.lower_bound_logodds(&empty).unwrap(), 0.5 - 0.3 + 1.0);
        let z = PartialInstance::from_pairs(2, [(1, false)]).unwrap();
        assert_eq!(e.upper_bound_logodds(&z).unwrap(), 0.5 - 0.3 + 1.0);
    }

    #[test]
    fn json_roundtrip_and_parse() {
        let text = r#"{"n":2,"base_score":0.1,"trees":[
            {"root":0,"nodes":[{"id":0,"feature":1,"false_child":1,"true_child":2},
                               {"id":2,"leaf_weight":0.5},{"id":1,"leaf_weight":-0.5}]},
            {"root":0,"nodes":[{"id":0,"leaf_weight":0.25}]}]}"#;
        let e = Ensemble::from_json(text).unwrap();
        assert_eq!(e.threshold(), 0.0);
        assert_eq!(e.log_odds_full(&[false, true]), 0.1 + 0.5 + 0.25);
        assert_eq!(e.num_leaves(), 3);
        assert_eq!(Ensemble::from_json(&e.to_json()).unwrap(), e);
        assert!(matches!(Ensemble::from_json("[]"), Err(Error::Parse(_))));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
