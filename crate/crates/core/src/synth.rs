//! Synthetic circuits, forests, and instance suites for tests, validation
//! and demos.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Circuit, Node};
use crate::ensemble::{Ensemble, Tree, TreeNode};
use crate::instance::PartialInstance;

/// Incremental node-list builder.
#[derive(Debug, Default)]
pub struct CircuitBuilder {
    nodes: Vec<Node>,
}

impl CircuitBuilder {
    pub fn lit(&mut self, var: usize, value: bool) -> usize {
        self.push(Node::Literal { var, value })
    }

    pub fn sum(&mut self, children: Vec<usize>, weights: Vec<f64>) -> usize {
        self.push(Node::Sum { children, weights })
    }

    pub fn prod(&mut self, children: Vec<usize>) -> usize {
        self.push(Node::Product { children })
    }

    /// `p·[var = 1] + (1 - p)·[var = 0]`.
    pub fn bernoulli(&mut self, var: usize, p: f64) -> usize {
        let t = self.lit(var, true);
        let f = self.lit(var, false);
        self.sum(vec![t, f], vec![p, 1.0 - p])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn finish(self, n: usize, root: usize) -> Circuit {
        Circuit::new(n, self.nodes, root).expect("builder produced an invalid circuit")
    }
}

/// Independent variables with `Pr(X_i = 1) = ps[i]`.
pub fn factorized_circuit(ps: &[f64]) -> Circuit {
    let mut b = CircuitBuilder::default();
    let leaves: Vec<usize> = ps.iter().enumerate().map(|(v, &p)| b.bernoulli(v, p)).collect();
    let root = b.prod(leaves);
    b.finish(ps.len(), root)
}

pub fn uniform_circuit(n: usize) -> Circuit {
    factorized_circuit(&vec![0.5; n])
}

fn random_weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Mixture of `components` fully factorized distributions; full support.
pub fn mixture_circuit<R: Rng>(n: usize, components: usize, rng: &mut R) -> Circuit {
    let mut b = CircuitBuilder::default();
    let comps: Vec<usize> = (0..components)
        .map(|_| {
            let leaves: Vec<usize> = (0..n)
                .map(|v| {
                    // skewed marginals give clearly correlated mixtures
                    let p = if rng.gen_bool(0.5) {
                        rng.gen_range(0.05..0.35)
                    } else {
                        rng.gen_range(0.65..0.95)
                    };
                    b.bernoulli(v, p)
                })
                .collect();
            b.prod(leaves)
        })
        .collect();
    let weights = random_weights(rng, components);
    let root = b.sum(comps, weights);
    b.finish(n, root)
}

struct RandomCircuit<'r, R: Rng> {
    rng: &'r mut R,
    b: CircuitBuilder,
    by_scope: HashMap<Vec<usize>, Vec<usize>>,
    max_nodes: usize,
}

impl<R: Rng> RandomCircuit<'_, R> {
    fn build(&mut self, scope: &[usize], depth: usize) -> usize {
        if let Some(existing) = self.by_scope.get(scope) {
            if self.rng.gen_bool(0.3) {
                return *existing.choose(self.rng).unwrap();
            }
        }
        let id = if scope.len() == 1 {
            let v = scope[0];
            if self.rng.gen_bool(0.1) {
                let value = self.rng.gen_bool(0.5);
                self.b.lit(v, value)
            } else {
                let p = self.rng.gen_range(0.05..0.95);
                self.b.bernoulli(v, p)
            }
        } else {
            let tight = self.b.len() * 2 > self.max_nodes;
            let max_children = if tight || depth >= 2 { 2 } else { 3 };
            let k = self.rng.gen_range(1..=max_children);
            let mut products = Vec::with_capacity(k);
            for _ in 0..k {
                let mut vars = scope.to_vec();
                vars.shuffle(self.rng);
                let cut = self.rng.gen_range(1..vars.len());
                let (mut left, mut right) = (vars[..cut].to_vec(), vars[cut..].to_vec());
                left.sort_unstable();
                right.sort_unstable();
                let l = self.build(&left, depth + 1);
                let r = self.build(&right, depth + 1);
                products.push(self.b.prod(vec![l, r]));
            }
            if k == 1 {
                products[0]
            } else {
                let w = random_weights(self.rng, k);
                self.b.sum(products, w)
            }
        };
        self.by_scope.entry(scope.to_vec()).or_default().push(id);
        id
    }
}

/// Random smooth, decomposable circuit over `n` variables with at most
/// `max_nodes` nodes. Sub-circuits are shared between parents, and some
/// variables are deterministic under some branches, so zero-probability
/// instances occur.
pub fn random_circuit<R: Rng>(n: usize, max_nodes: usize, rng: &mut R) -> Circuit {
    assert!(n >= 1 && max_nodes >= 3 * n);
    loop {
        let mut gen = RandomCircuit {
            rng: &mut *rng,
            b: CircuitBuilder::default(),
            by_scope: HashMap::new(),
            max_nodes,
        };
        let scope: Vec<usize> = (0..n).collect();
        let root = gen.build(&scope, 0);
        if gen.b.len() <= max_nodes && root + 1 == gen.b.len() {
            return gen.b.finish(n, root);
        }
    }
}

fn random_tree<R: Rng>(n: usize, max_depth: usize, rng: &mut R) -> Tree {
    fn grow<R: Rng>(
        nodes: &mut Vec<TreeNode>,
        used: &mut Vec<usize>,
        n: usize,
        max_depth: usize,
        rng: &mut R,
    ) -> usize {
        let depth = used.len();
        let id = nodes.len();
        if depth >= max_depth || depth >= n || (depth > 0 && rng.gen_bool(0.2)) {
            nodes.push(TreeNode::Leaf {
                weight: rng.gen_range(-1.0..1.0),
            });
            return id;
        }
        let feature = loop {
            let f = rng.gen_range(0..n);
            if !used.contains(&f) {
                break f;
            }
        };
        nodes.push(TreeNode::Leaf { weight: 0.0 });
        used.push(feature);
        let false_child = grow(nodes, used, n, max_depth, rng);
        let true_child = grow(nodes, used, n, max_depth, rng);
        used.pop();
        nodes[id] = TreeNode::Split {
            feature,
            false_child,
            true_child,
        };
        id
    }
    let mut nodes = Vec::new();
    let root = grow(&mut nodes, &mut Vec::new(), n, max_depth, rng);
    Tree::new(nodes, root)
}

/// Random forest of `trees` trees, each of depth at most `max_depth`,
/// with leaf weights in (-1, 1) and a small random base score.
pub fn random_forest<R: Rng>(n: usize, trees: usize, max_depth: usize, rng: &mut R) -> Ensemble {
    let trees = (0..trees).map(|_| random_tree(n, max_depth, rng)).collect();
    let base = rng.gen_range(-0.25..0.25);
    Ensemble::new(n, trees, base, 0.0).expect("random forest is valid")
}

/// Forest of single-leaf trees.
pub fn constant_forest(n: usize, weights: &[f64]) -> Ensemble {
    let trees = weights.iter().map(|&w| Tree::constant(w)).collect();
    Ensemble::new(n, trees, 0.0, 0.0).expect("constant forest is valid")
}

/// One tree splitting on `feature` with leaves `w_false`, `w_true`.
pub fn single_split_forest(n: usize, feature: usize, w_false: f64, w_true: f64) -> Ensemble {
    let tree = Tree::new(
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
    );
    Ensemble::new(n, vec![tree], 0.0, 0.0).expect("single split is valid")
}

/// Keeps each assigned feature of `x` with probability `keep`.
pub fn random_subset<R: Rng>(x: &[bool], keep: f64, rng: &mut R) -> PartialInstance {
    let features: Vec<usize> = (0..x.len()).filter(|_| rng.gen_bool(keep)).collect();
    PartialInstance::restrict(x, &features)
}

/// A circuit, a forest, and instances drawn from the circuit.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub circuit: Circuit,
    pub ensemble: Ensemble,
    pub instances: Vec<Vec<bool>>,
}

/// An 11-feature binary benchmark shaped like a binarized census table: a
/// four-component mixture over the features and six depth-4 trees.
pub fn adult_like_suite(seed: u64, instances: usize) -> SyntheticSuite {
    let n = 11;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let circuit = mixture_circuit(n, 4, &mut rng);
    let ensemble = random_forest(n, 6, 4, &mut rng);
    let instances = circuit
        .sample_conditional(&PartialInstance::empty(n), instances, rng.gen())
        .expect("empty evidence has probability one");
    SyntheticSuite {
        circuit,
        ensemble,
        instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_circuits_respect_size_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..=12);
            let c = random_circuit(n, 300, &mut rng);
            assert!(c.size() <= 300);
            assert!((c.marginal(&PartialInstance::empty(n)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_forest_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random_forest(6, 5, 4, &mut rng);
        for paths in e.leaf_paths() {
            assert!(paths.iter().all(|p| p.literals.len() <= 4));
        }
    }

    #[test]
    fn suite_is_reproducible() {
        let a = adult_like_suite(7, 20);
        let b = adult_like_suite(7, 20);
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.instances.len(), 20);
    }
}
