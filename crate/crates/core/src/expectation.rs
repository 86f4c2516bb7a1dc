//! Expected log-odds of a tree ensemble under a circuit distribution.
//!
//! By linearity, `EP_O(z) = base + Σ_trees Σ_leaves w_l · Pr(path_l | z)`,
//! and each conditional is a ratio of two circuit marginals. Paths that
//! contradict `z` contribute nothing and are never sent to the circuit.

use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;

use crate::circuit::Circuit;
use crate::ensemble::{sigmoid, Ensemble};
use crate::error::{Error, Result};
use crate::instance::PartialInstance;

/// Default cap on the number of unassigned features an enumeration may touch.
pub const MAX_ENUMERATION_FREE_VARS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationResult {
    pub expected_logodds: f64,
    /// `sigmoid(expected_logodds)`, a first-order approximation of the
    /// expected probability-space prediction.
    pub approx_expected_prediction: f64,
    /// Pr(z).
    pub evidence_marginal: f64,
    pub per_tree_contributions: Vec<f64>,
}

/// Snapshot of oracle-call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    /// Expected-prediction evaluations requested.
    pub ep_calls: u64,
    /// Marginal Pr(z) evaluations requested.
    pub pr_calls: u64,
    /// Distinct evidence sets evaluated on the circuit (cache misses).
    pub circuit_passes: u64,
}

/// Expected-prediction and marginal oracle with a shared marginal cache
/// and call counters. Safe to use from many threads at once; cached values
/// are deterministic, so results do not depend on scheduling.
pub struct Evaluator<'a> {
    circuit: &'a Circuit,
    ensemble: &'a Ensemble,
    cache: DashMap<Vec<u8>, f64>,
    ep_calls: AtomicU64,
    pr_calls: AtomicU64,
    circuit_passes: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(circuit: &'a Circuit, ensemble: &'a Ensemble) -> Result<Self> {
        if circuit.num_features() != ensemble.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "circuit over {} features, ensemble over {}",
                circuit.num_features(),
                ensemble.num_features()
            )));
        }
        Ok(Self {
            circuit,
            ensemble,
            cache: DashMap::new(),
            ep_calls: AtomicU64::new(0),
            pr_calls: AtomicU64::new(0),
            circuit_passes: AtomicU64::new(0),
        })
    }

    pub fn circuit(&self) -> &'a Circuit {
        self.circuit
    }

    pub fn ensemble(&self) -> &'a Ensemble {
        self.ensemble
    }

    pub fn clear_cache(&self) {
        self.cache.clear();
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            ep_calls: self.ep_calls.load(Ordering::Relaxed),
            pr_calls: self.pr_calls.load(Ordering::Relaxed),
            circuit_passes: self.circuit_passes.load(Ordering::Relaxed),
        }
    }

    fn check_dim(&self, z: &PartialInstance) -> Result<()> {
        if z.len() != self.circuit.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "evidence over {} features, models over {}",
                z.len(),
                self.circuit.num_features()
            )));
        }
        Ok(())
    }

    fn cached_log_marginal(&self, z: &PartialInstance) -> f64 {
        let key = z.key();
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        let v = self.circuit.log_marginal(z);
        // concurrent misses on one key both evaluate; count the key once
        if self.cache.insert(key, v).is_none() {
            self.circuit_passes.fetch_add(1, Ordering::Relaxed);
        }
        v
    }

    /// ln Pr(z); counts as one marginal oracle call.
    pub fn log_marginal(&self, z: &PartialInstance) -> Result<f64> {
        self.check_dim(z)?;
        self.pr_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.cached_log_marginal(z))
    }

    /// Pr(z); counts as one marginal oracle call.
    pub fn marginal(&self, z: &PartialInstance) -> Result<f64> {
        Ok(self.log_marginal(z)?.exp())
    }

    /// Pr(path | z) for every leaf of every tree.
    pub fn path_probabilities(&self, z: &PartialInstance) -> Result<Vec<Vec<f64>>> {
        self.check_dim(z)?;
        let log_z = self.cached_log_marginal(z);
        if log_z == f64::NEG_INFINITY {
            return Err(Error::ZeroEvidence);
        }
        Ok(self.path_probabilities_given(z, log_z))
    }

    fn path_probabilities_given(&self, z: &PartialInstance, log_z: f64) -> Vec<Vec<f64>> {
        let mut joint = z.clone();
        self.ensemble
            .leaf_paths()
            .iter()
            .map(|paths| {
                paths
                    .iter()
                    .map(|path| {
                        if !path.consistent_with(z) {
                            return 0.0;
                        }
                        let mut extended = false;
                        for &(f, v) in &path.literals {
                            if z.get(f).is_none() {
                                joint.set(f, v);
                                extended = true;
                            }
                        }
                        if extended {
                            let lp = self.cached_log_marginal(&joint);
                            for &(f, _) in &path.literals {
                                if z.get(f).is_none() {
                                    joint.unset(f);
                                }
                            }
                            (lp - log_z).exp()
                        } else {
                            1.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// EP_O(z); counts as one expected-prediction oracle call.
    pub fn expected_logodds(&self, z: &PartialInstance) -> Result<ExpectationResult> {
        self.check_dim(z)?;
        self.ep_calls.fetch_add(1, Ordering::Relaxed);
        let log_z = self.cached_log_marginal(z);
        if log_z == f64::NEG_INFINITY {
            return Err(Error::ZeroEvidence);
        }
        let probs = self.path_probabilities_given(z, log_z);
        let per_tree_contributions: Vec<f64> = self
            .ensemble
            .leaf_paths()
            .iter()
            .zip(&probs)
            .map(|(paths, ps)| {
                paths
                    .iter()
                    .zip(ps)
                    .map(|(path, p)| path.leaf_weight * p)
                    .sum()
            })
            .collect();
        let expected_logodds =
            self.ensemble.base_score() + per_tree_contributions.iter().sum::<f64>();
        Ok(ExpectationResult {
            expected_logodds,
            approx_expected_prediction: sigmoid(expected_logodds),
            evidence_marginal: log_z.exp(),
            per_tree_contributions,
        })
    }
}

/// EP_O(z) without caching.
pub fn expected_logodds(
    circuit: &Circuit,
    ensemble: &Ensemble,
    z: &PartialInstance,
) -> Result<ExpectationResult> {
    Evaluator::new(circuit, ensemble)?.expected_logodds(z)
}

/// `sigmoid(EP_O)`. This is not the expected prediction itself: the
/// sigmoid does not commute with expectation.
pub fn approx_expected_prediction(r: &ExpectationResult) -> f64 {
    sigmoid(r.expected_logodds)
}

/// Exact `E[sigmoid(O(zm))]` over completions `m ~ Pr(M | z)`, by
/// enumeration. Exponential in the number of unassigned features.
pub fn exact_expected_prediction_smallcase(
    circuit: &Circuit,
    ensemble: &Ensemble,
    z: &PartialInstance,
) -> Result<f64> {
    let free = z.free_vars();
    if free.len() > MAX_ENUMERATION_FREE_VARS {
        return Err(Error::BudgetExceeded {
            needed: free.len() as u64,
            budget: MAX_ENUMERATION_FREE_VARS as u64,
        });
    }
    if z.len() != circuit.num_features() || z.len() != ensemble.num_features() {
        return Err(Error::DimensionMismatch("evidence does not match models".into()));
    }
    let log_z = circuit.log_marginal(z);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidence);
    }
    let mut x: Vec<bool> = z.values().iter().map(|v| v.unwrap_or(false)).collect();
    let mut total = 0.0;
    for bits in 0u64..(1u64 << free.len()) {
        for (j, &f) in free.iter().enumerate() {
            x[f] = bits >> j & 1 == 1;
        }
        let lp = circuit.log_marginal(&PartialInstance::full(&x));
        if lp > f64::NEG_INFINITY {
            total += (lp - log_z).exp() * ensemble.predict_proba_full(&x);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::Node;
    use crate::ensemble::{Tree, TreeNode};

    fn uniform(n: usize) -> Circuit {
        let mut nodes = Vec::new();
        let mut sums = Vec::new();
        for v in 0..n {
            nodes.push(Node::Literal { var: v, value: true });
            nodes.push(Node::Literal { var: v, value: false });
            nodes.push(Node::Sum {
                children: vec![3 * v, 3 * v + 1],
                weights: vec![0.5, 0.5],
            });
            sums.push(3 * v + 2);
        }
        nodes.push(Node::Product { children: sums });
        let root = nodes.len() - 1;
        Circuit::new(n, nodes, root).unwrap()
    }

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
    fn full_instance_collapses_to_log_odds() {
        let c = uniform(3);
        let e = Ensemble::new(3, vec![split(0, -1.0, 2.0), split(2, 0.3, -0.2)], 0.1, 0.0).unwrap();
        let x = [true, false, false];
        let r = expected_logodds(&c, &e, &PartialInstance::full(&x)).unwrap();
        assert_eq!(r.expected_logodds, e.log_odds_full(&x));
        assert!((r.evidence_marginal - 0.125).abs() < 1e-15);
        assert_eq!(approx_expected_prediction(&r), e.predict_proba_full(&x));
        let exact = exact_expected_prediction_smallcase(&c, &e, &PartialInstance::full(&x)).unwrap();
        assert!((exact - e.predict_proba_full(&x)).abs() < 1e-15);
    }

    #[test]
    fn constant_forest_ignores_evidence() {
        let c = uniform(2);
        let e = Ensemble::new(2, vec![Tree::constant(0.5), Tree::constant(0.25)], -1.0, 0.0).unwrap();
        for z in [
            PartialInstance::empty(2),
            PartialInstance::from_pairs(2, [(1, true)]).unwrap(),
        ] {
            let r = expected_logodds(&c, &e, &z).unwrap();
            assert!((r.expected_logodds + 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn approx_prediction_of_zero_is_half() {
        let c = uniform(1);
        let e = Ensemble::new(1, vec![split(0, -1.0, 1.0)], 0.0, 0.0).unwrap();
        let r = expected_logodds(&c, &e, &PartialInstance::empty(1)).unwrap();
        assert!(r.expected_logodds.abs() < 1e-15);
        assert!((approx_expected_prediction(&r) - 0.5).abs() < 1e-15);
        let exact = exact_expected_prediction_smallcase(&c, &e, &PartialInstance::empty(1)).unwrap();
        assert!((exact - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_evidence_and_dimension_errors() {
        let c = Circuit::new(1, vec![Node::Literal { var: 0, value: true }], 0).unwrap();
        let e = Ensemble::new(1, vec![split(0, -1.0, 1.0)], 0.0, 0.0).unwrap();
        let z = PartialInstance::full(&[false]);
        assert_eq!(expected_logodds(&c, &e, &z), Err(Error::ZeroEvidence));
        let e2 = Ensemble::new(2, vec![Tree::constant(1.0)], 0.0, 0.0).unwrap();
        assert!(matches!(Evaluator::new(&c, &e2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn counters_and_cache() {
        let c = uniform(3);
        let e = Ensemble::new(3, vec![split(0, -1.0, 2.0), split(1, 0.3, -0.2)], 0.0, 0.0).unwrap();
        let ev = Evaluator::new(&c, &e).unwrap();
        let z = PartialInstance::from_pairs(3, [(2, true)]).unwrap();
        let a = ev.expected_logodds(&z).unwrap();
        let passes = ev.counts().circuit_passes;
        let b = ev.expected_logodds(&z).unwrap();
        assert_eq!(a, b);
        let counts = ev.counts();
        assert_eq!(counts.ep_calls, 2);
        assert_eq!(counts.circuit_passes, passes);
        ev.marginal(&z).unwrap();
        assert_eq!(ev.counts().pr_calls, 1);
    }
}
