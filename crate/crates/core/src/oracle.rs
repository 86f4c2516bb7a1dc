//! Brute-force reference implementations.
//!
//! Nothing here calls the production inference paths: circuit likelihoods
//! use a separate memoized top-down recursion, tree outputs a separate
//! walker, and sums are compensated. These are the yardsticks the
//! tractable computations are checked against.

use std::collections::HashMap;

use crate::circuit::{Circuit, Node};
use crate::ensemble::{Ensemble, Tree, TreeNode};
use crate::error::{Error, Result};
use crate::instance::PartialInstance;
use crate::stats::NeumaierSum;

/// Largest feature count for a full joint table.
pub const JOINT_TABLE_MAX_FEATURES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_free_vars: usize,
    pub max_subsets: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_free_vars: 20,
            max_subsets: 1 << 20,
        }
    }
}

impl EnumerationBudget {
    fn check_free(&self, free: usize) -> Result<()> {
        if free > self.max_free_vars {
            return Err(Error::BudgetExceeded {
                needed: free as u64,
                budget: self.max_free_vars as u64,
            });
        }
        Ok(())
    }
}

/// Likelihood of a complete assignment by top-down recursion over the DAG.
pub fn full_likelihood(circuit: &Circuit, x: &[bool]) -> f64 {
    fn visit(nodes: &[Node], i: usize, x: &[bool], memo: &mut HashMap<usize, f64>) -> f64 {
        if let Some(&v) = memo.get(&i) {
            return v;
        }
        let v = match &nodes[i] {
            Node::Literal { var, value } => {
                if x[*var] == *value {
                    1.0
                } else {
                    0.0
                }
            }
            Node::Product { children } => {
                let mut p = 1.0;
                // reverse child order, unlike the production pass
                for &c in children.iter().rev() {
                    p *= visit(nodes, c, x, memo);
                    if p == 0.0 {
                        break;
                    }
                }
                p
            }
            Node::Sum { children, weights } => {
                let mut acc = NeumaierSum::default();
                for (&c, &w) in children.iter().zip(weights).rev() {
                    acc.add(w * visit(nodes, c, x, memo));
                }
                acc.value()
            }
        };
        memo.insert(i, v);
        v
    }
    let mut memo = HashMap::new();
    visit(circuit.nodes(), circuit.root(), x, &mut memo)
}

/// Recursive tree walk, independent of [`Tree::predict`].
fn walk(tree: &Tree, node: usize, x: &[bool]) -> f64 {
    match tree.nodes()[node] {
        TreeNode::Leaf { weight } => weight,
        TreeNode::Split {
            feature,
            false_child,
            true_child,
        } => walk(tree, if x[feature] { true_child } else { false_child }, x),
    }
}

/// Log-odds of a complete assignment, summed with compensation.
pub fn naive_log_odds(ensemble: &Ensemble, x: &[bool]) -> f64 {
    let mut acc = NeumaierSum::default();
    acc.add(ensemble.base_score());
    for t in ensemble.trees() {
        acc.add(walk(t, t.root(), x));
    }
    acc.value()
}

fn sigmoid(t: f64) -> f64 {
    // written out here so the oracle does not share the production helper
    1.0 / (1.0 + (-t).exp())
}

#[inline]
fn bits_to_instance(bits: u64, out: &mut [bool]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = bits >> i & 1 == 1;
    }
}

/// Pr(x) for every `x ∈ {0,1}^n`; entry `i` has feature `j` set to bit `j` of `i`.
#[derive(Debug, Clone)]
pub struct JointTable {
    n: usize,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn num_features(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().copied().collect::<NeumaierSum>().value()
    }

    /// Pr(e) by summing every table entry consistent with `e`.
    pub fn marginal(&self, e: &PartialInstance) -> f64 {
        let (mask, want) = e.assigned().fold((0usize, 0usize), |(m, w), (f, v)| {
            (m | 1 << f, if v { w | 1 << f } else { w })
        });
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, &p)| p)
            .collect::<NeumaierSum>()
            .value()
    }
}

pub fn joint_table(circuit: &Circuit) -> Result<JointTable> {
    let n = circuit.num_features();
    if n > JOINT_TABLE_MAX_FEATURES {
        return Err(Error::BudgetExceeded {
            needed: n as u64,
            budget: JOINT_TABLE_MAX_FEATURES as u64,
        });
    }
    let mut x = vec![false; n];
    let probs = (0u64..1 << n)
        .map(|bits| {
            bits_to_instance(bits, &mut x);
            full_likelihood(circuit, &x)
        })
        .collect();
    Ok(JointTable { n, probs })
}

/// Calls `f(y, Pr(y))` for every completion `y` of `z`.
fn for_each_completion(
    circuit: &Circuit,
    z: &PartialInstance,
    budget: EnumerationBudget,
    mut f: impl FnMut(&[bool], f64),
) -> Result<()> {
    if z.len() != circuit.num_features() {
        return Err(Error::DimensionMismatch("evidence does not match circuit".into()));
    }
    let free = z.free_vars();
    budget.check_free(free.len())?;
    let mut y: Vec<bool> = z.values().iter().map(|v| v.unwrap_or(false)).collect();
    for bits in 0u64..(1u64 << free.len()) {
        for (j, &v) in free.iter().enumerate() {
            y[v] = bits >> j & 1 == 1;
        }
        f(&y, full_likelihood(circuit, &y));
    }
    Ok(())
}

/// Exact `(EP_O(z), EP_f(z))` by weighting every completion of `z`.
pub fn ep_by_enumeration(
    circuit: &Circuit,
    ensemble: &Ensemble,
    z: &PartialInstance,
    budget: EnumerationBudget,
) -> Result<(f64, f64)> {
    let mut mass = NeumaierSum::default();
    let mut logodds = NeumaierSum::default();
    let mut prediction = NeumaierSum::default();
    for_each_completion(circuit, z, budget, |y, p| {
        if p > 0.0 {
            let o = naive_log_odds(ensemble, y);
            mass.add(p);
            logodds.add(p * o);
            prediction.add(p * sigmoid(o));
        }
    })?;
    let mass = mass.value();
    if mass == 0.0 {
        return Err(Error::ZeroEvidence);
    }
    Ok((logodds.value() / mass, prediction.value() / mass))
}

/// Exact same-decision probability `Σ_m Pr(m | z) 1[C(zm) = C(x)]`.
pub fn sdp_by_enumeration(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    z: &PartialInstance,
    budget: EnumerationBudget,
) -> Result<f64> {
    if z.assigned().any(|(f, v)| x[f] != v) {
        return Err(Error::SubsetViolation);
    }
    let decide = |y: &[bool]| naive_log_odds(ensemble, y) >= ensemble.threshold();
    let target = decide(x);
    let mut mass = NeumaierSum::default();
    let mut same = NeumaierSum::default();
    for_each_completion(circuit, z, budget, |y, p| {
        mass.add(p);
        if decide(y) == target {
            same.add(p);
        }
    })?;
    let mass = mass.value();
    if mass == 0.0 {
        return Err(Error::ZeroEvidence);
    }
    Ok(same.value() / mass)
}
