//! Smooth, decomposable probabilistic circuits over binary variables.
//!
//! A [`Circuit`] is a DAG of literal, sum, and product nodes stored in
//! topological order (every child precedes its parent). Marginals are a
//! single bottom-up pass in which a literal over an unobserved variable
//! evaluates to 1. Conditional samples are drawn by one bottom-up pass with
//! the evidence followed by a top-down descent.

use std::io::Read;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::PartialInstance;

/// Maximum deviation of a sum node's weights from 1 accepted at load time.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Linear-space values below this trigger a log-space re-evaluation.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

/// Samples per independently seeded chunk. Chunking is fixed so that
/// sampling output does not depend on the number of threads.
pub const SAMPLE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Literal { var: usize, value: bool },
    Sum { children: Vec<usize>, weights: Vec<f64> },
    Product { children: Vec<usize> },
}

/// A validated probabilistic circuit. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    nodes: Vec<Node>,
    root: usize,
    num_features: usize,
}

/// Node values from one bottom-up pass, in linear or log space.
#[derive(Debug, Clone)]
pub struct Pass {
    log_space: bool,
    values: Vec<f64>,
}

impl Pass {
    pub fn is_log_space(&self) -> bool {
        self.log_space
    }

    /// Natural log of node `i`'s value.
    #[inline]
    pub fn ln(&self, i: usize) -> f64 {
        if self.log_space {
            self.values[i]
        } else {
            self.values[i].ln()
        }
    }

    #[inline]
    pub fn prob(&self, i: usize) -> f64 {
        if self.log_space {
            self.values[i].exp()
        } else {
            self.values[i]
        }
    }

    #[inline]
    fn is_zero(&self, i: usize) -> bool {
        if self.log_space {
            self.values[i] == f64::NEG_INFINITY
        } else {
            self.values[i] == 0.0
        }
    }
}

impl Circuit {
    /// Validates structure and renormalizes sum weights exactly.
    pub fn new(num_features: usize, mut nodes: Vec<Node>, root: usize) -> Result<Self> {
        validate(num_features, &nodes, root)?;
        for node in &mut nodes {
            if let Node::Sum { weights, .. } = node {
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
            }
        }
        Ok(Self {
            nodes,
            root,
            num_features,
        })
    }

    /// Builds a circuit without any structural or weight checks.
    ///
    /// Only meant for auditing corrupted models (see the oracle checks);
    /// every other entry point validates.
    pub fn from_nodes_unchecked(num_features: usize, nodes: Vec<Node>, root: usize) -> Self {
        Self {
            nodes,
            root,
            num_features,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CircuitFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_circuit()
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = CircuitFile {
            n: self.num_features,
            root: self.root,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, node)| NodeRecord {
                    id,
                    kind: match node {
                        Node::Literal { var, value } => NodeKindRecord::Lit {
                            var: *var,
                            value: BoolLike::Bool(*value),
                        },
                        Node::Sum { children, weights } => NodeKindRecord::Sum {
                            children: children.clone(),
                            weights: weights.clone(),
                        },
                        Node::Product { children } => NodeKindRecord::Prod {
                            children: children.clone(),
                        },
                    },
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("circuit serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Bottom-up evaluation under evidence `e`, switching to log space if
    /// any intermediate value underflows the guard.
    pub fn upward(&self, e: &PartialInstance) -> Pass {
        assert_eq!(
            e.len(),
            self.num_features,
            "evidence dimension does not match circuit"
        );
        match self.upward_linear(e) {
            Some(values) => Pass {
                log_space: false,
                values,
            },
            None => Pass {
                log_space: true,
                values: self.upward_log(e),
            },
        }
    }

    fn upward_linear(&self, e: &PartialInstance) -> Option<Vec<f64>> {
        let mut vals = vec![0.0; self.root + 1];
        for i in 0..=self.root {
            let v = match &self.nodes[i] {
                Node::Literal { var, value } => literal_value(e, *var, *value),
                Node::Sum { children, weights } => {
                    let mut acc = 0.0;
                    let mut any_positive = false;
                    for (&c, &w) in children.iter().zip(weights) {
                        any_positive |= vals[c] > 0.0;
                        acc += w * vals[c];
                    }
                    if any_positive && acc < UNDERFLOW_GUARD {
                        return None;
                    }
                    acc
                }
                Node::Product { children } => {
                    let mut acc = 1.0;
                    for &c in children {
                        acc *= vals[c];
                    }
                    if acc < UNDERFLOW_GUARD && children.iter().all(|&c| vals[c] > 0.0) {
                        return None;
                    }
                    acc
                }
            };
            vals[i] = v;
        }
        Some(vals)
    }

    fn upward_log(&self, e: &PartialInstance) -> Vec<f64> {
        let mut vals = vec![0.0; self.root + 1];
        for i in 0..=self.root {
            vals[i] = match &self.nodes[i] {
                Node::Literal { var, value } => literal_value(e, *var, *value).ln(),
                Node::Sum { children, weights } => log_sum_exp(
                    children
                        .iter()
                        .zip(weights)
                        .map(|(&c, &w)| w.ln() + vals[c]),
                ),
                Node::Product { children } => children.iter().map(|&c| vals[c]).sum(),
            };
        }
        vals
    }

    /// Pr(e). The empty instance has marginal 1.
    pub fn marginal(&self, e: &PartialInstance) -> f64 {
        self.upward(e).prob(self.root)
    }

    /// ln Pr(e), exact even when Pr(e) underflows a double.
    pub fn log_marginal(&self, e: &PartialInstance) -> f64 {
        self.upward(e).ln(self.root)
    }

    /// Pr(query | given) as a ratio of marginals.
    pub fn conditional(&self, query: &PartialInstance, given: &PartialInstance) -> Result<f64> {
        let joint = query.union(given)?;
        let denom = self.upward(given);
        if denom.is_zero(self.root) {
            return Err(Error::ZeroEvidence);
        }
        let num = self.upward(&joint);
        if num.is_zero(self.root) {
            return Ok(0.0);
        }
        Ok((num.ln(self.root) - denom.ln(self.root)).exp())
    }

    /// Draws `count` complete assignments from Pr(· | given).
    ///
    /// Sample `i` comes from chunk `i / SAMPLE_CHUNK`, whose generator is
    /// [`chunk_rng`]`(seed, chunk)`; output is identical for any thread count.
    pub fn sample_conditional(
        &self,
        given: &PartialInstance,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec<bool>>> {
        let sampler = Sampler::new(self, given)?;
        let chunks = count.div_ceil(SAMPLE_CHUNK);
        let out: Vec<Vec<Vec<bool>>> = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = chunk_rng(seed, chunk as u64);
                let len = SAMPLE_CHUNK.min(count - chunk * SAMPLE_CHUNK);
                (0..len)
                    .map(|_| {
                        let mut x = Vec::new();
                        sampler.draw(&mut rng, &mut x);
                        x
                    })
                    .collect()
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }
}

/// The generator for sample chunk `chunk` under `seed`: ChaCha8 seeded from
/// `seed`, on stream `chunk`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Conditional sampler holding the bottom-up pass for fixed evidence.
///
/// Each draw visits nodes depth-first from the root, children in listed
/// order, and consumes exactly one uniform variate per sum node visited.
pub struct Sampler<'a> {
    circuit: &'a Circuit,
    given: PartialInstance,
    pass: Pass,
}

impl<'a> Sampler<'a> {
    pub fn new(circuit: &'a Circuit, given: &PartialInstance) -> Result<Self> {
        if given.len() != circuit.num_features {
            return Err(Error::DimensionMismatch(format!(
                "evidence over {} features, circuit over {}",
                given.len(),
                circuit.num_features
            )));
        }
        let pass = circuit.upward(given);
        if pass.is_zero(circuit.root) {
            return Err(Error::ZeroEvidence);
        }
        Ok(Self {
            circuit,
            given: given.clone(),
            pass,
        })
    }

    /// ln Pr(given).
    pub fn log_evidence(&self) -> f64 {
        self.pass.ln(self.circuit.root)
    }

    /// Overwrites `out` with one complete assignment extending the evidence.
    pub fn draw<R: Rng>(&self, rng: &mut R, out: &mut Vec<bool>) {
        let n = self.circuit.num_features;
        out.clear();
        out.extend(self.given.values().iter().map(|v| v.unwrap_or(false)));
        debug_assert_eq!(out.len(), n);
        let mut stack = vec![self.circuit.root];
        while let Some(i) = stack.pop() {
            match &self.circuit.nodes[i] {
                Node::Literal { var, value } => {
                    if self.given.get(*var).is_none() {
                        out[*var] = *value;
                    }
                }
                Node::Product { children } => stack.extend(children.iter().rev()),
                Node::Sum { children, weights } => {
                    let u: f64 = rng.gen();
                    stack.push(self.choose(i, children, weights, u));
                }
            }
        }
    }

    fn choose(&self, node: usize, children: &[usize], weights: &[f64], u: f64) -> usize {
        let parent_ln = self.pass.ln(node);
        let mass = |j: usize| -> f64 {
            let c = children[j];
            if self.pass.is_zero(c) {
                0.0
            } else if self.pass.is_log_space() {
                (weights[j].ln() + self.pass.ln(c) - parent_ln).exp()
            } else {
                weights[j] * self.pass.prob(c)
            }
        };
        let masses: Vec<f64> = (0..children.len()).map(mass).collect();
        let total: f64 = masses.iter().sum();
        let target = u * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &m) in masses.iter().enumerate() {
            if m > 0.0 {
                last_positive = j;
                acc += m;
                if target < acc {
                    return children[j];
                }
            }
        }
        children[last_positive]
    }
}

#[inline]
fn literal_value(e: &PartialInstance, var: usize, value: bool) -> f64 {
    match e.get(var) {
        Some(v) if v != value => 0.0,
        _ => 1.0,
    }
}

fn log_sum_exp<I: Iterator<Item = f64>>(terms: I) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn validate(n: usize, nodes: &[Node], root: usize) -> Result<()> {
    if root >= nodes.len() {
        return Err(Error::InvalidCircuit {
            node: root,
            property: format!("root id out of range ({} nodes)", nodes.len()),
        });
    }
    let mut scopes: Vec<FixedBitSet> = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let fail = |property: String| Error::InvalidCircuit { node: i, property };
        let scope = match node {
            Node::Literal { var, .. } => {
                if *var >= n {
                    return Err(fail(format!("variable {var} out of range for n = {n}")));
                }
                let mut s = FixedBitSet::with_capacity(n);
                s.insert(*var);
                s
            }
            Node::Sum { children, weights } => {
                check_children(i, children)?;
                if weights.len() != children.len() {
                    return Err(fail(format!(
                        "{} weights for {} children",
                        weights.len(),
                        children.len()
                    )));
                }
                if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
                    return Err(fail(format!("weight {w} is not strictly positive")));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(fail(format!("weights sum to {total}, not 1")));
                }
                let first = &scopes[children[0]];
                if let Some(&c) = children.iter().find(|&&c| scopes[c] != *first) {
                    return Err(fail(format!(
                        "smoothness violated: child {c} has a different scope than child {}",
                        children[0]
                    )));
                }
                first.clone()
            }
            Node::Product { children } => {
                check_children(i, children)?;
                let mut s = FixedBitSet::with_capacity(n);
                for &c in children {
                    if !s.is_disjoint(&scopes[c]) {
                        return Err(fail(format!(
                            "decomposability violated: child {c} shares variables with a sibling"
                        )));
                    }
                    s.union_with(&scopes[c]);
                }
                s
            }
        };
        scopes.push(scope);
    }
    if scopes[root].count_ones(..) != n {
        return Err(Error::InvalidCircuit {
            node: root,
            property: format!(
                "root scope covers {} of {n} variables",
                scopes[root].count_ones(..)
            ),
        });
    }
    Ok(())
}

fn check_children(i: usize, children: &[usize]) -> Result<()> {
    if children.is_empty() {
        return Err(Error::InvalidCircuit {
            node: i,
            property: "internal node without children".into(),
        });
    }
    if let Some(&c) = children.iter().find(|&&c| c >= i) {
        return Err(Error::InvalidCircuit {
            node: i,
            property: format!("child {c} does not precede its parent"),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CircuitFile {
    n: usize,
    root: usize,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    #[serde(flatten)]
    kind: NodeKindRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum NodeKindRecord {
    #[serde(rename = "lit")]
    Lit { var: usize, value: BoolLike },
    #[serde(rename = "sum")]
    Sum {
        children: Vec<usize>,
        weights: Vec<f64>,
    },
    #[serde(rename = "prod")]
    Prod { children: Vec<usize> },
}

/// Literal polarity written either as a JSON boolean or as 0/1.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BoolLike {
    Bool(bool),
    Int(u8),
}

impl CircuitFile {
    fn into_circuit(self) -> Result<Circuit> {
        let mut records = self.nodes;
        records.sort_by_key(|r| r.id);
        for (pos, r) in records.iter().enumerate() {
            if r.id != pos {
                return Err(Error::Parse(format!(
                    "node ids are not dense: expected id {pos}, found {}",
                    r.id
                )));
            }
        }
        let nodes = records
            .into_iter()
            .map(|r| {
                Ok(match r.kind {
                    NodeKindRecord::Lit { var, value } => Node::Literal {
                        var,
                        value: match value {
                            BoolLike::Bool(b) => b,
                            BoolLike::Int(0) => false,
                            BoolLike::Int(1) => true,
                            BoolLike::Int(v) => {
                                return Err(Error::Parse(format!(
                                    "node {}: literal value {v} is not 0 or 1",
                                    r.id
                                )))
                            }
                        },
                    },
                    NodeKindRecord::Sum { children, weights } => Node::Sum { children, weights },
                    NodeKindRecord::Prod { children } => Node::Product { children },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Circuit::new(self.n, nodes, self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli(nodes: &mut Vec<Node>, var: usize, p: f64) -> usize {
        nodes.push(Node::Literal { var, value: true });
        nodes.push(Node::Literal { var, value: false });
        let t = nodes.len() - 2;
        nodes.push(Node::Sum {
            children: vec![t, t + 1],
            weights: vec![p, 1.0 - p],
        });
        nodes.len() - 1
    }

    fn uniform(n: usize) -> Circuit {
        let mut nodes = Vec::new();
        let leaves: Vec<usize> = (0..n).map(|v| bernoulli(&mut nodes, v, 0.5)).collect();
        nodes.push(Node::Product { children: leaves });
        let root = nodes.len() - 1;
        Circuit::new(n, nodes, root).unwrap()
    }

    #[test]
    fn single_literal_is_a_point_mass() {
        let c = Circuit::from_json(r#"{"n":1,"root":0,"nodes":[{"id":0,"kind":"lit","var":0,"value":1}]}"#)
            .unwrap();
        assert_eq!(c.num_features(), 1);
        let one = PartialInstance::full(&[true]);
        let zero = PartialInstance::full(&[false]);
        assert_eq!(c.marginal(&one), 1.0);
        assert_eq!(c.marginal(&zero), 0.0);
        assert_eq!(c.conditional(&PartialInstance::empty(1), &zero), Err(Error::ZeroEvidence));
    }

    #[test]
    fn uniform_one_var() {
        let text = r#"{"n":1,"root":2,"nodes":[
            {"id":0,"kind":"lit","var":0,"value":true},
            {"id":1,"kind":"lit","var":0,"value":false},
            {"id":2,"kind":"sum","children":[0,1],"weights":[0.5,0.5]}]}"#;
        let c = Circuit::from_json(text).unwrap();
        assert_eq!(c.marginal(&PartialInstance::full(&[true])), 0.5);
        assert_eq!(c.marginal(&PartialInstance::empty(1)), 1.0);
        let again = Circuit::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn decomposability_violation_names_node() {
        let text = r#"{"n":3,"root":2,"nodes":[
            {"id":0,"kind":"lit","var":2,"value":true},
            {"id":1,"kind":"lit","var":2,"value":false},
            {"id":2,"kind":"prod","children":[0,1]}]}"#;
        match Circuit::from_json(text) {
            Err(Error::InvalidCircuit { node: 2, property }) => {
                assert!(property.contains("decomposability"), "{property}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn smoothness_and_weight_checks() {
        let nodes = vec![
            Node::Literal { var: 0, value: true },
            Node::Literal { var: 1, value: true },
            Node::Sum {
                children: vec![0, 1],
                weights: vec![0.5, 0.5],
            },
        ];
        let err = Circuit::new(2, nodes, 2).unwrap_err();
        assert!(matches!(err, Error::InvalidCircuit { node: 2, ref property } if property.contains("smoothness")));

        let nodes = vec![
            Node::Literal { var: 0, value: true },
            Node::Literal { var: 0, value: false },
            Node::Sum {
                children: vec![0, 1],
                weights: vec![0.5, 0.6],
            },
        ];
        assert!(matches!(
            Circuit::new(1, nodes, 2),
            Err(Error::InvalidCircuit { node: 2, .. })
        ));
    }

    #[test]
    fn weights_within_tolerance_are_renormalized() {
        let nodes = vec![
            Node::Literal { var: 0, value: true },
            Node::Literal { var: 0, value: false },
            Node::Sum {
                children: vec![0, 1],
                weights: vec![0.3 + 4e-10, 0.7],
            },
        ];
        let c = Circuit::new(1, nodes, 2).unwrap();
        let Node::Sum { weights, .. } = &c.nodes()[2] else {
            unreachable!()
        };
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_forward_references_and_partial_scope() {
        let text = r#"{"n":1,"root":0,"nodes":[
            {"id":0,"kind":"sum","children":[1],"weights":[1.0]},
            {"id":1,"kind":"lit","var":0,"value":true}]}"#;
        assert!(Circuit::from_json(text).is_err());
        let text = r#"{"n":2,"root":0,"nodes":[{"id":0,"kind":"lit","var":0,"value":true}]}"#;
        assert!(Circuit::from_json(text).is_err());
        assert!(matches!(Circuit::from_json("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn uniform_two_vars_conditional() {
        let c = uniform(2);
        let q = PartialInstance::from_pairs(2, [(1, true)]).unwrap();
        let g = PartialInstance::from_pairs(2, [(0, true)]).unwrap();
        assert!((c.conditional(&q, &g).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(c.conditional(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn deep_product_switches_to_log_space() {
        let n = 1100;
        let c = uniform(n);
        let x = PartialInstance::full(&vec![true; n]);
        let pass = c.upward(&x);
        assert!(pass.is_log_space());
        let expected = -(n as f64) * std::f64::consts::LN_2;
        assert!((c.log_marginal(&x) - expected).abs() < 1e-9);
        let mut z = x.clone();
        z.unset(7);
        let samples = c.sample_conditional(&z, 50, 3).unwrap();
        assert!(samples.iter().all(|s| s.iter().enumerate().all(|(i, &v)| i == 7 || v)));
        assert!(samples.iter().any(|s| !s[7]));
    }

    #[test]
    fn sampling_full_evidence_returns_instance() {
        let c = uniform(3);
        let x = [true, false, true];
        let s = c
            .sample_conditional(&PartialInstance::full(&x), 10, 1)
            .unwrap();
        assert!(s.iter().all(|v| v == &x));
    }

    #[test]
    fn uniform_sampling_cell_frequencies() {
        let c = uniform(2);
        let s = c
            .sample_conditional(&PartialInstance::empty(2), 100_000, 42)
            .unwrap();
        let mut counts = [0usize; 4];
        for v in &s {
            counts[(v[0] as usize) * 2 + v[1] as usize] += 1;
        }
        for k in counts {
            assert!((k as f64 / 1e5 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let c = uniform(4);
        let e = PartialInstance::from_pairs(4, [(2, true)]).unwrap();
        let a = c.sample_conditional(&e, 3000, 9).unwrap();
        let b = c.sample_conditional(&e, 3000, 9).unwrap();
        let d = c.sample_conditional(&e, 3000, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        // a prefix of a longer run is the shorter run
        let short = c.sample_conditional(&e, 1500, 9).unwrap();
        assert_eq!(&a[..1500], &short[..]);
    }
}
