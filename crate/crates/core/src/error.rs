use thiserror::Error;

/// Errors produced by model loading, inference, and search.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("circuit node {node}: {property}")]
    InvalidCircuit { node: usize, property: String },

    #[error("tree {tree}, node {node}: {reason}")]
    InvalidTree {
        tree: usize,
        node: usize,
        reason: String,
    },

    #[error("tree {tree}: feature {feature} tested twice on one root-to-leaf path")]
    RepeatedFeatureOnPath { tree: usize, feature: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("instance does not assign all {expected} features")]
    IncompleteInstance { expected: usize },

    #[error("evidence is inconsistent at feature {feature}")]
    InconsistentEvidence { feature: usize },

    #[error("evidence has zero probability")]
    ZeroEvidence,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("enumeration budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("explanation is not a subset of the explained instance")]
    SubsetViolation,

    #[error("degenerate bound: bound on the predictor equals the threshold")]
    DegenerateBound,

    #[error("infeasible epsilon: {0}")]
    InfeasibleEpsilon(String),

    #[error("invalid k = {k} for {n} features")]
    InvalidK { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("explained instance has zero probability under the circuit")]
    ZeroEvidenceInstance,

    #[error("no leaf consistent with the evidence in tree {tree}")]
    NoConsistentLeaf { tree: usize },

    #[error("threshold unreachable; best score attained is {best}")]
    Unreachable { best: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
