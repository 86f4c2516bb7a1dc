//! Probabilistic sufficient explanations for tree-ensemble classifiers.
//!
//! Given a complete binary instance `x`, a tree ensemble that maps instances
//! to log-odds, and a probabilistic circuit modelling the feature
//! distribution, this crate finds small subsets `z ⊆ x` whose expected
//! log-odds over the unobserved features `m ~ Pr(M | z)` is as high as
//! possible, preferring the most likely subset among equally good ones. The
//! same-decision probability of an explanation can be estimated by
//! conditional sampling or lower-bounded from its expected prediction.
//!
//! - [`circuit`]: marginals, conditionals, and conditional sampling.
//! - [`ensemble`]: the classifier, its leaf paths, and log-odds bounds.
//! - [`expectation`]: exact expected log-odds.
//! - [`guarantees`]: same-decision probability estimates and bounds.
//! - [`search`]: beam, exhaustive, logical, and threshold searches.
//! - [`oracle`]: brute-force references used to audit the above.

pub mod circuit;
pub mod ensemble;
pub mod error;
pub mod expectation;
pub mod guarantees;
pub mod instance;
pub mod oracle;
pub mod search;
pub mod stats;
pub mod synth;

pub use circuit::{Circuit, Node};
pub use ensemble::{sigmoid, Ensemble, PathConjunction, Tree, TreeNode};
pub use error::{Error, Result};
pub use expectation::{CallCounts, Evaluator, ExpectationResult};
pub use guarantees::{BoundVariant, SdpBound, SdpEstimate};
pub use instance::PartialInstance;
pub use search::{Explanation, LogicalMode, SearchResult};
