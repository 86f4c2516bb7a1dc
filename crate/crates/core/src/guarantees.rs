//! Same-decision probability: Monte-Carlo estimates, exact small-case
//! values, and lower bounds derived from the expected prediction.
//!
//! For a positively classified instance, any predictor bound `U(z)` over the
//! completions of `z` gives
//!
//! ```text
//! SDP(z) > (EP(z) - T) / (U(z) - T)
//! ```
//!
//! and for a negative instance with lower bound `L(z)`,
//! `SDP(z) >= (T - EP(z)) / (T - L(z))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{chunk_rng, Circuit, Sampler, SAMPLE_CHUNK};
use crate::ensemble::{sigmoid, Ensemble};
use crate::error::{Error, Result};
use crate::expectation::{expected_logodds, MAX_ENUMERATION_FREE_VARS};
use crate::instance::PartialInstance;

/// Conditional samples per SDP estimate unless overridden.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpEstimate {
    pub value: f64,
    pub samples: usize,
    pub seed: u64,
    /// Binomial standard error `sqrt(value (1 - value) / samples)`.
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// Exact expected log-odds against the consistent-leaf bound. A
    /// guaranteed lower bound.
    LogoddsExactBound,
    /// `sigmoid(EP_O)` against the trivial probability bound (1, or 0 for
    /// negative instances). Not guaranteed, since `sigmoid(EP_O)` only
    /// approximates the expected prediction.
    ApproxPredictionBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpBound {
    /// Unclamped; values at or below zero are vacuous.
    pub value: f64,
    pub variant: BoundVariant,
    pub ep_used: f64,
    /// `U(z)` for positive instances, `L(z)` for negative ones.
    pub bound_u_or_l: f64,
    pub threshold: f64,
}

impl SdpBound {
    pub fn guaranteed(&self) -> bool {
        self.variant == BoundVariant::LogoddsExactBound
    }

    /// The bound clamped to [0, 1] for reporting.
    pub fn clamped(&self) -> f64 {
        self.value.clamp(0.0, 1.0)
    }
}

fn check_subset(x: &[bool], z: &PartialInstance) -> Result<()> {
    if z.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "explanation over {} features, instance over {}",
            z.len(),
            x.len()
        )));
    }
    if z.assigned().any(|(f, v)| x[f] != v) {
        return Err(Error::SubsetViolation);
    }
    Ok(())
}

/// Fraction of `samples` draws `m ~ Pr(M | z)` with `C(zm) = C(x)`.
///
/// Draws follow [`Circuit::sample_conditional`]'s chunking, so the estimate
/// is identical for any number of threads.
pub fn sdp_sample(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    z: &PartialInstance,
    samples: usize,
    seed: u64,
) -> Result<SdpEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    check_subset(x, z)?;
    let sampler = Sampler::new(circuit, z)?;
    let target = ensemble.classify_full(x);
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let same: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = chunk_rng(seed, chunk as u64);
            let len = SAMPLE_CHUNK.min(samples - chunk * SAMPLE_CHUNK);
            let mut buf = Vec::with_capacity(x.len());
            let mut hits = 0u64;
            for _ in 0..len {
                sampler.draw(&mut rng, &mut buf);
                hits += u64::from(ensemble.classify_full(&buf) == target);
            }
            hits
        })
        .sum();
    let value = same as f64 / samples as f64;
    Ok(SdpEstimate {
        value,
        samples,
        seed,
        std_error: (value * (1.0 - value) / samples as f64).sqrt(),
    })
}

/// Exact SDP by weighting every completion of `z`.
pub fn sdp_exact_smallcase(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    z: &PartialInstance,
) -> Result<f64> {
    check_subset(x, z)?;
    let free = z.free_vars();
    if free.len() > MAX_ENUMERATION_FREE_VARS {
        return Err(Error::BudgetExceeded {
            needed: free.len() as u64,
            budget: MAX_ENUMERATION_FREE_VARS as u64,
        });
    }
    let log_z = circuit.log_marginal(z);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidence);
    }
    let target = ensemble.classify_full(x);
    let mut y = x.to_vec();
    let mut total = 0.0;
    for bits in 0u64..(1u64 << free.len()) {
        for (j, &f) in free.iter().enumerate() {
            y[f] = bits >> j & 1 == 1;
        }
        if ensemble.classify_full(&y) == target {
            let lp = circuit.log_marginal(&PartialInstance::full(&y));
            if lp > f64::NEG_INFINITY {
                total += (lp - log_z).exp();
            }
        }
    }
    Ok(total)
}

/// `(ep - threshold) / (upper - threshold)`.
pub fn sufficiency_bound(ep: f64, upper: f64, threshold: f64) -> Result<f64> {
    if upper == threshold {
        return Err(Error::DegenerateBound);
    }
    Ok((ep - threshold) / (upper - threshold))
}

/// SDP lower bound from an already computed expected log-odds.
///
/// `positive` is the decision on the explained instance; negative instances
/// use the mirrored bound.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn bound_from_expectation(
    ensemble: &Ensemble,
    positive: bool,
    expected_logodds: f64,
    z: &PartialInstance,
    variant: BoundVariant,
) -> Result<SdpBound> {
    let (ep_used, bound_u_or_l, threshold) = match variant {
        BoundVariant::LogoddsExactBound => {
            let b = if positive {
                ensemble.upper_bound_logodds(z)?
            } else {
                ensemble.lower_bound_logodds(z)?
            };
            (expected_logodds, b, ensemble.threshold())
        }
        BoundVariant::ApproxPredictionBound => (
            sigmoid(expected_logodds),
            if positive { 1.0 } else { 0.0 },
            sigmoid(ensemble.threshold()),
        ),
    };
    let value = if positive {
        if !(bound_u_or_l > threshold) {
            return Err(Error::DegenerateBound);
        }
        (ep_used - threshold) / (bound_u_or_l - threshold)
    } else {
        if !(bound_u_or_l < threshold) {
            return Err(Error::DegenerateBound);
        }
        (threshold - ep_used) / (threshold - bound_u_or_l)
    };
    Ok(SdpBound {
        value,
        variant,
        ep_used,
        bound_u_or_l,
        threshold,
    })
}

/// SDP lower bound for explanation `z` of the full instance `x`.
pub fn sdp_lower_bound(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    z: &PartialInstance,
    variant: BoundVariant,
) -> Result<SdpBound> {
    check_subset(x, z)?;
    let ep = expected_logodds(circuit, ensemble, z)?;
    bound_from_expectation(
        ensemble,
        ensemble.classify_full(x),
        ep.expected_logodds,
        z,
        variant,
    )
}

/// A predictor distribution with two support points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointDistribution {
    pub upper: f64,
    pub p_upper: f64,
    pub lower: f64,
    pub p_lower: f64,
}

impl TwoPointDistribution {
    pub fn mean(&self) -> f64 {
        self.upper * self.p_upper + self.lower * self.p_lower
    }

    /// Probability mass at or above `threshold`.
    pub fn same_decision_probability(&self, threshold: f64) -> f64 {
        let mut sdp = 0.0;
        if self.upper >= threshold {
            sdp += self.p_upper;
        }
        if self.lower >= threshold {
            sdp += self.p_lower;
        }
        sdp
    }
}

/// Two-point distribution with mean `f`, maximum `u`, and a same-decision
/// probability exceeding the lower bound `(f - t) / (u - t)` by exactly
/// `epsilon`: mass `(f - t)/(u - t) + ε` at `u`, the rest at a point
/// `a < t` chosen to keep the mean at `f`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
pub fn tightness_construction(f: f64, u: f64, t: f64, epsilon: f64) -> Result<TwoPointDistribution> {
    if !(t < u && f < u) {
        return Err(Error::InfeasibleEpsilon(format!(
            "need t < u and f < u, got f = {f}, u = {u}, t = {t}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InfeasibleEpsilon(format!("epsilon {epsilon} must be positive")));
    }
    let p_upper = (f - t) / (u - t) + epsilon;
    let p_lower = (u - f) / (u - t) - epsilon;
    if !(p_upper > 0.0 && p_lower > 0.0) {
        return Err(Error::InfeasibleEpsilon(format!(
            "epsilon {epsilon} gives masses {p_upper} and {p_lower}"
        )));
    }
    let lower = (t * (u - f) - u * (u - t) * epsilon) / ((u - f) - (u - t) * epsilon);
    if !(lower < t) {
        return Err(Error::InfeasibleEpsilon(format!(
            "lower support point {lower} is not below the threshold"
        )));
    }
    Ok(TwoPointDistribution {
        upper: u,
        p_upper,
        lower,
        p_lower,
    })
}
