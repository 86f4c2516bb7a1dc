//! Searching for sufficient explanations.
//!
//! Candidates are subsets of the explained instance's features. They are
//! ranked by a class-normalized score (`EP_O` for positive instances,
//! `-EP_O` for negative ones), then by marginal probability, then by the
//! sorted feature list. Scores within [`EP_TIE_TOLERANCE`] count as tied.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::expectation::{CallCounts, Evaluator};
use crate::guarantees::{bound_from_expectation, sdp_sample, BoundVariant, SdpBound, SdpEstimate};
use crate::instance::PartialInstance;
use crate::oracle::EnumerationBudget;

/// Two scores closer than this are tied and the marginal decides.
pub const EP_TIE_TOLERANCE: f64 = 1e-9;

/// Largest feature count accepted by the logical brute force.
pub const LOGICAL_MAX_FEATURES: usize = 14;

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    /// Sorted feature indices of the candidate subset.
    pub features: Vec<usize>,
    /// Class-normalized score used for ranking.
    pub score: f64,
    pub expected_logodds: f64,
    pub log_marginal: f64,
}

impl BeamState {
    pub fn level(&self) -> usize {
        self.features.len()
    }

    pub fn marginal(&self) -> f64 {
        self.log_marginal.exp()
    }

    pub fn subset(&self, x: &[bool]) -> PartialInstance {
        PartialInstance::restrict(x, &self.features)
    }
}

/// Both SDP lower bounds; `None` where the bound is degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpBounds {
    pub logodds: Option<SdpBound>,
    pub approx: Option<SdpBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub features: Vec<usize>,
    /// Values of the explained instance on `features`.
    pub values: Vec<bool>,
    pub ep_logodds: f64,
    pub approx_ep: f64,
    pub marginal: f64,
    pub log_marginal: f64,
    pub sdp_estimate: Option<SdpEstimate>,
    pub sdp_bounds: SdpBounds,
    pub size: usize,
}

impl Explanation {
    pub fn subset(&self, n: usize) -> PartialInstance {
        let mut z = PartialInstance::empty(n);
        for (&f, &v) in self.features.iter().zip(&self.values) {
            z.set(f, v);
        }
        z
    }

    /// Estimates the SDP of this explanation by conditional sampling.
    pub fn estimate_sdp(
        &mut self,
        circuit: &Circuit,
        ensemble: &Ensemble,
        x: &[bool],
        samples: usize,
        seed: u64,
    ) -> Result<()> {
        let z = self.subset(x.len());
        self.sdp_estimate = Some(sdp_sample(circuit, ensemble, x, &z, samples, seed)?);
        Ok(())
    }
}

/// Oracle calls made by one search, per level (index 0 is the empty candidate).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchCounters {
    pub per_level: Vec<CallCounts>,
}

impl SearchCounters {
    /// Expected-prediction calls spent on expanded candidates (levels 1..k).
    pub fn expansion_ep_calls(&self) -> u64 {
        self.per_level.iter().skip(1).map(|c| c.ep_calls).sum()
    }

    /// Marginal calls spent on expanded candidates (levels 1..k).
    pub fn expansion_pr_calls(&self) -> u64 {
        self.per_level.iter().skip(1).map(|c| c.pr_calls).sum()
    }

    pub fn total(&self) -> CallCounts {
        self.per_level.iter().fold(CallCounts::default(), |a, c| CallCounts {
            ep_calls: a.ep_calls + c.ep_calls,
            pr_calls: a.pr_calls + c.pr_calls,
            circuit_passes: a.circuit_passes + c.circuit_passes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Whether the explained instance is classified positive.
    pub positive: bool,
    /// Best explanation of each size 1..=k.
    pub per_level: Vec<Explanation>,
    /// The tracked most likely sufficient explanation over sizes 0..=k.
    pub mlse: Explanation,
    /// Score of the tracked MLSE after each level 0..=k.
    pub mlse_trace: Vec<f64>,
    /// Features of the tracked MLSE after each level 0..=k.
    pub mlse_history: Vec<Vec<usize>>,
    pub counters: SearchCounters,
    /// Wall time spent on each level 1..=k.
    pub level_times: Vec<Duration>,
}

/// Orders candidates best first: score descending with tolerance ties, then
/// marginal descending, then feature list ascending.
///
/// Ties are resolved by first sorting on exact score and then grouping
/// neighbours within [`EP_TIE_TOLERANCE`], which keeps the order total.
pub fn rank_states(states: &mut [BeamState]) {
    states.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.features.cmp(&b.features))
    });
    let mut start = 0;
    while start < states.len() {
        let mut end = start + 1;
        while end < states.len() && states[end - 1].score - states[end].score <= EP_TIE_TOLERANCE {
            end += 1;
        }
        states[start..end].sort_by(|a, b| {
            b.log_marginal
                .total_cmp(&a.log_marginal)
                .then_with(|| a.features.cmp(&b.features))
        });
        start = end;
    }
}

/// Whether `candidate` replaces `current` as the tracked MLSE: a strictly
/// higher score, or a tied score with strictly higher marginal.
fn improves(candidate: &BeamState, current: &BeamState) -> bool {
    if candidate.score > current.score + EP_TIE_TOLERANCE {
        return true;
    }
    (candidate.score - current.score).abs() <= EP_TIE_TOLERANCE
        && candidate.log_marginal > current.log_marginal
}

struct Search<'a> {
    eval: Evaluator<'a>,
    x: &'a [bool],
    positive: bool,
}

impl<'a> Search<'a> {
    fn new(circuit: &'a Circuit, ensemble: &'a Ensemble, x: &'a [bool]) -> Result<Self> {
        let eval = Evaluator::new(circuit, ensemble)?;
        if x.len() != circuit.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "instance over {} features, models over {}",
                x.len(),
                circuit.num_features()
            )));
        }
        if circuit.log_marginal(&PartialInstance::full(x)) == f64::NEG_INFINITY {
            return Err(Error::ZeroEvidenceInstance);
        }
        Ok(Self {
            eval,
            x,
            positive: ensemble.classify_full(x),
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn sign(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// The empty candidate. Pr(∅) = 1 by normalization, so only EP is queried.
    fn root(&self) -> Result<BeamState> {
        let r = self.eval.expected_logodds(&PartialInstance::empty(self.n()))?;
        Ok(BeamState {
            features: Vec::new(),
            score: self.sign() * r.expected_logodds,
            expected_logodds: r.expected_logodds,
            log_marginal: 0.0,
        })
    }

    /// Evaluates Pr and EP for each candidate, dropping zero-marginal ones.
    /// Output order follows input order.
    fn evaluate(&self, candidates: Vec<Vec<usize>>) -> Result<Vec<BeamState>> {
        let evaluated: Vec<Option<BeamState>> = candidates
            .into_par_iter()
            .map(|features| {
                let z = PartialInstance::restrict(self.x, &features);
                let log_marginal = self.eval.log_marginal(&z)?;
                if log_marginal == f64::NEG_INFINITY {
                    return Ok(None);
                }
                let r = self.eval.expected_logodds(&z)?;
                Ok(Some(BeamState {
                    features,
                    score: self.sign() * r.expected_logodds,
                    expected_logodds: r.expected_logodds,
                    log_marginal,
                }))
            })
            .collect::<Result<_>>()?;
        Ok(evaluated.into_iter().flatten().collect())
    }

    /// All one-feature extensions of the beam, deduplicated, in sorted order.
    fn expand(&self, beam: &[BeamState]) -> Vec<Vec<usize>> {
        let mut out = BTreeSet::new();
        for state in beam {
            for f in 0..self.n() {
                if let Err(pos) = state.features.binary_search(&f) {
                    let mut next = state.features.clone();
                    next.insert(pos, f);
                    out.insert(next);
                }
            }
        }
        out.into_iter().collect()
    }

    fn explanation(&self, state: &BeamState) -> Result<Explanation> {
        let z = state.subset(self.x);
        let ensemble = self.eval.ensemble();
        let bound = |variant| match bound_from_expectation(
            ensemble,
            self.positive,
            state.expected_logodds,
            &z,
            variant,
        ) {
            Ok(b) => Ok(Some(b)),
            Err(Error::DegenerateBound) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Explanation {
            values: state.features.iter().map(|&f| self.x[f]).collect(),
            features: state.features.clone(),
            ep_logodds: state.expected_logodds,
            approx_ep: crate::ensemble::sigmoid(state.expected_logodds),
            marginal: state.marginal(),
            log_marginal: state.log_marginal,
            sdp_estimate: None,
            sdp_bounds: SdpBounds {
                logodds: bound(BoundVariant::LogoddsExactBound)?,
                approx: bound(BoundVariant::ApproxPredictionBound)?,
            },
            size: state.features.len(),
        })
    }

    fn snapshot(&self, before: &mut CallCounts) -> CallCounts {
        let now = self.eval.counts();
        let delta = CallCounts {
            ep_calls: now.ep_calls - before.ep_calls,
            pr_calls: now.pr_calls - before.pr_calls,
            circuit_passes: now.circuit_passes - before.circuit_passes,
        };
        *before = now;
        delta
    }
}

/// Beam search for the most likely sufficient explanation of size at most `k`.
///
/// Starting from the empty candidate, each level extends every beam member
/// by one unselected feature, merges duplicate subsets, evaluates EP and Pr
/// once per unique candidate, and keeps the best `beam_width`. The best
/// candidate of every level is reported, and the MLSE is replaced whenever a
/// level's best has a higher score, or a tied score and a higher marginal.
pub fn beam_search_mlse(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    k: usize,
    beam_width: usize,
) -> Result<SearchResult> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let search = Search::new(circuit, ensemble, x)?;
    let mut seen = CallCounts::default();
    let mut counters = SearchCounters::default();

    let root = search.root()?;
    counters.per_level.push(search.snapshot(&mut seen));
    let mut mlse = root.clone();
    let mut mlse_trace = vec![mlse.score];
    let mut mlse_history = vec![mlse.features.clone()];
    let mut beam = vec![root];
    let mut per_level = Vec::with_capacity(k);
    let mut level_times = Vec::with_capacity(k);

    for _level in 1..=k {
        let start = Instant::now();
        search.eval.clear_cache();
        let mut candidates = search.evaluate(search.expand(&beam))?;
        if candidates.is_empty() {
            break;
        }
        rank_states(&mut candidates);
        if improves(&candidates[0], &mlse) {
            mlse = candidates[0].clone();
        }
        per_level.push(search.explanation(&candidates[0])?);
        candidates.truncate(beam_width);
        beam = candidates;
        mlse_trace.push(mlse.score);
        mlse_history.push(mlse.features.clone());
        counters.per_level.push(search.snapshot(&mut seen));
        level_times.push(start.elapsed());
    }

    Ok(SearchResult {
        positive: search.positive,
        mlse: search.explanation(&mlse)?,
        per_level,
        mlse_trace,
        mlse_history,
        counters,
        level_times,
    })
}

/// Lexicographic `k`-combinations of `0..n`.
pub(crate) fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = (k <= n).then(|| (0..k).collect());
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let c = current.as_mut().unwrap();
        let mut i = k;
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            if c[i] < n - k + i {
                c[i] += 1;
                for j in i + 1..k {
                    c[j] = c[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Exact MLSE over every subset of size at most `k`, applying the same
/// ranking and update rule as the beam level by level.
pub fn exhaustive_mlse(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    k: usize,
) -> Result<Explanation> {
    let n = x.len();
    if k > n {
        return Err(Error::InvalidK { k, n });
    }
    let budget = EnumerationBudget::default();
    let needed: u64 = (0..=k).map(|i| binomial(n, i)).sum();
    if needed > budget.max_subsets {
        return Err(Error::BudgetExceeded {
            needed,
            budget: budget.max_subsets,
        });
    }
    let search = Search::new(circuit, ensemble, x)?;
    let mut mlse = search.root()?;
    for size in 1..=k {
        search.eval.clear_cache();
        let mut level = search.evaluate(combinations(n, size).collect())?;
        if level.is_empty() {
            continue;
        }
        rank_states(&mut level);
        if improves(&level[0], &mlse) {
            mlse = level[0].clone();
        }
    }
    search.explanation(&mlse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalMode {
    /// Only completions with positive probability must keep the decision.
    DistributionAware,
    /// Every completion must keep the decision (a classical sufficient reason).
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalExplanations {
    pub mode: LogicalMode,
    /// Minimum cardinality of a subset with SDP = 1.
    pub size: usize,
    /// Every subset of that size with SDP = 1, in lexicographic order.
    pub witnesses: Vec<Vec<usize>>,
}

/// Minimum-cardinality subsets of `x` whose completions all keep the decision.
///
/// A subset `z` fails exactly when some counterexample `y` (different
/// decision, and positive probability in distribution-aware mode) agrees
/// with `x` on `z`; so `z` qualifies when it hits the difference set of
/// every counterexample.
pub fn logical_explanations_bruteforce(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    mode: LogicalMode,
) -> Result<LogicalExplanations> {
    let n = x.len();
    if n > LOGICAL_MAX_FEATURES {
        return Err(Error::BudgetExceeded {
            needed: n as u64,
            budget: LOGICAL_MAX_FEATURES as u64,
        });
    }
    if n != ensemble.num_features() || n != circuit.num_features() {
        return Err(Error::DimensionMismatch("instance does not match models".into()));
    }
    let target = ensemble.classify_full(x);
    let x_mask: u32 = x
        .iter()
        .enumerate()
        .fold(0, |m, (i, &b)| if b { m | 1 << i } else { m });
    let mut y = vec![false; n];
    let mut counterexamples: Vec<u32> = Vec::new();
    for bits in 0u32..(1u32 << n) {
        for (i, v) in y.iter_mut().enumerate() {
            *v = bits >> i & 1 == 1;
        }
        if ensemble.classify_full(&y) == target {
            continue;
        }
        if mode == LogicalMode::DistributionAware
            && circuit.log_marginal(&PartialInstance::full(&y)) == f64::NEG_INFINITY
        {
            continue;
        }
        counterexamples.push(bits ^ x_mask);
    }
    counterexamples.sort_unstable();
    counterexamples.dedup();

    for size in 0..=n {
        let witnesses: Vec<Vec<usize>> = combinations(n, size)
            .filter(|features| {
                let mask = features.iter().fold(0u32, |m, &f| m | 1 << f);
                counterexamples.iter().all(|&d| d & mask != 0)
            })
            .collect();
        if !witnesses.is_empty() {
            return Ok(LogicalExplanations {
                mode,
                size,
                witnesses,
            });
        }
    }
    unreachable!("the full instance always qualifies")
}

/// Smallest explanation whose score reaches `ep_min`, most likely among
/// those of that size.
///
/// `ep_min` is compared against the class-normalized score (`EP_O` for
/// positive instances, `-EP_O` for negative ones). Runs the beam level by
/// level and stops at the first level with a qualifying candidate.
pub fn ep_threshold_search(
    circuit: &Circuit,
    ensemble: &Ensemble,
    x: &[bool],
    ep_min: f64,
    beam_width: usize,
) -> Result<Explanation> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let search = Search::new(circuit, ensemble, x)?;
    let root = search.root()?;
    if root.score >= ep_min {
        return search.explanation(&root);
    }
    let mut best = root.score;
    let mut beam = vec![root];
    for _level in 1..=x.len() {
        search.eval.clear_cache();
        let mut candidates = search.evaluate(search.expand(&beam))?;
        if candidates.is_empty() {
            break;
        }
        let qualifying = candidates
            .iter()
            .filter(|s| s.score >= ep_min)
            .min_by(|a, b| {
                b.log_marginal
                    .total_cmp(&a.log_marginal)
                    .then_with(|| a.features.cmp(&b.features))
            });
        if let Some(found) = qualifying {
            return search.explanation(found);
        }
        rank_states(&mut candidates);
        best = best.max(candidates[0].score);
        candidates.truncate(beam_width);
        beam = candidates;
    }
    Err(Error::Unreachable { best })
}
