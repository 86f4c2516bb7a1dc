//! Partial assignments to binary features.

use crate::error::{Error, Result};

/// An assignment to a subset of `n` binary features.
///
/// Empty instances carry no evidence; full instances are complete examples.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialInstance {
    values: Vec<Option<bool>>,
}

impl PartialInstance {
    /// No evidence over `n` features.
    pub fn empty(n: usize) -> Self {
        Self {
            values: vec![None; n],
        }
    }

    pub fn full(values: &[bool]) -> Self {
        Self {
            values: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn from_options(values: Vec<Option<bool>>) -> Self {
        Self { values }
    }

    /// Builds an instance from `(feature, value)` pairs, rejecting
    /// out-of-range indices and features assigned twice.
    pub fn from_pairs<I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, bool)>,
    {
        let mut out = Self::empty(n);
        for (var, value) in pairs {
            if var >= n {
                return Err(Error::InvalidInstance(format!(
                    "feature {var} out of range for {n} features"
                )));
            }
            if out.values[var].is_some() {
                return Err(Error::InvalidInstance(format!(
                    "feature {var} assigned more than once"
                )));
            }
            out.values[var] = Some(value);
        }
        Ok(out)
    }

    /// Restriction of a full instance `x` to the listed features.
    pub fn restrict(x: &[bool], features: &[usize]) -> Self {
        let mut out = Self::empty(x.len());
        for &f in features {
            out.values[f] = Some(x[f]);
        }
        out
    }

    /// Total feature count `n`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, var: usize) -> Option<bool> {
        self.values[var]
    }

    pub fn set(&mut self, var: usize, value: bool) {
        self.values[var] = Some(value);
    }

    pub fn unset(&mut self, var: usize) {
        self.values[var] = None;
    }

    pub fn values(&self) -> &[Option<bool>] {
        &self.values
    }

    pub fn num_assigned(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_full(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Assigned `(feature, value)` pairs in increasing feature order.
    pub fn assigned(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|b| (i, b)))
    }

    /// Indices of unassigned features in increasing order.
    pub fn free_vars(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// The complete assignment, if every feature is set.
    pub fn to_full(&self) -> Option<Vec<bool>> {
        self.values.iter().copied().collect()
    }

    pub fn require_full(&self) -> Result<Vec<bool>> {
        self.to_full()
            .ok_or(Error::IncompleteInstance { expected: self.len() })
    }

    /// True when no feature is assigned differently in `self` and `other`.
    pub fn consistent_with(&self, other: &PartialInstance) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            })
    }

    /// True when every assignment in `other` also appears in `self`.
    pub fn extends(&self, other: &PartialInstance) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| b.is_none() || a == b)
    }

    /// Concatenation of two consistent partial instances.
    pub fn union(&self, other: &PartialInstance) -> Result<PartialInstance> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {} features",
                self.len(),
                other.len()
            )));
        }
        let mut out = self.clone();
        for (i, v) in other.assigned() {
            match out.values[i] {
                Some(w) if w != v => return Err(Error::InconsistentEvidence { feature: i }),
                _ => out.values[i] = Some(v),
            }
        }
        Ok(out)
    }

    /// Canonical byte encoding (0, 1, or 2 for unassigned) used as a cache key.
    pub fn key(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| match v {
                Some(false) => 0,
                Some(true) => 1,
                None => 2,
            })
            .collect()
    }
}
