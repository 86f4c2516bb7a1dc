//! Oracle agreement checks on user models.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suffx_core::guarantees::{sdp_lower_bound, sdp_sample};
use suffx_core::oracle::{
    ep_by_enumeration, joint_table, naive_log_odds, sdp_by_enumeration, EnumerationBudget,
};
use suffx_core::synth::random_subset;
use suffx_core::{BoundVariant, Circuit, Error, Evaluator, Node, PartialInstance};

use crate::commands::load_models;
use crate::error::CliResult;
use crate::input::load_instances;
use crate::{Mutation, RunConfig};

pub const MARGINAL_TOLERANCE: f64 = 1e-10;
pub const EP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub total: usize,
    pub failed: usize,
    /// Failures tolerated before the check fails (sampling checks only).
    pub allowed: usize,
    pub worst: f64,
    pub skipped: Option<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            total: 0,
            failed: 0,
            allowed: 0,
            worst: 0.0,
            skipped: None,
        }
    }

    fn record(&mut self, ok: bool, err: f64) {
        self.total += 1;
        if !ok {
            self.failed += 1;
        }
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    pub fn passed(&self) -> bool {
        self.skipped.is_some() || self.failed <= self.allowed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.to_string())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<20} {:>7} {:>7} {:>12}  status\n", "check", "cases", "failed", "worst");
        for c in &self.checks {
            let status = match &c.skipped {
                Some(why) => format!("SKIP ({why})"),
                None if c.passed() => "PASS".to_string(),
                None => "FAIL".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<20} {:>7} {:>7} {:>12.3e}  {status}",
                c.name, c.total, c.failed, c.worst
            );
        }
        out
    }
}

/// Scales the first weight of the last sum node, leaving the sum unnormalized.
pub fn corrupt_weights(circuit: &Circuit) -> Circuit {
    let mut nodes = circuit.nodes().to_vec();
    if let Some(Node::Sum { weights, .. }) = nodes.iter_mut().rev().find(|n| matches!(n, Node::Sum { .. })) {
        weights[0] *= 1.5;
    }
    Circuit::from_nodes_unchecked(circuit.num_features(), nodes, circuit.root())
}

/// EP with every path probability paired with the next leaf's weight.
fn shifted_leaf_ep(eval: &Evaluator, z: &PartialInstance) -> suffx_core::Result<f64> {
    let probs = eval.path_probabilities(z)?;
    let ensemble = eval.ensemble();
    let mut ep = ensemble.base_score();
    for (paths, p) in ensemble.leaf_paths().iter().zip(&probs) {
        for (l, pl) in p.iter().enumerate() {
            ep += pl * paths[(l + 1) % paths.len()].leaf_weight;
        }
    }
    Ok(ep)
}

fn budget_note(e: &Error) -> Option<String> {
    match e {
        Error::BudgetExceeded { needed, budget } => Some(format!("needs {needed}, budget {budget}")),
        _ => None,
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> CliResult<ValidationReport> {
    let (circuit, ensemble) = load_models(cfg)?;
    let n = circuit.num_features();
    let instances = match &cfg.instances_path {
        Some(p) => {
            let inst = load_instances(p)?;
            inst.check(n, &p.display().to_string())?;
            inst.rows
        }
        None => circuit.sample_conditional(&PartialInstance::empty(n), cfg.checks.max(1), cfg.seed)?,
    };
    let production = match cfg.inject {
        Some(Mutation::Weight) => corrupt_weights(&circuit),
        _ => circuit.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let evidence: Vec<PartialInstance> = (0..cfg.checks)
        .map(|i| {
            if i == 0 {
                PartialInstance::empty(n)
            } else {
                let x = &instances[rng.gen_range(0..instances.len())];
                random_subset(x, rng.gen_range(0.2..0.8), &mut rng)
            }
        })
        .collect();
    let budget = EnumerationBudget::default();

    let checks = cfg.pool()?.install(|| {
        let mut checks = Vec::new();

        let mut marginal = CheckOutcome::new("marginal");
        match joint_table(&circuit) {
            Ok(table) => {
                for z in &evidence {
                    let err = (production.marginal(z) - table.marginal(z)).abs();
                    marginal.record(err <= MARGINAL_TOLERANCE, err);
                }
            }
            Err(e) => marginal.skipped = budget_note(&e),
        }
        checks.push(marginal);

        let eval = Evaluator::new(&production, &ensemble)?;
        let mut ep = CheckOutcome::new("expected_logodds");
        let mut bounds = CheckOutcome::new("leaf_bounds");
        for z in &evidence {
            let want = match ep_by_enumeration(&circuit, &ensemble, z, budget) {
                Ok((o, _)) => o,
                Err(Error::ZeroEvidence) => continue,
                Err(e) => {
                    ep.skipped = budget_note(&e);
                    bounds.skipped = ep.skipped.clone();
                    break;
                }
            };
            let got = match cfg.inject {
                Some(Mutation::Leaf) => shifted_leaf_ep(&eval, z)?,
                _ => eval.expected_logodds(z)?.expected_logodds,
            };
            let err = (got - want).abs();
            ep.record(err <= EP_TOLERANCE, err);

            let (lo, hi) = (ensemble.lower_bound_logodds(z)?, ensemble.upper_bound_logodds(z)?);
            let mut y: Vec<bool> = z.values().iter().map(|v| v.unwrap_or(false)).collect();
            let free = z.free_vars();
            let mut worst: f64 = 0.0;
            for bits in 0u64..1 << free.len() {
                for (j, &v) in free.iter().enumerate() {
                    y[v] = bits >> j & 1 == 1;
                }
                let o = naive_log_odds(&ensemble, &y);
                worst = worst.max(o - hi).max(lo - o);
            }
            bounds.record(worst <= 1e-12, worst.max(0.0));
        }
        checks.push(ep);
        checks.push(bounds);

        let mut bound = CheckOutcome::new("sdp_bound");
        let mut sampler = CheckOutcome::new("sdp_sampler");
        sampler.allowed = instances.len().min(cfg.checks) / 20;
        for (i, x) in instances.iter().take(cfg.checks.max(1)).enumerate() {
            if circuit.marginal(&PartialInstance::full(x)) == 0.0 {
                continue;
            }
            let z = random_subset(x, rng.gen_range(0.2..0.8), &mut rng);
            let exact = match sdp_by_enumeration(&circuit, &ensemble, x, &z, budget) {
                Ok(v) => v,
                Err(e) => {
                    bound.skipped = budget_note(&e);
                    sampler.skipped = bound.skipped.clone();
                    break;
                }
            };
            match sdp_lower_bound(&production, &ensemble, x, &z, BoundVariant::LogoddsExactBound) {
                Ok(b) => bound.record(b.value <= exact + 1e-12, (b.value - exact).max(0.0)),
                Err(Error::DegenerateBound) => {}
                Err(e) => return Err(e),
            }
            let est = sdp_sample(&production, &ensemble, x, &z, cfg.samples, cfg.seed.wrapping_add(i as u64))?;
            let sigma = (exact * (1.0 - exact) / cfg.samples as f64).sqrt();
            let err = (est.value - exact).abs();
            sampler.record(err <= 4.0 * sigma + 1e-12, err);
        }
        checks.push(bound);
        checks.push(sampler);
        Ok::<_, Error>(checks)
    })?;
    Ok(ValidationReport { checks })
}
