use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use suffx_core::oracle::{full_likelihood, joint_table};
use suffx_core::stats::pairwise_sum;
use suffx_core::synth::{random_circuit, random_subset};
use suffx_core::{Circuit, PartialInstance};

fn fixture(seed: u64) -> (Circuit, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=10);
    (random_circuit(n, 200, &mut rng), rng)
}

fn random_evidence(n: usize, rng: &mut ChaCha8Rng) -> PartialInstance {
    PartialInstance::from_options(
        (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => Some(false),
                1 => Some(true),
                _ => None,
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginal_matches_joint_table(seed in any::<u64>()) {
        let (c, mut rng) = fixture(seed);
        let table = joint_table(&c).unwrap();
        prop_assert!((table.total() - 1.0).abs() < 1e-9);
        prop_assert!((pairwise_sum(table.probs()) - table.total()).abs() < 1e-12);
        for _ in 0..10 {
            let e = random_evidence(c.num_features(), &mut rng);
            prop_assert!((c.marginal(&e) - table.marginal(&e)).abs() < 1e-10);
        }
    }

    #[test]
    fn total_probability_and_normalization(seed in any::<u64>()) {
        let (c, mut rng) = fixture(seed);
        let n = c.num_features();
        prop_assert!((c.marginal(&PartialInstance::empty(n)) - 1.0).abs() < 1e-10);
        let e = random_evidence(n, &mut rng);
        for v in e.free_vars() {
            let mut a = e.clone();
            a.set(v, true);
            let mut b = e.clone();
            b.set(v, false);
            prop_assert!((c.marginal(&a) + c.marginal(&b) - c.marginal(&e)).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_is_monotone_under_extension(seed in any::<u64>()) {
        let (c, mut rng) = fixture(seed);
        let n = c.num_features();
        let small = random_evidence(n, &mut rng);
        let mut big = small.clone();
        for v in small.free_vars() {
            if rng.gen_bool(0.5) {
                big.set(v, rng.gen_bool(0.5));
            }
        }
        prop_assert!(c.marginal(&small) >= c.marginal(&big));
    }

    #[test]
    fn conditional_matches_enumeration_ratio(seed in any::<u64>()) {
        let (c, mut rng) = fixture(seed);
        let n = c.num_features();
        let table = joint_table(&c).unwrap();
        let x = c.sample_conditional(&PartialInstance::empty(n), 1, rng.gen()).unwrap().remove(0);
        let given = random_subset(&x, 0.5, &mut rng);
        let query = random_subset(&x, 0.5, &mut rng);
        let joint = query.union(&given).unwrap();
        let expected = table.marginal(&joint) / table.marginal(&given);
        prop_assert!((c.conditional(&query, &given).unwrap() - expected).abs() < 1e-10);
    }
}

#[test]
fn conditional_of_itself_is_one() {
    let (c, mut rng) = fixture(11);
    let x = c
        .sample_conditional(&PartialInstance::empty(c.num_features()), 1, 5)
        .unwrap()
        .remove(0);
    let z = random_subset(&x, 0.5, &mut rng);
    assert!((c.conditional(&z, &z).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn samples_extend_evidence_and_follow_conditionals() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let c = random_circuit(8, 300, &mut rng);
    let table = joint_table(&c).unwrap();
    let x = c
        .sample_conditional(&PartialInstance::empty(8), 1, 1)
        .unwrap()
        .remove(0);
    let given = PartialInstance::restrict(&x, &[0, 3, 5]);
    let count = 100_000;
    let samples = c.sample_conditional(&given, count, 2024).unwrap();
    assert!(samples
        .iter()
        .all(|s| PartialInstance::full(s).extends(&given)));

    // chi-square over the 32 completion cells of the free variables
    let free = given.free_vars();
    let mut observed = vec![0usize; 1 << free.len()];
    for s in &samples {
        let cell = free
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &f)| acc | (usize::from(s[f]) << j));
        observed[cell] += 1;
    }
    let denom = table.marginal(&given);
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (cell, &obs) in observed.iter().enumerate() {
        let mut y = x.clone();
        for (j, &f) in free.iter().enumerate() {
            y[f] = cell >> j & 1 == 1;
        }
        let expected = full_likelihood(&c, &y) / denom * count as f64;
        if expected > 0.0 {
            chi2 += (obs as f64 - expected).powi(2) / expected;
            dof += 1;
        } else {
            assert_eq!(obs, 0, "sampled a zero-probability completion");
        }
    }
    // p ≈ 1e-4 critical value for ≤ 31 degrees of freedom is below 70
    assert!(chi2 < 70.0, "chi2 = {chi2} with {dof} cells");
}

#[test]
fn sampling_is_bit_identical_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = random_circuit(10, 300, &mut rng);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                c.sample_conditional(&PartialInstance::empty(10), 10_000, 77)
                    .unwrap()
            })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(16));
}
