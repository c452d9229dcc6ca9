//! Randomized verification harness: sorted-pairing formula against the
//! brute-force permutation oracle, the Hungarian solver against exhaustive
//! search, and the distance axioms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CrowdError, Result};
use crate::flow_engine::Configuration;
use crate::minimal_time::{
    brute_force_minimal_time, configuration_distance, sorted_pairing, BRUTE_FORCE_MAX_N,
};
use crate::transport_plan::hungarian;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub passed: usize,
    pub failed: usize,
    pub lines: Vec<String>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    fn record(&mut self, name: &str, failures: usize, trials: usize) {
        if failures == 0 {
            self.passed += 1;
            self.lines.push(format!("PASS {name} ({trials} trials)"));
        } else {
            self.failed += 1;
            self.lines
                .push(format!("FAIL {name} ({failures}/{trials} trials failed)"));
        }
    }
}

fn exhaustive_min_sum(n: usize, cost: &[f64]) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let total: f64 = (0..n).map(|i| cost[i * n + perm[i]]).sum();
        if total < best {
            best = total;
        }
        // next_permutation
        let mut i = n - 1;
        while i > 0 && perm[i - 1] >= perm[i] {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        let mut j = n - 1;
        while perm[j] <= perm[i - 1] {
            j -= 1;
        }
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Runs all oracle suites for sizes in the given range. Deterministic for a
/// fixed seed.
pub fn run_checks(min_size: usize, max_size: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    if max_size > BRUTE_FORCE_MAX_N {
        return Err(CrowdError::TooLargeN(max_size, BRUTE_FORCE_MAX_N));
    }
    if min_size < 1 || min_size > max_size {
        return Err(CrowdError::Validation(format!(
            "invalid size range {min_size}..{max_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport { passed: 0, failed: 0, lines: Vec::new() };

    // sorted-pairing formula vs brute force over permutations
    for n in min_size..=max_size {
        let mut failures = 0;
        for _ in 0..trials {
            let fwd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let bwd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let (sorted, sigma) = sorted_pairing(&fwd, &bwd);
            let (brute, _) = brute_force_minimal_time(&fwd, &bwd)?;
            let achieved = (0..n)
                .map(|i| fwd[i] + bwd[sigma[i]])
                .fold(f64::NEG_INFINITY, f64::max);
            if (sorted - brute).abs() > 1e-12 || (achieved - sorted).abs() > 1e-12 {
                failures += 1;
            }
        }
        report.record(&format!("sorted-pairing oracle n={n}"), failures, trials);
    }

    // Hungarian vs exhaustive search on dense random matrices
    for n in min_size..=max_size.min(7) {
        let mut failures = 0;
        for _ in 0..trials {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let assignment = hungarian(n, &cost);
            let total: f64 = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
            if (total - exhaustive_min_sum(n, &cost)).abs() > 1e-9 {
                failures += 1;
            }
        }
        report.record(&format!("assignment oracle n={n}"), failures, trials);
    }

    // distance axioms on random triples
    {
        let mut failures = 0;
        let triples = trials.min(100);
        for _ in 0..triples {
            let n = rng.gen_range(min_size..=max_size.min(6));
            let config = |rng: &mut ChaCha8Rng| -> Configuration {
                loop {
                    let pts: Vec<Vec<f64>> = (0..n)
                        .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                        .collect();
                    if let Ok(c) = Configuration::new(pts) {
                        return c;
                    }
                }
            };
            let a = config(&mut rng);
            let b = config(&mut rng);
            let c = config(&mut rng);
            let dab = configuration_distance(&a, &b)?.value;
            let dba = configuration_distance(&b, &a)?.value;
            let dbc = configuration_distance(&b, &c)?.value;
            let dac = configuration_distance(&a, &c)?.value;
            let daa = configuration_distance(&a, &a)?.value;
            // permutation of labels leaves the distance unchanged
            let mut shuffled = a.points.clone();
            shuffled.rotate_left(1);
            let d_shuf = configuration_distance(&Configuration { points: shuffled }, &b)?.value;
            let ok = dab >= 0.0
                && (dab - dba).abs() < 1e-9
                && daa < 1e-12
                && (dab - d_shuf).abs() < 1e-9
                && dac <= dab + dbc + 1e-9;
            if !ok {
                failures += 1;
            }
        }
        report.record("distance axioms", failures, triples);
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_pass_with_default_seed() {
        let r = run_checks(2, 6, 50, 42).unwrap();
        assert!(r.all_passed(), "{:?}", r.lines);
    }

    #[test]
    fn checks_are_deterministic() {
        let a = run_checks(2, 5, 20, 7).unwrap();
        let b = run_checks(2, 5, 20, 7).unwrap();
        assert_eq!(a.lines, b.lines);
    }

    #[test]
    fn checks_reject_large_sizes() {
        assert!(matches!(
            run_checks(2, 11, 10, 0),
            Err(CrowdError::TooLargeN(11, _))
        ));
    }
}
