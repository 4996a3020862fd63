use rand::Rng;

use crate::error::{Error, Result};

use super::Population;

/// Added to shifted fitnesses so the worst member keeps a non-zero share.
pub const SHIFT_EPSILON: f64 = 1e-6;

/// Fitness-proportional selection probabilities.
///
/// Non-negative fitnesses are used as they are. If any fitness is negative
/// all values are shifted to `f - min(f) + SHIFT_EPSILON` first, which keeps
/// the ordering and makes every share positive.
pub fn selection_probabilities(fitnesses: &[f64]) -> Result<Vec<f64>> {
    if fitnesses.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidConfig("non-finite fitness".into()));
    }
    let min = fitnesses.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = if min < 0.0 {
        fitnesses.iter().map(|f| f - min + SHIFT_EPSILON).collect()
    } else {
        fitnesses.to_vec()
    };
    let total: f64 = shifted.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroFitness);
    }
    Ok(shifted.into_iter().map(|f| f / total).collect())
}

/// Roulette-wheel draw; returns the selected member's index.
pub fn select_proportional<R: Rng + ?Sized>(pop: &Population, rng: &mut R) -> Result<usize> {
    let probs = selection_probabilities(&pop.fitnesses()?)?;
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return Ok(i);
        }
        u -= p;
    }
    // rounding left a sliver past the last bucket
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

/// Best of `k` uniform draws with replacement; ties go to the lower index.
pub fn select_tournament<R: Rng + ?Sized>(pop: &Population, k: usize, rng: &mut R) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidConfig("tournament size must be at least 1".into()));
    }
    let fitness = pop.fitnesses()?;
    if fitness.is_empty() {
        return Err(Error::InvalidConfig("empty population".into()));
    }
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..k {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] > fitness[best] || (fitness[c] == fitness[best] && c < best) {
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Individual;
    use crate::policies::Chromosome;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn pop(fitness: &[f64]) -> Population {
        Population {
            members: fitness
                .iter()
                .map(|&f| Individual { chromosome: Chromosome::Discrete(vec![]), fitness: Some(f), age: 0 })
                .collect(),
            generation: 0,
        }
    }

    #[test]
    fn roulette_share_of_grid_policy_three() {
        let p = selection_probabilities(&[8.0, 9.0, 17.0, 11.0, 16.0]).unwrap();
        assert!((p[2] - 17.0 / 61.0).abs() < 1e-15);
    }

    #[test]
    fn twice_the_fitness_twice_the_offspring() {
        let p = selection_probabilities(&[3.0, 6.0]).unwrap();
        assert!((p[1] / p[0] - 2.0).abs() < 1e-12);
        let population = pop(&[3.0, 6.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 30_000;
        let hits = (0..n).filter(|_| select_proportional(&population, &mut rng).unwrap() == 1).count();
        // binomial(30000, 2/3): sd ~ 82
        assert!((hits as f64 - n as f64 * 2.0 / 3.0).abs() < 4.0 * 82.0);
    }

    #[test]
    fn negative_fitness_is_shifted() {
        let p = selection_probabilities(&[-4.0, 1.0, 3.0]).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1e-6);
        assert!(p[2] > p[1]);
    }

    #[test]
    fn all_zero_is_an_error() {
        assert_eq!(selection_probabilities(&[0.0, 0.0]), Err(Error::AllZeroFitness));
    }

    #[test]
    fn single_member_always_selected() {
        let population = pop(&[0.3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(select_proportional(&population, &mut rng).unwrap(), 0);
            assert_eq!(select_tournament(&population, 2, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn binary_tournament_between_two_members() {
        // four equiprobable draws, the better member wins three
        let population = pop(&[1.0, 2.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 40_000;
        let wins = (0..n).filter(|_| select_tournament(&population, 2, &mut rng).unwrap() == 1).count();
        let sd = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((wins as f64 - 0.75 * n as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn full_size_tournament_finds_best_often() {
        let n = 6usize;
        let population = pop(&[1.0, 5.0, 2.0, 4.0, 3.0, 0.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let trials = 20_000;
        let hits = (0..trials).filter(|_| select_tournament(&population, n, &mut rng).unwrap() == 1).count();
        let exact = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
        let sd = (trials as f64 * exact * (1.0 - exact)).sqrt();
        assert!((hits as f64 - exact * trials as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn tournament_of_one_is_uniform() {
        let population = pop(&[1.0, 100.0, 3.0, 4.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[select_tournament(&population, 1, &mut rng).unwrap()] += 1;
        }
        let sd = (40_000.0f64 * 0.25 * 0.75).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - 10_000.0).abs() < 4.0 * sd), "{counts:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn probabilities_sum_to_one(f in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            if let Ok(p) = selection_probabilities(&f) {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
