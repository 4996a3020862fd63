use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::policies::{Chromosome, Condition, Rule, Schema};

/// Default standard deviation for real-gene mutation.
pub const DEFAULT_SIGMA: f64 = 0.3;

fn splice<T: Clone>(a: &[T], b: &[T], cut: usize) -> (Vec<T>, Vec<T>) {
    let c1 = a[..cut].iter().chain(&b[cut..]).cloned().collect();
    let c2 = b[..cut].iter().chain(&a[cut..]).cloned().collect();
    (c1, c2)
}

/// One-point crossover at a fixed cut: child 1 takes `p1[..cut] ++ p2[cut..]`.
pub fn one_point_crossover_at(p1: &Chromosome, p2: &Chromosome, cut: usize) -> Result<(Chromosome, Chromosome)> {
    if p1.len() != p2.len() {
        return Err(Error::LengthMismatch { left: p1.len(), right: p2.len() });
    }
    if cut > p1.len() {
        return Err(Error::InvalidConfig(format!("cut {cut} beyond length {}", p1.len())));
    }
    match (p1, p2) {
        (Chromosome::Discrete(a), Chromosome::Discrete(b)) => {
            let (c1, c2) = splice(a, b, cut);
            Ok((Chromosome::Discrete(c1), Chromosome::Discrete(c2)))
        }
        (
            Chromosome::Real { genes: a, crossover_gene: ga },
            Chromosome::Real { genes: b, crossover_gene: gb },
        ) => {
            let (c1, c2) = splice(a, b, cut);
            Ok((
                Chromosome::Real { genes: c1, crossover_gene: *ga },
                Chromosome::Real { genes: c2, crossover_gene: *gb },
            ))
        }
        (Chromosome::Rules(a), Chromosome::Rules(b)) => {
            let (c1, c2) = splice(a, b, cut);
            Ok((Chromosome::Rules(c1), Chromosome::Rules(c2)))
        }
        _ => Err(Error::SchemaMismatch("cannot cross chromosomes of different kinds".into())),
    }
}

/// One-point crossover with the cut drawn uniformly from `1..len`.
/// Chromosomes shorter than two genes come back unchanged.
pub fn one_point_crossover<R: Rng + ?Sized>(
    p1: &Chromosome,
    p2: &Chromosome,
    rng: &mut R,
) -> Result<(Chromosome, Chromosome)> {
    if p1.len() != p2.len() {
        return Err(Error::LengthMismatch { left: p1.len(), right: p2.len() });
    }
    if p1.len() < 2 {
        return one_point_crossover_at(p1, p2, 0);
    }
    let cut = rng.random_range(1..p1.len());
    one_point_crossover_at(p1, p2, cut)
}

/// Per-gene mutation. Discrete genes switch to a different symbol, real genes
/// get Gaussian noise, rule genes change their action or one condition.
/// A crossover-rate gene is left alone.
pub fn mutate<R: Rng + ?Sized>(
    chromosome: &Chromosome,
    rate: f64,
    sigma: f64,
    schema: &Schema,
    rng: &mut R,
) -> Chromosome {
    let mut out = chromosome.clone();
    if rate <= 0.0 {
        return out;
    }
    match &mut out {
        Chromosome::Discrete(genes) => {
            let n = schema.num_actions();
            if n > 1 {
                for g in genes.iter_mut() {
                    if rng.random_bool(rate.min(1.0)) {
                        let other = rng.random_range(0..n - 1);
                        *g = if other >= *g { other + 1 } else { other };
                    }
                }
            }
        }
        Chromosome::Real { genes, .. } => {
            let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
            for g in genes.iter_mut() {
                if rng.random_bool(rate.min(1.0)) {
                    *g += normal.sample(rng);
                }
            }
        }
        Chromosome::Rules(rules) => {
            let Schema::Rules { sensor_bounds: bounds, num_actions: n_actions, .. } = schema else {
                return chromosome.clone();
            };
            for rule in rules.iter_mut() {
                if rng.random_bool(rate.min(1.0)) {
                    mutate_rule(rule, bounds, *n_actions, rng);
                }
            }
        }
    }
    out
}

fn mutate_rule<R: Rng + ?Sized>(rule: &mut Rule, bounds: &[(i64, i64)], n_actions: usize, rng: &mut R) {
    let slot = rng.random_range(0..=rule.conditions.len());
    if slot == rule.conditions.len() {
        if n_actions > 1 {
            let other = rng.random_range(0..n_actions - 1);
            rule.action = if other >= rule.action { other + 1 } else { other };
        }
        return;
    }
    let (lo_b, hi_b) = bounds[slot];
    let c = &mut rule.conditions[slot];
    *c = match *c {
        Condition::Any => Condition::Exact(rng.random_range(lo_b..=hi_b)),
        Condition::Exact(v) => {
            if rng.random_bool(0.5) {
                Condition::Any
            } else {
                jitter(v, v, lo_b, hi_b, rng)
            }
        }
        Condition::Range { lo, hi } => jitter(lo, hi, lo_b, hi_b, rng),
    };
}

/// Moves one endpoint by one step, keeping `lo <= hi` and the sensor bounds.
fn jitter<R: Rng + ?Sized>(lo: i64, hi: i64, lo_b: i64, hi_b: i64, rng: &mut R) -> Condition {
    let step = if rng.random_bool(0.5) { 1 } else { -1 };
    let (mut lo, mut hi) = if rng.random_bool(0.5) { (lo + step, hi) } else { (lo, hi + step) };
    lo = lo.clamp(lo_b, hi_b);
    hi = hi.clamp(lo_b, hi_b);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    Condition::Range { lo, hi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_grid_world;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn cut_at_three_splices_segments() {
        let p1 = Chromosome::Discrete(vec![0, 0, 0, 0, 0, 0]);
        let p2 = Chromosome::Discrete(vec![1, 1, 1, 1, 1, 1]);
        let (c1, c2) = one_point_crossover_at(&p1, &p2, 3).unwrap();
        assert_eq!(c1, Chromosome::Discrete(vec![0, 0, 0, 1, 1, 1]));
        assert_eq!(c2, Chromosome::Discrete(vec![1, 1, 1, 0, 0, 0]));
    }

    #[test]
    fn identical_parents_give_identical_children() {
        let p = Chromosome::Discrete(vec![0, 1, 1, 0, 1]);
        let (c1, c2) = one_point_crossover(&p, &p, &mut rng(0)).unwrap();
        assert_eq!((c1, c2), (p.clone(), p));
    }

    #[test]
    fn length_mismatch() {
        let a = Chromosome::Discrete(vec![0, 1]);
        let b = Chromosome::Discrete(vec![0, 1, 1]);
        assert_eq!(
            one_point_crossover(&a, &b, &mut rng(0)),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn rate_zero_is_identity_rate_one_changes_everything() {
        let env = make_grid_world();
        let schema = Schema::tabular(&env);
        let c = schema.random(&mut rng(1));
        assert_eq!(mutate(&c, 0.0, DEFAULT_SIGMA, &schema, &mut rng(2)), c);
        let m = mutate(&c, 1.0, DEFAULT_SIGMA, &schema, &mut rng(2));
        let (a, b) = (c.as_discrete().unwrap(), m.as_discrete().unwrap());
        assert!(a.iter().zip(b).all(|(x, y)| x != y));
    }

    #[test]
    fn mutation_count_matches_binomial_mean() {
        let env = make_grid_world();
        let schema = Schema::tabular(&env);
        let mut r = rng(3);
        let trials = 10_000;
        let mut total = 0usize;
        for _ in 0..trials {
            let c = schema.random(&mut r);
            let m = mutate(&c, 0.01, DEFAULT_SIGMA, &schema, &mut r);
            total += c.as_discrete().unwrap().iter().zip(m.as_discrete().unwrap()).filter(|(a, b)| a != b).count();
        }
        let mean = total as f64 / trials as f64;
        // per-trial variance 25 * 0.01 * 0.99
        let sd = (25.0 * 0.01 * 0.99 / trials as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn rule_mutation_keeps_rules_valid() {
        let env = make_grid_world();
        let schema = Schema::rules(&env, 10, None);
        let mut r = rng(4);
        let mut c = schema.random(&mut r);
        for _ in 0..200 {
            c = mutate(&c, 0.5, DEFAULT_SIGMA, &schema, &mut r);
            if let Chromosome::Rules(rules) = &c {
                for rule in rules {
                    rule.validate().unwrap();
                    for (cond, (lo, hi)) in rule.conditions.iter().zip(env.sensor_bounds()) {
                        if let Condition::Range { lo: a, hi: b } = *cond {
                            assert!(lo <= a && a <= b && b <= hi);
                        }
                    }
                    assert!(rule.action < 2);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn crossover_conserves_locus_multisets(
            pair in (2usize..40).prop_flat_map(|n| (
                proptest::collection::vec(0usize..4, n),
                proptest::collection::vec(0usize..4, n),
            )),
            seed in any::<u64>(),
        ) {
            let (a, b) = pair;
            let p1 = Chromosome::Discrete(a.clone());
            let p2 = Chromosome::Discrete(b.clone());
            let (c1, c2) = one_point_crossover(&p1, &p2, &mut rng(seed)).unwrap();
            let (c1, c2) = (c1.as_discrete().unwrap().to_vec(), c2.as_discrete().unwrap().to_vec());
            for i in 0..a.len() {
                let mut parents = [a[i], b[i]];
                let mut children = [c1[i], c2[i]];
                parents.sort();
                children.sort();
                prop_assert_eq!(parents, children);
            }
        }
    }
}
