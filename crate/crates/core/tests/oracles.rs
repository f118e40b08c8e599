//! Exact-arithmetic oracles for the inclusion-exclusion pmf and the
//! inversion formula. All identities are checked in `BigRational`, so the
//! floating point implementation is compared against an independent
//! computation with no rounding at all.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use exchsum::{exact_pmf, invert_pmf, ProbabilitySequence};

fn big_binom(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k {
        num *= BigInt::from(n - i);
        den *= BigInt::from(i + 1);
    }
    num / den
}

/// Eq-by-eq rational evaluation of mass[s] = C(m,s) Σ_k (-1)^k C(m-s,k) p_{s+k}.
fn rational_pmf(p: &[BigRational]) -> Vec<BigRational> {
    let m = p.len() - 1;
    (0..=m)
        .map(|s| {
            let mut acc = BigRational::zero();
            for k in 0..=(m - s) {
                let term = BigRational::from(big_binom(m - s, k)) * &p[s + k];
                if k % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            BigRational::from(big_binom(m, s)) * acc
        })
        .collect()
}

/// Rational inversion: p_j = Σ_k [C(m-j,k)/C(m,k)] mass[m-k].
fn rational_invert(mass: &[BigRational]) -> Vec<BigRational> {
    let m = mass.len() - 1;
    (0..=m)
        .map(|j| {
            let mut acc = BigRational::zero();
            for k in 0..=(m - j) {
                let w = BigRational::new(big_binom(m - j, k), big_binom(m, k));
                acc += w * &mass[m - k];
            }
            acc
        })
        .collect()
}

/// A random exchangeable law built as a finite mixture of iid Bernoulli
/// components with exact rational weights and success probabilities.
fn random_mixture(rng: &mut ChaCha12Rng, m: usize) -> Vec<BigRational> {
    let components = rng.random_range(1..=4usize);
    let mut weights: Vec<BigRational> = (0..components)
        .map(|_| BigRational::new(BigInt::from(rng.random_range(1..50u32)), BigInt::from(50)))
        .collect();
    let total: BigRational = weights.iter().cloned().sum();
    for w in &mut weights {
        *w /= total.clone();
    }
    let thetas: Vec<BigRational> = (0..components)
        .map(|_| BigRational::new(BigInt::from(rng.random_range(0..=64u32)), BigInt::from(64)))
        .collect();
    (0..=m)
        .map(|j| {
            weights
                .iter()
                .zip(&thetas)
                .map(|(w, t)| {
                    let mut pow = BigRational::one();
                    for _ in 0..j {
                        pow *= t.clone();
                    }
                    w.clone() * pow
                })
                .sum()
        })
        .collect()
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rational fits in f64")
}

#[test]
fn rational_pmf_matches_mixture_binomial_identity() {
    // In exact arithmetic the inclusion-exclusion pmf of a mixture law must
    // equal the corresponding mixture of binomial pmfs, cell by cell.
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for _ in 0..40 {
        let m = rng.random_range(1..=10usize);
        let components = rng.random_range(1..=3usize);
        let mut weights: Vec<BigRational> = (0..components)
            .map(|_| BigRational::new(BigInt::from(rng.random_range(1..20u32)), BigInt::from(20)))
            .collect();
        let total: BigRational = weights.iter().cloned().sum();
        for w in &mut weights {
            *w /= total.clone();
        }
        let thetas: Vec<BigRational> = (0..components)
            .map(|_| BigRational::new(BigInt::from(rng.random_range(0..=32u32)), BigInt::from(32)))
            .collect();
        let p: Vec<BigRational> = (0..=m)
            .map(|j| {
                weights
                    .iter()
                    .zip(&thetas)
                    .map(|(w, t)| {
                        let mut pow = BigRational::one();
                        for _ in 0..j {
                            pow *= t.clone();
                        }
                        w.clone() * pow
                    })
                    .sum()
            })
            .collect();
        let mass = rational_pmf(&p);
        let total_mass: BigRational = mass.iter().cloned().sum();
        assert!(total_mass.is_one(), "mass must sum to exactly one");
        for (s, cell) in mass.iter().enumerate() {
            let direct: BigRational = weights
                .iter()
                .zip(&thetas)
                .map(|(w, t)| {
                    let mut v = BigRational::from(big_binom(m, s));
                    for _ in 0..s {
                        v *= t.clone();
                    }
                    let q = BigRational::one() - t.clone();
                    for _ in 0..(m - s) {
                        v *= q.clone();
                    }
                    w.clone() * v
                })
                .sum();
            assert_eq!(cell, &direct, "m={m} s={s}");
            assert!(!cell.is_negative());
        }
    }
}

#[test]
fn float_pmf_matches_rational_oracle() {
    // Feed the f64 path the exact same (dyadic-rational) inputs it sees and
    // demand agreement with unrounded arithmetic.
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    for _ in 0..60 {
        let m = rng.random_range(1..=12usize);
        let p_rat = random_mixture(&mut rng, m);
        let p_f64: Vec<f64> = p_rat.iter().map(to_f64).collect();
        // Re-lift the rounded f64 values so both paths share inputs exactly.
        let p_exact: Vec<BigRational> =
            p_f64.iter().map(|&v| BigRational::from_float(v).unwrap()).collect();
        let seq = ProbabilitySequence::new(p_f64).unwrap();
        let pmf = exact_pmf(&seq).unwrap();
        let oracle = rational_pmf(&p_exact);
        for (s, (&got, want)) in pmf.mass().iter().zip(&oracle).enumerate() {
            let want = to_f64(want).max(0.0);
            assert!((got - want).abs() <= 1e-12, "m={m} s={s}: {got} vs {want}");
        }
    }
}

#[test]
fn rational_inversion_is_exact_inverse() {
    let mut rng = ChaCha12Rng::seed_from_u64(47);
    for _ in 0..30 {
        let m = rng.random_range(1..=10usize);
        let p = random_mixture(&mut rng, m);
        let recovered = rational_invert(&rational_pmf(&p));
        assert_eq!(recovered, p);
    }
}

#[test]
fn float_inversion_round_trip() {
    let mut rng = ChaCha12Rng::seed_from_u64(83);
    for _ in 0..60 {
        let m = rng.random_range(1..=12usize);
        let p_rat = random_mixture(&mut rng, m);
        let p_f64: Vec<f64> = p_rat.iter().map(to_f64).collect();
        let seq = ProbabilitySequence::new(p_f64.clone()).unwrap();
        let back = invert_pmf(&exact_pmf(&seq).unwrap());
        for (j, (&orig, &got)) in p_f64.iter().zip(back.values()).enumerate() {
            assert!((orig - got).abs() <= 1e-10, "m={m} j={j}: {orig} vs {got}");
        }
    }
}
