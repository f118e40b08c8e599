//! Property-based checks of the pmf machinery over randomly generated
//! exchangeable laws (finite Bernoulli mixtures are always valid).

use proptest::prelude::*;

use exchsum::{exact_pmf, invert_pmf, family_pmf, FamilySpec, ProbabilitySequence};

fn mixture_sequence(weights: &[f64], thetas: &[f64], m: usize) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    (0..=m)
        .map(|j| {
            weights
                .iter()
                .zip(thetas)
                .map(|(w, t)| w / total * t.powi(j as i32))
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mixture_pmf_normalizes_and_round_trips(
        m in 1usize..=12,
        weights in prop::collection::vec(0.05f64..1.0, 1..4),
        thetas in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let p = mixture_sequence(&weights, &thetas[..weights.len()], m);
        let seq = ProbabilitySequence::new(p.clone()).unwrap();
        let pmf = exact_pmf(&seq).unwrap();
        let total: f64 = pmf.mass().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
        prop_assert!(pmf.mass().iter().all(|&v| v >= 0.0));
        let back = invert_pmf(&pmf);
        for (orig, got) in p.iter().zip(back.values()) {
            prop_assert!((orig - got).abs() <= 1e-10);
        }
    }

    #[test]
    fn mixture_mean_is_m_p1(
        m in 1usize..=12,
        weights in prop::collection::vec(0.05f64..1.0, 1..4),
        thetas in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let p = mixture_sequence(&weights, &thetas[..weights.len()], m);
        let seq = ProbabilitySequence::new(p.clone()).unwrap();
        let pmf = exact_pmf(&seq).unwrap();
        prop_assert!((pmf.mean() - m as f64 * p[1]).abs() <= 1e-9);
    }

    #[test]
    fn ppower_at_gamma_one_is_binomial(
        m in 1usize..=20,
        p in 0.05f64..0.95,
    ) {
        let binom = family_pmf(&FamilySpec::Binomial { p }, m).unwrap();
        let pp = family_pmf(&FamilySpec::PPower { p, gamma: 1.0 }, m).unwrap();
        for s in 0..=m {
            prop_assert!((pp.mass()[s] - binom.mass()[s]).abs() <= 1e-12);
        }
    }

    #[test]
    fn qpower_at_gamma_one_is_binomial(
        m in 1usize..=20,
        q in 0.05f64..0.95,
    ) {
        let binom = family_pmf(&FamilySpec::Binomial { p: 1.0 - q }, m).unwrap();
        let qp = family_pmf(&FamilySpec::QPower { q, gamma: 1.0 }, m).unwrap();
        for s in 0..=m {
            prop_assert!((qp.mass()[s] - binom.mass()[s]).abs() <= 1e-12);
        }
    }
}
