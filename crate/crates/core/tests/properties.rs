use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use posjump::analyzer::{analyze_markov, analyze_semi_markov, lifted_markov_generator};
use posjump::catalog;
use posjump::expectation::{
    expected_lifted_transition, integrate_against, matrix_exponential, QuadratureConfig,
};
use posjump::model::{DwellLaw, JumpMixture, MarkovModel, SemiMarkovModel};
use posjump::stabilizer::{metzler_distance, min_norm_element, objective, RATE_SLACK};
use posjump::MultiIndexBasis;

fn matrix(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

fn metzler(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n, 0.0, 1.0), prop::collection::vec(-2.0..1.0f64, n)).prop_map(|(mut a, d)| {
        for (i, v) in d.into_iter().enumerate() {
            a[(i, i)] = v;
        }
        a
    })
}

fn sized() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=3)
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn law() -> impl Strategy<Value = DwellLaw> {
    prop_oneof![
        (0.01..2.0f64, 0.1..3.0f64).prop_map(|(lo, w)| DwellLaw::Uniform { lo, hi: lo + w }),
        (0.5..12.0f64, 0.2..4.0f64, 0.01..0.5f64).prop_map(|(shape, scale, tail_mass)| {
            DwellLaw::TruncatedWeibull {
                shape,
                scale,
                tail_mass,
            }
        }),
        (0.1..5.0f64).prop_map(|value| DwellLaw::Deterministic { value }),
        (0.1..5.0f64, 0.2..4.0f64)
            .prop_map(|(rate, cap)| DwellLaw::TruncatedExponential { rate, cap }),
        prop::collection::vec(0.05..4.0f64, 1..8).prop_map(DwellLaw::empirical),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn lift_preserves_euclidean_norm((n, m) in sized(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let basis = MultiIndexBasis::new(n, m).unwrap();
        let lifted = basis.lift_vector(&x).unwrap().norm();
        let expected = DVector::from_row_slice(&x).norm().powi(m as i32);
        prop_assert!((lifted - expected).abs() <= 1e-13 * expected.max(1e-300));
    }

    #[test]
    fn power_lift_is_multiplicative(
        (n, m) in sized(),
        a in matrix(3, -1.5, 1.5),
        b in matrix(3, -1.5, 1.5),
    ) {
        let a = a.view((0, 0), (n, n)).into_owned();
        let b = b.view((0, 0), (n, n)).into_owned();
        let basis = MultiIndexBasis::new(n, m).unwrap();
        let lift = |x: &DMatrix<f64>| basis.lift_matrix_power(x).unwrap().into_inner();
        let lhs = lift(&(&a * &b));
        let rhs = lift(&a) * lift(&b);
        prop_assert!(rel(&rhs, &lhs) <= 1e-11 || lhs.norm() < 1e-12);
    }

    #[test]
    fn infinitesimal_lift_generates_the_power_lift((n, m) in sized(), a in metzler(3), t in 0.0..3.0f64) {
        let a = a.view((0, 0), (n, n)).into_owned();
        let basis = MultiIndexBasis::new(n, m).unwrap();
        let inf = basis.lift_matrix_infinitesimal(&a).unwrap().into_inner();
        let lhs = matrix_exponential(&inf, t).unwrap();
        let rhs = basis.lift_matrix_power(&matrix_exponential(&a, t).unwrap()).unwrap().into_inner();
        prop_assert!(rel(&lhs, &rhs) <= 1e-8);
    }

    #[test]
    fn lifts_preserve_sign_structure((n, m) in sized(), p in matrix(3, 0.0, 2.0), a in metzler(3)) {
        let p = p.view((0, 0), (n, n)).into_owned();
        let a = a.view((0, 0), (n, n)).into_owned();
        let basis = MultiIndexBasis::new(n, m).unwrap();
        let pl = basis.lift_matrix_power(&p).unwrap().into_inner();
        prop_assert!(pl.iter().all(|&v| v >= 0.0));
        let al = basis.lift_matrix_infinitesimal(&a).unwrap().into_inner();
        prop_assert_eq!(metzler_distance(&al), 0.0);
    }

    #[test]
    fn dwell_laws_have_unit_mass(law in law()) {
        let cfg = QuadratureConfig::default();
        let cont = integrate_against(&law, |_| Ok(vec![1.0]), 1, &cfg).unwrap().value[0];
        let atoms: f64 = law.atoms().iter().map(|(_, w)| w).sum();
        prop_assert!((cont + atoms - 1.0).abs() <= 1e-9, "mass {}", cont + atoms);
        prop_assert!(law.problems().is_empty());
    }

    #[test]
    fn expected_transitions_of_positive_models_are_nonnegative(
        a1 in metzler(2),
        a2 in metzler(2),
        j in matrix(2, 0.0, 1.5),
        law in law(),
        m in 1usize..=3,
    ) {
        let model = SemiMarkovModel::new(vec![a1, a2], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .with_dwell(0, 1, law.clone())
            .with_dwell(1, 0, law)
            .with_jump(0, 1, JumpMixture::fixed(j));
        let basis = MultiIndexBasis::new(2, m).unwrap();
        let e = expected_lifted_transition(&model, 0, 1, &basis, &QuadratureConfig::default()).unwrap();
        prop_assert!(e.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn min_norm_element_is_no_longer_than_any_input(
        vs in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..8),
    ) {
        let g = min_norm_element(&vs);
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        for v in &vs {
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(gn <= vn + 1e-9, "{} > {}", gn, vn);
        }
        let total: f64 = g.iter().map(|x| x.abs()).sum();
        prop_assert!(total.is_finite());
    }

    #[test]
    fn feasibility_flag_is_exact(
        k1 in -5.0..1.0f64,
        k2 in -3.0..1.5f64,
        q12 in -1.0..4.0f64,
        q21 in -1.0..4.0f64,
        capped in any::<bool>(),
    ) {
        let mut problem = catalog::two_mode_feedback_problem();
        if capped {
            problem.rate_cap = Some(2.0);
        }
        let e = objective(&problem, &[k1, k2, q12, q21]).unwrap();
        let (gains, _) = problem.unpack(&[k1, k2, q12, q21]);
        let positive = problem.closed_loop_modes(&gains).iter().all(|a| metzler_distance(a) == 0.0);
        let rates_ok = q12.min(q21) >= -RATE_SLACK && (!capped || q12.max(q21) <= 2.0 + RATE_SLACK);
        prop_assert_eq!(e.feasible, positive && rates_ok);
        prop_assert_eq!(e.penalties.total() == 0.0, positive && q12.min(q21) >= 0.0 && (!capped || q12.max(q21) <= 2.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn markov_and_semi_markov_criteria_agree(
        a1 in metzler(2),
        a2 in metzler(2),
        q12 in 0.2..3.0f64,
        q21 in 0.2..3.0f64,
        m in 1usize..=2,
    ) {
        let q = DMatrix::from_row_slice(2, 2, &[-q12, q12, q21, -q21]);
        let markov = MarkovModel::new(vec![a1, a2], q);
        let eta = analyze_markov(&markov, m).unwrap().indicator;
        prop_assume!(eta.abs() > 0.05);
        let cap = 50.0 / q12.max(q21);
        let semi = markov.embedded_semi_markov(cap);
        let rho = analyze_semi_markov(&semi, m, &QuadratureConfig::default()).unwrap().indicator;
        prop_assert_eq!(rho < 1.0, eta < 0.0, "rho {} eta {}", rho, eta);
    }

    #[test]
    fn shift_adds_m_alpha_to_the_generator(a1 in metzler(2), a2 in metzler(2), alpha in -1.0..1.0f64, m in 1usize..=3) {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -0.5]);
        let shift = |a: &DMatrix<f64>| a + DMatrix::identity(2, 2) * alpha;
        let base = MarkovModel::new(vec![a1.clone(), a2.clone()], q.clone());
        let moved = MarkovModel::new(vec![shift(&a1), shift(&a2)], q);
        let basis = MultiIndexBasis::new(2, m).unwrap();
        let t0 = lifted_markov_generator(&base, &basis).unwrap();
        let t1 = lifted_markov_generator(&moved, &basis).unwrap();
        let d = t0.nrows();
        let expected = t0 + DMatrix::identity(d, d) * (m as f64 * alpha);
        prop_assert!((t1 - expected).abs().max() <= 1e-12);
    }
}

fn ks_statistic(law: &DwellLaw, samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut worst = 0.0f64;
    let mut i = 0;
    // Walk runs of tied values so atoms are compared by their full mass.
    while i < samples.len() {
        let s = samples[i];
        let mut j = i;
        while j < samples.len() && samples[j] == s {
            j += 1;
        }
        let below = law.cdf(s - 1e-12 * s.abs().max(1.0));
        worst = worst
            .max((law.cdf(s) - j as f64 / n).abs())
            .max((below - i as f64 / n).abs());
        i = j;
    }
    worst
}

#[test]
fn sampled_dwell_times_follow_their_laws() {
    let laws = [
        DwellLaw::TruncatedWeibull {
            shape: 10.0,
            scale: 3.0,
            tail_mass: 0.1,
        },
        DwellLaw::Uniform { lo: 1.0, hi: 3.0 },
        DwellLaw::TruncatedExponential {
            rate: 1.5,
            cap: 1.0,
        },
        DwellLaw::empirical(vec![0.5, 1.0, 1.0, 2.0]),
    ];
    for (k, law) in laws.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut samples: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        for (at, mass) in law.atoms() {
            let hits = samples.iter().filter(|&&s| s == at).count() as f64 / samples.len() as f64;
            assert!(
                (hits - mass).abs() <= 0.005,
                "{law:?}: atom {at} mass {hits} vs {mass}"
            );
        }
        let ks = ks_statistic(law, &mut samples);
        assert!(ks <= 0.01, "{law:?}: KS {ks}");
    }
}
