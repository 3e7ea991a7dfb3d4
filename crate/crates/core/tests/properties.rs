use lambda_core::bounds::{extremize, Mode, MomentConstraint};
use lambda_core::measure::{BetaComponent, NormalKernel};
use lambda_core::moments::{
    canonical_representative, cms_envelope, gauss_quadrature, interlaced_pair, is_completely_monotonic,
    orthonormal_polynomials,
};
use lambda_core::numeric::integrate_composite;
use lambda_core::prior::{sample_prior, PriorSpec};
use lambda_core::{DiscreteMeasure, LambdaMeasure, MomentSequence};
use proptest::prelude::*;

/// Mixtures of a Kingman part, atoms, a Beta and a truncated normal kernel.
fn measure() -> impl Strategy<Value = LambdaMeasure> {
    (
        0.0..1.0f64,
        prop::collection::vec((0.0..=1.0f64, 0.0..1.0f64), 0..4),
        (0.5..4.0f64, 0.5..4.0f64, 0.0..1.0f64),
        (0.05..0.95f64, 0.01..0.5f64, 0.0..1.0f64),
    )
        .prop_filter_map("positive mass", |(k, atoms, (a, b, wb), (loc, sigma, wk))| {
            let total = k + atoms.iter().map(|a| a.1).sum::<f64>() + wb + wk;
            if total < 1e-3 {
                return None;
            }
            let atoms = atoms.into_iter().map(|(x, w)| (x, w / total)).collect();
            let kernels = vec![NormalKernel { location: loc, sigma, weight: wk / total }];
            let betas = vec![BetaComponent { a, b, weight: wb / total }];
            LambdaMeasure::new(k / total, atoms, kernels, betas, 1e-6).ok()
        })
}

fn discrete() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.0..=1.0f64, 0.01..1.0f64), 1..5).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moments_are_bounded_and_nonincreasing(m in measure()) {
        let v = m.moments_up_to(15);
        prop_assert!(v[0] <= m.total_mass() + 1e-12);
        for w in v.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(v.iter().all(|&x| (-1e-15..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn measure_moments_are_completely_monotonic(m in measure()) {
        let seq = MomentSequence::from_measure(&m, 20).unwrap();
        prop_assert!(is_completely_monotonic(&seq).unwrap().is_monotonic());
    }

    #[test]
    fn gauss_rules_are_exact(m in measure()) {
        let seq = MomentSequence::from_measure(&m, 11).unwrap();
        let rule = gauss_quadrature(&seq).unwrap();
        let order = rule.order();
        prop_assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for k in 3..=(2 * order + 1).min(11) {
            prop_assert!((rule.moment(k) - seq.get(k).unwrap()).abs() < 1e-8, "k={}", k);
        }
    }

    #[test]
    fn cms_chains_are_monotone(m in measure()) {
        let env = cms_envelope(&MomentSequence::from_measure(&m, 11).unwrap()).unwrap();
        for w in env.cumulative.windows(2) {
            prop_assert!(w[1].cumulative >= w[0].cumulative - 1e-12);
        }
        prop_assert!((env.cumulative.last().unwrap().cumulative - 1.0).abs() < 1e-10);
    }

    #[test]
    fn interlaced_pairs_are_mutually_singular(m in measure()) {
        let pair = interlaced_pair(&MomentSequence::from_measure(&m, 11).unwrap()).unwrap();
        prop_assert!(pair.supports_disjoint());
        prop_assert_eq!(pair.total_variation(), 2.0);
        prop_assert!((pair.x_measure.total_mass() - 1.0).abs() < 1e-10);
        prop_assert!((pair.y_measure.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn moment_classes_share_their_rules(m in measure()) {
        let seq = MomentSequence::from_measure(&m, 9).unwrap();
        let rule = gauss_quadrature(&seq).unwrap();
        prop_assume!(!rule.degenerate);
        let twin = canonical_representative(&seq).unwrap();
        let twin_seq = MomentSequence::from_measure(&twin, 9).unwrap();
        let a = orthonormal_polynomials(&seq).unwrap();
        let b = orthonormal_polynomials(&twin_seq).unwrap();
        for (x, y) in a.alpha.iter().zip(&b.alpha).chain(a.beta.iter().zip(&b.beta)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        let twin_rule = gauss_quadrature(&twin_seq).unwrap();
        for (x, y) in rule.nodes.iter().zip(&twin_rule.nodes).chain(rule.weights.iter().zip(&twin_rule.weights)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn extremes_envelope_every_feasible_measure(nu in discrete(), slack in 0.0..0.1f64) {
        let q = |x: f64| (-x).exp();
        let c = [
            MomentConstraint::upper(3, nu.moment(3) + slack).unwrap(),
            MomentConstraint::lower(4, nu.moment(4) - slack).unwrap(),
        ];
        let lo = extremize(q, &c, Mode::Min, 200).unwrap();
        let hi = extremize(q, &c, Mode::Max, 200).unwrap();
        let v = nu.expect(q);
        prop_assert!(lo.value <= v + 1e-9 && v <= hi.value + 1e-9);
        prop_assert!(lo.witness.support_size(1e-12) <= c.len() + 1 + 1);
        prop_assert!(lo.max_violation < 1e-9 && hi.max_violation < 1e-9);
    }

    #[test]
    fn extra_constraints_never_widen(nu in discrete()) {
        let q = |x: f64| (-x).exp();
        let base = [MomentConstraint::upper(3, nu.moment(3) + 0.05).unwrap()];
        let more = [base[0], MomentConstraint::lower(5, nu.moment(5) - 0.02).unwrap()];
        let (a_lo, a_hi) = (extremize(q, &base, Mode::Min, 200).unwrap(), extremize(q, &base, Mode::Max, 200).unwrap());
        let (b_lo, b_hi) = (extremize(q, &more, Mode::Min, 200).unwrap(), extremize(q, &more, Mode::Max, 200).unwrap());
        prop_assert!(b_lo.value >= a_lo.value - 1e-9);
        prop_assert!(b_hi.value <= a_hi.value + 1e-9);
    }

    #[test]
    fn prior_draws_are_proper(seed in any::<u64>()) {
        let spec = PriorSpec::default();
        let p = sample_prior(&spec, seed).unwrap();
        prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = p.to_measure(&spec).unwrap();
        let mass = integrate_composite(|r| m.density(r), spec.eta, 1.0, 4096);
        prop_assert!((mass - 1.0).abs() < 1e-8, "mass {}", mass);
    }
}

#[test]
fn prior_moments_are_completely_monotonic() {
    let spec = PriorSpec::default();
    for seed in 0..1000 {
        let p = sample_prior(&spec, seed).unwrap();
        let seq = MomentSequence::from_measure(&p.to_measure(&spec).unwrap(), 20).unwrap();
        assert!(is_completely_monotonic(&seq).unwrap().is_monotonic(), "seed {seed}");
    }
}

#[test]
fn grid_doubling_converges() {
    let q = |x: f64| (-x).exp();
    let c = [MomentConstraint::upper(3, 0.5).unwrap(), MomentConstraint::lower(4, 0.3).unwrap()];
    for mode in [Mode::Min, Mode::Max] {
        let a = extremize(q, &c, mode, 500).unwrap().value;
        let b = extremize(q, &c, mode, 1000).unwrap().value;
        assert!((a - b).abs() < 1e-3);
    }
}
