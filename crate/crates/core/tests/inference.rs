use std::collections::BTreeMap;

use lambda_core::genealogy::{simulate_dataset, simulate_topology, stream_rng, SamplingSchedule, TimeSeriesData};
use lambda_core::likelihood::{
    estimate_likelihood, exact_likelihood, ExactLikelihood, LogLikelihood, RateSource,
};
use lambda_core::mcmc::{accept, run_chain, ChainConfig, Variant};
use lambda_core::moments::canonical_representative;
use lambda_core::prior::{sample_prior, PriorSpec};
use lambda_core::{LambdaMeasure, MomentSequence, MutationModel};
use proptest::prelude::*;

fn single(counts: &[(&str, usize)]) -> TimeSeriesData {
    let b: BTreeMap<String, usize> = counts.iter().map(|&(h, c)| (h.to_string(), c)).collect();
    TimeSeriesData::new(vec![(0.0, b)]).unwrap()
}

#[test]
fn blocks_only_decrease_between_insertions() {
    let schedule = SamplingSchedule::parse("0:6,0.3:4,1:5").unwrap();
    for (i, m) in [LambdaMeasure::kingman(), LambdaMeasure::uniform(), LambdaMeasure::dirac(0.4).unwrap()].iter().enumerate() {
        let rates = m.merger_rates(15);
        for rep in 0..50 {
            let g = simulate_topology(&rates, &schedule, &mut stream_rng(rep, i as u64)).unwrap();
            let roots = g.nodes.iter().filter(|n| n.parent.is_none()).count();
            assert_eq!(roots, 1);
            for n in &g.nodes {
                if let Some(p) = n.parent {
                    assert!(g.nodes[p].time >= n.time);
                }
            }
        }
    }
}

#[test]
fn kingman_block_counts_follow_the_pure_death_chain() {
    // 3 -> 2 at rate 3, 2 -> 1 at rate 1
    let rates = LambdaMeasure::kingman().merger_rates(3);
    let schedule = SamplingSchedule::single(3).unwrap();
    let t = 0.4f64;
    let p3 = (-3.0 * t).exp();
    let p1 = 1.0 - 1.5 * (-t).exp() + 0.5 * (-3.0 * t).exp();
    let expected = 3.0 * p3 + 2.0 * (1.0 - p3 - p1) + p1;
    let reps = 10_000;
    let counts: Vec<f64> = (0..reps)
        .map(|r| {
            let g = simulate_topology(&rates, &schedule, &mut stream_rng(11, r)).unwrap();
            assert!(g.merge_sizes().iter().all(|&k| k == 2));
            g.nodes
                .iter()
                .filter(|n| n.time <= t && n.parent.is_none_or(|p| g.nodes[p].time > t))
                .count() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / reps as f64;
    let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * sd / (reps as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn simulation_is_reproducible() {
    let model = MutationModel::binary_loci(0.1, 10).unwrap();
    let schedule = SamplingSchedule::parse("0:20,0.5:20,1:20,1.5:20,2:20").unwrap();
    let a = simulate_dataset(&LambdaMeasure::uniform(), &model, &schedule, 7).unwrap();
    let b = simulate_dataset(&LambdaMeasure::uniform(), &model, &schedule, 7).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.batches().len(), 5);
    assert!(a.batches().iter().all(|b| b.1.values().sum::<usize>() == 20));
}

#[test]
fn moments_are_sufficient_for_the_likelihood() {
    let model = MutationModel::parent_independent(0.7, 2).unwrap();
    let m = LambdaMeasure::beta(0.5, 1.5).unwrap();
    // order-2 rule matches λ_3..λ_5, enough for samples of size 4
    let twin = canonical_representative(&MomentSequence::from_measure(&m, 7).unwrap()).unwrap();
    for counts in [[4usize, 0], [3, 1], [2, 2]] {
        let a = exact_likelihood(RateSource::Measure(&m), &counts, &model).unwrap();
        let b = exact_likelihood(RateSource::Measure(&twin), &counts, &model).unwrap();
        assert!((a - b).abs() < 1e-10, "{counts:?}: {a} vs {b}");
    }
}

#[test]
fn record_order_does_not_change_estimates() {
    let model = MutationModel::binary_loci(0.1, 4).unwrap();
    let a = TimeSeriesData::parse("0 3 0000\n0 2 0001\n0.5 1 0011\n0.5 2 0000\n").unwrap();
    let b = TimeSeriesData::parse("0 2 0001\n0 3 0000\n0.5 2 0000\n0.5 1 0011\n").unwrap();
    let m = LambdaMeasure::uniform();
    let ea = estimate_likelihood(RateSource::Measure(&m), &a, &model, 500, 3).unwrap();
    let eb = estimate_likelihood(RateSource::Measure(&m), &b, &model, 500, 3).unwrap();
    assert_eq!(ea.log_value.to_bits(), eb.log_value.to_bits());
}

#[test]
fn flat_likelihood_chain_samples_the_prior() {
    // without mutation a monomorphic sample has likelihood m(h) for every Λ
    let model = MutationModel::parent_independent(0.0, 2).unwrap();
    let lik = ExactLikelihood::new(&single(&[("0", 3)]), model).unwrap();
    let spec = PriorSpec::default();
    let mut cfg = ChainConfig::new(Variant::Exact, 40_000, 5);
    cfg.thin = 400;
    let chain = run_chain(&lik, &cfg).unwrap().moment_trace(3);
    let prior: Vec<f64> = (0..10_000)
        .map(|s| sample_prior(&spec, 1_000_000 + s).unwrap().to_measure(&spec).unwrap().moment(3).unwrap())
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let se = (var(&chain) / chain.len() as f64 + var(&prior) / prior.len() as f64).sqrt();
    assert!((mean(&chain) - mean(&prior)).abs() < 3.0 * se, "{} vs {} (se {se})", mean(&chain), mean(&prior));
    assert_eq!(lik.log_estimate(&LambdaMeasure::uniform().merger_rates(3), 0).unwrap(), 0.5f64.ln());
}

#[test]
fn two_state_metropolis_balances() {
    // target (0.3, 0.7), propose the other state
    let target = [0.3f64, 0.7];
    let mut rng = stream_rng(9, 0);
    let mut state = 0usize;
    let mut moves = [[0u64; 2]; 2];
    let n = 200_000;
    for _ in 0..n {
        let other = 1 - state;
        let next = if accept((target[other] / target[state]).ln(), &mut rng) { other } else { state };
        moves[state][next] += 1;
        state = next;
    }
    let f01 = moves[0][1] as f64 / n as f64;
    let f10 = moves[1][0] as f64 / n as f64;
    let se = ((f01 + f10) / n as f64).sqrt();
    assert!((f01 - f10).abs() < 3.0 * se);
    let occupancy = (moves[0][0] + moves[0][1]) as f64 / n as f64;
    assert!((occupancy - 0.3).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_likelihood_normalises(theta in 0.05..5.0f64, n in 1usize..=4, which in 0usize..3) {
        let m = match which {
            0 => LambdaMeasure::kingman(),
            1 => LambdaMeasure::star(),
            _ => LambdaMeasure::uniform(),
        };
        let model = MutationModel::parent_independent(theta, 2).unwrap();
        // probabilities of type compositions
        let total: f64 = (0..=n)
            .map(|c0| exact_likelihood(RateSource::Measure(&m), &[c0, n - c0], &model).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-10, "total {}", total);
    }
}
