//! Sampling probabilities of typed samples under a Λ-coalescent.
//!
//! Single-time samples have an exact recursion over type configurations.
//! Serial samples are handled by unbiased particle estimators (see
//! [`Estimator`]): importance sampling over typed ancestral histories, or
//! untyped genealogies from the coalescent with types summed out by
//! peeling.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::importance::{particle_log_weight, Approximation};
use crate::genealogy::{simulate_topology, stream_rng, Genealogy, SamplingSchedule, TimeSeriesData};
use crate::measure::{LambdaMeasure, MergerRates};
use crate::moments::MomentSequence;
use crate::mutation::{MutationKind, MutationModel};
use crate::numeric::{derive_seed, hash_f64s, ln_factorial};

/// Maximum number of type configurations the exact recursion will visit.
pub const MAX_CONFIGURATIONS: usize = 1_000_000;
/// Levels up to this size are solved by dense LU, larger ones iteratively.
const DENSE_LIMIT: usize = 2000;
pub const MAX_PARTICLES: usize = 100_000;
pub const DEFAULT_SURROGATE_PARTICLES: usize = 5;
pub const DEFAULT_TARGET_VARIANCE: f64 = 1.44;
const TUNING_REPEATS: usize = 50;

/// Where merger rates come from: a measure, or a moment sequence through
/// the binomial transform.
#[derive(Debug, Clone, Copy)]
pub enum RateSource<'a> {
    Measure(&'a LambdaMeasure),
    Moments(&'a MomentSequence),
}

impl RateSource<'_> {
    /// Rates for up to `n` blocks.
    pub fn merger_rates(&self, n: usize) -> Result<MergerRates> {
        match self {
            RateSource::Measure(m) => Ok(m.merger_rates(n)),
            RateSource::Moments(seq) => {
                if n <= 2 {
                    let mut lambda: Vec<Vec<f64>> = (0..=2).map(|p| vec![0.0; p + 1]).collect();
                    lambda[2][2] = 1.0;
                    return Ok(MergerRates::from_lambda(lambda));
                }
                if seq.n() < n {
                    return domain(format!("moment sequence stops at λ_{}, sample size is {n}", seq.n()));
                }
                seq.truncated(n)?.merger_rates()
            }
        }
    }
}

/// Type counts of a single-time sample, indexed by type.
pub fn counts_from_data(data: &TimeSeriesData, model: &MutationModel) -> Result<Vec<usize>> {
    if data.batches().len() != 1 {
        return domain(format!("exact likelihood needs a single sampling time, data has {}", data.batches().len()));
    }
    let mut counts = vec![0; model.num_types()];
    for (h, &c) in &data.batches()[0].1 {
        counts[model.parse_type(h)?] += c;
    }
    Ok(counts)
}

pub fn exact_likelihood(source: RateSource<'_>, counts: &[usize], model: &MutationModel) -> Result<f64> {
    let n: usize = counts.iter().sum();
    check_exact_capacity(counts, model)?;
    let rates = source.merger_rates(n.max(2))?;
    exact_likelihood_with_rates(&rates, counts, model)
}

fn check_exact_capacity(counts: &[usize], model: &MutationModel) -> Result<()> {
    let d = model.num_types();
    if counts.len() != d {
        return domain(format!("expected counts for {d} types, got {}", counts.len()));
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return domain("sample is empty");
    }
    let mut total = 0.0;
    for s in 1..=n {
        total += level_size(s, d);
        if total > MAX_CONFIGURATIONS as f64 {
            return Err(Error::Capacity(format!(
                "exact recursion over n = {n}, d = {d} needs more than {MAX_CONFIGURATIONS} configurations"
            )));
        }
    }
    Ok(())
}

/// C(s + d - 1, d - 1) in floating point.
fn level_size(s: usize, d: usize) -> f64 {
    (1..d).fold(1.0, |acc, j| acc * (s + j) as f64 / j as f64)
}

fn compositions(s: usize, d: usize) -> Vec<Vec<u32>> {
    fn rec(rest: usize, slot: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slot + 1 == cur.len() {
            cur[slot] = rest as u32;
            out.push(cur.clone());
            return;
        }
        for v in (0..=rest).rev() {
            cur[slot] = v as u32;
            rec(rest - v, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    rec(s, 0, &mut vec![0; d], &mut out);
    out
}

/// Exact probability of the unordered type configuration `counts`.
///
/// For each size s the configurations of that size solve the linear system
/// `(sθ - q_ss) P(c) = θ Σ_i Σ_j (c_j + 1 - δ_ij) M_ji P(c - e_i + e_j)
///   + Σ_i Σ_k C(s,k) λ_{s,k} (c_i - k + 1)/(s - k + 1) P(c - (k-1) e_i)`,
/// with `P(e_i) = m(i)`.
pub fn exact_likelihood_with_rates(rates: &MergerRates, counts: &[usize], model: &MutationModel) -> Result<f64> {
    check_exact_capacity(counts, model)?;
    let d = model.num_types();
    let n: usize = counts.iter().sum();
    let target: Vec<u32> = counts.iter().map(|&c| c as u32).collect();
    let theta = model.theta();
    let mut prev_index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut prev_vals: Vec<Vec<f64>> = vec![vec![]; n + 1];
    let mut index_by_level: Vec<HashMap<Vec<u32>, usize>> = vec![HashMap::new(); n + 1];
    for (i, c) in compositions(1, d).into_iter().enumerate() {
        let t = c.iter().position(|&v| v == 1).expect("unit vector");
        prev_vals[1].push(model.stationary_prob(t));
        prev_index.insert(c, i);
    }
    index_by_level[1] = prev_index;
    if n == 1 {
        return Ok(prev_vals[1][index_by_level[1][&target]]);
    }
    let mjump = |from: usize, to: usize| model.jump_prob(from, to);
    for s in 2..=n {
        let configs = compositions(s, d);
        let index: HashMap<Vec<u32>, usize> = configs.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        let diag = s as f64 * theta + rates.total(s);
        let size = configs.len();
        let mut rhs = vec![0.0; size];
        // off-diagonal entries (column, coefficient) of the mutation part
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); size];
        for (a, c) in configs.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..d {
                let ci = c[i] as usize;
                for k in 2..=ci {
                    let w = rates.event_rate(s, k);
                    if w == 0.0 {
                        continue;
                    }
                    let mut lower = c.clone();
                    lower[i] -= (k - 1) as u32;
                    let lvl = s - k + 1;
                    let v = prev_vals[lvl][index_by_level[lvl][&lower]];
                    acc += w * (ci - k + 1) as f64 / lvl as f64 * v;
                }
            }
            rhs[a] = acc;
            if theta > 0.0 {
                for i in 0..d {
                    if c[i] == 0 {
                        continue;
                    }
                    for j in 0..d {
                        let mji = mjump(j, i);
                        if mji == 0.0 {
                            continue;
                        }
                        let mut src = c.clone();
                        src[i] -= 1;
                        src[j] += 1;
                        let coef = theta * src[j] as f64 * mji;
                        rows[a].push((index[&src], coef));
                    }
                }
            }
        }
        let vals = solve_level(diag, &rows, &rhs)?;
        prev_vals[s] = vals;
        index_by_level[s] = index;
    }
    Ok(prev_vals[n][index_by_level[n][&target]])
}

/// Solve `diag x - Σ rows x = rhs`.
fn solve_level(diag: f64, rows: &[Vec<(usize, f64)>], rhs: &[f64]) -> Result<Vec<f64>> {
    let size = rhs.len();
    if size <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::zeros(size, size);
        for (r, row) in rows.iter().enumerate() {
            a[(r, r)] += diag;
            for &(c, v) in row {
                a[(r, c)] -= v;
            }
        }
        let x = a
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or_else(|| Error::Numerical("singular system in the exact recursion".into()))?;
        return Ok(x.iter().copied().collect());
    }
    let mut x = vec![0.0; size];
    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for r in 0..size {
            let mut self_coef = 0.0;
            let mut acc = rhs[r];
            for &(c, v) in &rows[r] {
                if c == r {
                    self_coef += v;
                } else {
                    acc += v * x[c];
                }
            }
            let new = acc / (diag - self_coef);
            change = change.max((new - x[r]).abs());
            scale = scale.max(new.abs());
            x[r] = new;
        }
        if change <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            return Ok(x);
        }
    }
    Err(Error::Numerical("Gauss-Seidel did not converge in the exact recursion".into()))
}

/// Observed leaf types in the order the genealogy simulator creates leaves
/// (batch by batch, haplotypes sorted within a batch), plus the log of the
/// multinomial factor for assigning labels within batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedSample {
    pub schedule: SamplingSchedule,
    pub leaf_types: Vec<usize>,
    pub log_multinomial: f64,
}

impl TypedSample {
    pub fn from_data(data: &TimeSeriesData, model: &MutationModel) -> Result<Self> {
        let mut leaf_types = Vec::with_capacity(data.total());
        let mut log_multinomial = 0.0;
        for (_, counts) in data.batches() {
            let n: usize = counts.values().sum();
            log_multinomial += ln_factorial(n);
            for (h, &c) in counts {
                let t = model.parse_type(h)?;
                log_multinomial -= ln_factorial(c);
                leaf_types.extend(std::iter::repeat_n(t, c));
            }
        }
        Ok(Self { schedule: data.schedule(), leaf_types, log_multinomial })
    }

    pub fn size(&self) -> usize {
        self.leaf_types.len()
    }
}

/// Log probability of the leaf types given an untyped genealogy.
pub fn log_peel(g: &Genealogy, sample: &TypedSample, model: &MutationModel) -> Result<f64> {
    match model.kind() {
        MutationKind::BinaryLoci { loci } => Ok(peel_binary(g, sample, model, *loci)),
        MutationKind::General { .. } => peel_general(g, sample, model),
    }
}

fn peel_binary(g: &Genealogy, sample: &TypedSample, model: &MutationModel, loci: usize) -> f64 {
    let nodes = g.nodes.len();
    // partial[v * loci + l] = (P(below | 0), P(below | 1))
    let mut partial = vec![[1.0f64; 2]; nodes * loci];
    let mut log_scale = 0.0;
    for v in g.postorder() {
        let node = &g.nodes[v];
        if node.children.is_empty() {
            let t = sample.leaf_types[v];
            for l in 0..loci {
                let bit = (t >> (loci - 1 - l)) & 1;
                partial[v * loci + l] = if bit == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            }
            continue;
        }
        let mut acc = vec![[1.0f64; 2]; loci];
        for &c in &node.children {
            let f = model.flip_probability(node.time - g.nodes[c].time).expect("binary model");
            for (l, a) in acc.iter_mut().enumerate() {
                let [c0, c1] = partial[c * loci + l];
                a[0] *= (1.0 - f) * c0 + f * c1;
                a[1] *= f * c0 + (1.0 - f) * c1;
            }
        }
        for (l, a) in acc.into_iter().enumerate() {
            let m = a[0].max(a[1]);
            if m > 0.0 && m < 1e-100 {
                log_scale += m.ln();
                partial[v * loci + l] = [a[0] / m, a[1] / m];
            } else {
                partial[v * loci + l] = a;
            }
        }
    }
    let r = g.root;
    let mut total = log_scale;
    for l in 0..loci {
        let [a, b] = partial[r * loci + l];
        total += (0.5 * (a + b)).ln();
    }
    total
}

fn peel_general(g: &Genealogy, sample: &TypedSample, model: &MutationModel) -> Result<f64> {
    let d = model.num_types();
    let mut partial: Vec<DVector<f64>> = vec![DVector::zeros(d); g.nodes.len()];
    let mut log_scale = 0.0;
    for v in g.postorder() {
        let node = &g.nodes[v];
        if node.children.is_empty() {
            partial[v][sample.leaf_types[v]] = 1.0;
            continue;
        }
        let mut acc = DVector::from_element(d, 1.0);
        for &c in &node.children {
            let p = model.transition_matrix(node.time - g.nodes[c].time)?;
            acc.component_mul_assign(&(p * &partial[c]));
        }
        let m = acc.max();
        if m > 0.0 && m < 1e-100 {
            log_scale += m.ln();
            acc /= m;
        }
        partial[v] = acc;
    }
    let root = &partial[g.root];
    let lik: f64 = (0..d).map(|i| model.stationary_prob(i) * root[i]).sum();
    Ok(log_scale + lik.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodEstimate {
    pub value: f64,
    pub log_value: f64,
    pub particles: usize,
    /// Delta-method variance of `log_value`: `s² / (P · mean²)`. Zero for a
    /// single particle or a zero estimate.
    pub log_variance: f64,
    pub seed: u64,
}

impl LikelihoodEstimate {
    pub fn is_zero(&self) -> bool {
        self.log_value == f64::NEG_INFINITY
    }
}

/// Unbiased particle estimators of the serial-sample likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Importance sampling over typed ancestral histories.
    #[default]
    History,
    /// Untyped genealogy from the coalescent prior, types summed by peeling.
    TreePeeling,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history" => Ok(Estimator::History),
            "peeling" => Ok(Estimator::TreePeeling),
            _ => domain(format!("unknown estimator `{s}` (expected history or peeling)")),
        }
    }
}

/// Per-particle log values, reproducible for any number of worker threads.
pub fn particle_log_values(
    estimator: Estimator,
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    particles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let approx = match estimator {
        Estimator::History => Some(Approximation::new(model, sample.size())?),
        Estimator::TreePeeling => None,
    };
    (0..particles as u64)
        .into_par_iter()
        .map(|p| match estimator {
            Estimator::History => Ok(particle_log_weight(rates, sample, model, approx.as_ref().expect("built"), seed, p)),
            Estimator::TreePeeling => {
                let mut rng = stream_rng(seed, p);
                let g = simulate_topology(rates, &sample.schedule, &mut rng)?;
                Ok(log_peel(&g, sample, model)? + sample.log_multinomial)
            }
        })
        .collect()
}

pub fn estimate_with_rates(
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    particles: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    estimate_with(Estimator::default(), rates, sample, model, particles, seed)
}

pub fn estimate_with(
    estimator: Estimator,
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    particles: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    if particles == 0 {
        return domain("need at least one particle");
    }
    if particles > MAX_PARTICLES {
        return Err(Error::Capacity(format!("{particles} particles exceeds the cap of {MAX_PARTICLES}")));
    }
    let logs = particle_log_values(estimator, rates, sample, model, particles, seed)?;
    Ok(summarise(&logs, seed))
}

fn summarise(logs: &[f64], seed: u64) -> LikelihoodEstimate {
    let p = logs.len();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return LikelihoodEstimate { value: 0.0, log_value: max, particles: p, log_variance: 0.0, seed };
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / p as f64;
    let log_variance = if p > 1 {
        let var = scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (p - 1) as f64;
        var / (p as f64 * mean * mean)
    } else {
        0.0
    };
    let log_value = max + mean.ln();
    LikelihoodEstimate { value: log_value.exp(), log_value, particles: p, log_variance, seed }
}

/// Unbiased estimate of the serial-sample likelihood.
pub fn estimate_likelihood(
    source: RateSource<'_>,
    data: &TimeSeriesData,
    model: &MutationModel,
    particles: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    let sample = TypedSample::from_data(data, model)?;
    let rates = source.merger_rates(sample.size().max(2))?;
    estimate_with_rates(&rates, &sample, model, particles, seed)
}

/// Seed used by the surrogate for a given moment sequence.
pub fn surrogate_seed(moments: &[f64]) -> u64 {
    hash_f64s(moments)
}

/// Deterministic low-particle estimate with its seed fixed by the moments.
pub fn surrogate_likelihood(moments: &MomentSequence, data: &TimeSeriesData, model: &MutationModel) -> Result<f64> {
    let est = estimate_likelihood(
        RateSource::Moments(moments),
        data,
        model,
        DEFAULT_SURROGATE_PARTICLES,
        surrogate_seed(moments.values()),
    )?;
    Ok(est.value)
}

/// Sample variance of log estimates over repeated independent runs.
pub fn log_estimate_variance(
    estimator: Estimator,
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    particles: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let logs = (0..repeats as u64)
        .map(|r| Ok(estimate_with(estimator, rates, sample, model, particles, derive_seed(seed, r))?.log_value))
        .collect::<Result<Vec<f64>>>()?;
    if logs.iter().any(|l| !l.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let mean = logs.iter().sum::<f64>() / repeats as f64;
    Ok(logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64)
}

/// Smallest power-of-two particle count whose log-estimate variance over
/// 50 repeats is at most `target_variance`.
pub fn tune_particles(
    source: RateSource<'_>,
    data: &TimeSeriesData,
    model: &MutationModel,
    target_variance: f64,
    seed: u64,
) -> Result<usize> {
    tune_particles_with(Estimator::default(), source, data, model, target_variance, seed)
}

pub fn tune_particles_with(
    estimator: Estimator,
    source: RateSource<'_>,
    data: &TimeSeriesData,
    model: &MutationModel,
    target_variance: f64,
    seed: u64,
) -> Result<usize> {
    if !(target_variance > 0.0) {
        return domain(format!("target variance must be positive, got {target_variance}"));
    }
    let sample = TypedSample::from_data(data, model)?;
    let rates = source.merger_rates(sample.size().max(2))?;
    let mut particles = 1;
    while particles <= MAX_PARTICLES {
        let var = log_estimate_variance(estimator, &rates, &sample, model, particles, TUNING_REPEATS, seed)?;
        if var <= target_variance {
            return Ok(particles);
        }
        particles *= 2;
    }
    Err(Error::Capacity(format!("log-estimate variance stayed above {target_variance} up to {MAX_PARTICLES} particles")))
}

/// Log-likelihood oracle used by the samplers.
pub trait LogLikelihood: Sync {
    /// Number of sampled lineages; rates must cover this many blocks.
    fn sample_size(&self) -> usize;
    /// Log of a nonnegative unbiased likelihood estimate (−∞ for zero).
    fn log_estimate(&self, rates: &MergerRates, seed: u64) -> Result<f64>;
    /// Deterministic cheap approximation for delayed acceptance.
    fn log_surrogate(&self, rates: &MergerRates, moments: &MomentSequence) -> Result<f64>;
}

/// Particle estimator over a serial sample.
#[derive(Debug, Clone)]
pub struct ParticleLikelihood {
    pub sample: TypedSample,
    pub model: MutationModel,
    pub particles: usize,
    pub surrogate_particles: usize,
    pub estimator: Estimator,
}

impl ParticleLikelihood {
    pub fn new(data: &TimeSeriesData, model: MutationModel, particles: usize) -> Result<Self> {
        if particles == 0 {
            return domain("need at least one particle");
        }
        Ok(Self {
            sample: TypedSample::from_data(data, &model)?,
            model,
            particles,
            surrogate_particles: DEFAULT_SURROGATE_PARTICLES,
            estimator: Estimator::default(),
        })
    }
}

impl LogLikelihood for ParticleLikelihood {
    fn sample_size(&self) -> usize {
        self.sample.size()
    }

    fn log_estimate(&self, rates: &MergerRates, seed: u64) -> Result<f64> {
        Ok(estimate_with(self.estimator, rates, &self.sample, &self.model, self.particles, seed)?.log_value)
    }

    fn log_surrogate(&self, rates: &MergerRates, moments: &MomentSequence) -> Result<f64> {
        let seed = surrogate_seed(moments.values());
        Ok(estimate_with(self.estimator, rates, &self.sample, &self.model, self.surrogate_particles, seed)?.log_value)
    }
}

/// Exact single-time likelihood; its surrogate is itself.
#[derive(Debug, Clone)]
pub struct ExactLikelihood {
    pub counts: Vec<usize>,
    pub model: MutationModel,
}

impl ExactLikelihood {
    /// Requires single-time data.
    pub fn new(data: &TimeSeriesData, model: MutationModel) -> Result<Self> {
        Ok(Self { counts: counts_from_data(data, &model)?, model })
    }
}

impl LogLikelihood for ExactLikelihood {
    fn sample_size(&self) -> usize {
        self.counts.iter().sum()
    }

    fn log_estimate(&self, rates: &MergerRates, _seed: u64) -> Result<f64> {
        Ok(exact_likelihood_with_rates(rates, &self.counts, &self.model)?.ln())
    }

    fn log_surrogate(&self, rates: &MergerRates, _moments: &MomentSequence) -> Result<f64> {
        self.log_estimate(rates, 0)
    }
}
