//! Pseudo-marginal Metropolis–Hastings over prior parameters, with noisy
//! and delayed-acceptance variants.
//!
//! The chain moves on the stick-breaking parameters, with each stick
//! fraction `v` represented by `u = (1 - v)^{α_0}` so that its prior is
//! uniform; each state is read out as the moment sequence of its Λ-measure.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Error, Result};
use crate::genealogy::stream_rng;
use crate::likelihood::LogLikelihood;
use crate::measure::MergerRates;
use crate::moments::MomentSequence;
use crate::numeric::{derive_seed, norm_cdf, quantile_type7};
use crate::prior::{log_chain_density, sample_prior_with, PriorParams, PriorSpec};

pub const DEFAULT_SCALE: f64 = 0.0025;
const MAX_INIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Pseudo-marginal: the current estimate is kept until a move is accepted.
    Exact,
    /// The current estimate is recomputed at every step.
    Noisy,
    /// Delayed acceptance in front of the exact variant.
    DaExact,
    /// Delayed acceptance in front of the noisy variant.
    DaNoisy,
}

impl Variant {
    pub fn delayed(self) -> bool {
        matches!(self, Variant::DaExact | Variant::DaNoisy)
    }

    pub fn noisy(self) -> bool {
        matches!(self, Variant::Noisy | Variant::DaNoisy)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Variant::Exact),
            "noisy" => Ok(Variant::Noisy),
            "da-exact" => Ok(Variant::DaExact),
            "da-noisy" => Ok(Variant::DaNoisy),
            _ => domain(format!("unknown variant `{s}` (expected exact, noisy, da-exact or da-noisy)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Exact => "exact",
            Variant::Noisy => "noisy",
            Variant::DaExact => "da-exact",
            Variant::DaNoisy => "da-noisy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub variant: Variant,
    pub steps: usize,
    /// Per-coordinate variance of the random-walk proposal.
    pub scale: f64,
    pub seed: u64,
    pub prior: PriorSpec,
    /// Keep every `thin`-th state.
    pub thin: usize,
    /// Moments λ_3..λ_n recorded per state; defaults to the sample size.
    pub moments_n: Option<usize>,
}

impl ChainConfig {
    pub fn new(variant: Variant, steps: usize, seed: u64) -> Self {
        Self { variant, steps, scale: DEFAULT_SCALE, seed, prior: PriorSpec::default(), thin: 1, moments_n: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return domain("a chain needs at least one step");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return domain(format!("proposal scale must be positive, got {}", self.scale));
        }
        if self.thin < 1 {
            return domain("thinning factor must be at least 1");
        }
        self.prior.validate()
    }
}

/// A parameter point with everything derived from it.
#[derive(Debug, Clone)]
pub struct Point {
    /// Sampler coordinates.
    pub coords: Vec<f64>,
    pub params: PriorParams,
    pub log_prior: f64,
    pub moments: MomentSequence,
    pub rates: MergerRates,
}

impl Point {
    pub fn new(spec: &PriorSpec, coords: Vec<f64>, blocks: usize, moments_n: usize) -> Result<Self> {
        let params = PriorParams::from_chain_vec(spec, &coords)?;
        let log_prior = log_chain_density(spec, &coords);
        let measure = params.to_measure(spec)?;
        let rates = measure.merger_rates(blocks.max(2));
        let moments = MomentSequence::new(measure.moments_up_to(moments_n.max(3)))?;
        Ok(Self { coords, params, log_prior, moments, rates })
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub point: Point,
    pub log_estimate: f64,
    pub log_surrogate: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub proposals: u64,
    pub stage1_accepted: u64,
    pub accepted: u64,
    /// Full likelihood estimates at proposed points.
    pub full_evaluations: u64,
}

impl Counters {
    pub fn stage1_rate(&self) -> f64 {
        self.stage1_accepted as f64 / self.proposals.max(1) as f64
    }

    /// Acceptance among stage-1 survivors (all proposals without delayed
    /// acceptance).
    pub fn stage2_rate(&self) -> f64 {
        self.accepted as f64 / self.stage1_accepted.max(1) as f64
    }

    pub fn overall_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub step: usize,
    pub params: Vec<f64>,
    /// λ_3..λ_n.
    pub moments: Vec<f64>,
    pub log_estimate: f64,
    pub accepted: bool,
    pub stage1_accepted: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub records: Vec<ChainRecord>,
    pub counters: Counters,
    pub wall_ms: f64,
}

impl ChainOutput {
    /// Trace of λ_k over the recorded states.
    pub fn moment_trace(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.moments[k - 3]).collect()
    }
}

/// Normal mass of `[lo, hi]` around `x` with standard deviation `sd`.
fn box_mass(x: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    norm_cdf((hi - x) / sd) - norm_cdf((lo - x) / sd)
}

/// Coordinate-wise Gaussian random walk truncated to the prior box.
/// Returns the proposal and `log K(x', x) - log K(x, x')`.
pub fn propose<R: Rng + ?Sized>(current: &[f64], spec: &PriorSpec, scale: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let sd = scale.sqrt();
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let mut next = Vec::with_capacity(current.len());
    let mut log_ratio = 0.0;
    for (&x, (lo, hi)) in current.iter().zip(spec.bounds()) {
        let y = loop {
            let y = x + normal.sample(rng);
            if y >= lo && y <= hi {
                break y;
            }
        };
        // the Gaussian factors cancel; only the truncation normalisers remain
        log_ratio += box_mass(x, sd, lo, hi).ln() - box_mass(y, sd, lo, hi).ln();
        next.push(y);
    }
    (next, log_ratio)
}

/// `ln U < log_ratio`.
pub fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

pub struct Sampler<'a, L: LogLikelihood> {
    likelihood: &'a L,
    config: &'a ChainConfig,
    rng: ChaCha8Rng,
    pub state: ChainState,
    pub counters: Counters,
    step: u64,
    moments_n: usize,
}

impl<'a, L: LogLikelihood> Sampler<'a, L> {
    /// Initial state from the prior, redrawn until the likelihood estimate
    /// is positive.
    pub fn new(likelihood: &'a L, config: &'a ChainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, 0);
        let moments_n = config.moments_n.unwrap_or(likelihood.sample_size()).max(3);
        for attempt in 0..MAX_INIT_ATTEMPTS {
            let coords = sample_prior_with(&config.prior, &mut rng)?.to_chain_vec(&config.prior);
            let point = Point::new(&config.prior, coords, likelihood.sample_size(), moments_n)?;
            let log_estimate = likelihood.log_estimate(&point.rates, derive_seed(config.seed, attempt as u64))?;
            if log_estimate.is_finite() && point.log_prior.is_finite() {
                let log_surrogate = if config.variant.delayed() {
                    Some(likelihood.log_surrogate(&point.rates, &point.moments)?)
                } else {
                    None
                };
                let state = ChainState { point, log_estimate, log_surrogate };
                return Ok(Self { likelihood, config, rng, state, counters: Counters::default(), step: 0, moments_n });
            }
        }
        Err(Error::Numerical(format!("no prior draw with a positive likelihood estimate in {MAX_INIT_ATTEMPTS} attempts")))
    }

    fn estimate_seed(&self, purpose: u64) -> u64 {
        derive_seed(derive_seed(self.config.seed, self.step + 1), purpose)
    }

    fn refresh_current(&mut self) -> Result<()> {
        if self.config.variant.noisy() {
            self.state.log_estimate = self.likelihood.log_estimate(&self.state.point.rates, self.estimate_seed(2))?;
        }
        Ok(())
    }

    /// One pseudo-marginal iteration. Returns whether the move was accepted.
    pub fn pm_step(&mut self) -> Result<bool> {
        self.step += 1;
        self.counters.proposals += 1;
        let (params, log_q) = propose(&self.state.point.coords, &self.config.prior, self.config.scale, &mut self.rng);
        let candidate = Point::new(&self.config.prior, params, self.likelihood.sample_size(), self.moments_n)?;
        self.counters.stage1_accepted += 1;
        if candidate.log_prior == f64::NEG_INFINITY {
            return Ok(false);
        }
        self.refresh_current()?;
        self.counters.full_evaluations += 1;
        let est = self.likelihood.log_estimate(&candidate.rates, self.estimate_seed(1))?;
        if est == f64::NEG_INFINITY {
            return Ok(false);
        }
        let log_a = est + candidate.log_prior + log_q - self.state.log_estimate - self.state.point.log_prior;
        if accept(log_a, &mut self.rng) {
            self.counters.accepted += 1;
            self.state = ChainState { point: candidate, log_estimate: est, log_surrogate: None };
            return Ok(true);
        }
        Ok(false)
    }

    /// One delayed-acceptance iteration. Returns (stage 1 passed, accepted).
    pub fn da_step(&mut self) -> Result<(bool, bool)> {
        self.step += 1;
        self.counters.proposals += 1;
        let (params, log_q) = propose(&self.state.point.coords, &self.config.prior, self.config.scale, &mut self.rng);
        let candidate = Point::new(&self.config.prior, params, self.likelihood.sample_size(), self.moments_n)?;
        if candidate.log_prior == f64::NEG_INFINITY {
            return Ok((false, false));
        }
        let cur_surr = match self.state.log_surrogate {
            Some(v) => v,
            None => self.likelihood.log_surrogate(&self.state.point.rates, &self.state.point.moments)?,
        };
        let surr = self.likelihood.log_surrogate(&candidate.rates, &candidate.moments)?;
        let log_a1 = surr + candidate.log_prior + log_q - cur_surr - self.state.point.log_prior;
        if surr == f64::NEG_INFINITY || !accept(log_a1, &mut self.rng) {
            return Ok((false, false));
        }
        self.counters.stage1_accepted += 1;
        self.refresh_current()?;
        self.counters.full_evaluations += 1;
        let est = self.likelihood.log_estimate(&candidate.rates, self.estimate_seed(1))?;
        if est == f64::NEG_INFINITY {
            return Ok((true, false));
        }
        let log_a2 = (est - self.state.log_estimate) - (surr - cur_surr);
        if accept(log_a2, &mut self.rng) {
            self.counters.accepted += 1;
            self.state = ChainState { point: candidate, log_estimate: est, log_surrogate: Some(surr) };
            return Ok((true, true));
        }
        Ok((true, false))
    }

    /// Advance one step with the configured variant.
    pub fn step(&mut self) -> Result<(bool, bool)> {
        if self.config.variant.delayed() {
            self.da_step()
        } else {
            self.pm_step().map(|a| (true, a))
        }
    }

    fn record(&self, step: usize, accepted: bool, stage1: bool, start: &Instant) -> ChainRecord {
        ChainRecord {
            step,
            params: self.state.point.params.to_vec(),
            moments: self.state.point.moments.values().to_vec(),
            log_estimate: self.state.log_estimate,
            accepted,
            stage1_accepted: stage1,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// Run a chain from a prior draw. Step 0 is the initial state.
pub fn run_chain<L: LogLikelihood>(likelihood: &L, config: &ChainConfig) -> Result<ChainOutput> {
    let start = Instant::now();
    let mut sampler = Sampler::new(likelihood, config)?;
    let mut records = vec![sampler.record(0, false, false, &start)];
    for step in 1..=config.steps {
        let (stage1, accepted) = sampler.step()?;
        if step % config.thin == 0 {
            records.push(sampler.record(step, accepted, stage1, &start));
        }
    }
    Ok(ChainOutput { records, counters: sampler.counters, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Every `factor`-th element, starting with the first.
pub fn thin(trace: &[f64], factor: usize) -> Vec<f64> {
    trace.iter().step_by(factor.max(1)).copied().collect()
}

/// Central empirical interval with type-7 quantiles.
pub fn credible_interval(trace: &[f64], level: f64) -> Result<(f64, f64)> {
    if trace.is_empty() {
        return domain("trace is empty");
    }
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("level must lie in (0, 1), got {level}"));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_type7(&sorted, tail), quantile_type7(&sorted, 1.0 - tail)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn proposal_ratio_vanishes_in_the_interior() {
        let spec = PriorSpec::default();
        let p = vec![0.5; 11];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (q, lr) = propose(&p, &spec, 0.0025, &mut rng);
            assert!(PriorParams::from_vec(&spec, &q).unwrap().in_box(&spec));
            // both points sit more than 5 sd from every edge unless the step was huge
            if q.iter().all(|x| (0.25..=0.75).contains(x)) {
                assert!(lr.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn proposal_ratio_at_boundary() {
        let spec = PriorSpec::default();
        let mut p = vec![0.5; 11];
        p[..4].fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, lr) = propose(&p, &spec, 0.0025, &mut rng);
        // from the edge only half the normal mass is inside, so Z(x) < Z(x')
        let expect: f64 = q[..4]
            .iter()
            .map(|&y| box_mass(1.0, 0.05, spec.eta, 1.0).ln() - box_mass(y, 0.05, spec.eta, 1.0).ln())
            .sum::<f64>();
        assert!((lr - expect).abs() < 1e-9);
        assert!(lr < 0.0);
    }

    #[test]
    fn acceptance_is_bernoulli() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| accept(0.0, &mut rng)));
        assert!((0..100).all(|_| accept(2f64.ln(), &mut rng)));
        let n = 10_000;
        let hits = (0..n).filter(|_| accept(0.5f64.ln(), &mut rng)).count() as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((hits / n as f64 - 0.5).abs() < 3.0 * se);
        assert!(!accept(f64::NEG_INFINITY, &mut rng));
    }

    #[test]
    fn intervals() {
        assert_eq!(credible_interval(&[0.3; 10], 0.95).unwrap(), (0.3, 0.3));
        let u: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let (lo, hi) = credible_interval(&u, 0.95).unwrap();
        assert!((lo - 0.025).abs() < 0.01 && (hi - 0.975).abs() < 0.01);
        assert!(credible_interval(&[], 0.95).is_err());
        assert!(credible_interval(&[1.0], 1.0).is_err());
        assert_eq!(thin(&[1.0, 2.0, 3.0, 4.0, 5.0], 2), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Exact, Variant::Noisy, Variant::DaExact, Variant::DaNoisy] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("fast".parse::<Variant>().is_err());
    }
}
