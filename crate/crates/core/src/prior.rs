//! Truncated stick-breaking prior over mixtures of truncated normal kernels.
//!
//! A draw has T kernel locations uniform on [η, 1], kernel standard
//! deviations from a Beta prior, and T-1 stick fractions from
//! Beta(1, α_0); the last weight is the remainder of the stick.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::beta::ln_beta;

use crate::error::{domain, Result};
use crate::genealogy::stream_rng;
use crate::measure::{LambdaMeasure, NormalKernel, DEFAULT_ETA};
use crate::moments::MomentSequence;

/// Sticks drawn at 1 are pulled back to this value so every sampled point
/// has finite prior density.
pub const MAX_STICK: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub eta: f64,
    pub truncation: usize,
    pub alpha0: f64,
    /// Beta shape parameters of the kernel standard deviations.
    pub sigma_prior: (f64, f64),
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA, truncation: 4, alpha0: 0.1, sigma_prior: (1.0, 3.0) }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return domain("truncation level must be at least 1");
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return domain(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return domain(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        let (a, b) = self.sigma_prior;
        if !(a > 0.0 && b > 0.0) {
            return domain(format!("sigma prior shapes must be positive, got ({a}, {b})"));
        }
        Ok(())
    }

    /// Number of free coordinates, 3T - 1.
    pub fn dimension(&self) -> usize {
        3 * self.truncation - 1
    }

    /// Coordinate-wise box `[lo, hi]` in the order locations, sigmas, sticks.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let t = self.truncation;
        let mut b = vec![(self.eta, 1.0); t];
        b.extend(std::iter::repeat_n((0.0, 1.0), 2 * t - 1));
        b
    }

    /// Total-variation bound `4 N exp(-(T-1)/α_0)` on the effect of
    /// truncating the stick-breaking prior, for N observations.
    pub fn truncation_error_bound(&self, data_size: usize) -> f64 {
        4.0 * data_size as f64 * (-((self.truncation - 1) as f64) / self.alpha0).exp()
    }
}

pub fn truncation_error_bound(spec: &PriorSpec, data_size: usize) -> f64 {
    spec.truncation_error_bound(data_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub locations: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub sticks: Vec<f64>,
}

impl PriorParams {
    /// Stick-breaking weights; the last is the unbroken remainder.
    pub fn weights(&self) -> Vec<f64> {
        let mut rest = 1.0;
        let mut w = Vec::with_capacity(self.sticks.len() + 1);
        for &v in &self.sticks {
            w.push(v * rest);
            rest *= 1.0 - v;
        }
        w.push(rest);
        w
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.locations.clone();
        v.extend_from_slice(&self.sigmas);
        v.extend_from_slice(&self.sticks);
        v
    }

    pub fn from_vec(spec: &PriorSpec, v: &[f64]) -> Result<Self> {
        let t = spec.truncation;
        if v.len() != spec.dimension() {
            return domain(format!("expected {} coordinates, got {}", spec.dimension(), v.len()));
        }
        Ok(Self { locations: v[..t].to_vec(), sigmas: v[t..2 * t].to_vec(), sticks: v[2 * t..].to_vec() })
    }

    /// Column names matching [`PriorParams::to_vec`].
    pub fn column_names(spec: &PriorSpec) -> Vec<String> {
        let t = spec.truncation;
        let mut names: Vec<String> = (1..=t).map(|i| format!("loc{i}")).collect();
        names.extend((1..=t).map(|i| format!("sigma{i}")));
        names.extend((1..t).map(|i| format!("stick{i}")));
        names
    }

    pub fn in_box(&self, spec: &PriorSpec) -> bool {
        self.to_vec().iter().zip(spec.bounds()).all(|(x, (lo, hi))| *x >= lo && *x <= hi)
    }

    pub fn to_measure(&self, spec: &PriorSpec) -> Result<LambdaMeasure> {
        let kernels = self
            .locations
            .iter()
            .zip(&self.sigmas)
            .zip(self.weights())
            .map(|((&location, &sigma), weight)| NormalKernel { location, sigma, weight })
            .collect();
        LambdaMeasure::new(0.0, vec![], kernels, vec![], spec.eta)
    }
}

pub fn sample_prior_with<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> Result<PriorParams> {
    spec.validate()?;
    let t = spec.truncation;
    let sigma_dist = Beta::new(spec.sigma_prior.0, spec.sigma_prior.1)
        .map_err(|e| crate::error::Error::Domain(e.to_string()))?;
    let locations = (0..t).map(|_| spec.eta + (1.0 - spec.eta) * rng.random::<f64>()).collect();
    let sigmas = (0..t).map(|_| sigma_dist.sample(rng)).collect();
    // Beta(1, α) by inversion: 1 - U^{1/α}
    let sticks = (0..t - 1)
        .map(|_| {
            let u: f64 = rng.random();
            unit_to_stick(u, spec.alpha0)
        })
        .collect();
    Ok(PriorParams { locations, sigmas, sticks })
}

pub fn sample_prior(spec: &PriorSpec, seed: u64) -> Result<PriorParams> {
    sample_prior_with(spec, &mut stream_rng(seed, 0))
}

/// Log density with respect to Lebesgue measure on the coordinate box;
/// −∞ outside the box or where a factor vanishes.
pub fn log_prior_density(spec: &PriorSpec, params: &PriorParams) -> f64 {
    if params.locations.len() != spec.truncation
        || params.sigmas.len() != spec.truncation
        || params.sticks.len() + 1 != spec.truncation
        || !params.in_box(spec)
    {
        return f64::NEG_INFINITY;
    }
    let mut lp = -(spec.truncation as f64) * (1.0 - spec.eta).ln();
    let (a, b) = spec.sigma_prior;
    for &s in &params.sigmas {
        if s <= 0.0 || s >= 1.0 {
            return f64::NEG_INFINITY;
        }
        lp += (a - 1.0) * s.ln() + (b - 1.0) * (-s).ln_1p() - ln_beta(a, b);
    }
    for &v in &params.sticks {
        if v >= 1.0 {
            return f64::NEG_INFINITY;
        }
        lp += spec.alpha0.ln() + (spec.alpha0 - 1.0) * (-v).ln_1p();
    }
    lp
}

/// Stick coordinate under which the Beta(1, α_0) prior is uniform,
/// `u = (1 - v)^{α_0}`.
pub fn stick_to_unit(v: f64, alpha0: f64) -> f64 {
    (alpha0 * (-v).ln_1p()).exp()
}

/// Inverse of [`stick_to_unit`], clamped to [`MAX_STICK`].
pub fn unit_to_stick(u: f64, alpha0: f64) -> f64 {
    (1.0 - u.powf(1.0 / alpha0)).min(MAX_STICK)
}

impl PriorParams {
    /// Sampler coordinates: locations, sigmas, then sticks mapped by
    /// [`stick_to_unit`]. The box is the same as for [`PriorParams::to_vec`].
    pub fn to_chain_vec(&self, spec: &PriorSpec) -> Vec<f64> {
        let mut v = self.locations.clone();
        v.extend_from_slice(&self.sigmas);
        v.extend(self.sticks.iter().map(|&s| stick_to_unit(s, spec.alpha0)));
        v
    }

    pub fn from_chain_vec(spec: &PriorSpec, v: &[f64]) -> Result<Self> {
        let mut p = Self::from_vec(spec, v)?;
        for s in &mut p.sticks {
            *s = unit_to_stick(*s, spec.alpha0);
        }
        Ok(p)
    }
}

/// Log prior density with respect to Lebesgue measure on sampler
/// coordinates; the stick factors are uniform there.
pub fn log_chain_density(spec: &PriorSpec, coords: &[f64]) -> f64 {
    let t = spec.truncation;
    if coords.len() != spec.dimension() || coords.iter().zip(spec.bounds()).any(|(x, (lo, hi))| !(*x >= lo && *x <= hi)) {
        return f64::NEG_INFINITY;
    }
    let mut lp = -(t as f64) * (1.0 - spec.eta).ln();
    let (a, b) = spec.sigma_prior;
    for &s in &coords[t..2 * t] {
        if s <= 0.0 || s >= 1.0 {
            return f64::NEG_INFINITY;
        }
        lp += (a - 1.0) * s.ln() + (b - 1.0) * (-s).ln_1p() - ln_beta(a, b);
    }
    if coords[2 * t..].iter().any(|&u| u <= 0.0) {
        return f64::NEG_INFINITY;
    }
    lp
}

pub fn params_to_moments(spec: &PriorSpec, params: &PriorParams, n: usize) -> Result<MomentSequence> {
    MomentSequence::from_measure(&params.to_measure(spec)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::is_completely_monotonic;

    #[test]
    fn truncation_bound_matches_closed_form() {
        let spec = PriorSpec::default();
        let b = spec.truncation_error_bound(100);
        assert!((b - 400.0 * (-30.0f64).exp()).abs() < 1e-20);
        assert!((b - 3.74e-11).abs() < 0.01e-11);
        let one = PriorSpec { truncation: 1, ..spec };
        assert_eq!(one.truncation_error_bound(100), 400.0);
    }

    #[test]
    fn weights_sum_to_one() {
        let spec = PriorSpec::default();
        for seed in 0..50 {
            let p = sample_prior(&spec, seed).unwrap();
            assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(p.in_box(&spec));
            assert!(log_prior_density(&spec, &p).is_finite());
        }
    }

    #[test]
    fn density_values() {
        let spec = PriorSpec::default();
        let mut p = PriorParams { locations: vec![0.5; 4], sigmas: vec![0.25; 4], sticks: vec![0.3, 0.5, 0.7] };
        let base = -4.0 * (1.0 - spec.eta).ln() + 4.0 * (3.0f64 * 0.75 * 0.75).ln();
        let sticks: f64 = [0.3f64, 0.5, 0.7].iter().map(|v| (0.1 * (1.0 - v).powf(-0.9)).ln()).sum();
        assert!((log_prior_density(&spec, &p) - base - sticks).abs() < 1e-12);
        p.sigmas[0] = 1.0;
        assert_eq!(log_prior_density(&spec, &p), f64::NEG_INFINITY);
        p.sigmas[0] = 0.2;
        p.locations[1] = 1.2;
        assert_eq!(log_prior_density(&spec, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn chain_coordinates_round_trip() {
        let spec = PriorSpec::default();
        let p = PriorParams { locations: vec![0.5; 4], sigmas: vec![0.25; 4], sticks: vec![0.3, 0.9, 0.999] };
        let c = p.to_chain_vec(&spec);
        let q = PriorParams::from_chain_vec(&spec, &c).unwrap();
        for (a, b) in p.sticks.iter().zip(&q.sticks) {
            assert!((a - b).abs() < 1e-12);
        }
        // the chain density drops exactly the stick factors
        let sticks: f64 = p.sticks.iter().map(|v| (0.1 * (1.0 - v).powf(-0.9)).ln()).sum();
        assert!((log_chain_density(&spec, &c) - log_prior_density(&spec, &p) + sticks).abs() < 1e-10);
        let mut bad = c.clone();
        bad[10] = 0.0;
        assert_eq!(log_chain_density(&spec, &bad), f64::NEG_INFINITY);
    }

    #[test]
    fn narrow_kernel_collapses_to_atom() {
        let spec = PriorSpec::default();
        let p = PriorParams { locations: vec![0.5, 0.2, 0.2, 0.2], sigmas: vec![1e-6; 4], sticks: vec![1.0 - 1e-15, 0.5, 0.5] };
        let m = params_to_moments(&spec, &p, 10).unwrap();
        for k in 3..=10 {
            assert!((m.get(k).unwrap() - 0.5f64.powi(k as i32 - 2)).abs() < 1e-4);
        }
        assert!(is_completely_monotonic(&m).unwrap().is_monotonic());
    }
}
