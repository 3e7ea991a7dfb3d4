//! Λ-measures: finite measures on [0, 1] that drive multiple-merger
//! coalescents.
//!
//! A [`LambdaMeasure`] is a point mass at 0 (the Kingman part), a finite
//! list of atoms in (0, 1], a mixture of truncated normal kernels on
//! [η, 1], and optionally Beta densities (used for the classical
//! Beta-coalescent families). Monomial moments `λ_k = ∫ x^{k-2} Λ(dx)` and
//! the merger rates `λ_{p,k}` are computed directly from these parts.

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::kv::KvFile;
use crate::numeric::{binomial_table, composite_nodes, norm_cdf, norm_pdf, tanh_sinh};

/// Default left cutoff of the density part.
pub const DEFAULT_ETA: f64 = 1e-6;

const MASS_TOL: f64 = 1e-12;
/// Kernel windows extend this many standard deviations either side.
const KERNEL_SPAN: f64 = 12.0;
const KERNEL_PANELS: usize = 16;

/// Normal kernel centred at `location`, truncated to [η, 1] and renormalised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalKernel {
    pub location: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// `weight × Beta(a, b)` density on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaComponent {
    pub a: f64,
    pub b: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMeasure {
    kingman_mass: f64,
    atoms: Vec<(f64, f64)>,
    kernels: Vec<NormalKernel>,
    betas: Vec<BetaComponent>,
    eta: f64,
}

impl LambdaMeasure {
    /// Validated constructor. Total mass must be 1.
    pub fn new(
        kingman_mass: f64,
        atoms: Vec<(f64, f64)>,
        kernels: Vec<NormalKernel>,
        betas: Vec<BetaComponent>,
        eta: f64,
    ) -> Result<Self> {
        let m = Self::new_finite(kingman_mass, atoms, kernels, betas, eta)?;
        let total = m.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return domain(format!("Λ-measure total mass is {total}, expected 1"));
        }
        Ok(m)
    }

    /// Like [`LambdaMeasure::new`] but accepts any finite total mass. Needed for
    /// parametric families that are conventionally written unnormalised.
    pub fn new_finite(
        kingman_mass: f64,
        atoms: Vec<(f64, f64)>,
        kernels: Vec<NormalKernel>,
        betas: Vec<BetaComponent>,
        eta: f64,
    ) -> Result<Self> {
        if !(kingman_mass >= 0.0 && kingman_mass.is_finite()) {
            return domain(format!("kingman mass must be nonnegative, got {kingman_mass}"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return domain(format!("eta must lie in (0, 1), got {eta}"));
        }
        for &(x, w) in &atoms {
            if !(x > 0.0 && x <= 1.0) || !(w >= 0.0 && w.is_finite()) {
                return domain(format!("atom ({x}, {w}) must have location in (0,1] and weight >= 0"));
            }
        }
        let mut atoms = atoms;
        let mut kept = Vec::with_capacity(kernels.len());
        for k in kernels {
            if !(k.weight >= 0.0 && k.weight.is_finite()) {
                return domain(format!("kernel weight must be nonnegative, got {}", k.weight));
            }
            if !(k.location >= eta && k.location <= 1.0) {
                return domain(format!("kernel location {} outside [eta, 1]", k.location));
            }
            if !(k.sigma >= 0.0 && k.sigma.is_finite()) {
                return domain(format!("kernel sigma must be nonnegative, got {}", k.sigma));
            }
            if k.sigma == 0.0 {
                atoms.push((k.location, k.weight));
            } else {
                kept.push(k);
            }
        }
        for b in &betas {
            if !(b.a > 0.0 && b.b > 0.0 && b.weight >= 0.0 && b.weight.is_finite()) {
                return domain(format!("invalid Beta component {b:?}"));
            }
        }
        Ok(Self { kingman_mass, atoms, kernels: kept, betas, eta })
    }

    pub fn kingman() -> Self {
        Self { kingman_mass: 1.0, atoms: vec![], kernels: vec![], betas: vec![], eta: DEFAULT_ETA }
    }

    /// δ_x for x in [0, 1].
    pub fn dirac(x: f64) -> Result<Self> {
        if x == 0.0 {
            return Ok(Self::kingman());
        }
        Self::new(0.0, vec![(x, 1.0)], vec![], vec![], DEFAULT_ETA)
    }

    /// Star coalescent, Λ = δ_1.
    pub fn star() -> Self {
        Self::dirac(1.0).expect("valid")
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::new(0.0, vec![], vec![], vec![BetaComponent { a, b, weight: 1.0 }], DEFAULT_ETA)
    }

    /// Bolthausen–Sznitman coalescent, Λ = U(0, 1).
    pub fn uniform() -> Self {
        Self::beta(1.0, 1.0).expect("valid")
    }

    /// `2/(2+ψ²) δ_0 + ψ²/(2+ψ²) δ_ψ`, ψ in (0, 1].
    pub fn eldon_wakeley(psi: f64) -> Result<Self> {
        if !(psi > 0.0 && psi <= 1.0) {
            return domain(format!("psi must lie in (0, 1], got {psi}"));
        }
        let z = 2.0 + psi * psi;
        Self::new(2.0 / z, vec![(psi, psi * psi / z)], vec![], vec![], DEFAULT_ETA)
    }

    /// `c δ_0 + (1-c)/2 · r dr`, c in [0, 1], written unnormalised as in the
    /// standard parametrisation (total mass `c + (1-c)/4`).
    pub fn durrett_schweinsberg(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return domain(format!("c must lie in [0, 1], got {c}"));
        }
        // (1-c)/2 · r dr = (1-c)/4 · Beta(2, 1)
        Self::new_finite(
            c,
            vec![],
            vec![],
            vec![BetaComponent { a: 2.0, b: 1.0, weight: (1.0 - c) / 4.0 }],
            DEFAULT_ETA,
        )
    }

    pub fn kingman_mass(&self) -> f64 {
        self.kingman_mass
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn kernels(&self) -> &[NormalKernel] {
        &self.kernels
    }

    pub fn betas(&self) -> &[BetaComponent] {
        &self.betas
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn total_mass(&self) -> f64 {
        self.kingman_mass
            + self.atoms.iter().map(|a| a.1).sum::<f64>()
            + self.kernels.iter().map(|k| k.weight).sum::<f64>()
            + self.betas.iter().map(|b| b.weight).sum::<f64>()
    }

    /// Quadrature discretisation of the kernel part together with the atoms:
    /// `(location, mass)` pairs whose integrals against smooth functions
    /// reproduce the kernel mixture to near machine precision.
    pub fn point_masses(&self) -> Vec<(f64, f64)> {
        let mut out = self.atoms.clone();
        for k in &self.kernels {
            if k.weight == 0.0 {
                continue;
            }
            let lo = self.eta.max(k.location - KERNEL_SPAN * k.sigma);
            let hi = 1.0f64.min(k.location + KERNEL_SPAN * k.sigma);
            let z = kernel_normaliser(k, self.eta);
            for (r, w) in composite_nodes(lo, hi, KERNEL_PANELS) {
                let dens = norm_pdf((r - k.location) / k.sigma) / (k.sigma * z);
                out.push((r, k.weight * w * dens));
            }
        }
        out
    }

    /// Monomial moment `λ_k = ∫ x^{k-2} Λ(dx)`, k ≥ 2.
    pub fn moment(&self, k: usize) -> Result<f64> {
        if k < 2 {
            return domain(format!("moment index must be >= 2, got {k}"));
        }
        if k == 2 {
            return Ok(self.total_mass());
        }
        let pw = (k - 2) as i32;
        let mut acc: f64 = self.point_masses().iter().map(|&(x, w)| w * x.powi(pw)).sum();
        for b in &self.betas {
            acc += b.weight * beta_raw_moment(b.a, b.b, k - 2);
        }
        Ok(acc)
    }

    /// `λ_3, …, λ_n`, sharing one discretisation of the kernel part.
    pub fn moments_up_to(&self, n: usize) -> Vec<f64> {
        if n < 3 {
            return vec![];
        }
        let points = self.point_masses();
        (3..=n)
            .map(|k| {
                let pw = (k - 2) as i32;
                let mut acc: f64 = points.iter().map(|&(x, w)| w * x.powi(pw)).sum();
                for b in &self.betas {
                    acc += b.weight * beta_raw_moment(b.a, b.b, k - 2);
                }
                acc
            })
            .collect()
    }

    /// Merger rate of any particular k-subset when p blocks are present:
    /// `λ_{p,k} = Λ({0})·1{k=2} + ∫_(0,1] (1-r)^{p-k} r^{k-2} Λ(dr)`.
    pub fn polynomial_moment(&self, p: usize, k: usize) -> Result<f64> {
        if k < 2 || k > p {
            return domain(format!("polynomial moment needs 2 <= k <= p, got p={p}, k={k}"));
        }
        let mut acc = if k == 2 { self.kingman_mass } else { 0.0 };
        let (a, b) = ((k - 2) as i32, (p - k) as i32);
        acc += self
            .point_masses()
            .iter()
            .map(|&(x, w)| w * x.powi(a) * (1.0 - x).powi(b))
            .sum::<f64>();
        for c in &self.betas {
            acc += c.weight * beta_polynomial_moment(c.a, c.b, p, k);
        }
        Ok(acc)
    }

    /// `-q_{nn} = Σ_{k=2}^n C(n,k) λ_{n,k}`, the total merger rate with n blocks.
    pub fn total_merger_rate(&self, n: usize) -> Result<f64> {
        if n < 2 {
            return domain(format!("total merger rate needs n >= 2, got {n}"));
        }
        Ok(self.merger_rates(n).total(n))
    }

    /// All merger rates for block counts 2..=n_max.
    pub fn merger_rates(&self, n_max: usize) -> MergerRates {
        let n_max = n_max.max(2);
        let mut lambda: Vec<Vec<f64>> = (0..=n_max).map(|p| vec![0.0; p + 1]).collect();
        for row in lambda.iter_mut().skip(2) {
            row[2] += self.kingman_mass;
        }
        // For each point mass x, fill x^{k-2}(1-x)^{p-k} row by row:
        // row p+1 is row p times (1-x), plus the new diagonal x^{p-1}.
        let mut row = vec![0.0; n_max + 1];
        for (x, w) in self.point_masses() {
            if w == 0.0 {
                continue;
            }
            let y = 1.0 - x;
            row[2] = 1.0;
            let mut diag = 1.0;
            lambda[2][2] += w;
            for p in 3..=n_max {
                for v in row.iter_mut().take(p).skip(2) {
                    *v *= y;
                }
                diag *= x;
                row[p] = diag;
                for (acc, v) in lambda[p].iter_mut().zip(row.iter()).skip(2) {
                    *acc += w * v;
                }
            }
        }
        for c in &self.betas {
            for (p, lrow) in lambda.iter_mut().enumerate().skip(2) {
                for (k, acc) in lrow.iter_mut().enumerate().skip(2) {
                    *acc += c.weight * beta_polynomial_moment(c.a, c.b, p, k);
                }
            }
        }
        MergerRates::from_lambda(lambda)
    }

    /// Λ([0, x]) when `inclusive`, Λ([0, x)) otherwise.
    pub fn cdf(&self, x: f64, inclusive: bool) -> f64 {
        let mut acc = 0.0;
        if x > 0.0 || (x == 0.0 && inclusive) {
            acc += self.kingman_mass;
        }
        for &(loc, w) in &self.atoms {
            if loc < x || (inclusive && loc == x) {
                acc += w;
            }
        }
        for k in &self.kernels {
            if x <= self.eta {
                continue;
            }
            let z = kernel_normaliser(k, self.eta);
            let upper = x.min(1.0);
            let num = norm_cdf((upper - k.location) / k.sigma) - norm_cdf((self.eta - k.location) / k.sigma);
            acc += k.weight * (num / z).clamp(0.0, 1.0);
        }
        for b in &self.betas {
            acc += b.weight * beta_reg(b.a, b.b, x.clamp(0.0, 1.0));
        }
        acc
    }

    /// Density of the absolutely continuous part at r.
    pub fn density(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        if (self.eta..=1.0).contains(&r) {
            for k in &self.kernels {
                acc += k.weight * norm_pdf((r - k.location) / k.sigma) / (k.sigma * kernel_normaliser(k, self.eta));
            }
        }
        if (0.0..=1.0).contains(&r) {
            for b in &self.betas {
                let ln = (b.a - 1.0) * r.ln() + (b.b - 1.0) * (1.0 - r).ln() - ln_beta(b.a, b.b);
                acc += b.weight * ln.exp();
            }
        }
        acc
    }

    /// Parse the key-value measure description:
    /// `kingman_mass`, `atoms = [(loc, w)…]`, `kernels = [(loc, sigma, w)…]`,
    /// `betas = [(a, b, w)…]`, `eta`.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let known = ["kingman_mass", "atoms", "kernels", "betas", "eta"];
        if let Some(bad) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::Data(format!("unknown measure key `{bad}`")));
        }
        let kingman = kv.get_f64("kingman_mass")?.unwrap_or(0.0);
        let eta = kv.get_f64("eta")?.unwrap_or(DEFAULT_ETA);
        let atoms = kv
            .get_tuples("atoms", 2)?
            .unwrap_or_default()
            .into_iter()
            .map(|t| (t[0], t[1]))
            .collect();
        let kernels = kv
            .get_tuples("kernels", 3)?
            .unwrap_or_default()
            .into_iter()
            .map(|t| NormalKernel { location: t[0], sigma: t[1], weight: t[2] })
            .collect();
        let betas = kv
            .get_tuples("betas", 3)?
            .unwrap_or_default()
            .into_iter()
            .map(|t| BetaComponent { a: t[0], b: t[1], weight: t[2] })
            .collect();
        Self::new(kingman, atoms, kernels, betas, eta)
    }

    /// Serialise to the key-value measure format.
    pub fn to_kv(&self) -> String {
        let fmt2 = |v: &[(f64, f64)]| {
            v.iter().map(|(a, b)| format!("({a}, {b})")).collect::<Vec<_>>().join(", ")
        };
        let kernels = self
            .kernels
            .iter()
            .map(|k| format!("({}, {}, {})", k.location, k.sigma, k.weight))
            .collect::<Vec<_>>()
            .join(", ");
        let betas = self
            .betas
            .iter()
            .map(|b| format!("({}, {}, {})", b.a, b.b, b.weight))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "kingman_mass = {}\natoms = [{}]\nkernels = [{}]\nbetas = [{}]\neta = {}\n",
            self.kingman_mass,
            fmt2(&self.atoms),
            kernels,
            betas,
            self.eta
        )
    }

    /// Built-in named measures: `kingman`, `star`, `uniform`/`bs`,
    /// `beta:<alpha>` (Beta(2-α, α)), `ew:<psi>`, `ds:<c>`, `dirac:<x>`.
    pub fn named(name: &str) -> Result<Option<Self>> {
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => {
                let v = a
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad parameter in measure name `{name}`")))?;
                (h, Some(v))
            }
            None => (name, None),
        };
        let m = match (head, arg) {
            ("kingman", None) => Self::kingman(),
            ("star", None) => Self::star(),
            ("uniform" | "bs", None) => Self::uniform(),
            ("beta", Some(alpha)) => Self::beta(2.0 - alpha, alpha)?,
            ("ew", Some(psi)) => Self::eldon_wakeley(psi)?,
            ("ds", Some(c)) => Self::durrett_schweinsberg(c)?,
            ("dirac", Some(x)) => Self::dirac(x)?,
            _ => return Ok(None),
        };
        Ok(Some(m))
    }
}

fn kernel_normaliser(k: &NormalKernel, eta: f64) -> f64 {
    norm_cdf((1.0 - k.location) / k.sigma) - norm_cdf((eta - k.location) / k.sigma)
}

/// E[X^j] for X ~ Beta(a, b): `(a)_j / (a+b)_j`.
fn beta_raw_moment(a: f64, b: f64, j: usize) -> f64 {
    (0..j).map(|i| (a + i as f64) / (a + b + i as f64)).product()
}

/// `∫ (1-r)^{p-k} r^{k-2} Beta(a,b)(dr) = B(a+k-2, b+p-k) / B(a, b)`.
fn beta_polynomial_moment(a: f64, b: f64, p: usize, k: usize) -> f64 {
    (ln_beta(a + (k - 2) as f64, b + (p - k) as f64) - ln_beta(a, b)).exp()
}

/// Merger rates `λ_{p,k}` for 2 ≤ k ≤ p ≤ n_max, with the per-size event
/// rates `C(p,k) λ_{p,k}` and their totals `-q_{pp}`.
#[derive(Debug, Clone)]
pub struct MergerRates {
    lambda: Vec<Vec<f64>>,
    event: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl MergerRates {
    /// Build from a table `lambda[p][k]` (entries with k < 2 ignored).
    pub fn from_lambda(lambda: Vec<Vec<f64>>) -> Self {
        let n_max = lambda.len().saturating_sub(1);
        let binom = binomial_table(n_max);
        let mut event = Vec::with_capacity(n_max + 1);
        let mut total = vec![0.0; n_max + 1];
        for (p, row) in lambda.iter().enumerate() {
            let mut ev = vec![0.0; p + 1];
            if p >= 2 {
                for k in 2..=p {
                    ev[k] = binom[p][k] * row[k].max(0.0);
                }
                total[p] = ev.iter().sum();
            }
            event.push(ev);
        }
        Self { lambda, event, total }
    }

    pub fn max_blocks(&self) -> usize {
        self.lambda.len() - 1
    }

    pub fn lambda(&self, p: usize, k: usize) -> f64 {
        self.lambda[p][k]
    }

    /// `C(p,k) λ_{p,k}`: rate at which some k of p blocks merge.
    pub fn event_rate(&self, p: usize, k: usize) -> f64 {
        self.event[p][k]
    }

    pub fn event_rates(&self, p: usize) -> &[f64] {
        &self.event[p]
    }

    pub fn total(&self, p: usize) -> f64 {
        self.total[p]
    }
}

/// The two reference coalescents of the parent-independent two-allele example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoAlleleModel {
    /// Λ = δ_0.
    Kingman,
    /// Λ = δ_1.
    Star,
}

fn ln_stationary(which: TwoAlleleModel, theta: f64, x: f64, one_minus_x: f64, dist_to_half: f64) -> f64 {
    match which {
        TwoAlleleModel::Kingman => {
            ln_gamma(2.0 * theta) - 2.0 * ln_gamma(theta) + (theta - 1.0) * (x.ln() + one_minus_x.ln())
        }
        TwoAlleleModel::Star => {
            let expo = (1.0 - theta) / theta;
            let base = 2.0 * dist_to_half;
            if expo == 0.0 {
                -theta.ln()
            } else {
                -theta.ln() + expo * base.ln()
            }
        }
    }
}

/// Stationary density of the type-1 frequency in the parent-independent
/// two-allele model (`M_ij = 1/2`) under Kingman or star coalescent duals.
pub fn stationary_density_two_allele(which: TwoAlleleModel, theta: f64, x: f64) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return domain(format!("theta must be positive, got {theta}"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x must lie in [0, 1], got {x}"));
    }
    Ok(ln_stationary(which, theta, x, 1.0 - x, (0.5 - x).abs()).exp())
}

/// `E^{generating}[Q(δ_0 | X)]` for the prior `½ δ_{δ_0} + ½ δ_{δ_1}` and a
/// single draw X from the generating stationary law. Equivalent to the
/// posterior limit from infinitely many contemporaneous observations.
pub fn expected_limiting_posterior(theta: f64, generating: TwoAlleleModel) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return domain(format!("theta must be positive, got {theta}"));
    }
    // Both densities are symmetric about 1/2; integrate [0, 1/2] and double.
    // Singularities sit at 0 (Beta part, θ < 1) and 1/2 (star part, θ > 1),
    // which are exactly the endpoints tanh-sinh resolves.
    let integrand = |x: f64, dl: f64, dr: f64| -> f64 {
        let l0 = ln_stationary(TwoAlleleModel::Kingman, theta, dl, 1.0 - x, dr);
        let l1 = ln_stationary(TwoAlleleModel::Star, theta, dl, 1.0 - x, dr);
        let post0 = 1.0 / (1.0 + (l1 - l0).exp());
        let lg = match generating {
            TwoAlleleModel::Kingman => l0,
            TwoAlleleModel::Star => l1,
        };
        lg.exp() * post0
    };
    let (half, _err) = tanh_sinh(integrand, 0.0, 0.5, 1e-12)?;
    Ok(2.0 * half)
}
