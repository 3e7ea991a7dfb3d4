//! Truncated moment sequences `(λ_3, …, λ_n)` and the classical machinery
//! on them: complete monotonicity, orthonormal polynomials, Gauss rules,
//! Chebyshev–Markov–Stieltjes envelopes and interlaced representatives.
//!
//! Throughout, `λ_2 := 1` and the underlying measure has raw moments
//! `μ_j = λ_{j+2}`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::discrete::DiscreteMeasure;
use crate::error::{domain, Error, Result};
use crate::measure::{LambdaMeasure, MergerRates, DEFAULT_ETA};

/// Pivot threshold below which the Hankel factorisation is declared
/// degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    values: Vec<f64>,
}

impl MomentSequence {
    /// `values[0] = λ_3`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return domain("moment sequence is empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("moment sequence contains non-finite values");
        }
        Ok(Self { values })
    }

    pub fn from_measure(measure: &LambdaMeasure, n: usize) -> Result<Self> {
        if n < 3 {
            return domain(format!("moment sequences start at λ_3; n = {n} is too small"));
        }
        Self::new(measure.moments_up_to(n))
    }

    /// Implied sample size n (the sequence is λ_3..λ_n).
    pub fn n(&self) -> usize {
        self.values.len() + 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// λ_k for 2 ≤ k ≤ n.
    pub fn get(&self, k: usize) -> Option<f64> {
        match k {
            2 => Some(1.0),
            k if k >= 3 && k <= self.n() => Some(self.values[k - 3]),
            _ => None,
        }
    }

    /// Truncate to λ_3..λ_n.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n < 3 || n > self.n() {
            return domain(format!("cannot truncate a length-{} sequence to n = {n}", self.n()));
        }
        Self::new(self.values[..n - 2].to_vec())
    }

    fn with_lambda2(&self) -> Vec<f64> {
        let mut full = Vec::with_capacity(self.values.len() + 1);
        full.push(1.0);
        full.extend_from_slice(&self.values);
        full
    }

    /// Polynomial moments `λ_{m,k} = Σ_j C(m-k, j) (-1)^j λ_{k+j}` for
    /// 2 ≤ k ≤ m ≤ n, returned as `table[m][k]` together with the matching
    /// table of absolute sums `Σ_j C(m-k, j) |λ_{k+j}|` (the scale that
    /// rounding errors in the transform are proportional to).
    pub fn binomial_transform(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let full = self.with_lambda2();
        let n = self.n();
        let mut table = vec![vec![]; n + 1];
        let mut scale = vec![vec![]; n + 1];
        for m in 2..=n {
            let mut row = vec![0.0; m + 1];
            let mut srow = vec![0.0; m + 1];
            row[m] = full[m - 2];
            srow[m] = full[m - 2].abs();
            for k in (2..m).rev() {
                // λ_{m,k} = λ_{m-1,k} - λ_{m,k+1}
                row[k] = table[m - 1][k] - row[k + 1];
                srow[k] = scale[m - 1][k] + srow[k + 1];
            }
            table[m] = row;
            scale[m] = srow;
        }
        (table, scale)
    }

    /// Merger rates implied by the sequence, valid for up to n blocks.
    pub fn merger_rates(&self) -> Result<MergerRates> {
        let report = is_completely_monotonic(self)?;
        if !report.is_monotonic() {
            return domain(format!(
                "moment sequence is not completely monotonic ({} violations, first {:?})",
                report.violations.len(),
                report.violations[0]
            ));
        }
        let (table, _) = self.binomial_transform();
        let lambda = table
            .into_iter()
            .enumerate()
            .map(|(p, row)| if p < 2 { vec![0.0; p + 1] } else { row })
            .collect();
        Ok(MergerRates::from_lambda(lambda))
    }

    /// Single-column CSV with header `lambda_k`, first row λ_3.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda_k\n");
        for v in &self.values {
            s.push_str(&format!("{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == "lambda_k" => {}
            Some((i, h)) => {
                return Err(Error::Parse { line: i + 1, msg: format!("expected header `lambda_k`, found `{h}`") })
            }
            None => return Err(Error::Data("empty moment file".into())),
        }
        let values = lines
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("`{}` is not a number", l.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values).map_err(|_| Error::Data("moment file has no values".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub m: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub violations: Vec<Violation>,
}

impl MonotonicityReport {
    pub fn is_monotonic(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `λ_{m,k} ≥ -tol` for every 2 ≤ k ≤ m ≤ n. The tolerance is
/// `1e-12` plus a rounding allowance proportional to the absolute scale of
/// each alternating sum, so exact Hausdorff sequences are never rejected
/// because of cancellation in long transforms.
pub fn is_completely_monotonic(seq: &MomentSequence) -> Result<MonotonicityReport> {
    if seq.values.is_empty() {
        return domain("moment sequence is empty");
    }
    let (table, scale) = seq.binomial_transform();
    let mut violations = Vec::new();
    for m in 2..=seq.n() {
        for k in 2..=m {
            let tol = 1e-12 + 4.0 * (m - k + 1) as f64 * f64::EPSILON * scale[m][k];
            if table[m][k] < -tol {
                violations.push(Violation { m, k, value: table[m][k] });
            }
        }
    }
    Ok(MonotonicityReport { violations })
}

/// Three-term recurrence of the orthonormal polynomials of any measure in
/// the moment class: `β_{k+1} φ_{k+1}(x) = (x - α_k) φ_k(x) - β_k φ_{k-1}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    /// α_0..α_{order-1}.
    pub alpha: Vec<f64>,
    /// β_1..β_{order-1} (the Jacobi off-diagonal).
    pub beta: Vec<f64>,
    /// Total mass μ_0 (= λ_2 = 1).
    pub mu0: f64,
    /// Number of polynomials φ_0..φ_{order-1} that are well defined.
    pub order: usize,
    /// Order requested by the caller.
    pub requested: usize,
    /// True when the factorisation stopped early.
    pub degenerate: bool,
}

impl Recurrence {
    /// `φ_0(x), …, φ_{order-1}(x)`.
    pub fn eval_orthonormal(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.order);
        let mut prev = 0.0;
        let mut cur = 1.0 / self.mu0.sqrt();
        out.push(cur);
        for k in 0..self.order.saturating_sub(1) {
            let b_prev = if k == 0 { 0.0 } else { self.beta[k - 1] };
            let next = ((x - self.alpha[k]) * cur - b_prev * prev) / self.beta[k];
            prev = cur;
            cur = next;
            out.push(cur);
        }
        out
    }

    /// Christoffel function `ρ_{order-1}(x) = (Σ_{k<order} φ_k(x)²)^{-1}`.
    pub fn christoffel(&self, x: f64) -> f64 {
        1.0 / self.eval_orthonormal(x).iter().map(|v| v * v).sum::<f64>()
    }
}

/// Default order `m = ⌊(n-3)/2⌋` for a sequence λ_3..λ_n.
pub fn default_order(seq: &MomentSequence) -> usize {
    (seq.n() - 3) / 2
}

pub fn orthonormal_polynomials(seq: &MomentSequence) -> Result<Recurrence> {
    orthonormal_polynomials_of_order(seq, default_order(seq))
}

/// Recurrence coefficients up to order `m` from the Cholesky factor of the
/// Hankel matrix `H_ij = μ_{i+j}`. Requires moments through `λ_{2m+1}`.
pub fn orthonormal_polynomials_of_order(seq: &MomentSequence, m: usize) -> Result<Recurrence> {
    if m < 1 {
        return domain(format!("need order m >= 1 (sequence has n = {}, at least 5)", seq.n()));
    }
    if 2 * m + 1 > seq.n() {
        return domain(format!("order {m} needs moments through λ_{}, sequence stops at λ_{}", 2 * m + 1, seq.n()));
    }
    let mu = seq.with_lambda2();
    let h = |i: usize, j: usize| mu[i + j];
    // r[i][j] for i <= j, rows 0..m-1, columns up to m
    let mut r = vec![vec![0.0; m + 1]; m];
    let mut order = 0;
    for i in 0..m {
        let pivot_sq = h(i, i) - (0..i).map(|l| r[l][i] * r[l][i]).sum::<f64>();
        if pivot_sq < DEGENERACY_THRESHOLD {
            break;
        }
        let piv = pivot_sq.sqrt();
        r[i][i] = piv;
        for j in i + 1..=m {
            r[i][j] = (h(i, j) - (0..i).map(|l| r[l][i] * r[l][j]).sum::<f64>()) / piv;
        }
        order = i + 1;
    }
    if order == 0 {
        return Err(Error::Numerical("moment sequence has zero total mass".into()));
    }
    let mut alpha = Vec::with_capacity(order);
    let mut beta = Vec::with_capacity(order.saturating_sub(1));
    for j in 0..order {
        let prev = if j == 0 { 0.0 } else { r[j - 1][j] / r[j - 1][j - 1] };
        alpha.push(r[j][j + 1] / r[j][j] - prev);
        if j >= 1 {
            beta.push(r[j][j] / r[j - 1][j - 1]);
        }
    }
    Ok(Recurrence { alpha, beta, mu0: mu[0], order, requested: m, degenerate: order < m })
}

/// Gauss rule: nodes ξ_1 < … < ξ_m in [0, 1] and weights ζ_j = ρ_{m-1}(ξ_j).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn moment(&self, k: usize) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * x.powi(k as i32 - 2)).sum()
    }
}

/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix, weights
/// `μ_0 v_{0j}²`.
pub fn gauss_rule_from_recurrence(rec: &Recurrence) -> QuadratureRule {
    let m = rec.order;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        jac[(i, i)] = rec.alpha[i];
        if i + 1 < m {
            jac[(i, i + 1)] = rec.beta[i];
            jac[(i + 1, i)] = rec.beta[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j].clamp(0.0, 1.0), rec.mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        degenerate: rec.degenerate,
    }
}

pub fn gauss_quadrature(seq: &MomentSequence) -> Result<QuadratureRule> {
    Ok(gauss_rule_from_recurrence(&orthonormal_polynomials(seq)?))
}

pub fn gauss_quadrature_of_order(seq: &MomentSequence, m: usize) -> Result<QuadratureRule> {
    Ok(gauss_rule_from_recurrence(&orthonormal_polynomials_of_order(seq, m)?))
}

/// One cumulative CMS inequality:
/// `Λ([0, ξ_j]) ≤ cumulative ≤ Λ([0, ξ_{j+1}))`, with ξ_{m+1} := 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmsBound {
    pub j: usize,
    pub node: f64,
    pub next_node: f64,
    pub cumulative: f64,
}

/// Cap on the mass of one interval between consecutive nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalCap {
    pub lo: f64,
    pub hi: f64,
    /// Whether `hi` belongs to the interval (only the last one, `[ξ_m, 1]`).
    pub closed_right: bool,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmsEnvelope {
    pub rule: QuadratureRule,
    pub cumulative: Vec<CmsBound>,
    pub intervals: Vec<IntervalCap>,
}

impl CmsEnvelope {
    /// True if `measure` satisfies every cumulative and interval inequality
    /// within `tol`.
    pub fn check_measure(&self, measure: &LambdaMeasure, tol: f64) -> bool {
        let m = self.cumulative.len();
        let cumulative_ok = self.cumulative.iter().all(|b| {
            let lower = measure.cdf(b.node, true);
            // the right boundary interval closes at 1
            let upper = if b.j == m { measure.cdf(1.0, true) } else { measure.cdf(b.next_node, false) };
            lower <= b.cumulative + tol && b.cumulative <= upper + tol
        });
        let intervals_ok = self.intervals.iter().all(|iv| {
            let hi = measure.cdf(iv.hi, iv.closed_right);
            let lo = if iv.lo == 0.0 { 0.0 } else { measure.cdf(iv.lo, false) };
            hi - lo <= iv.cap + tol
        });
        cumulative_ok && intervals_ok
    }
}

pub fn cms_envelope(seq: &MomentSequence) -> Result<CmsEnvelope> {
    Ok(cms_envelope_from_rule(gauss_quadrature(seq)?))
}

pub fn cms_envelope_from_rule(rule: QuadratureRule) -> CmsEnvelope {
    let m = rule.order();
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    for j in 0..m {
        acc += rule.weights[j];
        let next = if j + 1 < m { rule.nodes[j + 1] } else { 1.0 };
        cumulative.push(CmsBound { j: j + 1, node: rule.nodes[j], next_node: next, cumulative: acc });
    }
    let mut intervals = Vec::with_capacity(m + 1);
    intervals.push(IntervalCap { lo: 0.0, hi: rule.nodes[0], closed_right: false, cap: rule.weights[0] });
    for j in 0..m.saturating_sub(1) {
        intervals.push(IntervalCap {
            lo: rule.nodes[j],
            hi: rule.nodes[j + 1],
            closed_right: false,
            cap: rule.weights[j] + rule.weights[j + 1],
        });
    }
    intervals.push(IntervalCap { lo: rule.nodes[m - 1], hi: 1.0, closed_right: true, cap: rule.weights[m - 1] });
    CmsEnvelope { rule, cumulative, intervals }
}

/// Two measures with interval masses interlaced so their supports are
/// disjoint: Λ_x loads the even intervals, Λ_y the odd ones.
#[derive(Debug, Clone, PartialEq)]
pub struct InterlacedPair {
    /// `[ξ_j, ξ_{j+1})` boundaries, j = 0..m with ξ_0 = 0, ξ_{m+1} = 1.
    pub intervals: Vec<(f64, f64)>,
    pub x_masses: Vec<f64>,
    pub y_masses: Vec<f64>,
    pub x_measure: DiscreteMeasure,
    pub y_measure: DiscreteMeasure,
}

impl InterlacedPair {
    /// Total variation `Σ_intervals |x - y| = 2 - 2 Σ min(x, y)` on the
    /// interval partition (atoms sit at interval midpoints, one per
    /// interval); exactly 2 when no interval is shared.
    pub fn total_variation(&self) -> f64 {
        2.0 - 2.0 * self.x_masses.iter().zip(&self.y_masses).map(|(x, y)| x.min(*y)).sum::<f64>()
    }

    /// True if no interval carries mass under both measures.
    pub fn supports_disjoint(&self) -> bool {
        self.x_masses.iter().zip(&self.y_masses).all(|(x, y)| *x == 0.0 || *y == 0.0)
    }
}

pub fn interlaced_pair(seq: &MomentSequence) -> Result<InterlacedPair> {
    interlaced_pair_from_rule(&gauss_quadrature(seq)?)
}

pub fn interlaced_pair_from_rule(rule: &QuadratureRule) -> Result<InterlacedPair> {
    let m = rule.order();
    if m < 2 {
        return domain(format!("interlacing needs a rule of order >= 2, got {m}"));
    }
    let mut bounds = Vec::with_capacity(m + 2);
    bounds.push(0.0);
    bounds.extend_from_slice(&rule.nodes);
    bounds.push(1.0);
    let intervals: Vec<(f64, f64)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    let zeta = |j: usize| if (1..=m).contains(&j) { rule.weights[j - 1] } else { 0.0 };
    let mut x = vec![0.0; m + 1];
    let mut y = vec![0.0; m + 1];
    // Λ_x: interval 2g gets ζ_{2g} + ζ_{2g+1}; Λ_y: interval 2g+1 gets ζ_{2g+1} + ζ_{2g+2}
    for (g, slot) in x.iter_mut().enumerate().step_by(2) {
        *slot = zeta(g) + zeta(g + 1);
    }
    for (g, slot) in y.iter_mut().enumerate().skip(1).step_by(2) {
        *slot = zeta(g) + zeta(g + 1);
    }
    let to_measure = |masses: &[f64]| {
        DiscreteMeasure::new(
            intervals
                .iter()
                .zip(masses)
                .filter(|(_, &w)| w > 0.0)
                .map(|(&(lo, hi), &w)| (0.5 * (lo + hi), w))
                .collect(),
        )
    };
    Ok(InterlacedPair {
        x_measure: to_measure(&x)?,
        y_measure: to_measure(&y)?,
        intervals,
        x_masses: x,
        y_masses: y,
    })
}

/// In-class representative: the Gauss rule read as an atomic Λ-measure.
pub fn canonical_representative(seq: &MomentSequence) -> Result<LambdaMeasure> {
    let rule = gauss_quadrature(seq)?;
    representative_from_rule(&rule)
}

pub fn representative_from_rule(rule: &QuadratureRule) -> Result<LambdaMeasure> {
    let mut kingman = 0.0;
    let mut atoms = Vec::new();
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        if x <= 0.0 {
            kingman += w;
        } else {
            atoms.push((x, w));
        }
    }
    // renormalise away rounding so the measure passes the unit-mass check
    let total = kingman + atoms.iter().map(|a| a.1).sum::<f64>();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    LambdaMeasure::new(kingman / total, atoms, vec![], vec![], DEFAULT_ETA)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_seq(n: usize) -> MomentSequence {
        MomentSequence::new((3..=n).map(|k| 1.0 / (k as f64 - 1.0)).collect()).unwrap()
    }

    #[test]
    fn complete_monotonicity_examples() {
        let u = MomentSequence::new(vec![0.5, 1.0 / 3.0, 0.25, 0.2]).unwrap();
        assert!(is_completely_monotonic(&u).unwrap().is_monotonic());
        let k = MomentSequence::new(vec![0.0; 3]).unwrap();
        assert!(is_completely_monotonic(&k).unwrap().is_monotonic());
        let bad = MomentSequence::new(vec![0.5, 0.6]).unwrap();
        let rep = is_completely_monotonic(&bad).unwrap();
        assert!(!rep.is_monotonic());
        let v = rep.violations.iter().find(|v| v.m == 4 && v.k == 3).unwrap();
        assert!((v.value + 0.1).abs() < 1e-15);
        assert!(MomentSequence::new(vec![]).is_err());
        // λ_3 > 1 breaks λ_{3,2} = 1 - λ_3
        let big = MomentSequence::new(vec![1.2]).unwrap();
        assert!(!is_completely_monotonic(&big).unwrap().is_monotonic());
    }

    #[test]
    fn binomial_transform_matches_uniform_beta_integrals() {
        // λ_{m,k} = B(k-1, m-k+1) for U(0,1)
        let seq = uniform_seq(12);
        let (t, _) = seq.binomial_transform();
        for m in 2..=12usize {
            for k in 2..=m {
                let b = statrs::function::beta::beta((k - 1) as f64, (m - k + 1) as f64);
                assert!((t[m][k] - b).abs() < 1e-12, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn shifted_legendre_recurrence() {
        let rec = orthonormal_polynomials_of_order(&uniform_seq(15), 6).unwrap();
        assert!(!rec.degenerate);
        for a in &rec.alpha {
            assert!((a - 0.5).abs() < 1e-10);
        }
        for (i, b) in rec.beta.iter().enumerate() {
            let k = (i + 1) as f64;
            let expect = k * k / (4.0 * (2.0 * k - 1.0) * (2.0 * k + 1.0));
            assert!((b * b - expect).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn degenerate_sequences_collapse_to_one_node() {
        let psi: f64 = 0.5;
        let seq = MomentSequence::new((3..=9).map(|k| psi.powi(k - 2)).collect()).unwrap();
        let rec = orthonormal_polynomials(&seq).unwrap();
        assert!(rec.degenerate);
        assert_eq!(rec.order, 1);
        let rule = gauss_rule_from_recurrence(&rec);
        assert_eq!(rule.nodes.len(), 1);
        assert!((rule.nodes[0] - 0.5).abs() < 1e-14);
        assert!((rule.weights[0] - 1.0).abs() < 1e-14);

        let zero = MomentSequence::new(vec![0.0; 7]).unwrap();
        let rule = gauss_quadrature(&zero).unwrap();
        assert_eq!(rule.nodes, vec![0.0]);
        let rep = canonical_representative(&zero).unwrap();
        assert_eq!(rep.kingman_mass(), 1.0);
        assert!(rep.atoms().is_empty());
        let ew = canonical_representative(&seq).unwrap();
        assert_eq!(ew.atoms().len(), 1);
        assert!((ew.atoms()[0].0 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_order_two_from_moments() {
        let rule = gauss_quadrature_of_order(&uniform_seq(7), 2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert!((rule.nodes[0] - (0.5 - d)).abs() < 1e-12);
        assert!((rule.nodes[1] - (0.5 + d)).abs() < 1e-12);
        assert!((rule.weights[0] - 0.5).abs() < 1e-12);
        assert!((rule.weights[1] - 0.5).abs() < 1e-12);
        assert_eq!(default_order(&uniform_seq(7)), 2);
    }

    #[test]
    fn weights_equal_christoffel_function_at_nodes() {
        let seq = MomentSequence::from_measure(&LambdaMeasure::beta(0.5, 1.5).unwrap(), 13).unwrap();
        let rec = orthonormal_polynomials(&seq).unwrap();
        let rule = gauss_rule_from_recurrence(&rec);
        assert_eq!(rule.order(), 5);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            assert!((rec.christoffel(*x) - w).abs() < 1e-10);
        }
    }

    #[test]
    fn canonical_representative_of_uniform_n5_is_the_mean() {
        let rep = canonical_representative(&uniform_seq(5)).unwrap();
        assert_eq!(rep.atoms().len(), 1);
        assert!((rep.atoms()[0].0 - 0.5).abs() < 1e-14);
        assert!((rep.atoms()[0].1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cms_envelope_for_uniform() {
        let env = cms_envelope_from_rule(gauss_quadrature_of_order(&uniform_seq(7), 2).unwrap());
        let b = env.cumulative[0];
        assert!((b.node - 0.211_324_865_405_187).abs() < 1e-12);
        assert!((b.cumulative - 0.5).abs() < 1e-12);
        // exact uniform CDF brackets the cumulative weight
        assert!(b.node <= b.cumulative && b.cumulative <= b.next_node);
        assert!((env.cumulative[1].cumulative - 1.0).abs() < 1e-12);
        assert!(env.check_measure(&LambdaMeasure::uniform(), 1e-12));
        assert_eq!(env.intervals.len(), 3);
        assert!((env.intervals[1].cap - 1.0).abs() < 1e-12);

        let psi: f64 = 0.3;
        let seq = MomentSequence::new((3..=7).map(|k| psi.powi(k - 2)).collect()).unwrap();
        let env = cms_envelope(&seq).unwrap();
        assert_eq!(env.cumulative.len(), 1);
        assert!((env.cumulative[0].cumulative - 1.0).abs() < 1e-14);
        assert!(env.check_measure(&LambdaMeasure::dirac(psi).unwrap(), 1e-12));
    }

    #[test]
    fn cms_rejects_a_measure_outside_the_class() {
        let env = cms_envelope_from_rule(gauss_quadrature_of_order(&uniform_seq(7), 2).unwrap());
        // δ_{0.9} puts all mass beyond ξ_2 while the bound requires mass 1/2 below it
        assert!(!env.check_measure(&LambdaMeasure::dirac(0.9).unwrap(), 1e-9));
    }

    #[test]
    fn interlaced_pair_for_uniform_order_three() {
        let rule = gauss_quadrature_of_order(&uniform_seq(9), 3).unwrap();
        let pair = interlaced_pair_from_rule(&rule).unwrap();
        let z = &rule.weights;
        assert_eq!(pair.intervals.len(), 4);
        assert!((pair.x_masses[0] - z[0]).abs() < 1e-15);
        assert_eq!(pair.x_masses[1], 0.0);
        assert!((pair.x_masses[2] - (z[1] + z[2])).abs() < 1e-15);
        assert_eq!(pair.x_masses[3], 0.0);
        assert!((pair.y_masses[1] - (z[0] + z[1])).abs() < 1e-15);
        assert!((pair.y_masses[3] - z[2]).abs() < 1e-15);
        assert!(pair.supports_disjoint());
        assert!((pair.total_variation() - 2.0).abs() < 1e-12);
        assert!((pair.x_measure.total_mass() - 1.0).abs() < 1e-12);
        assert!((pair.y_measure.total_mass() - 1.0).abs() < 1e-12);

        let one = gauss_quadrature_of_order(&uniform_seq(5), 1).unwrap();
        assert!(interlaced_pair_from_rule(&one).is_err());
    }

    #[test]
    fn moments_csv_round_trip_and_errors() {
        let seq = uniform_seq(6);
        let back = MomentSequence::from_csv(&seq.to_csv()).unwrap();
        assert_eq!(seq, back);
        assert!(MomentSequence::from_csv("").is_err());
        assert!(MomentSequence::from_csv("lambda_k\n").is_err());
        assert!(matches!(MomentSequence::from_csv("lambda_k\nx\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn order_guards() {
        assert!(orthonormal_polynomials(&uniform_seq(4)).is_err());
        assert!(orthonormal_polynomials_of_order(&uniform_seq(7), 4).is_err());
    }
}
