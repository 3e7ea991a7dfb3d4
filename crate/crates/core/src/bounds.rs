//! Extremes of linear functionals `ν ↦ ∫ q dν` over probability measures on
//! [0, 1] cut out by finitely many moment inequalities.
//!
//! The measure is discretised on a uniform grid, the weights solve a linear
//! program, and the support of the optimal basis is then refined locally.
//! Basic optimal solutions carry at most one atom more than there are
//! constraints.

use std::fmt;
use std::str::FromStr;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::discrete::DiscreteMeasure;
use crate::error::{domain, Error, Result};
use crate::mcmc::credible_interval;

const WEIGHT_CUTOFF: f64 = 1e-12;
const ACTIVE_SLACK: f64 = 1e-6;
const REFINE_TOL: f64 = 1e-9;
const MIN_SPACING: f64 = 1e-10;
const REFINE_POINTS: usize = 4;
/// Default allowance above η for [`kingman_test`].
pub const DEFAULT_KINGMAN_TOL: f64 = 0.05;

/// `(-1)^sign λ_index ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConstraint {
    pub index: usize,
    pub sign: u8,
    pub bound: f64,
}

impl MomentConstraint {
    pub fn new(index: usize, sign: u8, bound: f64) -> Result<Self> {
        if index < 3 {
            return domain(format!("constraint index must be at least 3, got {index}"));
        }
        if sign > 1 {
            return domain(format!("constraint sign must be 0 or 1, got {sign}"));
        }
        if !bound.is_finite() {
            return domain("constraint bound must be finite");
        }
        Ok(Self { index, sign, bound })
    }

    /// `λ_index ≤ bound`.
    pub fn upper(index: usize, bound: f64) -> Result<Self> {
        Self::new(index, 0, bound)
    }

    /// `λ_index ≥ bound`, stored as `-λ_index ≤ -bound`.
    pub fn lower(index: usize, bound: f64) -> Result<Self> {
        Self::new(index, 1, -bound)
    }

    pub fn coefficient(&self, x: f64) -> f64 {
        let v = x.powi(self.index as i32 - 2);
        if self.sign == 0 {
            v
        } else {
            -v
        }
    }

    /// Amount by which `nu` violates the constraint (0 if satisfied).
    pub fn violation(&self, nu: &DiscreteMeasure) -> f64 {
        (nu.expect(|x| self.coefficient(x)) - self.bound).max(0.0)
    }
}

impl fmt::Display for MomentConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign == 0 {
            write!(f, "lambda_{} <= {}", self.index, self.bound)
        } else {
            write!(f, "-lambda_{} <= {}", self.index, self.bound)
        }
    }
}

/// Marginal credible-box envelope: for each `(index, trace)` the central
/// `level` interval `[lo, hi]` gives `λ_i ≤ hi` and `-λ_i ≤ -lo`.
pub fn constraints_from_samples(traces: &[(usize, &[f64])], level: f64) -> Result<Vec<MomentConstraint>> {
    let mut out = Vec::with_capacity(2 * traces.len());
    for &(index, trace) in traces {
        let (lo, hi) = credible_interval(trace, level)?;
        out.push(MomentConstraint::upper(index, hi)?);
        out.push(MomentConstraint::lower(index, lo)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// `e^{-r}`.
    ExpDecay,
    /// Indicator of `[a, b]`.
    Indicator { a: f64, b: f64 },
    /// `r^k`.
    Monomial(u32),
    /// Piecewise-linear interpolation of `(r, q(r))` pairs sorted by `r`.
    Tabulated(Vec<(f64, f64)>),
}

impl Functional {
    pub fn tabulated(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return domain("tabulated functional needs at least one point");
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return domain("tabulated functional has non-finite entries");
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Functional::Tabulated(points))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Functional::ExpDecay => (-x).exp(),
            Functional::Indicator { a, b } => {
                if x >= *a && x <= *b {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::Monomial(k) => x.powi(*k as i32),
            Functional::Tabulated(p) => {
                let i = p.partition_point(|q| q.0 <= x);
                if i == 0 {
                    p[0].1
                } else if i == p.len() {
                    p[p.len() - 1].1
                } else {
                    let (x0, y0) = p[i - 1];
                    let (x1, y1) = p[i];
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                }
            }
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    /// `exp`, `indicator:a:b` or `monomial:k`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Domain(format!("bad number `{t}` in functional `{s}`")));
        match parts.as_slice() {
            ["exp"] => Ok(Functional::ExpDecay),
            ["indicator", a, b] => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return domain(format!("indicator interval [{a}, {b}] is empty"));
                }
                Ok(Functional::Indicator { a, b })
            }
            ["monomial", k] => k
                .trim()
                .parse::<u32>()
                .map(Functional::Monomial)
                .map_err(|_| Error::Domain(format!("bad monomial degree `{k}`"))),
            _ => domain(format!("unknown functional `{s}` (expected exp, indicator:a:b or monomial:k)")),
        }
    }
}

/// `Σ w_k q(x_k)`.
pub fn evaluate_functional<Q: Fn(f64) -> f64>(q: Q, nu: &DiscreteMeasure) -> f64 {
    nu.expect(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extremum {
    pub value: f64,
    pub witness: DiscreteMeasure,
    /// Largest constraint violation of the witness.
    pub max_violation: f64,
    pub refinements: usize,
}

/// Optimal weights over fixed points: (value, weights).
fn solve_lp<Q: Fn(f64) -> f64>(q: &Q, constraints: &[MomentConstraint], mode: Mode, points: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dir = match mode {
        Mode::Min => OptimizationDirection::Minimize,
        Mode::Max => OptimizationDirection::Maximize,
    };
    let mut lp = Problem::new(dir);
    let vars: Vec<_> = points.iter().map(|&x| lp.add_var(q(x), (0.0, 1.0))).collect();
    lp.add_constraint(vars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for c in constraints {
        let row: Vec<_> = vars.iter().zip(points).map(|(&v, &x)| (v, c.coefficient(x))).collect();
        lp.add_constraint(row, ComparisonOp::Le, c.bound);
    }
    match lp.solve() {
        Ok(sol) => {
            let w: Vec<f64> = vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
            let value = points.iter().zip(&w).map(|(&x, &w)| w * q(x)).sum();
            Ok((value, w))
        }
        Err(microlp::Error::Infeasible) => Err(Error::Infeasible(
            constraints.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "),
        )),
        Err(e) => Err(Error::Numerical(format!("linear program failed: {e}"))),
    }
}

/// Project weights on the support onto the active (or violated) constraint
/// set, so that these constraints and the total mass hold to rounding.
fn polish(support: &[f64], weights: &[f64], constraints: &[MomentConstraint]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let weights = weights.as_slice();
    let mut rows: Vec<(Vec<f64>, f64)> = vec![(vec![1.0; support.len()], 1.0)];
    for c in constraints {
        let coef: Vec<f64> = support.iter().map(|&x| c.coefficient(x)).collect();
        let lhs: f64 = coef.iter().zip(weights).map(|(a, w)| a * w).sum();
        // violated rows count as active too
        if c.bound - lhs < ACTIVE_SLACK {
            rows.push((coef, c.bound));
        }
    }
    let e = DMatrix::from_fn(rows.len(), support.len(), |i, j| rows[i].0[j]);
    let w = DVector::from_column_slice(weights);
    let f = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let resid = &f - &e * &w;
    // minimum-norm correction
    let Ok(delta) = e.svd(true, true).solve(&resid, 1e-14) else {
        return weights.to_vec();
    };
    let corrected = &w + delta;
    if corrected.iter().all(|&v| v >= 0.0) {
        corrected.iter().copied().collect()
    } else {
        weights.to_vec()
    }
}

fn witness(support: &[f64], weights: &[f64]) -> Result<DiscreteMeasure> {
    let total: f64 = weights.iter().sum();
    DiscreteMeasure::new(support.iter().zip(weights).map(|(&x, &w)| (x, w / total)).collect())
}

/// Grid LP followed by local refinement of the optimal support.
pub fn extremize<Q: Fn(f64) -> f64>(
    q: Q,
    constraints: &[MomentConstraint],
    mode: Mode,
    grid_size: usize,
) -> Result<Extremum> {
    if grid_size < 2 {
        return domain(format!("grid size must be at least 2, got {grid_size}"));
    }
    let grid: Vec<f64> = (0..grid_size).map(|g| g as f64 / (grid_size - 1) as f64).collect();
    let (mut value, w) = solve_lp(&q, constraints, mode, &grid)?;
    let keep = |pts: &[f64], w: &[f64]| -> (Vec<f64>, Vec<f64>) {
        pts.iter().zip(w).filter(|(_, &w)| w > WEIGHT_CUTOFF).map(|(&x, &w)| (x, w)).unzip()
    };
    let (mut support, mut weights) = keep(&grid, &w);
    let better = |new: f64, old: f64| match mode {
        Mode::Min => old - new,
        Mode::Max => new - old,
    };
    let mut h = 1.0 / (grid_size - 1) as f64;
    let mut refinements = 0;
    while h > MIN_SPACING {
        h /= REFINE_POINTS as f64;
        let mut pts: Vec<f64> = support.clone();
        for &x in &support {
            for k in 1..=REFINE_POINTS {
                let d = k as f64 * h;
                pts.push((x - d).max(0.0));
                pts.push((x + d).min(1.0));
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        // the previous support is feasible, so a failure here is a
        // degenerate basis among nearly coincident points
        let Ok((v, w)) = solve_lp(&q, constraints, mode, &pts) else {
            break;
        };
        refinements += 1;
        let gain = better(v, value);
        if gain >= 0.0 {
            value = v;
            (support, weights) = keep(&pts, &w);
        }
        if gain < REFINE_TOL {
            break;
        }
    }
    let weights = polish(&support, &weights, constraints);
    let witness = witness(&support, &weights)?;
    let max_violation = constraints.iter().map(|c| c.violation(&witness)).fold(0.0, f64::max);
    let value = evaluate_functional(&q, &witness);
    Ok(Extremum { value, witness, max_violation, refinements })
}

/// Minimum and maximum, solved concurrently.
pub fn extremize_both<Q: Fn(f64) -> f64 + Sync>(
    q: Q,
    constraints: &[MomentConstraint],
    grid_size: usize,
) -> Result<(Extremum, Extremum)> {
    let (lo, hi) = rayon::join(
        || extremize(&q, constraints, Mode::Min, grid_size),
        || extremize(&q, constraints, Mode::Max, grid_size),
    );
    Ok((lo?, hi?))
}

/// Whether the lower end of the central `level` interval of λ_3 lies within
/// `tol` of η, i.e. whether the Kingman point is inside the credible box.
pub fn kingman_test(trace: &[f64], level: f64, eta: f64, tol: f64) -> Result<bool> {
    let (lo, _) = credible_interval(trace, level)?;
    Ok(lo <= eta + tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Vec<MomentConstraint> {
        vec![MomentConstraint::upper(3, 0.5).unwrap(), MomentConstraint::lower(4, 0.3).unwrap()]
    }

    #[test]
    fn functional_values() {
        let q = |x: f64| (-x).exp();
        assert_eq!(evaluate_functional(q, &DiscreteMeasure::dirac(0.0).unwrap()), 1.0);
        assert!((evaluate_functional(q, &DiscreteMeasure::dirac(1.0).unwrap()) - 0.36788).abs() < 1e-5);
        let half = DiscreteMeasure::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!((evaluate_functional(q, &half) - 0.68394).abs() < 1e-5);
    }

    #[test]
    fn worked_example() {
        let (lo, hi) = extremize_both(|x: f64| (-x).exp(), &example(), 1000).unwrap();
        assert!((lo.value - 0.619913).abs() < 1e-5, "{}", lo.value);
        assert!((hi.value - 0.810364).abs() < 1e-5, "{}", hi.value);
        for e in [&lo, &hi] {
            assert!(e.max_violation < 1e-9);
            assert!(e.witness.support_size(WEIGHT_CUTOFF) <= 3);
        }
    }

    #[test]
    fn unconstrained_extremes() {
        let (lo, hi) = extremize_both(|x: f64| (-x).exp(), &[], 100).unwrap();
        assert!((lo.value - (-1.0f64).exp()).abs() < 1e-12);
        assert!((hi.value - 1.0).abs() < 1e-12);
        assert_eq!(lo.witness.atoms(), &[(1.0, 1.0)]);
    }

    #[test]
    fn zero_third_moment_forces_dirac_at_zero() {
        let c = [MomentConstraint::upper(3, 0.0).unwrap()];
        let (lo, hi) = extremize_both(|x: f64| (-x).exp(), &c, 200).unwrap();
        assert!((lo.value - 1.0).abs() < 1e-9 && (hi.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_is_reported() {
        let c = [MomentConstraint::upper(3, 0.2).unwrap(), MomentConstraint::lower(3, 0.4).unwrap()];
        assert!(matches!(extremize(|x: f64| x, &c, Mode::Min, 100), Err(Error::Infeasible(_))));
    }

    #[test]
    fn constraint_boxes() {
        let t = vec![0.4; 20];
        let c = constraints_from_samples(&[(3, &t)], 0.95).unwrap();
        assert_eq!(c, vec![MomentConstraint::new(3, 0, 0.4).unwrap(), MomentConstraint::new(3, 1, -0.4).unwrap()]);
        let c = constraints_from_samples(&[(3, &t), (4, &t)], 0.9).unwrap();
        assert_eq!(c.len(), 4);
        assert!(constraints_from_samples(&[(3, &[])], 0.9).is_err());
    }

    #[test]
    fn functional_parsing() {
        assert_eq!("exp".parse::<Functional>().unwrap(), Functional::ExpDecay);
        assert_eq!("indicator:0.5:1".parse::<Functional>().unwrap(), Functional::Indicator { a: 0.5, b: 1.0 });
        assert_eq!("monomial:2".parse::<Functional>().unwrap().eval(0.5), 0.25);
        assert!("indicator:1:0".parse::<Functional>().is_err());
        assert!("cosine".parse::<Functional>().is_err());
        let t = Functional::tabulated(vec![(1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!((t.eval(0.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn kingman_test_cases() {
        assert!(kingman_test(&[0.0; 10], 0.95, 1e-6, 0.0).unwrap());
        assert!(!kingman_test(&[0.3; 10], 0.95, 1e-6, DEFAULT_KINGMAN_TOL).unwrap());
    }
}
