use crate::error::{domain, Result};

/// Probability measure with finitely many atoms in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    /// Atoms are sorted by location; weights must be nonnegative and sum to 1
    /// within 1e-9.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return domain("a discrete measure needs at least one atom");
        }
        for &(x, w) in &atoms {
            if !(0.0..=1.0).contains(&x) || !(w >= 0.0) {
                return domain(format!("atom ({x}, {w}) outside [0,1] × [0,∞)"));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("discrete measure has total mass {total}"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn dirac(x: f64) -> Result<Self> {
        Self::new(vec![(x, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Atoms carrying weight above `tol`.
    pub fn support_size(&self, tol: f64) -> usize {
        self.atoms.iter().filter(|a| a.1 > tol).count()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `λ_k = Σ w x^{k-2}`.
    pub fn moment(&self, k: usize) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * x.powi(k as i32 - 2)).sum()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * f(x)).sum()
    }
}
