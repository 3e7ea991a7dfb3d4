//! Finite-alleles mutation models.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MutationKind {
    /// Arbitrary d×d stochastic matrix with its stationary law.
    General { matrix: DMatrix<f64>, stationary: Vec<f64> },
    /// `loci` binary sites; each event flips one uniformly chosen site.
    BinaryLoci { loci: usize },
}

/// Mutation at total rate θ per lineage with jump kernel M.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationModel {
    theta: f64,
    kind: MutationKind,
}

impl MutationModel {
    /// General model; the stationary law of `matrix` is computed and must be
    /// unique and strictly positive.
    pub fn new(theta: f64, matrix: DMatrix<f64>) -> Result<Self> {
        check_theta(theta)?;
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return domain("mutation matrix must be square and nonempty");
        }
        for i in 0..d {
            let row: f64 = matrix.row(i).iter().sum();
            if (row - 1.0).abs() > 1e-12 || matrix.row(i).iter().any(|&v| v < 0.0) {
                return domain(format!("row {i} of the mutation matrix is not a probability vector"));
            }
        }
        let stationary = stationary_distribution(&matrix)?;
        Ok(Self { theta, kind: MutationKind::General { matrix, stationary } })
    }

    /// Parent-independent mutation on d types, `M_ij = 1/d`.
    pub fn parent_independent(theta: f64, d: usize) -> Result<Self> {
        if d < 2 {
            return domain("parent-independent model needs at least two types");
        }
        Self::new(theta, DMatrix::from_element(d, d, 1.0 / d as f64))
    }

    pub fn binary_loci(theta: f64, loci: usize) -> Result<Self> {
        check_theta(theta)?;
        if loci == 0 || loci > 30 {
            return domain(format!("number of loci must lie in 1..=30, got {loci}"));
        }
        Ok(Self { theta, kind: MutationKind::BinaryLoci { loci } })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kind(&self) -> &MutationKind {
        &self.kind
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self { theta, kind: self.kind.clone() })
    }

    pub fn num_types(&self) -> usize {
        match &self.kind {
            MutationKind::General { matrix, .. } => matrix.nrows(),
            MutationKind::BinaryLoci { loci } => 1usize << loci,
        }
    }

    /// m(i).
    pub fn stationary_prob(&self, t: usize) -> f64 {
        match &self.kind {
            MutationKind::General { stationary, .. } => stationary[t],
            MutationKind::BinaryLoci { loci } => (0.5f64).powi(*loci as i32),
        }
    }

    /// M_ij.
    pub fn jump_prob(&self, from: usize, to: usize) -> f64 {
        match &self.kind {
            MutationKind::General { matrix, .. } => matrix[(from, to)],
            MutationKind::BinaryLoci { loci } => {
                if (from ^ to).count_ones() == 1 {
                    1.0 / *loci as f64
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.kind {
            MutationKind::General { stationary, .. } => sample_index(stationary, rng),
            MutationKind::BinaryLoci { loci } => rng.random_range(0..(1usize << loci)),
        }
    }

    /// Type after one mutation event.
    pub fn sample_jump<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        match &self.kind {
            MutationKind::General { matrix, .. } => {
                let row: Vec<f64> = matrix.row(from).iter().copied().collect();
                sample_index(&row, rng)
            }
            MutationKind::BinaryLoci { loci } => from ^ (1usize << rng.random_range(0..*loci)),
        }
    }

    /// Transition matrix `exp(θ t (M - I))` of the type process along a branch
    /// of length t. General models only.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.kind {
            MutationKind::General { matrix, .. } => {
                let d = matrix.nrows();
                let generator = (matrix - DMatrix::<f64>::identity(d, d)) * (self.theta * t);
                Ok(generator.exp())
            }
            MutationKind::BinaryLoci { .. } => {
                Err(Error::Domain("binary-loci transitions factor per locus; use flip_probability".into()))
            }
        }
    }

    /// Probability that a single site of the binary-loci model has flipped
    /// parity after time t: `(1 - exp(-2 θ t / L)) / 2`.
    pub fn flip_probability(&self, t: f64) -> Option<f64> {
        match &self.kind {
            MutationKind::BinaryLoci { loci } => {
                let rate = self.theta / *loci as f64;
                Some(-0.5 * (-2.0 * rate * t).exp_m1())
            }
            MutationKind::General { .. } => None,
        }
    }

    /// Type label as used in data files: bit strings for binary loci
    /// (most significant locus first), decimal indices otherwise.
    pub fn format_type(&self, t: usize) -> String {
        match &self.kind {
            MutationKind::General { .. } => t.to_string(),
            MutationKind::BinaryLoci { loci } => {
                (0..*loci).rev().map(|b| if t >> b & 1 == 1 { '1' } else { '0' }).collect()
            }
        }
    }

    pub fn parse_type(&self, s: &str) -> Result<usize> {
        match &self.kind {
            MutationKind::General { matrix, .. } => {
                let t: usize = s
                    .parse()
                    .map_err(|_| Error::Data(format!("type label `{s}` is not an index")))?;
                if t >= matrix.nrows() {
                    return Err(Error::Data(format!("type {t} out of range for {} types", matrix.nrows())));
                }
                Ok(t)
            }
            MutationKind::BinaryLoci { loci } => {
                if s.len() != *loci || !s.bytes().all(|b| b == b'0' || b == b'1') {
                    return Err(Error::Data(format!("haplotype `{s}` is not a {loci}-site binary string")));
                }
                Ok(s.bytes().fold(0usize, |acc, b| (acc << 1) | (b - b'0') as usize))
            }
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return domain(format!("mutation rate must be finite and nonnegative, got {theta}"));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Solve `m M = m`, `Σ m = 1` by replacing one balance equation with the
/// normalisation.
fn stationary_distribution(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = matrix.nrows();
    let mut a = matrix.transpose() - DMatrix::<f64>::identity(d, d);
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(d);
    rhs[d - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("mutation matrix has no unique stationary distribution".into()))?;
    let m: Vec<f64> = sol.iter().copied().collect();
    if m.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return domain("stationary distribution of the mutation matrix must be strictly positive");
    }
    let check = nalgebra::DVector::from_vec(m.clone()).transpose() * matrix;
    if check.iter().zip(&m).any(|(a, b)| (a - b).abs() > 1e-10) {
        return Err(Error::Numerical("stationary distribution failed the balance check".into()));
    }
    Ok(m)
}
