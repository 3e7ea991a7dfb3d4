//! Sequential importance sampling over typed ancestral histories.
//!
//! The configuration of ancestral type counts is run backwards in time.
//! Holding times use the true total event rate (every merger plus every
//! visible mutation), so only the choice of event is importance sampled:
//! among events consistent with the types, an event with true rate `r` is
//! chosen with probability proportional to `r · h`, where `h` is a ratio of
//! approximate conditional sampling probabilities
//! `π̂(j | c) = Σ_i c_i / (n + θ) [(I - ρ_n M)^{-1}]_{ij}`, `ρ_n = θ / (n + θ)`
//! (Stephens and Donnelly), where c also counts lineages of batches still to
//! join with a reduced weight. A chosen event contributes `r / (R π)` to the
//! weight; serial batches join as fresh lineages at their sampling times.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::genealogy::stream_rng;
use crate::likelihood::TypedSample;
use crate::measure::MergerRates;
use crate::mutation::{MutationKind, MutationModel};
use crate::numeric::binomial_table;

/// Weight of a lineage from a batch that has not joined yet, relative to a
/// current lineage, in the conditional sampling approximation.
const PENDING_WEIGHT: f64 = 0.1;

/// Resolvent kernels `G_n(i, j) = [(I - ρ_n M)^{-1}]_{ij}` for n = 1..=N.
#[derive(Debug, Clone)]
pub struct Approximation {
    theta: f64,
    kernel: Kernel,
}

#[derive(Debug, Clone)]
enum Kernel {
    /// Binary loci: the resolvent depends on the Hamming distance only.
    Hamming(Vec<Vec<f64>>),
    Matrix(Vec<DMatrix<f64>>),
}

impl Approximation {
    pub fn new(model: &MutationModel, max_n: usize) -> Result<Self> {
        let theta = model.theta();
        let rho = |n: usize| theta / (n as f64 + theta);
        let kernel = match model.kind() {
            MutationKind::BinaryLoci { loci } => {
                let l = *loci;
                let binom = binomial_table(l);
                // Krawtchouk K_s(h) = Σ_a (-1)^a C(h,a) C(L-h, s-a)
                let kraw: Vec<Vec<f64>> = (0..=l)
                    .map(|h| {
                        (0..=l)
                            .map(|s| {
                                (0..=s.min(h))
                                    .filter(|&a| s - a <= l - h)
                                    .map(|a| if a % 2 == 0 { 1.0 } else { -1.0 } * binom[h][a] * binom[l - h][s - a])
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                let scale = 0.5f64.powi(l as i32);
                Kernel::Hamming(
                    (0..=max_n)
                        .map(|n| {
                            let r = rho(n.max(1));
                            (0..=l)
                                .map(|h| {
                                    scale
                                        * (0..=l)
                                            .map(|s| kraw[h][s] / (1.0 - r * (l as f64 - 2.0 * s as f64) / l as f64))
                                            .sum::<f64>()
                                })
                                .collect()
                        })
                        .collect(),
                )
            }
            MutationKind::General { matrix, .. } => {
                let d = matrix.nrows();
                let mut out = Vec::with_capacity(max_n + 1);
                for n in 0..=max_n {
                    let a = DMatrix::<f64>::identity(d, d) - matrix * rho(n.max(1));
                    out.push(
                        a.try_inverse()
                            .ok_or_else(|| Error::Numerical("singular resolvent in the proposal".into()))?,
                    );
                }
                Kernel::Matrix(out)
            }
        };
        Ok(Self { theta, kernel })
    }

    fn g(&self, n: usize, i: usize, j: usize) -> f64 {
        match &self.kernel {
            Kernel::Hamming(g) => g[n][(i ^ j).count_ones() as usize],
            Kernel::Matrix(g) => g[n][(i, j)],
        }
    }

    /// `π̂(j | c')` where c' is `cfg` with `less` lineages of type `minus`
    /// removed, together with the lineages of batches not yet joined;
    /// `None` when c' holds no current lineage (the caller uses m instead).
    fn pi_hat(&self, cfg: &[(usize, usize)], pending: &Pending, p: usize, minus: usize, less: usize, j: usize) -> Option<f64> {
        if p == less {
            return None;
        }
        let pw = PENDING_WEIGHT;
        let n = p - less + (pw * pending.total as f64).round() as usize;
        let current: f64 = cfg
            .iter()
            .map(|&(t, c)| {
                let c = if t == minus { c - less } else { c };
                c as f64 * self.g(n, t, j)
            })
            .sum();
        let later: f64 = pending.counts.iter().map(|&(t, c)| pw * c as f64 * self.g(n, t, j)).sum();
        Some((current + later) / (p as f64 - less as f64 + pw * pending.total as f64 + self.theta))
    }
}

/// Type counts of the batches still to join.
struct Pending {
    counts: Vec<(usize, usize)>,
    total: usize,
}

enum Move {
    Merge { slot: usize, k: usize },
    Mutate { slot: usize, to: usize },
}

/// Log weight of one particle (without the multinomial labelling factor).
pub fn log_history_weight<R: Rng + ?Sized>(
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    approx: &Approximation,
    rng: &mut R,
) -> f64 {
    let theta = model.theta();
    let batches = sample.schedule.batches();
    // (type, count), counts always > 0
    let mut cfg: Vec<(usize, usize)> = Vec::new();
    let mut p = 0usize;
    let mut time = 0.0;
    let mut next = 0usize;
    let mut offset = 0usize;
    let mut pending = Pending { counts: Vec::new(), total: sample.leaf_types.len() };
    for &ty in &sample.leaf_types {
        add(&mut pending.counts, ty, 1);
    }
    let mut logw = 0.0;
    let mut moves: Vec<(Move, f64, f64)> = Vec::new();
    loop {
        if next < batches.len() && (p == 0 || batches[next].0 <= time) {
            let (t, n) = batches[next];
            for &ty in &sample.leaf_types[offset..offset + n] {
                add(&mut cfg, ty, 1);
                remove(&mut pending.counts, ty);
            }
            pending.total -= n;
            offset += n;
            p += n;
            time = time.max(t);
            next += 1;
            continue;
        }
        if p == 1 && next == batches.len() {
            return logw + model.stationary_prob(cfg[0].0).ln();
        }
        let merge_total = if p >= 2 { rates.total(p) } else { 0.0 };
        let mutation_total: f64 = cfg.iter().map(|&(t, c)| c as f64 * theta * (1.0 - model.jump_prob(t, t))).sum();
        let total = merge_total + mutation_total;
        if !(total > 0.0) {
            if next < batches.len() {
                time = batches[next].0;
                continue;
            }
            return f64::NEG_INFINITY;
        }
        let dt = Exp::new(total).expect("positive rate").sample(rng);
        if next < batches.len() && time + dt >= batches[next].0 {
            time = batches[next].0;
            continue;
        }
        time += dt;

        moves.clear();
        for (slot, &(ty, c)) in cfg.iter().enumerate() {
            // mergers of k lineages of this type: h = Π_{r<k} 1 / π̂(ty | c - r e_ty)
            let mut log_h = 0.0;
            let mut choose = c as f64;
            for k in 2..=c {
                choose *= (c - k + 1) as f64 / k as f64;
                let ph = approx.pi_hat(&cfg, &pending, p, ty, k - 1, ty).expect("nonempty");
                log_h -= ph.ln();
                let rate = choose * rates.lambda(p, k).max(0.0);
                if rate > 0.0 {
                    moves.push((Move::Merge { slot, k }, rate, rate.ln() + log_h));
                }
            }
            if theta > 0.0 {
                // h = π̂(j | c - e_ty) / π̂(ty | c - e_ty)
                let denom = approx.pi_hat(&cfg, &pending, p, ty, 1, ty);
                let mut push_mutation = |to: usize, jump: f64| {
                    let rate = c as f64 * theta * jump;
                    let log_h = match denom {
                        Some(d) => approx.pi_hat(&cfg, &pending, p, ty, 1, to).expect("nonempty").ln() - d.ln(),
                        None => model.stationary_prob(to).ln() - model.stationary_prob(ty).ln(),
                    };
                    moves.push((Move::Mutate { slot, to }, rate, rate.ln() + log_h));
                };
                match model.kind() {
                    MutationKind::BinaryLoci { loci } => {
                        for l in 0..*loci {
                            push_mutation(ty ^ (1 << l), 1.0 / *loci as f64);
                        }
                    }
                    MutationKind::General { .. } => {
                        for j in 0..model.num_types() {
                            let jump = model.jump_prob(j, ty);
                            if j != ty && jump > 0.0 {
                                push_mutation(j, jump);
                            }
                        }
                    }
                }
            }
        }
        if moves.is_empty() {
            return f64::NEG_INFINITY;
        }
        let max = moves.iter().map(|m| m.2).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = moves.iter().map(|m| (m.2 - max).exp()).sum();
        let mut u = rng.random::<f64>() * sum;
        let mut pick = moves.len() - 1;
        for (i, m) in moves.iter().enumerate() {
            u -= (m.2 - max).exp();
            if u < 0.0 {
                pick = i;
                break;
            }
        }
        let (mv, rate, logw_e) = &moves[pick];
        // r / (R π) with π = w / Σw
        logw += rate.ln() + max + sum.ln() - total.ln() - logw_e;
        match *mv {
            Move::Merge { slot, k } => {
                cfg[slot].1 -= k - 1;
                p -= k - 1;
            }
            Move::Mutate { slot, to } => {
                let ty = cfg[slot].0;
                remove(&mut cfg, ty);
                add(&mut cfg, to, 1);
            }
        }
    }
}

fn add(cfg: &mut Vec<(usize, usize)>, ty: usize, n: usize) {
    match cfg.iter_mut().find(|e| e.0 == ty) {
        Some(e) => e.1 += n,
        None => cfg.push((ty, n)),
    }
}

fn remove(cfg: &mut Vec<(usize, usize)>, ty: usize) {
    let i = cfg.iter().position(|e| e.0 == ty).expect("type present");
    cfg[i].1 -= 1;
    if cfg[i].1 == 0 {
        cfg.swap_remove(i);
    }
}

/// Log weight of particle `index` under master seed `seed`.
pub fn particle_log_weight(
    rates: &MergerRates,
    sample: &TypedSample,
    model: &MutationModel,
    approx: &Approximation,
    seed: u64,
    index: u64,
) -> f64 {
    let mut rng = stream_rng(seed, index);
    log_history_weight(rates, sample, model, approx, &mut rng) + sample.log_multinomial
}
