//! Stationary densities, contraction coefficients, spectral gaps, and the
//! perturbation bounds connecting chains across levels.
//!
//! The contraction coefficient tau is the exact operator norm of the chain's
//! left action on mean-zero vectors and has the closed form
//! tau = 1/2 * max over row pairs of their L1 distance. The spectral gap of a
//! reversible chain is read off the symmetrized similarity
//! D^{1/2} P D^{-1/2}; chains that fail the reversibility check fall back to
//! a singular-value gap of the same similarity.

use nalgebra::{DMatrix, DVector};
use rand::rngs::ChaCha8Rng;
use rand::{RngExt, SeedableRng};
use rayon::prelude::*;

use crate::density::{check_compatible, DiscreteDensity, PiecewiseConstantDensity};
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::transfer;
use crate::ulam::interpolate_density;

/// Default residual tolerance for stationary densities.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Iteration cap of the power method.
pub const POWER_ITERATION_CAP: usize = 1_000_000;
/// Largest state count solved by dense linear algebra.
pub const DENSE_SOLVE_CAP: usize = 512;
/// Detailed-balance violations up to this bound count as reversible.
pub const REVERSIBILITY_TOL: f64 = 1e-10;
/// Default slack factor of the cross-level contraction comparison.
pub const DEFAULT_TAU_SLACK: f64 = 0.5;

const UNIT_EIGENVALUE_TOL: f64 = 1e-8;
const TAU_NOISE_FLOOR: f64 = 1e-12;

/// Chapman-Kolmogorov evolution: the density after `steps` applications of
/// the chain's left action, renormalized each step.
pub fn evolve(
    pi: &DiscreteDensity,
    p: &StochasticMatrix,
    steps: usize,
) -> Result<DiscreteDensity> {
    check_sizes(p, pi)?;
    let mut v = pi.mass().to_vec();
    for _ in 0..steps {
        v = p.apply_left(&v);
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadDensity(format!(
                "evolution step produced total mass {total}"
            )));
        }
        for x in &mut v {
            *x /= total;
        }
    }
    rebuild(pi, v)
}

/// Stationary density of the chain: unique pi with pi P = pi. Small systems
/// solve the balance equations directly after verifying that the eigenvalue
/// 1 is simple; larger systems run the power method from the uniform density.
pub fn stationary_density(p: &StochasticMatrix, tol: f64) -> Result<DiscreteDensity> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stationary tolerance must be positive, got {tol}"
        )));
    }
    let n = p.n();
    let mass = if n <= DENSE_SOLVE_CAP {
        dense_stationary(p, tol)?
    } else {
        power_stationary(p, tol)?
    };
    let density = match p.partition() {
        Some(part) => DiscreteDensity::new(part.clone(), mass)?,
        None => DiscreteDensity::free(mass)?,
    };
    Ok(density)
}

/// L1 residual of a candidate stationary density.
pub fn stationary_residual(p: &StochasticMatrix, pi: &DiscreteDensity) -> Result<f64> {
    check_sizes(p, pi)?;
    let w = p.apply_left(pi.mass());
    Ok(w.iter().zip(pi.mass()).map(|(a, b)| (a - b).abs()).sum())
}

fn dense_stationary(p: &StochasticMatrix, tol: f64) -> Result<Vec<f64>> {
    let n = p.n();
    let dense = p.to_dense();
    let unit_count = dense
        .clone()
        .complex_eigenvalues()
        .iter()
        .filter(|l| (*l - nalgebra::Complex::new(1.0, 0.0)).norm() <= UNIT_EIGENVALUE_TOL)
        .count();
    if unit_count != 1 {
        return Err(Error::Stationary(format!(
            "eigenvalue 1 has multiplicity {unit_count}; the stationary density is not unique"
        )));
    }
    let mut a = dense.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Stationary("balance system is singular".into()))?;
    let mut mass: Vec<f64> = x.iter().copied().collect();
    for (j, m) in mass.iter_mut().enumerate() {
        if *m < 0.0 {
            if *m < -1e-9 {
                return Err(Error::Stationary(format!(
                    "balance solution has negative mass {m:.3e} at state {j}"
                )));
            }
            *m = 0.0;
        }
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    let w = p.apply_left(&mass);
    let residual: f64 = w.iter().zip(&mass).map(|(a, b)| (a - b).abs()).sum();
    if residual > tol {
        return Err(Error::Stationary(format!(
            "balance solution has residual {residual:.3e}, tolerance {tol:.3e}"
        )));
    }
    Ok(mass)
}

fn power_stationary(p: &StochasticMatrix, tol: f64) -> Result<Vec<f64>> {
    let n = p.n();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..POWER_ITERATION_CAP {
        let mut w = p.apply_left(&v);
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if diff <= tol {
            return Ok(v);
        }
    }
    Err(Error::Stationary(format!(
        "power iteration did not reach tolerance {tol:.3e} within {POWER_ITERATION_CAP} \
         steps; the chain may be reducible or periodic"
    )))
}

/// Contraction coefficient of the chain's left action on mean-zero vectors:
/// tau = 1/2 * max over row pairs (i,k) of the L1 distance of rows i and k.
pub fn dobrushin_tau(p: &StochasticMatrix) -> f64 {
    let n = p.n();
    0.5 * (0..n)
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0f64;
            for k in i + 1..n {
                worst = worst.max(p.row_l1_distance(i, k));
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest sampled quotient |v P|_1 / |v|_1 over mean-zero vectors: half the
/// draws are centered random vectors, half are scaled differences of two
/// basis vectors, the family attaining the supremum.
pub fn dobrushin_sampled_max(p: &StochasticMatrix, samples: usize, seed: u64) -> f64 {
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let mut v = vec![0.0f64; n];
    for s in 0..samples {
        for x in &mut v {
            *x = 0.0;
        }
        if s % 2 == 0 && n > 1 {
            let i = rng.random_range(0..n);
            let mut k = rng.random_range(0..n);
            if k == i {
                k = (k + 1) % n;
            }
            let c = rng.random_range(0.1..2.0);
            v[i] = c;
            v[k] = -c;
        } else {
            for x in &mut v {
                *x = rng.random_range(-1.0..1.0);
            }
            let mean: f64 = v.iter().sum::<f64>() / n as f64;
            for x in &mut v {
                *x -= mean;
            }
        }
        let norm: f64 = v.iter().map(|x| x.abs()).sum();
        if norm < 1e-300 {
            continue;
        }
        let w = p.apply_left(&v);
        let out: f64 = w.iter().map(|x| x.abs()).sum();
        best = best.max(out / norm);
    }
    best
}

/// Which decomposition produced a spectral gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    /// Eigenvalues of the symmetrized similarity (reversible chains).
    Eigenvalue,
    /// Singular values of the similarity (non-reversible fallback).
    SingularValue,
}

/// Spectral gap of the chain under the stationary similarity transform.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    /// Signed gap 1 - lambda_2, the quantity the cost model consumes.
    pub delta: f64,
    /// Magnitude gap 1 - max |lambda| over non-leading eigenvalues.
    pub delta_abs: f64,
    /// Second-largest eigenvalue (or singular value in the fallback).
    pub lambda2: f64,
    pub method: GapMethod,
    /// Largest detailed-balance violation found.
    pub max_violation: f64,
}

/// Spectral gap via the similarity M = D^{1/2} P D^{-1/2}: eigenvalues of
/// (M + M^T)/2 when the chain passes the reversibility check, singular
/// values of M otherwise.
pub fn spectral_gap(p: &StochasticMatrix, pi: &DiscreteDensity) -> Result<GapReport> {
    check_sizes(p, pi)?;
    let zero_bins: Vec<usize> = pi
        .mass()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m <= 0.0)
        .map(|(j, _)| j)
        .take(8)
        .collect();
    if !zero_bins.is_empty() {
        return Err(Error::BadDensity(format!(
            "stationary mass vanishes on bins {zero_bins:?}; similarity transform undefined"
        )));
    }
    let n = p.n();
    let sqrt_pi: Vec<f64> = pi.mass().iter().map(|&m| m.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, v) in p.row(i) {
            m[(i, j as usize)] = sqrt_pi[i] * v / sqrt_pi[j as usize];
        }
    }
    let rev = check_reversibility(p, pi)?;
    let eigs: Vec<f64> = if rev.reversible {
        let sym = 0.5 * (&m + m.transpose());
        sym.symmetric_eigenvalues().iter().copied().collect()
    } else {
        let gram = m.transpose() * &m;
        gram.symmetric_eigenvalues()
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect()
    };
    let mut by_value = eigs.clone();
    by_value.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lambda2 = if n > 1 { by_value[1] } else { 0.0 };
    let mut by_abs = eigs;
    by_abs.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
    let second_abs = if n > 1 { by_abs[1].abs() } else { 0.0 };
    Ok(GapReport {
        delta: 1.0 - lambda2,
        delta_abs: 1.0 - second_abs,
        lambda2,
        method: if rev.reversible { GapMethod::Eigenvalue } else { GapMethod::SingularValue },
        max_violation: rev.max_violation,
    })
}

/// Outcome of the detailed-balance check.
#[derive(Debug, Clone, Copy)]
pub struct ReversibilityCheck {
    pub reversible: bool,
    /// max over (i,j) of |pi_i P(i,j) - pi_j P(j,i)|.
    pub max_violation: f64,
}

pub fn check_reversibility(
    p: &StochasticMatrix,
    pi: &DiscreteDensity,
) -> Result<ReversibilityCheck> {
    check_sizes(p, pi)?;
    let mass = pi.mass();
    let max_violation = (0..p.n())
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0f64;
            for &(j, v) in p.row(i) {
                let j = j as usize;
                worst = worst.max((mass[i] * v - mass[j] * p.get(j, i)).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(ReversibilityCheck { reversible: max_violation <= REVERSIBILITY_TOL, max_violation })
}

/// Closeness of two densities in the amplitude and L1 senses.
#[derive(Debug, Clone, Copy)]
pub struct Overlap {
    /// Inner product of the amplitude encodings, sum of sqrt(a_j b_j).
    pub fidelity: f64,
    /// Infidelity 1 - fidelity.
    pub q: f64,
    /// L1 distance.
    pub l1: f64,
}

pub fn overlap(a: &DiscreteDensity, b: &DiscreteDensity) -> Result<Overlap> {
    check_compatible(a, b)?;
    let fidelity: f64 = a
        .mass()
        .iter()
        .zip(b.mass())
        .map(|(&x, &y)| (x * y).sqrt())
        .sum();
    let l1: f64 = a
        .mass()
        .iter()
        .zip(b.mass())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    let q = 1.0 - fidelity;
    assert!(q <= 0.5 * l1 + 1e-12, "infidelity {q} above half the L1 distance {l1}");
    Ok(Overlap { fidelity, q, l1 })
}

/// Measured bounded-variation constant: largest value range within any bin
/// of the next-coarser partition, divided by the fine bin width.
pub fn variation_estimate(p: &PiecewiseConstantDensity) -> Result<f64> {
    let fine = p.partition();
    let (coarse, parents) = transfer::parent_linear_map(fine)?;
    let mut lo = vec![f64::INFINITY; coarse.num_states()];
    let mut hi = vec![f64::NEG_INFINITY; coarse.num_states()];
    for (idx, &par) in parents.iter().enumerate() {
        let v = p.values()[idx];
        let par = par as usize;
        lo[par] = lo[par].min(v);
        hi[par] = hi[par].max(v);
    }
    let range = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max);
    Ok(range / fine.h())
}

/// Largest bounded-variation constant over the interpolated rows of the
/// chain, the empirical stand-in for the kernel's smoothness constant.
pub fn row_variation_estimate(p: &StochasticMatrix) -> Result<f64> {
    let part = p
        .partition()
        .ok_or_else(|| Error::LevelMismatch("row variation needs a partition-backed chain".into()))?;
    (0..p.n())
        .into_par_iter()
        .map(|i| {
            let row = DiscreteDensity::new(part.clone(), p.dense_row(i))?;
            variation_estimate(&interpolate_density(&row)?)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Contraction coefficients of two nested levels and the bounded-variation
/// bound on their difference.
#[derive(Debug, Clone, Copy)]
pub struct TauComparison {
    pub tau_h: f64,
    pub tau_2h: f64,
    pub diff: f64,
    /// Measured bounded-variation constant of the fine chain's rows.
    pub lambda_hat: f64,
    /// lambda_hat * h, the nominal bound on |tau_h - tau_2h|.
    pub bound: f64,
    /// Whether diff <= bound * (1 + slack), up to an absolute floor of
    /// 1e-12 absorbing roundoff when the bound itself vanishes.
    pub pass: bool,
}

pub fn tau_level_comparison(
    p_h: &StochasticMatrix,
    p_2h: &StochasticMatrix,
    slack: f64,
) -> Result<TauComparison> {
    let fine = p_h
        .partition()
        .ok_or_else(|| Error::LevelMismatch("level comparison needs partition-backed chains".into()))?;
    let coarse = p_2h
        .partition()
        .ok_or_else(|| Error::LevelMismatch("level comparison needs partition-backed chains".into()))?;
    if fine.dim() != coarse.dim() || fine.resolution() != 2 * coarse.resolution() {
        return Err(Error::LevelMismatch(format!(
            "levels are not nested: fine resolution {}, coarse resolution {}",
            fine.resolution(),
            coarse.resolution()
        )));
    }
    let tau_h = dobrushin_tau(p_h);
    let tau_2h = dobrushin_tau(p_2h);
    let diff = (tau_h - tau_2h).abs();
    let lambda_hat = row_variation_estimate(p_h)?;
    let bound = lambda_hat * fine.h();
    let pass = diff <= bound * (1.0 + slack) + TAU_NOISE_FLOOR;
    Ok(TauComparison { tau_h, tau_2h, diff, lambda_hat, bound, pass })
}

/// Both sides of the stationary perturbation bound
/// |pi_hat - pi|_1 <= |P - P_hat| / delta with delta = 1 - tau(P).
#[derive(Debug, Clone, Copy)]
pub struct SenetaCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Contraction-based gap 1 - tau of the reference chain.
    pub delta_tau: f64,
    /// Induced max-row-L1 distance between the chains.
    pub matrix_distance: f64,
    pub pass: bool,
}

pub fn seneta_bound_check(
    p: &StochasticMatrix,
    p_hat: &StochasticMatrix,
) -> Result<SenetaCheck> {
    let pi = stationary_density(p, STATIONARY_TOL)?;
    let pi_hat = stationary_density(p_hat, STATIONARY_TOL)?;
    let lhs = pi.l1_distance(&pi_hat)?;
    let delta_tau = 1.0 - dobrushin_tau(p);
    let matrix_distance = p.row_l1_norm_of_difference(p_hat)?;
    let rhs = if delta_tau > 0.0 { matrix_distance / delta_tau } else { f64::INFINITY };
    Ok(SenetaCheck { lhs, rhs, delta_tau, matrix_distance, pass: lhs <= rhs + 1e-12 })
}

/// Additive reversibilization: 0.5 (P + P*) with P* the time reversal of P
/// under its own stationary density. The result is reversible with respect
/// to that same density.
pub fn reversibilize(p: &StochasticMatrix) -> Result<StochasticMatrix> {
    let pi = stationary_density(p, STATIONARY_TOL)?;
    let m = pi.mass();
    if let Some(i) = m.iter().position(|&v| v <= 0.0) {
        return Err(Error::Stationary(format!(
            "bin {i} carries no stationary mass; time reversal is undefined"
        )));
    }
    let n = p.n();
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let v = 0.5 * (p.get(i, j) + m[j] * p.get(j, i) / m[i]);
                    (v != 0.0).then_some((j as u32, v))
                })
                .collect()
        })
        .collect();
    let out = StochasticMatrix::from_sparse(None, n, rows)?;
    match p.partition() {
        Some(part) => out.with_partition(part.clone()),
        None => Ok(out),
    }
}

/// Full spectral profile of one chain.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralReport {
    pub pi: DiscreteDensity,
    /// L1 residual of pi under the chain.
    pub residual: f64,
    /// Signed eigenvalue gap 1 - lambda_2.
    pub delta_eig: f64,
    /// Magnitude gap 1 - max non-leading |lambda|.
    pub delta_eig_abs: f64,
    pub lambda2: f64,
    pub gap_method: GapMethod,
    pub tau: f64,
    /// Contraction gap 1 - tau.
    pub delta_tau: f64,
    pub reversible: bool,
    pub max_violation: f64,
    /// Bounded-variation constant of the rows; needs a partitioned chain
    /// with a coarser level.
    pub lambda_estimate: Option<f64>,
    /// Eigenbasis conditioning |V|_1 |V^-1|_1; dense reversible chains only.
    pub bauer_fike_c: Option<f64>,
}

/// Computes the stationary density, both gap forms, the contraction
/// coefficient, and the conditioning diagnostics of one chain.
pub fn spectral_report(p: &StochasticMatrix) -> Result<SpectralReport> {
    let pi = stationary_density(p, STATIONARY_TOL)?;
    let residual = stationary_residual(p, &pi)?;
    let gap = spectral_gap(p, &pi)?;
    let tau = dobrushin_tau(p);
    let lambda_estimate = match p.partition() {
        Some(part) if part.resolution() >= 2 => Some(row_variation_estimate(p)?),
        _ => None,
    };
    let bauer_fike_c = if gap.method == GapMethod::Eigenvalue && p.n() <= DENSE_SOLVE_CAP {
        Some(eigenbasis_condition(p, &pi))
    } else {
        None
    };
    Ok(SpectralReport {
        pi,
        residual,
        delta_eig: gap.delta,
        delta_eig_abs: gap.delta_abs,
        lambda2: gap.lambda2,
        gap_method: gap.method,
        tau,
        delta_tau: 1.0 - tau,
        reversible: gap.max_violation <= REVERSIBILITY_TOL,
        max_violation: gap.max_violation,
        lambda_estimate,
        bauer_fike_c,
    })
}

/// Conditioning constant |V|_1 |V^-1|_1 of the eigenbasis V = D^{-1/2} Q,
/// with Q the orthonormal eigenvectors of the symmetrized similarity.
fn eigenbasis_condition(p: &StochasticMatrix, pi: &DiscreteDensity) -> f64 {
    let n = p.n();
    let sqrt_pi: Vec<f64> = pi.mass().iter().map(|&m| m.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, v) in p.row(i) {
            m[(i, j as usize)] = sqrt_pi[i] * v / sqrt_pi[j as usize];
        }
    }
    let sym = 0.5 * (&m + m.transpose());
    let q = nalgebra::SymmetricEigen::new(sym).eigenvectors;
    let col_sum_max = |mat: &DMatrix<f64>| -> f64 {
        (0..mat.ncols())
            .map(|j| mat.column(j).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut v = q.clone();
    let mut v_inv = q.transpose();
    for i in 0..n {
        for j in 0..n {
            v[(i, j)] /= sqrt_pi[i];
            v_inv[(i, j)] *= sqrt_pi[j];
        }
    }
    col_sum_max(&v) * col_sum_max(&v_inv)
}

fn check_sizes(p: &StochasticMatrix, pi: &DiscreteDensity) -> Result<()> {
    if p.n() != pi.len() {
        return Err(Error::LevelMismatch(format!(
            "matrix has {} states, density has {}",
            p.n(),
            pi.len()
        )));
    }
    if let (Some(a), Some(b)) = (p.partition(), pi.partition()) {
        if a != b {
            return Err(Error::LevelMismatch(
                "matrix and density live on different partitions".into(),
            ));
        }
    }
    Ok(())
}

fn rebuild(template: &DiscreteDensity, mass: Vec<f64>) -> Result<DiscreteDensity> {
    match template.partition() {
        Some(part) => DiscreteDensity::new(part.clone(), mass),
        None => DiscreteDensity::free(mass),
    }
}
