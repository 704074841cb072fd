//! Dense simulation of the quantum walk built from a stochastic matrix and
//! verification of its spectral correspondence with the discriminant matrix.
//!
//! The walk acts on the doubled register space of dimension n^2 as
//! U = S (2TT* - I), where T encodes each state together with the amplitude
//! profile of its outgoing row and S swaps the registers. For a reversible
//! chain the eigenphases theta of U satisfy cos theta = lambda over the
//! spectrum of the discriminant D(i,j) = sqrt(P(i,j) P(j,i)), which pins the
//! walk's phase gap to at least sqrt(2 delta).

use nalgebra::{DMatrix, DVector};

use crate::density::DiscreteDensity;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::spectral::{check_reversibility, stationary_density, STATIONARY_TOL};

/// Largest chain dimension the dense walk simulation accepts.
pub const WALK_DIM_CAP: usize = 64;
/// Largest acceptable deviation of U*U from the identity.
pub const UNITARITY_TOL: f64 = 1e-10;

const PHASE_ZERO_TOL: f64 = 1e-5;

/// Walk operator on the doubled register space, together with the encoding
/// isometry and the stationary target state when the chain has one.
#[derive(Debug, Clone)]
pub struct WalkOperator {
    n: usize,
    u: DMatrix<f64>,
    isometry: DMatrix<f64>,
    target: Option<DVector<f64>>,
    unitarity_defect: f64,
}

impl WalkOperator {
    /// Chain dimension n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Register-space dimension n^2.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Measured max-norm deviation of U^T U from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        self.unitarity_defect
    }

    /// Stationary target state T applied to the stationary amplitudes;
    /// absent when the chain has no unique stationary density.
    pub fn target(&self) -> Option<&DVector<f64>> {
        self.target.as_ref()
    }

    /// Applies the encoding isometry to a unit amplitude vector over the
    /// chain's states.
    pub fn lift_amplitudes(&self, amplitudes: &[f64]) -> Result<DVector<f64>> {
        if amplitudes.len() != self.n {
            return Err(Error::LevelMismatch(format!(
                "expected {} amplitudes, got {}",
                self.n,
                amplitudes.len()
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "amplitude vector has norm {norm}, expected 1"
            )));
        }
        Ok(&self.isometry * DVector::from_column_slice(amplitudes))
    }

    /// Encodes a density by lifting its amplitude representation.
    pub fn encode_density(&self, pi: &DiscreteDensity) -> Result<DVector<f64>> {
        self.lift_amplitudes(&pi.amplitudes())
    }
}

/// Builds the walk operator U = S (2TT* - I) of a chain with at most
/// `WALK_DIM_CAP` states.
pub fn build_walk(p: &StochasticMatrix) -> Result<WalkOperator> {
    let n = p.n();
    if n > WALK_DIM_CAP {
        return Err(Error::Capacity {
            what: "walk operator chain".into(),
            got: n as u128,
            cap: WALK_DIM_CAP as u128,
        });
    }
    let dim = n * n;
    let amps: Vec<Vec<f64>> = (0..n)
        .map(|i| p.dense_row(i).iter().map(|v| v.sqrt()).collect())
        .collect();
    let mut isometry = DMatrix::zeros(dim, n);
    for i in 0..n {
        for j in 0..n {
            isometry[(i * n + j, i)] = amps[i][j];
        }
    }
    let mut u = DMatrix::zeros(dim, dim);
    for b in 0..n {
        for a in 0..n {
            let row = a * n + b;
            for d in 0..n {
                let mut v = 2.0 * amps[b][a] * amps[b][d];
                if a == d {
                    v -= 1.0;
                }
                u[(row, b * n + d)] = v;
            }
        }
    }
    let unitarity_defect = unitarity_defect(&u, &amps);
    if unitarity_defect > UNITARITY_TOL {
        return Err(Error::NotStochastic(format!(
            "walk operator deviates from orthogonality by {unitarity_defect:.3e}; \
             rows are not consistently normalized"
        )));
    }
    let target = stationary_density(p, STATIONARY_TOL).ok().map(|pi| {
        let amps_pi = pi.amplitudes();
        let mut t = DVector::zeros(dim);
        for i in 0..n {
            for j in 0..n {
                t[i * n + j] = amps_pi[i] * amps[i][j];
            }
        }
        t
    });
    Ok(WalkOperator { n, u, isometry, target, unitarity_defect })
}

/// Deviation of U^T U from the identity. Small systems take the dense
/// product; larger ones use the identity U^T U - I = R^2 - I with R the
/// blockwise rank-one reflection, whose blocks differ from the identity by
/// 4 (|b_i|^2 - 1) b_i b_i^T.
fn unitarity_defect(u: &DMatrix<f64>, amps: &[Vec<f64>]) -> f64 {
    let dim = u.nrows();
    if dim <= 1024 {
        let gram = u.transpose() * u;
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - want).abs());
            }
        }
        worst
    } else {
        amps.iter()
            .map(|b| {
                let norm2: f64 = b.iter().map(|a| a * a).sum();
                let peak = b.iter().fold(0.0f64, |m, &a| m.max(a));
                4.0 * (norm2 - 1.0).abs() * peak * peak
            })
            .fold(0.0, f64::max)
    }
}

/// Discriminant matrix with entries sqrt(P(i,j) P(j,i)); symmetric, and
/// similar to P via the stationary rescaling when P is reversible.
pub fn discriminant(p: &StochasticMatrix) -> DMatrix<f64> {
    let n = p.n();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, v) in p.row(i) {
            let j = j as usize;
            if j >= i {
                let e = (v * p.get(j, i)).sqrt();
                d[(i, j)] = e;
                d[(j, i)] = e;
            }
        }
    }
    d
}

/// Comparison of the walk's eigenphases against the discriminant spectrum.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WalkSpectrumCheck {
    /// All eigenphases of U, sorted ascending over [0, pi].
    pub phases: Vec<f64>,
    /// Discriminant eigenvalues, sorted descending.
    pub discriminant_eigenvalues: Vec<f64>,
    /// Two-sided mismatch: every discriminant eigenvalue must appear among
    /// the phase cosines, and every phase cosine must be a discriminant
    /// eigenvalue or a +-1 contribution of the swap's complement.
    pub cos_match_error: f64,
    /// Smallest eigenphase above 1e-5; phases below that are solver noise
    /// around the stationary direction's zero phase.
    pub phase_gap: f64,
    /// Gap 1 - lambda_2 of the discriminant.
    pub delta: f64,
    /// Whether phase_gap >= sqrt(2 delta) up to 1e-9 of noise.
    pub pass: bool,
    pub unitarity_defect: f64,
}

/// Verifies cos(eigenphases of U) against the discriminant spectrum and the
/// quadratic phase-gap relation. Non-reversible chains are rejected, since
/// the correspondence only holds under detailed balance.
///
/// The cosines are read off the symmetric part (U + U^T)/2, whose spectrum
/// equals the real parts of U's unit-circle eigenvalues because U is
/// orthogonal; the general-purpose eigensolver stalls on such matrices.
pub fn walk_spectrum_check(
    p: &StochasticMatrix,
    pi: &DiscreteDensity,
) -> Result<WalkSpectrumCheck> {
    let rev = check_reversibility(p, pi)?;
    if !rev.reversible {
        return Err(Error::NotReversible { max_violation: rev.max_violation });
    }
    let walk = build_walk(p)?;
    let n = p.n();

    let mut disc_eigs: Vec<f64> = discriminant(p).symmetric_eigenvalues().iter().copied().collect();
    disc_eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let delta = if n > 1 { 1.0 - disc_eigs[1] } else { 1.0 };

    let sym = 0.5 * (walk.matrix() + walk.matrix().transpose());
    let cosines: Vec<f64> = sym
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.clamp(-1.0, 1.0))
        .collect();
    let mut cos_match_error = 0.0f64;
    for &l in &disc_eigs {
        let nearest = cosines
            .iter()
            .map(|c| (c - l).abs())
            .fold(f64::INFINITY, f64::min);
        cos_match_error = cos_match_error.max(nearest);
    }
    for &c in &cosines {
        let nearest = disc_eigs
            .iter()
            .map(|l| (c - l).abs())
            .fold(f64::INFINITY, f64::min)
            .min((c - 1.0).abs())
            .min((c + 1.0).abs());
        cos_match_error = cos_match_error.max(nearest);
    }

    let mut phases: Vec<f64> = cosines.iter().map(|c| c.acos()).collect();
    phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let phase_gap = phases
        .iter()
        .copied()
        .find(|&t| t > PHASE_ZERO_TOL)
        .unwrap_or(0.0);
    let pass = phase_gap + 1e-9 >= (2.0 * delta.max(0.0)).sqrt();
    Ok(WalkSpectrumCheck {
        phases,
        discriminant_eigenvalues: disc_eigs,
        cos_match_error,
        phase_gap,
        delta,
        pass,
        unitarity_defect: walk.unitarity_defect(),
    })
}

/// Step-by-step record of a walk evolution.
#[derive(Debug, Clone)]
pub struct WalkTrace {
    /// Inner products with the stationary target state, one per step
    /// starting at step 0. Constant whenever the chain is reversible, since
    /// the target is then a fixed point of the walk.
    pub target_overlap: Vec<f64>,
    /// Inner products with the initial state, the trace that exposes the
    /// phase oscillation.
    pub self_overlap: Vec<f64>,
    pub final_state: DVector<f64>,
    /// Largest deviation of the state norm from 1 across all steps.
    pub max_norm_drift: f64,
}

/// Applies the walk `steps` times, recording overlaps at every step.
pub fn walk_evolve(
    walk: &WalkOperator,
    psi0: &DVector<f64>,
    steps: usize,
) -> Result<WalkTrace> {
    if psi0.len() != walk.dim() {
        return Err(Error::LevelMismatch(format!(
            "state has {} entries, walk space has {}",
            psi0.len(),
            walk.dim()
        )));
    }
    let norm = psi0.norm();
    if (norm - 1.0).abs() > UNITARITY_TOL {
        return Err(Error::InvalidParameter(format!(
            "initial state has norm {norm}, expected 1"
        )));
    }
    let target = walk.target().ok_or_else(|| {
        Error::Stationary("overlap target needs a unique stationary density".into())
    })?;
    let mut psi = psi0.clone();
    let mut target_overlap = Vec::with_capacity(steps + 1);
    let mut self_overlap = Vec::with_capacity(steps + 1);
    let mut max_norm_drift = 0.0f64;
    for step in 0..=steps {
        target_overlap.push(target.dot(&psi));
        self_overlap.push(psi0.dot(&psi));
        let drift = (psi.norm() - 1.0).abs();
        max_norm_drift = max_norm_drift.max(drift);
        if drift > UNITARITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "walk evolution lost unitarity at step {step}: norm drift {drift:.3e}"
            )));
        }
        if step < steps {
            psi = walk.matrix() * psi;
        }
    }
    Ok(WalkTrace { target_overlap, self_overlap, final_state: psi, max_norm_drift })
}
