//! The multilevel pipeline: discretize once at the finest level, derive all
//! coarser chains by exact matrix coarsening, solve the coarsest chain, and
//! warm-start each finer level from the prolonged stationary density.
//!
//! Each level is priced by the walk-cost formula C = m s / (sqrt(delta)
//! ln(1/q)) with m the qubit count, s the row sparsity, delta the spectral
//! gap, and q the measured warm-start infidelity. Classical emulation mode
//! additionally counts power-iteration matrix-vector products so the warm
//! started sweep can be compared against a cold start at the finest level.

use serde::{Deserialize, Serialize};

use crate::density::DiscreteDensity;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::matrix::StochasticMatrix;
use crate::partition::Partition;
use crate::quadrature::QuadratureSpec;
use crate::spectral::{
    dobrushin_tau, overlap, spectral_gap, stationary_density, GapMethod, POWER_ITERATION_CAP,
    STATIONARY_TOL,
};
use crate::transfer::{coarsen_matrix, prolong_mass};
use crate::ulam::discretize_kernel;

/// Lower clamp on the measured infidelity when it enters cost formulas, so
/// an exact warm start prices as vanishingly cheap rather than dividing by
/// ln(1/0).
pub const Q_FLOOR: f64 = 1e-15;
/// Default slack factor of the total-cost bound check.
pub const DEFAULT_COST_SLACK: f64 = 0.25;

/// Dyadic ladder of levels from a coarsest to a finest resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSchedule {
    dim: u32,
    resolutions: Vec<u32>,
}

impl LevelSchedule {
    /// Builds the ladder coarsest, 2x, 4x, ..., finest. Resolutions must be
    /// powers of two so that every level has an integer qubit count.
    pub fn new(coarsest: u32, finest: u32, dim: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Schedule("dimension must be at least 1".into()));
        }
        if coarsest == 0 || finest == 0 {
            return Err(Error::Schedule("resolutions must be positive".into()));
        }
        if !coarsest.is_power_of_two() || !finest.is_power_of_two() {
            return Err(Error::Schedule(format!(
                "resolutions must be powers of two, got {coarsest} and {finest}"
            )));
        }
        if finest <= coarsest {
            return Err(Error::Schedule(format!(
                "need at least one halving: coarsest resolution {coarsest}, \
                 finest {finest}"
            )));
        }
        let mut resolutions = Vec::new();
        let mut n = coarsest;
        while n <= finest {
            resolutions.push(n);
            n *= 2;
        }
        Ok(Self { dim, resolutions })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    /// Per-level resolutions, coarsest first; bin width at each level is
    /// 1/resolution.
    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn num_levels(&self) -> usize {
        self.resolutions.len()
    }

    pub fn halvings(&self) -> u32 {
        (self.resolutions.len() - 1) as u32
    }

    pub fn h_max(&self) -> f64 {
        1.0 / self.resolutions[0] as f64
    }

    pub fn h_min(&self) -> f64 {
        1.0 / *self.resolutions.last().unwrap() as f64
    }
}

/// See `LevelSchedule::new`.
pub fn build_schedule(coarsest: u32, finest: u32, dim: u32) -> Result<LevelSchedule> {
    LevelSchedule::new(coarsest, finest, dim)
}

/// Walk steps needed to mix to accuracy epsilon from a start with
/// infidelity q on a chain with gap delta: ceil(B ln B) with
/// B = ln(1/eps) / (sqrt(delta) ln(1/q)), dropping the ln B factor when
/// B < e.
pub fn walk_steps_estimate(delta: f64, q: f64, epsilon: f64) -> Result<u64> {
    if delta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spectral gap must be positive, got {delta}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "infidelity must lie in (0,1), got {q}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target accuracy must lie in (0,1), got {epsilon}"
        )));
    }
    let b = (1.0 / epsilon).ln() / (delta.sqrt() * (1.0 / q).ln());
    let steps = if b >= std::f64::consts::E { (b * b.ln()).ceil() } else { b.ceil() };
    Ok(steps.max(1.0) as u64)
}

/// Cost of one level: C = m s / (sqrt(delta) ln(1/q)).
pub fn level_cost(m: u32, s: usize, delta: f64, q: f64) -> Result<f64> {
    if m == 0 || s == 0 {
        return Err(Error::InvalidParameter(
            "qubit count and row sparsity must be at least 1".into(),
        ));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spectral gap must be positive, got {delta}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "infidelity must lie in (0,1), got {q}"
        )));
    }
    Ok(m as f64 * s as f64 / (delta.sqrt() * (1.0 / q).ln()))
}

/// Number of matrix-vector products a power iteration started from `start`
/// needs before successive iterates are within `epsilon` in L1.
pub fn power_iteration_matvecs(
    p: &StochasticMatrix,
    start: &DiscreteDensity,
    epsilon: f64,
) -> Result<u64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {epsilon}"
        )));
    }
    if p.n() != start.len() {
        return Err(Error::LevelMismatch(format!(
            "matrix has {} states, start density has {}",
            p.n(),
            start.len()
        )));
    }
    let mut v = start.mass().to_vec();
    for t in 1..=POWER_ITERATION_CAP as u64 {
        let mut w = p.apply_left(&v);
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if diff <= epsilon {
            return Ok(t);
        }
    }
    Err(Error::Stationary(format!(
        "power iteration did not reach tolerance {epsilon:.3e} within \
         {POWER_ITERATION_CAP} steps"
    )))
}

/// What the pipeline measures at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    /// Count actual power-iteration work alongside the walk-cost formulas.
    ClassicalEmulation,
    /// Evaluate the walk-cost formulas only.
    QuantumCostModel,
}

/// Measurements of a single level.
#[derive(Debug, Clone, Serialize)]
pub struct CostRecord {
    /// Bin width.
    pub h: f64,
    pub n_states: usize,
    /// Qubit count d log2(2/h).
    pub m: u32,
    /// Largest row nonzero count.
    pub s: usize,
    /// Contraction coefficient.
    pub tau: f64,
    /// Signed spectral gap used by the cost formulas.
    pub delta: f64,
    /// Measured start infidelity: against the uniform density on the
    /// coarsest level, against the prolonged coarse stationary density on
    /// every finer level.
    pub q: f64,
    pub walk_steps: u64,
    /// Level cost m s / (sqrt(delta) ln(1/q)).
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_matvecs: Option<u64>,
    /// Matvec count times row nonzeros.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_cost: Option<f64>,
}

/// Full pipeline output: one record per level plus schedule-wide totals.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub schedule: LevelSchedule,
    pub mode: PipelineMode,
    pub target_epsilon: f64,
    /// Coarsest level first.
    pub levels: Vec<CostRecord>,
    /// Per-transition gap ratios delta_h / delta_2h, finest of the pair in
    /// the numerator.
    pub delta_ratios: Vec<f64>,
    /// Largest gap ratio across the schedule.
    pub gamma_hat: f64,
    pub c_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_total: Option<f64>,
    /// Cost of a cold-start power iteration at the finest level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_cold_total: Option<f64>,
    pub warnings: Vec<String>,
}

/// Runs the full ladder: finest-level discretization, exact coarsening,
/// coarsest solve, then per-transition warm starts, gap and contraction
/// measurements, and cost accounting.
pub fn run_pipeline(
    kernel: &KernelSpec,
    schedule: &LevelSchedule,
    quad: &QuadratureSpec,
    mode: PipelineMode,
    target_epsilon: f64,
) -> Result<PipelineReport> {
    if !(target_epsilon > 0.0 && target_epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target accuracy must lie in (0,1), got {target_epsilon}"
        )));
    }
    if kernel.dim() != schedule.dim() {
        return Err(Error::LevelMismatch(format!(
            "kernel dimension {} does not match schedule dimension {}",
            kernel.dim(),
            schedule.dim()
        )));
    }
    let fine_part = Partition::new(*schedule.resolutions().last().unwrap(), schedule.dim())?;
    let finest = discretize_kernel(kernel, &fine_part, quad)?;
    let mut chain = vec![finest];
    for _ in 1..schedule.num_levels() {
        let coarser = coarsen_matrix(chain.last().unwrap())?;
        chain.push(coarser);
    }
    chain.reverse();

    let mut levels: Vec<CostRecord> = Vec::with_capacity(chain.len());
    let mut warnings = Vec::new();
    let mut previous_pi: Option<DiscreteDensity> = None;
    let mut cold_matvecs_finest: Option<u64> = None;
    for p in &chain {
        let part = p.partition().expect("pipeline chains carry partitions").clone();
        let pi = stationary_density(p, STATIONARY_TOL)?;
        let gap = spectral_gap(p, &pi)?;
        if gap.method == GapMethod::SingularValue {
            warnings.push(format!(
                "level h=1/{}: detailed balance violated by {:.3e}; using the \
                 singular-value gap",
                part.resolution(),
                gap.max_violation
            ));
        }
        if gap.delta <= 0.0 {
            return Err(Error::Schedule(format!(
                "level h=1/{} has nonpositive spectral gap {:.3e}",
                part.resolution(),
                gap.delta
            )));
        }
        let start = match &previous_pi {
            None => DiscreteDensity::uniform(part.clone()),
            Some(coarse_pi) => prolong_mass(coarse_pi)?,
        };
        let q = 1.0 - overlap(&pi, &start)?.fidelity;
        let q_eff = q.max(Q_FLOOR);
        let delta_eff = gap.delta.min(1.0);
        let m = schedule.dim() * (1 + part.resolution().trailing_zeros());
        let s = p.max_row_nnz();
        let walk_steps = walk_steps_estimate(delta_eff, q_eff, target_epsilon)?;
        let cost = level_cost(m, s, delta_eff, q_eff)?;
        let (classical_matvecs, classical_cost) = match mode {
            PipelineMode::ClassicalEmulation => {
                let mv = power_iteration_matvecs(p, &start, target_epsilon)?;
                let cold = if previous_pi.is_none() {
                    mv
                } else {
                    let uniform = DiscreteDensity::uniform(part.clone());
                    power_iteration_matvecs(p, &uniform, target_epsilon)?
                };
                if mv > cold {
                    return Err(Error::Schedule(format!(
                        "level h=1/{}: warm start took {mv} matvecs where a cold \
                         start takes {cold}",
                        part.resolution()
                    )));
                }
                cold_matvecs_finest = Some(cold);
                (Some(mv), Some(mv as f64 * p.nnz() as f64))
            }
            PipelineMode::QuantumCostModel => (None, None),
        };
        levels.push(CostRecord {
            h: part.h(),
            n_states: p.n(),
            m,
            s,
            tau: dobrushin_tau(p),
            delta: gap.delta,
            q,
            walk_steps,
            cost,
            classical_matvecs,
            classical_cost,
        });
        previous_pi = Some(pi);
    }

    let delta_ratios: Vec<f64> = (1..levels.len())
        .map(|k| levels[k].delta / levels[k - 1].delta)
        .collect();
    let gamma_hat = delta_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c_total = levels.iter().map(|l| l.cost).sum();
    let (classical_total, classical_cold_total) = match mode {
        PipelineMode::ClassicalEmulation => {
            let total = levels.iter().filter_map(|l| l.classical_cost).sum();
            let cold_mv = cold_matvecs_finest.expect("classical levels record a cold run");
            (Some(total), Some(cold_mv as f64 * chain.last().unwrap().nnz() as f64))
        }
        PipelineMode::QuantumCostModel => (None, None),
    };
    Ok(PipelineReport {
        schedule: schedule.clone(),
        mode,
        target_epsilon,
        levels,
        delta_ratios,
        gamma_hat,
        c_total,
        classical_total,
        classical_cold_total,
        warnings,
    })
}

/// Geometric-sum check: the summed level costs against the finest-level
/// cost scaled by d sqrt(gamma_hat) / (d - 1).
#[derive(Debug, Clone, Serialize)]
pub struct TotalCostCheck {
    pub c_total: f64,
    pub c_finest: f64,
    pub gamma_hat: f64,
    /// Per-transition cost ratios C_2h / C_h, coarser over finer.
    pub cost_ratios: Vec<f64>,
    /// d sqrt(gamma_hat) / (d - 1) times the finest cost; absent in one
    /// dimension, where the geometric-sum argument degenerates.
    pub bound: Option<f64>,
    /// c_total <= bound (1 + slack); vacuously true when the bound is
    /// absent.
    pub pass: bool,
}

pub fn total_cost_check(report: &PipelineReport, slack: f64) -> TotalCostCheck {
    let c_finest = report.levels.last().map(|l| l.cost).unwrap_or(0.0);
    let cost_ratios: Vec<f64> = (1..report.levels.len())
        .map(|k| report.levels[k - 1].cost / report.levels[k].cost)
        .collect();
    let d = report.schedule.dim();
    let (bound, pass) = if d <= 1 {
        (None, true)
    } else {
        let b = d as f64 * report.gamma_hat.max(0.0).sqrt() / (d as f64 - 1.0) * c_finest;
        (Some(b), report.c_total <= b * (1.0 + slack))
    };
    TotalCostCheck {
        c_total: report.c_total,
        c_finest,
        gamma_hat: report.gamma_hat,
        cost_ratios,
        bound,
        pass,
    }
}
