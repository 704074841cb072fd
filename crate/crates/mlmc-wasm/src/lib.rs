//! Browser bindings for exploring the one-dimensional gauss-ar1 chain:
//! stationary staircases per level, walk overlap traces, and the multilevel
//! cost table. Every call returns a JSON string for the page to render.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mlmc_core::density::DiscreteDensity;
use mlmc_core::kernels::{BoundaryPolicy, KernelSpec};
use mlmc_core::matrix::StochasticMatrix;
use mlmc_core::multilevel::{run_pipeline, LevelSchedule, PipelineMode};
use mlmc_core::partition::Partition;
use mlmc_core::quadrature::QuadratureSpec;
use mlmc_core::spectral::{
    check_reversibility, dobrushin_tau, reversibilize, spectral_gap, stationary_density,
    STATIONARY_TOL,
};
use mlmc_core::szegedy::{build_walk, walk_evolve, walk_spectrum_check};
use mlmc_core::ulam::discretize_kernel;
use mlmc_core::Error;

/// Finest 1/h the density explorer accepts; keeps responses small enough to
/// draw interactively.
const MAX_RESOLUTION: u32 = 512;
/// Finest 1/h the dense walk builder accepts; the walk space is the square
/// of the state space.
const MAX_WALK_RESOLUTION: u32 = 16;
/// Longest overlap trace the page will plot.
const MAX_STEPS: u32 = 2000;

fn err(e: Error) -> String {
    e.to_string()
}

fn gauss_chain(
    a: f64,
    sigma: f64,
    resolution: u32,
    max_resolution: u32,
) -> Result<StochasticMatrix, String> {
    if resolution == 0 || resolution > max_resolution || !resolution.is_power_of_two() {
        return Err(format!(
            "resolution must be a power of two in 1..={max_resolution}, got {resolution}"
        ));
    }
    let kernel =
        KernelSpec::gauss_ar1(a, sigma, BoundaryPolicy::RenormalizeRows, 1).map_err(err)?;
    let part = Partition::new(resolution, 1).map_err(err)?;
    discretize_kernel(&kernel, &part, &QuadratureSpec::default_for(1)).map_err(err)
}

#[derive(Serialize)]
struct Staircase {
    h: f64,
    n_states: usize,
    mass: Vec<f64>,
    tau: f64,
    delta: f64,
}

/// Stationary density of the chain at one level, with its contraction
/// coefficient and spectral gap.
#[wasm_bindgen]
pub fn stationary_staircase(a: f64, sigma: f64, resolution: u32) -> Result<String, String> {
    let p = gauss_chain(a, sigma, resolution, MAX_RESOLUTION)?;
    let pi = stationary_density(&p, STATIONARY_TOL).map_err(err)?;
    let gap = spectral_gap(&p, &pi).map_err(err)?;
    let out = Staircase {
        h: p.partition().unwrap().h(),
        n_states: p.n(),
        mass: pi.mass().to_vec(),
        tau: dobrushin_tau(&p),
        delta: gap.delta,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OverlapTrace {
    n_states: usize,
    reversibilized: bool,
    phase_gap: f64,
    delta: f64,
    spectrum_pass: bool,
    target_overlap: Vec<f64>,
    self_overlap: Vec<f64>,
}

/// Walk overlap traces at one level: the constant target overlap and the
/// oscillating self overlap, plus the phase-gap comparison.
#[wasm_bindgen]
pub fn walk_overlap_trace(
    a: f64,
    sigma: f64,
    resolution: u32,
    steps: u32,
) -> Result<String, String> {
    if steps > MAX_STEPS {
        return Err(format!("steps must be at most {MAX_STEPS}, got {steps}"));
    }
    let p = gauss_chain(a, sigma, resolution, MAX_WALK_RESOLUTION)?;
    let part = p.partition().unwrap().clone();
    let pi = stationary_density(&p, STATIONARY_TOL).map_err(err)?;
    let rev = check_reversibility(&p, &pi).map_err(err)?;
    let (chain, reversibilized) = if rev.reversible {
        (p, false)
    } else {
        (reversibilize(&p).map_err(err)?, true)
    };
    let spectrum = walk_spectrum_check(&chain, &pi).map_err(err)?;
    let walk = build_walk(&chain).map_err(err)?;
    let psi0 = walk
        .encode_density(&DiscreteDensity::uniform(part))
        .map_err(err)?;
    let trace = walk_evolve(&walk, &psi0, steps as usize).map_err(err)?;
    let out = OverlapTrace {
        n_states: chain.n(),
        reversibilized,
        phase_gap: spectrum.phase_gap,
        delta: spectrum.delta,
        spectrum_pass: spectrum.pass,
        target_overlap: trace.target_overlap,
        self_overlap: trace.self_overlap,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Multilevel cost table for the ladder from h=1/2 down to h=1/finest in
/// the quantum cost model; returns the full pipeline report.
#[wasm_bindgen]
pub fn level_cost_table(a: f64, sigma: f64, finest: u32, epsilon: f64) -> Result<String, String> {
    if finest < 4 || finest > 64 || !finest.is_power_of_two() {
        return Err(format!(
            "finest must be a power of two in 4..=64, got {finest}"
        ));
    }
    let kernel =
        KernelSpec::gauss_ar1(a, sigma, BoundaryPolicy::RenormalizeRows, 1).map_err(err)?;
    let schedule = LevelSchedule::new(2, finest, 1).map_err(err)?;
    let report = run_pipeline(
        &kernel,
        &schedule,
        &QuadratureSpec::default_for(1),
        PipelineMode::QuantumCostModel,
        epsilon,
    )
    .map_err(err)?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}
