//! Lumping of densities and kernels onto a box partition, interpolation back
//! to piecewise-constant functions, and the error of that round trip.
//!
//! Kernel discretization has three construction paths with one contract:
//! P(i,j) = h^{-d} * integral of the adjusted kernel over D_i x D_j.
//! Coordinatewise families are integrated axis by axis and combined as a
//! tensor product; grid-defined kernels aggregate exactly across dyadic
//! levels; Monte Carlo handles the general case in higher dimension. A
//! per-pair tensor quadrature (`discretize_kernel_direct`) stays available as
//! a cross-check that never reuses the per-axis factorization.

use rayon::prelude::*;

use crate::density::{DiscreteDensity, PiecewiseConstantDensity};
use crate::error::{Error, Result};
use crate::kernels::{AxisKernel, BoundaryPolicy, KernelFamily, KernelSpec};
use crate::matrix::StochasticMatrix;
use crate::partition::Partition;
use crate::quadrature::{integrate_with_cuts, GaussLegendre, QuadRule, QuadratureSpec};
use crate::transfer::{coarsen_matrix, lift_matrix};

use rand::rngs::ChaCha8Rng;
use rand::{RngExt, SeedableRng};

/// Entries below this fraction of their row's maximum are dropped before the
/// final exact row renormalization.
pub const RELATIVE_ENTRY_THRESHOLD: f64 = 1e-14;

/// A raw in-domain row mass below this triggers a kernel-leakage error under
/// row renormalization.
pub const MIN_ROW_MASS: f64 = 0.5;

/// Accepted defect of the input density's total mass in `lump_density`.
pub const LUMP_MASS_TOL: f64 = 0.05;

const GL_ROW_TOL: f64 = 1e-6;
const MC_ROW_TOL: f64 = 0.5;

/// Bin masses of a continuous density: pi(j) = integral of p over bin j,
/// renormalized to total mass exactly 1. Returns the density together with
/// the renormalization delta |sum - 1| observed before renormalizing.
pub fn lump_density<F>(
    p: F,
    part: &Partition,
    quad: &QuadratureSpec,
) -> Result<(DiscreteDensity, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    quad.validate()?;
    let masses: Vec<f64> = match quad.rule {
        QuadRule::GaussLegendre { points } => {
            let rule = GaussLegendre::new(points as usize);
            (0..part.num_states())
                .into_par_iter()
                .map(|idx| {
                    let nodes = bin_nodes(part, idx, &rule, quad.subdivide);
                    tensor_sum(&nodes, &p)
                })
                .collect()
        }
        QuadRule::MonteCarlo { samples } => (0..part.num_states())
            .into_par_iter()
            .map(|idx| {
                let bounds = part.bin_bounds(&part.multi_index(idx));
                let mut rng = ChaCha8Rng::seed_from_u64(mix3(quad.seed, 0x11, idx as u64));
                let mut acc = 0.0;
                let mut x = vec![0.0; bounds.len()];
                for _ in 0..samples {
                    for (k, &(lo, hi)) in bounds.iter().enumerate() {
                        x[k] = rng.random_range(lo..hi);
                    }
                    acc += p(&x);
                }
                part.bin_volume() * acc / samples as f64
            })
            .collect(),
    };
    for (j, &m) in masses.iter().enumerate() {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::BadDensity(format!("bin {j} integrated to {m}")));
        }
    }
    let total: f64 = masses.iter().sum();
    let delta = (total - 1.0).abs();
    if delta > LUMP_MASS_TOL {
        return Err(Error::BadDensity(format!(
            "density integrates to {total}, expected 1"
        )));
    }
    let density =
        DiscreteDensity::new(part.clone(), masses.iter().map(|m| m / total).collect())?;
    Ok((density, delta))
}

/// Piecewise-constant interpolation of bin masses: value on bin j is
/// pi(j) * h^{-d}.
pub fn interpolate_density(pi: &DiscreteDensity) -> Result<PiecewiseConstantDensity> {
    let part = pi.partition().ok_or_else(|| {
        Error::LevelMismatch("interpolation needs a partition-backed density".into())
    })?;
    let scale = 1.0 / part.bin_volume();
    PiecewiseConstantDensity::new(
        part.clone(),
        pi.mass().iter().map(|m| m * scale).collect(),
    )
}

/// L1 and sup-norm distance between a continuous density and its lump-then-
/// interpolate projection. The L1 value is reported in total-variation
/// normalization, i.e. half the integral of |p - p_h|.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationError {
    pub l1: f64,
    pub linf: f64,
}

pub fn interpolation_error<F>(
    p: F,
    part: &Partition,
    quad: &QuadratureSpec,
) -> Result<InterpolationError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (pi, _) = lump_density(&p, part, quad)?;
    let values = interpolate_density(&pi)?;
    let d = part.dim();

    let per_bin: Vec<(f64, f64)> = (0..part.num_states())
        .into_par_iter()
        .map(|idx| {
            let bounds = part.bin_bounds(&part.multi_index(idx));
            let v = values.values()[idx];
            let raw_l1 = if d == 1 {
                signed_l1_1d(&p, bounds[0].0, bounds[0].1, v)
            } else {
                abs_residual_tensor(&p, &bounds, v)
            };
            let linf = sup_residual(&p, &bounds, v);
            (raw_l1, linf)
        })
        .collect();

    let raw: f64 = per_bin.iter().map(|e| e.0).sum();
    let linf = per_bin.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(InterpolationError { l1: 0.5 * raw, linf })
}

/// Ulam projection of a kernel: P(i,j) = h^{-d} * integral over D_i x D_j of
/// the boundary-adjusted kernel. Rows are thresholded relative to their
/// maximum and renormalized exactly; the worst pre-renormalization defect is
/// recorded on the returned matrix.
pub fn discretize_kernel(
    k: &KernelSpec,
    part: &Partition,
    quad: &QuadratureSpec,
) -> Result<StochasticMatrix> {
    quad.validate()?;
    check_kernel_dim(k, part)?;
    match (k.family(), &quad.rule) {
        (KernelFamily::GridDefined { matrix }, _) => grid_discretize(matrix, part),
        (_, QuadRule::MonteCarlo { samples }) => {
            mc_discretize(k, part, *samples, quad.seed)
        }
        (_, QuadRule::GaussLegendre { points }) => {
            let axis = k.axis().expect("continuous families factor per axis");
            let disc = axis_discretization(
                &axis,
                part.resolution(),
                *points as usize,
                1u32 << quad.subdivide,
            );
            assemble_product(&disc, part, k.boundary())
        }
    }
}

/// Per-pair tensor quadrature of the same double integral, organized without
/// the per-axis factorization used by `discretize_kernel`; slower, kept as an
/// independent cross-check. Monte Carlo requests use the shared sampling
/// path. Discontinuous (window) kernels are supported in one dimension only.
pub fn discretize_kernel_direct(
    k: &KernelSpec,
    part: &Partition,
    quad: &QuadratureSpec,
) -> Result<StochasticMatrix> {
    quad.validate()?;
    check_kernel_dim(k, part)?;
    match (k.family(), &quad.rule) {
        (KernelFamily::GridDefined { matrix }, _) => grid_discretize(matrix, part),
        (_, QuadRule::MonteCarlo { samples }) => {
            mc_discretize(k, part, *samples, quad.seed)
        }
        (_, QuadRule::GaussLegendre { points }) => {
            direct_gl(k, part, *points as usize, 1u32 << quad.subdivide)
        }
    }
}

/// The piecewise-constant kernel induced by a stochastic matrix on its own
/// partition: K(x,y) = P(bin(x), bin(y)) / h^d, so each row integrates to 1.
pub fn lift_kernel(p: &StochasticMatrix) -> Result<KernelSpec> {
    KernelSpec::grid_defined(p.clone())
}

/// Largest bin-averaged escape of raw kernel mass from the domain, i.e.
/// max over bins of 1 - mean row mass. Zero for grid-defined kernels.
pub fn max_row_leakage(k: &KernelSpec, part: &Partition) -> Result<f64> {
    check_kernel_dim(k, part)?;
    let Some(axis) = k.axis() else {
        return Ok(0.0);
    };
    let raw = axis_raw_mass(&axis, part.resolution(), 8, 1);
    let mut worst: f64 = 0.0;
    for idx in 0..part.num_states() {
        let multi = part.multi_index(idx);
        let mass: f64 = multi
            .iter()
            .map(|&j| raw[(j + part.resolution() as i32) as usize])
            .product();
        worst = worst.max(1.0 - mass);
    }
    Ok(worst)
}

fn check_kernel_dim(k: &KernelSpec, part: &Partition) -> Result<()> {
    if k.dim() != part.dim() {
        return Err(Error::LevelMismatch(format!(
            "kernel has dimension {}, partition has dimension {}",
            k.dim(),
            part.dim()
        )));
    }
    Ok(())
}

fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tensor quadrature nodes of one bin: per-axis (node, weight) lists.
fn bin_nodes(
    part: &Partition,
    idx: usize,
    rule: &GaussLegendre,
    subdivide: u32,
) -> Vec<Vec<(f64, f64)>> {
    let panels = 1usize << subdivide;
    part.bin_bounds(&part.multi_index(idx))
        .iter()
        .map(|&(lo, hi)| panel_nodes(lo, hi, rule, panels))
        .collect()
}

fn panel_nodes(lo: f64, hi: f64, rule: &GaussLegendre, panels: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(panels * rule.nodes.len());
    for p in 0..panels {
        let a = lo + (hi - lo) * p as f64 / panels as f64;
        let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
        out.extend(rule.mapped(a, b));
    }
    out
}

/// Sum of f over the tensor grid with product weights.
fn tensor_sum<F: Fn(&[f64]) -> f64>(nodes: &[Vec<(f64, f64)>], f: &F) -> f64 {
    let d = nodes.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let (xv, wv) = nodes[k][idx[k]];
            x[k] = xv;
            w *= wv;
        }
        acc += w * f(&x);
        let mut k = d;
        loop {
            if k == 0 {
                return acc;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < nodes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Integral of |p - v| over a 1D interval with sign changes located by
/// bisection, then smooth pieces integrated exactly.
fn signed_l1_1d<F: Fn(&[f64]) -> f64>(p: &F, lo: f64, hi: f64, v: f64) -> f64 {
    let g = |x: f64| p(&[x]) - v;
    let scan = 64usize;
    let mut roots = Vec::new();
    let mut prev_x = lo;
    let mut prev_g = g(lo);
    for s in 1..=scan {
        let x = lo + (hi - lo) * s as f64 / scan as f64;
        let gx = g(x);
        if prev_g == 0.0 {
            roots.push(prev_x);
        } else if prev_g.signum() != gx.signum() && gx != 0.0 {
            let (mut a, mut b) = (prev_x, x);
            let mut ga = prev_g;
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                let gm = g(m);
                if gm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if ga.signum() == gm.signum() {
                    a = m;
                    ga = gm;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_g = gx;
    }
    let rule = GaussLegendre::new(16);
    let mut edges = vec![lo];
    edges.extend(roots);
    edges.push(hi);
    let mut acc = 0.0;
    for pair in edges.windows(2) {
        for q in 0..4 {
            let a = pair[0] + (pair[1] - pair[0]) * q as f64 / 4.0;
            let b = pair[0] + (pair[1] - pair[0]) * (q + 1) as f64 / 4.0;
            acc += rule.integrate(a, b, |x| g(x).abs());
        }
    }
    acc
}

/// Tensor quadrature of |p - v| over a box; the kink surface limits accuracy
/// to the rule's resolution, which suffices for rate measurements in d >= 2.
fn abs_residual_tensor<F: Fn(&[f64]) -> f64>(p: &F, bounds: &[(f64, f64)], v: f64) -> f64 {
    let rule = GaussLegendre::new(8);
    let nodes: Vec<Vec<(f64, f64)>> = bounds
        .iter()
        .map(|&(lo, hi)| panel_nodes(lo, hi, &rule, 8))
        .collect();
    tensor_sum(&nodes, &|x: &[f64]| (p(x) - v).abs())
}

fn sup_residual<F: Fn(&[f64]) -> f64>(p: &F, bounds: &[(f64, f64)], v: f64) -> f64 {
    let per_axis = match bounds.len() {
        1 => 512usize,
        2 => 64,
        _ => 16,
    };
    let d = bounds.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut worst: f64 = 0.0;
    loop {
        for k in 0..d {
            let (lo, hi) = bounds[k];
            x[k] = lo + (hi - lo) * idx[k] as f64 / per_axis as f64;
        }
        worst = worst.max((p(&x) - v).abs());
        let mut k = d;
        loop {
            if k == 0 {
                return worst;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] <= per_axis {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Per-axis Ulam factors of a coordinatewise kernel: rows[i][j] is the
/// one-dimensional bin-pair integral scaled by 1/h, raw_mass[i] the
/// bin-averaged in-domain mass of the raw factor.
struct AxisDiscretization {
    rows: Vec<Vec<f64>>,
    raw_mass: Vec<f64>,
}

fn axis_bounds(n: u32, i1: usize) -> (f64, f64) {
    let h = 1.0 / n as f64;
    let j = i1 as i64 - n as i64;
    (j as f64 * h, (j + 1) as f64 * h)
}

fn axis_raw_mass(axis: &AxisKernel, n: u32, g: usize, panels: usize) -> Vec<f64> {
    let rule = GaussLegendre::new(g);
    let h = 1.0 / n as f64;
    let m1 = 2 * n as usize;
    let mass_cuts = axis.mass_kinks();
    (0..m1)
        .map(|i1| {
            let (lo, hi) = axis_bounds(n, i1);
            let mut acc = 0.0;
            for p in 0..panels {
                let a = lo + (hi - lo) * p as f64 / panels as f64;
                let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
                acc += integrate_with_cuts(&rule, a, b, &mass_cuts, |x| axis.mass_raw(x));
            }
            acc / h
        })
        .collect()
}

fn axis_discretization(
    axis: &AxisKernel,
    n: u32,
    g: usize,
    panels: u32,
) -> AxisDiscretization {
    let rule = GaussLegendre::new(g);
    let panels = panels as usize;
    let h = 1.0 / n as f64;
    let m1 = 2 * n as usize;
    let raw_mass = axis_raw_mass(axis, n, g, panels);

    let rows: Vec<Vec<f64>> = (0..m1)
        .into_par_iter()
        .map(|i1| {
            let (xlo, xhi) = axis_bounds(n, i1);
            let mut row = vec![0.0f64; m1];
            if axis.has_jumps() {
                for (j1, slot) in row.iter_mut().enumerate() {
                    let (ylo, yhi) = axis_bounds(n, j1);
                    if axis.pair_out_of_reach(xlo, xhi, ylo, yhi) {
                        continue;
                    }
                    let xcuts = axis.inner_integral_kinks(ylo, yhi);
                    let mut acc = 0.0;
                    for p in 0..panels {
                        let a = xlo + (xhi - xlo) * p as f64 / panels as f64;
                        let b = xlo + (xhi - xlo) * (p + 1) as f64 / panels as f64;
                        acc += integrate_with_cuts(&rule, a, b, &xcuts, |x| {
                            let denom = axis.denom(x).unwrap_or(f64::INFINITY);
                            let mut ycuts = Vec::new();
                            axis.cuts(x, &mut ycuts);
                            let mut inner = 0.0;
                            for q in 0..panels {
                                let c = ylo + (yhi - ylo) * q as f64 / panels as f64;
                                let e = ylo + (yhi - ylo) * (q + 1) as f64 / panels as f64;
                                inner += integrate_with_cuts(&rule, c, e, &ycuts, |y| {
                                    axis.adjusted(x, y)
                                });
                            }
                            inner / denom
                        });
                    }
                    *slot = acc / h;
                }
            } else {
                let xnodes = panel_nodes(xlo, xhi, &rule, panels);
                let denoms: Vec<f64> = xnodes
                    .iter()
                    .map(|&(x, _)| axis.denom(x).unwrap_or(f64::INFINITY))
                    .collect();
                for (j1, slot) in row.iter_mut().enumerate() {
                    let (ylo, yhi) = axis_bounds(n, j1);
                    if axis.pair_out_of_reach(xlo, xhi, ylo, yhi) {
                        continue;
                    }
                    let ynodes = panel_nodes(ylo, yhi, &rule, panels);
                    let mut acc = 0.0;
                    for (s, &(x, wx)) in xnodes.iter().enumerate() {
                        let mut inner = 0.0;
                        for &(y, wy) in &ynodes {
                            inner += wy * axis.adjusted(x, y);
                        }
                        acc += wx * inner / denoms[s];
                    }
                    *slot = acc / h;
                }
            }
            row
        })
        .collect();

    AxisDiscretization { rows, raw_mass }
}

/// Combines per-axis factors into the d-dimensional matrix: each entry is
/// the product of its axis entries, thresholded and renormalized per row.
fn assemble_product(
    disc: &AxisDiscretization,
    part: &Partition,
    policy: BoundaryPolicy,
) -> Result<StochasticMatrix> {
    let n = part.resolution() as i32;
    let d = part.dim() as usize;
    let m1 = 2 * part.resolution() as usize;
    let states = part.num_states();

    let rows: Vec<Result<Vec<(u32, f64)>>> = (0..states)
        .into_par_iter()
        .map(|r| {
            let multi = part.multi_index(r);
            let axis_rows: Vec<&Vec<f64>> =
                multi.iter().map(|&j| &disc.rows[(j + n) as usize]).collect();
            if policy == BoundaryPolicy::RenormalizeRows {
                let raw: f64 =
                    multi.iter().map(|&j| disc.raw_mass[(j + n) as usize]).product();
                if raw < MIN_ROW_MASS {
                    return Err(Error::KernelLeakage { row: r, mass: raw });
                }
            }
            let row_max: f64 = axis_rows
                .iter()
                .map(|ar| ar.iter().cloned().fold(0.0, f64::max))
                .product();
            let thresh = RELATIVE_ENTRY_THRESHOLD * row_max;

            let mut out = Vec::new();
            let mut idx = vec![0usize; d];
            let mut prefix = vec![1.0f64; d];
            for t in 0..d - 1 {
                prefix[t + 1] = prefix[t] * axis_rows[t][0];
            }
            let mut col = 0usize;
            'outer: loop {
                let mut k = idx.len();
                let v = prefix[d - 1] * axis_rows[d - 1][idx[d - 1]];
                if v >= thresh && v > 0.0 {
                    out.push((col as u32, v));
                }
                loop {
                    if k == 0 {
                        break 'outer;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < m1 {
                        for t in k..d - 1 {
                            prefix[t + 1] = prefix[t] * axis_rows[t][idx[t]];
                        }
                        break;
                    }
                    idx[k] = 0;
                }
                col = 0;
                for &i in &idx {
                    col = col * m1 + i;
                }
            }
            Ok(out)
        })
        .collect();

    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    StochasticMatrix::from_sparse_with_tol(Some(part.clone()), states, rows, GL_ROW_TOL)
}

/// Exact aggregation of a grid-defined kernel across dyadic levels.
fn grid_discretize(matrix: &StochasticMatrix, part: &Partition) -> Result<StochasticMatrix> {
    let src = matrix
        .partition()
        .ok_or_else(|| Error::LevelMismatch("grid-defined kernel lost its partition".into()))?;
    if src.dim() != part.dim() {
        return Err(Error::LevelMismatch(format!(
            "kernel grid has dimension {}, partition has dimension {}",
            src.dim(),
            part.dim()
        )));
    }
    let (from, to) = (src.resolution(), part.resolution());
    if from == to {
        return matrix.clone().with_partition(part.clone());
    }
    let (big, small) = (from.max(to), from.min(to));
    if big % small != 0 || !(big / small).is_power_of_two() {
        return Err(Error::InvalidResolution(format!(
            "grid kernel at resolution {from} cannot be projected onto resolution {to}: \
             levels must be dyadically nested"
        )));
    }
    let steps = (big / small).trailing_zeros();
    let mut m = matrix.clone();
    for _ in 0..steps {
        m = if from > to { coarsen_matrix(&m)? } else { lift_matrix(&m)? };
    }
    Ok(m)
}

enum AxisDenom {
    One,
    Closed(AxisKernel),
    Table(Vec<f64>),
}

impl AxisDenom {
    fn build(axis: &AxisKernel) -> Self {
        if !axis.needs_denominator() {
            return AxisDenom::One;
        }
        if axis.has_jumps() {
            return AxisDenom::Closed(*axis);
        }
        let m = 4096usize;
        let vals = (0..=m)
            .map(|i| axis.mass_raw(-1.0 + 2.0 * i as f64 / m as f64))
            .collect();
        AxisDenom::Table(vals)
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            AxisDenom::One => 1.0,
            AxisDenom::Closed(axis) => axis.mass_raw(x),
            AxisDenom::Table(vals) => {
                let m = (vals.len() - 1) as f64;
                let t = (x + 1.0) * 0.5 * m;
                let i = (t.floor() as usize).min(vals.len() - 2);
                let frac = t - i as f64;
                vals[i] * (1.0 - frac) + vals[i + 1] * frac
            }
        }
    }
}

/// Seeded stratified Monte Carlo over bin pairs. Each pair owns an
/// independent generator keyed by (seed, row, column), so results do not
/// depend on scheduling.
fn mc_discretize(
    k: &KernelSpec,
    part: &Partition,
    samples: u32,
    seed: u64,
) -> Result<StochasticMatrix> {
    let axis = k.axis().ok_or_else(|| {
        Error::InvalidParameter("monte-carlo discretization needs a continuous family".into())
    })?;
    let d = part.dim() as usize;
    let states = part.num_states();
    let denom = AxisDenom::build(&axis);
    let raw_mass = axis_raw_mass(&axis, part.resolution(), 8, 1);
    let n = part.resolution() as i32;
    let splits = if 1usize << (2 * d) <= samples as usize { 2usize } else { 1 };
    let strata = splits.pow(2 * d as u32);

    let rows: Vec<Result<Vec<(u32, f64)>>> = (0..states)
        .into_par_iter()
        .map(|r| {
            let multi = part.multi_index(r);
            if k.boundary() == BoundaryPolicy::RenormalizeRows {
                let raw: f64 =
                    multi.iter().map(|&j| raw_mass[(j + n) as usize]).product();
                if raw < MIN_ROW_MASS {
                    return Err(Error::KernelLeakage { row: r, mass: raw });
                }
            }
            let xb = part.bin_bounds(&multi);
            let mut vals = vec![0.0f64; states];
            for (c, slot) in vals.iter_mut().enumerate() {
                let cmulti = part.multi_index(c);
                let yb = part.bin_bounds(&cmulti);
                if k.boundary() == BoundaryPolicy::RenormalizeRows {
                    let reachable = (0..d).all(|a| {
                        !axis.pair_out_of_reach(xb[a].0, xb[a].1, yb[a].0, yb[a].1)
                    });
                    if !reachable {
                        continue;
                    }
                }
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix3(seed, r as u64, c as u64));
                let base = samples as usize / strata;
                let extra = samples as usize % strata;
                let mut mean_of_means = 0.0;
                let mut x = vec![0.0; d];
                let mut y = vec![0.0; d];
                for s in 0..strata {
                    let count = base + usize::from(s < extra);
                    if count == 0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for _ in 0..count {
                        let mut rem = s;
                        for a in 0..d {
                            let part_x = rem % splits;
                            rem /= splits;
                            let (lo, hi) = xb[a];
                            let w = (hi - lo) / splits as f64;
                            let plo = lo + w * part_x as f64;
                            x[a] = rng.random_range(plo..plo + w);
                        }
                        for a in 0..d {
                            let part_y = rem % splits;
                            rem /= splits;
                            let (lo, hi) = yb[a];
                            let w = (hi - lo) / splits as f64;
                            let plo = lo + w * part_y as f64;
                            y[a] = rng.random_range(plo..plo + w);
                        }
                        let mut v = 1.0;
                        for a in 0..d {
                            v *= axis.adjusted(x[a], y[a]) / denom.eval(x[a]);
                        }
                        acc += v;
                    }
                    mean_of_means += acc / count as f64;
                }
                *slot = part.bin_volume() * mean_of_means / strata as f64;
            }
            let row_max = vals.iter().cloned().fold(0.0, f64::max);
            let thresh = RELATIVE_ENTRY_THRESHOLD * row_max;
            Ok(vals
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0 && v >= thresh)
                .map(|(c, &v)| (c as u32, v))
                .collect())
        })
        .collect();

    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    StochasticMatrix::from_sparse_with_tol(Some(part.clone()), states, rows, MC_ROW_TOL)
}

/// Per-pair tensor Gauss-Legendre, evaluating the adjusted kernel through
/// per-axis factors with cached denominators.
fn direct_gl(
    k: &KernelSpec,
    part: &Partition,
    g: usize,
    panels: u32,
) -> Result<StochasticMatrix> {
    let axis = k.axis().expect("grid kernels are dispatched earlier");
    if axis.has_jumps() && part.dim() > 1 {
        return Err(Error::InvalidParameter(
            "direct tensor quadrature of a discontinuous kernel is limited to one \
             dimension; use monte-carlo or discretize_kernel"
                .into(),
        ));
    }
    let d = part.dim() as usize;
    let states = part.num_states();
    let rule = GaussLegendre::new(g);
    let panels = panels as usize;
    let n = part.resolution() as i32;
    let m1 = 2 * part.resolution() as usize;
    let raw_mass = axis_raw_mass(&axis, part.resolution(), 8, 1);
    let h = 1.0 / part.resolution() as f64;

    if d == 1 {
        let rows: Vec<Result<Vec<(u32, f64)>>> = (0..states)
            .into_par_iter()
            .map(|r| {
                if k.boundary() == BoundaryPolicy::RenormalizeRows
                    && raw_mass[r] < MIN_ROW_MASS
                {
                    return Err(Error::KernelLeakage { row: r, mass: raw_mass[r] });
                }
                let (xlo, xhi) = axis_bounds(part.resolution(), r);
                let mut vals = vec![0.0f64; states];
                for (c, slot) in vals.iter_mut().enumerate() {
                    let (ylo, yhi) = axis_bounds(part.resolution(), c);
                    if axis.pair_out_of_reach(xlo, xhi, ylo, yhi) {
                        continue;
                    }
                    let xcuts = axis.inner_integral_kinks(ylo, yhi);
                    let mut acc = 0.0;
                    for p in 0..panels {
                        let a = xlo + (xhi - xlo) * p as f64 / panels as f64;
                        let b = xlo + (xhi - xlo) * (p + 1) as f64 / panels as f64;
                        acc += integrate_with_cuts(&rule, a, b, &xcuts, |x| {
                            let denom = axis.denom(x).unwrap_or(f64::INFINITY);
                            let mut ycuts = Vec::new();
                            axis.cuts(x, &mut ycuts);
                            integrate_with_cuts(&rule, ylo, yhi, &ycuts, |y| {
                                axis.adjusted(x, y)
                            }) / denom
                        });
                    }
                    *slot = acc / h;
                }
                Ok(collect_thresholded(&vals))
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        return StochasticMatrix::from_sparse_with_tol(
            Some(part.clone()),
            states,
            rows,
            GL_ROW_TOL,
        );
    }

    let axis_nodes: Vec<Vec<(f64, f64)>> = (0..m1)
        .map(|i1| {
            let (lo, hi) = axis_bounds(part.resolution(), i1);
            panel_nodes(lo, hi, &rule, panels)
        })
        .collect();
    let axis_denoms: Vec<Vec<f64>> = axis_nodes
        .iter()
        .map(|nodes| {
            nodes
                .iter()
                .map(|&(x, _)| axis.denom(x).unwrap_or(f64::INFINITY))
                .collect()
        })
        .collect();

    let rows: Vec<Result<Vec<(u32, f64)>>> = (0..states)
        .into_par_iter()
        .map(|r| {
            let multi = part.multi_index(r);
            if k.boundary() == BoundaryPolicy::RenormalizeRows {
                let raw: f64 =
                    multi.iter().map(|&j| raw_mass[(j + n) as usize]).product();
                if raw < MIN_ROW_MASS {
                    return Err(Error::KernelLeakage { row: r, mass: raw });
                }
            }
            let xbins: Vec<usize> = multi.iter().map(|&j| (j + n) as usize).collect();
            let mut vals = vec![0.0f64; states];
            for (c, slot) in vals.iter_mut().enumerate() {
                let cmulti = part.multi_index(c);
                let ybins: Vec<usize> = cmulti.iter().map(|&j| (j + n) as usize).collect();
                let mut acc = 0.0;
                let nper = axis_nodes[0].len();
                let mut xi = vec![0usize; d];
                'xloop: loop {
                    let mut wx = 1.0;
                    let mut denom = 1.0;
                    for a in 0..d {
                        let (_, w) = axis_nodes[xbins[a]][xi[a]];
                        wx *= w;
                        denom *= axis_denoms[xbins[a]][xi[a]];
                    }
                    let mut yi = vec![0usize; d];
                    let mut inner = 0.0;
                    'yloop: loop {
                        let mut wy = 1.0;
                        let mut kv = 1.0;
                        for a in 0..d {
                            let (y, w) = axis_nodes[ybins[a]][yi[a]];
                            let (x, _) = axis_nodes[xbins[a]][xi[a]];
                            wy *= w;
                            kv *= axis.adjusted(x, y);
                        }
                        inner += wy * kv;
                        let mut a = d;
                        loop {
                            if a == 0 {
                                break 'yloop;
                            }
                            a -= 1;
                            yi[a] += 1;
                            if yi[a] < nper {
                                break;
                            }
                            yi[a] = 0;
                        }
                    }
                    acc += wx * inner / denom;
                    let mut a = d;
                    loop {
                        if a == 0 {
                            break 'xloop;
                        }
                        a -= 1;
                        xi[a] += 1;
                        if xi[a] < nper {
                            break;
                        }
                        xi[a] = 0;
                    }
                }
                *slot = acc / part.bin_volume();
            }
            Ok(collect_thresholded(&vals))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    StochasticMatrix::from_sparse_with_tol(Some(part.clone()), states, rows, GL_ROW_TOL)
}

fn collect_thresholded(vals: &[f64]) -> Vec<(u32, f64)> {
    let row_max = vals.iter().cloned().fold(0.0, f64::max);
    let thresh = RELATIVE_ENTRY_THRESHOLD * row_max;
    vals.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v >= thresh)
        .map(|(c, &v)| (c as u32, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gl(points: u32, subdivide: u32) -> QuadratureSpec {
        QuadratureSpec { rule: QuadRule::GaussLegendre { points }, subdivide, seed: 1 }
    }

    fn mc(samples: u32, seed: u64) -> QuadratureSpec {
        QuadratureSpec { rule: QuadRule::MonteCarlo { samples }, subdivide: 0, seed }
    }

    fn triangle(x: &[f64]) -> f64 {
        1.0 - x[0].abs()
    }

    fn max_abs_diff(a: &StochasticMatrix, b: &StochasticMatrix) -> f64 {
        assert_eq!(a.n(), b.n());
        let mut worst: f64 = 0.0;
        for i in 0..a.n() {
            for j in 0..a.n() {
                worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
            }
        }
        worst
    }

    fn row_sum_defect(m: &StochasticMatrix) -> f64 {
        (0..m.n())
            .map(|i| (m.row(i).iter().map(|&(_, v)| v).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn lumping_examples() {
        let part = Partition::new(2, 1).unwrap();
        let (u, delta) = lump_density(|_: &[f64]| 0.5, &part, &gl(8, 0)).unwrap();
        for &m in u.mass() {
            assert!((m - 0.25).abs() < 1e-15);
        }
        assert!(delta < 1e-14);

        let coarse = Partition::new(1, 1).unwrap();
        let (t1, _) = lump_density(triangle, &coarse, &gl(8, 0)).unwrap();
        assert!((t1.mass()[0] - 0.5).abs() < 1e-15);
        assert!((t1.mass()[1] - 0.5).abs() < 1e-15);

        let (t2, delta) = lump_density(triangle, &part, &gl(8, 0)).unwrap();
        let want = [0.125, 0.375, 0.375, 0.125];
        for (m, w) in t2.mass().iter().zip(want) {
            assert!((m - w).abs() < 1e-15);
        }
        assert!(delta < 1e-14);
    }

    #[test]
    fn lumping_rejects_bad_densities() {
        let part = Partition::new(2, 1).unwrap();
        assert!(matches!(
            lump_density(|_: &[f64]| -1.0, &part, &gl(8, 0)),
            Err(Error::BadDensity(_))
        ));
        assert!(matches!(
            lump_density(|_: &[f64]| 0.3, &part, &gl(8, 0)),
            Err(Error::BadDensity(_))
        ));
    }

    #[test]
    fn monte_carlo_lumping_is_deterministic_and_close() {
        let part = Partition::new(2, 1).unwrap();
        let (a, _) = lump_density(triangle, &part, &mc(8192, 11)).unwrap();
        let (b, _) = lump_density(triangle, &part, &mc(8192, 11)).unwrap();
        assert_eq!(a.mass(), b.mass());
        let want = [0.125, 0.375, 0.375, 0.125];
        for (m, w) in a.mass().iter().zip(want) {
            assert!((m - w).abs() < 0.02);
        }
        let (c, _) = lump_density(triangle, &part, &mc(8192, 12)).unwrap();
        assert_ne!(a.mass(), c.mass());
    }

    #[test]
    fn interpolation_inverts_lumping_on_bin_averages() {
        let part = Partition::new(2, 1).unwrap();
        let (pi, _) = lump_density(triangle, &part, &gl(8, 0)).unwrap();
        let values = interpolate_density(&pi).unwrap();
        let want = [0.25, 0.75, 0.75, 0.25];
        for (v, w) in values.values().iter().zip(want) {
            assert!((v - w).abs() < 1e-14);
        }
        assert_eq!(values.eval(&[-0.9]).unwrap(), values.values()[0]);

        let (back, delta) =
            lump_density(|x: &[f64]| values.eval(x).unwrap(), &part, &gl(8, 0)).unwrap();
        assert!(delta < 1e-13);
        for (a, b) in back.mass().iter().zip(pi.mass()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_error_of_triangle_density() {
        let part = Partition::new(2, 1).unwrap();
        let err = interpolation_error(triangle, &part, &gl(8, 0)).unwrap();
        assert!((err.l1 - 0.125).abs() < 1e-12, "l1={}", err.l1);
        assert!((err.linf - 0.25).abs() < 1e-12, "linf={}", err.linf);

        let mut prev = err.l1;
        for n in [4u32, 8, 16] {
            let e = interpolation_error(triangle, &Partition::new(n, 1).unwrap(), &gl(8, 0))
                .unwrap();
            let ratio = prev / e.l1;
            assert!((ratio - 2.0).abs() < 1e-9, "n={n} ratio={ratio}");
            prev = e.l1;
        }
    }

    #[test]
    fn interpolation_error_halves_in_two_dimensions() {
        let p = |x: &[f64]| (1.0 - x[0].abs()) * (1.0 - x[1].abs());
        let e1 = interpolation_error(p, &Partition::new(2, 2).unwrap(), &gl(8, 0)).unwrap();
        let e2 = interpolation_error(p, &Partition::new(4, 2).unwrap(), &gl(8, 0)).unwrap();
        let ratio = e1.l1 / e2.l1;
        assert!((1.8..2.2).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn window_kernel_matrix_closed_forms() {
        let part = Partition::new(1, 1).unwrap();
        let quad = gl(8, 0);

        let k = KernelSpec::uniform_window(1.0, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let p = discretize_kernel(&k, &part, &quad).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((p.get(0, 0) - ln2).abs() < 1e-11, "got {}", p.get(0, 0));
        assert!((p.get(0, 1) - (1.0 - ln2)).abs() < 1e-11);
        assert!((p.get(1, 1) - ln2).abs() < 1e-11);

        let k = KernelSpec::uniform_window(1.0, BoundaryPolicy::Reflect, 1).unwrap();
        let p = discretize_kernel(&k, &part, &quad).unwrap();
        assert!((p.get(0, 0) - 0.75).abs() < 1e-13, "got {}", p.get(0, 0));
        assert!((p.get(0, 1) - 0.25).abs() < 1e-13);
        assert!((p.get(1, 0) - 0.25).abs() < 1e-13);
        assert!((p.get(1, 1) - 0.75).abs() < 1e-13);
    }

    #[test]
    fn centered_gauss_rows_are_identical() {
        for policy in [BoundaryPolicy::RenormalizeRows, BoundaryPolicy::Reflect] {
            let k = KernelSpec::gauss_ar1(0.0, 0.3, policy, 1).unwrap();
            let part = Partition::new(2, 1).unwrap();
            let p = discretize_kernel(&k, &part, &gl(8, 0)).unwrap();
            for i in 1..p.n() {
                for j in 0..p.n() {
                    assert!((p.get(i, j) - p.get(0, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coarsening_matches_direct_discretization_on_nested_panels() {
        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let fine = Partition::new(8, 1).unwrap();
        let coarse = Partition::new(4, 1).unwrap();
        let ph = discretize_kernel(&k, &fine, &gl(8, 0)).unwrap();
        let direct = discretize_kernel(&k, &coarse, &gl(8, 1)).unwrap();
        let coarsened = coarsen_matrix(&ph).unwrap();
        let diff = max_abs_diff(&coarsened, &direct);
        assert!(diff < 1e-11, "diff={diff:e}");
    }

    #[test]
    fn product_assembly_matches_pairwise_quadrature() {
        let quad = gl(8, 0);
        let part2 = Partition::new(2, 2).unwrap();
        for policy in [BoundaryPolicy::RenormalizeRows, BoundaryPolicy::Reflect] {
            let k = KernelSpec::gauss_ar1(0.5, 0.3, policy, 2).unwrap();
            let fast = discretize_kernel(&k, &part2, &quad).unwrap();
            let slow = discretize_kernel_direct(&k, &part2, &quad).unwrap();
            let diff = max_abs_diff(&fast, &slow);
            assert!(diff < 1e-9, "{policy:?} diff={diff:e}");
        }

        let part1 = Partition::new(4, 1).unwrap();
        for policy in [BoundaryPolicy::RenormalizeRows, BoundaryPolicy::Reflect] {
            let k = KernelSpec::uniform_window(0.4, policy, 1).unwrap();
            let fast = discretize_kernel(&k, &part1, &quad).unwrap();
            let slow = discretize_kernel_direct(&k, &part1, &quad).unwrap();
            let diff = max_abs_diff(&fast, &slow);
            assert!(diff < 1e-9, "{policy:?} diff={diff:e}");
        }
    }

    #[test]
    fn monte_carlo_discretization_is_deterministic_and_consistent() {
        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let part = Partition::new(2, 1).unwrap();
        let a = discretize_kernel(&k, &part, &mc(16384, 5)).unwrap();
        let b = discretize_kernel(&k, &part, &mc(16384, 5)).unwrap();
        assert_eq!(max_abs_diff(&a, &b), 0.0);

        let exact = discretize_kernel(&k, &part, &gl(16, 1)).unwrap();
        let diff = max_abs_diff(&a, &exact);
        assert!(diff < 0.03, "diff={diff}");
        assert!(row_sum_defect(&a) < 1e-12);
    }

    #[test]
    fn monte_carlo_handles_three_dimensions() {
        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 3).unwrap();
        let part = Partition::new(1, 3).unwrap();
        let p = discretize_kernel(&k, &part, &QuadratureSpec::default_for(3)).unwrap();
        assert_eq!(p.n(), 8);
        assert!(row_sum_defect(&p) < 1e-12);
    }

    #[test]
    fn grid_kernels_aggregate_across_dyadic_levels() {
        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let part = Partition::new(4, 1).unwrap();
        let quad = gl(8, 0);
        let p = discretize_kernel(&k, &part, &quad).unwrap();

        let lifted = lift_kernel(&p).unwrap();
        let same = discretize_kernel(&lifted, &part, &quad).unwrap();
        assert_eq!(max_abs_diff(&same, &p), 0.0);

        let up = discretize_kernel(&lifted, &Partition::new(8, 1).unwrap(), &quad).unwrap();
        assert_eq!(max_abs_diff(&up, &lift_matrix(&p).unwrap()), 0.0);

        let down = discretize_kernel(&lifted, &Partition::new(1, 1).unwrap(), &quad).unwrap();
        let twice = coarsen_matrix(&coarsen_matrix(&p).unwrap()).unwrap();
        assert_eq!(max_abs_diff(&down, &twice), 0.0);

        let bad = discretize_kernel(&lifted, &Partition::new(3, 1).unwrap(), &quad);
        assert!(matches!(bad, Err(Error::InvalidResolution(_))));
    }

    #[test]
    fn leaking_kernel_is_rejected_under_renormalization_only() {
        let part = Partition::new(2, 1).unwrap();
        let quad = gl(8, 0);
        let k = KernelSpec::uniform_window(4.0, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let err = discretize_kernel(&k, &part, &quad).unwrap_err();
        assert!(matches!(err, Error::KernelLeakage { .. }), "got {err}");

        let k = KernelSpec::uniform_window(4.0, BoundaryPolicy::Reflect, 1).unwrap();
        let p = discretize_kernel(&k, &part, &quad).unwrap();
        assert!(row_sum_defect(&p) < 1e-12);
    }

    #[test]
    fn leakage_report_matches_window_geometry() {
        let k = KernelSpec::uniform_window(1.0, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let part = Partition::new(1, 1).unwrap();
        let leak = max_row_leakage(&k, &part).unwrap();
        assert!((leak - 0.25).abs() < 1e-12, "leak={leak}");

        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let leak = max_row_leakage(&k, &Partition::new(8, 1).unwrap()).unwrap();
        assert!(leak > 0.0 && leak < 0.5, "leak={leak}");

        let grid = lift_kernel(&discretize_kernel(&k, &part, &gl(8, 0)).unwrap()).unwrap();
        assert_eq!(max_row_leakage(&grid, &part).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_row_sums_are_consistent_before_renormalization() {
        let k = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::Reflect, 1).unwrap();
        let p = discretize_kernel(&k, &Partition::new(8, 1).unwrap(), &gl(8, 0)).unwrap();
        assert!(p.renorm_max_delta() < 1e-8, "delta={:e}", p.renorm_max_delta());
        assert!(row_sum_defect(&p) < 1e-12);
    }

    #[test]
    fn under_resolved_quadrature_is_reported() {
        let k = KernelSpec::gauss_ar1(0.0, 0.02, BoundaryPolicy::Reflect, 1).unwrap();
        let part = Partition::new(1, 1).unwrap();
        let err = discretize_kernel(&k, &part, &gl(8, 0));
        assert!(matches!(err, Err(Error::NotStochastic(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn discretized_kernels_are_row_stochastic(
            a in -0.9f64..0.9,
            sigma in 0.2f64..0.8,
            n in 1u32..=2,
            reflect in any::<bool>(),
        ) {
            let policy = if reflect {
                BoundaryPolicy::Reflect
            } else {
                BoundaryPolicy::RenormalizeRows
            };
            let k = KernelSpec::gauss_ar1(a, sigma, policy, 1).unwrap();
            let part = Partition::new(n, 1).unwrap();
            let p = discretize_kernel(&k, &part, &gl(8, 1)).unwrap();
            prop_assert!(row_sum_defect(&p) < 1e-12);
            prop_assert!(p.renorm_max_delta() < 1e-6);
            for i in 0..p.n() {
                for &(_, v) in p.row(i) {
                    prop_assert!(v > 0.0);
                }
            }
        }
    }
}
