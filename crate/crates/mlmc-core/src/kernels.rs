//! Transition kernel families on [-1,1]^d.
//!
//! The continuous families act coordinatewise: the d-dimensional kernel is a
//! product of one-dimensional factors, which keeps closed-form oracles
//! available in d > 1 and lets the discretizer work axis by axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::quadrature::reference_integral;

/// How mass that the raw kernel sends outside the box is handled.
/// Both policies preserve row-stochasticity of the adjusted kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Divide each kernel row by its in-domain mass.
    RenormalizeRows,
    /// Fold escaping mass back by reflection at the box faces.
    Reflect,
}

/// Kernel families.
#[derive(Debug, Clone)]
pub enum KernelFamily {
    /// Coordinatewise Gaussian step y ~ N(a*x, sigma^2), |a| < 1, sigma > 0.
    GaussAr1 { a: f64, sigma: f64 },
    /// Uniform density 1/(2w)^d on the window prod_k [x_k - w, x_k + w].
    UniformWindow { w: f64 },
    /// Piecewise-constant kernel defined by a stochastic matrix on its own
    /// partition: K(x, y) = P(bin(x), bin(y)) / h^d.
    GridDefined { matrix: StochasticMatrix },
}

/// A kernel family with boundary policy, dimension, and a Lipschitz bound
/// for densities in the kernel's range (infinite when no smoothness holds).
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    boundary: BoundaryPolicy,
    dim: u32,
    lambda: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, boundary: BoundaryPolicy, dim: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be positive".into()));
        }
        match &family {
            KernelFamily::GaussAr1 { a, sigma } => {
                if !a.is_finite() || a.abs() >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gauss-ar1 coefficient a must satisfy |a| < 1, got {a}"
                    )));
                }
                if !sigma.is_finite() || *sigma <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gauss-ar1 sigma must be positive, got {sigma}"
                    )));
                }
            }
            KernelFamily::UniformWindow { w } => {
                if !w.is_finite() || *w <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "uniform-window half-width must be positive, got {w}"
                    )));
                }
            }
            KernelFamily::GridDefined { matrix } => {
                let p = matrix.partition().ok_or_else(|| {
                    Error::InvalidParameter(
                        "grid-defined kernel needs a matrix with a partition".into(),
                    )
                })?;
                if p.dim() != dim {
                    return Err(Error::InvalidParameter(format!(
                        "grid-defined kernel has dimension {}, requested {dim}",
                        p.dim()
                    )));
                }
            }
        }
        let lambda = auto_lambda(&family, boundary, dim);
        Ok(Self { family, boundary, dim, lambda })
    }

    /// As `new`, with an explicit Lipschitz bound instead of the automatic one.
    pub fn with_lambda(
        family: KernelFamily,
        boundary: BoundaryPolicy,
        dim: u32,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let mut spec = Self::new(family, boundary, dim)?;
        spec.lambda = lambda;
        Ok(spec)
    }

    pub fn gauss_ar1(a: f64, sigma: f64, boundary: BoundaryPolicy, dim: u32) -> Result<Self> {
        Self::new(KernelFamily::GaussAr1 { a, sigma }, boundary, dim)
    }

    pub fn uniform_window(w: f64, boundary: BoundaryPolicy, dim: u32) -> Result<Self> {
        Self::new(KernelFamily::UniformWindow { w }, boundary, dim)
    }

    pub fn grid_defined(matrix: StochasticMatrix) -> Result<Self> {
        let dim = matrix
            .partition()
            .ok_or_else(|| {
                Error::InvalidParameter("grid-defined kernel needs a matrix with a partition".into())
            })?
            .dim();
        Self::new(KernelFamily::GridDefined { matrix }, BoundaryPolicy::RenormalizeRows, dim)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn boundary(&self) -> BoundaryPolicy {
        self.boundary
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    /// Lipschitz bound for densities in the kernel's range.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Raw kernel value, before any boundary adjustment.
    pub fn eval_raw(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        match &self.family {
            KernelFamily::GridDefined { matrix } => grid_value(matrix, x, y),
            _ => {
                let axis = self.axis().expect("continuous family");
                Ok(x.iter().zip(y).map(|(&xk, &yk)| axis.raw(xk, yk)).product())
            }
        }
    }

    /// Boundary-adjusted, renormalized kernel value: each row integrates to 1
    /// over the box.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        match &self.family {
            KernelFamily::GridDefined { matrix } => grid_value(matrix, x, y),
            _ => {
                let axis = self.axis().expect("continuous family");
                let mut v = 1.0;
                for (&xk, &yk) in x.iter().zip(y) {
                    v *= axis.adjusted(xk, yk) / axis.denom(xk)?;
                }
                Ok(v)
            }
        }
    }

    /// In-domain mass of the raw kernel row at x, by quadrature on the
    /// reference rule (product of per-axis masses).
    pub fn row_mass_in_domain(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        match &self.family {
            KernelFamily::GridDefined { .. } => Ok(1.0),
            _ => {
                let axis = self.axis().expect("continuous family");
                Ok(x.iter().map(|&xk| axis.mass_raw(xk)).product())
            }
        }
    }

    /// Per-axis view of the coordinatewise families.
    pub(crate) fn axis(&self) -> Option<AxisKernel> {
        match &self.family {
            KernelFamily::GaussAr1 { a, sigma } => Some(AxisKernel {
                kind: AxisKind::Gauss { a: *a, sigma: *sigma },
                boundary: self.boundary,
            }),
            KernelFamily::UniformWindow { w } => Some(AxisKernel {
                kind: AxisKind::Uniform { w: *w },
                boundary: self.boundary,
            }),
            KernelFamily::GridDefined { .. } => None,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim as usize {
            return Err(Error::LevelMismatch(format!(
                "expected {} coordinates, got {}",
                self.dim,
                x.len()
            )));
        }
        for (k, &xk) in x.iter().enumerate() {
            if !(-1.0..=1.0).contains(&xk) {
                return Err(Error::OutOfDomain { coord: k, value: xk });
            }
        }
        Ok(())
    }
}

fn grid_value(matrix: &StochasticMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let part = matrix.partition().expect("grid-defined kernel has a partition");
    let clamp = |p: &[f64]| -> Vec<f64> {
        p.iter().map(|&v| v.min(1.0 - 1e-15)).collect()
    };
    let i = part.linear_index(&part.bin_of(&clamp(x))?);
    let j = part.linear_index(&part.bin_of(&clamp(y))?);
    Ok(matrix.get(i, j) / part.bin_volume())
}

#[derive(Debug, Clone, Copy)]
enum AxisKind {
    Gauss { a: f64, sigma: f64 },
    Uniform { w: f64 },
}

/// One coordinate of a product kernel, with boundary handling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisKernel {
    kind: AxisKind,
    boundary: BoundaryPolicy,
}

impl AxisKernel {
    /// Raw one-dimensional factor.
    pub fn raw(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            AxisKind::Gauss { a, sigma } => {
                let z = (y - a * x) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            AxisKind::Uniform { w } => {
                if (y - x).abs() <= w {
                    1.0 / (2.0 * w)
                } else {
                    0.0
                }
            }
        }
    }

    /// Center of the raw factor's support or mass in y.
    pub fn predict(&self, x: f64) -> f64 {
        match self.kind {
            AxisKind::Gauss { a, .. } => a * x,
            AxisKind::Uniform { .. } => x,
        }
    }

    /// Radius around `predict(x)` beyond which the raw factor is negligible
    /// (exactly zero for the window family).
    pub fn reach(&self) -> f64 {
        match self.kind {
            AxisKind::Gauss { sigma, .. } => 16.0 * sigma,
            AxisKind::Uniform { w } => w,
        }
    }

    /// Boundary-adjusted factor: reflection folds images back into the box.
    pub fn adjusted(&self, x: f64, y: f64) -> f64 {
        match self.boundary {
            BoundaryPolicy::RenormalizeRows => self.raw(x, y),
            BoundaryPolicy::Reflect => {
                let center = self.predict(x);
                let reach = self.reach();
                let mut acc = 0.0;
                for base in [y, 2.0 - y] {
                    let k_lo = ((center - reach - base) / 4.0).floor() as i64;
                    let k_hi = ((center + reach - base) / 4.0).ceil() as i64;
                    for k in k_lo..=k_hi {
                        acc += self.raw(x, base + 4.0 * k as f64);
                    }
                }
                acc
            }
        }
    }

    /// Whether the adjusted factor has jump discontinuities.
    pub fn has_jumps(&self) -> bool {
        matches!(self.kind, AxisKind::Uniform { .. })
    }

    /// Whether the denominator can differ from 1.
    pub fn needs_denominator(&self) -> bool {
        self.boundary == BoundaryPolicy::RenormalizeRows
    }

    /// Kink locations in x of the raw in-domain mass.
    pub fn mass_kinks(&self) -> Vec<f64> {
        match self.kind {
            AxisKind::Gauss { .. } => Vec::new(),
            AxisKind::Uniform { w } => {
                let mut out = vec![1.0 - w, w - 1.0];
                out.retain(|c| (-1.0..1.0).contains(c));
                out
            }
        }
    }

    /// Whether the adjusted factor vanishes identically on the rectangle
    /// [xlo,xhi] x [ylo,yhi]. Conservative: reflection never prunes.
    pub fn pair_out_of_reach(&self, xlo: f64, xhi: f64, ylo: f64, yhi: f64) -> bool {
        if self.boundary == BoundaryPolicy::Reflect {
            return false;
        }
        let (p0, p1) = (self.predict(xlo), self.predict(xhi));
        let reach = self.reach();
        yhi < p0.min(p1) - reach || ylo > p0.max(p1) + reach
    }

    /// Kink locations in x of the map sending x to the integral of the
    /// adjusted factor over [ylo, yhi] divided by the denominator.
    pub fn inner_integral_kinks(&self, ylo: f64, yhi: f64) -> Vec<f64> {
        let AxisKind::Uniform { w } = self.kind else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for t in [ylo, yhi] {
            for s in [-1.0, 1.0] {
                match self.boundary {
                    BoundaryPolicy::RenormalizeRows => out.push(t + s * w),
                    BoundaryPolicy::Reflect => {
                        for k in -2..=2i32 {
                            out.push(t + s * w + 4.0 * k as f64);
                            out.push(2.0 - t + s * w + 4.0 * k as f64);
                        }
                    }
                }
            }
        }
        if self.needs_denominator() {
            out.extend(self.mass_kinks());
        }
        out.retain(|c| (-1.0..1.0).contains(c));
        out
    }

    /// Jump locations of the adjusted factor in y, for cut-aware quadrature.
    pub fn cuts(&self, x: f64, out: &mut Vec<f64>) {
        let AxisKind::Uniform { w } = self.kind else {
            return;
        };
        match self.boundary {
            BoundaryPolicy::RenormalizeRows => {
                out.push(x - w);
                out.push(x + w);
            }
            BoundaryPolicy::Reflect => {
                for edge in [x - w, x + w] {
                    let k_lo = ((-1.0 - edge) / 4.0).floor() as i64 - 1;
                    let k_hi = ((1.0 - edge) / 4.0).ceil() as i64 + 1;
                    for k in k_lo..=k_hi {
                        out.push(edge + 4.0 * k as f64);
                        out.push(2.0 - edge + 4.0 * k as f64);
                    }
                }
            }
        }
        out.retain(|c| (-1.0..1.0).contains(c));
    }

    /// In-domain mass of the raw factor at x: closed form for the window
    /// family, reference-rule quadrature for the Gaussian.
    pub fn mass_raw(&self, x: f64) -> f64 {
        match self.kind {
            AxisKind::Uniform { w } => {
                let overlap = (x + w).min(1.0) - (x - w).max(-1.0);
                overlap.max(0.0) / (2.0 * w)
            }
            AxisKind::Gauss { .. } => reference_integral(-1.0, 1.0, &[], |y| self.raw(x, y)),
        }
    }

    /// Denominator making rows integrate to 1: the raw in-domain mass under
    /// renormalization, 1 under reflection (folding already preserves mass).
    pub fn denom(&self, x: f64) -> Result<f64> {
        match self.boundary {
            BoundaryPolicy::Reflect => Ok(1.0),
            BoundaryPolicy::RenormalizeRows => {
                let m = self.mass_raw(x);
                if m <= 1e-300 {
                    return Err(Error::InvalidParameter(format!(
                        "kernel row at x={x} has no in-domain mass"
                    )));
                }
                Ok(m)
            }
        }
    }
}

fn auto_lambda(family: &KernelFamily, boundary: BoundaryPolicy, dim: u32) -> f64 {
    match family {
        KernelFamily::GaussAr1 { a, sigma } => {
            let sup_val = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let sup_deriv =
                1.0 / (sigma * sigma * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
            let amplify = match boundary {
                BoundaryPolicy::RenormalizeRows => {
                    let axis = AxisKernel {
                        kind: AxisKind::Gauss { a: *a, sigma: *sigma },
                        boundary,
                    };
                    let m_min = (0..=256)
                        .map(|i| axis.mass_raw(-1.0 + 2.0 * i as f64 / 256.0))
                        .fold(f64::INFINITY, f64::min);
                    1.0 / m_min
                }
                BoundaryPolicy::Reflect => 1.0 + (16.0 * sigma / 2.0).ceil(),
            };
            dim as f64 * sup_deriv * amplify * (sup_val * amplify).powi(dim as i32 - 1)
        }
        KernelFamily::UniformWindow { .. } | KernelFamily::GridDefined { .. } => f64::INFINITY,
    }
}
