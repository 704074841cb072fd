//! Deterministic quadrature rules used by the discretization layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Panels per axis of the fixed reference rule for row masses and density
/// integrals.
pub const REFERENCE_PANELS: usize = 64;
/// Gauss-Legendre points per panel of the reference rule.
pub const REFERENCE_POINTS: usize = 16;

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the g-point rule by Newton iteration on the Legendre
    /// polynomial; exact for polynomials of degree 2g-1.
    pub fn new(g: usize) -> Self {
        assert!(g >= 1, "rule needs at least one point");
        let mut nodes = vec![0.0; g];
        let mut weights = vec![0.0; g];
        for i in 0..g.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (g as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(g, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(g, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x.abs();
            nodes[g - 1 - i] = x.abs();
            weights[i] = w;
            weights[g - 1 - i] = w;
        }
        if g % 2 == 1 {
            nodes[g / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integral of f over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, w * half))
            .collect()
    }
}

fn legendre_with_derivative(g: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=g {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let dp = g as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Integral of f over [a, b] split at the interior points of `cuts`,
/// applying the rule on each smooth piece.
pub fn integrate_with_cuts<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    cuts: &[f64],
    mut f: F,
) -> f64 {
    let mut edges: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
    edges.dedup();
    let mut acc = 0.0;
    let mut lo = a;
    for &c in &edges {
        acc += rule.integrate(lo, c, &mut f);
        lo = c;
    }
    acc + rule.integrate(lo, b, &mut f)
}

/// Integral of f over [a, b] on the fixed reference rule: uniform panels,
/// each split at the interior `cuts` and integrated with a high-order rule.
pub fn reference_integral<F: FnMut(f64) -> f64>(a: f64, b: f64, cuts: &[f64], mut f: F) -> f64 {
    let rule = GaussLegendre::new(REFERENCE_POINTS);
    let mut acc = 0.0;
    for p in 0..REFERENCE_PANELS {
        let lo = a + (b - a) * p as f64 / REFERENCE_PANELS as f64;
        let hi = a + (b - a) * (p + 1) as f64 / REFERENCE_PANELS as f64;
        acc += integrate_with_cuts(&rule, lo, hi, cuts, &mut f);
    }
    acc
}

/// Quadrature rule selector for kernel discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum QuadRule {
    /// Tensor-product Gauss-Legendre with `points` nodes per axis per panel.
    GaussLegendre { points: u32 },
    /// Seeded stratified Monte Carlo with `samples` draws per bin pair.
    MonteCarlo { samples: u32 },
}

/// Full quadrature request: rule, dyadic panel refinement per bin axis
/// (each bin is split into 2^subdivide panels per axis), and RNG seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    #[serde(flatten)]
    pub rule: QuadRule,
    #[serde(default)]
    pub subdivide: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl QuadratureSpec {
    /// Gauss-Legendre with 8 points per axis for d <= 2, 256-sample
    /// stratified Monte Carlo per bin pair for d >= 3.
    pub fn default_for(d: u32) -> Self {
        if d <= 2 {
            Self { rule: QuadRule::GaussLegendre { points: 8 }, subdivide: 0, seed: 1 }
        } else {
            Self { rule: QuadRule::MonteCarlo { samples: 256 }, subdivide: 0, seed: 1 }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.rule {
            QuadRule::GaussLegendre { points } if points == 0 || points > 64 => Err(
                Error::InvalidParameter("quadrature points must be in 1..=64".into()),
            ),
            QuadRule::MonteCarlo { samples } if samples == 0 => Err(Error::InvalidParameter(
                "monte-carlo samples must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_nodes_match_closed_forms() {
        let g2 = GaussLegendre::new(2);
        assert!((g2.nodes[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let g3 = GaussLegendre::new(3);
        assert!(g3.nodes[1].abs() < 1e-15);
        assert!((g3.nodes[2] - (3f64 / 5.0).sqrt()).abs() < 1e-15);
        assert!((g3.weights[1] - 8.0 / 9.0).abs() < 1e-15);
        assert!((g3.weights[0] - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for g in [1, 2, 3, 5, 8, 16, 64] {
            let rule = GaussLegendre::new(g);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "g={g} sum={total}");
        }
    }

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        for k in 0..=15u32 {
            let got = rule.integrate(0.0, 1.0, |x| x.powi(k as i32));
            let want = 1.0 / (k as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn gaussian_integral_on_reference_rule() {
        let sigma = 0.1f64;
        let got = reference_integral(-1.0, 1.0, &[], |y| {
            (-y * y / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        });
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cuts_make_step_functions_exact() {
        let rule = GaussLegendre::new(4);
        let f = |x: f64| if x < 0.4 { 1.0 } else { 0.0 };
        let got = integrate_with_cuts(&rule, -1.0, 1.0, &[0.4], f);
        assert!((got - 1.4).abs() < 1e-15);
    }

    #[test]
    fn default_rule_by_dimension() {
        assert_eq!(
            QuadratureSpec::default_for(2).rule,
            QuadRule::GaussLegendre { points: 8 }
        );
        assert_eq!(
            QuadratureSpec::default_for(3).rule,
            QuadRule::MonteCarlo { samples: 256 }
        );
    }
}
