//! Probability vectors on bins and their piecewise-constant interpolants.

use crate::error::{Error, Result};
use crate::partition::Partition;

const MASS_TOL: f64 = 1e-12;

/// Probability masses per bin: nonnegative, summing to 1 within 1e-12.
/// The partition is optional so that hand-built chains without box geometry
/// can reuse the spectral layer.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiscreteDensity {
    partition: Option<Partition>,
    mass: Vec<f64>,
}

impl DiscreteDensity {
    pub fn new(partition: Partition, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != partition.num_states() {
            return Err(Error::LevelMismatch(format!(
                "density has {} entries, partition has {} bins",
                mass.len(),
                partition.num_states()
            )));
        }
        Self::validate(&mass)?;
        Ok(Self { partition: Some(partition), mass })
    }

    pub fn free(mass: Vec<f64>) -> Result<Self> {
        Self::validate(&mass)?;
        Ok(Self { partition: None, mass })
    }

    pub fn uniform(partition: Partition) -> Self {
        let n = partition.num_states();
        Self { partition: Some(partition), mass: vec![1.0 / n as f64; n] }
    }

    pub fn uniform_free(n: usize) -> Self {
        Self { partition: None, mass: vec![1.0 / n as f64; n] }
    }

    fn validate(mass: &[f64]) -> Result<()> {
        if mass.is_empty() {
            return Err(Error::BadDensity("empty mass vector".into()));
        }
        if let Some((i, &v)) = mass.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
            return Err(Error::BadDensity(format!("entry {i} is {v}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::BadDensity(format!(
                "total mass {total} differs from 1 by more than {MASS_TOL:e}"
            )));
        }
        Ok(())
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Per-bin amplitudes sqrt(mass), a unit vector in the 2-norm.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.mass.iter().map(|&m| m.sqrt()).collect()
    }

    /// L1 distance to another density of equal length.
    pub fn l1_distance(&self, other: &DiscreteDensity) -> Result<f64> {
        check_compatible(self, other)?;
        Ok(self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

pub(crate) fn check_compatible(a: &DiscreteDensity, b: &DiscreteDensity) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LevelMismatch(format!(
            "densities have {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    if let (Some(p), Some(q)) = (a.partition(), b.partition()) {
        if p != q {
            return Err(Error::LevelMismatch("densities live on different partitions".into()));
        }
    }
    Ok(())
}

/// Piecewise-constant density on a partition: value mass/h^d on each bin.
#[derive(Debug, Clone)]
pub struct PiecewiseConstantDensity {
    partition: Partition,
    values: Vec<f64>,
}

impl PiecewiseConstantDensity {
    pub fn new(partition: Partition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.num_states() {
            return Err(Error::LevelMismatch(format!(
                "value vector has {} entries, partition has {} bins",
                values.len(),
                partition.num_states()
            )));
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at x (the value of the bin containing x).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let j = self.partition.bin_of(x)?;
        Ok(self.values[self.partition.linear_index(&j)])
    }

    /// Integral over the whole box: sum of value * h^d.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.partition.bin_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mass_vectors() {
        let p = Partition::new(2, 1).unwrap();
        assert!(DiscreteDensity::new(p.clone(), vec![0.5, 0.5, 0.1, -0.1]).is_err());
        assert!(DiscreteDensity::new(p.clone(), vec![0.3, 0.3, 0.3, 0.3]).is_err());
        assert!(DiscreteDensity::new(p, vec![0.25; 3]).is_err());
        assert!(DiscreteDensity::free(vec![]).is_err());
    }

    #[test]
    fn uniform_density_sums_to_one() {
        let p = Partition::new(4, 2).unwrap();
        let u = DiscreteDensity::uniform(p);
        assert!((u.mass().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn amplitudes_are_unit_in_two_norm() {
        let d = DiscreteDensity::free(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let a = d.amplitudes();
        let norm2: f64 = a.iter().map(|x| x * x).sum();
        assert!((norm2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn piecewise_constant_eval_and_mass() {
        let p = Partition::new(2, 1).unwrap();
        let pcd = PiecewiseConstantDensity::new(p, vec![0.25, 0.75, 0.75, 0.25]).unwrap();
        assert_eq!(pcd.eval(&[-0.9]).unwrap(), 0.25);
        assert_eq!(pcd.eval(&[0.1]).unwrap(), 0.75);
        assert!((pcd.total_mass() - 1.0).abs() < 1e-15);
    }
}
