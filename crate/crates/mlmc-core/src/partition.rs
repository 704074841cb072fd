//! Uniform dyadic partitions of the box [-1,1)^d.
//!
//! A partition with resolution n covers each axis with 2n half-open bins of
//! width h = 1/n. Bins are addressed by a multi-index j with components in
//! [-n, n); bin k of axis j spans [j_k*h, (j_k+1)*h). Linear indices are
//! row-major with component 0 slowest.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default cap on the total number of bins.
pub const DEFAULT_STATE_CAP: u64 = 1 << 20;

/// Linear index convention recorded in every file header.
pub const INDEX_ORDER: &str = "row-major-c0-slowest";

/// Multi-index of a bin, one signed component per axis.
pub type MultiIndex = Vec<i32>;

/// Uniform partition of [-1,1)^d with bin width h = 1/n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: u32,
    d: u32,
    states: usize,
}

impl Partition {
    /// Builds the partition with h = 1/n under the default state cap.
    pub fn new(n: u32, d: u32) -> Result<Self> {
        Self::with_cap(n, d, DEFAULT_STATE_CAP)
    }

    /// Builds the partition with h = 1/n, rejecting more than `cap` bins.
    pub fn with_cap(n: u32, d: u32, cap: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidResolution(
                "resolution 1/h must be a positive integer".into(),
            ));
        }
        if d == 0 {
            return Err(Error::InvalidResolution("dimension must be positive".into()));
        }
        let states = (2 * n as u128).checked_pow(d).ok_or_else(|| Error::Capacity {
            what: format!("partition h=1/{n}, d={d}"),
            got: u128::MAX,
            cap: cap as u128,
        })?;
        if states > cap as u128 {
            return Err(Error::Capacity {
                what: format!("partition h=1/{n}, d={d}"),
                got: states,
                cap: cap as u128,
            });
        }
        Ok(Self { n, d, states: states as usize })
    }

    /// Builds the partition from a rational bin width h = num/den.
    pub fn from_rational(num: u32, den: u32, d: u32, cap: u64) -> Result<Self> {
        if num == 0 || den == 0 || den % num != 0 {
            return Err(Error::InvalidResolution(format!(
                "h = {num}/{den} is not the reciprocal of a positive integer"
            )));
        }
        Self::with_cap(den / num, d, cap)
    }

    /// Bin width h.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Reciprocal bin width n = 1/h.
    pub fn resolution(&self) -> u32 {
        self.n
    }

    pub fn dim(&self) -> u32 {
        self.d
    }

    pub fn bins_per_axis(&self) -> u32 {
        2 * self.n
    }

    /// Total number of bins, (2n)^d.
    pub fn num_states(&self) -> usize {
        self.states
    }

    /// Volume h^d of a single bin.
    pub fn bin_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Multi-index of the bin containing x; errors outside [-1,1)^d.
    pub fn bin_of(&self, x: &[f64]) -> Result<MultiIndex> {
        self.check_dim(x.len())?;
        let mut j = Vec::with_capacity(x.len());
        for (k, &xk) in x.iter().enumerate() {
            if !(-1.0..1.0).contains(&xk) {
                return Err(Error::OutOfDomain { coord: k, value: xk });
            }
            j.push((xk * self.n as f64).floor() as i32);
        }
        Ok(j)
    }

    /// Center point of bin j.
    pub fn center(&self, j: &[i32]) -> Vec<f64> {
        let h = self.h();
        j.iter().map(|&jk| (jk as f64 + 0.5) * h).collect()
    }

    /// Per-axis interval [lo, hi) of bin j.
    pub fn bin_bounds(&self, j: &[i32]) -> Vec<(f64, f64)> {
        let h = self.h();
        j.iter().map(|&jk| (jk as f64 * h, (jk as f64 + 1.0) * h)).collect()
    }

    /// Whether j addresses a bin of this partition.
    pub fn contains_index(&self, j: &[i32]) -> bool {
        j.len() == self.d as usize
            && j.iter().all(|&jk| jk >= -(self.n as i32) && jk < self.n as i32)
    }

    /// Row-major linear index of bin j, component 0 slowest.
    pub fn linear_index(&self, j: &[i32]) -> usize {
        debug_assert!(self.contains_index(j));
        let base = 2 * self.n as u64;
        let mut idx = 0u64;
        for &jk in j {
            idx = idx * base + (jk + self.n as i32) as u64;
        }
        idx as usize
    }

    /// Multi-index of the bin with linear index `idx`.
    pub fn multi_index(&self, idx: usize) -> MultiIndex {
        debug_assert!(idx < self.states);
        let base = 2 * self.n as usize;
        let mut j = vec![0i32; self.d as usize];
        let mut rest = idx;
        for k in (0..self.d as usize).rev() {
            j[k] = (rest % base) as i32 - self.n as i32;
            rest /= base;
        }
        j
    }

    /// Iterates all bins in linear-index order.
    pub fn indices(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.states).map(|i| self.multi_index(i))
    }

    /// The partition at double the bin width; requires n even.
    pub fn coarsen(&self) -> Result<Partition> {
        if self.n % 2 != 0 {
            return Err(Error::LevelMismatch(format!(
                "h=1/{} has no dyadic coarsening",
                self.n
            )));
        }
        Ok(Partition {
            n: self.n / 2,
            d: self.d,
            states: self.states >> self.d,
        })
    }

    /// The partition at half the bin width.
    pub fn refine(&self, cap: u64) -> Result<Partition> {
        Partition::with_cap(self.n * 2, self.d, cap)
    }

    /// Parent bin on the partition at width 2h (componentwise floor halving).
    pub fn parent(j: &[i32]) -> MultiIndex {
        j.iter().map(|&jk| jk.div_euclid(2)).collect()
    }

    /// The 2^d children of coarse bin k on the partition at width h/2,
    /// in row-major order.
    pub fn children(k: &[i32]) -> Vec<MultiIndex> {
        let d = k.len();
        let count = 1usize << d;
        let mut out = Vec::with_capacity(count);
        for bits in 0..count {
            let child: MultiIndex = k
                .iter()
                .enumerate()
                .map(|(axis, &kk)| 2 * kk + ((bits >> (d - 1 - axis)) & 1) as i32)
                .collect();
            out.push(child);
        }
        out
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.d as usize {
            return Err(Error::LevelMismatch(format!(
                "expected {} coordinates, got {}",
                self.d, len
            )));
        }
        Ok(())
    }
}

/// File-header form of a partition: rational bin width plus the index
/// convention, so dumps stay portable.
#[derive(Serialize, Deserialize)]
struct PartitionHeader {
    h_num: u32,
    h_den: u32,
    d: u32,
    index_order: String,
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PartitionHeader { h_num: 1, h_den: self.n, d: self.d, index_order: INDEX_ORDER.into() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let header = PartitionHeader::deserialize(de)?;
        if header.index_order != INDEX_ORDER {
            return Err(D::Error::custom(format!(
                "unsupported index order {:?}, expected {INDEX_ORDER:?}",
                header.index_order
            )));
        }
        Partition::from_rational(header.h_num, header.h_den, header.d, DEFAULT_STATE_CAP)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_counts_match_resolution() {
        assert_eq!(Partition::new(2, 1).unwrap().num_states(), 4);
        assert_eq!(Partition::new(1, 3).unwrap().num_states(), 8);
        assert_eq!(Partition::new(4, 2).unwrap().num_states(), 64);
    }

    #[test]
    fn rejects_zero_resolution_and_cap_overflow() {
        assert!(Partition::new(0, 1).is_err());
        assert!(Partition::new(1, 0).is_err());
        assert!(Partition::with_cap(512, 3, DEFAULT_STATE_CAP).is_err());
        assert!(Partition::from_rational(3, 10, 1, DEFAULT_STATE_CAP).is_err());
        assert!(Partition::from_rational(1, 4, 1, DEFAULT_STATE_CAP).is_ok());
        assert!(Partition::from_rational(2, 4, 1, DEFAULT_STATE_CAP).is_ok());
    }

    #[test]
    fn bin_of_pins() {
        let p = Partition::new(2, 1).unwrap();
        assert_eq!(p.bin_of(&[0.25]).unwrap(), vec![0]);
        assert_eq!(p.bin_of(&[-1.0]).unwrap(), vec![-2]);
        assert!(p.bin_of(&[1.0]).is_err());

        let q = Partition::new(4, 2).unwrap();
        assert_eq!(q.bin_of(&[0.3, -0.9]).unwrap(), vec![1, -4]);
    }

    #[test]
    fn parent_and_children_pins() {
        assert_eq!(Partition::parent(&[-2]), vec![-1]);
        assert_eq!(Partition::parent(&[-3]), vec![-2]);
        assert_eq!(
            Partition::children(&[-1, 0]),
            vec![vec![-2, 0], vec![-2, 1], vec![-1, 0], vec![-1, 1]]
        );
    }

    #[test]
    fn linear_index_round_trip() {
        for (n, d) in [(2u32, 1u32), (4, 2), (1, 3), (2, 3)] {
            let p = Partition::new(n, d).unwrap();
            for idx in 0..p.num_states() {
                let j = p.multi_index(idx);
                assert!(p.contains_index(&j));
                assert_eq!(p.linear_index(&j), idx);
            }
        }
    }

    #[test]
    fn linear_index_component_zero_slowest() {
        let p = Partition::new(1, 2).unwrap();
        assert_eq!(p.linear_index(&[-1, -1]), 0);
        assert_eq!(p.linear_index(&[-1, 0]), 1);
        assert_eq!(p.linear_index(&[0, -1]), 2);
        assert_eq!(p.linear_index(&[0, 0]), 3);
    }

    #[test]
    fn centers_and_bounds() {
        let p = Partition::new(2, 1).unwrap();
        assert_eq!(p.center(&[0]), vec![0.25]);
        assert_eq!(p.center(&[-2]), vec![-0.75]);
        assert_eq!(p.bin_bounds(&[-2]), vec![(-1.0, -0.5)]);
    }

    #[test]
    fn bin_of_center_round_trip() {
        for (n, d) in [(2u32, 1u32), (4, 2), (2, 3), (8, 1)] {
            let p = Partition::new(n, d).unwrap();
            for j in p.indices() {
                assert_eq!(p.bin_of(&p.center(&j)).unwrap(), j);
            }
        }
    }

    #[test]
    fn coarsen_refine_round_trip() {
        let p = Partition::new(4, 2).unwrap();
        let c = p.coarsen().unwrap();
        assert_eq!(c.resolution(), 2);
        assert_eq!(c.refine(DEFAULT_STATE_CAP).unwrap(), p);
        assert!(Partition::new(1, 1).unwrap().coarsen().is_err());
        assert!(Partition::new(3, 1).unwrap().coarsen().is_err());
    }

    #[test]
    fn children_partition_parent_bin() {
        let coarse = Partition::new(2, 2).unwrap();
        let fine = coarse.refine(DEFAULT_STATE_CAP).unwrap();
        for k in coarse.indices() {
            for c in Partition::children(&k) {
                assert!(fine.contains_index(&c));
                assert_eq!(Partition::parent(&c), k);
                let (lo, hi) = (coarse.bin_bounds(&k), fine.bin_bounds(&c));
                for axis in 0..2 {
                    assert!(hi[axis].0 >= lo[axis].0 - 1e-15);
                    assert!(hi[axis].1 <= lo[axis].1 + 1e-15);
                }
            }
        }
    }
}
