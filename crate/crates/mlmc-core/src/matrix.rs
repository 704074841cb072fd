//! Sparse row-stochastic matrices over partition bins.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::partition::Partition;

const ROW_SUM_TOL: f64 = 1e-10;

/// Row-stochastic matrix with sorted sparse rows. Rows are renormalized to
/// unit sum at construction; the largest renormalization is recorded.
#[derive(Debug, Clone)]
pub struct StochasticMatrix {
    partition: Option<Partition>,
    rows: Vec<Vec<(u32, f64)>>,
    max_row_nnz: usize,
    renorm_max_delta: f64,
}

impl StochasticMatrix {
    /// Builds from dense rows, dropping exact zeros.
    pub fn from_dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let sparse = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != n {
                    return Err(Error::NotStochastic(format!(
                        "row {i} has {} entries in an {n}-state chain",
                        row.len()
                    )));
                }
                Ok(row
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, v)| v != 0.0)
                    .map(|(j, v)| (j as u32, v))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sparse(None, n, sparse)
    }

    /// Builds from sorted sparse rows over `n` states.
    pub fn from_sparse(
        partition: Option<Partition>,
        n: usize,
        rows: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self> {
        Self::from_sparse_with_tol(partition, n, rows, ROW_SUM_TOL)
    }

    /// As `from_sparse`, accepting row sums within `tol` of 1 before the
    /// exact renormalization. Intended for quadrature output, where the
    /// defect reflects integration error rather than a malformed chain.
    pub fn from_sparse_with_tol(
        partition: Option<Partition>,
        n: usize,
        rows: Vec<Vec<(u32, f64)>>,
        tol: f64,
    ) -> Result<Self> {
        if let Some(p) = &partition {
            if p.num_states() != n {
                return Err(Error::LevelMismatch(format!(
                    "matrix has {n} states, partition has {} bins",
                    p.num_states()
                )));
            }
        }
        if rows.len() != n || n == 0 {
            return Err(Error::NotStochastic(format!(
                "expected {n} nonempty rows, got {}",
                rows.len()
            )));
        }
        let mut m = Self { partition, rows, max_row_nnz: 0, renorm_max_delta: 0.0 };
        for (i, row) in m.rows.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut last: Option<u32> = None;
            for &(j, v) in row.iter() {
                if j as usize >= n {
                    return Err(Error::NotStochastic(format!(
                        "row {i} references column {j} of an {n}-state chain"
                    )));
                }
                if last.is_some_and(|p| p >= j) {
                    return Err(Error::NotStochastic(format!(
                        "row {i} has unsorted or duplicate columns"
                    )));
                }
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::NotStochastic(format!("entry ({i},{j}) is {v}")));
                }
                last = Some(j);
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotStochastic(format!(
                    "row {i} sums to {sum}, beyond tolerance {tol:e}"
                )));
            }
            if sum != 1.0 {
                for e in row.iter_mut() {
                    e.1 /= sum;
                }
            }
            m.renorm_max_delta = m.renorm_max_delta.max((sum - 1.0).abs());
            m.max_row_nnz = m.max_row_nnz.max(row.len());
        }
        Ok(m)
    }

    /// Attaches a partition with a matching number of bins.
    pub fn with_partition(mut self, partition: Partition) -> Result<Self> {
        if partition.num_states() != self.n() {
            return Err(Error::LevelMismatch(format!(
                "matrix has {} states, partition has {} bins",
                self.n(),
                partition.num_states()
            )));
        }
        self.partition = Some(partition);
        Ok(self)
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    /// Entry (i, j), zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&(j as u32), |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    /// Largest number of nonzeros in any row.
    pub fn max_row_nnz(&self) -> usize {
        self.max_row_nnz
    }

    /// Total number of stored entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Largest row renormalization applied at construction.
    pub fn renorm_max_delta(&self) -> f64 {
        self.renorm_max_delta
    }

    /// Row vector of the dense row i.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for &(j, v) in &self.rows[i] {
            out[j as usize] = v;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j as usize)] = v;
            }
        }
        m
    }

    /// Left action v -> v P.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n());
        let mut out = vec![0.0; self.n()];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j as usize] += vi * p;
            }
        }
        out
    }

    /// L1 distance between rows i and k.
    pub fn row_l1_distance(&self, i: usize, k: usize) -> f64 {
        let (a, b) = (&self.rows[i], &self.rows[k]);
        let (mut ia, mut ib) = (0, 0);
        let mut acc = 0.0;
        while ia < a.len() && ib < b.len() {
            match a[ia].0.cmp(&b[ib].0) {
                std::cmp::Ordering::Less => {
                    acc += a[ia].1;
                    ia += 1;
                }
                std::cmp::Ordering::Greater => {
                    acc += b[ib].1;
                    ib += 1;
                }
                std::cmp::Ordering::Equal => {
                    acc += (a[ia].1 - b[ib].1).abs();
                    ia += 1;
                    ib += 1;
                }
            }
        }
        acc += a[ia..].iter().map(|e| e.1).sum::<f64>();
        acc += b[ib..].iter().map(|e| e.1).sum::<f64>();
        acc
    }

    /// Max-row-L1 induced norm of the difference to another matrix.
    pub fn row_l1_norm_of_difference(&self, other: &StochasticMatrix) -> Result<f64> {
        if self.n() != other.n() {
            return Err(Error::LevelMismatch(format!(
                "matrices have {} and {} states",
                self.n(),
                other.n()
            )));
        }
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            let (a, b) = (&self.rows[i], &other.rows[i]);
            let (mut ia, mut ib) = (0, 0);
            let mut acc = 0.0;
            while ia < a.len() && ib < b.len() {
                match a[ia].0.cmp(&b[ib].0) {
                    std::cmp::Ordering::Less => {
                        acc += a[ia].1;
                        ia += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        acc += b[ib].1;
                        ib += 1;
                    }
                    std::cmp::Ordering::Equal => {
                        acc += (a[ia].1 - b[ib].1).abs();
                        ia += 1;
                        ib += 1;
                    }
                }
            }
            acc += a[ia..].iter().map(|e| e.1).sum::<f64>();
            acc += b[ib..].iter().map(|e| e.1).sum::<f64>();
            worst = worst.max(acc);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_two_state_chain_unchanged() {
        let p = StochasticMatrix::from_dense(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(p.get(0, 0), 0.9);
        assert_eq!(p.get(1, 0), 0.2);
        assert_eq!(p.max_row_nnz(), 2);
        assert_eq!(p.nnz(), 4);
        assert!(p.renorm_max_delta() < 1e-15);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(StochasticMatrix::from_dense(vec![vec![0.5, 0.4], vec![0.2, 0.8]]).is_err());
        assert!(StochasticMatrix::from_dense(vec![vec![1.1, -0.1], vec![0.2, 0.8]]).is_err());
    }

    #[test]
    fn renormalizes_tiny_row_drift() {
        let eps = 1e-12;
        let p = StochasticMatrix::from_dense(vec![vec![0.5 + eps, 0.5], vec![0.5, 0.5]]).unwrap();
        let sum: f64 = p.dense_row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(p.renorm_max_delta() > 0.0);
    }

    #[test]
    fn left_action_matches_hand_value() {
        let p = StochasticMatrix::from_dense(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let out = p.apply_left(&[1.0, 0.0]);
        assert_eq!(out, vec![0.9, 0.1]);
    }

    #[test]
    fn row_l1_distance_merges_sparsity_patterns() {
        let p = StochasticMatrix::from_dense(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ])
        .unwrap();
        assert!((p.row_l1_distance(0, 1) - 1.0).abs() < 1e-15);
        assert!((p.row_l1_distance(0, 0)).abs() == 0.0);
        assert!((p.row_l1_distance(0, 2) - 2.0 / 3.0).abs() < 1e-12);
    }
}
