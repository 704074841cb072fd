//! Inter-level transfer operators on dyadically nested partitions.
//!
//! Three prolongations coexist on purpose and are never interchangeable:
//! `prolong_copy` copies values (the left inverse of summing restriction up
//! to the factor 2^d), `prolong_mass` splits probability mass (L1-isometric),
//! and `prolong_amplitude` rescales by 1/sqrt(2^d) (L2-isometric).

use rayon::prelude::*;

use crate::density::DiscreteDensity;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::partition::Partition;

/// Linear index of every fine bin's parent, in fine linear order.
pub(crate) fn parent_linear_map(fine: &Partition) -> Result<(Partition, Vec<u32>)> {
    let coarse = fine.coarsen()?;
    let map = (0..fine.num_states())
        .map(|i| coarse.linear_index(&Partition::parent(&fine.multi_index(i))) as u32)
        .collect();
    Ok((coarse, map))
}

/// Linear indices of every coarse bin's children, in coarse linear order.
fn children_linear_map(fine: &Partition, coarse: &Partition) -> Vec<Vec<u32>> {
    (0..coarse.num_states())
        .map(|k| {
            Partition::children(&coarse.multi_index(k))
                .iter()
                .map(|c| fine.linear_index(c) as u32)
                .collect()
        })
        .collect()
}

fn pairwise_sum(xs: &mut [f64]) -> f64 {
    let mut len = xs.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            xs[i] = xs[2 * i] + xs[2 * i + 1];
        }
        if len % 2 == 1 {
            xs[half] = xs[len - 1];
        }
        len = half + len % 2;
    }
    xs[0]
}

fn check_len(part: &Partition, v: &[f64], what: &str) -> Result<()> {
    if v.len() != part.num_states() {
        return Err(Error::LevelMismatch(format!(
            "{what} has {} entries, partition has {} bins",
            v.len(),
            part.num_states()
        )));
    }
    Ok(())
}

/// Summing restriction: each coarse entry is the sum over its 2^d children.
/// Returns the coarse partition alongside the restricted vector.
pub fn restrict_sum(fine: &Partition, v: &[f64]) -> Result<(Partition, Vec<f64>)> {
    check_len(fine, v, "vector")?;
    let coarse = fine.coarsen()?;
    let children = children_linear_map(fine, &coarse);
    let out = children
        .par_iter()
        .map(|ch| {
            let mut buf: Vec<f64> = ch.iter().map(|&i| v[i as usize]).collect();
            pairwise_sum(&mut buf)
        })
        .collect();
    Ok((coarse, out))
}

/// Value-copy prolongation: each child receives its parent's value.
pub fn prolong_copy(coarse: &Partition, v: &[f64]) -> Result<(Partition, Vec<f64>)> {
    check_len(coarse, v, "vector")?;
    let fine = coarse.refine(refine_cap(coarse))?;
    let (_, parent) = parent_linear_map(&fine)?;
    let out = parent.iter().map(|&k| v[k as usize]).collect();
    Ok((fine, out))
}

/// Mass-splitting prolongation: each child receives parent mass / 2^d, so
/// total mass is preserved.
pub fn prolong_mass(pi: &DiscreteDensity) -> Result<DiscreteDensity> {
    let coarse = pi.partition().ok_or_else(|| {
        Error::LevelMismatch("prolongation needs a partition-backed density".into())
    })?;
    let scale = 0.5f64.powi(coarse.dim() as i32);
    let (fine, values) = prolong_copy(coarse, pi.mass())?;
    DiscreteDensity::new(fine, values.iter().map(|&m| m * scale).collect())
}

/// Amplitude prolongation: each child receives parent amplitude / sqrt(2^d),
/// so the 2-norm is preserved and squared amplitudes follow `prolong_mass`.
pub fn prolong_amplitude(coarse: &Partition, psi: &[f64]) -> Result<(Partition, Vec<f64>)> {
    check_len(coarse, psi, "amplitude vector")?;
    let norm: f64 = psi.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "amplitude vector has 2-norm {norm}, expected 1"
        )));
    }
    let scale = 1.0 / (2.0f64.powi(coarse.dim() as i32)).sqrt();
    let (fine, values) = prolong_copy(coarse, psi)?;
    Ok((fine, values.iter().map(|&a| a * scale).collect()))
}

fn refine_cap(coarse: &Partition) -> u64 {
    (coarse.num_states() as u64) << coarse.dim()
}

/// One-level matrix coarsening: P2(k,l) = 2^{-d} * sum over child rows and
/// columns of P. Row-stochasticity is preserved algebraically.
pub fn coarsen_matrix(p: &StochasticMatrix) -> Result<StochasticMatrix> {
    let fine = p
        .partition()
        .ok_or_else(|| Error::LevelMismatch("matrix coarsening needs a partition".into()))?;
    let (coarse, parent) = parent_linear_map(fine)?;
    let children = children_linear_map(fine, &coarse);
    let scale = 0.5f64.powi(fine.dim() as i32);
    let nc = coarse.num_states();
    let rows: Vec<Vec<(u32, f64)>> = (0..nc)
        .into_par_iter()
        .map(|k| {
            let mut buf = vec![0.0f64; nc];
            for &i in &children[k] {
                for &(j, v) in p.row(i as usize) {
                    buf[parent[j as usize] as usize] += v;
                }
            }
            buf.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(l, &v)| (l as u32, v * scale))
                .collect()
        })
        .collect();
    StochasticMatrix::from_sparse(Some(coarse), nc, rows)
}

/// One-level matrix lifting: Phat(i,j) = P2(parent(i), parent(j)) / 2^d.
/// Rows sum to 1 exactly because the division by 2^d is exact.
pub fn lift_matrix(p2: &StochasticMatrix) -> Result<StochasticMatrix> {
    let coarse = p2
        .partition()
        .ok_or_else(|| Error::LevelMismatch("matrix lifting needs a partition".into()))?;
    let fine = coarse.refine(refine_cap(coarse))?;
    let (_, parent) = parent_linear_map(&fine)?;
    let children = children_linear_map(&fine, coarse);
    let scale = 0.5f64.powi(coarse.dim() as i32);
    let lifted_rows: Vec<Vec<(u32, f64)>> = (0..coarse.num_states())
        .into_par_iter()
        .map(|k| {
            let mut row: Vec<(u32, f64)> = p2
                .row(k)
                .iter()
                .flat_map(|&(l, v)| {
                    children[l as usize].iter().map(move |&j| (j, v * scale))
                })
                .collect();
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    let nf = fine.num_states();
    let rows = (0..nf).map(|i| lifted_rows[parent[i] as usize].clone()).collect();
    StochasticMatrix::from_sparse(Some(fine), nf, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::ChaCha8Rng;
    use rand::{RngExt, SeedableRng};

    fn part(n: u32, d: u32) -> Partition {
        Partition::new(n, d).unwrap()
    }

    #[test]
    fn restrict_sums_children() {
        let (c, out) = restrict_sum(&part(2, 1), &[0.3, 0.3, 0.2, 0.2]).unwrap();
        assert_eq!(c.resolution(), 1);
        assert_eq!(out, vec![0.6, 0.4]);
        let (_, out) = restrict_sum(&part(2, 1), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
        let (_, out) = restrict_sum(&part(2, 2), &vec![1.0; 16]).unwrap();
        assert_eq!(out, vec![4.0; 4]);
    }

    #[test]
    fn prolong_copy_copies_parent_values() {
        let (f, out) = prolong_copy(&part(1, 1), &[0.6, 0.4]).unwrap();
        assert_eq!(f.resolution(), 2);
        assert_eq!(out, vec![0.6, 0.6, 0.4, 0.4]);
    }

    #[test]
    fn restriction_after_copy_scales_by_children_count() {
        for d in 1..=3u32 {
            let coarse = part(2, d);
            let mut rng = ChaCha8Rng::seed_from_u64(7 + d as u64);
            for _ in 0..100 {
                let v: Vec<f64> =
                    (0..coarse.num_states()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (fine, pv) = prolong_copy(&coarse, &v).unwrap();
                let (_, rv) = restrict_sum(&fine, &pv).unwrap();
                let factor = 2.0f64.powi(d as i32);
                for (a, b) in rv.iter().zip(&v) {
                    assert!((a - factor * b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn restriction_is_adjoint_to_copy_prolongation() {
        for d in 1..=3u32 {
            let coarse = part(2, d);
            let fine = coarse.refine(1 << 20).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11 + d as u64);
            for _ in 0..100 {
                let u: Vec<f64> =
                    (0..fine.num_states()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> =
                    (0..coarse.num_states()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (_, pv) = prolong_copy(&coarse, &v).unwrap();
                let (_, ru) = restrict_sum(&fine, &u).unwrap();
                let lhs: f64 = u.iter().zip(&pv).map(|(a, b)| a * b).sum();
                let rhs: f64 = ru.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mass_prolongation_splits_and_inverts_exactly() {
        let pi = DiscreteDensity::new(part(1, 1), vec![0.6, 0.4]).unwrap();
        let fine = prolong_mass(&pi).unwrap();
        assert_eq!(fine.mass(), &[0.3, 0.3, 0.2, 0.2]);
        let (_, back) =
            restrict_sum(fine.partition().unwrap(), fine.mass()).unwrap();
        assert_eq!(back, vec![0.6, 0.4]);
    }

    #[test]
    fn mass_prolongation_quarters_in_two_dimensions() {
        let pi = DiscreteDensity::new(part(1, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let fine = prolong_mass(&pi).unwrap();
        let mut expected = vec![0.0; 16];
        for idx in [0usize, 1, 4, 5] {
            expected[idx] = 0.25;
        }
        assert_eq!(fine.mass(), &expected[..]);
    }

    #[test]
    fn amplitude_prolongation_preserves_two_norm() {
        let psi = [0.6f64.sqrt(), 0.4f64.sqrt()];
        let (_, out) = prolong_amplitude(&part(1, 1), &psi).unwrap();
        let expected = [0.3f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt(), 0.2f64.sqrt()];
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let (_, out) = prolong_amplitude(&part(1, 1), &[1.0, 0.0]).unwrap();
        let r = 0.5f64.sqrt();
        for (a, b) in out.iter().zip(&[r, r, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }

        let uniform = [0.5; 4];
        let (_, out) = prolong_amplitude(&part(1, 2), &uniform).unwrap();
        for a in &out {
            assert!((a - 0.25).abs() < 1e-15);
        }

        assert!(prolong_amplitude(&part(1, 1), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn matrix_coarsening_examples() {
        let part4 = part(2, 1);
        let eye = StochasticMatrix::from_dense(
            (0..4).map(|i| (0..4).map(|j| f64::from(i == j)).collect()).collect(),
        )
        .unwrap()
        .with_partition(part4.clone())
        .unwrap();
        let c = coarsen_matrix(&eye).unwrap();
        assert_eq!(c.to_dense(), nalgebra::DMatrix::identity(2, 2));

        let flat = StochasticMatrix::from_dense(vec![vec![0.25; 4]; 4])
            .unwrap()
            .with_partition(part4)
            .unwrap();
        let c = coarsen_matrix(&flat).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(c.get(i, j), 0.5);
            }
        }
    }

    #[test]
    fn coarsened_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fine = part(4, 1);
        let n = fine.num_states();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let p = StochasticMatrix::from_dense(rows).unwrap().with_partition(fine).unwrap();
        let c = coarsen_matrix(&p).unwrap();
        for i in 0..c.n() {
            let s: f64 = c.dense_row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(c.renorm_max_delta() < 1e-13);
    }

    #[test]
    fn lifting_examples() {
        let part2 = part(1, 1);
        let eye = StochasticMatrix::from_dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap()
            .with_partition(part2.clone())
            .unwrap();
        let l = lift_matrix(&eye).unwrap();
        let expected = [
            [0.5, 0.5, 0.0, 0.0],
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.0, 0.5, 0.5],
            [0.0, 0.0, 0.5, 0.5],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.get(i, j), expected[i][j]);
            }
        }

        let flat = StochasticMatrix::from_dense(vec![vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap()
            .with_partition(part2)
            .unwrap();
        let l = lift_matrix(&flat).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.get(i, j), 0.25);
            }
        }
    }

    #[test]
    fn lifted_rows_sum_to_one_exactly_for_dyadic_entries() {
        let p2 = StochasticMatrix::from_dense(vec![vec![0.75, 0.25], vec![0.5, 0.5]])
            .unwrap()
            .with_partition(part(1, 1))
            .unwrap();
        let l = lift_matrix(&p2).unwrap();
        for i in 0..4 {
            let s: f64 = l.dense_row(i).iter().sum();
            assert_eq!(s, 1.0);
            assert_eq!(l.renorm_max_delta(), 0.0);
        }
    }

    #[test]
    fn lift_then_coarsen_is_identity() {
        let p2 = StochasticMatrix::from_dense(vec![vec![0.9, 0.1], vec![0.2, 0.8]])
            .unwrap()
            .with_partition(part(1, 1))
            .unwrap();
        let back = coarsen_matrix(&lift_matrix(&p2).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back.get(i, j) - p2.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lifted_chain_reproduces_coarse_action_on_lifted_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coarse = part(2, 1);
        let n = coarse.num_states();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let p2 = StochasticMatrix::from_dense(rows).unwrap().with_partition(coarse.clone()).unwrap();
        let lifted = lift_matrix(&p2).unwrap();

        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let pi = DiscreteDensity::new(coarse, raw.iter().map(|v| v / s).collect()).unwrap();
        let pi_fine = prolong_mass(&pi).unwrap();

        let evolved_fine = lifted.apply_left(pi_fine.mass());
        let (_, lhs) =
            restrict_sum(pi_fine.partition().unwrap(), &evolved_fine).unwrap();
        let rhs = p2.apply_left(pi.mass());
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
