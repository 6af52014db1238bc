//! Small numerical helpers on top of nalgebra: ordered SVD, truncated
//! pseudo-inverses and the simplex-valued cleanups used at the recovery boundary.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative factor applied to `max(rows, cols) · σ_max` when deciding numerical rank.
pub const PINV_EPS: f64 = 1e-12;

/// Thin SVD with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct OrderedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn ordered_svd(m: &DMatrix<f64>) -> OrderedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    OrderedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        singular_values: DVector::from_iterator(order.len(), order.iter().map(|&i| s[i])),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]),
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// The `k`-th largest singular value (one-based), zero if the matrix has fewer.
pub fn kth_singular_value(m: &DMatrix<f64>, k: usize) -> f64 {
    assert!(k >= 1);
    singular_values(m).get(k - 1).copied().unwrap_or(0.0)
}

fn rank_cutoff(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    m.nrows().max(m.ncols()) as f64 * PINV_EPS * sigma_max
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    let cutoff = rank_cutoff(m, top);
    s.iter().filter(|&&v| v > cutoff).count()
}

/// Rank-`target` pseudo-inverse. Singular values below the relative cutoff are
/// discarded, and at most `target` are kept; fewer than `target` surviving values
/// is a rank-deficiency error naming `what`.
pub fn truncated_pinv(m: &DMatrix<f64>, target: usize, what: &str) -> Result<DMatrix<f64>> {
    let svd = ordered_svd(m);
    let s = &svd.singular_values;
    let top = s.iter().copied().next().unwrap_or(0.0);
    let cutoff = rank_cutoff(m, top);
    let rank = s.iter().filter(|&&v| v > cutoff && v > 0.0).count();
    if rank < target {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            rank,
            required: target,
        });
    }
    let mut pinv = DMatrix::zeros(m.ncols(), m.nrows());
    for r in 0..target {
        let v_col = svd.v_t.row(r).transpose();
        let u_col = svd.u.column(r);
        pinv += (v_col * u_col.transpose()) / s[r];
    }
    Ok(pinv)
}

/// Full pseudo-inverse, truncating only at the numerical-rank cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let rank = numerical_rank(m);
    truncated_pinv(m, rank, "matrix").expect("rank computed from the same cutoff")
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    if v.iter().any(|x| !x.is_finite()) {
        return vec![1.0 / v.len() as f64; v.len()];
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // absorb floating-point residue so the sum is 1 to machine precision
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// Clip negatives to zero and rescale to unit mass. Returns `None` when nothing
/// positive survives, leaving the caller to choose a fallback.
pub fn clip_and_normalize(v: &[f64]) -> Option<Vec<f64>> {
    let clipped: Vec<f64> = v
        .iter()
        .map(|&x| if x.is_finite() { x.max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = clipped.iter().sum();
    if total <= f64::MIN_POSITIVE || !total.is_finite() {
        return None;
    }
    Some(clipped.into_iter().map(|x| x / total).collect())
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ordered_svd_reconstructs() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
        let svd = ordered_svd(&m);
        assert!(svd.singular_values[0] >= svd.singular_values[1]);
        let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * &svd.v_t;
        assert!((rebuilt - m).norm() < 1e-12);
    }

    #[test]
    fn truncated_pinv_of_rank_one() {
        let a = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        let m = &a * b.transpose();
        let p = truncated_pinv(&m, 1, "rank-one").unwrap();
        // Moore-Penrose: M P M = M
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        match truncated_pinv(&m, 2, "rank-one") {
            Err(Error::RankDeficient { rank, required, .. }) => {
                assert_eq!((rank, required), (1, 2));
            }
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn pinv_of_identity() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((pinv(&eye) - &eye).norm() < 1e-14);
    }

    #[test]
    fn simplex_projection_known_values() {
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_to_simplex(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn clip_rejects_all_negative() {
        assert!(clip_and_normalize(&[-1.0, -0.5]).is_none());
        assert_eq!(clip_and_normalize(&[-1.0, 2.0]).unwrap(), vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let p = project_to_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_is_closest_among_perturbations(
            v in proptest::collection::vec(-2.0f64..2.0, 3),
            w in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            // any other simplex point is at least as far from v
            let p = project_to_simplex(&v);
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-6);
            let q: Vec<f64> = w.iter().map(|x| x / total).collect();
            prop_assert!(l2_distance(&p, &v) <= l2_distance(&q, &v) + 1e-12);
        }
    }
}
