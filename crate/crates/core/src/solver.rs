//! Sparse direct solution of the assembled (nonsymmetric) systems, with a
//! post-hoc residual check.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is singular or factorization failed: {0}")]
    SingularMatrix(String),
    #[error("non-finite entry in matrix or right-hand side")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub dof_count: usize,
    pub nnz: usize,
    pub factor_seconds: f64,
    pub solve_seconds: f64,
    pub relative_residual: f64,
}

/// Sorts and sums duplicate triplets into a deterministic COO form.
pub fn compress_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
    t.sort_unstable_by_key(|&(r, c, _)| (c, r));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
    for (r, c, v) in t {
        debug_assert!(r < n && c < n);
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out
}

/// Direct sparse LU solve of `A x = b` with `A` in triplet form.
///
/// Factorization runs sequentially so repeated runs are bit-identical.
pub fn solve_sparse(
    n: usize,
    triplets: &[(usize, usize, f64)],
    rhs: &DVector<f64>,
) -> Result<(DVector<f64>, SolveReport), SolveError> {
    assert_eq!(rhs.len(), n);
    let coo = compress_triplets(n, triplets);
    if coo.iter().any(|&(_, _, v)| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite);
    }
    faer::set_global_parallelism(faer::Parallelism::None);
    let mat = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &coo)
        .map_err(|e| SolveError::SingularMatrix(format!("assembly: {e:?}")))?;
    let t0 = std::time::Instant::now();
    let lu = mat.sp_lu().map_err(|e| SolveError::SingularMatrix(format!("{e:?}")))?;
    let factor_seconds = t0.elapsed().as_secs_f64();

    let mut b = faer::Mat::<f64>::zeros(n, 1);
    for i in 0..n {
        b[(i, 0)] = rhs[i];
    }
    let t1 = std::time::Instant::now();
    let x = faer::sparse::linalg::solvers::SpSolver::solve(&lu, &b);
    let solve_seconds = t1.elapsed().as_secs_f64();

    let mut sol = DVector::zeros(n);
    for i in 0..n {
        sol[i] = x[(i, 0)];
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::SingularMatrix("non-finite solution".into()));
    }

    let mut r = rhs.clone();
    for &(i, j, v) in &coo {
        r[i] -= v * sol[j];
    }
    let relative_residual = r.norm() / rhs.norm().max(f64::MIN_POSITIVE);
    Ok((
        sol,
        SolveReport {
            dof_count: n,
            nnz: coo.len(),
            factor_seconds,
            solve_seconds,
            relative_residual,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_solve() {
        let triplets = vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)];
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (x, report) = solve_sparse(3, &triplets, &b).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.relative_residual, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_by_two_solve_with_duplicate_triplets() {
        // [[2,1],[1,2]] with the first diagonal entry split in two
        let triplets = vec![(0, 0, 1.0), (0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)];
        let b = DVector::from_vec(vec![3.0, 3.0]);
        let (x, report) = solve_sparse(2, &triplets, &b).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
        assert!(report.relative_residual <= 1e-14);
        assert_eq!(report.nnz, 4);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let triplets = vec![(0, 0, 1.0), (1, 0, 1.0)]; // rank 1
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve_sparse(2, &triplets, &b).is_err());
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let triplets = vec![(0, 0, f64::NAN)];
        let b = DVector::from_vec(vec![1.0]);
        assert!(matches!(solve_sparse(1, &triplets, &b), Err(SolveError::NonFinite)));
    }
}
