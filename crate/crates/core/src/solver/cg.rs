//! Matrix-free preconditioned conjugate gradient for symmetric positive
//! (semi)definite systems.

/// Result of a conjugate-gradient solve.
#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// The tracked residual is recomputed from scratch this often to bound
/// drift from the recurrence.
const RESIDUAL_REFRESH: usize = 50;

/// Solves `A x = rhs` for symmetric positive semidefinite `A` given as a
/// matvec closure, with a Jacobi preconditioner supplied as the inverse
/// diagonal. `x` holds the warm start on entry and the solution on exit.
///
/// Stops when the residual norm falls to `tol` times the right-hand-side
/// norm, at `max_iters` iterations, or on a curvature breakdown (a search
/// direction with nonpositive curvature, which for a semidefinite matrix
/// means the remaining error lies in the nullspace).
pub fn pcg<F>(
    mut apply: F,
    inv_diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> CgOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = rhs.len();
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(inv_diag.len(), n);

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| rhs[i] - ax[i]).collect();
    let rhs_norm = norm(rhs);
    let threshold = tol * rhs_norm;

    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut r_norm = norm(&r);
    let mut iterations = 0;

    while iterations < max_iters && r_norm > threshold && r_norm > 0.0 {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        iterations += 1;
        if iterations % RESIDUAL_REFRESH == 0 {
            apply(x, &mut ax);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
        } else {
            for i in 0..n {
                r[i] -= alpha * ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        r_norm = norm(&r);
    }

    CgOutcome {
        iterations,
        converged: r_norm <= threshold,
        relative_residual: if rhs_norm > 0.0 { r_norm / rhs_norm } else { r_norm },
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_apply(a: &DMatrix<f64>) -> impl Fn(&[f64], &mut [f64]) + '_ {
        move |v, out| {
            for i in 0..a.nrows() {
                out[i] = (0..a.ncols()).map(|j| a[(i, j)] * v[j]).sum();
            }
        }
    }

    #[test]
    fn matches_direct_solve_on_random_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 8;
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let a = &b.transpose() * &b + DMatrix::identity(n, n);
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / a[(i, i)]).collect();
            let mut x = vec![0.0; n];
            let outcome = pcg(dense_apply(&a), &inv_diag, &rhs, &mut x, 1e-12, 200);
            assert!(outcome.converged);
            let direct = a
                .clone()
                .cholesky()
                .unwrap()
                .solve(&nalgebra::DVector::from_column_slice(&rhs));
            for i in 0..n {
                assert!((x[i] - direct[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exact_warm_start_takes_no_iterations() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let rhs = [4.0, 9.0, 10.0];
        let mut x = vec![2.0, 3.0, 2.0];
        let inv_diag = [0.5, 1.0 / 3.0, 0.2];
        let outcome = pcg(dense_apply(&a), &inv_diag, &rhs, &mut x, 1e-10, 100);
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 0);
    }

    #[test]
    fn solves_singular_consistent_system() {
        // Path-graph Laplacian: nullspace is the constant vector. The
        // right-hand side is constructed to be consistent, so the solve
        // still drives the residual down.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -1.0, 0.0, 0.0, //
                -1.0, 2.0, -1.0, 0.0, //
                0.0, -1.0, 2.0, -1.0, //
                0.0, 0.0, -1.0, 1.0,
            ],
        );
        let y = nalgebra::DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
        let rhs_v = &a * &y;
        let rhs: Vec<f64> = rhs_v.iter().copied().collect();
        let inv_diag: Vec<f64> = (0..4).map(|i| 1.0 / a[(i, i)]).collect();
        let mut x = vec![0.0; 4];
        let outcome = pcg(dense_apply(&a), &inv_diag, &rhs, &mut x, 1e-12, 100);
        assert!(outcome.converged);
        let ax = &a * nalgebra::DVector::from_column_slice(&x);
        for i in 0..4 {
            assert!((ax[i] - rhs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_keeps_zero_start() {
        let a = DMatrix::identity(3, 3);
        let rhs = [0.0; 3];
        let mut x = vec![0.0; 3];
        let outcome = pcg(dense_apply(&a), &[1.0; 3], &rhs, &mut x, 1e-10, 50);
        assert!(outcome.converged);
        assert_eq!(x, vec![0.0; 3]);
    }
}
