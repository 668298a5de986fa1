//! Linear-system helpers: controllability matrix and least-squares
//! identification of `[A, B]` through the normal equations.

use super::matrix::Matrix;
use super::svd::pinv;
use crate::error::{invalid, Error, Result};

/// `[B, AB, A²B, …, A^{N−1}B]`.
pub fn controllability(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(invalid(format!("A must be square, got {:?}", a.shape())));
    }
    if b.rows() != a.rows() {
        return Err(invalid(format!(
            "B has {} rows, A is {}x{}",
            b.rows(),
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let m = b.cols();
    let mut out = Matrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        for i in 0..n {
            for j in 0..m {
                out[(i, k * m + j)] = block[(i, j)];
            }
        }
        if k + 1 < n {
            block = a.matmul(&block);
        }
    }
    Ok(out)
}

/// Fits `M = [A, B]` to `psi_next ≈ A·psi_cur + B·u` by forming
/// `G = Φ Φᵀ` and `V = psi_next Φᵀ` with `Φ = [psi_cur; u]`, then
/// `M = V · G⁺`. Both `G` and `V` are independent of the sample count.
pub fn solve_normal_equation(psi_next: &Matrix, psi_cur: &Matrix, u: &Matrix) -> Result<Matrix> {
    let k = psi_cur.cols();
    if psi_next.cols() != k || u.cols() != k {
        return Err(invalid(format!(
            "sample counts differ: psi_next {}, psi_cur {}, u {}",
            psi_next.cols(),
            k,
            u.cols()
        )));
    }
    if psi_next.rows() != psi_cur.rows() {
        return Err(invalid("psi_next and psi_cur must have the same lift dimension"));
    }
    psi_next.ensure_finite("psi_next")?;
    psi_cur.ensure_finite("psi_cur")?;
    u.ensure_finite("u")?;
    let unknowns = psi_cur.rows() + u.rows();
    if k < unknowns {
        return Err(Error::Underdetermined {
            samples: k,
            unknowns,
        });
    }
    let phi = psi_cur.vstack(u)?;
    let g = phi.matmul_transposed(&phi);
    let v = psi_next.matmul_transposed(&phi);
    Ok(v.matmul(&pinv(&g, None)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rank;

    #[test]
    fn controllability_hand_cases() {
        let c = controllability(&Matrix::identity(2), &Matrix::column_vector(&[1.0, 0.0])).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]));
        assert_eq!(rank(&c, None).unwrap(), 1);

        let a = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]);
        let c = controllability(&a, &Matrix::column_vector(&[0.0, 1.0])).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        assert_eq!(rank(&c, None).unwrap(), 2);

        let c = controllability(&Matrix::zeros(2, 2), &Matrix::column_vector(&[1.0, 1.0])).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]));
    }

    #[test]
    fn controllability_shape_errors() {
        let b = Matrix::column_vector(&[1.0, 0.0]);
        assert!(controllability(&Matrix::zeros(2, 3), &b).is_err());
        assert!(controllability(&Matrix::identity(3), &b).is_err());
    }

    #[test]
    fn underdetermined_rejected() {
        let z = Matrix::zeros(3, 3);
        let u = Matrix::zeros(1, 3);
        assert!(matches!(
            solve_normal_equation(&z, &z, &u),
            Err(Error::Underdetermined { samples: 3, unknowns: 4 })
        ));
    }

    #[test]
    fn scalar_identity_system() {
        let x = Matrix::row_vector(&[0.3, -1.2, 0.8, 2.0]);
        let u = Matrix::row_vector(&[0.5, -0.1, 1.3, -0.7]);
        let m = solve_normal_equation(&x, &x, &u).unwrap();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(m[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn zero_input_identity_dynamics() {
        let x = Matrix::from_rows(&[[1.0, 0.2, -0.4, 0.9, 0.1], [0.3, -1.0, 0.5, 0.0, 0.7]]);
        let u = Matrix::zeros(1, 5);
        let m = solve_normal_equation(&x, &x, &u).unwrap();
        let a = m.block(0, 0, 2, 2);
        let b = m.block(0, 2, 2, 1);
        assert!(a.max_abs_diff(&Matrix::identity(2)) < 1e-8);
        let resid = &x - &(&a.matmul(&x) + &b.matmul(&u));
        assert!(resid.frobenius_norm() <= 1e-8);
    }
}
