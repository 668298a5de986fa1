use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_DARE_TOL: f64 = 1e-10;
pub const DEFAULT_DARE_MAX_ITER: usize = 10_000;

/// Stabilizing solution of the discrete algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    p: Matrix,
    gain: Matrix,
    iterations: usize,
}

impl RiccatiSolution {
    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// `K = (R + BᵀPB)⁻¹ BᵀPA`, so that `u = −K x`.
    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Iterates `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` from `P = Q` until the
/// max-abs change drops to `tol`.
pub fn dare_iterate(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let n = a.rows();
    let m = b.cols();
    if !a.is_square() || b.rows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(invalid(format!(
            "inconsistent Riccati shapes: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    for (name, mat) in [("A", a), ("B", b), ("Q", q), ("R", r)] {
        mat.ensure_finite(name)?;
    }
    if q.max_abs_diff(&q.transpose()) > 1e-12 * q.max_abs().max(1.0) {
        return Err(invalid("Q must be symmetric"));
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let pa = p.matmul(a);
        let pb = p.matmul(b);
        let btpb = bt.matmul(&pb);
        let s = r + &btpb;
        let s_inv = spd_inverse(&s)?;
        let btpa = bt.matmul(&pa);
        let gain = s_inv.matmul(&btpa);
        // Q + AᵀPA − (AᵀPB) K
        let next = &(q + &at.matmul(&pa)) - &at.matmul(&pb).matmul(&gain);
        let next = next.symmetrized();
        if !next.is_finite() {
            return Err(Error::NonConvergence {
                what: "riccati iteration",
                iterations: it,
                residual: f64::INFINITY,
            });
        }
        residual = next.max_abs_diff(&p);
        p = next;
        if residual <= tol {
            let gain = riccati_gain(a, b, r, &p)?;
            return Ok(RiccatiSolution {
                p,
                gain,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "riccati iteration",
        iterations: max_iter,
        residual,
    })
}

fn riccati_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt = b.transpose();
    let s = r + &bt.matmul(&p.matmul(b));
    Ok(spd_inverse(&s)?.matmul(&bt.matmul(&p.matmul(a))))
}

/// Right-hand side of the Riccati map evaluated at `p`; used to measure the
/// fixed-point residual.
pub fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let at = a.transpose();
    let gain = riccati_gain(a, b, r, p)?;
    Ok(&(q + &at.matmul(&p.matmul(a))) - &at.matmul(&p.matmul(b)).matmul(&gain))
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(invalid("R + BᵀPB is not positive definite"));
                }
                l[(i, i)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    // Invert L, then S⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in 0..n {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                acc -= l[(i, k)] * linv[(k, col)];
            }
            linv[(i, col)] = acc / l[(i, i)];
        }
    }
    Ok(linv.transpose().matmul(&linv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[[v]])
    }

    #[test]
    fn golden_ratio_fixed_point() {
        let sol = dare_iterate(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), 1e-12, 10_000).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p()[(0, 0)] - golden).abs() < 1e-8);
        // K = P/(1+P)
        assert!((sol.gain()[(0, 0)] - golden / (1.0 + golden)).abs() < 1e-8);
    }

    #[test]
    fn dead_state_gives_q() {
        let sol = dare_iterate(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), 1e-10, 100).unwrap();
        assert!((sol.p()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_input_geometric_series() {
        let a = 0.6;
        let sol = dare_iterate(&scalar(a), &scalar(0.0), &scalar(1.0), &scalar(1.0), 1e-12, 10_000).unwrap();
        assert!((sol.p()[(0, 0)] - 1.0 / (1.0 - a * a)).abs() < 1e-9);
    }

    #[test]
    fn unstable_uncontrollable_does_not_converge() {
        let err = dare_iterate(&scalar(1.5), &scalar(0.0), &scalar(1.0), &scalar(1.0), 1e-10, 50).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 50, .. }));
    }

    #[test]
    fn shape_mismatch() {
        assert!(dare_iterate(&Matrix::identity(2), &scalar(1.0), &scalar(1.0), &scalar(1.0), 1e-10, 10).is_err());
    }
}
