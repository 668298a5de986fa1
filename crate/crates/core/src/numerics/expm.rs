use super::matrix::Matrix;
use crate::error::{invalid, Result};

/// `exp(A·dt)` by scaling and squaring a truncated Taylor series.
pub fn expm(a: &Matrix, dt: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(invalid(format!("expm needs a square matrix, got {:?}", a.shape())));
    }
    a.ensure_finite("expm input")?;
    if !dt.is_finite() {
        return Err(invalid("expm step is not finite"));
    }
    let n = a.rows();
    let scaled = a.scale(dt);
    // Infinity norm bounds the spectral radius.
    let norm = (0..n)
        .map(|i| scaled.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let x = scaled.scale(0.5f64.powi(squarings as i32));

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&x).scale(1.0 / k as f64);
        result = &result + &term;
        if term.max_abs() <= f64::EPSILON * result.max_abs() * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&Matrix::zeros(3, 3), 1.0).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn scalar_exponential() {
        let e = expm(&Matrix::from_rows(&[[1.0]]), 1.0).unwrap();
        assert!((e[(0, 0)] - std::f64::consts::E).abs() < 1e-12);
        let e = expm(&Matrix::from_rows(&[[-2.0]]), 5.0).unwrap();
        assert!((e[(0, 0)] - (-10f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_series_terminates() {
        let e = expm(&Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]), 1.0).unwrap();
        assert!(e.max_abs_diff(&Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]])) < 1e-15);
    }

    #[test]
    fn rotation_generator() {
        // exp([[0, -w], [w, 0]] t) is a rotation by w t.
        let w = 3.0;
        let e = expm(&Matrix::from_rows(&[[0.0, -w], [w, 0.0]]), 2.5).unwrap();
        let ang = w * 2.5;
        let expected = Matrix::from_rows(&[[ang.cos(), -ang.sin()], [ang.sin(), ang.cos()]]);
        assert!(e.max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn non_square_rejected() {
        assert!(expm(&Matrix::zeros(2, 3), 1.0).is_err());
    }
}
