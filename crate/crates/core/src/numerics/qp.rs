//! Box-constrained convex quadratic programs,
//! `min ½ uᵀHu + gᵀu  s.t.  lower ≤ u ≤ upper`,
//! solved by accelerated projected gradient with a fixed `1/L` step.

use super::matrix::{dot, norm2, Matrix};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_QP_TOL: f64 = 1e-8;
pub const DEFAULT_QP_MAX_ITER: usize = 100_000;

const POWER_ITERATIONS: usize = 200;
// Power iteration approaches λ_max from below.
const LIPSCHITZ_MARGIN: f64 = 1.02;
const ROUNDOFF_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BoxQpOptions {
    /// Stop when ‖u − P(u − ∇f(u))‖₂ ≤ tol.
    pub tol: f64,
    pub max_iter: usize,
    /// Nesterov momentum with gradient-based restart.
    pub accelerate: bool,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for BoxQpOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_QP_TOL,
            max_iter: DEFAULT_QP_MAX_ITER,
            accelerate: true,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub u: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final projected-gradient norm.
    pub residual: f64,
}

/// Solves the box QP with default options and returns the minimizer.
pub fn solve_box_qp(h: &Matrix, g: &[f64], lower: &[f64], upper: &[f64], tol: f64) -> Result<Vec<f64>> {
    let opts = BoxQpOptions {
        tol,
        ..BoxQpOptions::default()
    };
    solve_box_qp_with(h, g, lower, upper, &opts).map(|s| s.u)
}

pub fn solve_box_qp_with(
    h: &Matrix,
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &BoxQpOptions,
) -> Result<BoxQpSolution> {
    let d = g.len();
    validate(h, g, lower, upper)?;
    if !(opts.tol > 0.0) {
        return Err(invalid("QP tolerance must be positive"));
    }

    let lipschitz = largest_eigenvalue(h)?;
    let step = if lipschitz > 0.0 {
        1.0 / (LIPSCHITZ_MARGIN * lipschitz)
    } else {
        1.0
    };
    let curvature_floor = -1e-10 * lipschitz.max(1.0);

    let project = |v: &mut [f64]| {
        for ((x, lo), hi) in v.iter_mut().zip(lower).zip(upper) {
            *x = x.clamp(*lo, *hi);
        }
    };

    let mut x = match &opts.warm_start {
        Some(w) if w.len() == d && w.iter().all(|v| v.is_finite()) => w.clone(),
        Some(w) if w.len() != d => {
            return Err(invalid(format!("warm start has length {}, expected {d}", w.len())))
        }
        _ => vec![0.0; d],
    };
    project(&mut x);
    let mut hx = h.mat_vec(&x);
    let mut x_prev = x.clone();
    let mut hx_prev = hx.clone();
    let mut momentum_t = 1.0f64;

    let mut y = vec![0.0; d];
    let mut hy = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut residual = projected_gradient_norm(&x, &hx, g, lower, upper);

    for it in 0..opts.max_iter {
        if residual <= opts.tol {
            return Ok(finish(x, &hx, g, it, residual));
        }

        let beta = if opts.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt());
            let b = (momentum_t - 1.0) / t_next;
            momentum_t = t_next;
            b
        } else {
            0.0
        };
        for i in 0..d {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
            hy[i] = hx[i] + beta * (hx[i] - hx_prev[i]);
        }
        for i in 0..d {
            next[i] = y[i] - step * (hy[i] + g[i]);
        }
        project(&mut next);
        let h_next = h.mat_vec(&next);

        // Curvature along the step, H·(next − y) = h_next − hy. The
        // difference cancels badly for short steps, hence the round-off slack.
        let mut dd = 0.0;
        let mut dhd = 0.0;
        let mut nn = 0.0;
        for i in 0..d {
            let di = next[i] - y[i];
            dd += di * di;
            dhd += di * (h_next[i] - hy[i]);
            nn += next[i] * next[i] + y[i] * y[i];
        }
        let slack = ROUNDOFF_SLACK * lipschitz * (nn * dd).sqrt();
        if dd > 0.0 && dhd < curvature_floor * dd - slack {
            return Err(invalid("QP Hessian has negative curvature"));
        }

        // Restart momentum when the step opposes descent.
        if opts.accelerate {
            let mut s = 0.0;
            for i in 0..d {
                s += (y[i] - next[i]) * (next[i] - x[i]);
            }
            if s > 0.0 {
                momentum_t = 1.0;
            }
        }

        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut hx_prev, &mut hx);
        x.copy_from_slice(&next);
        hx = h_next;
        residual = projected_gradient_norm(&x, &hx, g, lower, upper);
    }
    if residual <= opts.tol {
        return Ok(finish(x, &hx, g, opts.max_iter, residual));
    }
    Err(Error::NonConvergence {
        what: "box QP",
        iterations: opts.max_iter,
        residual,
    })
}

fn finish(u: Vec<f64>, hu: &[f64], g: &[f64], iterations: usize, residual: f64) -> BoxQpSolution {
    let objective = 0.5 * dot(&u, hu) + dot(g, &u);
    BoxQpSolution {
        u,
        objective,
        iterations,
        residual,
    }
}

fn projected_gradient_norm(x: &[f64], hx: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let grad = hx[i] + g[i];
        let p = (x[i] - grad).clamp(lower[i], upper[i]);
        acc += (x[i] - p) * (x[i] - p);
    }
    acc.sqrt()
}

fn validate(h: &Matrix, g: &[f64], lower: &[f64], upper: &[f64]) -> Result<()> {
    let d = g.len();
    if d == 0 {
        return Err(invalid("QP dimension is zero"));
    }
    if h.shape() != (d, d) {
        return Err(invalid(format!("H is {:?}, expected {d}x{d}", h.shape())));
    }
    if lower.len() != d || upper.len() != d {
        return Err(invalid("bound vectors have the wrong length"));
    }
    h.ensure_finite("H")?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(invalid("g contains non-finite entries"));
    }
    if lower.iter().zip(upper).any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
        return Err(invalid("lower bound exceeds upper bound"));
    }
    if h.max_abs_diff(&h.transpose()) > 1e-9 * h.max_abs().max(1.0) {
        return Err(invalid("H must be symmetric"));
    }
    Ok(())
}

/// Power-iteration estimate of the dominant eigenvalue. A negative Rayleigh
/// quotient means H is not positive semidefinite.
fn largest_eigenvalue(h: &Matrix) -> Result<f64> {
    let d = h.rows();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let hv = h.mat_vec(&v);
        lambda = dot(&v, &hv);
        let nrm = norm2(&hv);
        if nrm == 0.0 {
            return Ok(0.0);
        }
        v = hv.into_iter().map(|x| x / nrm).collect();
    }
    if lambda < -1e-12 * h.max_abs().max(1.0) {
        return Err(invalid("QP Hessian is not positive semidefinite"));
    }
    Ok(lambda.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Matrix {
        Matrix::from_rows(&[[v]])
    }

    #[test]
    fn interior_optimum() {
        let u = solve_box_qp(&one(1.0), &[-1.0], &[-2.0], &[2.0], 1e-10).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clamps_at_upper_bound() {
        let u = solve_box_qp(&one(1.0), &[-5.0], &[-2.0], &[2.0], 1e-10).unwrap();
        assert_eq!(u[0], 2.0);
    }

    #[test]
    fn zero_hessian_is_linear_program_on_box() {
        let u = solve_box_qp(&Matrix::zeros(2, 2), &[1.0, -1.0], &[-1.0, -1.0], &[1.0, 1.0], 1e-10).unwrap();
        assert_eq!(u, vec![-1.0, 1.0]);
    }

    #[test]
    fn indefinite_rejected() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, -3.0]]);
        assert!(matches!(
            solve_box_qp(&h, &[0.1, 0.1], &[-1.0, -1.0], &[1.0, 1.0], 1e-8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(solve_box_qp(&one(1.0), &[0.0], &[1.0], &[-1.0], 1e-8).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1e-6]]);
        let opts = BoxQpOptions {
            max_iter: 3,
            accelerate: false,
            ..BoxQpOptions::default()
        };
        let err = solve_box_qp_with(&h, &[-0.5, -1e-7], &[-1.0, -1.0], &[1.0, 1.0], &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn warm_start_at_solution_returns_immediately() {
        let opts = BoxQpOptions {
            warm_start: Some(vec![1.0]),
            ..BoxQpOptions::default()
        };
        let sol = solve_box_qp_with(&one(1.0), &[-1.0], &[-2.0], &[2.0], &opts).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!((sol.objective + 0.5).abs() < 1e-15);
    }
}
