//! Thin SVD by one-sided (Hestenes) Jacobi rotations, and the pseudo-inverse
//! and numerical rank built on it.

use super::matrix::{dot, norm2, Matrix};
use crate::error::Result;

const MAX_SWEEPS: usize = 80;

/// Thin decomposition `A = U · diag(σ) · Vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// rows × k, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// cols × k, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_transposed(&self.v)
    }

    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    a.ensure_finite("svd input")?;
    if a.rows() >= a.cols() {
        Ok(jacobi_tall(a))
    } else {
        let t = jacobi_tall(&a.transpose());
        Ok(SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

/// One-sided Jacobi on a matrix with rows >= cols. Works on columns stored
/// contiguously for cache friendliness.
fn jacobi_tall(a: &Matrix) -> SvdResult {
    let m = a.rows();
    let n = a.cols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols.iter().enumerate().map(|(j, c)| (norm2(c), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let null_cut = sigma_max * (m.max(n) as f64) * eps;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut v_out = Matrix::zeros(n, n);
    let mut pending = Vec::new();
    for (k, &(s, j)) in order.iter().enumerate() {
        v_out.set_column(k, &v[j]);
        if s > null_cut && s > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / s).collect());
            singular_values.push(s);
        } else {
            // Numerically null direction; U column completed below.
            u_cols.push(Vec::new());
            singular_values.push(if s > 0.0 { s } else { 0.0 });
            pending.push(k);
        }
    }
    for k in pending {
        let filled: Vec<&Vec<f64>> = u_cols.iter().filter(|c| !c.is_empty()).collect();
        let completion = orthonormal_completion(m, &filled);
        u_cols[k] = completion;
    }

    let mut u = Matrix::zeros(m, n);
    for (k, c) in u_cols.iter().enumerate() {
        u.set_column(k, c);
    }
    SvdResult {
        u,
        singular_values,
        v: v_out,
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to every vector in `basis`.
fn orthonormal_completion(m: usize, basis: &[&Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; m];
    let mut best_norm = -1.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        // Two passes of Gram-Schmidt.
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                for (c, bi) in cand.iter_mut().zip(b.iter()) {
                    *c -= proj * bi;
                }
            }
        }
        let nrm = norm2(&cand);
        if nrm > best_norm {
            best_norm = nrm;
            best = cand;
        }
        if nrm > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Default pseudo-inverse tolerance factor, relative to σ_max.
pub fn default_pinv_rel_tol(a: &Matrix) -> f64 {
    1e-10 * a.rows().max(a.cols()) as f64
}

/// Moore-Penrose pseudo-inverse. Singular values at or below
/// `rel_tol · σ_max` are treated as zero; `None` uses
/// [`default_pinv_rel_tol`].
pub fn pinv(a: &Matrix, rel_tol: Option<f64>) -> Result<Matrix> {
    let dec = svd(a)?;
    let rel = rel_tol.unwrap_or_else(|| default_pinv_rel_tol(a));
    let cut = rel * dec.max_singular_value();
    let k = dec.singular_values.len();
    // pinv = V Σ⁺ Uᵀ
    let mut vs = dec.v.clone();
    for j in 0..k {
        let s = dec.singular_values[j];
        let inv = if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
        for i in 0..vs.rows() {
            vs[(i, j)] *= inv;
        }
    }
    Ok(vs.matmul_transposed(&dec.u))
}

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Number of singular values above `rel_tol · σ_max`.
pub fn rank(a: &Matrix, rel_tol: Option<f64>) -> Result<usize> {
    let dec = svd(a)?;
    let smax = dec.max_singular_value();
    if smax == 0.0 {
        return Ok(0);
    }
    let cut = rel_tol.unwrap_or(DEFAULT_RANK_TOL) * smax;
    Ok(dec.singular_values.iter().filter(|s| **s > cut).count())
}
