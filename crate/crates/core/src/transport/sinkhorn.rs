//! Log-domain Sinkhorn iterations with ε-scaling.
//!
//! The plan is `P_ij = exp((f_i + g_j - C_ij) / ε)`. Each stage halves ε,
//! starting at 1, and warm-starts from the previous potentials. The returned
//! plan is rounded onto the transport polytope: rows scaled down to their
//! marginals, then columns, then the remaining deficit is spread as a rank-one
//! correction, so both marginals hold up to round-off.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, LP_SIZE_LIMIT};

use super::{Cost, TransportPlan};

/// Potentials and diagnostics of a log-domain Sinkhorn run.
pub(crate) struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Soft-min reductions `L_i = LSE_j (g_j − C_ij)/ε` and its transpose.
pub(crate) trait GibbsKernel: Sync {
    fn lse_rows(&self, g: &[f64], eps: f64) -> Vec<f64>;
    fn lse_cols(&self, f: &[f64], eps: f64) -> Vec<f64>;
}

/// Explicit cost matrix.
pub(crate) struct DenseKernel {
    m: usize,
    n: usize,
    c: Vec<f64>,
    ct: Vec<f64>,
}

impl DenseKernel {
    pub fn new(m: usize, n: usize, c: Vec<f64>) -> Self {
        let mut ct = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                ct[j * m + i] = c[i * n + j];
            }
        }
        DenseKernel { m, n, c, ct }
    }
}

fn reduce(rows: usize, cols: usize, c: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    (0..rows)
        .into_par_iter()
        .map_init(
            || vec![0.0; cols],
            |buf, i| {
                let row = &c[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    buf[j] = (g[j] - row[j]) / eps;
                }
                log_sum_exp(buf)
            },
        )
        .collect()
}

impl GibbsKernel for DenseKernel {
    fn lse_rows(&self, g: &[f64], eps: f64) -> Vec<f64> {
        reduce(self.m, self.n, &self.c, g, eps)
    }

    fn lse_cols(&self, f: &[f64], eps: f64) -> Vec<f64> {
        reduce(self.n, self.m, &self.ct, f, eps)
    }
}

/// Cost `|x − y|²/2` between two tensor-product grids in 2D. The Gibbs kernel
/// factorises over the axes, so each reduction is two passes of 1D soft-mins.
pub(crate) struct TensorKernel {
    x: [Vec<f64>; 2],
    y: [Vec<f64>; 2],
}

impl TensorKernel {
    pub fn new(x: [Vec<f64>; 2], y: [Vec<f64>; 2]) -> Self {
        TensorKernel { x, y }
    }

    // out[i0, i1] = LSE_{l0, l1} (v[l0, l1] − c(p0_i0, q0_l0) − c(p1_i1, q1_l1)) / ε
    fn apply(p: &[Vec<f64>; 2], q: &[Vec<f64>; 2], v: &[f64], eps: f64) -> Vec<f64> {
        let (n0, n1) = (p[0].len(), p[1].len());
        let (m0, m1) = (q[0].len(), q[1].len());
        let half_sq = |a: f64, b: f64| 0.5 * (a - b) * (a - b) / eps;
        // pass over axis 1: stage[l0, i1]
        let stage: Vec<f64> = (0..m0 * n1)
            .into_par_iter()
            .map_init(
                || vec![0.0; m1],
                |buf, k| {
                    let (l0, i1) = (k / n1, k % n1);
                    for l1 in 0..m1 {
                        buf[l1] = v[l0 * m1 + l1] / eps - half_sq(p[1][i1], q[1][l1]);
                    }
                    log_sum_exp(buf)
                },
            )
            .collect();
        (0..n0 * n1)
            .into_par_iter()
            .map_init(
                || vec![0.0; m0],
                |buf, k| {
                    let (i0, i1) = (k / n1, k % n1);
                    for l0 in 0..m0 {
                        buf[l0] = stage[l0 * n1 + i1] - half_sq(p[0][i0], q[0][l0]);
                    }
                    log_sum_exp(buf)
                },
            )
            .collect()
    }
}

impl GibbsKernel for TensorKernel {
    fn lse_rows(&self, g: &[f64], eps: f64) -> Vec<f64> {
        Self::apply(&self.x, &self.y, g, eps)
    }

    fn lse_cols(&self, f: &[f64], eps: f64) -> Vec<f64> {
        Self::apply(&self.y, &self.x, f, eps)
    }
}

/// ε-scaled iterations. Zero weights are allowed and give `−∞` potentials.
/// Intermediate stages stop at an L¹ row error of `max(tol, 1e-4)`.
pub(crate) fn sinkhorn_potentials(
    kernel: &dyn GibbsKernel,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Potentials {
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut eps = 1.0f64.max(epsilon);
    let mut iterations = 0usize;
    let mut converged = false;
    loop {
        let last = eps <= epsilon;
        let stage_tol = if last { tol } else { tol.max(1e-4) };
        while iterations < max_iter {
            let rows = kernel.lse_rows(&g, eps);
            if iterations > 0 {
                // row sums of the current plan are exp(f_i/ε + L_i)
                let err: f64 = rows
                    .iter()
                    .zip(&f)
                    .zip(a)
                    .map(|((l, fi), ai)| if *ai > 0.0 { ((fi / eps + l).exp() - ai).abs() } else { 0.0 })
                    .sum();
                if err <= stage_tol {
                    if last {
                        converged = true;
                    }
                    break;
                }
            }
            iterations += 1;
            f = rows.iter().zip(&log_a).map(|(l, la)| eps * (la - l)).collect();
            let cols = kernel.lse_cols(&f, eps);
            g = cols.iter().zip(&log_b).map(|(l, lb)| eps * (lb - l)).collect();
        }
        if last || iterations >= max_iter {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    Potentials { f, g, iterations, converged }
}

/// Projects a nonnegative matrix onto the plans with marginals `a`, `b`.
pub(crate) fn round_to_marginals(p: &mut [f64], a: &[f64], b: &[f64]) {
    let (m, n) = (a.len(), b.len());
    for i in 0..m {
        let row = &mut p[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        if s > a[i] {
            let scale = a[i] / s;
            row.iter_mut().for_each(|x| *x *= scale);
        }
    }
    for j in 0..n {
        let s: f64 = (0..m).map(|i| p[i * n + j]).sum();
        if s > b[j] {
            let scale = b[j] / s;
            (0..m).for_each(|i| p[i * n + j] *= scale);
        }
    }
    let er: Vec<f64> = (0..m).map(|i| (a[i] - p[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0)).collect();
    let ec: Vec<f64> = (0..n).map(|j| (b[j] - (0..m).map(|i| p[i * n + j]).sum::<f64>()).max(0.0)).collect();
    let total: f64 = er.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            for j in 0..n {
                p[i * n + j] += er[i] * ec[j] / total;
            }
        }
    }
}

/// Entropic plan at regularisation `epsilon`, rounded to an exactly feasible
/// plan. `tol` bounds the L¹ row-marginal violation before rounding; when it
/// is not reached within `max_iter` sweeps the plan is flagged not converged.
pub fn solve_sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &Cost,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    cost.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("{epsilon} is not positive")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("{tol} is not positive")));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if mu.len() > LP_SIZE_LIMIT || nu.len() > LP_SIZE_LIMIT {
        return Err(Error::TooLarge { rows: mu.len(), cols: nu.len(), limit: LP_SIZE_LIMIT });
    }
    let (m, n) = (mu.len(), nu.len());
    let matrix = cost.matrix(mu, nu);
    // zero-weight atoms carry no mass in any plan; iterate on the support
    let rows: Vec<usize> = (0..m).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| nu.weights()[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let (ms, ns) = (rows.len(), cols.len());
    let sub: Vec<f64> =
        rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| matrix[i * n + j]).collect();
    let pot = sinkhorn_potentials(&DenseKernel::new(ms, ns, sub), &a, &b, epsilon, max_iter, tol);
    let eps = epsilon;
    let mut p = vec![0.0; ms * ns];
    for i in 0..ms {
        for j in 0..ns {
            p[i * ns + j] = ((pot.f[i] + pot.g[j] - matrix[rows[i] * n + cols[j]]) / eps).exp();
        }
    }
    round_to_marginals(&mut p, &a, &b);
    let mut gamma = vec![0.0; m * n];
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            gamma[ri * n + cj] = p[i * ns + j];
        }
    }
    let mut plan = TransportPlan::new(mu.clone(), nu.clone(), gamma, &matrix);
    plan.converged = pot.converged;
    plan.iterations = pot.iterations;
    Ok(plan)
}
