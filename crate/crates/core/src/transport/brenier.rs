//! Entropic Brenier maps for the quadratic cost.
//!
//! The entropic dual of the problem between the cells of `μ` and the atoms
//! `y_j` of `ν` with cost `|x - y|²/2` yields weights `h_j`. The function
//!
//! `u(x) = ε log Σ_j exp((x·y_j + h_j) / ε)`
//!
//! is convex and smooth, and its gradient is exactly the barycentric
//! projection of the entropic plan. The map is `T = ∇u = x + ∇ψ` with
//! `ψ = u - |x|²/2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::measures::MeasureRef;

use super::sinkhorn::{sinkhorn_potentials, DenseKernel, GibbsKernel, TensorKernel};
use super::{Route, TransportMap};

const SINKHORN_TOL: f64 = 1e-9;
const SINKHORN_MAX_ITER: usize = 20_000;

/// Log-sum-exp convex potential built from entropic dual weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropicDual {
    dim: usize,
    points: Vec<f64>,
    h: Vec<f64>,
    eps: f64,
    converged: bool,
}

impl EntropicDual {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    /// Whether the dual iterations met their tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    fn softmax(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let s: Vec<f64> = self
            .points
            .chunks(self.dim)
            .zip(&self.h)
            .map(|(y, h)| (y.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + h) / self.eps)
            .collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let lse = max + total.ln();
        (lse, w.into_iter().map(|v| v / total).collect())
    }

    /// `(u(x), ∇u(x))`.
    pub fn potential_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (lse, w) = self.softmax(x);
        let mut grad = vec![0.0; self.dim];
        for (y, wj) in self.points.chunks(self.dim).zip(&w) {
            for a in 0..self.dim {
                grad[a] += wj * y[a];
            }
        }
        (self.eps * lse, grad)
    }

    /// `T(x) = ∇u(x)`.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        self.potential_and_gradient(x).1
    }

    /// `∇²u(x)`: the covariance of the conditional law of `y` divided by `ε`,
    /// row-major.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let (_, w) = self.softmax(x);
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for (y, wj) in self.points.chunks(d).zip(&w) {
            for a in 0..d {
                mean[a] += wj * y[a];
                for b in 0..d {
                    second[a * d + b] += wj * y[a] * y[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                second[a * d + b] = (second[a * d + b] - mean[a] * mean[b]) / self.eps;
            }
        }
        second
    }

    /// Solves `∇u(x) = y` by damped Newton steps on `u(x) - x·y`, starting at
    /// `start`. Returns `None` when `y` is not in the range of the gradient to
    /// working precision.
    pub fn invert(&self, y: &[f64], start: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let objective = |x: &[f64]| {
            let (u, _) = self.potential_and_gradient(x);
            u - x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut x = start.to_vec();
        let mut fx = objective(&x);
        for _ in 0..200 {
            let (_, grad) = self.potential_and_gradient(&x);
            let r: Vec<f64> = grad.iter().zip(y).map(|(g, t)| g - t).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= 1e-12 {
                return Some(x);
            }
            let mut hess = self.hessian(&x);
            let ridge = 1e-12 * (0..d).map(|a| hess[a * d + a]).fold(0.0, f64::max) + 1e-300;
            for a in 0..d {
                hess[a * d + a] += ridge;
            }
            let step = solve_small(&hess, &r, d)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                let ft = objective(&trial);
                if ft <= fx - 1e-4 * t * r.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>() || ft < fx {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                let (_, grad) = self.potential_and_gradient(&x);
                let rn: f64 = grad.iter().zip(y).map(|(g, t)| (g - t).powi(2)).sum::<f64>().sqrt();
                return (rn <= 1e-9).then_some(x);
            }
        }
        None
    }
}

/// Solves the `d × d` system `a z = b` (`d ≤ 3`) by Gaussian elimination with
/// partial pivoting.
pub(crate) fn solve_small(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut z = b.to_vec();
    for col in 0..d {
        let piv = (col..d).max_by(|&p, &q| m[p * d + col].abs().total_cmp(&m[q * d + col].abs()))?;
        if m[piv * d + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..d {
                m.swap(piv * d + k, col * d + k);
            }
            z.swap(piv, col);
        }
        for row in col + 1..d {
            let f = m[row * d + col] / m[col * d + col];
            for k in col..d {
                m[row * d + k] -= f * m[col * d + k];
            }
            z[row] -= f * z[col];
        }
    }
    for col in (0..d).rev() {
        let mut s = z[col];
        for k in col + 1..d {
            s -= m[col * d + k] * z[k];
        }
        z[col] = s / m[col * d + col];
    }
    Some(z)
}

/// Entropic Brenier map from a density on a box chart (periodic grids are
/// read as the box `[0,1]^d`) to `ν` at regularisation `reg_epsilon`.
///
/// The map is sampled at the cell centres and carries both its potential and
/// the dual, so evaluation between nodes uses the exact gradient.
pub fn brenier_map(mu: &GridDensity, nu: MeasureRef<'_>, reg_epsilon: f64) -> Result<TransportMap> {
    if !(reg_epsilon > 0.0 && reg_epsilon.is_finite()) {
        return Err(Error::param("reg_epsilon", format!("{reg_epsilon} is not positive")));
    }
    let dim = mu.dim();
    if nu.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: nu.dim() });
    }
    let g = mu.grid();
    let grid = Grid::cells(g.lo().to_vec(), g.hi().to_vec(), g.shape().to_vec())?;
    let xs = grid.points();
    let a = mu.masses();
    let (ys, b): (Vec<f64>, Vec<f64>) = match nu {
        MeasureRef::Discrete(m) => (m.points().to_vec(), m.weights().to_vec()),
        MeasureRef::Grid(r) => (r.grid().points(), r.masses()),
    };
    let kernel: Box<dyn GibbsKernel> = match nu {
        MeasureRef::Grid(r) if dim == 2 => {
            let axes = |g: &Grid| [0, 1].map(|ax| (0..g.shape()[ax]).map(|k| g.coord(ax, k)).collect::<Vec<f64>>());
            Box::new(TensorKernel::new(axes(&grid), axes(r.grid())))
        }
        _ => {
            let n = b.len();
            let mut c = Vec::with_capacity(a.len() * n);
            for x in xs.chunks(dim) {
                for y in ys.chunks(dim) {
                    c.push(0.5 * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>());
                }
            }
            Box::new(DenseKernel::new(a.len(), n, c))
        }
    };
    let pot = sinkhorn_potentials(kernel.as_ref(), &a, &b, reg_epsilon, SINKHORN_MAX_ITER, SINKHORN_TOL);
    // atoms without mass drop out of the potential
    let keep: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let ys: Vec<f64> = keep.iter().flat_map(|&j| ys[j * dim..(j + 1) * dim].to_vec()).collect();
    let g: Vec<f64> = keep.iter().map(|&j| pot.g[j]).collect();
    let h: Vec<f64> =
        g.iter().zip(ys.chunks(dim)).map(|(g, y)| g - 0.5 * y.iter().map(|v| v * v).sum::<f64>()).collect();
    let dual = EntropicDual { dim, points: ys, h, eps: reg_epsilon, converged: pot.converged };
    let evaluated: Vec<(f64, Vec<f64>)> = xs.par_chunks(dim).map(|x| dual.potential_and_gradient(x)).collect();
    let mut image = Vec::with_capacity(xs.len());
    let mut psi = Vec::with_capacity(grid.len());
    for (x, (u, grad)) in xs.chunks(dim).zip(evaluated) {
        psi.push(u - 0.5 * x.iter().map(|v| v * v).sum::<f64>());
        image.extend(grad);
    }
    Ok(TransportMap::on_grid(&grid, image, Route::Brenier)?.with_potential(psi)?.with_dual(dual))
}
