//! Discrete Legendre transforms of potentials sampled on box grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tolerance of the discrete midpoint-convexity test.
pub const CONVEXITY_TOL: f64 = 1e-10;

/// Scalar potential on a bounded box grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialGrid {
    grid: Grid,
    values: Vec<f64>,
    convex: bool,
    cap: Option<f64>,
}

impl PotentialGrid {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if grid.is_periodic() {
            return Err(Error::InvalidGrid("potentials live on bounded boxes".into()));
        }
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite potential at node {i}")));
        }
        let convex = midpoint_convex(&grid, &values, CONVEXITY_TOL);
        Ok(PotentialGrid { grid, values, convex, cap: None })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether every grid triple `x - v, x, x + v` along the axes and
    /// diagonals satisfies the midpoint inequality within [`CONVEXITY_TOL`].
    pub fn is_convex(&self) -> bool {
        self.convex
    }

    /// Sentinel standing in for `+∞`, when one was applied.
    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.grid.interp_stencil(x, |i, w| acc += w * self.values[i]);
        acc
    }

    /// True when no index of node `i` touches the boundary of the grid.
    pub fn is_interior(&self, i: usize) -> bool {
        let idx = self.grid.multi_index(i);
        idx.iter().zip(self.grid.shape()).all(|(&k, &n)| k > 0 && k + 1 < n)
    }

    /// Range of the forward difference quotients along each axis.
    pub fn slope_bounds(&self) -> Vec<(f64, f64)> {
        let g = &self.grid;
        (0..g.dim())
            .map(|a| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..g.len() {
                    let mut idx = g.multi_index(i);
                    if idx[a] + 1 >= g.shape()[a] {
                        continue;
                    }
                    let x0 = g.coord(a, idx[a]);
                    idx[a] += 1;
                    let j = g.flat_index(&idx);
                    let s = (self.values[j] - self.values[i]) / (g.coord(a, idx[a]) - x0);
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
                (lo, hi)
            })
            .collect()
    }
}

/// Lattice directions with entries in `{-1, 0, 1}`, one per ± pair.
fn directions(dim: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let total = 3usize.pow(dim as u32);
    for code in 0..total {
        let mut c = code;
        let v: Vec<i64> = (0..dim)
            .map(|_| {
                let d = (c % 3) as i64 - 1;
                c /= 3;
                d
            })
            .collect();
        // keep the representative whose first nonzero entry is positive
        if v.iter().find(|&&d| d != 0).is_some_and(|&d| d > 0) {
            out.push(v);
        }
    }
    out
}

fn midpoint_convex(grid: &Grid, values: &[f64], tol: f64) -> bool {
    let dirs = directions(grid.dim());
    let shape = grid.shape();
    (0..grid.len()).all(|i| {
        let idx = grid.multi_index(i);
        dirs.iter().all(|v| {
            let mut fwd = idx.clone();
            let mut bwd = idx.clone();
            for a in 0..idx.len() {
                let f = idx[a] as i64 + v[a];
                let b = idx[a] as i64 - v[a];
                if f < 0 || b < 0 || f as usize >= shape[a] || b as usize >= shape[a] {
                    return true;
                }
                fwd[a] = f as usize;
                bwd[a] = b as usize;
            }
            values[grid.flat_index(&fwd)] + values[grid.flat_index(&bwd)] - 2.0 * values[i] >= -tol
        })
    })
}

/// `φ*(y) = max_x (x·y − φ(x))` over the grid nodes of `φ`, on a node grid
/// spanning the range of the discrete gradient of `φ` at twice the
/// resolution. An axis on which the gradient is constant gets a unit-width
/// range centred on that slope.
pub fn legendre_transform(phi: &PotentialGrid) -> Result<PotentialGrid> {
    let bounds = phi.slope_bounds();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut shape = Vec::new();
    for (a, &(s0, s1)) in bounds.iter().enumerate() {
        let n = phi.grid.shape()[a];
        let width = s1 - s0;
        if !(width > 1e-12 * (1.0 + s0.abs().max(s1.abs()))) {
            let mid = 0.5 * (s0 + s1);
            lo.push(mid - 0.5);
            hi.push(mid + 0.5);
        } else {
            lo.push(s0);
            hi.push(s1);
        }
        shape.push(2 * (n.max(2) - 1) + 1);
    }
    let dual = Grid::nodes(lo, hi, shape)?;
    legendre_transform_on(phi, &dual)
}

/// [`legendre_transform`] evaluated on an arbitrary bounded `dual` grid.
///
/// Values above `max|φ| + 10·diam·G`, with `G` the largest dual coordinate
/// norm, are replaced by that sentinel.
pub fn legendre_transform_on(phi: &PotentialGrid, dual: &Grid) -> Result<PotentialGrid> {
    if dual.dim() != phi.grid.dim() {
        return Err(Error::DimensionMismatch { expected: phi.grid.dim(), got: dual.dim() });
    }
    let dim = dual.dim();
    let xs = phi.grid.points();
    let ys = dual.points();
    let grad_bound = ys.chunks(dim).map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let phi_bound = phi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cap = phi_bound + 10.0 * phi.grid.diameter() * grad_bound.max(1.0);
    let mut capped = false;
    let values: Vec<f64> = ys
        .par_chunks(dim)
        .map(|y| {
            xs.chunks(dim)
                .zip(&phi.values)
                .map(|(x, p)| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - p)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let values: Vec<f64> = values
        .into_iter()
        .map(|v| {
            if v > cap {
                capped = true;
                cap
            } else {
                v
            }
        })
        .collect();
    let mut out = PotentialGrid::new(dual.clone(), values)?;
    if capped {
        out.cap = Some(cap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior_error(a: &PotentialGrid, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..a.grid().len())
            .filter(|&i| a.is_interior(i))
            .map(|i| (a.values()[i] - f(&a.grid().point(i))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn quadratic_is_self_dual() {
        let grid = Grid::nodes(vec![-1.0], vec![1.0], vec![41]).unwrap();
        let h = grid.spacing(0);
        let phi = PotentialGrid::from_fn(grid, |x| 0.5 * x[0] * x[0]).unwrap();
        assert!(phi.is_convex());
        let star = legendre_transform(&phi).unwrap();
        assert!(star.is_convex());
        assert!(interior_error(&star, |y| 0.5 * y[0] * y[0]) <= h * h);
    }

    #[test]
    fn affine_support_function() {
        let grid = Grid::nodes(vec![-1.0, -1.0], vec![1.0, 1.0], vec![9, 9]).unwrap();
        let phi = PotentialGrid::from_fn(grid, |x| 0.3 * x[0] - 0.2 * x[1] + 0.7).unwrap();
        let star = legendre_transform(&phi).unwrap();
        let centre = star.grid().len() / 2;
        let y = star.grid().point(centre);
        assert!((y[0] - 0.3).abs() < 1e-12 && (y[1] + 0.2).abs() < 1e-12);
        assert!((star.values()[centre] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn double_transform_recovers_convex_input() {
        let grid = Grid::nodes(vec![-1.0, -1.0], vec![1.0, 1.0], vec![17, 17]).unwrap();
        let f = |x: &[f64]| x[0] * x[0] + 0.5 * x[1] * x[1] + 0.3 * x[0] * x[1] + 0.1 * x[0];
        let phi = PotentialGrid::from_fn(grid.clone(), f).unwrap();
        let star = legendre_transform(&phi).unwrap();
        let back = legendre_transform_on(&star, &grid).unwrap();
        assert!(interior_error(&back, f) <= 1e-8);
    }

    #[test]
    fn double_transform_is_convex_envelope() {
        // oracle: lower convex hull of the 1D samples by direct enumeration
        let grid = Grid::nodes(vec![-1.0], vec![1.0], vec![21]).unwrap();
        let f = |x: f64| (3.0 * x).sin() + x * x;
        let phi = PotentialGrid::from_fn(grid.clone(), |x| f(x[0])).unwrap();
        assert!(!phi.is_convex());
        let star = legendre_transform(&phi).unwrap();
        let back = legendre_transform_on(&star, &grid).unwrap();
        let xs: Vec<f64> = (0..21).map(|k| grid.coord(0, k)).collect();
        for k in 1..20 {
            let mut env = f(xs[k]);
            for i in 0..k {
                for j in k + 1..21 {
                    let t = (xs[k] - xs[i]) / (xs[j] - xs[i]);
                    env = env.min((1.0 - t) * f(xs[i]) + t * f(xs[j]));
                }
            }
            // a hull segment of slope σ is supported by a dual slope within half
            // a dual spacing, costing at most that times the domain width
            let bound = 0.5 * star.grid().spacing(0) * 2.0;
            assert!(back.values()[k] <= env + 1e-12);
            assert!(env - back.values()[k] <= bound, "node {k}: {} vs {env}", back.values()[k]);
        }
    }
}
