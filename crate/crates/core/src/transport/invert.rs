//! Inverses of monotone and gradient-of-convex maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::legendre::{legendre_transform_on, PotentialGrid};
use super::monotone::integrate_displacement;
use super::{Route, TransportMap};

const MONOTONE_TOL: f64 = 1e-12;

/// Inverse map on `target_grid`.
///
/// - 1D nondecreasing maps: exact inverse of the piecewise-linear interpolant
///   (linear extrapolation from the edge segments). The potential is the exact
///   conjugate of the piecewise-quadratic potential whose derivative is that
///   interpolant. Periodic maps are inverted as circle lifts.
/// - Maps with a potential: the conjugate of `|x|²/2 + ψ` gives the coarse
///   inverse, refined by Newton steps on the map itself (the entropic dual when
///   present, the multilinear interpolant otherwise).
pub fn invert_map(map: &TransportMap, target_grid: &Grid) -> Result<TransportMap> {
    if target_grid.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: target_grid.dim() });
    }
    if map.dim() == 1 && is_monotone_1d(map) {
        return if map.is_periodic() { invert_circle(map, target_grid) } else { invert_line(map, target_grid) };
    }
    if map.potential().is_none() {
        return Err(Error::NotInvertible);
    }
    invert_gradient(map, target_grid)
}

fn sorted_nodes(map: &TransportMap) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| map.domain_point(a)[0].total_cmp(&map.domain_point(b)[0]));
    let x = order.iter().map(|&i| map.domain_point(i)[0]).collect();
    let s = order.iter().map(|&i| map.image_point(i)[0]).collect();
    (x, s, order)
}

fn is_monotone_1d(map: &TransportMap) -> bool {
    let (_, s, _) = sorted_nodes(map);
    s.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
}

/// Position `k` and local offset `t = x - x_k` of the inverse of the
/// piecewise-linear map `(x, s)` at `y`.
fn inverse_segment(x: &[f64], s: &[f64], y: f64) -> (usize, f64) {
    let n = x.len();
    let seg = |k: usize, y: f64| {
        let ds = s[k + 1] - s[k];
        let dx = x[k + 1] - x[k];
        if ds > 0.0 {
            (k, dx * (y - s[k]) / ds)
        } else {
            (k, 0.0)
        }
    };
    if y <= s[0] {
        return seg(0, y);
    }
    if y >= s[n - 1] {
        return seg(n - 2, y);
    }
    let k = s.partition_point(|&v| v <= y) - 1;
    seg(k.min(n - 2), y)
}

fn invert_line(map: &TransportMap, target_grid: &Grid) -> Result<TransportMap> {
    let (x, s, order) = sorted_nodes(map);
    if x.len() < 2 {
        return Err(Error::NotInvertible);
    }
    let psi: Vec<f64> = match map.potential() {
        Some(p) => order.iter().map(|&i| p[i]).collect(),
        None => integrate_displacement(&x, &s),
    };
    let u: Vec<f64> = x.iter().zip(&psi).map(|(xk, p)| 0.5 * xk * xk + p).collect();
    let ys = target_grid.points();
    let mut image = Vec::with_capacity(ys.len());
    let mut potential = Vec::with_capacity(ys.len());
    for &y in &ys {
        let (k, t) = inverse_segment(&x, &s, y);
        let h = x[k + 1] - x[k];
        let xt = x[k] + t;
        let us = u[k] + s[k] * t + (s[k + 1] - s[k]) * t * t / (2.0 * h);
        image.push(xt);
        potential.push(xt * y - us - 0.5 * y * y);
    }
    TransportMap::on_grid(target_grid, image, Route::Inverse)?.with_potential(potential)
}

fn invert_circle(map: &TransportMap, target_grid: &Grid) -> Result<TransportMap> {
    if !target_grid.is_periodic() {
        return Err(Error::InvalidGrid("circle maps invert onto periodic grids".into()));
    }
    let (mut x, mut s, _) = sorted_nodes(map);
    // close the turn: the first node one period later
    x.push(x[0] + 1.0);
    s.push(s[0] + 1.0);
    let ys = target_grid.points();
    let image: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let shift = (y - s[0]).floor();
            let yl = y - shift;
            let (k, t) = inverse_segment(&x, &s, yl);
            x[k] + t + shift
        })
        .collect();
    let out = TransportMap::on_grid(target_grid, image, Route::Inverse)?;
    let psi = integrate_displacement(&ys, out.image());
    out.with_potential(psi)
}

fn invert_gradient(map: &TransportMap, target_grid: &Grid) -> Result<TransportMap> {
    let grid = map.grid().ok_or(Error::NotInvertible)?;
    if grid.is_periodic() {
        return Err(Error::Unsupported("inverting gradient maps on periodic grids".into()));
    }
    let dim = map.dim();
    let psi = map.potential().expect("checked by caller");
    let u: Vec<f64> =
        (0..map.len()).map(|i| 0.5 * map.domain_point(i).iter().map(|v| v * v).sum::<f64>() + psi[i]).collect();
    let u_grid = PotentialGrid::new(grid.clone(), u.clone())?;
    let conj = legendre_transform_on(&u_grid, target_grid)?;
    let xs = map.domain();
    let ys = target_grid.points();
    let solved: Vec<(Vec<f64>, f64)> = ys
        .par_chunks(dim)
        .enumerate()
        .map(|(l, y)| {
            // discrete argmax of x·y − u(x)
            let best = (0..map.len())
                .max_by(|&a, &b| {
                    let va = dot(&xs[a * dim..(a + 1) * dim], y) - u[a];
                    let vb = dot(&xs[b * dim..(b + 1) * dim], y) - u[b];
                    va.total_cmp(&vb)
                })
                .expect("maps are nonempty");
            let start = &xs[best * dim..(best + 1) * dim];
            let half_sq = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
            if let Some(dual) = map.dual() {
                if let Some(x) = dual.invert(y, start) {
                    let (ux, _) = dual.potential_and_gradient(&x);
                    let value = dot(&x, y) - ux - half_sq;
                    return (x, value);
                }
            } else if let Some(x) = newton_on_interpolant(map, grid, y, start) {
                let value = conj.values()[l] - half_sq;
                return (x, value);
            }
            (start.to_vec(), conj.values()[l] - half_sq)
        })
        .collect();
    let mut image = Vec::with_capacity(ys.len());
    let mut potential = Vec::with_capacity(target_grid.len());
    for (x, p) in solved {
        image.extend(x);
        potential.push(p);
    }
    TransportMap::on_grid(target_grid, image, Route::Inverse)?.with_potential(potential)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Solves `S(x) = y` for the multilinear interpolant of `S`, keeping `x`
/// inside the grid box.
fn newton_on_interpolant(map: &TransportMap, grid: &Grid, y: &[f64], start: &[f64]) -> Option<Vec<f64>> {
    let d = map.dim();
    let clampx = |x: &mut [f64]| {
        for a in 0..d {
            x[a] = x[a].clamp(grid.lo()[a], grid.hi()[a]);
        }
    };
    let residual = |x: &[f64]| -> Option<Vec<f64>> {
        let sx = map.eval(x)?;
        Some(sx.iter().zip(y).map(|(a, b)| a - b).collect())
    };
    let mut x = start.to_vec();
    let mut r = residual(&x)?;
    let h = 1e-3 * grid.max_spacing();
    for _ in 0..50 {
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= 1e-12 {
            return Some(x);
        }
        let mut jac = vec![0.0; d * d];
        for b in 0..d {
            let mut xp = x.clone();
            let step = if x[b] + h <= grid.hi()[b] { h } else { -h };
            xp[b] += step;
            let rp = residual(&xp)?;
            for a in 0..d {
                jac[a * d + b] = (rp[a] - r[a]) / step;
            }
        }
        let dx = super::brenier::solve_small(&jac, &r, d)?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let mut trial: Vec<f64> = x.iter().zip(&dx).map(|(a, s)| a - t * s).collect();
            clampx(&mut trial);
            if let Some(rt) = residual(&trial) {
                if rt.iter().map(|v| v * v).sum::<f64>().sqrt() < rn {
                    x = trial;
                    r = rt;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    (rn <= 1e-9).then_some(x)
}
