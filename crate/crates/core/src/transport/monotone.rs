//! Quantile couplings on the line and the circle.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::measures::{DiscreteMeasure, MeasureRef, Metric};
use crate::quantile::{circle_cost, Quantile};

use super::{Cost, Route, TransportMap, TransportPlan};

/// `F_μ` at the cell centres of a 1D density.
fn cdf_at_centres(mu: &GridDensity) -> Vec<f64> {
    let mut acc = 0.0;
    mu.masses()
        .into_iter()
        .map(|m| {
            let mid = acc + 0.5 * m;
            acc += m;
            mid
        })
        .collect()
}

/// Trapezoidal antiderivative of the displacement, zero at the first node.
pub(crate) fn integrate_displacement(x: &[f64], image: &[f64]) -> Vec<f64> {
    let mut psi = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    psi.push(0.0);
    for k in 1..x.len() {
        let d0 = image[k - 1] - x[k - 1];
        let d1 = image[k] - x[k];
        acc += 0.5 * (x[k] - x[k - 1]) * (d0 + d1);
        psi.push(acc);
    }
    psi
}

fn source_density<'a>(mu: MeasureRef<'a>) -> Result<&'a GridDensity> {
    match mu {
        MeasureRef::Discrete(_) => Err(Error::AtomicSource),
        MeasureRef::Grid(g) if g.dim() == 1 => Ok(g),
        MeasureRef::Grid(g) => Err(Error::Unsupported(format!("monotone maps in {} dimensions", g.dim()))),
    }
}

/// `T = F_ν⁻¹ ∘ F_μ` at the cell centres of `μ`, on the interval spanned by
/// the grid of `μ` (periodic grids are read as `[0, 1]`). The left-continuous
/// quantile is used, so atoms of `ν` produce steps. The potential is the
/// trapezoidal antiderivative of `T(x) - x`.
pub fn monotone_map_1d(mu: MeasureRef<'_>, nu: MeasureRef<'_>) -> Result<TransportMap> {
    let rho = source_density(mu)?;
    if nu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: nu.dim() });
    }
    let g = rho.grid();
    let grid = Grid::cells(g.lo().to_vec(), g.hi().to_vec(), g.shape().to_vec())?;
    let q = nu.quantile(Metric::Euclidean);
    let image: Vec<f64> = cdf_at_centres(rho).into_iter().map(|t| q.eval(t)).collect();
    let x = grid.points();
    let psi = integrate_displacement(&x, &image);
    TransportMap::on_grid(&grid, image, Route::Monotone)?.with_potential(psi)
}

/// Optimal circle map for cost `d^p` from a density on the unit circle: the
/// periodic quantile of `ν`, shifted by the optimal rotation, composed with
/// `F_μ`. Images are stored as the continuous lift.
pub fn circle_monotone_map(mu: &GridDensity, nu: MeasureRef<'_>, p: f64) -> Result<TransportMap> {
    if mu.dim() != 1 || !mu.grid().is_periodic() {
        return Err(Error::Unsupported("circle maps need a periodic 1D density".into()));
    }
    if nu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: nu.dim() });
    }
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("{p} < 1")));
    }
    let qa = MeasureRef::Grid(mu).quantile(Metric::Torus);
    let qb = nu.quantile(Metric::Torus);
    let (_, theta) = circle_cost(&qa, &qb, p);
    let image: Vec<f64> = cdf_at_centres(mu).into_iter().map(|t| periodic_quantile(&qb, theta + t)).collect();
    let grid = mu.grid();
    let x = grid.points();
    let map = TransportMap::on_grid(grid, image, Route::Monotone)?;
    // the stored lift may differ from the raw quantile by whole turns
    let psi = integrate_displacement(&x, map.image());
    map.with_potential(psi)
}

/// `Q~(s) = Q(s - ⌊s⌋) + ⌊s⌋`.
fn periodic_quantile(q: &Quantile, s: f64) -> f64 {
    let k = s.floor();
    let t = s - k;
    // t = 0 belongs to the previous turn under left continuity
    if t == 0.0 {
        return q.eval(1.0) + k - 1.0;
    }
    q.eval(t) + k
}

/// Monotone (north-west corner on sorted atoms) coupling of two 1D discrete
/// measures. Optimal for every convex cost of `x - y`.
pub fn monotone_plan_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &Cost) -> Result<TransportPlan> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Unsupported("monotone plans need 1D measures".into()));
    }
    cost.validate()?;
    let sorted = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.point(a)[0].total_cmp(&m.point(b)[0]).then(a.cmp(&b)));
        idx
    };
    let (ia, ib) = (sorted(mu), sorted(nu));
    let n = nu.len();
    let mut gamma = vec![0.0; mu.len() * n];
    let (mut p, mut q) = (0usize, 0usize);
    let mut ra = mu.weights()[ia[0]];
    let mut rb = nu.weights()[ib[0]];
    loop {
        let x = ra.min(rb);
        gamma[ia[p] * n + ib[q]] += x;
        ra -= x;
        rb -= x;
        let last_row = p + 1 == ia.len();
        let last_col = q + 1 == ib.len();
        if last_row && last_col {
            break;
        }
        if (ra <= rb && !last_row) || last_col {
            p += 1;
            ra += mu.weights()[ia[p]];
        } else {
            q += 1;
            rb += nu.weights()[ib[q]];
        }
    }
    // leftover round-off lands on the last pair
    if ra > 0.0 || rb > 0.0 {
        gamma[ia[p] * n + ib[q]] += ra.max(rb);
    }
    let costs = cost.matrix(mu, nu);
    Ok(TransportPlan::new(mu.clone(), nu.clone(), gamma, &costs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::pushforward;
    use crate::transport::{check_cyclical_monotonicity, solve_exact};

    fn box_uniform(lo: f64, hi: f64, n: usize) -> GridDensity {
        GridDensity::uniform(Grid::cells(vec![lo], vec![hi], vec![n]).unwrap()).unwrap()
    }

    #[test]
    fn identity_for_equal_measures() {
        let grid = Grid::cells(vec![0.0], vec![1.0], vec![32]).unwrap();
        let rho = GridDensity::from_fn(grid, |x| 1.0 + 0.5 * (6.0 * x[0]).sin()).unwrap();
        let t = monotone_map_1d((&rho).into(), (&rho).into()).unwrap();
        for i in 0..t.len() {
            assert!((t.image_point(i)[0] - t.domain_point(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_map() {
        let mu = box_uniform(0.0, 1.0, 64);
        let nu = box_uniform(0.0, 2.0, 64);
        let t = monotone_map_1d((&mu).into(), (&nu).into()).unwrap();
        for i in 0..t.len() {
            assert!((t.image_point(i)[0] - 2.0 * t.domain_point(i)[0]).abs() < 1e-9);
        }
        assert!(t.potential_residual().unwrap() < 1e-12);
    }

    #[test]
    fn step_map_onto_two_atoms() {
        let mu = box_uniform(0.0, 1.0, 16);
        let nu = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let t = monotone_map_1d((&mu).into(), (&nu).into()).unwrap();
        for i in 0..t.len() {
            let x = t.domain_point(i)[0];
            let expected = if x < 0.5 { 0.0 } else { 1.0 };
            assert_eq!(t.image_point(i)[0], expected);
        }
        assert!(check_cyclical_monotonicity(&t, usize::MAX, 0) >= 0.0);
    }

    #[test]
    fn rejects_atomic_source() {
        let d = DiscreteMeasure::dirac(&[0.0]).unwrap();
        assert!(matches!(monotone_map_1d((&d).into(), (&d).into()), Err(Error::AtomicSource)));
    }

    #[test]
    fn pushforward_cdf_matches_target() {
        let mu = box_uniform(0.0, 1.0, 64);
        let nu = DiscreteMeasure::new(1, vec![0.1, 0.35, 0.8], vec![0.2, 0.5, 0.3]).unwrap();
        let t = monotone_map_1d((&mu).into(), (&nu).into()).unwrap();
        let push = pushforward(&t, &DiscreteMeasure::from_grid(&mu)).unwrap();
        for y in [0.0, 0.1, 0.2, 0.35, 0.5, 0.8, 0.9] {
            let f = |m: &DiscreteMeasure| m.iter().filter(|(x, _)| x[0] <= y).map(|(_, w)| w).sum::<f64>();
            assert!((f(&push) - f(&nu)).abs() <= 1.0 / 64.0 + 1e-9, "y = {y}");
        }
    }

    #[test]
    fn circle_map_translates_compact_bump() {
        let grid = Grid::torus(1, 128).unwrap();
        let bump = |c: f64| {
            move |x: &[f64]| {
                let d = crate::grid::lift_delta(x[0] - c, 1.0) / 0.15;
                if d.abs() < 1.0 {
                    (1.0 - d * d).powi(2)
                } else {
                    0.0
                }
            }
        };
        let mu = GridDensity::from_fn(grid.clone(), bump(0.9)).unwrap();
        let nu = GridDensity::from_fn(grid, bump(0.0)).unwrap();
        let t = circle_monotone_map(&mu, (&nu).into(), 2.0).unwrap();
        for i in 0..t.len() {
            if mu.values()[i] > 1e-3 {
                let d = t.image_point(i)[0] - t.domain_point(i)[0];
                assert!((d - 0.1).abs() < 2.0 / 128.0, "node {i}: displacement {d}");
            }
        }
    }

    #[test]
    fn plan_matches_lp() {
        let mu = DiscreteMeasure::new(1, vec![0.3, -1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = DiscreteMeasure::new(1, vec![0.0, 1.5], vec![0.6, 0.4]).unwrap();
        for p in [1.0, 1.5, 2.0] {
            let cost = Cost::pow(p);
            let mono = monotone_plan_1d(&mu, &nu, &cost).unwrap();
            let lp = solve_exact(&mu, &nu, &cost).unwrap();
            assert!((mono.cost() - lp.cost()).abs() < 1e-12);
            let (er, ec) = mono.marginal_errors();
            assert!(er < 1e-15 && ec < 1e-15);
        }
    }
}
