//! Optimal couplings and transport maps.
//!
//! - [`solve_exact`]: transportation simplex with a dual certificate.
//! - [`solve_sinkhorn`]: log-domain entropic solver with ε-scaling and rounding
//!   to an exactly feasible plan.
//! - [`monotone_map_1d`], [`circle_monotone_map`], [`monotone_plan_1d`]:
//!   quantile couplings on the line and the circle.
//! - [`brenier_map`]: entropic Brenier map (barycentric projection, exact
//!   gradient of a log-sum-exp convex potential).
//! - [`legendre_transform`], [`invert_map`]: discrete convex duality.
//! - [`stability_experiment`]: convergence in probability of optimal maps.

mod brenier;
mod exact;
mod invert;
mod legendre;
mod monotone;
mod sinkhorn;
mod stability;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measures::{DiscreteMeasure, Metric};

pub use brenier::{brenier_map, EntropicDual};
pub use exact::{solve_exact, solve_exact_with_matrix};
pub use invert::invert_map;
pub use legendre::{legendre_transform, legendre_transform_on, PotentialGrid};
pub use monotone::{circle_monotone_map, monotone_map_1d, monotone_plan_1d};
pub use sinkhorn::solve_sinkhorn;
pub use stability::stability_experiment;

/// Tolerance for marginal constraints and dual certificates.
pub const PLAN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `d(x, y)^2`
    SquaredDistance,
    /// `d(x, y)^p`
    DistancePow(f64),
    /// `-x·y` (Euclidean only)
    NegativeDot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub kind: CostKind,
    pub metric: Metric,
}

impl Cost {
    pub fn squared() -> Self {
        Cost { kind: CostKind::SquaredDistance, metric: Metric::Euclidean }
    }

    pub fn pow(p: f64) -> Self {
        Cost { kind: CostKind::DistancePow(p), metric: Metric::Euclidean }
    }

    pub fn negative_dot() -> Self {
        Cost { kind: CostKind::NegativeDot, metric: Metric::Euclidean }
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            CostKind::SquaredDistance => self.metric.distance(x, y).powi(2),
            CostKind::DistancePow(p) => self.metric.distance(x, y).powf(p),
            CostKind::NegativeDot => -x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self.kind {
            CostKind::DistancePow(p) if !(p >= 1.0) => Err(Error::param("cost", format!("exponent {p} < 1"))),
            CostKind::NegativeDot if self.metric != Metric::Euclidean => {
                Err(Error::Unsupported("negative dot product on the torus".into()))
            }
            _ => Ok(()),
        }
    }

    /// Exponent when the cost is a convex power of the distance.
    pub(crate) fn exponent(&self) -> Option<f64> {
        match self.kind {
            CostKind::SquaredDistance => Some(2.0),
            CostKind::DistancePow(p) => Some(p),
            CostKind::NegativeDot => None,
        }
    }

    pub(crate) fn matrix(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<f64> {
        let mut c = Vec::with_capacity(mu.len() * nu.len());
        for (x, _) in mu.iter() {
            for (y, _) in nu.iter() {
                c.push(self.eval(x, y));
            }
        }
        c
    }
}

/// Coupling `γ ∈ Γ(μ, ν)` stored densely (`rows × cols`, row-major).
#[derive(Clone, Debug)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    gamma: Vec<f64>,
    cost: f64,
    duals: Option<(Vec<f64>, Vec<f64>)>,
    converged: bool,
    iterations: usize,
}

impl TransportPlan {
    pub(crate) fn new(source: DiscreteMeasure, target: DiscreteMeasure, gamma: Vec<f64>, costs: &[f64]) -> Self {
        let cost = gamma.iter().zip(costs).map(|(g, c)| g * c).sum();
        TransportPlan { source, target, gamma, cost, duals: None, converged: true, iterations: 0 }
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn rows(&self) -> usize {
        self.source.len()
    }

    pub fn cols(&self) -> usize {
        self.target.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.cols() + j]
    }

    /// `Σ γ_ij c(x_i, y_j)`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Dual potentials `(u, v)` when the solver certifies optimality.
    pub fn duals(&self) -> Option<(&[f64], &[f64])> {
        self.duals.as_ref().map(|(u, v)| (u.as_slice(), v.as_slice()))
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest absolute deviation of row and column sums from the marginals.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let (m, n) = (self.rows(), self.cols());
        let mut row = 0.0f64;
        for i in 0..m {
            let s: f64 = self.gamma[i * n..(i + 1) * n].iter().sum();
            row = row.max((s - self.source.weights()[i]).abs());
        }
        let mut col = 0.0f64;
        for j in 0..n {
            let s: f64 = (0..m).map(|i| self.gamma[i * n + j]).sum();
            col = col.max((s - self.target.weights()[j]).abs());
        }
        (row, col)
    }

    /// Worst dual infeasibility `max(0, u_i + v_j - c_ij)` and worst
    /// complementary-slackness product `γ_ij |c_ij - u_i - v_j|`.
    pub fn certificate(&self, cost: &Cost) -> Option<(f64, f64)> {
        let (u, v) = self.duals()?;
        let mut infeasible = 0.0f64;
        let mut slack = 0.0f64;
        for (i, (x, _)) in self.source.iter().enumerate() {
            for (j, (y, _)) in self.target.iter().enumerate() {
                let r = cost.eval(x, y) - u[i] - v[j];
                infeasible = infeasible.max(-r);
                slack = slack.max(self.get(i, j) * r.abs());
            }
        }
        Some((infeasible.max(0.0), slack))
    }

    /// Nonzero entries `(i, j, γ_ij)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.cols();
        self.gamma.iter().enumerate().filter(|(_, &g)| g > 0.0).map(move |(k, &g)| (k / n, k % n, g))
    }
}

/// How a map was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Explicit,
    Monotone,
    Brenier,
    Moser,
    Composed,
    Inverse,
}

/// Deterministic map sampled at domain points.
///
/// Maps sampled on a grid are defined everywhere on the grid domain by
/// multilinear interpolation. On periodic grids the stored images are the
/// continuous lift `x + d(x)`; [`TransportMap::eval_wrapped`] reduces them to
/// the torus.
#[derive(Clone, Debug)]
pub struct TransportMap {
    dim: usize,
    domain: Vec<f64>,
    image: Vec<f64>,
    potential: Option<Vec<f64>>,
    route: Route,
    grid: Option<Grid>,
    dual: Option<EntropicDual>,
}

impl TransportMap {
    /// Map given on an explicit list of points (flattened).
    pub fn new(dim: usize, domain: Vec<f64>, image: Vec<f64>, route: Route) -> Result<Self> {
        if dim == 0 || domain.len() % dim != 0 || domain.is_empty() {
            return Err(Error::InvalidMeasure("map domain does not form points".into()));
        }
        if domain.len() != image.len() {
            return Err(Error::DimensionMismatch { expected: domain.len(), got: image.len() });
        }
        Ok(TransportMap { dim, domain, image, potential: None, route, grid: None, dual: None })
    }

    pub fn from_fn(dim: usize, domain: Vec<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let image = domain.chunks(dim.max(1)).flat_map(&f).collect();
        Self::new(dim, domain, image, Route::Explicit)
    }

    /// Map sampled at every point of `grid`. On periodic grids each
    /// displacement is reduced to its nearest lift.
    pub fn on_grid(grid: &Grid, mut image: Vec<f64>, route: Route) -> Result<Self> {
        let dim = grid.dim();
        let domain = grid.points();
        if image.len() != domain.len() {
            return Err(Error::DimensionMismatch { expected: domain.len(), got: image.len() });
        }
        if grid.is_periodic() {
            for (k, y) in image.iter_mut().enumerate() {
                let a = k % dim;
                *y = domain[k] + grid.lift_diff(a, *y - domain[k]);
            }
        }
        Ok(TransportMap { dim, domain, image, potential: None, route, grid: Some(grid.clone()), dual: None })
    }

    pub fn grid_from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let image = grid.points().chunks(grid.dim()).flat_map(f).collect();
        Self::on_grid(grid, image, Route::Explicit)
    }

    pub fn identity_on(grid: &Grid) -> Self {
        let domain = grid.points();
        TransportMap {
            dim: grid.dim(),
            image: domain.clone(),
            domain,
            potential: None,
            route: Route::Explicit,
            grid: Some(grid.clone()),
            dual: None,
        }
    }

    /// Attaches potential values `ψ` at the domain points.
    pub fn with_potential(mut self, psi: Vec<f64>) -> Result<Self> {
        if psi.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: psi.len() });
        }
        self.potential = Some(psi);
        Ok(self)
    }

    pub(crate) fn with_dual(mut self, dual: EntropicDual) -> Self {
        self.dual = Some(dual);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.domain.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn domain(&self) -> &[f64] {
        &self.domain
    }

    pub fn image(&self) -> &[f64] {
        &self.image
    }

    pub fn domain_point(&self, i: usize) -> &[f64] {
        &self.domain[i * self.dim..(i + 1) * self.dim]
    }

    pub fn image_point(&self, i: usize) -> &[f64] {
        &self.image[i * self.dim..(i + 1) * self.dim]
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }

    pub fn route(&self) -> Route {
        self.route
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn dual(&self) -> Option<&EntropicDual> {
        self.dual.as_ref()
    }

    pub fn is_periodic(&self) -> bool {
        self.grid.as_ref().is_some_and(|g| g.is_periodic())
    }

    /// Images reduced to the fundamental domain on periodic grids.
    pub fn image_wrapped(&self) -> Vec<f64> {
        let mut out = self.image.clone();
        if let Some(g) = self.grid.as_ref().filter(|g| g.is_periodic()) {
            for y in out.chunks_mut(self.dim) {
                g.wrap(y);
            }
        }
        out
    }

    /// Evaluates the map at `x`, returning the lifted image on periodic grids.
    /// Explicit maps are defined only at their domain points.
    pub fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x.len() != self.dim {
            return None;
        }
        match &self.grid {
            Some(g) if g.is_periodic() => {
                let mut d = vec![0.0; self.dim];
                g.interp_stencil(x, |k, w| {
                    for a in 0..self.dim {
                        d[a] += w * (self.image[k * self.dim + a] - self.domain[k * self.dim + a]);
                    }
                });
                Some(x.iter().zip(d).map(|(xa, da)| xa + da).collect())
            }
            Some(g) => {
                let inside = (0..self.dim).all(|a| x[a] >= g.lo()[a] - 1e-12 && x[a] <= g.hi()[a] + 1e-12);
                if !inside {
                    return None;
                }
                if let Some(dual) = &self.dual {
                    return Some(dual.map(x));
                }
                let mut y = vec![0.0; self.dim];
                g.interp_stencil(x, |k, w| {
                    for a in 0..self.dim {
                        y[a] += w * self.image[k * self.dim + a];
                    }
                });
                Some(y)
            }
            None => (0..self.len())
                .find(|&i| self.domain_point(i).iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12))
                .map(|i| self.image_point(i).to_vec()),
        }
    }

    pub fn eval_wrapped(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut y = self.eval(x)?;
        if let Some(g) = self.grid.as_ref().filter(|g| g.is_periodic()) {
            g.wrap(&mut y);
        }
        Some(y)
    }

    /// `outer ∘ self`, sampled at the domain points of `self`.
    pub fn then(&self, outer: &TransportMap) -> Result<TransportMap> {
        if outer.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: outer.dim() });
        }
        let mut image = Vec::with_capacity(self.image.len());
        for i in 0..self.len() {
            let y = self.image_point(i);
            image.extend(outer.eval(y).ok_or_else(|| Error::MapUndefined(y.to_vec()))?);
        }
        match &self.grid {
            Some(g) => TransportMap::on_grid(g, image, Route::Composed),
            None => TransportMap::new(self.dim, self.domain.clone(), image, Route::Composed),
        }
    }

    /// Largest deviation between `T(x) - x` and the discrete gradient of the
    /// stored potential, measured on grid edges: along every axis,
    /// `(ψ_{k+1} - ψ_k)/h` against the mean of the two displacements.
    /// Maps carrying an entropic dual are checked against the closed-form
    /// gradient of the dual potential instead.
    pub fn potential_residual(&self) -> Option<f64> {
        let psi = self.potential.as_ref()?;
        if let Some(dual) = &self.dual {
            let mut worst = 0.0f64;
            for i in 0..self.len() {
                let x = self.domain_point(i);
                let (u, grad) = dual.potential_and_gradient(x);
                let half_sq: f64 = x.iter().map(|v| 0.5 * v * v).sum();
                worst = worst.max((u - half_sq - psi[i]).abs());
                for a in 0..self.dim {
                    worst = worst.max((grad[a] - self.image_point(i)[a]).abs());
                }
            }
            return Some(worst);
        }
        let g = self.grid.as_ref()?;
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            let idx = g.multi_index(i);
            for a in 0..self.dim {
                if idx[a] + 1 >= g.shape()[a] {
                    continue;
                }
                let mut nidx = idx.clone();
                nidx[a] += 1;
                let j = g.flat_index(&nidx);
                let h = g.coord(a, idx[a] + 1) - g.coord(a, idx[a]);
                let di = self.image_point(i)[a] - self.domain_point(i)[a];
                let dj = self.image_point(j)[a] - self.domain_point(j)[a];
                let fd = (psi[j] - psi[i]) / h;
                worst = worst.max((fd - 0.5 * (di + dj)).abs());
            }
        }
        Some(worst)
    }
}

/// `min (x_i − x_j)·(T(x_i) − T(x_j))` over sampled pairs. All pairs are used
/// when `n_pairs` covers them.
pub fn check_cyclical_monotonicity(map: &TransportMap, n_pairs: usize, seed: u64) -> f64 {
    let n = map.len();
    let total = n * (n.saturating_sub(1)) / 2;
    let slack = |i: usize, j: usize| -> f64 {
        let (xi, xj) = (map.domain_point(i), map.domain_point(j));
        let (yi, yj) = (map.image_point(i), map.image_point(j));
        (0..map.dim()).map(|a| (xi[a] - xj[a]) * (yi[a] - yj[a])).sum()
    };
    let mut worst = f64::INFINITY;
    if n_pairs >= total {
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.min(slack(i, j));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            worst = worst.min(slack(i, j));
        }
    }
    if worst.is_infinite() {
        0.0
    } else {
        worst
    }
}

/// Plan `(Id × T)_* μ` of a map defined at the atoms of `μ`, with targets the
/// distinct images.
pub fn induced_plan(map: &TransportMap, mu: &DiscreteMeasure, cost: &Cost) -> Result<TransportPlan> {
    let nu = crate::measures::pushforward(map, mu)?;
    let mut gamma = vec![0.0; mu.len() * nu.len()];
    for (i, (x, w)) in mu.iter().enumerate() {
        let y = map.eval_wrapped(x).ok_or_else(|| Error::MapUndefined(x.to_vec()))?;
        let j = (0..nu.len())
            .find(|&j| nu.point(j).iter().zip(&y).all(|(a, b)| (a - b).abs() <= crate::measures::MERGE_TOL))
            .or_else(|| {
                // merged atoms can sit a little further than MERGE_TOL from the
                // representative; fall back to the nearest one
                (0..nu.len()).min_by(|&a, &b| {
                    let da = Metric::Euclidean.distance(nu.point(a), &y);
                    let db = Metric::Euclidean.distance(nu.point(b), &y);
                    da.total_cmp(&db)
                })
            })
            .expect("pushforward is nonempty");
        gamma[i * nu.len() + j] += w;
    }
    let costs = cost.matrix(mu, &nu);
    Ok(TransportPlan::new(mu.clone(), nu, gamma, &costs))
}
