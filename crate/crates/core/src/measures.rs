//! Discrete and grid measures, moments, pushforwards and Wasserstein distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow;
use crate::grid::{lift_delta, Grid, GridDensity};
use crate::quantile::{circle_cost, quantile_cost, Quantile};
use crate::transport::{self, Cost, TransportMap};

/// Tolerance on the total weight of a [`DiscreteMeasure`]; supports with more
/// than `WEIGHT_SUM_TOL / ε_mach` atoms allow `n·ε_mach` for summation error.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Coordinates closer than this (sup norm) are merged by [`pushforward`].
pub const MERGE_TOL: f64 = 1e-12;
/// Largest support accepted by the exact LP.
pub const LP_SIZE_LIMIT: usize = 4096;

/// Ground metric on the ambient space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Quotient metric of the unit torus `[0,1)^d`.
    Torus,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = match self {
                    Metric::Euclidean => x - y,
                    Metric::Torus => lift_delta(x - y, 1.0),
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Weighted point cloud in `R^d`, `d ∈ {1,2,3}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// `points` is flattened: atom `i` occupies `points[i*dim..(i+1)*dim]`.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidMeasure(format!("dimension {dim} not in 1..=3")));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch { expected: dim * weights.len(), got: points.len() });
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate at {i}")));
        }
        if let Some(i) = weights.iter().position(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidMeasure(format!("weight {} at atom {i}", weights[i])));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL.max(weights.len() as f64 * f64::EPSILON) {
            return Err(Error::InvalidMeasure(format!("weights sum to {sum}, not 1")));
        }
        Ok(DiscreteMeasure { dim, points, weights })
    }

    /// Like [`DiscreteMeasure::new`], rescaling the weights to sum to one.
    pub fn normalized(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidMeasure(format!("cannot normalise weights with sum {sum}")));
        }
        Self::new(dim, points, weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("ragged point list".into()));
        }
        Self::new(dim, points.concat(), weights)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![1.0])
    }

    /// Equal weights on the given atoms (flattened).
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        Self::normalized(dim, points, vec![1.0; n])
    }

    /// Atoms at the cell centres of a grid density, weighted by cell mass.
    pub fn from_grid(rho: &GridDensity) -> Self {
        DiscreteMeasure { dim: rho.dim(), points: rho.grid().points(), weights: rho.masses() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks(self.dim).zip(self.weights.iter().copied())
    }

    /// Merges atoms whose coordinates agree within `tol`, summing weights.
    /// Atoms are returned in lexicographic order.
    pub fn merged(&self, tol: f64) -> DiscreteMeasure {
        let dim = self.dim;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (self.point(a), self.point(b));
            pa.iter().zip(pb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut points: Vec<f64> = Vec::with_capacity(self.points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        for i in order {
            let p = self.point(i);
            let same = weights.last().is_some() && {
                let last = &points[points.len() - dim..];
                last.iter().zip(p).all(|(a, b)| (a - b).abs() <= tol)
            };
            if same {
                *weights.last_mut().unwrap() += self.weights[i];
            } else {
                points.extend_from_slice(p);
                weights.push(self.weights[i]);
            }
        }
        DiscreteMeasure { dim, points, weights }
    }
}

/// Borrowed view of either measure representation.
#[derive(Clone, Copy, Debug)]
pub enum MeasureRef<'a> {
    Discrete(&'a DiscreteMeasure),
    Grid(&'a GridDensity),
}

impl<'a> From<&'a DiscreteMeasure> for MeasureRef<'a> {
    fn from(m: &'a DiscreteMeasure) -> Self {
        MeasureRef::Discrete(m)
    }
}

impl<'a> From<&'a GridDensity> for MeasureRef<'a> {
    fn from(m: &'a GridDensity) -> Self {
        MeasureRef::Grid(m)
    }
}

impl MeasureRef<'_> {
    pub fn dim(&self) -> usize {
        match self {
            MeasureRef::Discrete(m) => m.dim(),
            MeasureRef::Grid(g) => g.dim(),
        }
    }

    /// Quantile function of a 1D measure. Torus positions are wrapped into
    /// `[0, 1)` first.
    pub(crate) fn quantile(&self, metric: Metric) -> Quantile {
        match self {
            MeasureRef::Discrete(m) => {
                let atoms: Vec<(f64, f64)> = m
                    .iter()
                    .map(|(x, w)| {
                        let x = if metric == Metric::Torus { x[0].rem_euclid(1.0) } else { x[0] };
                        (x, w)
                    })
                    .collect();
                Quantile::from_atoms(&atoms)
            }
            MeasureRef::Grid(g) => {
                let grid = g.grid();
                let h = grid.spacing(0);
                let lo = grid.lo()[0];
                let masses = g.masses();
                Quantile::from_cells(
                    masses.into_iter().enumerate().map(|(k, m)| (lo + k as f64 * h, lo + (k + 1) as f64 * h, m)),
                )
            }
        }
    }
}

/// Seeded draws of a random variable.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalSample {
    dim: usize,
    draws: Vec<f64>,
    seed: u64,
}

impl EmpiricalSample {
    pub fn from_draws(dim: usize, draws: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || draws.is_empty() || draws.len() % dim != 0 {
            return Err(Error::InvalidMeasure(format!("{} coordinates do not form {dim}-d draws", draws.len())));
        }
        Ok(EmpiricalSample { dim, draws, seed })
    }

    /// `n` independent draws from a grid density: a cell by mass, then a
    /// uniform point inside it.
    pub fn from_density(rho: &GridDensity, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampler = DensitySampler::new(rho);
        let draws = (0..n).flat_map(|_| sampler.draw(&mut rng)).collect();
        Self::from_draws(rho.dim(), draws, seed)
    }

    /// `n` independent draws from the atoms of a discrete measure.
    pub fn from_measure(mu: &DiscreteMeasure, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cdf = cumulative(mu.weights());
        let draws = (0..n)
            .flat_map(|_| {
                let i = pick(&cdf, rng.gen::<f64>());
                mu.point(i).to_vec()
            })
            .collect();
        Self::from_draws(mu.dim(), draws, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }
}

pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

pub(crate) fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap();
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// Draws points from a [`GridDensity`] (cell by mass, uniform inside).
pub(crate) struct DensitySampler<'a> {
    rho: &'a GridDensity,
    cdf: Vec<f64>,
}

impl<'a> DensitySampler<'a> {
    pub fn new(rho: &'a GridDensity) -> Self {
        DensitySampler { rho, cdf: cumulative(rho.values()) }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let grid = self.rho.grid();
        let cell = pick(&self.cdf, rng.gen::<f64>());
        let idx = grid.multi_index(cell);
        idx.iter()
            .enumerate()
            .map(|(a, &k)| {
                let h = grid.spacing(a);
                grid.lo()[a] + (k as f64 + rng.gen::<f64>()) * h
            })
            .collect()
    }
}

/// `∫ d(base, x)^p dμ(x)`: exact sum for atoms, midpoint rule for grids.
pub fn p_moment(mu: MeasureRef<'_>, p: f64, base: &[f64], metric: Metric) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("{p} < 1")));
    }
    if base.len() != mu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: base.len() });
    }
    let total = match mu {
        MeasureRef::Discrete(m) => m.iter().map(|(x, w)| w * metric.distance(base, x).powf(p)).sum(),
        MeasureRef::Grid(g) => {
            let grid = g.grid();
            g.masses().iter().enumerate().map(|(i, &m)| m * metric.distance(base, &grid.point(i)).powf(p)).sum()
        }
    };
    Ok(total)
}

/// `T_*μ`: atoms moved by `T`, weights untouched, coincident images merged.
pub fn pushforward(map: &TransportMap, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if map.dim() != mu.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: mu.dim() });
    }
    let mut points = Vec::with_capacity(mu.points().len());
    for (x, _) in mu.iter() {
        let y = map.eval_wrapped(x).ok_or_else(|| Error::MapUndefined(x.to_vec()))?;
        points.extend(y);
    }
    let out = DiscreteMeasure { dim: map.dim(), points, weights: mu.weights().to_vec() };
    Ok(out.merged(MERGE_TOL))
}

/// Particle estimate of `T_*ρ` on the grid of `ρ`.
///
/// Particles sit at sub-cell centres (a power-of-two count per axis, chosen so
/// that at least `n_particles` are used), carry the mass of their cell, move by
/// the multilinear interpolant of `T`, and are binned back to the grid.
pub fn grid_pushforward(map: &TransportMap, rho: &GridDensity, n_particles: usize) -> Result<GridDensity> {
    let grid = rho.grid();
    match map.grid() {
        Some(g) if g.same_as(grid) => {}
        _ => return Err(Error::InvalidGrid("map must be sampled on the density grid".into())),
    }
    let cells = grid.len();
    if n_particles < cells {
        return Err(Error::param("n_particles", format!("{n_particles} < {cells} grid cells")));
    }
    let dim = grid.dim();
    let mut m = 1usize;
    while m.pow(dim as u32) * cells < n_particles {
        m *= 2;
    }
    let sub = m.pow(dim as u32);
    let images: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let idx = grid.multi_index(c);
            let mut out = Vec::with_capacity(sub * dim);
            let mut x = vec![0.0; dim];
            for s in 0..sub {
                let mut rem = s;
                for a in (0..dim).rev() {
                    let sa = rem % m;
                    rem /= m;
                    let h = grid.spacing(a);
                    x[a] = grid.lo()[a] + (idx[a] as f64 + (sa as f64 + 0.5) / m as f64) * h;
                }
                let y = map.eval_wrapped(&x).expect("grid maps are defined on their grid");
                out.extend(y);
            }
            out
        })
        .collect();
    let mut hist = vec![0.0; cells];
    for (c, ys) in images.iter().enumerate() {
        let w = rho.values()[c];
        if w == 0.0 {
            continue;
        }
        for y in ys.chunks(dim) {
            let k = grid.locate(y, true).expect("clamped lookup always succeeds");
            hist[k] += w;
        }
    }
    GridDensity::normalized(grid.clone(), hist)
}

/// Exact `W_p` on the line (`Metric::Euclidean`) or the circle
/// (`Metric::Torus`) via quantile functions. On the circle the periodic
/// quantile is additionally optimised over its shift.
pub fn wasserstein_1d(mu: MeasureRef<'_>, nu: MeasureRef<'_>, p: f64, metric: Metric) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("{p} < 1")));
    }
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::Unsupported(format!("wasserstein_1d on {}-d measures", m.dim())));
        }
    }
    let (qa, qb) = (mu.quantile(metric), nu.quantile(metric));
    let cost = match metric {
        Metric::Euclidean => quantile_cost(&qa, &qb, p),
        Metric::Torus => circle_cost(&qa, &qb, p).0,
    };
    Ok(cost.max(0.0).powf(1.0 / p))
}

/// `W_p` from the exact LP with cost `d(x, y)^p`.
pub fn wasserstein_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, metric: Metric) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("{p} < 1")));
    }
    if mu.len() > LP_SIZE_LIMIT || nu.len() > LP_SIZE_LIMIT {
        return Err(Error::TooLarge { rows: mu.len(), cols: nu.len(), limit: LP_SIZE_LIMIT });
    }
    let plan = transport::solve_exact(mu, nu, &Cost::pow(p).with_metric(metric))?;
    Ok(plan.cost().max(0.0).powf(1.0 / p))
}

/// Atoms at the draws with weight `1/N` each, duplicates merged.
pub fn empirical_measure(sample: &EmpiricalSample) -> DiscreteMeasure {
    let n = sample.len();
    let m = DiscreteMeasure { dim: sample.dim, points: sample.draws.clone(), weights: vec![1.0 / n as f64; n] };
    m.merged(MERGE_TOL)
}

/// `W_1` between two densities on the same grid.
///
/// In 1D this is the exact quantile formula (circle metric on periodic grids).
/// In 2D the densities are treated as atoms at cell centres and transported
/// on the 16-direction lattice graph; graph path lengths dominate Euclidean
/// ones, so the value is an upper bound within 2.7% of the Euclidean `W_1`.
pub fn wasserstein_grid_w1(mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    if !mu.grid().same_as(nu.grid()) {
        return Err(Error::InvalidGrid("densities live on different grids".into()));
    }
    match mu.dim() {
        1 => {
            let metric = if mu.grid().is_periodic() { Metric::Torus } else { Metric::Euclidean };
            wasserstein_1d(mu.into(), nu.into(), 1.0, metric)
        }
        2 => Ok(flow::lattice_w1(mu.grid(), &mu.masses(), &nu.masses())),
        d => Err(Error::Unsupported(format!("grid W1 in {d} dimensions"))),
    }
}

/// `W_1` between an arbitrary discrete measure and a density, choosing the
/// exact 1D route when possible and binning onto the density grid in 2D.
pub fn wasserstein_to_density(sample: &DiscreteMeasure, rho: &GridDensity) -> Result<f64> {
    let metric = if rho.grid().is_periodic() { Metric::Torus } else { Metric::Euclidean };
    match rho.dim() {
        1 => wasserstein_1d(sample.into(), rho.into(), 1.0, metric),
        2 => {
            let grid: &Grid = rho.grid();
            let mut hist = vec![0.0; grid.len()];
            for (x, w) in sample.iter() {
                let k = grid.locate(x, true).expect("clamped lookup always succeeds");
                hist[k] += w;
            }
            Ok(flow::lattice_w1(grid, &hist, &rho.masses()))
        }
        d => Err(Error::Unsupported(format!("density W1 in {d} dimensions"))),
    }
}
