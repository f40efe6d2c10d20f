//! Markov kernels on finite base sets and their random-map representations.
//!
//! A [`KernelFamily`] lists base points `x_i` with target measures `μ_{x_i}`. A
//! [`RandomMapFamily`] holds a reference `ν` and one map `T_{x_i}` per base
//! point with `(T_{x_i})_*ν = μ_{x_i}`; a random map is `f_ω(x_i) = T_{x_i}(ω)`
//! with a single `ω ~ ν` shared by every base point. Between base points the
//! family's interpolation rule applies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::measures::{
    cumulative, empirical_measure, grid_pushforward, pick, pushforward, wasserstein_1d, wasserstein_grid_w1,
    wasserstein_to_density, DensitySampler, DiscreteMeasure, EmpiricalSample, MeasureRef, Metric,
};
use crate::moser::moser_map;
use crate::transport::{brenier_map, circle_monotone_map, monotone_map_1d, solve_exact, Cost, Route, TransportMap};

/// Pushforward tolerance of Moser maps.
pub const MOSER_W1_TOL: f64 = 1e-2;
/// Pushforward tolerance of exact plans between atomic measures.
pub const EXACT_W1_TOL: f64 = 1e-9;
/// Minimum sample count accepted by [`verify_representation`].
pub const MIN_SAMPLES: usize = 100;
/// Samples per random substream in [`verify_representation`].
pub const SAMPLE_CHUNK: usize = 1024;
/// Hölder exponents fitted by [`continuity_modulus`].
pub const HOLDER_EXPONENTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseSpace {
    Circle,
    Torus2,
    Interval,
    Sphere2Chart,
}

impl BaseSpace {
    pub fn dim(self) -> usize {
        match self {
            BaseSpace::Circle | BaseSpace::Interval => 1,
            BaseSpace::Torus2 | BaseSpace::Sphere2Chart => 2,
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            BaseSpace::Circle | BaseSpace::Torus2 => Metric::Torus,
            BaseSpace::Interval | BaseSpace::Sphere2Chart => Metric::Euclidean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Off-grid points use the map of the nearest base point.
    Nearest,
    /// Only base points can be evaluated.
    None,
}

/// Target measures of a kernel, all of one representation.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelMeasures {
    Grid(Vec<GridDensity>),
    Discrete(Vec<DiscreteMeasure>),
}

impl KernelMeasures {
    pub fn len(&self) -> usize {
        match self {
            KernelMeasures::Grid(v) => v.len(),
            KernelMeasures::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> MeasureRef<'_> {
        match self {
            KernelMeasures::Grid(v) => MeasureRef::Grid(&v[i]),
            KernelMeasures::Discrete(v) => MeasureRef::Discrete(&v[i]),
        }
    }

    pub fn dim(&self) -> usize {
        self.get(0).dim()
    }
}

/// Finite family `x_i ↦ μ_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFamily {
    base: BaseSpace,
    points: Vec<Vec<f64>>,
    measures: KernelMeasures,
    interpolation: Interpolation,
}

impl KernelFamily {
    pub fn new(
        base: BaseSpace,
        points: Vec<Vec<f64>>,
        measures: KernelMeasures,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("points", format!("{} base points, need at least 2", points.len())));
        }
        if points.len() != measures.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: measures.len() });
        }
        if let Some(p) = points.iter().find(|p| p.len() != base.dim()) {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: p.len() });
        }
        let metric = base.metric();
        for i in 0..points.len() {
            for j in 0..i {
                if metric.distance(&points[i], &points[j]) <= 1e-12 {
                    return Err(Error::param("points", format!("base points {j} and {i} coincide")));
                }
            }
        }
        match &measures {
            KernelMeasures::Grid(v) => {
                if let Some(i) = v.iter().position(|g| !g.grid().same_as(v[0].grid())) {
                    return Err(Error::at(i, Error::InvalidGrid("measures must share one grid".into())));
                }
            }
            KernelMeasures::Discrete(v) => {
                if let Some(i) = v.iter().position(|m| m.dim() != v[0].dim()) {
                    return Err(Error::at(i, Error::DimensionMismatch { expected: v[0].dim(), got: v[i].dim() }));
                }
            }
        }
        Ok(KernelFamily { base, points, measures, interpolation })
    }

    /// Grid densities `y ↦ f(x_i, y)` normalised to mean 1.
    pub fn from_density_fn(
        base: BaseSpace,
        points: Vec<Vec<f64>>,
        grid: &Grid,
        interpolation: Interpolation,
        f: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let measures = points
            .iter()
            .map(|x| GridDensity::normalized(grid.clone(), (0..grid.len()).map(|k| f(x, &grid.point(k))).collect()))
            .collect::<Result<_>>()?;
        Self::new(base, points, KernelMeasures::Grid(measures), interpolation)
    }

    pub fn base(&self) -> BaseSpace {
        self.base
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn measures(&self) -> &KernelMeasures {
        &self.measures
    }

    pub fn measure(&self, i: usize) -> MeasureRef<'_> {
        self.measures.get(i)
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Uniform density on the common grid (grid kernels) or on 256 cells of
    /// `[0, 1]` resp. 64² cells of `[0, 1]²` (atomic kernels).
    pub fn default_reference(&self) -> Result<GridDensity> {
        match &self.measures {
            KernelMeasures::Grid(v) => GridDensity::uniform(v[0].grid().clone()),
            KernelMeasures::Discrete(v) => {
                let d = v[0].dim();
                let n = if d == 1 { 256 } else { 64 };
                GridDensity::uniform(Grid::cells(vec![0.0; d], vec![1.0; d], vec![n; d])?)
            }
        }
    }
}

/// Reference measure `ν` on `Ω = supp ν`.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    Grid(GridDensity),
    Discrete(DiscreteMeasure),
}

impl Reference {
    pub fn as_ref(&self) -> MeasureRef<'_> {
        match self {
            Reference::Grid(g) => MeasureRef::Grid(g),
            Reference::Discrete(m) => MeasureRef::Discrete(m),
        }
    }
}

impl From<MeasureRef<'_>> for Reference {
    fn from(m: MeasureRef<'_>) -> Self {
        match m {
            MeasureRef::Grid(g) => Reference::Grid(g.clone()),
            MeasureRef::Discrete(d) => Reference::Discrete(d.clone()),
        }
    }
}

/// How the maps of a family were built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationRoute {
    /// Optimal maps from the reference.
    Measurable,
    /// Moser maps from the uniform density.
    Continuous,
    /// Maps supplied by the caller.
    Custom,
}

/// Reference measure plus one map per base point.
#[derive(Clone, Debug)]
pub struct RandomMapFamily {
    base: BaseSpace,
    points: Vec<Vec<f64>>,
    interpolation: Interpolation,
    reference: Reference,
    maps: Vec<TransportMap>,
    route: RepresentationRoute,
    tolerance: f64,
    pushforward_w1: Vec<f64>,
}

impl RandomMapFamily {
    /// Wraps caller-supplied maps for `kernel`, measuring every pushforward
    /// against its target. The tolerance is recorded, not enforced.
    pub fn from_maps(
        kernel: &KernelFamily,
        reference: Reference,
        maps: Vec<TransportMap>,
        route: RepresentationRoute,
        tolerance: f64,
    ) -> Result<Self> {
        if maps.len() != kernel.len() {
            return Err(Error::DimensionMismatch { expected: kernel.len(), got: maps.len() });
        }
        let checks: Vec<Result<f64>> = maps
            .par_iter()
            .enumerate()
            .map(|(i, map)| pushforward_distance(map, &reference, kernel.measure(i)))
            .collect();
        let pushforward_w1 =
            checks.into_iter().enumerate().map(|(i, r)| r.map_err(|e| Error::at(i, e))).collect::<Result<_>>()?;
        Ok(RandomMapFamily {
            base: kernel.base,
            points: kernel.points.clone(),
            interpolation: kernel.interpolation,
            reference,
            maps,
            route,
            tolerance,
            pushforward_w1,
        })
    }

    pub fn base(&self) -> BaseSpace {
        self.base
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn maps(&self) -> &[TransportMap] {
        &self.maps
    }

    pub fn route(&self) -> RepresentationRoute {
        self.route
    }

    /// Pushforward tolerance of the construction route.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// `W₁((T_{x_i})_*ν, μ_{x_i})` per base point.
    pub fn pushforward_w1(&self) -> &[f64] {
        &self.pushforward_w1
    }

    /// All pushforward checks are within the route tolerance.
    pub fn is_validated(&self) -> bool {
        self.pushforward_w1.iter().all(|&w| w <= self.tolerance)
    }

    /// Draws `ω ~ ν`.
    pub fn draw_omega(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.reference {
            Reference::Grid(g) => DensitySampler::new(g).draw(rng),
            Reference::Discrete(m) => {
                use rand::Rng;
                m.point(pick(&cumulative(m.weights()), rng.gen::<f64>())).to_vec()
            }
        }
    }

    /// `T_{x_i}(ω)`, reduced to the fundamental domain on periodic grids.
    pub fn apply(&self, i: usize, omega: &[f64]) -> Result<Vec<f64>> {
        self.maps[i].eval_wrapped(omega).ok_or_else(|| Error::MapUndefined(omega.to_vec()))
    }

    /// Index of `x` among the base points, or of the nearest one when the
    /// interpolation rule allows it.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.base.dim() {
            return Err(Error::DimensionMismatch { expected: self.base.dim(), got: x.len() });
        }
        let metric = self.base.metric();
        let (best, dist) = self
            .points
            .iter()
            .map(|p| metric.distance(p, x))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        if dist <= 1e-12 || self.interpolation == Interpolation::Nearest {
            Ok(best)
        } else {
            Err(Error::NotABasePoint(x.to_vec()))
        }
    }
}

/// Particles per cell per axis for pushforward checks.
fn particles_per_axis(dim: usize) -> usize {
    if dim == 1 {
        64
    } else {
        8
    }
}

/// `W₁(T_*ν, μ)`: particle pushforward on the map grid for grid references,
/// exact atom pushforward for atomic ones.
fn pushforward_distance(map: &TransportMap, reference: &Reference, target: MeasureRef<'_>) -> Result<f64> {
    if map.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: map.dim() });
    }
    match reference {
        Reference::Discrete(nu) => {
            let push = pushforward(map, nu)?;
            distance_to(&push, target)
        }
        Reference::Grid(nu) => {
            let grid = map.grid().ok_or_else(|| Error::InvalidGrid("grid references need grid maps".into()))?;
            let nu_on = GridDensity::new(grid.clone(), nu.values().to_vec())?;
            let m = particles_per_axis(grid.dim());
            let push = grid_pushforward(map, &nu_on, grid.len() * m.pow(grid.dim() as u32))?;
            match target {
                MeasureRef::Grid(t) if t.grid().shape() == grid.shape() => {
                    // the map grid may be the box reading of a periodic grid,
                    // whose metric dominates the quotient one
                    let t_on = GridDensity::new(grid.clone(), t.values().to_vec())?;
                    if t.grid().same_as(grid) {
                        wasserstein_grid_w1(&push, t)
                    } else {
                        wasserstein_grid_w1(&push, &t_on)
                    }
                }
                _ => distance_to(&DiscreteMeasure::from_grid(&push), target),
            }
        }
    }
}

/// `W₁` from atoms to a target: exact in 1D, binned lattice flow in 2D.
fn distance_to(sample: &DiscreteMeasure, target: MeasureRef<'_>) -> Result<f64> {
    match target {
        MeasureRef::Grid(rho) => wasserstein_to_density(sample, rho),
        MeasureRef::Discrete(nu) if nu.dim() == 1 => wasserstein_1d(sample.into(), nu.into(), 1.0, Metric::Euclidean),
        MeasureRef::Discrete(nu) => {
            let (lo, hi) = bounding_box(&[sample, nu]);
            let grid = Grid::cells(lo, hi, vec![64; nu.dim()])?;
            let bin = |m: &DiscreteMeasure| -> Result<GridDensity> {
                let mut hist = vec![0.0; grid.len()];
                for (x, w) in m.iter() {
                    hist[grid.locate(x, true).expect("clamped lookup")] += w;
                }
                GridDensity::normalized(grid.clone(), hist)
            };
            wasserstein_grid_w1(&bin(sample)?, &bin(nu)?)
        }
    }
}

fn bounding_box(ms: &[&DiscreteMeasure]) -> (Vec<f64>, Vec<f64>) {
    let d = ms[0].dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in ms {
        for (x, _) in m.iter() {
            for a in 0..d {
                lo[a] = lo[a].min(x[a]);
                hi[a] = hi[a].max(x[a]);
            }
        }
    }
    for a in 0..d {
        let pad = 1e-9 + 1e-6 * (hi[a] - lo[a]);
        lo[a] -= pad;
        hi[a] += pad;
    }
    (lo, hi)
}

fn collect_indexed<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().enumerate().map(|(i, r)| r.map_err(|e| Error::at(i, e))).collect()
}

/// Optimal map from a grid reference to one target: monotone in 1D (circle
/// map on periodic grids, for cost `d^p`), entropic Brenier at `ε = h²` in 2D.
fn optimal_map(reference: &GridDensity, target: MeasureRef<'_>, p: f64) -> Result<TransportMap> {
    match reference.dim() {
        1 if reference.grid().is_periodic() => circle_monotone_map(reference, target, p),
        1 => monotone_map_1d(reference.into(), target),
        _ => {
            let h = reference.grid().max_spacing();
            brenier_map(reference, target, h * h)
        }
    }
}

/// Atomic reference: the exact plan must be deterministic for every target.
fn atomic_map(reference: &DiscreteMeasure, target: &DiscreteMeasure, p: f64) -> Result<TransportMap> {
    let plan = solve_exact(reference, target, &Cost::pow(p))?;
    let d = reference.dim();
    let mut image = Vec::with_capacity(reference.len() * d);
    for i in 0..plan.rows() {
        let mut charged = (0..plan.cols()).filter(|&j| plan.get(i, j) > 1e-12);
        let j = charged.next().ok_or(Error::AtomicSource)?;
        if charged.next().is_some() {
            return Err(Error::AtomicSource);
        }
        image.extend_from_slice(target.point(j));
    }
    TransportMap::new(d, reference.points().to_vec(), image, Route::Explicit)
}

/// One optimal map per base point, from `reference` to each `μ_{x_i}`, with
/// cost `d^p`.
///
/// Grid references give monotone maps in 1D and entropic Brenier maps in 2D,
/// checked to `2h` in `W₁`. Atomic references need every exact plan to be a
/// map, checked to round-off.
pub fn build_measurable_representation(
    kernel: &KernelFamily,
    reference: MeasureRef<'_>,
    p: f64,
) -> Result<RandomMapFamily> {
    if !(p >= 1.0) {
        return Err(Error::param("p", format!("{p} < 1")));
    }
    if reference.dim() != kernel.measures.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.measures.dim(), got: reference.dim() });
    }
    let (maps, tol) = match reference {
        MeasureRef::Grid(nu) => {
            let maps: Vec<Result<TransportMap>> =
                (0..kernel.len()).into_par_iter().map(|i| optimal_map(nu, kernel.measure(i), p)).collect();
            (collect_indexed(maps)?, 2.0 * nu.grid().max_spacing())
        }
        MeasureRef::Discrete(nu) => {
            let KernelMeasures::Discrete(targets) = &kernel.measures else {
                return Err(Error::AtomicSource);
            };
            let maps: Vec<Result<TransportMap>> = targets.par_iter().map(|t| atomic_map(nu, t, p)).collect();
            (collect_indexed(maps)?, EXACT_W1_TOL)
        }
    };
    RandomMapFamily::from_maps(kernel, reference.into(), maps, RepresentationRoute::Measurable, tol)
}

/// Moser time-1 maps from the uniform density to every `μ_{x_i}`.
pub fn build_continuous_representation(kernel: &KernelFamily) -> Result<RandomMapFamily> {
    let KernelMeasures::Grid(targets) = &kernel.measures else {
        return Err(Error::Unsupported("continuous representations need grid densities".into()));
    };
    let grid = targets[0].grid();
    if !grid.is_periodic() {
        return Err(Error::InvalidGrid("continuous representations live on the torus".into()));
    }
    let uniform = GridDensity::uniform(grid.clone())?;
    let maps: Vec<Result<TransportMap>> =
        targets.par_iter().map(|t| moser_map(&uniform, t, None).map(|f| f.into_map())).collect();
    let maps = collect_indexed(maps)?;
    RandomMapFamily::from_maps(kernel, Reference::Grid(uniform), maps, RepresentationRoute::Continuous, MOSER_W1_TOL)
}

/// A sampled random map `f_ω`.
#[derive(Clone, Debug)]
pub struct RandomMap<'a> {
    family: &'a RandomMapFamily,
    omega: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl RandomMap<'_> {
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// `f_ω(x_i)` for every base point.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// `f_ω(x)` under the family's interpolation rule.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.values[self.family.locate(x)?].clone())
    }
}

/// Draws one `ω` from `ν` with the given seed and fixes `f_ω`.
pub fn sample_random_map(family: &RandomMapFamily, seed: u64) -> Result<RandomMap<'_>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = family.draw_omega(&mut rng);
    let values = (0..family.len()).map(|i| family.apply(i, &omega)).collect::<Result<_>>()?;
    Ok(RandomMap { family, omega, values })
}

/// Pair entry of a modulus table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusEntry {
    pub i: usize,
    pub j: usize,
    pub dx: f64,
    #[serde(rename = "dT")]
    pub dt: f64,
}

/// Smallest `C` with `d_{C⁰}(T_x, T_y) ≤ C d(x, y)^α` over the table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderFit {
    pub alpha: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusTable {
    pub pairs: Vec<ModulusEntry>,
    pub lipschitz: f64,
    pub holder: Vec<HolderFit>,
}

/// Sup-norm distance between the maps of every pair of base points, with
/// Lipschitz and Hölder fits. All maps must share their domain points;
/// distances use the torus metric for periodic maps.
pub fn continuity_modulus(family: &RandomMapFamily) -> Result<ModulusTable> {
    if family.len() < 2 {
        return Err(Error::param("family", "need at least two base points"));
    }
    let first = &family.maps[0];
    for (i, m) in family.maps.iter().enumerate() {
        let same_grid = match (m.grid(), first.grid()) {
            (Some(a), Some(b)) => a.same_as(b),
            (None, None) => true,
            _ => false,
        };
        if !same_grid || m.domain() != first.domain() {
            return Err(Error::at(i, Error::InvalidGrid("maps do not share a grid".into())));
        }
    }
    let metric = if first.is_periodic() { Metric::Torus } else { Metric::Euclidean };
    let images: Vec<Vec<f64>> = family.maps.iter().map(|m| m.image_wrapped()).collect();
    let d = first.dim();
    let base_metric = family.base.metric();
    let mut pairs = Vec::new();
    for i in 0..family.len() {
        for j in i + 1..family.len() {
            let dt = (0..first.len())
                .map(|k| metric.distance(&images[i][k * d..(k + 1) * d], &images[j][k * d..(k + 1) * d]))
                .fold(0.0, f64::max);
            let dx = base_metric.distance(&family.points[i], &family.points[j]);
            pairs.push(ModulusEntry { i, j, dx, dt });
        }
    }
    let fit = |alpha: f64| pairs.iter().map(|e| e.dt / e.dx.powf(alpha)).fold(0.0, f64::max);
    Ok(ModulusTable {
        lipschitz: fit(1.0),
        holder: HOLDER_EXPONENTS.iter().map(|&alpha| HolderFit { alpha, constant: fit(alpha) }).collect(),
        pairs,
    })
}

/// Per-base-point verification result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointResult {
    pub index: usize,
    pub x: Vec<f64>,
    pub w1: f64,
    pub pass: bool,
    pub mc_floor: f64,
    pub pushforward_w1: f64,
}

/// Tolerances applied by a verification run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppliedTolerances {
    pub w1: f64,
    pub route_pushforward: f64,
    pub min_samples: usize,
    pub sample_chunk: usize,
}

/// Monte Carlo check that the law of `f_ω(x_i)` is `μ_{x_i}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub route: RepresentationRoute,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub pass: bool,
    pub per_point: Vec<PointResult>,
    pub modulus: Vec<ModulusEntry>,
    pub lipschitz: Option<f64>,
    pub holder: Vec<HolderFit>,
    pub tolerances: AppliedTolerances,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    /// Per-point distances in base-point order.
    pub fn distances(&self) -> Vec<f64> {
        self.per_point.iter().map(|p| p.w1).collect()
    }
}

/// `Σ_a ∫ √(F_a(1 − F_a))` over the 1D marginals; divided by `√N` it bounds
/// the expected empirical `W₁` on the line.
fn mc_constant(target: MeasureRef<'_>) -> f64 {
    let marginal = |atoms: &mut Vec<(f64, f64)>| -> f64 {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut f = 0.0;
        let mut acc = 0.0;
        for w in atoms.windows(2) {
            f += w[0].1;
            acc += (w[1].0 - w[0].0) * (f * (1.0 - f)).max(0.0).sqrt();
        }
        acc
    };
    let d = target.dim();
    (0..d)
        .map(|a| match target {
            MeasureRef::Discrete(m) => marginal(&mut m.iter().map(|(x, w)| (x[a], w)).collect()),
            MeasureRef::Grid(g) => {
                // cell masses at cell centres: the midpoint rule for the CDF
                let grid = g.grid();
                let mut masses = vec![0.0; grid.shape()[a]];
                for (k, m) in g.masses().iter().enumerate() {
                    masses[grid.multi_index(k)[a]] += m;
                }
                let h = grid.spacing(a);
                let mut f = 0.0;
                masses
                    .iter()
                    .map(|m| {
                        let mid = f + 0.5 * m;
                        f += m;
                        h * (mid * (1.0 - mid)).max(0.0).sqrt()
                    })
                    .sum()
            }
        })
        .sum()
}

/// Draws `n_samples` random maps (one `ω` each, shared by all base points),
/// and compares the empirical law of `f_ω(x_i)` with `μ_{x_i}` in `W₁`.
///
/// Samples come in chunks of [`SAMPLE_CHUNK`]; chunk `c` uses ChaCha8 stream
/// `c` of `seed`, so reports do not depend on the thread count.
pub fn verify_representation(
    family: &RandomMapFamily,
    kernel: &KernelFamily,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<VerificationReport> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::param("n_samples", format!("{n_samples} < {MIN_SAMPLES}")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("{tol} is not positive")));
    }
    if family.len() != kernel.len() {
        return Err(Error::DimensionMismatch { expected: kernel.len(), got: family.len() });
    }
    let k = family.len();
    let chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let drawn: Vec<Result<Vec<Vec<f64>>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = SAMPLE_CHUNK.min(n_samples - c * SAMPLE_CHUNK);
            let mut per_point = vec![Vec::new(); k];
            for _ in 0..count {
                let omega = family.draw_omega(&mut rng);
                for (i, out) in per_point.iter_mut().enumerate() {
                    out.extend(family.apply(i, &omega)?);
                }
            }
            Ok(per_point)
        })
        .collect();
    let mut values = vec![Vec::new(); k];
    for chunk in drawn {
        for (i, v) in chunk?.into_iter().enumerate() {
            values[i].extend(v);
        }
    }
    let dim = kernel.measures.dim();
    let results: Vec<Result<PointResult>> = values
        .into_par_iter()
        .enumerate()
        .map(|(i, draws)| {
            let sample = empirical_measure(&EmpiricalSample::from_draws(dim, draws, seed)?);
            let target = kernel.measure(i);
            let w1 = distance_to(&sample, target)?;
            Ok(PointResult {
                index: i,
                x: kernel.points[i].clone(),
                w1,
                pass: w1 <= tol,
                mc_floor: mc_constant(target) / (n_samples as f64).sqrt(),
                pushforward_w1: family.pushforward_w1[i],
            })
        })
        .collect();
    let per_point = collect_indexed(results)?;
    let (modulus, lipschitz, holder) = match continuity_modulus(family) {
        Ok(t) => (t.pairs, Some(t.lipschitz), t.holder),
        Err(_) => (Vec::new(), None, Vec::new()),
    };
    Ok(VerificationReport {
        route: family.route,
        n_samples,
        seed,
        tol,
        pass: per_point.iter().all(|p| p.pass),
        per_point,
        modulus,
        lipschitz,
        holder,
        tolerances: AppliedTolerances {
            w1: tol,
            route_pushforward: family.tolerance,
            min_samples: MIN_SAMPLES,
            sample_chunk: SAMPLE_CHUNK,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn circle_kernel(k: usize, n: usize, a: f64) -> KernelFamily {
        let points = (0..k).map(|i| vec![i as f64 / k as f64]).collect();
        let grid = Grid::torus(1, n).unwrap();
        KernelFamily::from_density_fn(BaseSpace::Circle, points, &grid, Interpolation::None, |x, y| {
            1.0 + a * (TAU * (y[0] - x[0])).cos()
        })
        .unwrap()
    }

    #[test]
    fn kernel_validation() {
        let grid = Grid::torus(1, 16).unwrap();
        let u = GridDensity::uniform(grid).unwrap();
        let dup = KernelFamily::new(
            BaseSpace::Circle,
            vec![vec![0.0], vec![1.0]],
            KernelMeasures::Grid(vec![u.clone(), u.clone()]),
            Interpolation::None,
        );
        assert!(dup.is_err());
        let single =
            KernelFamily::new(BaseSpace::Circle, vec![vec![0.0]], KernelMeasures::Grid(vec![u]), Interpolation::None);
        assert!(single.is_err());
    }

    #[test]
    fn uniform_kernel_gives_identities() {
        let kernel = circle_kernel(4, 32, 0.0);
        let family = build_continuous_representation(&kernel).unwrap();
        for m in family.maps() {
            assert_eq!(m.image(), m.domain());
        }
        let f = sample_random_map(&family, 3).unwrap();
        assert!(f.values().iter().all(|v| v == f.omega()));
    }

    #[test]
    fn nearest_rule_and_rejection() {
        let mut kernel = circle_kernel(4, 32, 0.3);
        let family = build_continuous_representation(&kernel).unwrap();
        let f = sample_random_map(&family, 11).unwrap();
        assert!(matches!(f.eval(&[0.1]), Err(Error::NotABasePoint(_))));
        assert_eq!(f.eval(&[0.25]).unwrap(), f.values()[1]);
        kernel.interpolation = Interpolation::Nearest;
        let family = build_continuous_representation(&kernel).unwrap();
        let f = sample_random_map(&family, 11).unwrap();
        assert_eq!(f.eval(&[0.2]).unwrap(), f.values()[1]);
        assert_eq!(f.eval(&[0.95]).unwrap(), f.values()[0]);
    }

    #[test]
    fn continuous_route_rejects_vanishing_density() {
        let grid = Grid::torus(1, 16).unwrap();
        let ok = GridDensity::uniform(grid.clone()).unwrap();
        let bad = GridDensity::normalized(grid, (0..16).map(|k| if k < 8 { 1.0 } else { 0.0 }).collect()).unwrap();
        let kernel = KernelFamily::new(
            BaseSpace::Circle,
            vec![vec![0.0], vec![0.5]],
            KernelMeasures::Grid(vec![ok, bad]),
            Interpolation::None,
        )
        .unwrap();
        match build_continuous_representation(&kernel) {
            Err(Error::AtBasePoint { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::NotPositive { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn atomic_reference_permutation_maps() {
        let nu = DiscreteMeasure::uniform(1, vec![0.1, 0.4, 0.7]).unwrap();
        let t0 = DiscreteMeasure::uniform(1, vec![0.9, 0.2, 0.5]).unwrap();
        let t1 = DiscreteMeasure::uniform(1, vec![0.0, 0.3, 0.6]).unwrap();
        let kernel = KernelFamily::new(
            BaseSpace::Interval,
            vec![vec![0.0], vec![1.0]],
            KernelMeasures::Discrete(vec![t0, t1]),
            Interpolation::None,
        )
        .unwrap();
        let family = build_measurable_representation(&kernel, (&nu).into(), 2.0).unwrap();
        assert!(family.is_validated());
        assert_eq!(family.maps()[0].image(), &[0.2, 0.5, 0.9]);
        // a non-uniform target splits atoms
        let split = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let kernel = KernelFamily::new(
            BaseSpace::Interval,
            vec![vec![0.0], vec![1.0]],
            KernelMeasures::Discrete(vec![split.clone(), split]),
            Interpolation::None,
        )
        .unwrap();
        assert!(matches!(build_measurable_representation(&kernel, (&nu).into(), 2.0), Err(Error::AtBasePoint { .. })));
    }

    #[test]
    fn verification_is_deterministic() {
        let kernel = circle_kernel(3, 32, 0.4);
        let family = build_continuous_representation(&kernel).unwrap();
        let a = verify_representation(&family, &kernel, 2000, 0.05, 9).unwrap();
        let b = verify_representation(&family, &kernel, 2000, 0.05, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.pass);
        assert!(verify_representation(&family, &kernel, 99, 0.05, 9).is_err());
    }

    #[test]
    fn mc_constant_of_uniform() {
        // ∫₀¹ √(t(1 − t)) dt = π/8
        let u = GridDensity::uniform(Grid::cells(vec![0.0], vec![1.0], vec![4096]).unwrap()).unwrap();
        assert!((mc_constant((&u).into()) - std::f64::consts::PI / 8.0).abs() < 1e-5);
    }
}
