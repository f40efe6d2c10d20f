//! Lifting measures on S¹, T² and S² to tangent spaces and to a trivial bundle.
//!
//! A [`ManifoldChart`] is the exponential chart at a base point `p`; measures
//! supported near `p` move to `T_p` with [`log_lift`] and back with
//! [`exp_push`]. A [`BundleLift`] extends a tangent density `μ̃` to `R^k` through
//! an orthogonal projection `r : R^k → T_p` and a product-bump reference `ν`:
//! `dμ̂(y) = g(r(y)) dν(y)` where `dμ̃ = g dr_*ν`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::measures::DiscreteMeasure;

/// Conditioning cap on the sphere radius, short of the cut locus at `π`.
pub const SPHERE_RADIUS_CAP: f64 = 3.0;
/// Injectivity radius of the unit-period circle and flat torus.
pub const FLAT_RADIUS_CAP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Circle,
    Torus2,
    Sphere2,
}

impl Manifold {
    /// Intrinsic dimension.
    pub fn dim(self) -> usize {
        match self {
            Manifold::Circle => 1,
            Manifold::Torus2 | Manifold::Sphere2 => 2,
        }
    }

    /// Default radius cap of exponential charts.
    pub fn radius_cap(self) -> f64 {
        match self {
            Manifold::Circle | Manifold::Torus2 => FLAT_RADIUS_CAP,
            Manifold::Sphere2 => SPHERE_RADIUS_CAP.min(std::f64::consts::PI),
        }
    }

    /// Radius below which geodesic balls are convex.
    pub fn convexity_radius(self) -> f64 {
        match self {
            Manifold::Circle | Manifold::Torus2 => 0.25,
            Manifold::Sphere2 => std::f64::consts::FRAC_PI_2,
        }
    }

    /// Geodesic distance. Circle and torus points are unit-period coordinates;
    /// sphere points are `(colatitude, longitude)` in radians.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Manifold::Circle | Manifold::Torus2 => {
                a.iter().zip(b).map(|(x, y)| wrap_half(x - y).powi(2)).sum::<f64>().sqrt()
            }
            Manifold::Sphere2 => {
                let (p, q) = (to_xyz(a), to_xyz(b));
                angle_between(&p, &q)
            }
        }
    }
}

/// Nearest representative of `d` modulo 1 in `[-1/2, 1/2)`.
fn wrap_half(d: f64) -> f64 {
    (d + 0.5).rem_euclid(1.0) - 0.5
}

fn to_xyz(angles: &[f64]) -> [f64; 3] {
    let (t, f) = (angles[0], angles[1]);
    [t.sin() * f.cos(), t.sin() * f.sin(), t.cos()]
}

fn from_xyz(v: &[f64; 3]) -> Vec<f64> {
    let r = dot(v, v).sqrt();
    let z = (v[2] / r).clamp(-1.0, 1.0);
    vec![z.acos(), v[1].atan2(v[0])]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn angle_between(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let c = cross(p, q);
    dot(&c, &c).sqrt().atan2(dot(p, q))
}

/// Exponential chart at a base point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldChart {
    manifold: Manifold,
    base: Vec<f64>,
    cap: f64,
}

impl ManifoldChart {
    pub fn new(manifold: Manifold, base: &[f64]) -> Result<Self> {
        if base.len() != manifold.dim() {
            return Err(Error::DimensionMismatch { expected: manifold.dim(), got: base.len() });
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("base", "non-finite coordinate"));
        }
        let base = match manifold {
            Manifold::Circle | Manifold::Torus2 => base.iter().map(|v| v.rem_euclid(1.0)).collect(),
            Manifold::Sphere2 => base.to_vec(),
        };
        Ok(ManifoldChart { manifold, base, cap: manifold.radius_cap() })
    }

    /// Shrinks the radius cap; it can never exceed the manifold default.
    pub fn with_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap <= self.manifold.radius_cap()) {
            return Err(Error::param("cap", format!("{cap} outside (0, {}]", self.manifold.radius_cap())));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Orthonormal tangent frame at the base point in `R³` (sphere only):
    /// `e_θ` then `e_φ`.
    pub fn sphere_frame(&self) -> Option<[[f64; 3]; 2]> {
        if self.manifold != Manifold::Sphere2 {
            return None;
        }
        let (t, f) = (self.base[0], self.base[1]);
        Some([[t.cos() * f.cos(), t.cos() * f.sin(), -t.sin()], [-f.sin(), f.cos(), 0.0]])
    }

    fn outside(&self, point: &[f64]) -> Error {
        Error::OutsideCap { point: point.to_vec(), cap: self.cap }
    }

    /// `exp_p⁻¹(q)`; points at or beyond the cap are rejected.
    pub fn log(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.manifold.dim() {
            return Err(Error::DimensionMismatch { expected: self.manifold.dim(), got: q.len() });
        }
        match self.manifold {
            Manifold::Circle | Manifold::Torus2 => {
                let v: Vec<f64> = q.iter().zip(&self.base).map(|(a, b)| wrap_half(a - b)).collect();
                if norm(&v) < self.cap {
                    Ok(v)
                } else {
                    Err(self.outside(q))
                }
            }
            Manifold::Sphere2 => {
                let p = to_xyz(&self.base);
                let x = to_xyz(q);
                let angle = angle_between(&p, &x);
                if angle > self.cap {
                    return Err(self.outside(q));
                }
                let c = dot(&p, &x);
                let w = [x[0] - c * p[0], x[1] - c * p[1], x[2] - c * p[2]];
                let wn = dot(&w, &w).sqrt();
                if wn == 0.0 {
                    return Ok(vec![0.0, 0.0]);
                }
                let [e0, e1] = self.sphere_frame().expect("sphere chart");
                Ok(vec![angle * dot(&w, &e0) / wn, angle * dot(&w, &e1) / wn])
            }
        }
    }

    /// `exp_p(v)`; tangent vectors at or beyond the cap are rejected.
    pub fn exp(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.manifold.dim() {
            return Err(Error::DimensionMismatch { expected: self.manifold.dim(), got: v.len() });
        }
        let r = norm(v);
        match self.manifold {
            Manifold::Circle | Manifold::Torus2 => {
                if !(r < self.cap) {
                    return Err(self.outside(v));
                }
                Ok(v.iter().zip(&self.base).map(|(a, b)| (a + b).rem_euclid(1.0)).collect())
            }
            Manifold::Sphere2 => {
                if !(r <= self.cap) {
                    return Err(self.outside(v));
                }
                if r == 0.0 {
                    return Ok(self.base.clone());
                }
                let p = to_xyz(&self.base);
                let [e0, e1] = self.sphere_frame().expect("sphere chart");
                let (s, c) = r.sin_cos();
                let q: [f64; 3] = std::array::from_fn(|i| c * p[i] + s * (v[0] * e0[i] + v[1] * e1[i]) / r);
                Ok(from_xyz(&q))
            }
        }
    }

    /// Area element of `exp_p` at `v`: `sin|v| / |v|` on the sphere, 1 otherwise.
    pub fn exp_jacobian(&self, v: &[f64]) -> f64 {
        match self.manifold {
            Manifold::Circle | Manifold::Torus2 => 1.0,
            Manifold::Sphere2 => {
                let r = norm(v);
                if r < 1e-8 {
                    1.0 - r * r / 6.0
                } else {
                    r.sin() / r
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn map_atoms(mu: &DiscreteMeasure, dim: usize, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<DiscreteMeasure> {
    let mut points = Vec::with_capacity(mu.len() * dim);
    for (x, _) in mu.iter() {
        points.extend(f(x)?);
    }
    DiscreteMeasure::new(dim, points, mu.weights().to_vec())
}

/// `(exp_p⁻¹)_*μ`, weights unchanged.
pub fn log_lift(chart: &ManifoldChart, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    map_atoms(mu, chart.manifold.dim(), |x| chart.log(x))
}

/// `(exp_p)_*μ̃`, weights unchanged.
pub fn exp_push(chart: &ManifoldChart, mu_tangent: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    map_atoms(mu_tangent, chart.manifold.dim(), |v| chart.exp(v))
}

/// Ratio of lifted tangent density to manifold density over the support.
#[derive(Clone, Debug, Serialize)]
pub struct DensityComparison {
    pub manifold: Manifold,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub support_radius: f64,
    pub convexity_radius: f64,
    pub convex_preserved: bool,
    #[serde(skip)]
    pub lifted: GridDensity,
}

/// Compares a density on the manifold with its lift to `T_p`.
///
/// The grid of `rho` parametrises the chart: on the circle and torus its
/// coordinates are points of the manifold (centred at the base point by the
/// nearest lift); on the sphere they are tangent coordinates `v` and the values
/// are the manifold density at `exp_p(v)`. The lifted density is
/// `ρ(exp_p v)·J(v)` with `J` the area element, so the ratio is `J` on the
/// support.
pub fn density_lift_compare(chart: &ManifoldChart, rho: &GridDensity) -> Result<DensityComparison> {
    let grid = rho.grid();
    if grid.dim() != chart.manifold.dim() {
        return Err(Error::DimensionMismatch { expected: chart.manifold.dim(), got: grid.dim() });
    }
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    let mut support_radius = 0.0f64;
    let mut lifted = Vec::with_capacity(grid.len());
    for (i, &value) in rho.values().iter().enumerate() {
        let x = grid.point(i);
        let v: Vec<f64> = match chart.manifold {
            Manifold::Circle | Manifold::Torus2 => x.iter().zip(&chart.base).map(|(a, b)| wrap_half(a - b)).collect(),
            Manifold::Sphere2 => x,
        };
        let j = chart.exp_jacobian(&v);
        lifted.push(value * j);
        if value > 0.0 {
            let r = norm(&v);
            if r > chart.cap {
                return Err(chart.outside(&v));
            }
            support_radius = support_radius.max(r);
            ratio_min = ratio_min.min(j);
            ratio_max = ratio_max.max(j);
        }
    }
    let convexity_radius = chart.manifold.convexity_radius();
    Ok(DensityComparison {
        manifold: chart.manifold,
        ratio_min,
        ratio_max,
        support_radius,
        convexity_radius,
        convex_preserved: support_radius < convexity_radius,
        lifted: GridDensity::normalized(grid.clone(), lifted)?,
    })
}

/// Trivial-bundle data: projection rows `r` (orthonormal, `d × k`) and a
/// product-bump reference on `[-R, R]^k` resolved by `cells` per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleLift {
    rows: Vec<Vec<f64>>,
    radius: f64,
    cells: usize,
}

/// Smooth bump `exp(-1/(1 - t²))` on `(-1, 1)`.
fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

impl BundleLift {
    pub fn new(rows: Vec<Vec<f64>>, radius: f64, cells: usize) -> Result<Self> {
        let d = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if !(1..=3).contains(&k) || d == 0 || d > k {
            return Err(Error::param("rows", format!("{d} x {k} projection")));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::param("rows", "ragged projection matrix"));
        }
        for a in 0..d {
            for b in 0..d {
                let g: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (g - want).abs() > 1e-10 {
                    return Err(Error::param("rows", "projection rows are not orthonormal"));
                }
            }
        }
        if !(radius > 0.0) {
            return Err(Error::param("radius", format!("{radius} is not positive")));
        }
        if cells < 8 {
            return Err(Error::param("cells", format!("{cells} < 8")));
        }
        Ok(BundleLift { rows, radius, cells })
    }

    /// Standard fibre projection for a chart: the unit tangent of the circle in
    /// `R²`, the identity for the (parallelizable) flat torus in `R²`, and the
    /// frame `e_θ, e_φ` of the sphere in `R³`.
    pub fn for_chart(chart: &ManifoldChart, radius: f64, cells: usize) -> Result<Self> {
        let rows = match chart.manifold {
            Manifold::Circle => {
                let a = std::f64::consts::TAU * chart.base[0];
                vec![vec![-a.sin(), a.cos()]]
            }
            Manifold::Torus2 => vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            Manifold::Sphere2 => chart.sphere_frame().expect("sphere chart").iter().map(|r| r.to_vec()).collect(),
        };
        Self::new(rows, radius, cells)
    }

    pub fn ambient_dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn fiber_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Cell grid on `[-R, R]^k` carrying the reference measure.
    pub fn ambient_grid(&self) -> Grid {
        let k = self.ambient_dim();
        Grid::cells(vec![-self.radius; k], vec![self.radius; k], vec![self.cells; k]).expect("valid ambient grid")
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().zip(y).map(|(a, b)| a * b).sum()).collect()
    }

    /// Cell masses of the reference: a product of 1D bumps, each integrated
    /// over its cells with 16-point midpoint sums.
    pub fn reference_masses(&self) -> Vec<f64> {
        const SUB: usize = 16;
        let h = 2.0 / self.cells as f64;
        let mut axis: Vec<f64> = (0..self.cells)
            .map(|c| (0..SUB).map(|s| bump(-1.0 + (c as f64 + (s as f64 + 0.5) / SUB as f64) * h)).sum())
            .collect();
        let total: f64 = axis.iter().sum();
        axis.iter_mut().for_each(|v| *v /= total);
        let grid = self.ambient_grid();
        (0..grid.len()).map(|i| grid.multi_index(i).iter().map(|&k| axis[k]).product()).collect()
    }

    /// `r_*` of ambient cell masses onto a fibre grid by projecting cell
    /// centres; mass projecting outside `fiber` is dropped.
    pub fn project_masses(&self, masses: &[f64], fiber: &Grid) -> Vec<f64> {
        let grid = self.ambient_grid();
        let mut out = vec![0.0; fiber.len()];
        for (i, &m) in masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            if let Some(j) = fiber.locate(&self.project(&grid.point(i)), false) {
                out[j] += m;
            }
        }
        out
    }

    /// Cell masses of `ν^{(r)} = r_*ν` on `fiber`.
    pub fn projected_reference(&self, fiber: &Grid) -> Vec<f64> {
        self.project_masses(&self.reference_masses(), fiber)
    }
}

/// Result of [`bundle_lift`]: cell masses of `μ̂` on the ambient grid and the
/// fibre density `g = dμ̃/dν^{(r)}`.
#[derive(Clone, Debug)]
pub struct LiftedDensity {
    grid: Grid,
    masses: Vec<f64>,
    fiber: Grid,
    g: Vec<f64>,
}

impl LiftedDensity {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn fiber_grid(&self) -> &Grid {
        &self.fiber
    }

    /// `dμ̃/dν^{(r)}` per fibre cell (0 off the support).
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// `r_*μ̂` on the fibre grid.
    pub fn project(&self, lift: &BundleLift) -> Result<GridDensity> {
        GridDensity::normalized(self.fiber.clone(), lift.project_masses(&self.masses, &self.fiber))
    }
}

/// `dμ̂ = (g∘r) dν` for a tangent density `μ̃` on a box fibre grid.
///
/// Every fibre cell charged by `μ̃` must lie in the interior of the support of
/// `ν^{(r)}`: the cell and its axis neighbours all carry reference mass.
pub fn bundle_lift(lift: &BundleLift, mu_tilde: &GridDensity) -> Result<LiftedDensity> {
    let fiber = mu_tilde.grid();
    if fiber.is_periodic() {
        return Err(Error::InvalidGrid("fibre grids are bounded boxes".into()));
    }
    if fiber.dim() != lift.fiber_dim() {
        return Err(Error::DimensionMismatch { expected: lift.fiber_dim(), got: fiber.dim() });
    }
    let nu_r = lift.projected_reference(fiber);
    let masses = mu_tilde.masses();
    let mut g = vec![0.0; fiber.len()];
    for (j, &m) in masses.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let idx = fiber.multi_index(j);
        let mut interior = nu_r[j] > 0.0;
        for a in 0..fiber.dim() {
            for step in [-1i64, 1] {
                let k = idx[a] as i64 + step;
                if k < 0 || k as usize >= fiber.shape()[a] {
                    interior = false;
                    continue;
                }
                let mut nb = idx.clone();
                nb[a] = k as usize;
                interior &= nu_r[fiber.flat_index(&nb)] > 0.0;
            }
        }
        if !interior {
            return Err(Error::SupportViolation(format!(
                "fibre cell {:?} carries mass {m:e} outside the interior of supp r_*ν",
                fiber.point(j)
            )));
        }
        g[j] = m / nu_r[j];
    }
    let grid = lift.ambient_grid();
    let reference = lift.reference_masses();
    let hat = (0..grid.len())
        .map(|i| match fiber.locate(&lift.project(&grid.point(i)), false) {
            Some(j) => reference[i] * g[j],
            None => 0.0,
        })
        .collect();
    Ok(LiftedDensity { grid, masses: hat, fiber: fiber.clone(), g })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_log_is_arc_length() {
        let chart = ManifoldChart::new(Manifold::Circle, &[0.0]).unwrap();
        assert!((chart.log(&[0.1]).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!((chart.log(&[0.9]).unwrap()[0] + 0.1).abs() < 1e-15);
        assert!(chart.log(&[0.5]).is_err());
        assert!(matches!(chart.exp(&[0.6]), Err(Error::OutsideCap { .. })));
    }

    #[test]
    fn sphere_log_closed_form() {
        let chart = ManifoldChart::new(Manifold::Sphere2, &[0.0, 0.0]).unwrap();
        let v = chart.log(&[0.3, 0.0]).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-14 && v[1].abs() < 1e-14);
        let back = chart.exp(&v).unwrap();
        assert!(Manifold::Sphere2.distance(&back, &[0.3, 0.0]) < 1e-14);
        assert_eq!(chart.log(&[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(chart.log(&[3.1, 0.0]).is_err());
    }

    #[test]
    fn dirac_at_base_lifts_to_origin() {
        for (m, p) in
            [(Manifold::Circle, vec![0.3]), (Manifold::Torus2, vec![0.2, 0.7]), (Manifold::Sphere2, vec![1.0, 2.0])]
        {
            let chart = ManifoldChart::new(m, &p).unwrap();
            let lifted = log_lift(&chart, &DiscreteMeasure::dirac(&p).unwrap()).unwrap();
            assert!(lifted.points().iter().all(|v| v.abs() < 1e-15));
            let back = exp_push(&chart, &lifted).unwrap();
            assert!(m.distance(back.point(0), &p) < 1e-15);
        }
    }

    #[test]
    fn circle_density_ratio_is_one() {
        let chart = ManifoldChart::new(Manifold::Circle, &[0.5]).unwrap();
        let rho = GridDensity::from_fn(Grid::torus(1, 32).unwrap(), |x| 1.0 + 0.5 * x[0]).unwrap();
        let cmp = density_lift_compare(&chart, &rho).unwrap();
        assert_eq!((cmp.ratio_min, cmp.ratio_max), (1.0, 1.0));
    }

    #[test]
    fn projection_rows_must_be_orthonormal() {
        assert!(BundleLift::new(vec![vec![1.0, 1.0]], 1.0, 16).is_err());
        assert!(BundleLift::new(vec![vec![0.6, 0.8]], 1.0, 16).is_ok());
    }

    #[test]
    fn reference_lifts_to_reference() {
        let lift = BundleLift::new(vec![vec![1.0, 0.0]], 1.0, 32).unwrap();
        let fiber = Grid::cells(vec![-1.0], vec![1.0], vec![32]).unwrap();
        let nu_r = lift.projected_reference(&fiber);
        let mut inner = nu_r.clone();
        // drop the outermost charged cells so the support is interior
        let (first, last) =
            (inner.iter().position(|&m| m > 0.0).unwrap(), inner.iter().rposition(|&m| m > 0.0).unwrap());
        inner[first] = 0.0;
        inner[last] = 0.0;
        let mu = GridDensity::normalized(fiber, inner).unwrap();
        let hat = bundle_lift(&lift, &mu).unwrap();
        let back = hat.project(&lift).unwrap();
        for (a, b) in back.values().iter().zip(mu.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn support_violation_detected() {
        let lift = BundleLift::new(vec![vec![1.0, 0.0]], 0.5, 16).unwrap();
        let fiber = Grid::cells(vec![-1.0], vec![1.0], vec![16]).unwrap();
        let mu = GridDensity::uniform(fiber).unwrap();
        assert!(matches!(bundle_lift(&lift, &mu), Err(Error::SupportViolation(_))));
    }
}
