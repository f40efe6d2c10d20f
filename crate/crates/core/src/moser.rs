//! Moser coupling on the flat torus.
//!
//! With `Δu = ρ₀ − ρ₁` and `ρ_t = (1 − t)ρ₀ + tρ₁`, the field
//! `ξ(t, x) = ∇u(x) / ρ_t(x)` satisfies `∂_t ρ_t + div(ρ_t ξ) = 0`, so its time-1
//! flow pushes `ρ₀` to `ρ₁`. The Poisson problem and the gradient are solved
//! spectrally (continuous symbols, Nyquist derivative set to zero); the field is
//! evaluated between nodes by multilinear interpolation of `∇u`, `ρ₀` and `ρ₁`
//! and integrated with classical RK4.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity, GridFunction, DENSITY_MEAN_TOL};
use crate::measures::{grid_pushforward, wasserstein_grid_w1};
use crate::transport::{Route, TransportMap};

/// Smallest density accepted by [`moser_map`].
pub const MIN_DENSITY: f64 = 1e-3;
/// Smallest RK4 step count.
pub const MIN_STEPS: usize = 16;
/// Sup-norm bound on the Poisson residual of an accepted solve.
pub const POISSON_RESIDUAL_TOL: f64 = 1e-8;

const TAU: f64 = std::f64::consts::TAU;

/// Row-major complex transform on a periodic grid of dimension 1 or 2.
fn fft(values: &mut [Complex<f64>], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = |n: usize, planner: &mut FftPlanner<f64>| {
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };
    match shape.len() {
        1 => plan(shape[0], &mut planner).process(values),
        2 => {
            let (n0, n1) = (shape[0], shape[1]);
            let rows = plan(n1, &mut planner);
            for row in values.chunks_mut(n1) {
                rows.process(row);
            }
            let cols = plan(n0, &mut planner);
            let mut buf = vec![Complex::new(0.0, 0.0); n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    buf[i] = values[i * n1 + j];
                }
                cols.process(&mut buf);
                for i in 0..n0 {
                    values[i * n1 + j] = buf[i];
                }
            }
        }
        _ => unreachable!("spectral grids are 1D or 2D"),
    }
    if inverse {
        let scale = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Signed wavenumber of index `k` on `n` points; `None` at the Nyquist index.
fn wavenumber(k: usize, n: usize) -> Option<f64> {
    if 2 * k == n {
        None
    } else if 2 * k < n {
        Some(k as f64)
    } else {
        Some(k as f64 - n as f64)
    }
}

/// `-4π²|k|²` for every Fourier index (Nyquist modes use `|k| = n/2`).
fn laplacian_symbol(shape: &[usize]) -> Vec<f64> {
    let len: usize = shape.iter().product();
    (0..len)
        .map(|flat| {
            let mut rem = flat;
            let mut sq = 0.0;
            for a in (0..shape.len()).rev() {
                let k = rem % shape[a];
                rem /= shape[a];
                let w = wavenumber(k, shape[a]).unwrap_or(shape[a] as f64 / 2.0);
                sq += w * w;
            }
            -TAU * TAU * sq
        })
        .collect()
}

fn to_complex(values: &[f64]) -> Vec<Complex<f64>> {
    values.iter().map(|&v| Complex::new(v, 0.0)).collect()
}

fn check_spectral_grid(grid: &Grid) -> Result<()> {
    if !grid.is_periodic() {
        return Err(Error::InvalidGrid("spectral operators need a periodic grid".into()));
    }
    if !(1..=2).contains(&grid.dim()) {
        return Err(Error::InvalidGrid(format!("spectral grids are 1D or 2D, got {}D", grid.dim())));
    }
    Ok(())
}

/// Spectral Laplacian on a periodic grid.
pub fn spectral_laplacian(f: &GridFunction) -> Result<GridFunction> {
    let grid = f.grid();
    check_spectral_grid(grid)?;
    let mut c = to_complex(f.values());
    fft(&mut c, grid.shape(), false);
    for (v, s) in c.iter_mut().zip(laplacian_symbol(grid.shape())) {
        *v *= s;
    }
    fft(&mut c, grid.shape(), true);
    GridFunction::new(grid.clone(), c.iter().map(|v| v.re).collect())
}

/// Spectral partial derivatives, one function per axis.
pub fn spectral_gradient(f: &GridFunction) -> Result<Vec<GridFunction>> {
    let grid = f.grid();
    check_spectral_grid(grid)?;
    let shape = grid.shape();
    let mut hat = to_complex(f.values());
    fft(&mut hat, shape, false);
    (0..grid.dim())
        .map(|axis| {
            let mut c = hat.clone();
            for (flat, v) in c.iter_mut().enumerate() {
                let idx = grid.multi_index(flat);
                let factor = match wavenumber(idx[axis], shape[axis]) {
                    Some(k) => Complex::new(0.0, TAU * k / grid.extent(axis)),
                    None => Complex::new(0.0, 0.0),
                };
                *v *= factor;
            }
            fft(&mut c, shape, true);
            GridFunction::new(grid.clone(), c.iter().map(|v| v.re).collect())
        })
        .collect()
}

/// Spectral divergence of a vector field given per axis.
pub fn spectral_divergence(components: &[GridFunction]) -> Result<GridFunction> {
    let grid = components.first().ok_or_else(|| Error::param("components", "empty field"))?.grid().clone();
    let mut total = vec![0.0; grid.len()];
    for (axis, comp) in components.iter().enumerate() {
        let d = spectral_gradient(comp)?;
        for (t, v) in total.iter_mut().zip(d[axis].values()) {
            *t += v;
        }
    }
    GridFunction::new(grid, total)
}

/// Zero-mean solution of `Δu = source` on the torus.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    u: GridFunction,
    residual: f64,
}

impl PoissonSolution {
    pub fn u(&self) -> &GridFunction {
        &self.u
    }

    /// `‖Δu − source‖_∞` with the spectral Laplacian.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// Spectral solve of `Δu = source` with the zero mode set to 0.
pub fn solve_poisson_periodic(source: &GridFunction) -> Result<PoissonSolution> {
    let grid = source.grid();
    check_spectral_grid(grid)?;
    let mean = source.mean();
    if mean.abs() > DENSITY_MEAN_TOL {
        return Err(Error::NonZeroMean { mean });
    }
    let mut c = to_complex(source.values());
    fft(&mut c, grid.shape(), false);
    let scale: f64 = (0..grid.dim()).map(|a| grid.extent(a)).product::<f64>();
    debug_assert!((scale - 1.0).abs() < 1e-12, "the torus has unit periods");
    for (k, (v, s)) in c.iter_mut().zip(laplacian_symbol(grid.shape())).enumerate() {
        *v = if k == 0 { Complex::new(0.0, 0.0) } else { *v / s };
    }
    fft(&mut c, grid.shape(), true);
    let mut values: Vec<f64> = c.iter().map(|v| v.re).collect();
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= m);
    let u = GridFunction::new(grid.clone(), values)?;
    let lap = spectral_laplacian(&u)?;
    let residual = lap.values().iter().zip(source.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PoissonSolution { u, residual })
}

/// `(1 − t)ρ₀ + tρ₁`.
pub fn interpolate_density(rho0: &GridDensity, rho1: &GridDensity, t: f64) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("{t} outside [0, 1]")));
    }
    if !rho0.grid().same_as(rho1.grid()) {
        return Err(Error::InvalidGrid("densities live on different grids".into()));
    }
    let values = rho0.values().iter().zip(rho1.values()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    GridDensity::new(rho0.grid().clone(), values)
}

/// `ξ(t, x) = ∇u(x) / ((1 − t)ρ₀(x) + tρ₁(x))`.
#[derive(Clone, Debug)]
pub struct MoserField {
    u: PoissonSolution,
    grad: Vec<GridFunction>,
    rho0: GridDensity,
    rho1: GridDensity,
}

impl MoserField {
    /// Builds the field; both densities must be at least [`MIN_DENSITY`].
    pub fn new(rho0: &GridDensity, rho1: &GridDensity) -> Result<Self> {
        if !rho0.grid().same_as(rho1.grid()) {
            return Err(Error::InvalidGrid("densities live on different grids".into()));
        }
        check_spectral_grid(rho0.grid())?;
        let min = rho0.min().min(rho1.min());
        if min < MIN_DENSITY {
            return Err(Error::NotPositive { min, required: MIN_DENSITY });
        }
        let mut diff: Vec<f64> = rho0.values().iter().zip(rho1.values()).map(|(a, b)| a - b).collect();
        // both means are 1 only up to the density tolerance
        let m = diff.iter().sum::<f64>() / diff.len() as f64;
        diff.iter_mut().for_each(|v| *v -= m);
        let u = solve_poisson_periodic(&GridFunction::new(rho0.grid().clone(), diff)?)?;
        let grad = spectral_gradient(u.u())?;
        Ok(MoserField { u, grad, rho0: rho0.clone(), rho1: rho1.clone() })
    }

    pub fn potential(&self) -> &PoissonSolution {
        &self.u
    }

    pub fn gradient(&self) -> &[GridFunction] {
        &self.grad
    }

    pub fn grid(&self) -> &Grid {
        self.rho0.grid()
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let grid = self.grid();
        let dim = grid.dim();
        let mut num = [0.0f64; 2];
        let mut den = 0.0;
        grid.interp_stencil(x, |k, w| {
            for (a, g) in self.grad.iter().enumerate() {
                num[a] += w * g.values()[k];
            }
            den += w * ((1.0 - t) * self.rho0.values()[k] + t * self.rho1.values()[k]);
        });
        num[..dim].iter().map(|v| v / den).collect()
    }

    /// RK4 from `t0` to `t1` in `steps` equal steps, starting at `points`
    /// (flattened, updated in place, unwrapped). Fails when a single step moves
    /// a point by more than half a cell.
    pub fn flow(&self, points: &mut [f64], t0: f64, t1: f64, steps: usize) -> Result<()> {
        let grid = self.grid();
        let dim = grid.dim();
        let dt = (t1 - t0) / steps as f64;
        let limit = 0.5 * grid.max_spacing();
        let worst = points
            .par_chunks_mut(dim)
            .map(|x| {
                let mut x0 = [0.0f64; 2];
                let mut tmp = [0.0f64; 2];
                for s in 0..steps {
                    let t = t0 + s as f64 * dt;
                    x0[..dim].copy_from_slice(x);
                    let k1 = self.eval(t, &x0[..dim]);
                    for a in 0..dim {
                        tmp[a] = x0[a] + 0.5 * dt * k1[a];
                    }
                    let k2 = self.eval(t + 0.5 * dt, &tmp[..dim]);
                    for a in 0..dim {
                        tmp[a] = x0[a] + 0.5 * dt * k2[a];
                    }
                    let k3 = self.eval(t + 0.5 * dt, &tmp[..dim]);
                    for a in 0..dim {
                        tmp[a] = x0[a] + dt * k3[a];
                    }
                    let k4 = self.eval(t + dt, &tmp[..dim]);
                    let mut disp = 0.0f64;
                    for a in 0..dim {
                        let d = dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
                        x[a] = x0[a] + d;
                        disp += d * d;
                    }
                    let disp = disp.sqrt();
                    if !(disp <= limit) {
                        return Some((s, disp));
                    }
                }
                None
            })
            .reduce(
                || None,
                |a, b| match (a, b) {
                    (Some(p), Some(q)) => Some(if q.0 < p.0 { q } else { p }),
                    (p, None) => p,
                    (None, q) => q,
                },
            );
        match worst {
            Some((step, displacement)) => Err(Error::BlowUp { step, displacement, limit }),
            None => Ok(()),
        }
    }

    /// `max |ρ₁ − ρ₀ + div_h(ρ_t ξ(t, ·))|` at the grid nodes.
    pub fn continuity_residual(&self, t: f64) -> Result<f64> {
        let grid = self.grid().clone();
        let dim = grid.dim();
        let flux: Vec<GridFunction> = (0..dim)
            .map(|a| {
                let vals = (0..grid.len())
                    .map(|k| {
                        let x = grid.point(k);
                        let rho_t = (1.0 - t) * self.rho0.values()[k] + t * self.rho1.values()[k];
                        rho_t * self.eval(t, &x)[a]
                    })
                    .collect();
                GridFunction::new(grid.clone(), vals)
            })
            .collect::<Result<_>>()?;
        let div = spectral_divergence(&flux)?;
        Ok((0..grid.len())
            .map(|k| (self.rho1.values()[k] - self.rho0.values()[k] + div.values()[k]).abs())
            .fold(0.0, f64::max))
    }
}

/// Time-1 map of the Moser flow with diagnostics.
#[derive(Clone, Debug)]
pub struct FlowMap {
    map: TransportMap,
    steps: usize,
    checkpoints: Vec<(f64, Vec<f64>)>,
    poisson_residual: f64,
    pushforward_w1: f64,
}

/// Summary fields of a [`FlowMap`].
#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    pub n: usize,
    pub dim: usize,
    pub steps: usize,
    pub order: usize,
    pub poisson_residual: f64,
    pub pushforward_w1: f64,
    pub jacobian_min: f64,
}

impl FlowMap {
    pub fn map(&self) -> &TransportMap {
        &self.map
    }

    pub fn into_map(self) -> TransportMap {
        self.map
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Integrator order (classical Runge–Kutta).
    pub fn order(&self) -> usize {
        4
    }

    /// Node positions at `t = 1/4, 1/2, 3/4`, unwrapped.
    pub fn checkpoints(&self) -> &[(f64, Vec<f64>)] {
        &self.checkpoints
    }

    pub fn poisson_residual(&self) -> f64 {
        self.poisson_residual
    }

    /// `W₁(T_*ρ₀, ρ₁)` from the particle pushforward.
    pub fn pushforward_w1(&self) -> f64 {
        self.pushforward_w1
    }

    /// Images reduced to `[0, 1)^d`.
    pub fn wrapped(&self) -> Vec<f64> {
        self.map.image_wrapped()
    }

    pub fn report(&self) -> Result<FlowReport> {
        let grid = self.map.grid().expect("flow maps live on their grid");
        Ok(FlowReport {
            n: grid.shape()[0],
            dim: grid.dim(),
            steps: self.steps,
            order: self.order(),
            poisson_residual: self.poisson_residual,
            pushforward_w1: self.pushforward_w1,
            jacobian_min: jacobian_min(&self.map)?,
        })
    }
}

/// Particles per cell per axis used for the pushforward check.
fn particles_per_axis(dim: usize) -> usize {
    if dim == 1 {
        64
    } else {
        8
    }
}

/// Moser time-1 map from `ρ₀` to `ρ₁` with `steps` RK4 steps (default `4n`).
pub fn moser_map(rho0: &GridDensity, rho1: &GridDensity, steps: Option<usize>) -> Result<FlowMap> {
    let field = MoserField::new(rho0, rho1)?;
    let grid = rho0.grid();
    let steps = steps.unwrap_or(4 * rho0.n());
    if steps < MIN_STEPS {
        return Err(Error::param("steps", format!("{steps} < {MIN_STEPS}")));
    }
    let mut points = grid.points();
    let mut checkpoints = Vec::new();
    let quarter = steps / 4;
    if steps % 4 == 0 {
        for q in 0..4 {
            let (t0, t1) = (q as f64 / 4.0, (q + 1) as f64 / 4.0);
            field.flow(&mut points, t0, t1, quarter)?;
            if q < 3 {
                checkpoints.push((t1, points.clone()));
            }
        }
    } else {
        field.flow(&mut points, 0.0, 1.0, steps)?;
    }
    let map = TransportMap::on_grid(grid, points, Route::Moser)?;
    let m = particles_per_axis(grid.dim());
    let push = grid_pushforward(&map, rho0, grid.len() * m.pow(grid.dim() as u32))?;
    let pushforward_w1 = wasserstein_grid_w1(&push, rho1)?;
    Ok(FlowMap { map, steps, checkpoints, poisson_residual: field.u.residual, pushforward_w1 })
}

/// Minimum over nodes of `det DT` by centred differences of the displacement
/// (nearest lift across the periodic seam; one-sided on box edges).
pub fn jacobian_min(map: &TransportMap) -> Result<f64> {
    let grid = map.grid().ok_or_else(|| Error::Unsupported("Jacobians of maps without a grid".into()))?;
    let dim = grid.dim();
    if !(1..=2).contains(&dim) {
        return Err(Error::Unsupported(format!("Jacobians in {dim} dimensions")));
    }
    let disp: Vec<f64> = (0..map.len())
        .flat_map(|i| {
            let (x, y) = (map.domain_point(i), map.image_point(i));
            (0..dim)
                .map(|a| if grid.is_periodic() { grid.lift_diff(a, y[a] - x[a]) } else { y[a] - x[a] })
                .collect::<Vec<_>>()
        })
        .collect();
    let shape = grid.shape();
    let mut worst = f64::INFINITY;
    for i in 0..grid.len() {
        let idx = grid.multi_index(i);
        let mut jac = [[0.0f64; 2]; 2];
        for a in 0..dim {
            let n = shape[a];
            let (lo, hi, span) = if grid.is_periodic() {
                ((idx[a] + n - 1) % n, (idx[a] + 1) % n, 2.0)
            } else if idx[a] == 0 {
                (0, 1.min(n - 1), 1.0)
            } else if idx[a] + 1 == n {
                (n - 2, n - 1, 1.0)
            } else {
                (idx[a] - 1, idx[a] + 1, 2.0)
            };
            let mut il = idx.clone();
            let mut ih = idx.clone();
            il[a] = lo;
            ih[a] = hi;
            let (jl, jh) = (grid.flat_index(&il), grid.flat_index(&ih));
            let h = span * grid.spacing(a);
            for b in 0..dim {
                let dd = if grid.is_periodic() {
                    grid.lift_diff(b, disp[jh * dim + b] - disp[jl * dim + b])
                } else {
                    disp[jh * dim + b] - disp[jl * dim + b]
                };
                jac[b][a] = dd / h;
            }
            jac[a][a] += 1.0;
        }
        let det = if dim == 1 { jac[0][0] } else { jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0] };
        worst = worst.min(det);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos_density(n: usize, a: f64) -> GridDensity {
        GridDensity::from_fn(Grid::torus(1, n).unwrap(), |x| 1.0 + a * (TAU * x[0]).cos()).unwrap()
    }

    #[test]
    fn poisson_single_modes() {
        let g1 = Grid::torus(1, 64).unwrap();
        let src = GridFunction::from_fn(g1, |x| (TAU * x[0]).cos());
        let sol = solve_poisson_periodic(&src).unwrap();
        for (i, u) in sol.u().values().iter().enumerate() {
            let x = sol.u().grid().point(i);
            assert!((u + (TAU * x[0]).cos() / (TAU * TAU)).abs() < 1e-10);
        }
        assert!(sol.residual() < 1e-12);

        let g2 = Grid::torus(2, 32).unwrap();
        let f = |x: &[f64]| (TAU * x[0]).cos() * (TAU * x[1]).cos();
        let sol = solve_poisson_periodic(&GridFunction::from_fn(g2, f)).unwrap();
        for (i, u) in sol.u().values().iter().enumerate() {
            let x = sol.u().grid().point(i);
            assert!((u + f(&x) / (2.0 * TAU * TAU)).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let src = GridFunction::from_fn(Grid::torus(1, 16).unwrap(), |_| 1e-6);
        assert!(matches!(solve_poisson_periodic(&src), Err(Error::NonZeroMean { .. })));
        let zero = GridFunction::zeros(Grid::torus(2, 16).unwrap());
        assert_eq!(solve_poisson_periodic(&zero).unwrap().u().max_abs(), 0.0);
    }

    #[test]
    fn equal_densities_give_identity() {
        let rho = cos_density(32, 0.3);
        let flow = moser_map(&rho, &rho, None).unwrap();
        assert_eq!(flow.map().image(), flow.map().domain());
        assert_eq!(jacobian_min(flow.map()).unwrap(), 1.0);
    }

    #[test]
    fn jacobian_of_sine_perturbation() {
        let grid = Grid::torus(1, 64).unwrap();
        let t = TransportMap::grid_from_fn(&grid, |x| vec![x[0] + 0.1 * (TAU * x[0]).sin() / TAU]).unwrap();
        // centred differences of sin: factor sin(2πh)/(2πh)
        let h = grid.spacing(0);
        let expected = (0..64)
            .map(|k| 1.0 + 0.1 * (TAU * grid.coord(0, k)).cos() * (TAU * h).sin() / (TAU * h))
            .fold(f64::INFINITY, f64::min);
        assert!((jacobian_min(&t).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.9).abs() < 1e-3);
    }

    #[test]
    fn continuity_identity_holds() {
        let grid = Grid::torus(2, 16).unwrap();
        let r0 = GridDensity::from_fn(grid.clone(), |x| 1.0 + 0.3 * (TAU * x[0]).sin()).unwrap();
        let r1 = GridDensity::from_fn(grid, |x| 1.0 + 0.4 * (TAU * (x[0] + x[1])).cos()).unwrap();
        let field = MoserField::new(&r0, &r1).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!(field.continuity_residual(t).unwrap() < 1e-10);
        }
    }

    #[test]
    fn semigroup_consistency() {
        let r1 = cos_density(32, 0.5);
        let r0 = GridDensity::uniform(r1.grid().clone()).unwrap();
        let field = MoserField::new(&r0, &r1).unwrap();
        let mut direct = r0.grid().points();
        field.flow(&mut direct, 0.0, 1.0, 128).unwrap();
        let mut split = r0.grid().points();
        field.flow(&mut split, 0.0, 0.5, 64).unwrap();
        field.flow(&mut split, 0.5, 1.0, 64).unwrap();
        for (a, b) in direct.iter().zip(&split) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_non_positive_density() {
        let grid = Grid::torus(1, 16).unwrap();
        let bad = GridDensity::from_fn(grid.clone(), |x| if x[0] < 0.5 { 2.0 } else { 0.0 }).unwrap();
        let ok = GridDensity::uniform(grid).unwrap();
        assert!(matches!(moser_map(&ok, &bad, None), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn interpolation_endpoints() {
        let grid = Grid::torus(1, 16).unwrap();
        let a = GridDensity::from_fn(grid.clone(), |x| 1.0 - 0.3 * (TAU * x[0]).cos()).unwrap();
        let b = GridDensity::from_fn(grid, |x| 1.0 + 0.3 * (TAU * x[0]).cos()).unwrap();
        assert_eq!(interpolate_density(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_density(&a, &b, 1.0).unwrap(), b);
        let mid = interpolate_density(&a, &b, 0.5).unwrap();
        assert!(mid.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(interpolate_density(&a, &b, 1.5).is_err());
    }
}
