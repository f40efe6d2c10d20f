//! Regular grids on boxes and on the flat torus, plus the density type that
//! lives on them.
//!
//! Two layouts are used. [`Layout::Cells`] places one sample at the centre of
//! each of `n` equal cells (densities, flow maps); [`Layout::Nodes`] places `n`
//! samples including both endpoints (potentials for Legendre transforms).
//! Flat indices are row-major with axis 0 slowest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the mean of a [`GridDensity`].
pub const DENSITY_MEAN_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Cells,
    Nodes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    shape: Vec<usize>,
    layout: Layout,
    periodic: bool,
}

impl Grid {
    /// Cell-centred grid on the unit torus `[0,1)^dim` with `n` cells per axis.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::build(vec![0.0; dim], vec![1.0; dim], vec![n; dim], Layout::Cells, true)
    }

    /// Cell-centred grid on the box `[lo, hi]`.
    pub fn cells(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        Self::build(lo, hi, shape, Layout::Cells, false)
    }

    /// Node grid on the box `[lo, hi]`, endpoints included.
    pub fn nodes(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        Self::build(lo, hi, shape, Layout::Nodes, false)
    }

    fn build(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>, layout: Layout, periodic: bool) -> Result<Self> {
        let dim = shape.len();
        if dim == 0 || dim > 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if lo.len() != dim || hi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: lo.len().min(hi.len()) });
        }
        for a in 0..dim {
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return Err(Error::InvalidGrid(format!("axis {a}: bounds [{}, {}]", lo[a], hi[a])));
            }
            let min_n = if layout == Layout::Nodes { 2 } else { 1 };
            if shape[a] < min_n {
                return Err(Error::InvalidGrid(format!("axis {a}: {} points", shape[a])));
            }
        }
        Ok(Grid { lo, hi, shape, layout, periodic })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        match self.layout {
            Layout::Cells => self.extent(axis) / self.shape[axis] as f64,
            Layout::Nodes => self.extent(axis) / (self.shape[axis] - 1) as f64,
        }
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    /// Diameter of the domain in its own metric.
    pub fn diameter(&self) -> f64 {
        let s: f64 = (0..self.dim())
            .map(|a| {
                let e = if self.periodic { 0.5 * self.extent(a) } else { self.extent(a) };
                e * e
            })
            .sum();
        s.sqrt()
    }

    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        let h = self.spacing(axis);
        match self.layout {
            Layout::Cells => self.lo[axis] + (k as f64 + 0.5) * h,
            Layout::Nodes => self.lo[axis] + k as f64 * h,
        }
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&k, &n)| acc * n + k)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(a, &k)| self.coord(a, k)).collect()
    }

    /// All sample points, flattened row-major (`len() * dim()` values).
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.point(i)).collect()
    }

    /// Wraps a single coordinate into `[lo, hi)` on periodic grids.
    pub fn wrap_coord(&self, axis: usize, x: f64) -> f64 {
        if !self.periodic {
            return x;
        }
        let l = self.extent(axis);
        let r = (x - self.lo[axis]).rem_euclid(l);
        // rem_euclid can return l itself for tiny negative inputs
        let r = if r >= l { 0.0 } else { r };
        self.lo[axis] + r
    }

    pub fn wrap(&self, x: &mut [f64]) {
        for (a, v) in x.iter_mut().enumerate() {
            *v = self.wrap_coord(a, *v);
        }
    }

    /// Nearest lift of a coordinate difference on periodic grids: maps into
    /// `[-L/2, L/2)`.
    pub fn lift_diff(&self, axis: usize, d: f64) -> f64 {
        if !self.periodic {
            return d;
        }
        lift_delta(d, self.extent(axis))
    }

    /// Flat index of the cell containing `x`. Periodic grids wrap; box grids
    /// clamp when `clamp` is set and return `None` otherwise for outside points.
    pub fn locate(&self, x: &[f64], clamp: bool) -> Option<usize> {
        debug_assert_eq!(self.layout, Layout::Cells);
        let mut flat = 0usize;
        for (a, &xa) in x.iter().enumerate().take(self.dim()) {
            let n = self.shape[a];
            let s = (self.wrap_coord(a, xa) - self.lo[a]) / self.spacing(a);
            let mut k = s.floor();
            if self.periodic {
                k = k.rem_euclid(n as f64);
            } else if k < 0.0 || k >= n as f64 {
                if !clamp {
                    // the upper boundary belongs to the last cell
                    if k == n as f64 && xa <= self.hi[a] {
                        k = (n - 1) as f64;
                    } else {
                        return None;
                    }
                }
                k = k.clamp(0.0, (n - 1) as f64);
            }
            flat = flat * n + k as usize;
        }
        Some(flat)
    }

    /// Multilinear interpolation weights at `x` over the sample lattice.
    /// Periodic grids wrap; box grids extrapolate linearly from the edge pair.
    pub fn interp_stencil(&self, x: &[f64], mut f: impl FnMut(usize, f64)) {
        let dim = self.dim();
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..dim {
            let n = self.shape[a];
            let offset = if self.layout == Layout::Cells { 0.5 } else { 0.0 };
            let s = (x[a] - self.lo[a]) / self.spacing(a) - offset;
            if self.periodic {
                let k = s.floor();
                frac[a] = s - k;
                let k0 = (k as i64).rem_euclid(n as i64) as usize;
                base[a] = k0;
                next[a] = (k0 + 1) % n;
            } else if n == 1 {
                base[a] = 0;
                next[a] = 0;
                frac[a] = 0.0;
            } else {
                let k = s.floor().clamp(0.0, (n - 2) as f64);
                frac[a] = s - k;
                base[a] = k as usize;
                next[a] = k as usize + 1;
            }
        }
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for a in 0..dim {
                let hi = (corner >> (dim - 1 - a)) & 1 == 1;
                let (k, wa) = if hi { (next[a], frac[a]) } else { (base[a], 1.0 - frac[a]) };
                w *= wa;
                flat = flat * self.shape[a] + k;
            }
            if w != 0.0 {
                f(flat, w);
            }
        }
    }

    /// True when both grids have the same layout, shape and bounds.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.shape == other.shape
            && self.layout == other.layout
            && self.periodic == other.periodic
            && self.lo.iter().zip(&other.lo).all(|(a, b)| (a - b).abs() <= 1e-12)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// Maps `d` into `[-l/2, l/2)`.
pub(crate) fn lift_delta(d: f64, l: f64) -> f64 {
    let r = (d + 0.5 * l).rem_euclid(l);
    let r = if r >= l { 0.0 } else { r };
    r - 0.5 * l
}

/// Plain values on a grid, with no sign or normalisation constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at {i}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation at `x`.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.grid.interp_stencil(x, |i, w| acc += w * self.values[i]);
        acc
    }
}

/// Density with respect to the normalised volume of its domain, sampled at
/// cell centres. Values are nonnegative with mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    inner: GridFunction,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::check_grid(&grid)?;
        let inner = GridFunction::new(grid, values)?;
        if let Some(i) = inner.values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidMeasure(format!("negative density {} at cell {i}", inner.values[i])));
        }
        let mean = inner.mean();
        if (mean - 1.0).abs() > DENSITY_MEAN_TOL {
            return Err(Error::InvalidMeasure(format!("density mean {mean} differs from 1")));
        }
        Ok(GridDensity { inner })
    }

    /// Rescales nonnegative values to mean 1.
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::InvalidMeasure(format!("cannot normalise values with mean {mean}")));
        }
        let values = values.into_iter().map(|v| v / mean).collect();
        Self::new(grid, values)
    }

    /// Samples `f` at cell centres and normalises.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::normalized(grid, values)
    }

    pub fn uniform(grid: Grid) -> Result<Self> {
        let values = vec![1.0; grid.len()];
        Self::new(grid, values)
    }

    fn check_grid(grid: &Grid) -> Result<()> {
        if grid.layout() != Layout::Cells {
            return Err(Error::InvalidGrid("densities need a cell-centred grid".into()));
        }
        if !(1..=2).contains(&grid.dim()) {
            return Err(Error::InvalidGrid(format!("density dimension {} not in {{1,2}}", grid.dim())));
        }
        let n = grid.shape()[0];
        if grid.shape().iter().any(|&m| m != n) {
            return Err(Error::InvalidGrid("densities need the same cell count on every axis".into()));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("cell count {n} must be a power of two >= 8")));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.inner.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn as_function(&self) -> &GridFunction {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.grid().shape()[0]
    }

    pub fn min(&self) -> f64 {
        self.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every value is at least `kappa`.
    pub fn is_positive(&self, kappa: f64) -> bool {
        self.min() >= kappa
    }

    /// Probability mass of each cell.
    pub fn masses(&self) -> Vec<f64> {
        let len = self.values().len() as f64;
        self.values().iter().map(|v| v / len).collect()
    }
}
