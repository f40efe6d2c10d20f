//! # randmap
//!
//! Random-map representations of Markov kernels.
//!
//! A Markov kernel `x ↦ μ_x` is represented by random maps `f_ω` when the law of
//! `ω ↦ f_ω(x)` equals `μ_x` for every `x`. This crate builds such representations
//! on finite sets of base points by transporting a fixed reference measure `ν`
//! onto every `μ_x`:
//!
//! - [`transport`]: optimal couplings (exact LP, entropic, 1D quantile maps,
//!   entropic Brenier maps), Legendre duality and map inversion.
//! - [`moser`]: Moser coupling on the flat torus (spectral Poisson solve, flow of
//!   the interpolating vector field, time-1 maps).
//! - [`kernel`]: kernel families, the measurable and continuous representation
//!   builders, random-map sampling and Monte Carlo verification.
//! - [`lift`]: exponential-map and trivial-bundle lifting for S¹, T² and S².
//! - [`measures`]: discrete and grid measures, moments, pushforwards and
//!   Wasserstein distances.
//!
//! Randomness enters only through explicit `u64` seeds (ChaCha8 streams), so every
//! report is reproducible bit for bit.

#![forbid(unsafe_code)]

pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod lift;
pub mod measures;
pub mod moser;
pub mod transport;

pub(crate) mod flow;
pub(crate) mod quantile;

pub use error::{Error, Result};
pub use grid::{Grid, GridDensity, GridFunction, Layout};
pub use measures::{DiscreteMeasure, EmpiricalSample, MeasureRef, Metric};
pub use transport::{Cost, CostKind, PotentialGrid, Route, TransportMap, TransportPlan};
