//! Convergence in probability of optimal maps under target perturbation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::measures::{DiscreteMeasure, Metric};

use super::{brenier_map, circle_monotone_map, monotone_map_1d, Cost, CostKind, TransportMap};

fn optimal_map(mu: &GridDensity, nu: &DiscreteMeasure, cost: &Cost) -> Result<TransportMap> {
    match mu.dim() {
        1 if mu.grid().is_periodic() && cost.metric == Metric::Torus => {
            let p = cost.exponent().ok_or_else(|| Error::Unsupported("dot cost on the circle".into()))?;
            circle_monotone_map(mu, nu.into(), p)
        }
        1 => monotone_map_1d(mu.into(), nu.into()),
        _ => match cost.kind {
            CostKind::SquaredDistance | CostKind::NegativeDot => {
                let h = mu.grid().max_spacing();
                brenier_map(mu, nu.into(), h * h)
            }
            CostKind::DistancePow(_) => Err(Error::Unsupported("non-quadratic costs in 2D".into())),
        },
    }
}

/// For each `ν_k`, the μ-mass of `{x : d(T_k(x), T(x)) ≥ ε}` at the cell
/// centres, where `T_k` and `T` are the optimal maps from `μ` to `ν_k` and
/// `ν_limit`. In 1D the monotone map is used (optimal for every convex cost);
/// in 2D the entropic Brenier map at `ε_reg = h²`.
pub fn stability_experiment(
    mu: &GridDensity,
    nu_seq: &[DiscreteMeasure],
    nu_limit: &DiscreteMeasure,
    eps: f64,
    cost: &Cost,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("{eps} is not positive")));
    }
    cost.validate()?;
    let limit = optimal_map(mu, nu_limit, cost)?;
    let masses = mu.masses();
    let metric = if mu.grid().is_periodic() { Metric::Torus } else { Metric::Euclidean };
    nu_seq
        .par_iter()
        .map(|nu| {
            let tk = optimal_map(mu, nu, cost)?;
            let wrapped_k = tk.image_wrapped();
            let wrapped = limit.image_wrapped();
            let d = mu.dim();
            Ok((0..tk.len())
                .filter(|&i| metric.distance(&wrapped_k[i * d..(i + 1) * d], &wrapped[i * d..(i + 1) * d]) >= eps)
                .fold(0.0, |acc, i| acc + masses[i]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn constant_sequence_gives_zero() {
        let mu = GridDensity::uniform(Grid::cells(vec![0.0], vec![1.0], vec![32]).unwrap()).unwrap();
        let nu = DiscreteMeasure::new(1, vec![0.2, 0.6], vec![0.3, 0.7]).unwrap();
        let out = stability_experiment(&mu, &vec![nu.clone(); 3], &nu, 0.01, &Cost::squared()).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }
}
