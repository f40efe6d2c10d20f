use std::f64::consts::TAU;

use proptest::prelude::*;

use randmap::measures::wasserstein_1d;
use randmap::moser::{interpolate_density, moser_map, solve_poisson_periodic, MoserField};
use randmap::transport::monotone_map_1d;
use randmap::{DiscreteMeasure, Grid, GridDensity, GridFunction, Metric, TransportMap};

/// `1 + a cos(2π(k·x) + φ)` on the torus.
fn trig_density(grid: &Grid, a: f64, k: &[f64], phase: f64) -> GridDensity {
    GridDensity::from_fn(grid.clone(), |x| {
        let arg: f64 = x.iter().zip(k).map(|(xi, ki)| xi * ki).sum();
        1.0 + a * (TAU * arg + phase).cos()
    })
    .unwrap()
}

fn mode(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2i32..=2, dim)
        .prop_filter("nonzero mode", |k| k.iter().any(|&v| v != 0))
        .prop_map(|k| k.into_iter().map(f64::from).collect())
}

fn pair(dim: usize) -> impl Strategy<Value = (GridDensity, GridDensity)> {
    let n = if dim == 1 { 32 } else { 16 };
    (0.0f64..0.4, mode(dim), 0.0f64..TAU, 0.0f64..0.4, mode(dim), 0.0f64..TAU).prop_map(
        move |(a0, k0, p0, a1, k1, p1)| {
            let grid = Grid::torus(dim, n).unwrap();
            (trig_density(&grid, a0, &k0, p0), trig_density(&grid, a1, &k1, p1))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn poisson_solve_is_exact_and_gauge_fixed((r0, r1) in (1usize..=2).prop_flat_map(pair)) {
        let diff: Vec<f64> = r0.values().iter().zip(r1.values()).map(|(a, b)| a - b).collect();
        let mean = diff.iter().sum::<f64>() / diff.len() as f64;
        let source = GridFunction::new(r0.grid().clone(), diff.iter().map(|v| v - mean).collect()).unwrap();
        let solution = solve_poisson_periodic(&source).unwrap();
        prop_assert!(solution.residual() <= 1e-8);
        prop_assert!(solution.u().mean().abs() <= 1e-12);
    }

    #[test]
    fn continuity_equation_holds((r0, r1) in (1usize..=2).prop_flat_map(pair), t in 0.0f64..=1.0) {
        let field = MoserField::new(&r0, &r1).unwrap();
        prop_assert!(field.continuity_residual(t).unwrap() <= 1e-6);
        let rho_t = interpolate_density(&r0, &r1, t).unwrap();
        prop_assert!((rho_t.as_function().mean() - 1.0).abs() <= 1e-12);
        prop_assert!(rho_t.min() >= r0.min().min(r1.min()) - 1e-12);
    }

    #[test]
    fn split_integration_matches_direct((r0, r1) in (1usize..=2).prop_flat_map(pair)) {
        let field = MoserField::new(&r0, &r1).unwrap();
        let steps = 4 * r0.grid().shape()[0];
        let mut direct = r0.grid().points();
        field.flow(&mut direct, 0.0, 1.0, steps).unwrap();
        let mut split = r0.grid().points();
        field.flow(&mut split, 0.0, 0.5, steps / 2).unwrap();
        field.flow(&mut split, 0.5, 1.0, steps / 2).unwrap();
        for (a, b) in direct.iter().zip(&split) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }
}

/// `W₁(T_* m, ρ)` with `m` resolved by 1024 particles per cell.
fn particle_w1(map: &TransportMap, target: &GridDensity) -> f64 {
    let total = map.len() * 1024;
    let points = (0..total).map(|i| map.eval(&[(i as f64 + 0.5) / total as f64]).unwrap()[0]).collect();
    let sample = DiscreteMeasure::new(1, points, vec![1.0 / total as f64; total]).unwrap();
    wasserstein_1d((&sample).into(), target.into(), 1.0, Metric::Torus).unwrap()
}

fn fine_target(a: f64) -> GridDensity {
    let n = 1 << 14;
    let h = 1.0 / n as f64;
    let values =
        (0..n).map(|k| 1.0 + a * ((TAU * (k + 1) as f64 * h).sin() - (TAU * k as f64 * h).sin()) / (TAU * h)).collect();
    GridDensity::new(Grid::torus(1, n).unwrap(), values).unwrap()
}

#[test]
fn pushforward_error_contracts_under_refinement() {
    let fine = fine_target(0.5);
    let errors: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let grid = Grid::torus(1, n).unwrap();
            let rho1 = trig_density(&grid, 0.5, &[1.0], 0.0);
            let flow = moser_map(&GridDensity::uniform(grid).unwrap(), &rho1, None).unwrap();
            particle_w1(flow.map(), &fine)
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] / w[0] <= 0.67, "{errors:?}");
    }
}

#[test]
fn moser_and_monotone_pushforwards_agree() {
    let grid = Grid::torus(1, 64).unwrap();
    let uniform = GridDensity::uniform(grid.clone()).unwrap();
    let rho1 = trig_density(&grid, 0.5, &[1.0], 0.0);
    let moser = moser_map(&uniform, &rho1, None).unwrap();
    let line = Grid::cells(vec![0.0], vec![1.0], vec![64]).unwrap();
    let mu = GridDensity::uniform(line.clone()).unwrap();
    let nu = GridDensity::new(line, rho1.values().to_vec()).unwrap();
    let monotone = monotone_map_1d((&mu).into(), (&nu).into()).unwrap();
    let fine = fine_target(0.5);
    let (a, b) = (particle_w1(moser.map(), &fine), particle_w1(&monotone, &fine));
    assert!((a - b).abs() <= 2e-2 && a <= 2e-2 && b <= 2e-2, "{a} vs {b}");
}

#[test]
fn symmetric_interpolation_cancels() {
    let grid = Grid::torus(2, 16).unwrap();
    let r0 = trig_density(&grid, -0.3, &[1.0, 0.0], 0.0);
    let r1 = trig_density(&grid, 0.3, &[1.0, 0.0], 0.0);
    let mid = interpolate_density(&r0, &r1, 0.5).unwrap();
    assert!(mid.values().iter().all(|v| (v - 1.0).abs() <= 1e-15));
    assert_eq!(interpolate_density(&r0, &r1, 0.0).unwrap().values(), r0.values());
    assert_eq!(interpolate_density(&r0, &r1, 1.0).unwrap().values(), r1.values());
    assert!(interpolate_density(&r0, &r1, 1.5).is_err());
}

#[test]
fn checkpoints_and_wrapped_images() {
    let grid = Grid::torus(2, 16).unwrap();
    let r1 = trig_density(&grid, 0.4, &[1.0, 1.0], 0.3);
    let flow = moser_map(&GridDensity::uniform(grid).unwrap(), &r1, None).unwrap();
    assert_eq!(flow.steps(), 64);
    let times: Vec<f64> = flow.checkpoints().iter().map(|(t, _)| *t).collect();
    assert_eq!(times, vec![0.25, 0.5, 0.75]);
    assert!(flow.wrapped().iter().all(|&x| (0.0..1.0).contains(&x)));
    let report = flow.report().unwrap();
    assert!(report.jacobian_min > 0.0 && report.poisson_residual <= 1e-8);
}
