use std::f64::consts::TAU;

use randmap::kernel::{
    build_continuous_representation, build_measurable_representation, continuity_modulus, sample_random_map,
    verify_representation, BaseSpace, Interpolation, KernelFamily, RandomMapFamily, Reference, RepresentationRoute,
};
use randmap::measures::wasserstein_to_density;
use randmap::{DiscreteMeasure, Grid, GridDensity, Metric, TransportMap};

fn circle_points(k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| vec![i as f64 / k as f64]).collect()
}

fn cos_kernel(k: usize, a: f64) -> KernelFamily {
    KernelFamily::from_density_fn(
        BaseSpace::Circle,
        circle_points(k),
        &Grid::torus(1, 64).unwrap(),
        Interpolation::None,
        |x, y| 1.0 + a * (TAU * (y[0] - x[0])).cos(),
    )
    .unwrap()
}

/// Reference `1 + 0.5 cos(2πy)` and the kernel of its translates by `i/8`.
fn translation_kernel() -> (GridDensity, KernelFamily) {
    let grid = Grid::torus(1, 64).unwrap();
    let f = |y: f64| 1.0 + 0.5 * (TAU * y).cos();
    let nu = GridDensity::from_fn(grid.clone(), |y| f(y[0])).unwrap();
    let kernel =
        KernelFamily::from_density_fn(BaseSpace::Circle, circle_points(8), &grid, Interpolation::Nearest, |x, y| {
            f(y[0] - x[0])
        })
        .unwrap();
    (nu, kernel)
}

fn translation_family() -> RandomMapFamily {
    let (nu, kernel) = translation_kernel();
    let maps = kernel
        .points()
        .iter()
        .map(|x| {
            let s = x[0];
            TransportMap::grid_from_fn(nu.grid(), move |y| vec![y[0] + s]).unwrap()
        })
        .collect();
    RandomMapFamily::from_maps(&kernel, Reference::Grid(nu), maps, RepresentationRoute::Custom, 1e-9).unwrap()
}

#[test]
fn translation_modulus_equals_base_distance() {
    let family = translation_family();
    assert!(family.pushforward_w1().iter().all(|&w| w <= 1e-9));
    let table = continuity_modulus(&family).unwrap();
    assert_eq!(table.pairs.len(), 28);
    for e in &table.pairs {
        assert!((e.dt - e.dx).abs() <= 1e-12, "pair ({}, {}): {} vs {}", e.i, e.j, e.dt, e.dx);
    }
    assert!((table.lipschitz - 1.0).abs() <= 1e-12);
}

#[test]
fn translation_random_map_shifts_omega() {
    let family = translation_family();
    for seed in [1, 2, 3] {
        let f = sample_random_map(&family, seed).unwrap();
        let omega = f.omega()[0];
        for (x, v) in family.points().iter().zip(f.values()) {
            assert!(Metric::Torus.distance(v, &[omega + x[0]]) <= 1e-12);
        }
        // nearest rule: 0.13 is closest to 1/8
        assert_eq!(f.eval(&[0.13]).unwrap(), f.values()[1]);
    }
    let (a, b) = (sample_random_map(&family, 1).unwrap(), sample_random_map(&family, 2).unwrap());
    assert_ne!(a.values(), b.values());
}

#[test]
fn measurable_route_recovers_translations_of_a_bump() {
    let grid = Grid::torus(1, 128).unwrap();
    let h = grid.max_spacing();
    let bump = |y: f64| {
        // centred at 1/2
        let d = y.rem_euclid(1.0) - 0.5;
        let t = d / 0.15;
        if t.abs() < 1.0 {
            (1.0 - t * t).powi(2)
        } else {
            0.0
        }
    };
    let nu = GridDensity::from_fn(grid.clone(), |y| bump(y[0])).unwrap();
    let shifts = [0.0, 0.125, 0.25, 0.875];
    let points = shifts.iter().map(|&s| vec![s]).collect();
    let kernel =
        KernelFamily::from_density_fn(BaseSpace::Circle, points, &grid, Interpolation::None, |x, y| bump(y[0] - x[0]))
            .unwrap();
    let family = build_measurable_representation(&kernel, (&nu).into(), 2.0).unwrap();
    for (map, &s) in family.maps().iter().zip(&shifts) {
        for i in 0..map.len() {
            if nu.values()[i] > 1e-3 {
                let want = [map.domain_point(i)[0] + s];
                let d = Metric::Torus.distance(map.image_point(i), &want);
                assert!(d <= 2.0 * h, "shift {s}, node {i}: off by {d}");
            }
        }
    }
}

/// `W₁(T_* ν, μ)` with `ν` resolved by 256 particles per cell.
fn particle_pushforward_w1(map: &TransportMap, nu: &GridDensity, target: &GridDensity) -> f64 {
    const SUB: usize = 256;
    let n = nu.grid().len();
    let masses = nu.masses();
    let mut points = Vec::with_capacity(n * SUB);
    let mut weights = Vec::with_capacity(n * SUB);
    for (k, m) in masses.iter().enumerate() {
        for s in 0..SUB {
            let y = (k as f64 + (s as f64 + 0.5) / SUB as f64) / n as f64;
            points.push(map.eval(&[y]).unwrap()[0]);
            weights.push(m / SUB as f64);
        }
    }
    let sample = DiscreteMeasure::normalized(1, points, weights).unwrap();
    wasserstein_to_density(&sample, target).unwrap()
}

#[test]
fn eight_bump_kernel_measurable_within_two_cells() {
    let grid = Grid::torus(1, 64).unwrap();
    let h = grid.max_spacing();
    let kernel =
        KernelFamily::from_density_fn(BaseSpace::Circle, circle_points(8), &grid, Interpolation::None, |x, y| {
            (4.0 * (TAU * (y[0] - x[0])).cos()).exp()
        })
        .unwrap();
    let reference = kernel.default_reference().unwrap();
    let family = build_measurable_representation(&kernel, (&reference).into(), 2.0).unwrap();
    assert!(family.is_validated());
    for (i, map) in family.maps().iter().enumerate() {
        assert!(family.pushforward_w1()[i] <= 2.0 * h);
        let randmap::kernel::KernelMeasures::Grid(targets) = kernel.measures() else { unreachable!() };
        assert!(particle_pushforward_w1(map, &reference, &targets[i]) <= 2.0 * h);
    }
}

#[test]
fn corrupted_family_fails_at_the_corrupted_point() {
    let kernel = cos_kernel(4, 0.8);
    let family = build_continuous_representation(&kernel).unwrap();
    let mut maps = family.maps().to_vec();
    maps[2] = TransportMap::identity_on(maps[2].grid().unwrap());
    let corrupted =
        RandomMapFamily::from_maps(&kernel, family.reference().clone(), maps, RepresentationRoute::Custom, 1e-2)
            .unwrap();
    assert!(!corrupted.is_validated());
    let report = verify_representation(&corrupted, &kernel, 10_000, 0.05, 11).unwrap();
    assert!(!report.pass);
    for p in &report.per_point {
        assert_eq!(p.pass, p.index != 2, "point {}: w1 {}", p.index, p.w1);
    }
    assert!(report.per_point[2].w1 > 0.05);
}

#[test]
fn identity_family_distances_scale_like_inverse_root_n() {
    let kernel = cos_kernel(4, 0.0);
    let family = build_continuous_representation(&kernel).unwrap();
    let mean_w1 = |n: usize| -> f64 {
        let seeds = 1..=10u64;
        let total: f64 =
            seeds.clone().map(|s| verify_representation(&family, &kernel, n, 0.05, s).unwrap().distances()[0]).sum();
        total / seeds.count() as f64
    };
    let (small, large) = (mean_w1(100), mean_w1(10_000));
    let ratio = small / large;
    assert!((10.0 / 3.0..=30.0).contains(&ratio), "ratio {ratio}");
    let report = verify_representation(&family, &kernel, 10_000, 0.05, 7).unwrap();
    assert!(report.pass);
    let floor = 2.0 / 100.0 + 1.0 / 64.0;
    assert!(report.per_point.iter().all(|p| p.w1 <= floor && p.mc_floor > 0.0));
}

#[test]
fn both_routes_verify_against_the_same_kernel() {
    let kernel = cos_kernel(8, 0.4);
    let reference = kernel.default_reference().unwrap();
    let measurable = build_measurable_representation(&kernel, (&reference).into(), 2.0).unwrap();
    let continuous = build_continuous_representation(&kernel).unwrap();
    assert_eq!(measurable.route(), RepresentationRoute::Measurable);
    assert_eq!(continuous.route(), RepresentationRoute::Continuous);
    for family in [&measurable, &continuous] {
        let report = verify_representation(family, &kernel, 10_000, 0.05, 3).unwrap();
        assert!(report.pass, "{:?}: {:?}", family.route(), report.distances());
    }
}

#[test]
fn moser_lipschitz_fit_is_stable_under_base_refinement() {
    let fit = |k: usize| {
        let family = build_continuous_representation(&cos_kernel(k, 0.4)).unwrap();
        continuity_modulus(&family).unwrap().lipschitz
    };
    let (coarse, fine) = (fit(8), fit(16));
    assert!(coarse.is_finite() && coarse > 0.0);
    assert!((fine / coarse - 1.0).abs() <= 0.2, "{coarse} vs {fine}");
}
