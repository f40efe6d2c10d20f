use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use randmap::io;
use randmap::kernel::{BaseSpace, Interpolation, KernelFamily};
use randmap::{DiscreteMeasure, Grid, GridDensity};

fn randmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randmap")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn uniform_kernel(dir: &Path) -> std::path::PathBuf {
    let grid = Grid::torus(1, 32).unwrap();
    let points = (0..4).map(|i| vec![i as f64 / 4.0]).collect();
    let k = KernelFamily::from_density_fn(BaseSpace::Circle, points, &grid, Interpolation::None, |_, _| 1.0).unwrap();
    io::write_kernel_manifest(dir, &k).unwrap()
}

#[test]
fn wdist_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.csv");
    io::write_discrete(&mu, &DiscreteMeasure::new(1, vec![0.1, 0.7, 0.4], vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = randmap(&["--cmd", "wdist", "--mu", path_str(&mu), "--nu", path_str(&mu), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0.0");
    assert_eq!(json(&out.join("wdist.json"))["distance"], 0.0);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"], manifest["inputs"][1]["sha256"]);
}

#[test]
fn moser_rejects_non_positive_density() {
    let dir = tempfile::tempdir().unwrap();
    let rho = dir.path().join("rho.csv");
    let grid = Grid::torus(1, 16).unwrap();
    let values = (0..16).map(|k| if k < 8 { 2.0 } else { 0.0 }).collect();
    io::write_grid_density(&rho, &GridDensity::new(grid, values).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = randmap(&["--cmd", "moser", "--rho1", path_str(&rho), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("positivity"));
}

#[test]
fn moser_writes_map_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let rho = dir.path().join("rho.csv");
    let grid = Grid::torus(1, 64).unwrap();
    let r1 = GridDensity::from_fn(grid, |x| 1.0 + 0.5 * (std::f64::consts::TAU * x[0]).cos()).unwrap();
    io::write_grid_density(&rho, &r1).unwrap();
    let out = dir.path().join("out");
    let o = randmap(&["--cmd", "moser", "--rho1", path_str(&rho), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("moser.json"));
    assert!(report["pushforward_w1"].as_f64().unwrap() <= 1e-2);
    assert!(report["jacobian_min"].as_f64().unwrap() > 0.0);
    assert_eq!(report["tolerances"]["poisson_residual"], 1e-8);
    let map = fs::read_to_string(out.join("map.csv")).unwrap();
    assert_eq!(map.lines().next(), Some("x0,Tx0"));
    assert_eq!(map.lines().count(), 65);
    assert!(fs::read_to_string(out.join("checkpoints.csv")).unwrap().starts_with("t,x0,Tx0"));
}

#[test]
fn verify_identity_family_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = uniform_kernel(&dir.path().join("kernel"));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = randmap(&[
            "--cmd",
            "verify",
            "--kernel",
            path_str(&kernel),
            "--n",
            "10000",
            "--tol",
            "0.05",
            "--seed",
            "7",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let report = json(&a.join("verify.json"));
    assert_eq!(report["N"], 10000);
    assert!(report["per_point"].as_array().unwrap().iter().all(|p| p["pass"] == true));
    assert_eq!(fs::read(a.join("verify.json")).unwrap(), fs::read(b.join("verify.json")).unwrap());
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["input_hash"], mb["input_hash"]);
    assert_eq!(ma["seed"], 7);
}

#[test]
fn verify_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = uniform_kernel(&dir.path().join("kernel"));
    let out = dir.path().join("out");
    let o = randmap(&["--cmd", "verify", "--kernel", path_str(&kernel), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`seed`"));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    uniform_kernel(&dir.path().join("kernel"));
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "cmd = \"verify\"\nkernel = \"kernel/kernel.toml\"\nn = 500\ntol = 0.1\nseed = 3\nout = \"out\"\n")
        .unwrap();
    let o = randmap(&["--config", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("out/verify.json"))["seed"], 3);
    fs::write(&cfg, "cmd = \"verify\"\nbogus = 1\n").unwrap();
    let o = randmap(&["--config", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn failed_check_exits_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::torus(1, 32).unwrap();
    let points = (0..4).map(|i| vec![i as f64 / 4.0]).collect();
    let k = KernelFamily::from_density_fn(BaseSpace::Circle, points, &grid, Interpolation::None, |x, y| {
        1.0 + 0.8 * (std::f64::consts::TAU * (y[0] - x[0])).cos()
    })
    .unwrap();
    let kernel = io::write_kernel_manifest(&dir.path().join("kernel"), &k).unwrap();
    let out = dir.path().join("out");
    let o = randmap(&[
        "--cmd",
        "verify",
        "--kernel",
        path_str(&kernel),
        "--n",
        "100",
        "--tol",
        "1e-6",
        "--seed",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&out.join("verify.json"))["pass"], false);
}

#[test]
fn couple_and_lift_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.csv");
    let nu = dir.path().join("nu.csv");
    io::write_discrete(&mu, &DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()).unwrap();
    io::write_discrete(&nu, &DiscreteMeasure::new(1, vec![0.5], vec![1.0]).unwrap()).unwrap();
    let out = dir.path().join("couple");
    let o = randmap(&[
        "--cmd",
        "couple",
        "--mu",
        path_str(&mu),
        "--nu",
        path_str(&nu),
        "--p",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("couple.json"))["cost"], 0.5);
    assert_eq!(fs::read_to_string(out.join("plan.csv")).unwrap().lines().next(), Some("i,j,gamma"));

    let atoms = dir.path().join("atoms.csv");
    fs::write(&atoms, "theta,phi,w\n0.3,0.0,0.5\n1.0,2.0,0.5\n").unwrap();
    let out = dir.path().join("lift");
    let o = randmap(&[
        "--cmd",
        "lift",
        "--manifold",
        "sphere2",
        "--base",
        "0.5,0.5",
        "--atoms",
        path_str(&atoms),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&out.join("lift.json"))["round_trip"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_randmap"))
        .env("RANDMAP_THREADS", "zero")
        .args(["--cmd", "wdist"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn represent_writes_maps_for_both_routes() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = uniform_kernel(&dir.path().join("kernel"));
    for route in ["continuous", "measurable"] {
        let out = dir.path().join(route);
        let o =
            randmap(&["--cmd", "represent", "--kernel", path_str(&kernel), "--route", route, "--out", path_str(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let report = json(&out.join("represent.json"));
        assert_eq!(report["route"], route);
        assert_eq!(report["validated"], true);
        assert_eq!(report["pushforward_w1"].as_array().unwrap().len(), 4);
        for i in 0..4 {
            assert!(out.join(format!("maps/map_{i}.csv")).exists());
        }
    }
}

#[test]
fn stability_reports_deviation_masses() {
    let dir = tempfile::tempdir().unwrap();
    let limit = DiscreteMeasure::new(1, vec![0.2, 0.6], vec![0.5, 0.5]).unwrap();
    let limit_path = dir.path().join("limit.csv");
    io::write_discrete(&limit_path, &limit).unwrap();
    let mut seq = Vec::new();
    for (k, shift) in [0.5, 0.01].iter().enumerate() {
        let path = dir.path().join(format!("nu_{k}.csv"));
        let shifted = DiscreteMeasure::new(1, vec![0.2 + shift, 0.6 + shift], vec![0.5, 0.5]).unwrap();
        io::write_discrete(&path, &shifted).unwrap();
        seq.push(path_str(&path).to_owned());
    }
    let out = dir.path().join("out");
    let o = randmap(&[
        "--cmd",
        "stability",
        "--nu-limit",
        path_str(&limit_path),
        "--nu-seq",
        &seq.join(","),
        "--eps",
        "0.05",
        "--grid-n",
        "64",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("stability.json"));
    assert_eq!(report["deviation"], serde_json::json!([1.0, 0.0]));
    let o = randmap(&["--cmd", "stability", "--nu-limit", path_str(&limit_path), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nu_seq"));
}
