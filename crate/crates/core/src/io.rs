//! File formats.
//!
//! - Discrete measures: CSV with header `x0[,x1[,x2]],w`.
//! - Grid densities: a `dim,n` header line, a line with the two values, then the
//!   `n^dim` row-major values one per line (periodic grid on `[0, 1)^dim`).
//! - Plans: CSV triplets `i,j,gamma`. Maps: `x…,Tx…[,psi]`. Flow checkpoints:
//!   `t,x…,Tx…`.
//! - Manifold atoms: `theta,w` on the circle (unit-period coordinate),
//!   `x0,x1,w` on the torus, `theta,phi,w` on the sphere (colatitude and
//!   longitude in radians).
//! - Kernel manifests: TOML with `base`, optional `interpolation` and one
//!   `[[point]]` table per base point holding `x` and a `measure` path
//!   (relative to the manifest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::kernel::{BaseSpace, Interpolation, KernelFamily, KernelMeasures};
use crate::lift::Manifold;
use crate::measures::DiscreteMeasure;
use crate::transport::{TransportMap, TransportPlan};

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse(format!("{what}: cannot parse {field:?} as a number")))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `x0[,x1[,x2]],w`; the header fixes the dimension.
pub fn read_discrete(path: &Path) -> Result<DiscreteMeasure> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    let expected: Vec<String> = (0..dim).map(|a| format!("x{a}")).chain(["w".to_string()]).collect();
    if !(1..=3).contains(&dim) || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!("{}: header must be x0[,x1[,x2]],w, got {:?}", path.display(), header)));
    }
    let (points, weights) = read_rows(&mut r, dim, path)?;
    DiscreteMeasure::new(dim, points, weights)
}

fn read_rows(r: &mut csv::Reader<fs::File>, dim: usize, path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let what = format!("{} row {}", path.display(), line + 2);
        if rec.len() != dim + 1 {
            return Err(Error::Parse(format!("{what}: expected {} fields, got {}", dim + 1, rec.len())));
        }
        for a in 0..dim {
            points.push(parse_f64(&rec[a], &what)?);
        }
        weights.push(parse_f64(&rec[dim], &what)?);
    }
    Ok((points, weights))
}

pub fn write_discrete(path: &Path, mu: &DiscreteMeasure) -> Result<()> {
    let header: Vec<String> = (0..mu.dim()).map(|a| format!("x{a}")).chain(["w".into()]).collect();
    write_rows(path, &header, mu.iter().map(|(x, w)| x.iter().copied().chain([w]).collect()))
}

/// Reads the `dim,n` grid-density format (the header line is optional).
pub fn read_grid_density(path: &Path) -> Result<GridDensity> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let what = path.display().to_string();
    let mut first = lines.next().ok_or_else(|| Error::Parse(format!("{what}: empty file")))?;
    if first.replace(' ', "") == "dim,n" {
        first = lines.next().ok_or_else(|| Error::Parse(format!("{what}: missing dim,n values")))?;
    }
    let dn: Vec<&str> = first.split(',').collect();
    if dn.len() != 2 {
        return Err(Error::Parse(format!("{what}: expected `dim,n`, got {first:?}")));
    }
    let parse_int = |s: &str, name: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("{what}: {name} must be a positive integer, got {s:?}")))
    };
    let (dim, n) = (parse_int(dn[0], "dim")?, parse_int(dn[1], "n")?);
    let grid = Grid::torus(dim, n)?;
    let values = lines.map(|l| parse_f64(l, &what)).collect::<Result<Vec<_>>>()?;
    GridDensity::new(grid, values)
}

pub fn write_grid_density(path: &Path, rho: &GridDensity) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "dim,n")?;
    writeln!(f, "{},{}", rho.dim(), rho.n())?;
    for v in rho.values() {
        writeln!(f, "{v}")?;
    }
    Ok(())
}

/// Either measure format, told apart by the first line.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureFile {
    Grid(GridDensity),
    Discrete(DiscreteMeasure),
}

pub fn read_measure(path: &Path) -> Result<MeasureFile> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").replace(' ', "");
    if first == "dim,n" || first.split(',').all(|s| s.parse::<usize>().is_ok()) && first.split(',').count() == 2 {
        read_grid_density(path).map(MeasureFile::Grid)
    } else {
        read_discrete(path).map(MeasureFile::Discrete)
    }
}

pub fn write_plan(path: &Path, plan: &TransportPlan) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "gamma"])?;
    for (i, j, g) in plan.triplets() {
        w.write_record([i.to_string(), j.to_string(), g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_map(path: &Path, map: &TransportMap) -> Result<()> {
    let d = map.dim();
    let mut header: Vec<String> = (0..d).map(|a| format!("x{a}")).chain((0..d).map(|a| format!("Tx{a}"))).collect();
    if map.potential().is_some() {
        header.push("psi".into());
    }
    write_rows(
        path,
        &header,
        (0..map.len()).map(|i| {
            let mut row: Vec<f64> = map.domain_point(i).iter().chain(map.image_point(i)).copied().collect();
            if let Some(psi) = map.potential() {
                row.push(psi[i]);
            }
            row
        }),
    )
}

/// Rows `t,x…,Tx…` for each checkpoint `(t, positions)` over `domain`.
pub fn write_checkpoints(path: &Path, dim: usize, domain: &[f64], checkpoints: &[(f64, Vec<f64>)]) -> Result<()> {
    let header: Vec<String> = ["t".to_string()]
        .into_iter()
        .chain((0..dim).map(|a| format!("x{a}")))
        .chain((0..dim).map(|a| format!("Tx{a}")))
        .collect();
    write_rows(
        path,
        &header,
        checkpoints.iter().flat_map(|(t, pos)| {
            domain
                .chunks(dim)
                .zip(pos.chunks(dim))
                .map(move |(x, y)| [*t].into_iter().chain(x.iter().copied()).chain(y.iter().copied()).collect())
        }),
    )
}

fn manifold_header(m: Manifold) -> Vec<&'static str> {
    match m {
        Manifold::Circle => vec!["theta", "w"],
        Manifold::Torus2 => vec!["x0", "x1", "w"],
        Manifold::Sphere2 => vec!["theta", "phi", "w"],
    }
}

pub fn read_manifold_atoms(path: &Path, manifold: Manifold) -> Result<DiscreteMeasure> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    let want = manifold_header(manifold);
    if header.iter().ne(want.iter().copied()) {
        return Err(Error::Parse(format!("{}: header must be {}, got {:?}", path.display(), want.join(","), header)));
    }
    let dim = manifold.dim();
    let (points, weights) = read_rows(&mut r, dim, path)?;
    DiscreteMeasure::new(dim, points, weights)
}

pub fn write_manifold_atoms(path: &Path, manifold: Manifold, mu: &DiscreteMeasure) -> Result<()> {
    let header: Vec<String> = manifold_header(manifold).iter().map(|s| s.to_string()).collect();
    write_rows(path, &header, mu.iter().map(|(x, w)| x.iter().copied().chain([w]).collect()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestPoint {
    x: Vec<f64>,
    measure: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    base: BaseSpace,
    #[serde(default = "default_interpolation")]
    interpolation: Interpolation,
    point: Vec<ManifestPoint>,
}

fn default_interpolation() -> Interpolation {
    Interpolation::None
}

/// Loads a kernel manifest and every measure it lists.
pub fn read_kernel_manifest(path: &Path) -> Result<KernelFamily> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut grids = Vec::new();
    let mut atoms = Vec::new();
    for (i, p) in manifest.point.iter().enumerate() {
        match read_measure(&dir.join(&p.measure)).map_err(|e| Error::at(i, e))? {
            MeasureFile::Grid(g) => grids.push(g),
            MeasureFile::Discrete(m) => atoms.push(m),
        }
    }
    let measures = match (grids.is_empty(), atoms.is_empty()) {
        (false, true) => KernelMeasures::Grid(grids),
        (true, false) => KernelMeasures::Discrete(atoms),
        (true, true) => return Err(Error::Parse(format!("{}: no [[point]] entries", path.display()))),
        (false, false) => return Err(Error::Parse(format!("{}: mixed measure formats", path.display()))),
    };
    let points = manifest.point.into_iter().map(|p| p.x).collect();
    KernelFamily::new(manifest.base, points, measures, manifest.interpolation)
}

/// Writes `kernel` as a manifest in `dir` with one measure file per point.
pub fn write_kernel_manifest(dir: &Path, kernel: &KernelFamily) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut point = Vec::new();
    for (i, x) in kernel.points().iter().enumerate() {
        let name = PathBuf::from(format!("mu_{i}.csv"));
        match kernel.measures() {
            KernelMeasures::Grid(v) => write_grid_density(&dir.join(&name), &v[i])?,
            KernelMeasures::Discrete(v) => write_discrete(&dir.join(&name), &v[i])?,
        }
        point.push(ManifestPoint { x: x.clone(), measure: name });
    }
    let manifest = Manifest { base: kernel.base(), interpolation: kernel.interpolation(), point };
    let path = dir.join("kernel.toml");
    fs::write(&path, toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.csv");
        let mu = DiscreteMeasure::new(2, vec![0.1, 0.2, 0.3, 0.4], vec![0.25, 0.75]).unwrap();
        write_discrete(&path, &mu).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().next(), Some("x0,x1,w"));
        assert_eq!(read_discrete(&path).unwrap(), mu);
        assert_eq!(read_measure(&path).unwrap(), MeasureFile::Discrete(mu));
    }

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.csv");
        let rho =
            GridDensity::from_fn(Grid::torus(2, 8).unwrap(), |x| 1.0 + 0.3 * (std::f64::consts::TAU * x[0]).cos())
                .unwrap();
        write_grid_density(&path, &rho).unwrap();
        assert_eq!(read_grid_density(&path).unwrap(), rho);
        assert_eq!(read_measure(&path).unwrap(), MeasureFile::Grid(rho));
    }

    #[test]
    fn bad_header_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,w\n0.5,1\n").unwrap();
        let err = read_discrete(&path).unwrap_err().to_string();
        assert!(err.contains("bad.csv") && err.contains("header"));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::torus(1, 16).unwrap();
        let kernel = KernelFamily::from_density_fn(
            BaseSpace::Circle,
            vec![vec![0.0], vec![0.5]],
            &grid,
            Interpolation::Nearest,
            |x, y| 1.0 + 0.3 * (std::f64::consts::TAU * (y[0] - x[0])).cos(),
        )
        .unwrap();
        let path = write_kernel_manifest(dir.path(), &kernel).unwrap();
        let back = read_kernel_manifest(&path).unwrap();
        assert_eq!(back, kernel);
    }
}
