//! `randmap`: runs one experiment pipeline and writes its reports.
//!
//! Exit status: 0 when every check passes, 1 when a check fails (reports are
//! still written), 2 on usage, parse or validation errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, ValueEnum};
use randmap::io::{self, MeasureFile};
use randmap::kernel::{
    build_continuous_representation, build_measurable_representation, continuity_modulus, verify_representation,
    KernelFamily, RandomMapFamily,
};
use randmap::lift::{exp_push, log_lift, Manifold, ManifoldChart};
use randmap::measures::{wasserstein_1d, wasserstein_exact, wasserstein_grid_w1};
use randmap::moser::{self, POISSON_RESIDUAL_TOL};
use randmap::transport::{self, PLAN_TOL};
use randmap::{Cost, DiscreteMeasure, Grid, GridDensity, MeasureRef, Metric};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Command {
    Wdist,
    Couple,
    Moser,
    Represent,
    Verify,
    Lift,
    Stability,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum RouteArg {
    Measurable,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum SolverArg {
    Exact,
    Sinkhorn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum MetricArg {
    Euclidean,
    Torus,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Torus => Metric::Torus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ManifoldArg {
    Circle,
    Torus2,
    Sphere2,
}

impl From<ManifoldArg> for Manifold {
    fn from(m: ManifoldArg) -> Self {
        match m {
            ManifoldArg::Circle => Manifold::Circle,
            ManifoldArg::Torus2 => Manifold::Torus2,
            ManifoldArg::Sphere2 => Manifold::Sphere2,
        }
    }
}

/// Every setting of a run. Flags override values from `--config`.
#[derive(Clone, Debug, Default, Parser, Serialize, Deserialize)]
#[command(name = "randmap", version, about = "Random-map representations of Markov kernels")]
#[serde(default, deny_unknown_fields)]
struct ExperimentConfig {
    /// TOML file with any of these settings (paths relative to the file).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Pipeline to run.
    #[arg(long, value_enum)]
    cmd: Option<Command>,
    /// Kernel manifest (represent, verify).
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Source measure file (wdist, couple, stability).
    #[arg(long)]
    mu: Option<PathBuf>,
    /// Target measure file (wdist, couple).
    #[arg(long)]
    nu: Option<PathBuf>,
    /// Initial density (moser; uniform when omitted).
    #[arg(long)]
    rho0: Option<PathBuf>,
    /// Final density (moser).
    #[arg(long)]
    rho1: Option<PathBuf>,
    /// Reference measure for the measurable route (default: uniform).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Limit target (stability).
    #[arg(long)]
    nu_limit: Option<PathBuf>,
    /// Target sequence (stability).
    #[arg(long, value_delimiter = ',')]
    nu_seq: Option<Vec<PathBuf>>,
    /// Atoms on the manifold (lift).
    #[arg(long)]
    atoms: Option<PathBuf>,
    /// Monte Carlo sample count (verify).
    #[arg(long)]
    n: Option<usize>,
    /// Cells of the default uniform source (stability).
    #[arg(long)]
    grid_n: Option<usize>,
    /// Check tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed (mandatory for verify).
    #[arg(long)]
    seed: Option<u64>,
    /// Cost exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Entropic regularisation (couple --solver sinkhorn).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Deviation threshold (stability).
    #[arg(long)]
    eps: Option<f64>,
    /// RK4 steps (moser; default 4n).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    route: Option<RouteArg>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    manifold: Option<ManifoldArg>,
    /// Chart base point, comma separated (lift).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    base: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! merge {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl ExperimentConfig {
    fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).with_context(|| format!("config: cannot read {}", path.display()))?;
        let mut file: ExperimentConfig =
            toml::from_str(&text).map_err(|e| anyhow!("config {}: {e}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = dir.join(&*x);
                }
            }
        };
        for p in [
            &mut file.kernel,
            &mut file.mu,
            &mut file.nu,
            &mut file.rho0,
            &mut file.rho1,
            &mut file.reference,
            &mut file.nu_limit,
            &mut file.atoms,
            &mut file.out,
        ] {
            rel(p);
        }
        if let Some(seq) = file.nu_seq.as_mut() {
            for x in seq.iter_mut().filter(|x| x.is_relative()) {
                *x = dir.join(&*x);
            }
        }
        merge!(
            self, file, cmd, kernel, mu, nu, rho0, rho1, reference, nu_limit, nu_seq, atoms, n, grid_n, tol, seed, p,
            epsilon, eps, steps, route, solver, metric, manifold, base, out
        );
        Ok(self)
    }
}

fn need<T: Clone>(value: &Option<T>, field: &str, cmd: Command) -> Result<T> {
    value.clone().ok_or_else(|| anyhow!("missing required field `{field}` for command {cmd:?}"))
}

/// Input files with their digests, accumulated while loading.
#[derive(Default)]
struct Inputs {
    files: Vec<InputFile>,
}

#[derive(Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

impl Inputs {
    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.files.push(InputFile { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }

    fn measure(&mut self, path: &Path, field: &str) -> Result<MeasureFile> {
        self.record(path).with_context(|| format!("field `{field}`"))?;
        io::read_measure(path).with_context(|| format!("field `{field}`"))
    }

    fn discrete(&mut self, path: &Path, field: &str) -> Result<DiscreteMeasure> {
        match self.measure(path, field)? {
            MeasureFile::Discrete(m) => Ok(m),
            MeasureFile::Grid(_) => bail!("field `{field}`: expected atoms (x0,...,w), got a grid density"),
        }
    }

    fn grid(&mut self, path: &Path, field: &str) -> Result<GridDensity> {
        match self.measure(path, field)? {
            MeasureFile::Grid(g) => Ok(g),
            MeasureFile::Discrete(_) => bail!("field `{field}`: expected a grid density (dim,n), got atoms"),
        }
    }

    fn kernel(&mut self, path: &Path) -> Result<KernelFamily> {
        self.record(path).context("field `kernel`")?;
        let kernel = io::read_kernel_manifest(path).context("field `kernel`")?;
        self.record_kernel_measures(path)?;
        Ok(kernel)
    }

    fn record_kernel_measures(&mut self, manifest: &Path) -> Result<()> {
        #[derive(Deserialize)]
        struct Point {
            measure: PathBuf,
        }
        #[derive(Deserialize)]
        struct Manifest {
            point: Vec<Point>,
        }
        let m: Manifest = toml::from_str(&fs::read_to_string(manifest)?)?;
        let dir = manifest.parent().unwrap_or(Path::new("."));
        for p in m.point {
            self.record(&dir.join(p.measure))?;
        }
        Ok(())
    }

    fn combined(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.files {
            h.update(f.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Outcome of one pipeline: the report and whether every check passed.
struct Outcome {
    report: serde_json::Value,
    pass: bool,
    tolerances: serde_json::Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: Command,
    version: &'static str,
    inputs: &'a [InputFile],
    input_hash: String,
    seed: Option<u64>,
    tolerances: &'a serde_json::Value,
    pass: bool,
    timestamp: u64,
}

fn run(cfg: &ExperimentConfig) -> Result<bool> {
    let cmd = cfg.cmd.ok_or_else(|| anyhow!("missing required field `cmd`"))?;
    let out = need(&cfg.out, "out", cmd)?;
    fs::create_dir_all(&out).with_context(|| format!("field `out`: cannot create {}", out.display()))?;
    let mut inputs = Inputs::default();
    let outcome = match cmd {
        Command::Wdist => wdist(cfg, &mut inputs)?,
        Command::Couple => couple(cfg, &mut inputs, &out)?,
        Command::Moser => moser_cmd(cfg, &mut inputs, &out)?,
        Command::Represent => represent(cfg, &mut inputs, &out)?,
        Command::Verify => verify(cfg, &mut inputs)?,
        Command::Lift => lift(cfg, &mut inputs, &out)?,
        Command::Stability => stability(cfg, &mut inputs)?,
    };
    let name = format!("{}.json", serde_json::to_value(cmd)?.as_str().unwrap_or("report"));
    io::write_json(&out.join(name), &outcome.report)?;
    let manifest = Manifest {
        command: cmd,
        version: env!("CARGO_PKG_VERSION"),
        inputs: &inputs.files,
        input_hash: inputs.combined(),
        seed: cfg.seed,
        tolerances: &outcome.tolerances,
        pass: outcome.pass,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(outcome.pass)
}

fn wdist(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outcome> {
    let cmd = Command::Wdist;
    let mu = inputs.measure(&need(&cfg.mu, "mu", cmd)?, "mu")?;
    let nu = inputs.measure(&need(&cfg.nu, "nu", cmd)?, "nu")?;
    let p = cfg.p.unwrap_or(1.0);
    fn as_ref(m: &MeasureFile) -> MeasureRef<'_> {
        match m {
            MeasureFile::Grid(g) => MeasureRef::Grid(g),
            MeasureFile::Discrete(d) => MeasureRef::Discrete(d),
        }
    }
    let (a, b) = (as_ref(&mu), as_ref(&nu));
    let default_metric = match (&mu, &nu) {
        (MeasureFile::Grid(_), _) | (_, MeasureFile::Grid(_)) => MetricArg::Torus,
        _ => MetricArg::Euclidean,
    };
    let metric: Metric = cfg.metric.unwrap_or(default_metric).into();
    let mut agreement = None;
    let (distance, method) = match (&mu, &nu) {
        _ if a.dim() == 1 && b.dim() == 1 => {
            let d = wasserstein_1d(a, b, p, metric)?;
            if let (MeasureFile::Discrete(x), MeasureFile::Discrete(y)) = (&mu, &nu) {
                if metric == Metric::Euclidean && x.len() * y.len() <= 10_000 {
                    agreement = Some((d - wasserstein_exact(x, y, p, metric)?).abs());
                }
            }
            (d, "quantile")
        }
        (MeasureFile::Discrete(x), MeasureFile::Discrete(y)) => (wasserstein_exact(x, y, p, metric)?, "exact-lp"),
        (MeasureFile::Grid(x), MeasureFile::Grid(y)) if p == 1.0 => (wasserstein_grid_w1(x, y)?, "grid-lattice"),
        _ => bail!("field `p`: mixed or 2D grid inputs support only p = 1 between two grid densities"),
    };
    println!("{distance:?}");
    let pass = agreement.is_none_or(|e| e <= 1e-9);
    let tolerances = serde_json::json!({ "quantile_vs_lp": 1e-9 });
    let report = serde_json::json!({
        "distance": distance,
        "p": p,
        "metric": metric,
        "method": method,
        "quantile_vs_lp": agreement,
        "pass": pass,
        "tolerances": tolerances,
    });
    Ok(Outcome { report, pass, tolerances })
}

fn couple(cfg: &ExperimentConfig, inputs: &mut Inputs, out: &Path) -> Result<Outcome> {
    let cmd = Command::Couple;
    let mu = inputs.discrete(&need(&cfg.mu, "mu", cmd)?, "mu")?;
    let nu = inputs.discrete(&need(&cfg.nu, "nu", cmd)?, "nu")?;
    let p = cfg.p.unwrap_or(2.0);
    let cost = Cost::pow(p).with_metric(cfg.metric.unwrap_or(MetricArg::Euclidean).into());
    let solver = cfg.solver.unwrap_or(SolverArg::Exact);
    let plan = match solver {
        SolverArg::Exact => transport::solve_exact(&mu, &nu, &cost)?,
        SolverArg::Sinkhorn => {
            let eps = need(&cfg.epsilon, "epsilon", cmd)?;
            transport::solve_sinkhorn(&mu, &nu, &cost, eps, 100_000, 1e-9)?
        }
    };
    io::write_plan(&out.join("plan.csv"), &plan)?;
    let (row, col) = plan.marginal_errors();
    let certificate = match solver {
        SolverArg::Exact => plan.certificate(&cost),
        SolverArg::Sinkhorn => None,
    };
    let cert_ok = certificate.is_none_or(|(inf, slack)| inf <= PLAN_TOL && slack <= PLAN_TOL);
    let pass = row <= PLAN_TOL && col <= PLAN_TOL && cert_ok && plan.converged();
    let tolerances = serde_json::json!({ "marginals": PLAN_TOL, "certificate": PLAN_TOL });
    let report = serde_json::json!({
        "solver": solver,
        "epsilon": cfg.epsilon.filter(|_| solver == SolverArg::Sinkhorn),
        "p": p,
        "cost": plan.cost(),
        "row_error": row,
        "col_error": col,
        "dual_infeasibility": certificate.map(|c| c.0),
        "complementary_slackness": certificate.map(|c| c.1),
        "converged": plan.converged(),
        "iterations": plan.iterations(),
        "pass": pass,
        "tolerances": tolerances,
    });
    Ok(Outcome { report, pass, tolerances })
}

fn moser_cmd(cfg: &ExperimentConfig, inputs: &mut Inputs, out: &Path) -> Result<Outcome> {
    let cmd = Command::Moser;
    let rho1 = inputs.grid(&need(&cfg.rho1, "rho1", cmd)?, "rho1")?;
    let rho0 = match &cfg.rho0 {
        Some(path) => inputs.grid(path, "rho0")?,
        None => GridDensity::uniform(rho1.grid().clone())?,
    };
    let flow = moser::moser_map(&rho0, &rho1, cfg.steps).map_err(|e| match e {
        randmap::Error::NotPositive { .. } => anyhow!("positivity precondition: {e}"),
        e => anyhow!(e),
    })?;
    io::write_map(&out.join("map.csv"), flow.map())?;
    io::write_checkpoints(&out.join("checkpoints.csv"), flow.map().dim(), flow.map().domain(), flow.checkpoints())?;
    let summary = flow.report()?;
    let tol = cfg.tol.unwrap_or(randmap::kernel::MOSER_W1_TOL);
    let pass =
        summary.poisson_residual <= POISSON_RESIDUAL_TOL && summary.pushforward_w1 <= tol && summary.jacobian_min > 0.0;
    let tolerances = serde_json::json!({
        "poisson_residual": POISSON_RESIDUAL_TOL,
        "pushforward_w1": tol,
        "jacobian_min_above": 0.0,
        "min_density": moser::MIN_DENSITY,
    });
    let mut report = serde_json::to_value(&summary)?;
    report["pass"] = pass.into();
    report["tolerances"] = tolerances.clone();
    Ok(Outcome { report, pass, tolerances })
}

fn build_family(cfg: &ExperimentConfig, inputs: &mut Inputs, cmd: Command) -> Result<(KernelFamily, RandomMapFamily)> {
    let kernel = inputs.kernel(&need(&cfg.kernel, "kernel", cmd)?)?;
    let route = cfg.route.unwrap_or(RouteArg::Continuous);
    let family = match route {
        RouteArg::Continuous => build_continuous_representation(&kernel)?,
        RouteArg::Measurable => {
            let p = cfg.p.unwrap_or(2.0);
            match &cfg.reference {
                Some(path) => match inputs.measure(path, "reference")? {
                    MeasureFile::Grid(g) => build_measurable_representation(&kernel, (&g).into(), p)?,
                    MeasureFile::Discrete(d) => build_measurable_representation(&kernel, (&d).into(), p)?,
                },
                None => {
                    let nu = kernel.default_reference()?;
                    build_measurable_representation(&kernel, (&nu).into(), p)?
                }
            }
        }
    };
    Ok((kernel, family))
}

fn represent(cfg: &ExperimentConfig, inputs: &mut Inputs, out: &Path) -> Result<Outcome> {
    let (_, family) = build_family(cfg, inputs, Command::Represent)?;
    let maps = out.join("maps");
    fs::create_dir_all(&maps)?;
    for (i, m) in family.maps().iter().enumerate() {
        io::write_map(&maps.join(format!("map_{i}.csv")), m)?;
    }
    let modulus = continuity_modulus(&family).ok();
    let pass = family.is_validated();
    let tolerances = serde_json::json!({ "pushforward_w1": family.tolerance() });
    let report = serde_json::json!({
        "route": family.route(),
        "points": family.points(),
        "pushforward_w1": family.pushforward_w1(),
        "validated": pass,
        "modulus": modulus,
        "pass": pass,
        "tolerances": tolerances,
    });
    Ok(Outcome { report, pass, tolerances })
}

fn verify(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outcome> {
    let cmd = Command::Verify;
    let seed = need(&cfg.seed, "seed", cmd)?;
    let n = cfg.n.unwrap_or(10_000);
    let tol = cfg.tol.unwrap_or(0.05);
    let (kernel, family) = build_family(cfg, inputs, cmd)?;
    let report = verify_representation(&family, &kernel, n, tol, seed)?;
    let tolerances = serde_json::to_value(&report.tolerances)?;
    Ok(Outcome { pass: report.pass, report: serde_json::to_value(&report)?, tolerances })
}

fn lift(cfg: &ExperimentConfig, inputs: &mut Inputs, out: &Path) -> Result<Outcome> {
    let cmd = Command::Lift;
    let manifold: Manifold = need(&cfg.manifold, "manifold", cmd)?.into();
    let base = need(&cfg.base, "base", cmd)?;
    let chart = ManifoldChart::new(manifold, &base).context("field `base`")?;
    let path = need(&cfg.atoms, "atoms", cmd)?;
    inputs.record(&path).context("field `atoms`")?;
    let mu = io::read_manifold_atoms(&path, manifold).context("field `atoms`")?;
    let tangent = log_lift(&chart, &mu).context("field `atoms`")?;
    let back = exp_push(&chart, &tangent)?;
    let round_trip = (0..mu.len()).map(|i| manifold.distance(mu.point(i), back.point(i))).fold(0.0, f64::max);
    io::write_discrete(&out.join("tangent.csv"), &tangent)?;
    let tol = cfg.tol.unwrap_or(1e-9);
    let pass = round_trip <= tol;
    let tolerances = serde_json::json!({ "round_trip": tol, "radius_cap": chart.cap() });
    let report = serde_json::json!({
        "manifold": manifold,
        "base": chart.base(),
        "atoms": mu.len(),
        "round_trip": round_trip,
        "pass": pass,
        "tolerances": tolerances,
    });
    Ok(Outcome { report, pass, tolerances })
}

fn stability(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outcome> {
    let cmd = Command::Stability;
    let mu = match &cfg.mu {
        Some(path) => inputs.grid(path, "mu")?,
        None => GridDensity::uniform(Grid::cells(vec![0.0], vec![1.0], vec![cfg.grid_n.unwrap_or(256)])?)?,
    };
    let limit = inputs.discrete(&need(&cfg.nu_limit, "nu_limit", cmd)?, "nu_limit")?;
    let seq =
        need(&cfg.nu_seq, "nu_seq", cmd)?.iter().map(|p| inputs.discrete(p, "nu_seq")).collect::<Result<Vec<_>>>()?;
    let eps = need(&cfg.eps, "eps", cmd)?;
    let cost = Cost::pow(cfg.p.unwrap_or(2.0)).with_metric(cfg.metric.unwrap_or(MetricArg::Euclidean).into());
    let deviation = transport::stability_experiment(&mu, &seq, &limit, eps, &cost)?;
    let tol = cfg.tol.unwrap_or(0.01);
    let pass = deviation.last().is_some_and(|&d| d < tol);
    let tolerances = serde_json::json!({ "final_deviation_below": tol });
    let report = serde_json::json!({
        "eps": eps,
        "deviation": deviation,
        "pass": pass,
        "tolerances": tolerances,
    });
    Ok(Outcome { report, pass, tolerances })
}

fn main() -> ExitCode {
    let cfg = match ExperimentConfig::parse().resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Ok(threads) = std::env::var("RANDMAP_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: RANDMAP_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
