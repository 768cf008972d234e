//! `bss`: simulate, integrate and verify the bike-sharing station model.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bss_core::diffusion::integrate_covariance;
use bss_core::equilibrium::{entropy, solve_equilibrium, solve_equilibrium_hetero};
use bss_core::harness::{
    amplitude_by_p, format_real, nonstationary_run, sweep, toy_arrival, write_table, ExperimentRegistry, GridSpec,
    PlaneRegistry, Status, TestFunction, VerifyRequest,
};
use bss_core::ingestion::{fit_fourier, parse_gbfs, read_rate_series, snapshot_histograms};
use bss_core::meanfield::{integrate, integrate_hetero, stepped_grid, EmpiricalMeasure};
use bss_core::model::{RawConfig, SystemParams};
use bss_core::simulator::{empirical_measure, hetero_measure, simulate, NetworkState};
use bss_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bss", version, about = "Bike-sharing station model: simulation, mean-field limit and checks")]
struct Cli {
    /// Worker threads for replications and grid nodes (default: all cores).
    #[arg(long, global = true, env = "BSS_THREADS")]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Model configuration, JSON or TOML (by extension).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the finite network; long-format CSV (t, observable, index, value).
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 24.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.5)]
        sample_dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the mean-field equation; CSV (t, y0..yK, entropy).
    Meanfield {
        #[command(flatten)]
        config: ConfigArg,
        /// `builtin:uniform`, `builtin:mass@n`, or a CSV with columns `n,y`.
        /// Defaults to the round-robin placement of the fleet.
        #[arg(long)]
        y0: Option<String>,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covariance of the fluctuations from the round-robin start; long-format
    /// CSV (t, i, j, sigma_ij).
    Diffusion {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium distribution; CSV (n, y_bar), or (n, r_bar) for mixed
    /// capacities. Scalars go to stdout and the manifest.
    Equilibrium {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium summaries over a parameter plane.
    Sweep {
        /// One of p-theta, p-c, p-alpha, p-gamma.
        #[arg(long)]
        plane: String,
        /// Axes as `name=start:end:step`, comma separated.
        #[arg(long)]
        grid: String,
        /// Base configuration; defaults to λ = μ = 1, K = 20, γ = 10.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification experiment and write a JSON report.
    Verify {
        /// One of flln, fclt, interchange, forward.
        #[arg(long)]
        suite: String,
        /// Defaults to the experiment's reference configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        reps: Option<usize>,
        /// Station count (for flln: the larger of the two sizes).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Check time (fclt, forward).
        #[arg(long)]
        t: Option<f64>,
        /// Test function for `forward`: `y<n>` or `y<n>^2`.
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a Fourier arrival-rate model to a `t_hours,rate` CSV.
    FitArrivals {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 24.0)]
        period: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bike-count and fill-ratio histograms of a GBFS snapshot; long-format
    /// CSV (histogram, index, value).
    GbfsHist {
        #[arg(long)]
        status: PathBuf,
        #[arg(long)]
        info: PathBuf,
        /// Number of ratio bins minus one (default: largest capacity).
        #[arg(long)]
        k_max: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-field frames under a time-varying arrival rate; CSV (t, y0..yK,
    /// entropy[, var0..varK]).
    Nonstationary {
        #[command(flatten)]
        config: ConfigArg,
        /// Replace the configured arrivals with λ(t) = 1 + 0.5 sin(t/2).
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        y0: Option<String>,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        /// Also integrate the covariance and emit its diagonal.
        #[arg(long)]
        covariance: bool,
        /// Report the long-run amplitude of y0 for these p values
        /// (comma separated), measured over the last quarter of the run.
        #[arg(long, value_delimiter = ',')]
        amplitude_p: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    tool_version: &'static str,
    config: Option<RawConfig>,
    seed: Option<u64>,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
    results: Value,
}

/// What a subcommand produced, for the manifest.
struct Outcome {
    config: Option<RawConfig>,
    seed: Option<u64>,
    results: Value,
}

impl Outcome {
    fn new(params: Option<&SystemParams>) -> Self {
        Outcome {
            config: params.map(SystemParams::to_config),
            seed: None,
            results: Value::Null,
        }
    }
}

fn load_params(path: &Path) -> Result<SystemParams> {
    RawConfig::load(path)?.validate()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn initial_measure(spec: Option<&str>, params: &SystemParams) -> Result<EmpiricalMeasure> {
    let k = params
        .uniform_capacity()
        .ok_or_else(|| Error::validation("y0", "an explicit initial measure needs a uniform capacity"))?;
    let Some(spec) = spec else {
        return empirical_measure(&NetworkState::round_robin(params));
    };
    if spec == "builtin:uniform" {
        return Ok(EmpiricalMeasure::uniform(k));
    }
    if let Some(n) = spec.strip_prefix("builtin:mass@") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::validation("y0", format!("`{n}` is not a bike count")))?;
        if n > k as usize {
            return Err(Error::validation("y0", format!("mass at {n} exceeds capacity {k}")));
        }
        let mut y = vec![0.0; k as usize + 1];
        y[n] = 1.0;
        return EmpiricalMeasure::new(y);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut y = vec![0.0; k as usize + 1];
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(|h| h.split(',').map(str::trim).collect::<Vec<_>>()) {
        Some(h) if h == ["n", "y"] => {}
        _ => return Err(Error::Parse { path: format!("{spec}:1"), message: "expected header `n,y`".into() }),
    }
    for (i, line) in lines.enumerate() {
        let bad = |m: &str| Error::Parse { path: format!("{spec}:{}", i + 2), message: m.into() };
        let (n, v) = line.split_once(',').ok_or_else(|| bad("expected `n,y`"))?;
        let n: usize = n.trim().parse().map_err(|_| bad("bad index"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
        *y.get_mut(n).ok_or_else(|| bad("index exceeds capacity"))? = v;
    }
    EmpiricalMeasure::new(y)
}

fn run_simulate(params: &SystemParams, horizon: f64, sample_dt: f64, seed: u64, out: &Path) -> Result<Outcome> {
    let run = simulate(params, horizon, sample_dt, seed, None)?;
    let mut rows = Vec::new();
    for (i, &t) in run.times.iter().enumerate() {
        let t = format_real(t);
        if let Some(y) = run.y_series.get(i) {
            for (n, v) in y.as_slice().iter().enumerate() {
                rows.push(vec![t.clone(), "y".into(), n.to_string(), format_real(*v)]);
            }
        }
        for (n, v) in run.r_series[i].as_slice().iter().enumerate() {
            rows.push(vec![t.clone(), "r".into(), n.to_string(), format_real(*v)]);
        }
    }
    write_table(create(out)?, &["t", "observable", "index", "value"], rows)?;
    let mut o = Outcome::new(Some(params));
    o.seed = Some(seed);
    o.results = json!({ "events": run.event_count });
    Ok(o)
}

fn run_meanfield(params: &SystemParams, y0: Option<&str>, t_end: f64, dt: f64, out: &Path) -> Result<Outcome> {
    let grid = stepped_grid(0.0, t_end, dt);
    if params.uniform_capacity().is_none() {
        if y0.is_some() {
            return Err(Error::validation("y0", "mixed capacities start from the round-robin placement"));
        }
        let start = hetero_measure(&NetworkState::round_robin(params));
        let traj = integrate_hetero(&start, params, &grid)?;
        let mut header = vec!["t".to_string()];
        for (&k, row) in start.capacities().iter().zip(start.rows()) {
            header.extend((0..row.len()).map(|n| format!("y_k{k}_n{n}")));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = traj.times.iter().zip(&traj.states).map(|(t, s)| {
            std::iter::once(format_real(*t)).chain(s.flatten().into_iter().map(format_real)).collect::<Vec<_>>()
        });
        write_table(create(out)?, &header, rows)?;
        return Ok(Outcome::new(Some(params)));
    }
    let start = initial_measure(y0, params)?;
    let traj = integrate(&start, params, &grid)?;
    let d = start.as_slice().len();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|n| format!("y{n}")));
    header.push("entropy".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = traj.times.iter().zip(&traj.states).map(|(t, s)| {
        let mut row = vec![format_real(*t)];
        row.extend(s.as_slice().iter().map(|v| format_real(*v)));
        row.push(format_real(entropy(s.as_slice())));
        row
    });
    write_table(create(out)?, &header, rows)?;
    Ok(Outcome::new(Some(params)))
}

fn run_diffusion(params: &SystemParams, t_end: f64, dt: f64, out: &Path) -> Result<Outcome> {
    let start = initial_measure(None, params)?;
    let d = start.as_slice().len();
    let traj = integrate_covariance(&start, &DMatrix::zeros(d, d), params, &stepped_grid(0.0, t_end, dt))?;
    let mut rows = Vec::new();
    for c in &traj.covariances {
        let t = format_real(c.t);
        for i in 0..d {
            for j in 0..d {
                rows.push(vec![t.clone(), i.to_string(), j.to_string(), format_real(c.sigma[(i, j)])]);
            }
        }
    }
    write_table(create(out)?, &["t", "i", "j", "sigma_ij"], rows)?;
    Ok(Outcome::new(Some(params)))
}

fn run_equilibrium(params: &SystemParams, out: &Path) -> Result<Outcome> {
    let mut o = Outcome::new(Some(params));
    if params.uniform_capacity().is_some() {
        let eq = solve_equilibrium(params)?;
        let rows = eq.y_bar.as_slice().iter().enumerate().map(|(n, v)| vec![n.to_string(), format_real(*v)]);
        write_table(create(out)?, &["n", "y_bar"], rows)?;
        o.results = json!({
            "a": eq.a, "s": eq.s, "residual": eq.residual,
            "entropy": entropy(eq.y_bar.as_slice()), "iterations": eq.iterations,
        });
    } else {
        let eq = solve_equilibrium_hetero(params)?;
        let rows = eq.ratio.as_slice().iter().enumerate().map(|(n, v)| vec![n.to_string(), format_real(*v)]);
        write_table(create(out)?, &["n", "r_bar"], rows)?;
        o.results = json!({
            "a": eq.a, "s": eq.s, "residual": eq.residual,
            "entropy": entropy(eq.ratio.as_slice()), "iterations": eq.iterations,
        });
    }
    println!("{}", serde_json::to_string(&o.results)?);
    Ok(o)
}

fn run_sweep(plane: &str, grid: &str, config: Option<&Path>, out: &Path) -> Result<Outcome> {
    let plane = PlaneRegistry::global().get(plane)?;
    let grid: GridSpec = grid.parse()?;
    let base = match config {
        Some(path) => load_params(path)?,
        None => bss_core::harness::base_config(100),
    };
    let surface = sweep(plane, &grid, &base)?;
    surface.write_csv(create(out)?)?;
    let mut o = Outcome::new(Some(&base));
    o.results = json!({ "plane": surface.plane, "nodes": surface.nodes.len(), "failed": surface.failed() });
    Ok(o)
}

fn run_verify(suite: &str, config: Option<&Path>, request: VerifyRequest, out: &Path) -> Result<Outcome> {
    let experiment = ExperimentRegistry::global().get(suite)?;
    let params = match config {
        Some(path) => load_params(path)?,
        None => experiment.default_params(),
    };
    let mut report = experiment.run(&params, &request)?;
    report.artifacts.push(out.display().to_string());
    write_json(out, &report)?;
    let status = serde_json::to_value(report.status)?;
    println!("{}: {}", report.name, status.as_str().unwrap_or("?"));
    if report.status == Status::Fail {
        log::warn!("{} failed its check; see {}", report.name, out.display());
    }
    let mut o = Outcome::new(Some(&params));
    o.seed = Some(request.seed);
    o.results = json!({ "status": status, "pass": report.pass });
    Ok(o)
}

fn run_fit(csv: &Path, order: usize, period: f64, out: &Path) -> Result<Outcome> {
    let series = read_rate_series(csv)?;
    let fit = fit_fourier(&series, order, period)?;
    write_json(out, &fit)?;
    let mut o = Outcome::new(None);
    o.results = json!({ "r_squared": fit.r_squared, "samples": series.len() });
    Ok(o)
}

fn run_gbfs(status: &Path, info: &Path, k_max: Option<u32>, out: &Path) -> Result<Outcome> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let snapshot = parse_gbfs(&read(status)?, &read(info)?)?;
    let hist = snapshot_histograms(&snapshot, k_max)?;
    let rows = hist
        .counts
        .iter()
        .enumerate()
        .map(|(n, v)| vec!["bikes".to_string(), n.to_string(), format_real(*v)])
        .chain(
            hist.ratio
                .as_slice()
                .iter()
                .enumerate()
                .map(|(n, v)| vec!["ratio".to_string(), n.to_string(), format_real(*v)]),
        );
    write_table(create(out)?, &["histogram", "index", "value"], rows)?;
    let mut o = Outcome::new(None);
    o.results = json!({
        "stations": snapshot.records.len(), "dropped": snapshot.dropped,
        "clamped": snapshot.clamped, "k_max": hist.k_max,
    });
    Ok(o)
}

#[allow(clippy::too_many_arguments)]
fn run_nonstationary(
    params: &SystemParams,
    toy: bool,
    y0: Option<&str>,
    t_end: f64,
    dt: f64,
    covariance: bool,
    amplitude_p: &[f64],
    out: &Path,
) -> Result<Outcome> {
    let params = if toy { params.with_arrival(toy_arrival())? } else { params.clone() };
    let start = initial_measure(y0, &params)?;
    let grid = stepped_grid(0.0, t_end, dt);
    let frames = nonstationary_run(&params, &start, &grid, covariance)?;
    frames.write_csv(create(out)?)?;
    let mut o = Outcome::new(Some(&params));
    if !amplitude_p.is_empty() {
        let amps = amplitude_by_p(&params, amplitude_p, &start, &grid, 0, 0.75 * t_end)?;
        for (p, a) in &amps {
            println!("p = {p}: amplitude of y0 = {a:.6e}");
        }
        o.results = json!({ "y0_amplitude": amps.iter().map(|(p, a)| json!({"p": p, "amplitude": a})).collect::<Vec<_>>() });
    }
    Ok(o)
}

fn default_out(out: Option<PathBuf>, name: &str, ext: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(format!("{name}.{ext}")))
}

fn execute(command: Command) -> Result<()> {
    let start = Instant::now();
    let (name, out, outcome) = match command {
        Command::Simulate { config, horizon, sample_dt, seed, out } => {
            let out = default_out(out, "simulate", "csv");
            let o = run_simulate(&load_params(&config.config)?, horizon, sample_dt, seed, &out)?;
            ("simulate", out, o)
        }
        Command::Meanfield { config, y0, t_end, dt, out } => {
            let out = default_out(out, "meanfield", "csv");
            let o = run_meanfield(&load_params(&config.config)?, y0.as_deref(), t_end, dt, &out)?;
            ("meanfield", out, o)
        }
        Command::Diffusion { config, t_end, dt, out } => {
            let out = default_out(out, "diffusion", "csv");
            let o = run_diffusion(&load_params(&config.config)?, t_end, dt, &out)?;
            ("diffusion", out, o)
        }
        Command::Equilibrium { config, out } => {
            let out = default_out(out, "equilibrium", "csv");
            let o = run_equilibrium(&load_params(&config.config)?, &out)?;
            ("equilibrium", out, o)
        }
        Command::Sweep { plane, grid, config, out } => {
            let out = default_out(out, "sweep", "csv");
            let o = run_sweep(&plane, &grid, config.as_deref(), &out)?;
            ("sweep", out, o)
        }
        Command::Verify { suite, config, seed, reps, n, horizon, t, f, out } => {
            let out = default_out(out, "report", "json");
            let f = f.as_deref().map(str::parse::<TestFunction>).transpose()?;
            let request = VerifyRequest { seed, reps, n, horizon, t, f };
            let o = run_verify(&suite, config.as_deref(), request, &out)?;
            ("verify", out, o)
        }
        Command::FitArrivals { csv, order, period, out } => {
            let out = default_out(out, "fit-arrivals", "json");
            let o = run_fit(&csv, order, period, &out)?;
            ("fit-arrivals", out, o)
        }
        Command::GbfsHist { status, info, k_max, out } => {
            let out = default_out(out, "gbfs-hist", "csv");
            let o = run_gbfs(&status, &info, k_max, &out)?;
            ("gbfs-hist", out, o)
        }
        Command::Nonstationary { config, toy, y0, t_end, dt, covariance, amplitude_p, out } => {
            let out = default_out(out, "nonstationary", "csv");
            let params = load_params(&config.config)?;
            let o = run_nonstationary(&params, toy, y0.as_deref(), t_end, dt, covariance, &amplitude_p, &out)?;
            ("nonstationary", out, o)
        }
    };
    let manifest = Manifest {
        subcommand: name,
        tool_version: env!("CARGO_PKG_VERSION"),
        config: outcome.config,
        seed: outcome.seed,
        outputs: vec![out.display().to_string()],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        results: outcome.results,
    };
    let mut manifest_path = out.into_os_string();
    manifest_path.push(".manifest.json");
    write_json(Path::new(&manifest_path), &manifest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("BSS_LOG")
        .init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
