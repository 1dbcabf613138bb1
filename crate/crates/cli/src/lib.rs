//! Library side of the `lqgent` binary, kept separate so the commands can be
//! exercised from integration tests.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lqg_entanglement::control::{closed_loop, ClosedLoop};
use lqg_entanglement::entanglement::{assess, logneg_approx, threshold_conditional, Branch, CostKind};
use lqg_entanglement::model::{build_model, FeedbackConfig, PhysicalParams, StateSpaceModel};
use lqg_entanglement::sweep::{run_sweep, Quantity, SweepResult};
use lqg_entanglement::trajectory::{Simulator, TrajectoryConfig};
use serde::Serialize;

use config::{wrap_angle, Format, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] lqg_entanglement::Error),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lqgent", version, about = "Entanglement of two coupled, continuously measured oscillators under LQG feedback")]
pub struct Cli {
    /// TOML run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for written artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and ensembles (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the trajectory seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state covariances and entanglement at one parameter point.
    Steady,
    /// Evaluate a (g, eta) grid and write the phase-diagram data.
    Sweep,
    /// Simulate conditional-mean trajectories and compare with the Lyapunov solution.
    Trajectory,
}

struct Context {
    cfg: RunConfig,
    out: Option<PathBuf>,
    format: Format,
    prefix: String,
}

impl Context {
    fn path(&self, name: &str, ext: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|d| d.join(format!("{}{name}.{ext}", self.prefix)))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from));
    let format = cli.format.or(cfg.output.format).unwrap_or_default();
    let prefix = cfg.output.prefix.clone().unwrap_or_default();
    let ctx = Context { cfg, out, format, prefix };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cli.threads.unwrap_or(0))))?;
    pool.install(|| match cli.command {
        Command::Steady => cmd_steady(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Trajectory => cmd_trajectory(&ctx, cli.seed),
    })
}

fn echo_params(p: &PhysicalParams, fb: &FeedbackConfig, cost: Option<CostKind>) {
    let w = p.omega0;
    println!("resolved parameters (rates in units of omega0 = {w} rad/s):");
    println!("  g/omega0           = {}", p.g / w);
    println!("  gamma/omega0       = {:e}  (Q = {:e})", p.gamma / w, w / p.gamma);
    println!("  gamma_ba/omega0    = {}", p.gamma_ba / w);
    println!("  gamma_th/gamma_ba  = {}", p.gamma_th / p.gamma_ba);
    println!("  eta                = {}", p.eta);
    println!("  gamma_m/omega0     = {}", p.gamma_m() / w);
    println!("  charges Q1, Q2     = {}, {}", p.q1, p.q2);
    println!("  feedback           = {:?}, q = {}", fb.mode, fb.effort);
    match cost {
        Some(CostKind::Cool) => println!("  cost               = cool"),
        Some(CostKind::Epr { theta }) => println!("  cost               = epr, theta = {}", wrap_angle(theta)),
        None => {}
    }
}

#[derive(Serialize)]
struct SteadyReport {
    params: PhysicalParams,
    feedback: FeedbackConfig,
    cost: CostKind,
    sigma_cond: Vec<Vec<f64>>,
    xi_excess: Vec<Vec<f64>>,
    sigma_uncond: Vec<Vec<f64>>,
    nu_cond: f64,
    nu_uncond: f64,
    log_negativity_cond: f64,
    log_negativity_uncond: f64,
    epr_variance_cond: f64,
    epr_variance_uncond: f64,
    epr_theta: f64,
    thresholds: lqg_entanglement::entanglement::Thresholds,
    logneg_approx: lqg_entanglement::entanglement::LogNegApprox,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn print_matrix(name: &str, m: &nalgebra::DMatrix<f64>) {
    println!("{name} (x+, p+, x-, p-):");
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:>13.6e}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn cmd_steady(ctx: &Context) -> Result<(), CliError> {
    let params = ctx.cfg.physical_params()?;
    let fb = ctx.cfg.feedback()?;
    let g = params.g_ratio();
    let cost = ctx.cfg.cost(g);
    echo_params(&params, &fb, Some(cost));
    let model = build_model(&params, &fb)?;
    let cl = closed_loop(&params, &fb, cost)?;
    let report = steady_report(&params, &fb, cost, &model, &cl)?;

    println!();
    print_matrix("conditional covariance", cl.sigma_cond.mat());
    print_matrix("excess noise", cl.xi_excess.mat());
    print_matrix("unconditional covariance", cl.sigma_uncond.mat());
    println!();
    println!("nu (conditional)        = {:.9}", report.nu_cond);
    println!("nu (unconditional)      = {:.9}", report.nu_uncond);
    println!("E_N (conditional)       = {:.9}", report.log_negativity_cond);
    println!("E_N (unconditional)     = {:.9}", report.log_negativity_uncond);
    println!(
        "EPR variance at theta = {:.4}: conditional {:.6}, unconditional {:.6}",
        wrap_angle(report.epr_theta),
        report.epr_variance_cond,
        report.epr_variance_uncond
    );
    let t = report.thresholds;
    println!("thresholds: g+/omega0 = {:.6}, eta+ = {:.6}; g-/omega0 = {:.6}, eta- = {:.6}", t.g_plus, t.eta_plus, t.g_minus, t.eta_minus);
    let a = report.logneg_approx;
    println!("leading-order E_N = {:.6} ({})", a.log_negativity(), if a.valid { "in its regime" } else { "outside its regime" });

    if let Some(path) = ctx.path("steady", "json").filter(|_| ctx.format.json()) {
        write_json(&path, &report)?;
    }
    if let Some(path) = ctx.path("steady", "csv").filter(|_| ctx.format.csv()) {
        write_with(&path, |w| {
            writeln!(w, "matrix,i,j,value")?;
            for (name, m) in [("sigma_cond", &report.sigma_cond), ("xi_excess", &report.xi_excess), ("sigma_uncond", &report.sigma_uncond)] {
                for (i, r) in m.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        writeln!(w, "{name},{i},{j},{v}")?;
                    }
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn steady_report(
    params: &PhysicalParams,
    fb: &FeedbackConfig,
    cost: CostKind,
    model: &StateSpaceModel,
    cl: &ClosedLoop,
) -> Result<SteadyReport, CliError> {
    let theta = match cost {
        CostKind::Epr { theta } => theta,
        CostKind::Cool => lqg_entanglement::entanglement::default_theta(params.g_ratio()),
    };
    let c = assess(&cl.sigma_cond, model, theta)?;
    let u = assess(&cl.sigma_uncond, model, theta)?;
    let branch = if params.g_ratio() > 0.0 { Branch::Attractive } else { Branch::Repulsive };
    Ok(SteadyReport {
        params: *params,
        feedback: *fb,
        cost,
        sigma_cond: rows(cl.sigma_cond.mat()),
        xi_excess: rows(cl.xi_excess.mat()),
        sigma_uncond: rows(cl.sigma_uncond.mat()),
        nu_cond: c.symplectic_nu,
        nu_uncond: u.symplectic_nu,
        log_negativity_cond: c.log_negativity,
        log_negativity_uncond: u.log_negativity,
        epr_variance_cond: c.epr_variance,
        epr_variance_uncond: u.epr_variance,
        epr_theta: theta,
        thresholds: threshold_conditional(params),
        logneg_approx: logneg_approx(params, branch),
    })
}

fn summarize(r: &SweepResult) {
    println!(
        "sweep: {} x {} cells, {} ok, {} failed or skipped",
        r.g_values.len(),
        r.eta_values.len(),
        r.metadata.cells_ok,
        r.metadata.cells_failed
    );
    for q in [Quantity::CondEn, Quantity::UncondEn] {
        if r.quantity(q).is_some() {
            let n = r.entangled_mask(q).iter().flatten().filter(|&&b| b).count();
            println!("  {:<10} entangled cells: {n}", q.name());
        }
    }
    for (name, lines) in &r.boundaries {
        let pts: Vec<&[f64; 2]> = lines.iter().flatten().collect();
        if pts.is_empty() {
            println!("  {name} boundary: none");
            continue;
        }
        let (gmin, gmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[0]), b.max(p[0])));
        let (emin, emax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[1]), b.max(p[1])));
        println!(
            "  {name} boundary: {} polyline(s), g/omega0 in [{gmin:.5}, {gmax:.5}], eta in [{emin:.4}, {emax:.4}]",
            lines.len()
        );
    }
    println!(
        "  max residuals: filter {:.2e}, control {:.2e}; min symplectic eigenvalue {:.6}",
        r.metadata.max_filter_residual, r.metadata.max_control_residual, r.metadata.min_symplectic_eigenvalue
    );
}

fn cmd_sweep(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx.cfg.sweep_spec()?;
    echo_params(&spec.fixed, &spec.feedback, Some(spec.cost));
    println!(
        "  grid               = g/omega0 [{}, {}] x {}, eta [{}, {}] x {}",
        spec.g_over_omega0.min, spec.g_over_omega0.max, spec.g_over_omega0.count, spec.eta.min, spec.eta.max, spec.eta.count
    );
    let result = run_sweep(&spec)?;
    summarize(&result);
    let out = ctx.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { out: Some(out), prefix: ctx.prefix.clone(), format: ctx.format, cfg: ctx.cfg.clone() };
    if ctx.format.csv() {
        write_with(&ctx.path("sweep", "csv").expect("out set"), |w| result.write_csv(w))?;
    }
    if ctx.format.json() {
        write_json(&ctx.path("sweep", "json").expect("out set"), &result)?;
    }
    Ok(())
}

fn cmd_trajectory(ctx: &Context, seed: Option<u64>) -> Result<(), CliError> {
    let params = ctx.cfg.physical_params()?;
    let fb = ctx.cfg.feedback()?;
    let cost = ctx.cfg.cost(params.g_ratio());
    echo_params(&params, &fb, Some(cost));
    let model = build_model(&params, &fb)?;
    let cl = closed_loop(&params, &fb, cost)?;
    let mut tc: TrajectoryConfig = ctx.cfg.trajectory();
    if let Some(s) = seed {
        tc.seed = s;
    }
    if !ctx.cfg.burn_in_given() {
        tc.burn_in = TrajectoryConfig::min_burn_in(tc.dt, &cl.a_closed);
    }
    tc.validate(&cl.a_closed, model.omega_minus).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "  trajectory         = dt {}, burn-in {} steps, {} recorded steps, {} trajectories, seed {}",
        tc.dt, tc.burn_in, tc.steps, tc.n_traj, tc.seed
    );

    let sim = Simulator::from_closed_loop(&cl, &model);
    let (_, rec) = sim.run(&tc, 0, true)?;
    let rec = rec.expect("record requested");
    let out = ctx.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { out: Some(out), prefix: ctx.prefix.clone(), format: ctx.format, cfg: ctx.cfg.clone() };
    if ctx.format.csv() {
        write_with(&ctx.path("trajectory", "csv").expect("out set"), |w| rec.write_csv(w))?;
    }
    if ctx.format.json() {
        write_json(&ctx.path("trajectory", "json").expect("out set"), &rec)?;
    }

    if tc.n_traj > 1 {
        let stats = sim.ensemble(&tc)?;
        let xi = cl.xi_excess.mat();
        println!("ensemble of {} terminal states vs. excess noise:", stats.n_traj);
        println!("  {:>2} {:>2} {:>14} {:>14} {:>12} {:>7}", "i", "j", "ensemble", "lyapunov", "std err", "z");
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in i..4 {
                let z = (stats.covariance[(i, j)] - xi[(i, j)]) / stats.std_err[(i, j)];
                worst = worst.max(z.abs());
                println!(
                    "  {i:>2} {j:>2} {:>14.6e} {:>14.6e} {:>12.3e} {z:>7.2}",
                    stats.covariance[(i, j)],
                    xi[(i, j)],
                    stats.std_err[(i, j)]
                );
            }
        }
        println!("  max |z| = {worst:.2}");
        if ctx.format.json() {
            write_json(&ctx.path("ensemble", "json").expect("out set"), &stats)?;
        }
    }
    Ok(())
}
