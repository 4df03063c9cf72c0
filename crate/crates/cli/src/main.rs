mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{parse_list, ConfigError, Format, RunConfig};
use cpmse::pipeline::{default_distances, exact_energy, run_sweep_with};
use cpmse::quantities::matsubara_term;
use cpmse::sso_mse::{default_kz_grid, mse_energy, resummed_energy, spectrum_point, Channel};
use cpmse::{CpError, Geometry, Permittivity};
use output::RunInfo;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// `println!` that ends the command quietly when the reader has gone away.
macro_rules! out {
    ($($arg:tt)*) => {
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Ok(0);
            }
            return Err(AppError::Io(e.to_string()));
        }
    };
}

/// Casimir-Polder energies near a sphere or cylinder: exact T-matrix results
/// and the multiple-scattering expansion.
#[derive(Parser, Debug)]
#[command(name = "cpmse", version)]
struct Cli {
    /// TOML key-value file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Ratio table MSE_k / exact over a list of distances.
    Sweep {
        #[command(flatten)]
        body: Body,
        /// Comma-separated d/R values (default: 12 log-spaced in [0.03, 1]).
        #[arg(long)]
        d_over_r: Option<String>,
        /// Comma-separated ascending orders k (default 0,1,2,3,4).
        #[arg(long)]
        orders: Option<String>,
        #[command(flatten)]
        out: Out,
        /// Also write a matplotlib script for the ratio plot.
        #[arg(long)]
        emit_plot_script: Option<PathBuf>,
    },
    /// Exact energy at one distance.
    Exact {
        #[command(flatten)]
        body: Body,
        #[arg(long)]
        d_over_r: Option<f64>,
        /// Use the resummed surface-operator route instead of the T-matrix.
        #[arg(long)]
        resummed: bool,
    },
    /// MSE_0..=MSE_k at one distance, with the exact energy and ratios.
    Mse {
        #[command(flatten)]
        body: Body,
        #[arg(long)]
        d_over_r: Option<f64>,
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
    /// Spectral radius of the surface operator per channel and wavenumber.
    Spectrum {
        #[command(flatten)]
        body: Body,
        /// Comma-separated channel indices: l for the sphere, m for the cylinder.
        #[arg(long)]
        channels: Option<String>,
        /// Comma-separated κ values in 1/µm.
        #[arg(long)]
        kappa: Option<String>,
    },
    /// Tabulate ε(iξ_n) at Matsubara frequencies.
    Materials {
        #[arg(long)]
        material: Option<String>,
        #[arg(long)]
        materials_file: Option<PathBuf>,
        #[arg(long)]
        temperature_k: Option<f64>,
        /// Comma-separated Matsubara indices (default 0..=10).
        #[arg(long)]
        n: Option<String>,
    },
}

/// Physical setup and numerical controls shared by the computing subcommands.
#[derive(Args, Debug, Default)]
struct Body {
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    material: Option<String>,
    /// Extra material definitions (same schema as the built-in table).
    #[arg(long)]
    materials_file: Option<PathBuf>,
    #[arg(long)]
    radius_um: Option<f64>,
    #[arg(long)]
    temperature_k: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// c1, c2 or custom (custom needs gauge_interior/gauge_exterior in the config file).
    #[arg(long)]
    gauge: Option<String>,
    /// Replace the Neumann series by the direct solve where the spectral guard trips.
    #[arg(long)]
    fallback: bool,
    #[arg(long)]
    spectral_guard: Option<f64>,
    #[arg(long)]
    matsubara_rel_tol: Option<f64>,
    #[arg(long)]
    dual_route_tol: Option<f64>,
    /// Thread budget (overridden by MSE_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Out {
    /// Write to this file instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Fixed reduction order and no run-specific header lines (default on).
    #[arg(long, overrides_with = "no_deterministic")]
    deterministic: bool,
    #[arg(long)]
    no_deterministic: bool,
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(CpError),
    #[error("{0}")]
    Io(String),
}

impl From<CpError> for AppError {
    fn from(e: CpError) -> Self {
        AppError::Core(e)
    }
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(ConfigError::Core(e)) | AppError::Core(e) => core_code(e),
            AppError::Config(_) => 2,
            AppError::Io(_) => 1,
        }
    }
}

fn core_code(e: &CpError) -> u8 {
    match e {
        CpError::SpectralGuard { .. } => 4,
        e if e.is_convergence_failure() => 3,
        _ => 2,
    }
}

impl Body {
    fn into_config(self) -> RunConfig {
        RunConfig {
            geometry: self.geometry,
            material: self.material,
            materials_file: self.materials_file,
            radius_um: self.radius_um,
            temperature_k: self.temperature_k,
            mu: self.mu,
            alpha: self.alpha,
            gauge: self.gauge,
            fallback: self.fallback.then_some(true),
            spectral_guard: self.spectral_guard,
            matsubara_rel_tol: self.matsubara_rel_tol,
            dual_route_tol: self.dual_route_tol,
            threads: self.threads,
            ..Default::default()
        }
    }
}

fn list<T: std::str::FromStr>(s: Option<String>, what: &str) -> Result<Option<Vec<T>>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    s.map(|s| parse_list(&s).map_err(|e| ConfigError::Invalid(format!("--{what}: {e}")))).transpose()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Resolved settings plus the subcommand-specific leftovers.
fn resolve(file: Option<&PathBuf>, flags: RunConfig, verbose: u8) -> Result<RunConfig, AppError> {
    let base = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut rc = base.overlay(flags);
    if verbose > 0 {
        rc.verbosity = Some(verbose);
    }
    let env = std::env::var("MSE_THREADS").ok();
    if let Some(n) = rc.thread_budget(env.as_deref())? {
        rc.threads = Some(n);
        // Only the first build succeeds; later calls (tests) keep the pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rc)
}

fn run(cli: Cli) -> Result<u8, AppError> {
    let verbose = cli.verbose;
    let file = cli.config.as_ref();
    match cli.cmd {
        Cmd::Sweep { body, d_over_r, orders, out, emit_plot_script } => {
            let mut flags = body.into_config();
            flags.d_over_r = list(d_over_r, "d-over-r")?;
            flags.orders = list(orders, "orders")?;
            flags.output = out.output;
            flags.format = out.format;
            if out.deterministic {
                flags.deterministic = Some(true);
            } else if out.no_deterministic {
                flags.deterministic = Some(false);
            }
            let rc = resolve(file, flags, verbose)?;
            sweep(&rc, emit_plot_script)
        }
        Cmd::Exact { body, d_over_r, resummed } => {
            let mut flags = body.into_config();
            flags.d_over_r = d_over_r.map(|d| vec![d]);
            let rc = resolve(file, flags, verbose)?;
            exact(&rc, resummed)
        }
        Cmd::Mse { body, d_over_r, order } => {
            let mut flags = body.into_config();
            flags.d_over_r = d_over_r.map(|d| vec![d]);
            let rc = resolve(file, flags, verbose)?;
            mse(&rc, order)
        }
        Cmd::Spectrum { body, channels, kappa } => {
            let rc = resolve(file, body.into_config(), verbose)?;
            spectrum(&rc, list(channels, "channels")?, list(kappa, "kappa")?)
        }
        Cmd::Materials { material, materials_file, temperature_k, n } => {
            let flags = RunConfig { material, materials_file, temperature_k, ..Default::default() };
            let rc = resolve(file, flags, verbose)?;
            materials(&rc, list(n, "n")?)
        }
    }
}

fn emit(path: Option<&PathBuf>, text: &str) -> Result<(), AppError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| AppError::Io(format!("cannot write {}: {e}", p.display()))),
        None => match std::io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(AppError::Io(e.to_string())),
            _ => Ok(()),
        },
    }
}

fn sweep(rc: &RunConfig, plot: Option<PathBuf>) -> Result<u8, AppError> {
    let distances = rc.d_over_r.clone().unwrap_or_else(default_distances);
    if distances.is_empty() {
        return Err(ConfigError::Invalid("empty distance list".into()).into());
    }
    let orders = rc.orders.clone().unwrap_or_else(|| vec![0, 1, 2, 3, 4]);
    let template = rc.template()?;
    let opts = rc.sweep_options(template.geometry);
    let start = Instant::now();
    let result = run_sweep_with(&template, &distances, &orders, &opts)?;
    let elapsed = start.elapsed();

    let pairs = output::provenance(&template, &result.metadata, &distances, &orders);
    let mut info = RunInfo { threads: rayon::current_num_threads(), extra: vec![] };
    if !rc.deterministic() {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        info.extra.push(("started_unix".into(), now.to_string()));
        info.extra.push(("elapsed_s".into(), format!("{:.3}", elapsed.as_secs_f64())));
    }
    let text = match rc.format.unwrap_or_default() {
        Format::Csv => output::write_csv(&result, &pairs, &info),
        Format::JsonLines => output::write_json_lines(&result, &pairs, &info),
    };
    emit(rc.output.as_ref(), &text)?;
    if let Some(p) = plot {
        let hint = rc.output.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "sweep.csv".into());
        let title = format!("{} {} {}", result.metadata.material, result.metadata.geometry, result.metadata.gauge);
        emit(Some(&p), &output::plot_script(&hint, &title))?;
    }
    if rc.verbosity.unwrap_or(0) > 0 {
        eprintln!(
            "{} rows, {} failed distances, {:.2} s on {} threads",
            result.rows.len(),
            result.errors.len(),
            elapsed.as_secs_f64(),
            info.threads
        );
    }
    for e in &result.errors {
        eprintln!("error at d/R = {}: {}", e.d_over_r, e.error);
    }
    Ok(result.errors.iter().map(|e| core_code(&e.error)).max().unwrap_or(0))
}

fn at_distance(rc: &RunConfig) -> Result<cpmse::Configuration, AppError> {
    let d = rc.single_distance()?;
    let mut cfg = rc.template()?;
    cfg.distance = d * cfg.radius;
    Ok(cfg)
}

fn exact(rc: &RunConfig, resummed: bool) -> Result<u8, AppError> {
    let cfg = at_distance(rc)?;
    let e = if resummed { resummed_energy(&cfg)? } else { exact_energy(&cfg)? };
    out!("route        {}", if resummed { "resummed" } else { "t-matrix" });
    out!("d_over_r     {}", output::float(cfg.d_over_r()));
    out!("e_exact_ev   {}", output::float(e.energy));
    out!("channel_max  {}", e.channel_max);
    out!("n_matsubara  {}", e.n_matsubara);
    out!("converged    {}", e.converged);
    Ok(0)
}

fn mse(rc: &RunConfig, order: usize) -> Result<u8, AppError> {
    let cfg = at_distance(rc)?;
    let m = mse_energy(&cfg, order, rc.policy())?;
    let e = exact_energy(&cfg)?;
    out!("# {} {} gauge {} d/R = {}", cfg.material.name, cfg.geometry, cfg.gauge.label(), cfg.d_over_r());
    out!("{:>5}  {:>24}  {:>24}  {:>12}", "order", "e_mse_ev", "ratio", "error_pct");
    for (k, v) in m.partials.iter().enumerate() {
        let r = v / e.energy;
        out!("{k:>5}  {:>24}  {:>24}  {:>12.6}", output::float(*v), output::float(r), 100.0 * (r - 1.0).abs());
    }
    out!("exact     {}", output::float(e.energy));
    out!("resummed  {}", output::float(m.resummed));
    out!("max_spectral_radius  {:.9}", m.max_spectral_radius);
    if m.guard_fallbacks > 0 {
        out!("guard_fallbacks      {}", m.guard_fallbacks);
    }
    Ok(if m.converged && e.converged { 0 } else { 3 })
}

fn spectrum(rc: &RunConfig, channels: Option<Vec<i64>>, kappas: Option<Vec<f64>>) -> Result<u8, AppError> {
    let template = rc.template()?;
    let channels = channels.unwrap_or_else(|| match template.geometry {
        Geometry::Sphere => vec![1, 2, 3, 4],
        Geometry::Cylinder => vec![0, 1, 2, 3],
    });
    let kappas = kappas.unwrap_or_else(|| vec![1e-3, 1e-4, 1e-5, 1e-6]);
    if channels.is_empty() || kappas.is_empty() {
        return Err(ConfigError::Invalid("empty channel or κ list".into()).into());
    }
    let grid = default_kz_grid();
    out!("channel,kappa,kz_at_max,spectral_radius");
    for &c in &channels {
        for &k in &kappas {
            let p = spectrum_point(
                template.geometry,
                &template.material,
                template.mu,
                template.radius,
                template.gauge,
                c,
                k,
                &grid,
            )?;
            let kz = match p.channel {
                Channel::Cylinder { kz, .. } => output::float(kz),
                Channel::Sphere { .. } => String::new(),
            };
            out!("{c},{},{kz},{}", output::float(k), output::float(p.radius));
        }
    }
    Ok(0)
}

fn materials(rc: &RunConfig, ns: Option<Vec<usize>>) -> Result<u8, AppError> {
    let mat = rc.material()?;
    let t = rc.temperature_k.unwrap_or(300.0);
    let ns = ns.unwrap_or_else(|| (0..=10).collect());
    out!("# {} at T = {t} K", mat.name);
    out!("n,xi_ev,kappa_per_um,epsilon");
    for n in ns {
        let mt = matsubara_term(n, t).map_err(CpError::from)?;
        let eps = match mat.permittivity(mt.xi).map_err(CpError::from)? {
            Permittivity::Finite(e) => output::float(e),
            Permittivity::PerfectConductor => "inf".into(),
        };
        out!("{n},{},{},{eps}", output::float(mt.xi), output::float(mt.kappa));
    }
    Ok(0)
}
