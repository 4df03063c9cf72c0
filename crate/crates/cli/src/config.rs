//! Run configuration: a TOML key-value file overlaid by command-line flags.

use cpmse::pipeline::SweepOptions;
use cpmse::{Configuration, Gauge, Geometry, GuardPolicy, Material, MaterialLibrary, Tolerances};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] cpmse::CpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

/// Every setting a run can take. All keys are optional; unknown keys are an
/// error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<String>,
    pub material: Option<String>,
    pub materials_file: Option<PathBuf>,
    pub radius_um: Option<f64>,
    pub temperature_k: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub gauge: Option<String>,
    /// (c_E, c_H) inside and outside when `gauge = "custom"`.
    pub gauge_interior: Option<[f64; 2]>,
    pub gauge_exterior: Option<[f64; 2]>,
    pub d_over_r: Option<Vec<f64>>,
    pub orders: Option<Vec<usize>>,
    pub fallback: Option<bool>,

    pub matsubara_rel_tol: Option<f64>,
    pub matsubara_n_max: Option<usize>,
    pub channel_rel_tol: Option<f64>,
    pub channel_cap: Option<usize>,
    pub quadrature_rel_tol: Option<f64>,
    pub quadrature_start_nodes: Option<usize>,
    pub quadrature_max_nodes: Option<usize>,
    pub spectral_guard: Option<f64>,
    pub dual_route_tol: Option<f64>,

    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub deterministic: Option<bool>,
    pub threads: Option<usize>,
    pub verbosity: Option<u8>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        overlay!(self, top;
            geometry, material, materials_file, radius_um, temperature_k, mu, alpha, gauge,
            gauge_interior, gauge_exterior, d_over_r, orders, fallback,
            matsubara_rel_tol, matsubara_n_max, channel_rel_tol, channel_cap, quadrature_rel_tol,
            quadrature_start_nodes, quadrature_max_nodes, spectral_guard, dual_route_tol,
            output, format, deterministic, threads, verbosity,
        );
        self
    }

    /// Thread budget: `MSE_THREADS` wins over the file and the flags.
    pub fn thread_budget(&self, env: Option<&str>) -> Result<Option<usize>, ConfigError> {
        match env {
            Some(s) if !s.trim().is_empty() => match s.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(ConfigError::Invalid(format!("MSE_THREADS must be a positive integer, got '{s}'"))),
            },
            _ => match self.threads {
                Some(0) => Err(ConfigError::Invalid("threads must be positive".into())),
                t => Ok(t),
            },
        }
    }

    pub fn deterministic(&self) -> bool {
        self.deterministic.unwrap_or(true)
    }

    pub fn policy(&self) -> GuardPolicy {
        if self.fallback.unwrap_or(false) {
            GuardPolicy::Resum
        } else {
            GuardPolicy::Refuse
        }
    }

    pub fn material(&self) -> Result<Material, ConfigError> {
        let name = self.material.as_deref().ok_or_else(|| ConfigError::Invalid("no material given".into()))?;
        let lib = match &self.materials_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.clone(), source })?;
                MaterialLibrary::parse(&text).map_err(cpmse::CpError::from)?
            }
            None => MaterialLibrary::builtin(),
        };
        let key = name.to_ascii_lowercase();
        lib.get(name).or_else(|| lib.get(&key)).ok_or_else(|| {
            let known: Vec<&str> = lib.names().collect();
            ConfigError::Invalid(format!("unknown material '{name}' (known: {})", known.join(", ")))
        })
    }

    pub fn gauge(&self) -> Result<Gauge, ConfigError> {
        let g = self.gauge.as_deref().unwrap_or("c1");
        if g.eq_ignore_ascii_case("custom") {
            let (Some(i), Some(e)) = (self.gauge_interior, self.gauge_exterior) else {
                return Err(ConfigError::Invalid("custom gauge needs gauge_interior and gauge_exterior".into()));
            };
            return Ok(Gauge::Custom { interior: (i[0], i[1]), exterior: (e[0], e[1]) });
        }
        g.parse::<Gauge>().map_err(|e| ConfigError::Core(e.into()))
    }

    pub fn geometry(&self) -> Result<Geometry, ConfigError> {
        self.geometry
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("no geometry given".into()))?
            .parse::<Geometry>()
            .map_err(|e| ConfigError::Core(e.into()))
    }

    pub fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        set!(
            matsubara_rel_tol,
            matsubara_n_max,
            channel_rel_tol,
            channel_cap,
            quadrature_rel_tol,
            quadrature_start_nodes,
            quadrature_max_nodes,
            spectral_guard
        );
        t.deterministic = self.deterministic();
        t
    }

    /// Configuration template at the first listed distance (or d/R = 1 when
    /// none is given).
    pub fn template(&self) -> Result<Configuration, ConfigError> {
        let d = self.d_over_r.as_ref().and_then(|v| v.first().copied()).unwrap_or(1.0);
        let mut cfg = Configuration::new(self.geometry()?, self.material()?, d).with_gauge(self.gauge()?);
        if let Some(r) = self.radius_um {
            cfg.radius = r;
            cfg.distance = d * r;
        }
        if let Some(t) = self.temperature_k {
            cfg.temperature = t;
        }
        if let Some(m) = self.mu {
            cfg.mu = m;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        cfg.tolerances = self.tolerances();
        cfg.validate().map_err(|e| ConfigError::Core(e.into()))?;
        Ok(cfg)
    }

    /// Exactly one distance, for the single-point subcommands.
    pub fn single_distance(&self) -> Result<f64, ConfigError> {
        match self.d_over_r.as_deref() {
            Some([d]) => Ok(*d),
            Some(v) => Err(ConfigError::Invalid(format!("expected one d/R value, got {}", v.len()))),
            None => Err(ConfigError::Invalid("no d/R given".into())),
        }
    }

    pub fn sweep_options(&self, geometry: Geometry) -> SweepOptions {
        let mut o = SweepOptions::for_geometry(geometry);
        o.policy = self.policy();
        if let Some(t) = self.dual_route_tol {
            o.dual_route_tol = t;
        }
        o
    }
}

/// Comma-separated list; an empty string is an empty list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let err = toml::from_str::<RunConfig>("material = \"si\"\nradius = 30.0\n").unwrap_err();
        assert!(err.to_string().contains("radius"), "{err}");
    }

    #[test]
    fn overlay_prefers_top() {
        let base: RunConfig = toml::from_str("material = \"si\"\ngauge = \"c2\"\nthreads = 2").unwrap();
        let top = RunConfig { gauge: Some("c1".into()), ..Default::default() };
        let c = base.overlay(top);
        assert_eq!((c.material.as_deref(), c.gauge.as_deref(), c.threads), (Some("si"), Some("c1"), Some(2)));
    }

    #[test]
    fn env_threads_win() {
        let c = RunConfig { threads: Some(2), ..Default::default() };
        assert_eq!(c.thread_budget(Some("5")).unwrap(), Some(5));
        assert_eq!(c.thread_budget(None).unwrap(), Some(2));
        assert!(c.thread_budget(Some("zero")).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_list::<f64>("").unwrap().is_empty());
        assert!(parse_list::<usize>("1,x").is_err());
    }
}
