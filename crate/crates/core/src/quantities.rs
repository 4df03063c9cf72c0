//! Units, constants, Matsubara frequencies and the run configuration.
//!
//! Lengths are in micrometres and energies in electronvolts. Imaginary
//! frequencies ξ are quoted as energies (ħ = 1), and the matching vacuum
//! wavenumber is κ = ξ/(ħc) in µm⁻¹.

use crate::materials::Material;
use thiserror::Error;

/// Boltzmann constant in eV/K.
pub const K_B: f64 = 8.6173332e-5;
/// ħc in eV·µm.
pub const HBAR_C: f64 = 0.19732697;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantityError {
    #[error("temperature must be positive, got {0} K")]
    Temperature(f64),
    #[error("relative tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("non-finite Matsubara term at n = {n}")]
    NonFinite { n: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Wavenumber (µm⁻¹) of an imaginary frequency given in eV.
pub fn kappa_of_xi(xi: f64) -> f64 {
    xi / HBAR_C
}

/// Imaginary frequency (eV) of a wavenumber in µm⁻¹.
pub fn xi_of_kappa(kappa: f64) -> f64 {
    kappa * HBAR_C
}

/// One term of the Matsubara grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatsubaraTerm {
    pub n: usize,
    pub xi: f64,
    pub kappa: f64,
    pub weight: f64,
}

/// ξₙ = 2πn k_B T, κₙ = ξₙ/ħc and the primed-sum weight.
pub fn matsubara_term(n: usize, temperature: f64) -> Result<MatsubaraTerm, QuantityError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(QuantityError::Temperature(temperature));
    }
    let xi1 = 2.0 * std::f64::consts::PI * K_B * temperature;
    let xi = n as f64 * xi1;
    Ok(MatsubaraTerm {
        n,
        xi,
        kappa: kappa_of_xi(xi),
        weight: if n == 0 { 0.5 } else { 1.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Two consecutive terms fell below the relative tolerance.
    Converged,
    /// The index cap was reached first.
    IndexCap,
}

/// Result of a primed sum with several components summed in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimedSum {
    pub values: Vec<f64>,
    /// Number of terms retained, n = 0 included.
    pub terms: usize,
    pub termination: Termination,
    /// Geometric bound on the neglected tail, largest over components.
    pub tail_estimate: f64,
}

impl PrimedSum {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Primed Matsubara sum of a scalar term.
///
/// The n = 0 term gets weight 1/2. Summation stops once two consecutive terms
/// are below `rel_tol` times the running sum, or at `n_max`.
pub fn primed_sum<F>(mut term: F, rel_tol: f64, n_max: usize) -> Result<PrimedSum, QuantityError>
where
    F: FnMut(usize) -> f64,
{
    primed_sum_batched(
        |range| Ok::<_, QuantityError>(range.map(|n| vec![term(n)]).collect()),
        rel_tol,
        n_max,
        1,
    )
}

/// Vector-valued primed sum; every component must satisfy the stopping rule.
///
/// `terms(range)` returns one component vector per index. Indices are
/// requested in batches of `batch` so callers may evaluate them concurrently;
/// the stopping decision only looks at terms in index order, so the result
/// does not depend on the batch size.
pub fn primed_sum_batched<F, E>(
    mut terms: F,
    rel_tol: f64,
    n_max: usize,
    batch: usize,
) -> Result<PrimedSum, E>
where
    F: FnMut(std::ops::Range<usize>) -> Result<Vec<Vec<f64>>, E>,
    E: From<QuantityError>,
{
    if !(rel_tol > 0.0) {
        return Err(QuantityError::Tolerance(rel_tol).into());
    }
    let batch = batch.max(1);
    let mut sum: Vec<f64> = Vec::new();
    let mut small_run = 0usize;
    let mut last_ratio = 0.0f64;
    let mut prev_mag: Option<Vec<f64>> = None;
    let mut n = 0usize;
    while n <= n_max {
        let hi = (n + batch).min(n_max + 1);
        let block = terms(n..hi)?;
        for (offset, t) in block.into_iter().enumerate() {
            let idx = n + offset;
            if t.iter().any(|x| !x.is_finite()) {
                return Err(QuantityError::NonFinite { n: idx }.into());
            }
            let w = if idx == 0 { 0.5 } else { 1.0 };
            if sum.is_empty() {
                sum = vec![0.0; t.len()];
            }
            for (s, x) in sum.iter_mut().zip(&t) {
                *s += w * x;
            }
            let small = t
                .iter()
                .zip(&sum)
                .all(|(x, s)| x.abs() <= rel_tol * s.abs() || (*x == 0.0 && *s == 0.0));
            if idx > 0 {
                if let Some(p) = &prev_mag {
                    last_ratio = t
                        .iter()
                        .zip(p)
                        .map(|(x, y)| if *y != 0.0 { (x / y).abs() } else { 0.0 })
                        .fold(0.0, f64::max);
                }
            }
            prev_mag = Some(t.clone());
            if idx > 0 && small {
                small_run += 1;
            } else {
                small_run = 0;
            }
            if small_run >= 2 {
                let tail = tail_bound(&t, last_ratio);
                return Ok(PrimedSum {
                    values: sum,
                    terms: idx + 1,
                    termination: Termination::Converged,
                    tail_estimate: tail,
                });
            }
        }
        n = hi;
    }
    let tail = prev_mag.as_ref().map(|t| tail_bound(t, last_ratio)).unwrap_or(0.0);
    Ok(PrimedSum {
        values: sum,
        terms: n_max + 1,
        termination: Termination::IndexCap,
        tail_estimate: tail,
    })
}

fn tail_bound(last: &[f64], ratio: f64) -> f64 {
    let m = last.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if ratio < 1.0 {
        m * ratio / (1.0 - ratio)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    Sphere,
    Cylinder,
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Geometry::Sphere => "sphere",
            Geometry::Cylinder => "cylinder",
        })
    }
}

impl std::str::FromStr for Geometry {
    type Err = QuantityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(Geometry::Sphere),
            "cylinder" => Ok(Geometry::Cylinder),
            other => Err(QuantityError::Config(format!("unknown geometry '{other}'"))),
        }
    }
}

/// Free diagonal coefficients of the surface formulation.
///
/// `interior = (c_E, c_H)` multiplies the body Green tensor and
/// `exterior = (c_E, c_H)` the vacuum one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gauge {
    /// Interior (ε, µ), exterior (1, 1).
    C1,
    /// Interior (1, 0), exterior (0, 1). Material independent.
    C2,
    Custom { interior: (f64, f64), exterior: (f64, f64) },
}

impl Gauge {
    /// Resolved coefficient pairs for a body with the given ε and µ.
    pub fn coefficients(&self, eps: f64, mu: f64) -> ((f64, f64), (f64, f64)) {
        match *self {
            Gauge::C1 => ((eps, mu), (1.0, 1.0)),
            Gauge::C2 => ((1.0, 0.0), (0.0, 1.0)),
            Gauge::Custom { interior, exterior } => (interior, exterior),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Gauge::C1 => "C1",
            Gauge::C2 => "C2",
            Gauge::Custom { .. } => "custom",
        }
    }
}

impl std::str::FromStr for Gauge {
    type Err = QuantityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(Gauge::C1),
            "c2" => Ok(Gauge::C2),
            other => Err(QuantityError::Config(format!("unknown gauge '{other}'"))),
        }
    }
}

/// Truncation and tolerance controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Relative stopping tolerance of the Matsubara sum.
    pub matsubara_rel_tol: f64,
    pub matsubara_n_max: usize,
    /// Relative change accepted between successive doublings of l_max or m_max.
    pub channel_rel_tol: f64,
    pub channel_cap: usize,
    /// Relative change accepted between successive doublings of k_z nodes.
    pub quadrature_rel_tol: f64,
    pub quadrature_start_nodes: usize,
    pub quadrature_max_nodes: usize,
    /// Spectral radius at or above which the Neumann series is not trusted.
    pub spectral_guard: f64,
    /// Sum in fixed serial order regardless of thread count.
    pub deterministic: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            matsubara_rel_tol: 1e-9,
            matsubara_n_max: 4000,
            channel_rel_tol: 1e-10,
            channel_cap: 20_000,
            quadrature_rel_tol: 1e-8,
            quadrature_start_nodes: 48,
            quadrature_max_nodes: 1536,
            spectral_guard: 1.0 - 1e-6,
            deterministic: true,
        }
    }
}

/// Everything needed to evaluate one particle-body energy.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub geometry: Geometry,
    /// Body radius R in µm.
    pub radius: f64,
    pub material: Material,
    /// Relative permeability of the body.
    pub mu: f64,
    /// Static polarizability of the particle, arbitrary units.
    pub alpha: f64,
    /// Surface to particle distance d in µm.
    pub distance: f64,
    pub temperature: f64,
    pub gauge: Gauge,
    pub orders: Vec<usize>,
    pub tolerances: Tolerances,
}

impl Configuration {
    /// Configuration with the paper's defaults: R = 30 µm, T = 300 K, α = 1.
    pub fn new(geometry: Geometry, material: Material, d_over_r: f64) -> Self {
        let radius = 30.0;
        Configuration {
            geometry,
            radius,
            material,
            mu: 1.0,
            alpha: 1.0,
            distance: d_over_r * radius,
            temperature: 300.0,
            gauge: Gauge::C1,
            orders: vec![0, 1, 2, 3, 4],
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_gauge(mut self, gauge: Gauge) -> Self {
        self.gauge = gauge;
        self
    }

    /// Particle distance from the body axis or centre.
    pub fn a(&self) -> f64 {
        self.radius + self.distance
    }

    pub fn d_over_r(&self) -> f64 {
        self.distance / self.radius
    }

    pub fn validate(&self) -> Result<(), QuantityError> {
        let bad = |m: &str| Err(QuantityError::Config(m.to_string()));
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return bad("distance must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(QuantityError::Temperature(self.temperature));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("permeability must be positive");
        }
        if !self.alpha.is_finite() {
            return bad("polarizability must be finite");
        }
        if let Gauge::Custom { interior, exterior } = self.gauge {
            if interior.0 + exterior.0 == 0.0 || interior.1 + exterior.1 == 0.0 {
                return bad("gauge coefficients give a singular interior + exterior sum");
            }
        }
        if self.tolerances.matsubara_rel_tol <= 0.0 {
            return Err(QuantityError::Tolerance(self.tolerances.matsubara_rel_tol));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matsubara_frequency() {
        let t = matsubara_term(1, 300.0).unwrap();
        assert!((t.xi - 0.162_43).abs() < 1e-5);
        assert!((t.kappa - 0.8232).abs() < 1e-4);
        let t0 = matsubara_term(0, 300.0).unwrap();
        assert_eq!((t0.xi, t0.kappa, t0.weight), (0.0, 0.0, 0.5));
        assert_eq!(matsubara_term(2, 300.0).unwrap().xi, 2.0 * t.xi);
        assert!(matsubara_term(1, 0.0).is_err());
    }

    #[test]
    fn kappa_round_trip() {
        for xi in [1e-6, 0.16243, 3.0, 250.0] {
            assert!((xi_of_kappa(kappa_of_xi(xi)) - xi).abs() <= 4.0 * f64::EPSILON * xi);
        }
    }

    #[test]
    fn primed_sum_weights() {
        let s = primed_sum(|n| if n == 0 { 1.0 } else { 0.0 }, 1e-12, 100).unwrap();
        assert_eq!(s.value(), 0.5);
        let g = primed_sum(|n| 0.5f64.powi(n as i32), 1e-15, 200).unwrap();
        assert!((g.value() - 1.5).abs() < 1e-14);
        assert_eq!(g.termination, Termination::Converged);
    }

    #[test]
    fn primed_sum_reports_cap_and_nan() {
        let s = primed_sum(|_| 1.0, 1e-9, 9).unwrap();
        assert_eq!(s.termination, Termination::IndexCap);
        assert_eq!(s.value(), 9.5);
        let e = primed_sum(|n| if n == 3 { f64::NAN } else { 1.0 }, 1e-9, 9);
        assert_eq!(e, Err(QuantityError::NonFinite { n: 3 }));
    }

    #[test]
    fn batch_size_does_not_change_result() {
        let f = |r: std::ops::Range<usize>| {
            Ok::<_, QuantityError>(
                r.map(|n| {
                    let x = n as f64;
                    vec![(-x * 0.7).exp() * (1.0 + 0.1 * x), (-x * 0.9).exp()]
                })
                .collect(),
            )
        };
        let a = primed_sum_batched(f, 1e-9, 1000, 1).unwrap();
        let b = primed_sum_batched(f, 1e-9, 1000, 7).unwrap();
        assert_eq!(a, b);
    }
}
