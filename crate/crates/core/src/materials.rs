//! Permittivity models at imaginary frequency.
//!
//! The built-in models (Au, Si, polystyrene) live in `data/materials.toml`,
//! which is compiled into the crate. Additional models can be loaded from a
//! file with the same schema through [`MaterialLibrary::parse`].

use serde::Deserialize;
use thiserror::Error;

const BUILTIN: &str = include_str!("../data/materials.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("frequency must be non-negative, got {0}")]
    NegativeFrequency(f64),
    #[error("unknown material '{0}'")]
    Unknown(String),
    #[error("material file: {0}")]
    Parse(String),
    #[error("material '{name}': {reason}")]
    Invalid { name: String, reason: String },
}

/// ε(iξ): a finite real number, or the perfect-conductor marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Permittivity {
    Finite(f64),
    /// ε → ∞. Only the static code paths accept it.
    PerfectConductor,
}

impl Permittivity {
    pub fn is_perfect_conductor(&self) -> bool {
        matches!(self, Permittivity::PerfectConductor)
    }

    /// Numeric value, `f64::INFINITY` for the perfect conductor.
    pub fn value(&self) -> f64 {
        match *self {
            Permittivity::Finite(e) => e,
            Permittivity::PerfectConductor => f64::INFINITY,
        }
    }
}

/// A damped oscillator term f/(ω² + gξ + ξ²).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "[f64; 3]")]
pub struct Oscillator {
    pub omega: f64,
    pub strength: f64,
    pub width: f64,
}

impl From<[f64; 3]> for Oscillator {
    fn from(v: [f64; 3]) -> Self {
        Oscillator { omega: v[0], strength: v[1], width: v[2] }
    }
}

impl Oscillator {
    fn eval(&self, xi: f64) -> f64 {
        self.strength / (self.omega * self.omega + self.width * xi + xi * xi)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    DrudeLorentz {
        plasma: f64,
        damping: f64,
        #[serde(default)]
        oscillators: Vec<Oscillator>,
    },
    TwoPoleSi {
        eps_inf: f64,
        eps_0: f64,
        omega_uv: f64,
    },
    OscillatorSum {
        #[serde(default)]
        oscillators: Vec<Oscillator>,
    },
    Constant {
        value: f64,
    },
    PerfectConductor,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Material {
    pub name: String,
    #[serde(flatten)]
    pub model: Model,
}

impl Material {
    pub fn au() -> Material {
        MaterialLibrary::builtin().get("au").expect("built-in au")
    }

    pub fn si() -> Material {
        MaterialLibrary::builtin().get("si").expect("built-in si")
    }

    pub fn polystyrene() -> Material {
        MaterialLibrary::builtin().get("polystyrene").expect("built-in polystyrene")
    }

    /// A frequency independent dielectric.
    pub fn constant(name: &str, value: f64) -> Material {
        Material { name: name.to_string(), model: Model::Constant { value } }
    }

    /// Look up a built-in material by name (case-insensitive).
    pub fn builtin(name: &str) -> Result<Material, MaterialError> {
        MaterialLibrary::builtin()
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| MaterialError::Unknown(name.to_string()))
    }

    /// ε(iξ) with ξ in eV.
    pub fn permittivity(&self, xi: f64) -> Result<Permittivity, MaterialError> {
        if !(xi >= 0.0) {
            return Err(MaterialError::NegativeFrequency(xi));
        }
        let sum = |osc: &[Oscillator]| osc.iter().map(|o| o.eval(xi)).sum::<f64>();
        Ok(match &self.model {
            Model::DrudeLorentz { plasma, damping, oscillators } => {
                if xi == 0.0 {
                    Permittivity::PerfectConductor
                } else {
                    Permittivity::Finite(
                        1.0 + plasma * plasma / (xi * (xi + damping)) + sum(oscillators),
                    )
                }
            }
            Model::TwoPoleSi { eps_inf, eps_0, omega_uv } => {
                let r = xi / omega_uv;
                Permittivity::Finite(eps_inf + (eps_0 - eps_inf) / (1.0 + r * r))
            }
            Model::OscillatorSum { oscillators } => Permittivity::Finite(1.0 + sum(oscillators)),
            Model::Constant { value } => Permittivity::Finite(*value),
            Model::PerfectConductor => Permittivity::PerfectConductor,
        })
    }

    fn validate(&self) -> Result<(), MaterialError> {
        let bad = |reason: &str| {
            Err(MaterialError::Invalid { name: self.name.clone(), reason: reason.to_string() })
        };
        let osc_ok = |o: &[Oscillator]| {
            o.iter().all(|o| o.omega > 0.0 && o.strength >= 0.0 && o.width >= 0.0)
        };
        match &self.model {
            Model::DrudeLorentz { plasma, damping, oscillators } => {
                if !(*plasma > 0.0 && *damping >= 0.0) || !osc_ok(oscillators) {
                    return bad("parameters must be positive");
                }
            }
            Model::TwoPoleSi { eps_inf, eps_0, omega_uv } => {
                if !(*eps_inf >= 1.0 && eps_0 >= eps_inf && *omega_uv > 0.0) {
                    return bad("need 1 <= eps_inf <= eps_0 and omega_uv > 0");
                }
            }
            Model::OscillatorSum { oscillators } => {
                if !osc_ok(oscillators) {
                    return bad("parameters must be positive");
                }
            }
            Model::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return bad("value must be positive and finite");
                }
            }
            Model::PerfectConductor => {}
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    version: u32,
    #[serde(default)]
    material: Vec<Material>,
}

/// A named collection of materials.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialLibrary {
    materials: Vec<Material>,
}

impl MaterialLibrary {
    pub fn builtin() -> MaterialLibrary {
        MaterialLibrary::parse(BUILTIN).expect("built-in material file is valid")
    }

    pub fn parse(text: &str) -> Result<MaterialLibrary, MaterialError> {
        let file: MaterialFile =
            toml::from_str(text).map_err(|e| MaterialError::Parse(e.to_string()))?;
        if file.version != 1 {
            return Err(MaterialError::Parse(format!("unsupported version {}", file.version)));
        }
        for m in &file.material {
            m.validate()?;
        }
        Ok(MaterialLibrary { materials: file.material })
    }

    pub fn get(&self, name: &str) -> Option<Material> {
        self.materials.iter().find(|m| m.name == name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.materials.iter().map(|m| m.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::matsubara_term;

    fn eps(m: &Material, xi: f64) -> f64 {
        m.permittivity(xi).unwrap().value()
    }

    #[test]
    fn silicon_limits() {
        let si = Material::si();
        assert_eq!(eps(&si, 0.0), 11.87);
        assert!((eps(&si, 1e6) - 1.035).abs() < 1e-9);
    }

    #[test]
    fn polystyrene_static_value() {
        let expected = 1.0 + 14.6 / 6.35f64.powi(2) + 96.9 / 196.0 + 44.4 / 121.0 + 136.9 / 20.1f64.powi(2);
        let ps = Material::polystyrene();
        assert!((eps(&ps, 0.0) - expected).abs() < 1e-14);
        assert!((eps(&ps, 0.0) - 2.562).abs() < 5e-4);
    }

    #[test]
    fn gold_first_matsubara_and_drude_dominance() {
        let au = Material::au();
        let xi1 = matsubara_term(1, 300.0).unwrap().xi;
        let e = eps(&au, xi1);
        assert!((e / 2.53e3 - 1.0).abs() < 5e-3, "{e}");
        let drude_only = 1.0 + 81.0 / (xi1 * (xi1 + 0.035));
        assert!(((e - drude_only) / e).abs() < 3e-3);
        assert!(au.permittivity(0.0).unwrap().is_perfect_conductor());
    }

    #[test]
    fn negative_frequency_rejected() {
        assert_eq!(
            Material::si().permittivity(-1.0),
            Err(MaterialError::NegativeFrequency(-1.0))
        );
    }

    #[test]
    fn empty_oscillator_sum_is_vacuum() {
        let lib = MaterialLibrary::parse(
            "version = 1\n[[material]]\nname = \"vac\"\nmodel = \"oscillator_sum\"\n",
        )
        .unwrap();
        let vac = lib.get("vac").unwrap();
        for xi in [0.0, 0.3, 40.0] {
            assert_eq!(eps(&vac, xi), 1.0);
        }
    }

    #[test]
    fn unknown_fields_and_models_rejected() {
        let extra = "version = 1\n[[material]]\nname = \"x\"\nmodel = \"constant\"\nvalue = 2.0\ncolour = 1\n";
        assert!(MaterialLibrary::parse(extra).is_err());
        let model = "version = 1\n[[material]]\nname = \"x\"\nmodel = \"plasma\"\n";
        assert!(MaterialLibrary::parse(model).is_err());
    }
}
