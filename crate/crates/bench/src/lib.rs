//! Shared fixtures for the benchmarks.

use cpmse::{Configuration, Geometry, Material};

/// Si body at R = 30 µm, T = 300 K.
pub fn silicon(geometry: Geometry, d_over_r: f64) -> Configuration {
    Configuration::new(geometry, Material::si(), d_over_r)
}

/// Au body, the case with the largest partial-wave counts.
pub fn gold(geometry: Geometry, d_over_r: f64) -> Configuration {
    Configuration::new(geometry, Material::au(), d_over_r)
}
