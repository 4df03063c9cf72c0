//! Exact T-matrix energies: reference amplitudes, quadrature stability and
//! the cylinder/sphere proximity limit.

use cpmse::cylinder_exact::{cp_energy_cylinder_exact, cyl_t_block};
use cpmse::sphere_exact::{cp_energy_sphere_exact, mie_block};
use cpmse::{Configuration, Geometry, Material, Permittivity};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn mie_coefficients_match_references() {
    // (l, κR, ε, T^EE, T^HH) with 𝓚₀ = e^(−x), from 40-digit arithmetic.
    let cases = [
        (1, 1.5, 11.87, 2.0959778387218588347, -1.0242669961841147017),
        (3, 0.2, 2.56, 4.3570338058185440728e-9, -8.0658617177918713868e-12),
        (10, 25.0, 3000.0, 3.2810303121236100077e19, -3.2435970240446606636e19),
    ];
    for (l, x, e, ee, hh) in cases {
        let b = mie_block(l, x / 30.0, Permittivity::Finite(e), 1.0, 30.0).unwrap();
        assert!(rel(b.t_ee(), ee) < 1e-11, "l={l}: {} vs {ee}", b.t_ee());
        assert!(rel(b.t_hh(), hh) < 1e-11, "l={l}: {} vs {hh}", b.t_hh());
    }
}

#[test]
fn cylinder_block_matches_reference() {
    // ε = 11.87, m = 1, κR = k_zR = 1.
    let r = 30.0;
    let b = cyl_t_block(1, 1.0 / r, 1.0 / r, Permittivity::Finite(11.87), 1.0, r).unwrap();
    assert!(rel(b.t_ee(), -1.6466479560377722963) < 1e-12, "{}", b.t_ee());
    assert!(rel(b.t_hh(), 0.93348354644929296726) < 1e-12, "{}", b.t_hh());
    assert!(rel(b.t_eh(), 0.3978249804929194787) < 1e-12, "{}", b.t_eh());
}

#[test]
fn cylinder_quadrature_is_stable_under_refinement() {
    for (mat, d) in [(Material::si(), 0.1), (Material::au(), 1.0)] {
        let c = Configuration::new(Geometry::Cylinder, mat, d);
        let coarse = cp_energy_cylinder_exact(&c).unwrap().energy;
        let mut fine = c.clone();
        fine.tolerances.quadrature_start_nodes *= 2;
        fine.tolerances.quadrature_max_nodes *= 2;
        let fine = cp_energy_cylinder_exact(&fine).unwrap().energy;
        assert!(rel(coarse, fine) < 1e-8, "{} {d}: {coarse} {fine}", c.material.name);
    }
}

#[test]
fn cylinder_and_sphere_agree_at_short_distance() {
    // Both bodies look like a plane from close by; the ratio tends to 1.
    let ratio = |d: f64| {
        let s = cp_energy_sphere_exact(&Configuration::new(Geometry::Sphere, Material::si(), d)).unwrap().energy;
        let c = cp_energy_cylinder_exact(&Configuration::new(Geometry::Cylinder, Material::si(), d)).unwrap().energy;
        c / s
    };
    let (far, near) = (ratio(0.1), ratio(0.01));
    assert!((near - 1.0).abs() < (far - 1.0).abs(), "{far} {near}");
    assert!((near - 1.0).abs() < 0.01, "{near}");
}

#[test]
fn metallic_cylinder_has_finite_energy() {
    let e = cp_energy_cylinder_exact(&Configuration::new(Geometry::Cylinder, Material::au(), 0.3)).unwrap();
    assert!(e.converged && e.energy < 0.0 && e.energy.is_finite());
}
