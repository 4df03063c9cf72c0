//! Mie coefficients at imaginary frequency and the exact sphere energy.
//!
//! Riccati functions are normalized with 𝓚₀(x) = e^(−x). In this convention
//! the static dipole coefficient of a perfect conductor is 2/3 and the
//! energy reads
//!
//! E = (k_BT α/a²) Σ′ₙ κₙ Σ_l (2l+1) [T^HH 𝓚_l²(κa) − T^EE (𝓚′_l²(κa) + l(l+1)𝓚_l²(κa)/(κa)²)].
//!
//! Mie coefficients grow like e^(2κR), so blocks are stored divided by
//! 𝓘_l(κR)², which is the factor the energy multiplies back together with
//! 𝓚_l(κa)².

use crate::engine::{doubling_sum, matsubara_sum, TermOut};
use crate::error::{CpError, Result};
use crate::materials::Permittivity;
use crate::quantities::{Configuration, Geometry, K_B};
use crate::specfun::{riccati_table, BesselTable};

/// Mie coefficients of one multipole order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MieBlock {
    pub l: usize,
    /// T^EE / 𝓘_l(κR)².
    pub t_ee_reduced: f64,
    /// T^HH / 𝓘_l(κR)².
    pub t_hh_reduced: f64,
    /// ln 𝓘_l(κR).
    pub ln_i0: f64,
}

impl MieBlock {
    pub fn t_ee(&self) -> f64 {
        unreduce(self.t_ee_reduced, self.ln_i0)
    }

    pub fn t_hh(&self) -> f64 {
        unreduce(self.t_hh_reduced, self.ln_i0)
    }

    /// Polarization mixing vanishes for a sphere.
    pub fn t_eh(&self) -> f64 {
        0.0
    }
}

// Keeps an exact zero when 𝓘² overflows.
fn unreduce(t: f64, ln_i: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * (2.0 * ln_i).exp()
    }
}

/// Reduced Mie pair (T^EE, T^HH)/𝓘₀² from tabulated log-derivatives.
///
/// `t0` is at κR, `t1` at √(εµ)κR.
pub(crate) fn mie_reduced(l: usize, t0: &BesselTable, t1: Option<&BesselTable>, eps: Permittivity, mu: f64) -> (f64, f64) {
    let gi0 = t0.g_i[l];
    let gk0 = t0.g_k[l];
    // 1/(𝓘𝓚) from the Wronskian.
    let inv_p1 = gi0 - gk0;
    match (eps, t1) {
        (Permittivity::Finite(e), Some(t1)) => {
            let gi1 = t1.g_i[l];
            let ratio = |r: f64| (r * gi0 - gi1) / (gi1 - r * gk0);
            let ee = inv_p1 * ratio((e / mu).sqrt());
            let hh = inv_p1 * ratio((mu / e).sqrt());
            (ee, hh)
        }
        _ => {
            // ε → ∞: T^EE = −𝓘′/𝓚′, T^HH = −𝓘/𝓚.
            (-inv_p1 * gi0 / gk0, -inv_p1)
        }
    }
}

/// Mie coefficients T^EE_l, T^HH_l at wavenumber κ > 0.
pub fn mie_block(l: usize, kappa: f64, eps: Permittivity, mu: f64, radius: f64) -> Result<MieBlock> {
    if l == 0 {
        return Err(CpError::Domain("multipole order must be at least 1".into()));
    }
    if !(kappa > 0.0) || !(radius > 0.0) || !(mu > 0.0) {
        return Err(CpError::Domain(format!("need κ, R, µ > 0 (κ = {kappa}, R = {radius}, µ = {mu})")));
    }
    let x0 = kappa * radius;
    let t0 = riccati_table(l, x0)?;
    let t1 = match eps {
        Permittivity::Finite(e) => {
            if !(e > 0.0) {
                return Err(CpError::Domain(format!("permittivity must be positive, got {e}")));
            }
            Some(riccati_table(l, (e * mu).sqrt() * x0)?)
        }
        Permittivity::PerfectConductor => None,
    };
    let (ee, hh) = mie_reduced(l, &t0, t1.as_ref(), eps, mu);
    if !(ee.is_finite() && hh.is_finite()) {
        return Err(CpError::NonFinite { n: 0, channel: format!("l = {l}, κR = {x0}") });
    }
    Ok(MieBlock { l, t_ee_reduced: ee, t_hh_reduced: hh, ln_i0: t0.ln_i[l] })
}

/// Leading small-κ coefficients: T_l ≈ c·(κR)^(2l+1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticMie {
    pub c_ee: f64,
    pub c_hh: f64,
}

fn ln_double_factorial_odd(n: usize) -> f64 {
    // ln((2n−1)!!) for n ≥ 0, with (−1)!! = 1.
    (1..=n).map(|k| ((2 * k - 1) as f64).ln()).sum()
}

/// Static limit of the Mie coefficients.
///
/// With D_l = (2l+1)!!(2l−1)!!, the dielectric values are
/// c_EE = (l+1)(ε−1)/((lε+l+1) D_l) and c_HH the same with µ in place of ε.
/// A perfect conductor gives c_EE = (l+1)/(l D_l) and c_HH = −1/D_l.
pub fn mie_block_static(l: usize, eps: Permittivity, mu: f64) -> Result<StaticMie> {
    if l == 0 {
        return Err(CpError::Domain("multipole order must be at least 1".into()));
    }
    let lf = l as f64;
    let inv_d = (-(ln_double_factorial_odd(l + 1) + ln_double_factorial_odd(l))).exp();
    let coef = |e: f64| (lf + 1.0) * (e - 1.0) / (lf * e + lf + 1.0) * inv_d;
    Ok(match eps {
        Permittivity::Finite(e) => StaticMie { c_ee: coef(e), c_hh: coef(mu) },
        Permittivity::PerfectConductor => StaticMie { c_ee: (lf + 1.0) / lf * inv_d, c_hh: -inv_d },
    })
}

/// τ̂_l = (2l+1)² ((2l−1)!!)² c_EE, the combination entering the n = 0 energy.
pub fn static_tau_hat(l: usize, eps: Permittivity) -> f64 {
    let lf = l as f64;
    let big_l = 2.0 * lf + 1.0;
    match eps {
        Permittivity::Finite(e) => big_l * (lf + 1.0) * (e - 1.0) / (lf * e + lf + 1.0),
        Permittivity::PerfectConductor => big_l * (lf + 1.0) / lf,
    }
}

/// Per-multipole static sum −(1/a) Σ_l l τ_l (R/a)^(2l+1), truncated once the
/// terms fall below `rel_tol` of the running sum. `tau(l)` supplies τ_l.
pub(crate) fn static_sum<F>(radius: f64, a: f64, rel_tol: f64, cap: usize, mut tau: F) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let q = radius / a;
    let ln_q = q.ln();
    let mut sum: Vec<f64> = Vec::new();
    let mut small_run = 0;
    for l in 1..=cap {
        let w = -(l as f64) * ((2 * l + 1) as f64 * ln_q).exp() / a;
        let t = tau(l)?;
        if sum.is_empty() {
            sum = vec![0.0; t.len()];
        }
        let mut small = true;
        for (s, v) in sum.iter_mut().zip(&t) {
            let c = w * v;
            *s += c;
            if c.abs() > rel_tol * s.abs() {
                small = false;
            }
        }
        small_run = if small { small_run + 1 } else { 0 };
        if small_run >= 3 || w == 0.0 {
            return Ok((sum, l));
        }
    }
    Err(CpError::NotConverged { what: "static multipole sum", detail: format!("cap {cap} reached") })
}

/// Starting multipole cutoff 10 + ⌈5√(R/d)⌉.
pub(crate) fn start_cutoff(radius: f64, distance: f64) -> usize {
    10 + (5.0 * (radius / distance).sqrt()).ceil() as usize
}

/// Energy and truncation data of an exact evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEnergy {
    pub energy: f64,
    pub channel_max: usize,
    pub n_matsubara: usize,
    pub converged: bool,
}

/// Exact Casimir–Polder energy (eV) of a particle outside a sphere.
pub fn cp_energy_sphere_exact(cfg: &Configuration) -> Result<ExactEnergy> {
    cfg.validate()?;
    if cfg.geometry != Geometry::Sphere {
        return Err(CpError::Domain("sphere energy requested for a non-sphere configuration".into()));
    }
    let r = cfg.radius;
    let a = cfg.a();
    let mu = cfg.mu;
    let tol = &cfg.tolerances;
    let start = start_cutoff(r, cfg.distance);
    let report = matsubara_sum(cfg, K_B * cfg.temperature * cfg.alpha / (a * a), |mt, eps| {
        if mt.n == 0 {
            let (s, l) = static_sum(r, a, 1e-3 * tol.channel_rel_tol, tol.channel_cap, |l| {
                Ok(vec![static_tau_hat(l, eps)])
            })?;
            return Ok(TermOut { values: s, channels: l });
        }
        let kappa = mt.kappa;
        let e = match eps {
            Permittivity::Finite(e) => e,
            Permittivity::PerfectConductor => {
                return Err(CpError::Domain("perfect conductor at finite frequency".into()))
            }
        };
        let (v, l) = doubling_sum(start, tol.channel_cap, tol.channel_rel_tol, "sphere multipole sum", |l2| {
            let t0 = riccati_table(l2, kappa * r)?;
            let t1 = riccati_table(l2, (e * mu).sqrt() * kappa * r)?;
            let ta = riccati_table(l2, kappa * a)?;
            let mut half = 0.0;
            let mut full = 0.0;
            for l in 1..=l2 {
                let (ee, hh) = mie_reduced(l, &t0, Some(&t1), eps, mu);
                full += sphere_channel_weight(l, kappa, a, &t0, &ta) * (hh - ee * ta_bracket(l, kappa * a, &ta));
                if l == l2 / 2 {
                    half = full;
                }
            }
            if !full.is_finite() {
                return Err(CpError::NonFinite { n: mt.n, channel: format!("l ≤ {l2}") });
            }
            Ok((vec![half], vec![full]))
        })?;
        Ok(TermOut { values: v, channels: l })
    })?;
    Ok(ExactEnergy {
        energy: report.values[0],
        channel_max: report.channel_max,
        n_matsubara: report.n_matsubara,
        converged: report.converged,
    })
}

/// (2l+1) κ 𝓘_l(κR)² 𝓚_l(κa)².
pub(crate) fn sphere_channel_weight(l: usize, kappa: f64, _a: f64, t0: &BesselTable, ta: &BesselTable) -> f64 {
    (2 * l + 1) as f64 * kappa * (2.0 * t0.ln_i[l] + 2.0 * ta.ln_k[l]).exp()
}

/// 𝓚′²/𝓚² + l(l+1)/(κa)² at the particle.
pub(crate) fn ta_bracket(l: usize, xa: f64, ta: &BesselTable) -> f64 {
    let g = ta.g_k[l];
    g * g + (l * (l + 1)) as f64 / (xa * xa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_sphere_does_not_scatter() {
        for (l, k) in [(1, 0.3), (5, 2.0), (40, 17.0)] {
            let b = mie_block(l, k, Permittivity::Finite(1.0), 1.0, 30.0).unwrap();
            assert_eq!((b.t_ee(), b.t_hh()), (0.0, 0.0));
        }
    }

    #[test]
    fn small_sphere_dipole() {
        let b = mie_block(1, 0.01, Permittivity::Finite(11.87), 1.0, 1.0).unwrap();
        let expect = 2.0 / 3.0 * 1e-6 * 10.87 / 13.87;
        assert!((b.t_ee() / expect - 1.0).abs() < 1e-3, "{}", b.t_ee());
        assert!((b.t_ee() - 5.22e-7).abs() < 5e-10);
    }

    #[test]
    fn perfect_conductor_blocks() {
        let x: f64 = 1.0;
        let b = mie_block(1, x, Permittivity::PerfectConductor, 1.0, 1.0).unwrap();
        // 𝓘₁ = cosh x − sinh x / x, 𝓚₁ = e^(−x)(1 + 1/x).
        let i1 = x.cosh() - x.sinh() / x;
        let di1 = x.sinh() - i1 / x;
        let k1 = (-x).exp() * (1.0 + 1.0 / x);
        let dk1 = -(-x).exp() * (1.0 + 1.0 / x + 1.0 / (x * x));
        assert!((b.t_ee() / (-di1 / dk1) - 1.0).abs() < 1e-13);
        assert!((b.t_hh() / (-i1 / k1) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn static_coefficients() {
        let pc = mie_block_static(1, Permittivity::PerfectConductor, 1.0).unwrap();
        assert!((pc.c_ee - 2.0 / 3.0).abs() < 1e-15);
        let vac = mie_block_static(3, Permittivity::Finite(1.0), 1.0).unwrap();
        assert_eq!(vac.c_ee, 0.0);
        // Richardson extrapolation of T/(κR)³ to κR → 0.
        let eps = Permittivity::Finite(11.87);
        let f = |x: f64| mie_block(1, x, eps, 1.0, 1.0).unwrap().t_ee() / x.powi(3);
        let (h, h2) = (1e-3, 5e-4);
        let extrap = (4.0 * f(h2) - f(h)) / 3.0;
        let c = mie_block_static(1, eps, 1.0).unwrap().c_ee;
        assert!((extrap / c - 1.0).abs() < 1e-6, "{extrap} {c}");
    }

    #[test]
    fn tau_hat_matches_coefficient() {
        for l in [1usize, 2, 7] {
            for eps in [Permittivity::Finite(2.5), Permittivity::PerfectConductor] {
                let c = mie_block_static(l, eps, 1.0).unwrap().c_ee;
                let df = ln_double_factorial_odd(l).exp();
                let from_c = ((2 * l + 1) as f64).powi(2) * df * df * c;
                assert!((from_c / static_tau_hat(l, eps) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[cfg(test)]
mod energy_tests {
    use super::*;
    use crate::materials::Material;

    #[test]
    fn silicon_against_prototype() {
        let cfg = Configuration::new(Geometry::Sphere, Material::si(), 0.1);
        let e = cp_energy_sphere_exact(&cfg).unwrap();
        eprintln!("{:?}", e);
        assert!((e.energy / -2.1496576356809296e-4 - 1.0).abs() < 1e-6);
    }
}
