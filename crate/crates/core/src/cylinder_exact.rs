//! T-matrix of a dielectric cylinder at imaginary frequency and the exact
//! Casimir–Polder energy of a particle outside it.
//!
//! Amplitudes are stored divided by I_m(p₀R)², the factor that the energy
//! multiplies back together with K_m(p₀a)². The energy folds the k_z integral
//! onto k_z ≥ 0 and the multipole sum onto m ≥ 0; the mixing term T^EH is odd
//! in m and in k_z, and its prefactor m·k_z is too, so the fold is exact.

use crate::engine::{matsubara_sum, TermOut};
use crate::error::{CpError, Result};
use crate::materials::Permittivity;
use crate::quantities::{Configuration, Geometry, MatsubaraTerm, K_B};
use crate::specfun::{cyl_table, BesselTable};
use crate::sphere_exact::ExactEnergy;
use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

/// T-matrix elements of one (m, k_z) channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylTBlock {
    pub m: i64,
    pub kz: f64,
    pub kappa: f64,
    /// √(κ² + k_z²).
    pub p0: f64,
    /// √(εµκ² + k_z²); equal to `p0` for a perfect conductor.
    pub p: f64,
    pub upsilon: f64,
    /// Δ₁..Δ₄; zero for a perfect conductor.
    pub delta: [f64; 4],
    /// T^EE / I_m(p₀R)².
    pub t_ee_reduced: f64,
    pub t_hh_reduced: f64,
    pub t_eh_reduced: f64,
    /// ln I_m(p₀R).
    pub ln_i0: f64,
}

fn unreduce(t: f64, ln_i: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * (2.0 * ln_i).exp()
    }
}

impl CylTBlock {
    pub fn t_ee(&self) -> f64 {
        unreduce(self.t_ee_reduced, self.ln_i0)
    }

    pub fn t_hh(&self) -> f64 {
        unreduce(self.t_hh_reduced, self.ln_i0)
    }

    pub fn t_eh(&self) -> f64 {
        unreduce(self.t_eh_reduced, self.ln_i0)
    }

    pub fn t_he(&self) -> f64 {
        -self.t_eh()
    }
}

/// Reduced amplitudes (EE, HH, EH) of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct CylAmp {
    pub ee: f64,
    pub hh: f64,
    pub eh: f64,
}

/// Υ, written without the 1/κ so that it stays finite at κ = 0.
pub(crate) fn upsilon(m: i64, kz: f64, kappa: f64, eps: f64, mu: f64, radius: f64, p0: f64, p: f64) -> f64 {
    let n = (eps * mu).sqrt();
    -(m as f64) * kz * (eps * mu - 1.0) * kappa / (n * radius * radius * p * p * p0 * p0)
}

pub(crate) struct ExactParts {
    pub amp: CylAmp,
    pub upsilon: f64,
    pub delta: [f64; 4],
}

/// Reduced T-matrix from tables at p₀R (`t0`) and pR (`t1`).
///
/// `t1` is ignored for a perfect conductor and may be `None` at κ = 0, where
/// p = p₀.
#[allow(clippy::too_many_arguments)]
pub(crate) fn exact_reduced(
    m: i64,
    kz: f64,
    kappa: f64,
    eps: Permittivity,
    mu: f64,
    radius: f64,
    t0: &BesselTable,
    t1: Option<&BesselTable>,
) -> ExactParts {
    let am = m.unsigned_abs() as usize;
    let p0 = t0.x / radius;
    let u0 = t0.x;
    let gi0 = t0.g_i[am];
    let gk0 = t0.g_k[am];
    // 1/(I K) at p₀R.
    let w = u0 * (gi0 - gk0);
    let e = match eps {
        Permittivity::Finite(e) => e,
        Permittivity::PerfectConductor => {
            let amp = CylAmp { ee: -w, hh: -w * gi0 / gk0, eh: 0.0 };
            return ExactParts { amp, upsilon: 0.0, delta: [0.0; 4] };
        }
    };
    let (u1, gi1) = match t1 {
        Some(t) => (t.x, t.g_i[am]),
        None => (u0, gi0),
    };
    let p = u1 / radius;
    let y = upsilon(m, kz, kappa, e, mu, radius, p0, p);
    let al = gi1 / u1;
    let d1 = al - gk0 / (e * u0);
    let d2 = al - gk0 / (mu * u0);
    let d3 = al - gi0 / (e * u0);
    let d4 = al - gi0 / (mu * u0);
    let y2 = y * y;
    let den = d1 * d2 + y2;
    let ee = -w * (d2 * d3 + y2) / den;
    let hh = -w * (d1 * d4 + y2) / den;
    let he = y * w * w / ((e * mu).sqrt() * u0 * u0 * den);
    ExactParts { amp: CylAmp { ee, hh, eh: -he }, upsilon: y, delta: [d1, d2, d3, d4] }
}

/// T-matrix elements at (m, k_z) and wavenumber κ.
pub fn cyl_t_block(m: i64, kz: f64, kappa: f64, eps: Permittivity, mu: f64, radius: f64) -> Result<CylTBlock> {
    if !(kappa >= 0.0) || !kz.is_finite() || (kappa == 0.0 && kz == 0.0) {
        return Err(CpError::Domain(format!("need κ ≥ 0 and (κ, k_z) ≠ (0, 0), got ({kappa}, {kz})")));
    }
    if !(radius > 0.0) || !(mu > 0.0) {
        return Err(CpError::Domain(format!("need R, µ > 0 (R = {radius}, µ = {mu})")));
    }
    let am = m.unsigned_abs() as usize;
    let p0 = kappa.hypot(kz);
    let t0 = cyl_table(am, p0 * radius)?;
    let (p, t1) = match eps {
        Permittivity::Finite(e) => {
            if !(e > 0.0) {
                return Err(CpError::Domain(format!("permittivity must be positive, got {e}")));
            }
            let p = ((e * mu).sqrt() * kappa).hypot(kz);
            (p, if kappa > 0.0 { Some(cyl_table(am, p * radius)?) } else { None })
        }
        Permittivity::PerfectConductor => (p0, None),
    };
    let parts = exact_reduced(m, kz, kappa, eps, mu, radius, &t0, t1.as_ref());
    let CylAmp { ee, hh, eh } = parts.amp;
    if !(ee.is_finite() && hh.is_finite() && eh.is_finite()) {
        return Err(CpError::NonFinite { n: 0, channel: format!("m = {m}, k_z = {kz}") });
    }
    Ok(CylTBlock {
        m,
        kz,
        kappa,
        p0,
        p,
        upsilon: parts.upsilon,
        delta: parts.delta,
        t_ee_reduced: ee,
        t_hh_reduced: hh,
        t_eh_reduced: eh,
        ln_i0: t0.ln_i[am],
    })
}

/// Wave data at one k_z node, tabulated for m = 0..=mmax.
pub(crate) struct CylNode {
    pub kz: f64,
    pub kappa: f64,
    pub p0: f64,
    pub eps: Permittivity,
    pub mu: f64,
    pub radius: f64,
    /// At p₀R.
    pub t0: BesselTable,
    /// At pR, present for a dielectric at κ > 0.
    pub t1: Option<BesselTable>,
    /// At p₀a.
    pub ta: BesselTable,
}

impl CylNode {
    fn new(mmax: usize, kz: f64, kappa: f64, eps: Permittivity, mu: f64, radius: f64, a: f64) -> Result<CylNode> {
        let p0 = kappa.hypot(kz);
        let t1 = match eps {
            Permittivity::Finite(e) if kappa > 0.0 => {
                let p = ((e * mu).sqrt() * kappa).hypot(kz);
                Some(cyl_table(mmax, p * radius)?)
            }
            _ => None,
        };
        Ok(CylNode {
            kz,
            kappa,
            p0,
            eps,
            mu,
            radius,
            t0: cyl_table(mmax, p0 * radius)?,
            t1,
            ta: cyl_table(mmax, p0 * a)?,
        })
    }
}

/// Energy integrand at one node: Σ_m over m ≥ 0 (m ≠ 0 doubled) of the
/// bracket, reduced amplitudes times I²(p₀R)K²(p₀a). Returns the values and
/// the largest m used.
fn node_value<F>(
    cfg: &Configuration,
    kz: f64,
    kappa: f64,
    eps: Permittivity,
    ncomp: usize,
    m_start: usize,
    chan: &F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&CylNode, usize, &mut [CylAmp]) -> Result<()>,
{
    let tol = &cfg.tolerances;
    let a = cfg.a();
    let mut mmax = m_start.max(8);
    loop {
        let node = CylNode::new(mmax, kz, kappa, eps, cfg.mu, cfg.radius, a)?;
        let p0 = node.p0;
        let xa = p0 * a;
        let mut sum = vec![0.0; ncomp];
        let mut amps = vec![CylAmp::default(); ncomp];
        let mut small = 0;
        for m in 0..=mmax {
            chan(&node, m, &mut amps)?;
            let gka = node.ta.g_k[m];
            let w = (2.0 * node.t0.ln_i[m] + 2.0 * node.ta.ln_k[m]).exp();
            let fm = m as f64;
            let fold = if m == 0 { 1.0 } else { 2.0 };
            let (be, bh, bx) = if kappa > 0.0 {
                let k2 = kappa * kappa;
                (
                    (kz * kz * gka * gka + fm * fm * kz * kz / (xa * xa) + p0 * p0) / k2,
                    gka * gka + fm * fm / (xa * xa),
                    4.0 * fm * kz / (kappa * xa) * gka,
                )
            } else {
                (kz * kz * gka * gka + fm * fm / (a * a) + kz * kz, 0.0, 0.0)
            };
            let mut all_small = true;
            let scale = sum.iter().fold(0.0f64, |s, v: &f64| s.max(v.abs()));
            for (s, amp) in sum.iter_mut().zip(&amps) {
                let c = fold * w * (amp.ee * be - amp.hh * bh + amp.eh * bx);
                if !c.is_finite() {
                    return Err(CpError::NonFinite { n: 0, channel: format!("m = {m}, k_z = {kz}, κ = {kappa}") });
                }
                *s += c;
                if c.abs() > tol.channel_rel_tol * scale.max(s.abs()) {
                    all_small = false;
                }
            }
            // Contributions vanish identically only without contrast.
            if w == 0.0 {
                all_small = true;
            }
            small = if all_small && m >= 2 { small + 1 } else { 0 };
            if small >= 3 {
                return Ok((sum, m));
            }
        }
        if mmax >= tol.channel_cap {
            return Err(CpError::NotConverged {
                what: "cylinder multipole sum",
                detail: format!("m cap {mmax} reached at k_z = {kz}, κ = {kappa}"),
            });
        }
        mmax = (2 * mmax).min(tol.channel_cap);
    }
}

fn gauss_legendre(n: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(n.max(2)).expect("nonzero"))
}

/// k_z integral of one Matsubara term, per component, including the κ²/π
/// prefactor (1/π at n = 0) and the factor 2 from folding k_z.
///
/// Node doubling continues until every component changes by less than the
/// quadrature tolerance.
pub(crate) fn cylinder_term<F>(
    cfg: &Configuration,
    mt: MatsubaraTerm,
    eps: Permittivity,
    ncomp: usize,
    chan: F,
) -> Result<TermOut>
where
    F: Fn(&CylNode, usize, &mut [CylAmp]) -> Result<()> + Sync,
{
    let tol = &cfg.tolerances;
    let d = cfg.distance;
    let a = cfg.a();
    let kappa = mt.kappa;
    let m_start = 10 + (5.0 * (cfg.radius / d).sqrt()).ceil() as usize;
    // Integrand ~ e^(−2p₀d); cut where the exponent has dropped by 40.
    let (tmax, pref) = if kappa > 0.0 {
        ((1.0 + 20.0 / (kappa * d)).acosh(), kappa * kappa / PI)
    } else {
        ((20.0 * a / d).asinh(), 1.0 / PI)
    };
    // v ∈ [0, 1] → (k_z, dk_z/dv). At n = 0 the cubic stretch tames the
    // logarithm of K₀ at k_z → 0.
    let map = |v: f64| -> (f64, f64) {
        if kappa > 0.0 {
            let t = tmax * v;
            (kappa * t.sinh(), kappa * t.cosh() * tmax)
        } else {
            let t = tmax * v * v * v;
            (t.sinh() / a, t.cosh() / a * 3.0 * tmax * v * v)
        }
    };
    let rule = |n: usize| -> Result<(Vec<f64>, usize)> {
        let gl = gauss_legendre(n);
        let pairs = gl.as_node_weight_pairs();
        let vals: Vec<Result<(Vec<f64>, usize, f64)>> = pairs
            .par_iter()
            .map(|&(x, wq)| {
                let v = 0.5 * (x + 1.0);
                let (kz, jac) = map(v);
                let (vals, m) = node_value(cfg, kz, kappa, eps, ncomp, m_start, &chan)?;
                Ok((vals, m, 0.5 * wq * jac))
            })
            .collect();
        let mut total = vec![0.0; ncomp];
        let mut mmax = 0;
        for r in vals {
            let (v, m, w) = r?;
            mmax = mmax.max(m);
            for (t, x) in total.iter_mut().zip(&v) {
                *t += w * x;
            }
        }
        Ok((total.into_iter().map(|t| 2.0 * pref * t).collect(), mmax))
    };
    let mut n = tol.quadrature_start_nodes.max(4);
    let (mut prev, mut mmax) = rule(n)?;
    loop {
        let n2 = 2 * n;
        let (next, m2) = rule(n2)?;
        mmax = mmax.max(m2);
        let scale = next.iter().fold(0.0f64, |s, v: &f64| s.max(v.abs()));
        let change = prev.iter().zip(&next).fold(0.0f64, |s, (p, q)| s.max((p - q).abs()));
        if change <= tol.quadrature_rel_tol * scale {
            return Ok(TermOut { values: next, channels: mmax });
        }
        if n2 >= tol.quadrature_max_nodes {
            return Err(CpError::NotConverged {
                what: "k_z quadrature",
                detail: format!("{n2} nodes at n = {}, last relative change {:e}", mt.n, change / scale),
            });
        }
        n = n2;
        prev = next;
    }
}

/// Exact Casimir–Polder energy (eV) of a particle outside an infinite
/// cylinder.
///
/// For an infinite cylinder the Matsubara sum of the k_z integrals is the
/// interaction energy of the particle itself (not per unit length): the
/// particle is a point, and the k_z integral is its Fourier sum over the
/// translation-invariant axis.
pub fn cp_energy_cylinder_exact(cfg: &Configuration) -> Result<ExactEnergy> {
    cfg.validate()?;
    if cfg.geometry != Geometry::Cylinder {
        return Err(CpError::Domain("cylinder energy requested for a non-cylinder configuration".into()));
    }
    let r = cfg.radius;
    let mu = cfg.mu;
    let report = matsubara_sum(cfg, K_B * cfg.temperature * cfg.alpha, |mt, eps| {
        cylinder_term(cfg, mt, eps, 1, |node, m, out| {
            let parts = exact_reduced(m as i64, node.kz, node.kappa, node.eps, mu, r, &node.t0, node.t1.as_ref());
            out[0] = parts.amp;
            Ok(())
        })
    })?;
    Ok(ExactEnergy {
        energy: report.values[0],
        channel_max: report.channel_max,
        n_matsubara: report.n_matsubara,
        converged: report.converged,
    })
}
