//! Surface scattering operator in partial waves, its Neumann series and the
//! direct resummation.
//!
//! Each channel (sphere: l; cylinder: (m, k_z)) carries a 4×4 real block K,
//! a 2×4 detector A and a 4×2 source B. The channel amplitude
//! τ = A (I − K)⁻¹ B is a 2×2 matrix over (TE, TM), i.e. (H, E); its entries
//! reproduce the exact T-matrix divided by the same Bessel factor as in
//! [`crate::sphere_exact`] and [`crate::cylinder_exact`], so the energy is
//! assembled with the same weights. MSE_k replaces (I − K)⁻¹ by Σ_{j≤k} K^j.
//!
//! Derivation note. The surface fields are expanded as ψ = (j_φ, j_z, m_φ, m_z)
//! (cylinder) or as the two tangential components per polarization (sphere).
//! The single-layer operator of a medium with wavenumber p acts on a channel
//! as the average of the inner and outer limits of its field, which for
//! regular and outgoing waves gives the products I·K, I′·K′ and (I·K′ + I′·K)/2
//! at pR. With those, K = 2ℙ(ℂⁱ + ℂᵉ)⁻¹(ℂⁱL_σ − ℂᵉL_0) where ℙ maps
//! (u_E, u_H) → (−u_H, u_E), the source is B = −2ℙ(ℂⁱ + ℂᵉ)⁻¹ℂᵉ n̂ × F, F the
//! incident regular wave, and A projects ψ onto outgoing waves. The
//! normalization of the tangential basis cancels in A(I − K)⁻¹B. The blocks are
//! certified by reproducing the T-matrix in every channel.
//!
//! At κ = 0 only the electric (TM) sector couples to the particle. Static
//! blocks for the gauges C1 and C2 are written in a 2×2 TM basis and padded.

use crate::cylinder_exact::{cylinder_term, CylAmp, CylNode};
use crate::engine::{doubling_sum, matsubara_sum, TermOut};
use crate::error::{CpError, Result};
use crate::materials::{Material, Permittivity};
use crate::quantities::{xi_of_kappa, Configuration, Gauge, Geometry, K_B};
use crate::specfun::{cyl_table, riccati_table, BesselTable};
use crate::sphere_exact::{sphere_channel_weight, start_cutoff, static_sum, ta_bracket};
use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2};
use std::fmt;
use std::sync::Mutex;

/// Partial-wave label of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    Sphere { l: usize },
    Cylinder { m: i64, kz: f64 },
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Sphere { l } => write!(f, "l = {l}"),
            Channel::Cylinder { m, kz } => write!(f, "m = {m}, k_z = {kz:e}"),
        }
    }
}

/// One channel of the surface scattering operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SsoBlock {
    pub channel: Channel,
    pub k: Matrix4<f64>,
    /// I − K, with near-cancelling diagonals formed analytically where the
    /// static limit would otherwise lose them.
    pub i_minus_k: Matrix4<f64>,
    /// Detector rows (TE, TM).
    pub a: Matrix2x4<f64>,
    /// Source columns (TE, TM).
    pub b: Matrix4x2<f64>,
}

impl SsoBlock {
    fn new(channel: Channel, k: Matrix4<f64>, a: Matrix2x4<f64>, b: Matrix4x2<f64>) -> SsoBlock {
        SsoBlock { channel, k, i_minus_k: Matrix4::identity() - k, a, b }
    }

    /// A (I − K)⁻¹ B.
    ///
    /// Entries below the rounding bound of the final product are set to
    /// zero: in C2 a body without contrast has K ≠ 0 and its amplitudes
    /// vanish only through cancellation.
    pub fn resum(&self) -> Option<Matrix2<f64>> {
        let x = self.i_minus_k.lu().solve(&self.b)?;
        let mut t = self.a * x;
        let bound = self.a.abs() * x.abs() * (64.0 * f64::EPSILON);
        for (v, b) in t.iter_mut().zip(bound.iter()) {
            if v.abs() <= *b {
                *v = 0.0;
            }
        }
        t.iter().all(|v| v.is_finite()).then_some(t)
    }

    /// Partial sums A Σ_{j≤k} K^j B for k = 0..=kmax.
    pub fn neumann_partials(&self, kmax: usize) -> Vec<Matrix2<f64>> {
        let mut out = Vec::with_capacity(kmax + 1);
        let mut v = self.b;
        let mut acc = self.a * v;
        out.push(acc);
        for _ in 0..kmax {
            v = self.k * v;
            acc += self.a * v;
            out.push(acc);
        }
        out
    }
}

fn radius2(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (0.5 * tr + s).abs().max((0.5 * tr - s).abs())
    } else {
        det.abs().sqrt()
    }
}

/// Largest eigenvalue modulus of K.
pub fn spectral_radius(block: &SsoBlock) -> f64 {
    let k = &block.k;
    let decoupled = (0..2).all(|i| (2..4).all(|j| k[(i, j)] == 0.0 && k[(j, i)] == 0.0));
    if decoupled {
        let a = k.fixed_view::<2, 2>(0, 0).into_owned();
        let b = k.fixed_view::<2, 2>(2, 2).into_owned();
        return radius2(&a).max(radius2(&b));
    }
    k.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn gauge_factors(gauge: Gauge, eps: f64, mu: f64) -> Result<((f64, f64), (f64, f64), f64, f64)> {
    let (ci, ce) = gauge.coefficients(eps, mu);
    let (se, sh) = (ci.0 + ce.0, ci.1 + ce.1);
    if se == 0.0 || sh == 0.0 || !se.is_finite() || !sh.is_finite() {
        return Err(CpError::Domain(format!(
            "gauge {}: interior plus exterior coefficients must be invertible, got ({se}, {sh})",
            gauge.label()
        )));
    }
    Ok((ci, ce, 1.0 / se, 1.0 / sh))
}

fn static_gauge(gauge: Gauge) -> Result<bool> {
    match gauge {
        Gauge::C1 => Ok(true),
        Gauge::C2 => Ok(false),
        Gauge::Custom { .. } => {
            Err(CpError::Domain("static (n = 0) blocks are available for the gauges C1 and C2 only".into()))
        }
    }
}

fn embed2(k: Matrix2<f64>, at: usize) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    out.fixed_view_mut::<2, 2>(at, at).copy_from(&k);
    out
}

/// Sphere block at κ > 0 from tables at κR (`t0`) and √(εµ)κR (`t1`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn sphere_block_dynamic(
    l: usize,
    t0: &BesselTable,
    t1: &BesselTable,
    eps: f64,
    mu: f64,
    gauge: Gauge,
) -> Result<SsoBlock> {
    let (ci, ce, de, dh) = gauge_factors(gauge, eps, mu)?;
    let es = (eps / mu).sqrt();
    let s1 = t1.products(l);
    let s0 = t0.products(l);
    let (p1s, p2s, ss) = (s1.p1, s1.p2, s1.s);
    let (p10, p20, s0) = (s0.p1, s0.p2, s0.s);
    let g0 = t0.g_i[l];
    let kte = Matrix2::new(
        -2.0 * dh * (ci.1 * -ss - ce.1 * -s0),
        -2.0 * dh * (ci.1 * (-es * p2s) - ce.1 * -p20),
        2.0 * de * (ci.0 * (-p1s / es) - ce.0 * -p10),
        2.0 * de * (ci.0 * -ss - ce.0 * -s0),
    );
    let ktm = Matrix2::new(
        -2.0 * dh * (ci.1 * ss - ce.1 * s0),
        -2.0 * dh * (ci.1 * (-es * p1s) - ce.1 * -p10),
        2.0 * de * (ci.0 * (-p2s / es) - ce.0 * -p20),
        2.0 * de * (ci.0 * ss - ce.0 * s0),
    );
    let k = embed2(kte, 0) + embed2(ktm, 2);
    let b = Matrix4x2::new(
        2.0 * dh * ce.1 * g0, 0.0,
        -2.0 * de * ce.0, 0.0,
        0.0, 2.0 * dh * ce.1,
        0.0, 2.0 * de * ce.0 * g0,
    );
    let a = Matrix2x4::new(
        -1.0, -g0, 0.0, 0.0,
        0.0, 0.0, g0, -1.0,
    );
    Ok(SsoBlock::new(Channel::Sphere { l }, k, a, b))
}

/// Static sphere block. τ_TM is normalized so that the n = 0 energy is
/// −(1/a) Σ_l l τ_TM (R/a)^(2l+1); the TE sector does not couple.
pub(crate) fn sphere_block_static(l: usize, eps: Permittivity, gauge: Gauge) -> Result<SsoBlock> {
    let c1 = static_gauge(gauge)?;
    let lf = l as f64;
    let big_l = 2.0 * lf + 1.0;
    let (kt, bt, at) = match (c1, eps) {
        (true, Permittivity::PerfectConductor) => (
            Matrix2::new(0.0, 1.0 / big_l, 0.0, 1.0 / big_l),
            [1.0, 2.0 * (lf + 1.0)],
            [lf + 1.0, 0.0],
        ),
        (true, Permittivity::Finite(e)) => (
            Matrix2::new(0.0, (e - 1.0) / big_l, 0.0, (e - 1.0) / ((e + 1.0) * big_l)),
            [1.0, 2.0 * (lf + 1.0) / (e + 1.0)],
            [lf + 1.0, -1.0],
        ),
        (false, eps) => {
            let c = match eps {
                Permittivity::Finite(e) => 2.0 * lf * (lf + 1.0) / (big_l * e),
                Permittivity::PerfectConductor => 0.0,
            };
            (Matrix2::new(1.0 / big_l, -2.0 / big_l, c, 1.0 / big_l), [2.0, 0.0], [lf + 1.0, -1.0])
        }
    };
    let k = embed2(kt, 2);
    let b = Matrix4x2::new(0.0, 0.0, 0.0, 0.0, 0.0, bt[0], 0.0, bt[1]);
    let a = Matrix2x4::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, at[0], at[1]);
    Ok(SsoBlock::new(Channel::Sphere { l }, k, a, b))
}

/// SSO block of a sphere of radius R in channel l.
pub fn sso_block_sphere(l: usize, kappa: f64, eps: Permittivity, mu: f64, radius: f64, gauge: Gauge) -> Result<SsoBlock> {
    if l == 0 {
        return Err(CpError::Domain("multipole order must be at least 1".into()));
    }
    if !(kappa >= 0.0) || !(radius > 0.0) || !(mu > 0.0) {
        return Err(CpError::Domain(format!("need κ ≥ 0, R > 0, µ > 0 (κ = {kappa}, R = {radius}, µ = {mu})")));
    }
    if kappa == 0.0 {
        return sphere_block_static(l, eps, gauge);
    }
    let e = finite_eps(eps)?;
    let t0 = riccati_table(l, kappa * radius)?;
    let t1 = riccati_table(l, (e * mu).sqrt() * kappa * radius)?;
    sphere_block_dynamic(l, &t0, &t1, e, mu, gauge)
}

fn finite_eps(eps: Permittivity) -> Result<f64> {
    match eps {
        Permittivity::Finite(e) if e > 0.0 => Ok(e),
        Permittivity::Finite(e) => Err(CpError::Domain(format!("permittivity must be positive, got {e}"))),
        Permittivity::PerfectConductor => {
            Err(CpError::Domain("a perfect conductor is only defined at κ = 0".into()))
        }
    }
}

/// Single-layer operator of one medium in a cylinder channel, rows n̂ × Φ
/// over ψ = (j_φ, j_z, m_φ, m_z).
#[allow(clippy::too_many_arguments)]
fn cyl_layer(m: f64, kz: f64, kappa: f64, eps: f64, mu: f64, p: f64, radius: f64, t: &BesselTable, am: usize) -> Matrix4<f64> {
    let pr = t.products(am);
    let (p1, p2, s) = (pr.p1, pr.p2, pr.s);
    let r = radius;
    let km = kz * m;
    let cross = (p1 * km * km - r * r * p2 * eps * mu * kappa * kappa * p * p) / (r * kappa * p * p);
    Matrix4::new(
        p1 * km / (eps * kappa), p1 * p * p * r / (eps * kappa), -p * r * s, 0.0,
        -cross / eps, -p1 * km / (eps * kappa), 2.0 * km * s / p, p * r * s,
        p * r * s, 0.0, p1 * km / (kappa * mu), p1 * p * p * r / (kappa * mu),
        -2.0 * km * s / p, -p * r * s, -cross / mu, -p1 * km / (kappa * mu),
    )
}

fn scale_rows(x: &mut Matrix4<f64>, e: f64, h: f64) {
    for j in 0..4 {
        x[(0, j)] *= e;
        x[(1, j)] *= e;
        x[(2, j)] *= h;
        x[(3, j)] *= h;
    }
}

/// (u_E, u_H) → (−u_H, u_E) on row pairs.
fn apply_p<const C: usize>(x: &nalgebra::SMatrix<f64, 4, C>) -> nalgebra::SMatrix<f64, 4, C> {
    let mut out = nalgebra::SMatrix::<f64, 4, C>::zeros();
    for j in 0..C {
        out[(0, j)] = -x[(2, j)];
        out[(1, j)] = -x[(3, j)];
        out[(2, j)] = x[(0, j)];
        out[(3, j)] = x[(1, j)];
    }
    out
}

/// Cylinder block at κ > 0. `t0` is at p₀R, `t1` at pR, both tabulated to
/// at least |m|.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cylinder_block_dynamic(
    m: i64,
    kz: f64,
    kappa: f64,
    eps: f64,
    mu: f64,
    radius: f64,
    t0: &BesselTable,
    t1: &BesselTable,
    gauge: Gauge,
) -> Result<SsoBlock> {
    let (ci, ce, de, dh) = gauge_factors(gauge, eps, mu)?;
    let am = m.unsigned_abs() as usize;
    let mf = m as f64;
    let p0 = t0.x / radius;
    let p = t1.x / radius;
    let mut ls = cyl_layer(mf, kz, kappa, eps, mu, p, radius, t1, am);
    let mut l0 = cyl_layer(mf, kz, kappa, 1.0, 1.0, p0, radius, t0, am);
    scale_rows(&mut ls, ci.0, ci.1);
    scale_rows(&mut l0, ce.0, ce.1);
    let mut x = ls - l0;
    scale_rows(&mut x, de, dh);
    let k = apply_p(&x) * 2.0;
    // Incident regular wave divided by I_m(p₀R); columns (TE, TM), rows
    // (E_φ, E_z, H_φ, H_z).
    let gi = t0.g_i[am];
    let q = mf * kz / (kappa * radius);
    let f = [[-p0 * gi, -q], [0.0, -p0 * p0 / kappa], [q, -p0 * gi], [p0 * p0 / kappa, 0.0]];
    // n̂ × (E, H) = (−E_z, E_φ, −H_z, H_φ).
    let mut g = Matrix4x2::zeros();
    for c in 0..2 {
        g[(0, c)] = -f[1][c];
        g[(1, c)] = f[0][c];
        g[(2, c)] = -f[3][c];
        g[(3, c)] = f[2][c];
    }
    for c in 0..2 {
        g[(0, c)] *= ce.0 * de;
        g[(1, c)] *= ce.0 * de;
        g[(2, c)] *= ce.1 * dh;
        g[(3, c)] *= ce.1 * dh;
    }
    let b = apply_p(&g) * -2.0;
    let kmp = kz * mf / (p0 * p0);
    let a = Matrix2x4::new(
        -gi * kappa * radius / p0, 0.0, -kmp, -radius,
        kmp, radius, -gi * kappa * radius / p0, 0.0,
    );
    Ok(SsoBlock::new(Channel::Cylinder { m, kz }, k, a, b))
}

/// Static cylinder block (κ = 0, k_z > 0) in the TM basis, divided by I_m(k_zR)².
pub(crate) fn cylinder_block_static(m: i64, kz: f64, eps: Permittivity, radius: f64, t0: &BesselTable, gauge: Gauge) -> Result<SsoBlock> {
    let c1 = static_gauge(gauge)?;
    let am = m.unsigned_abs() as usize;
    let r = radius;
    let k = kz;
    let u = t0.x;
    let mf = m as f64;
    let h = (k * k + mf * mf / (r * r)).sqrt();
    let pr = t0.products(am);
    let gi = t0.g_i[am];
    let q = u * pr.p1 * gi;
    let (kt, imk, at, bt) = if c1 {
        let (f, one_minus_f, a0) = match eps {
            Permittivity::Finite(e) => ((e - 1.0) / (e + 1.0), 2.0 / (e + 1.0), -2.0 * r * gi / (h * (e + 1.0))),
            Permittivity::PerfectConductor => (1.0, 0.0, 0.0),
        };
        let c = -2.0 * f * r * k * k * pr.p2 / (h * h);
        (
            Matrix2::new(f * (1.0 - 2.0 * q), 0.0, c, 0.0),
            Matrix2::new(one_minus_f + 2.0 * f * q, 0.0, -c, 1.0),
            [a0, r * h / k],
            [-k * h, -k * k * gi / h],
        )
    } else {
        let off = match eps {
            Permittivity::Finite(e) => 2.0 * pr.p1 * r * h * h / e,
            Permittivity::PerfectConductor => 0.0,
        };
        let c = 2.0 * r * k * k * pr.p2 / (h * h);
        (
            Matrix2::new(1.0 - 2.0 * q, off, c, 1.0 - 2.0 * q),
            Matrix2::new(2.0 * q, -off, -c, 2.0 * q),
            [-r * gi / h, r * h / k],
            [0.0, -2.0 * k * k * gi / h],
        )
    };
    let mut i_minus_k = Matrix4::identity();
    i_minus_k.fixed_view_mut::<2, 2>(0, 0).copy_from(&imk);
    Ok(SsoBlock {
        channel: Channel::Cylinder { m, kz },
        k: embed2(kt, 0),
        i_minus_k,
        a: Matrix2x4::new(0.0, 0.0, 0.0, 0.0, at[0], at[1], 0.0, 0.0),
        b: Matrix4x2::new(0.0, bt[0], 0.0, bt[1], 0.0, 0.0, 0.0, 0.0),
    })
}

/// Largest eigenvalue of a static m = 0 cylinder block in the limit k_z → 0.
fn cylinder_static_endpoint(m: i64, eps: Permittivity, gauge: Gauge) -> f64 {
    if m != 0 {
        return 0.0;
    }
    match (gauge, eps) {
        (Gauge::C1, Permittivity::Finite(e)) => (e - 1.0) / (e + 1.0),
        _ => 1.0,
    }
}

/// SSO block of a cylinder of radius R in channel (m, k_z).
pub fn sso_block_cylinder(m: i64, kz: f64, kappa: f64, eps: Permittivity, mu: f64, radius: f64, gauge: Gauge) -> Result<SsoBlock> {
    if !(kappa >= 0.0) || !kz.is_finite() || !(radius > 0.0) || !(mu > 0.0) {
        return Err(CpError::Domain(format!("need κ ≥ 0, finite k_z, R > 0, µ > 0 (κ = {kappa}, k_z = {kz})")));
    }
    let am = m.unsigned_abs() as usize;
    if kappa == 0.0 {
        if kz == 0.0 {
            return Err(CpError::Domain("(κ, k_z) = (0, 0) is not a channel".into()));
        }
        let t0 = cyl_table(am, kz.abs() * radius)?;
        return cylinder_block_static(m, kz.abs(), eps, radius, &t0, gauge);
    }
    let e = finite_eps(eps)?;
    let p0 = kappa.hypot(kz);
    let p = ((e * mu).sqrt() * kappa).hypot(kz);
    let t0 = cyl_table(am, p0 * radius)?;
    let t1 = cyl_table(am, p * radius)?;
    cylinder_block_dynamic(m, kz, kappa, e, mu, radius, &t0, &t1, gauge)
}

/// What `mse_energy` does when a channel's spectral radius reaches the guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuardPolicy {
    /// Fail with [`CpError::SpectralGuard`].
    #[default]
    Refuse,
    /// Use the resummed amplitude for every order in that channel.
    Resum,
}

/// MSE partial energies of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MseEnergy {
    /// MSE_0..=MSE_k (eV).
    pub partials: Vec<f64>,
    /// A (I − K)⁻¹ B summed over channels (eV).
    pub resummed: f64,
    pub n_matsubara: usize,
    pub channel_max: usize,
    pub converged: bool,
    /// Channels that were routed to the direct solve.
    pub guard_fallbacks: usize,
    /// Largest spectral radius met in any retained channel.
    pub max_spectral_radius: f64,
}

#[derive(Default)]
struct GuardLog {
    trips: usize,
    radius: f64,
}

struct Pass<'a> {
    cfg: &'a Configuration,
    /// Number of Neumann orders, `None` for the resummed energy alone.
    kmax: Option<usize>,
    policy: GuardPolicy,
    log: Mutex<GuardLog>,
}

impl Pass<'_> {
    fn ncomp(&self) -> usize {
        self.kmax.map_or(1, |k| k + 2)
    }

    /// Channel amplitudes for every component: orders 0..=kmax then the
    /// resummed value.
    fn amplitudes(&self, n: usize, block: &SsoBlock, endpoint: f64) -> Result<Vec<Matrix2<f64>>> {
        let resummed = block.resum().ok_or_else(|| CpError::Singular { n, channel: block.channel.to_string() })?;
        let Some(kmax) = self.kmax else {
            return Ok(vec![resummed]);
        };
        let rho = spectral_radius(block).max(endpoint);
        let guard = self.cfg.tolerances.spectral_guard;
        {
            let mut log = self.log.lock().expect("guard log");
            log.radius = log.radius.max(rho);
            if rho >= guard {
                if self.policy == GuardPolicy::Refuse {
                    return Err(CpError::SpectralGuard { n, channel: block.channel.to_string(), radius: rho, guard });
                }
                log.trips += 1;
                return Ok(vec![resummed; kmax + 2]);
            }
        }
        let mut out = block.neumann_partials(kmax);
        out.push(resummed);
        Ok(out)
    }

    fn run(&self) -> Result<(Vec<f64>, crate::engine::SumReport)> {
        let cfg = self.cfg;
        cfg.validate()?;
        let report = match cfg.geometry {
            Geometry::Sphere => self.sphere()?,
            Geometry::Cylinder => self.cylinder()?,
        };
        Ok((report.values.clone(), report))
    }

    fn sphere(&self) -> Result<crate::engine::SumReport> {
        let cfg = self.cfg;
        let r = cfg.radius;
        let a = cfg.a();
        let mu = cfg.mu;
        let tol = &cfg.tolerances;
        let nc = self.ncomp();
        let start = start_cutoff(r, cfg.distance);
        matsubara_sum(cfg, K_B * cfg.temperature * cfg.alpha / (a * a), |mt, eps| {
            if mt.n == 0 {
                let (s, l) = static_sum(r, a, 1e-3 * tol.channel_rel_tol, tol.channel_cap, |l| {
                    let block = sphere_block_static(l, eps, cfg.gauge)?;
                    Ok(self.amplitudes(0, &block, 0.0)?.iter().map(|t| t[(1, 1)]).collect())
                })?;
                return Ok(TermOut { values: s, channels: l });
            }
            let kappa = mt.kappa;
            let e = finite_eps(eps)?;
            let (v, l) = doubling_sum(start, tol.channel_cap, tol.channel_rel_tol, "sphere multipole sum", |l2| {
                let t0 = riccati_table(l2, kappa * r)?;
                let t1 = riccati_table(l2, (e * mu).sqrt() * kappa * r)?;
                let ta = riccati_table(l2, kappa * a)?;
                let mut half = vec![0.0; nc];
                let mut full = vec![0.0; nc];
                for l in 1..=l2 {
                    let block = sphere_block_dynamic(l, &t0, &t1, e, mu, cfg.gauge)?;
                    let w = sphere_channel_weight(l, kappa, a, &t0, &ta);
                    let br = ta_bracket(l, kappa * a, &ta);
                    for (f, t) in full.iter_mut().zip(self.amplitudes(mt.n, &block, 0.0)?) {
                        *f += w * (t[(0, 0)] - t[(1, 1)] * br);
                    }
                    if l == l2 / 2 {
                        half.clone_from(&full);
                    }
                }
                if full.iter().any(|v| !v.is_finite()) {
                    return Err(CpError::NonFinite { n: mt.n, channel: format!("l ≤ {l2}") });
                }
                Ok((half, full))
            })?;
            Ok(TermOut { values: v, channels: l })
        })
    }

    fn cylinder(&self) -> Result<crate::engine::SumReport> {
        let cfg = self.cfg;
        let nc = self.ncomp();
        matsubara_sum(cfg, K_B * cfg.temperature * cfg.alpha, |mt, eps| {
            cylinder_term(cfg, mt, eps, nc, |node: &CylNode, m, out: &mut [CylAmp]| {
                let mi = m as i64;
                let (block, endpoint) = if node.kappa == 0.0 {
                    let b = cylinder_block_static(mi, node.kz, node.eps, node.radius, &node.t0, cfg.gauge)?;
                    (b, cylinder_static_endpoint(mi, node.eps, cfg.gauge))
                } else {
                    let e = finite_eps(node.eps)?;
                    let t1 = node.t1.as_ref().expect("dielectric node has interior table");
                    let b = cylinder_block_dynamic(mi, node.kz, node.kappa, e, node.mu, node.radius, &node.t0, t1, cfg.gauge)?;
                    (b, 0.0)
                };
                for (o, t) in out.iter_mut().zip(self.amplitudes(mt.n, &block, endpoint)?) {
                    *o = CylAmp { ee: t[(1, 1)], hh: t[(0, 0)], eh: 0.5 * (t[(0, 1)] - t[(1, 0)]) };
                }
                Ok(())
            })
        })
    }
}

/// MSE_0..=MSE_k energies and the resummed energy from one pass.
///
/// Channels whose spectral radius reaches the guard either abort the pass or,
/// with [`GuardPolicy::Resum`], contribute their resummed amplitude to every
/// order.
pub fn mse_energy(cfg: &Configuration, k: usize, policy: GuardPolicy) -> Result<MseEnergy> {
    let pass = Pass { cfg, kmax: Some(k), policy, log: Mutex::new(GuardLog::default()) };
    let (values, report) = pass.run()?;
    let log = pass.log.into_inner().expect("guard log");
    Ok(MseEnergy {
        partials: values[..=k].to_vec(),
        resummed: values[k + 1],
        n_matsubara: report.n_matsubara,
        channel_max: report.channel_max,
        converged: report.converged,
        guard_fallbacks: log.trips,
        max_spectral_radius: log.radius,
    })
}

/// Energy from the direct solve of (I − K) x = B in every channel.
pub fn resummed_energy(cfg: &Configuration) -> Result<crate::sphere_exact::ExactEnergy> {
    let pass = Pass { cfg, kmax: None, policy: GuardPolicy::Resum, log: Mutex::new(GuardLog::default()) };
    let (values, report) = pass.run()?;
    Ok(crate::sphere_exact::ExactEnergy {
        energy: values[0],
        channel_max: report.channel_max,
        n_matsubara: report.n_matsubara,
        converged: report.converged,
    })
}

/// Largest spectral radius in one channel at wavenumber κ.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPoint {
    pub kappa: f64,
    pub channel: Channel,
    pub radius: f64,
}

/// k_z grid for cylinder scans: 0 and 48 log-spaced values from 10⁻⁴ to 10 µm⁻¹.
pub fn default_kz_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..48).map(|i| 10f64.powf(-4.0 + 5.0 * i as f64 / 47.0)));
    g
}

/// Spectral radius of a channel at wavenumber κ > 0, with ε taken from the
/// material at ξ = ħcκ. For the cylinder the largest value over `kz_grid` is
/// reported together with the k_z where it occurs.
pub fn spectrum_point(
    geometry: Geometry,
    material: &Material,
    mu: f64,
    radius: f64,
    gauge: Gauge,
    index: i64,
    kappa: f64,
    kz_grid: &[f64],
) -> Result<SpectrumPoint> {
    if !(kappa > 0.0) {
        return Err(CpError::Domain(format!("spectrum scans need κ > 0, got {kappa}")));
    }
    let eps = material.permittivity(xi_of_kappa(kappa))?;
    match geometry {
        Geometry::Sphere => {
            if index < 1 {
                return Err(CpError::Domain(format!("sphere channel l must be at least 1, got {index}")));
            }
            let l = index as usize;
            let b = sso_block_sphere(l, kappa, eps, mu, radius, gauge)?;
            Ok(SpectrumPoint { kappa, channel: b.channel, radius: spectral_radius(&b) })
        }
        Geometry::Cylinder => {
            let mut best = SpectrumPoint { kappa, channel: Channel::Cylinder { m: index, kz: 0.0 }, radius: -1.0 };
            for &kz in kz_grid {
                let b = sso_block_cylinder(index, kz, kappa, eps, mu, radius, gauge)?;
                let rho = spectral_radius(&b);
                if rho > best.radius {
                    best = SpectrumPoint { kappa, channel: b.channel, radius: rho };
                }
            }
            if best.radius < 0.0 {
                return Err(CpError::Domain("empty k_z grid".into()));
            }
            Ok(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylinder_exact::cyl_t_block;
    use crate::sphere_exact::{mie_block, mie_block_static};

    const GAUGES: [Gauge; 2] = [Gauge::C1, Gauge::C2];

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn sphere_blocks_reproduce_mie() {
        for (l, kappa, e) in [(1, 0.8232, 11.87), (4, 0.05, 2.56), (9, 1.7, 2530.0), (30, 0.3, 11.0)] {
            let eps = Permittivity::Finite(e);
            let mie = mie_block(l, kappa, eps, 1.0, 30.0).unwrap();
            for g in GAUGES {
                let t = sso_block_sphere(l, kappa, eps, 1.0, 30.0, g).unwrap().resum().unwrap();
                assert!(rel(t[(0, 0)], mie.t_hh_reduced) < 1e-10, "{l} {g:?} {} {}", t[(0, 0)], mie.t_hh_reduced);
                assert!(rel(t[(1, 1)], mie.t_ee_reduced) < 1e-10, "{l} {g:?}");
                assert_eq!((t[(0, 1)], t[(1, 0)]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn static_sphere_blocks_match_tau_hat() {
        for eps in [Permittivity::Finite(11.87), Permittivity::Finite(1.3), Permittivity::PerfectConductor] {
            for l in [1, 2, 6] {
                let want = crate::sphere_exact::static_tau_hat(l, eps);
                let _ = mie_block_static(l, eps, 1.0).unwrap();
                for g in GAUGES {
                    let t = sphere_block_static(l, eps, g).unwrap().resum().unwrap();
                    assert!(rel(t[(1, 1)], want) < 1e-13, "{l} {g:?} {eps:?}");
                }
            }
        }
    }

    #[test]
    fn cylinder_blocks_reproduce_t_matrix() {
        let cases = [(1, 1.0 / 30.0, 1.0 / 30.0, 11.87), (2, 0.05, 0.02, 11.87), (0, 0.05, 0.02, 11.87), (3, -0.04, 0.03, 2.5), (1, 0.02, 0.05, 100.0), (7, 0.4, 0.9, 2530.0)];
        for (m, kz, kappa, e) in cases {
            let eps = Permittivity::Finite(e);
            let t = cyl_t_block(m, kz, kappa, eps, 1.0, 30.0).unwrap();
            for g in GAUGES {
                let s = sso_block_cylinder(m, kz, kappa, eps, 1.0, 30.0, g).unwrap().resum().unwrap();
                assert!(rel(s[(1, 1)], t.t_ee_reduced) < 1e-9, "EE {m} {g:?} {} {}", s[(1, 1)], t.t_ee_reduced);
                assert!(rel(s[(0, 0)], t.t_hh_reduced) < 1e-9, "HH {m} {g:?}");
                if m != 0 {
                    assert!(rel(s[(0, 1)], t.t_eh_reduced) < 1e-9, "EH {m} {g:?} {} {}", s[(0, 1)], t.t_eh_reduced);
                    assert!(rel(s[(1, 0)], -t.t_eh_reduced) < 1e-9, "HE {m} {g:?}");
                }
            }
        }
    }

    #[test]
    fn static_cylinder_blocks_reproduce_t_matrix() {
        for eps in [Permittivity::Finite(11.87), Permittivity::Finite(2.56), Permittivity::PerfectConductor] {
            for (m, kz) in [(0, 0.03), (2, 0.05), (0, 0.001), (5, 0.2)] {
                let t = cyl_t_block(m, kz, 0.0, eps, 1.0, 30.0).unwrap();
                for g in GAUGES {
                    let s = sso_block_cylinder(m, kz, 0.0, eps, 1.0, 30.0, g).unwrap().resum().unwrap();
                    assert!(rel(s[(1, 1)], t.t_ee_reduced) < 1e-10, "{m} {kz} {g:?} {eps:?}");
                }
            }
        }
    }

    #[test]
    fn c1_without_contrast_is_zero() {
        let vac = Permittivity::Finite(1.0);
        let s = sso_block_sphere(3, 0.4, vac, 1.0, 30.0, Gauge::C1).unwrap();
        assert_eq!(s.k, Matrix4::zeros());
        let c = sso_block_cylinder(2, 0.1, 0.4, vac, 1.0, 30.0, Gauge::C1).unwrap();
        assert_eq!(c.k, Matrix4::zeros());
        let c2 = sso_block_sphere(3, 0.4, vac, 1.0, 30.0, Gauge::C2).unwrap();
        assert!(c2.k.norm() > 0.1);
        assert!(c2.resum().unwrap().norm() < 1e-14);
    }

    #[test]
    fn spectral_radius_of_zero_block() {
        let b = sso_block_sphere(2, 0.4, Permittivity::Finite(1.0), 1.0, 30.0, Gauge::C1).unwrap();
        assert_eq!(spectral_radius(&b), 0.0);
    }

    #[test]
    fn neumann_partials_approach_resummed() {
        let b = sso_block_cylinder(1, 0.05, 0.8, Permittivity::Finite(11.87), 1.0, 30.0, Gauge::C1).unwrap();
        let rho = spectral_radius(&b);
        assert!(rho < 1.0);
        let full = b.resum().unwrap();
        let parts = b.neumann_partials(60);
        let err: Vec<f64> = parts.iter().map(|p| (p - full).norm()).collect();
        assert!(err[60] < err[10] && err[10] < err[0]);
        assert!(err[60] <= err[0] * rho.powi(40) * 1e3 + 1e-15);
    }

    #[test]
    fn invalid_custom_gauge_rejected() {
        let g = Gauge::Custom { interior: (1.0, 0.0), exterior: (-1.0, 1.0) };
        assert!(sso_block_sphere(1, 0.5, Permittivity::Finite(2.0), 1.0, 30.0, g).is_err());
    }
}
