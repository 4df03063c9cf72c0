//! Modified Bessel functions of real positive argument.
//!
//! Everything is carried in log form: `ln_i`, `ln_k` plus the logarithmic
//! derivatives `g_i = I'/I` and `g_k = K'/K`. First-kind ratios come from a
//! downward recurrence, third-kind ratios from an upward recurrence seeded by
//! closed forms (spherical) or by Temme's series and Steed's continued
//! fraction for K₀, K₁ (cylindrical).
//!
//! Two spherical normalizations appear. [`riccati_ik`] follows Abramowitz and
//! Stegun, 𝓚₀(x) = (π/2)e^(−x), with Wronskian −π/2. The tables used by the
//! physics modules ([`riccati_table`]) drop the π/2, so 𝓚₀(x) = e^(−x) and the
//! Wronskian is −1; this is the normalization in which the sphere energy and
//! Mie coefficients are written.

use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("argument must be positive and finite, got {0}")]
    Domain(f64),
    #[error("continued fraction for K at x = {0} did not converge")]
    NoConvergence(f64),
}

/// Log-form table of a Bessel family for orders 0..=n at one argument.
#[derive(Debug, Clone, PartialEq)]
pub struct BesselTable {
    pub x: f64,
    pub ln_i: Vec<f64>,
    pub g_i: Vec<f64>,
    pub ln_k: Vec<f64>,
    pub g_k: Vec<f64>,
    wronskian_unit: Wronskian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Wronskian {
    /// 𝓘𝓚′ − 𝓘′𝓚 = −1.
    Riccati,
    /// I K′ − I′ K = −1/x.
    Cylinder,
}

/// Products of first and third kind functions at a common argument.
///
/// `p1 = I·K`, `p2 = I′·K′`, `s = (I·K′ + I′·K)/2`. These are free of
/// exponential factors and stay O(1) across the whole parameter range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Products {
    pub p1: f64,
    pub p2: f64,
    pub s: f64,
}

impl BesselTable {
    pub fn max_order(&self) -> usize {
        self.ln_i.len() - 1
    }

    /// I·K, I′·K′ and the symmetric cross product, computed from the
    /// logarithmic derivatives and the Wronskian so no exponentials appear.
    pub fn products(&self, n: usize) -> Products {
        let gi = self.g_i[n];
        let gk = self.g_k[n];
        let unit = match self.wronskian_unit {
            Wronskian::Riccati => 1.0,
            Wronskian::Cylinder => 1.0 / self.x,
        };
        let p1 = unit / (gi - gk);
        Products { p1, p2: gi * gk * p1, s: 0.5 * (gi + gk) * p1 }
    }
}

fn check_arg(x: f64) -> Result<(), SpecError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SpecError::Domain(x))
    }
}

fn start_order(n: usize, x: f64) -> usize {
    let m = (n as f64).max(x);
    (m + 60.0 + 2.0 * m.sqrt()).ceil() as usize
}

/// Riccati functions 𝓘_l = x·i_l and 𝓚_l for l = 0..=lmax, normalized so
/// that 𝓚₀ = e^(−x) and 𝓘𝓚′ − 𝓘′𝓚 = −1.
pub fn riccati_table(lmax: usize, x: f64) -> Result<BesselTable, SpecError> {
    check_arg(x)?;
    let n_start = start_order(lmax, x);
    // r_l = 𝓘_l/𝓘_{l-1}, from 𝓘_{l-1} − 𝓘_{l+1} = (2l+1)/x 𝓘_l.
    let mut r = vec![0.0; lmax + 1];
    let mut rr = x / (2.0 * n_start as f64 + 3.0);
    for l in (1..=n_start).rev() {
        rr = 1.0 / ((2 * l + 1) as f64 / x + rr);
        if l <= lmax {
            r[l] = rr;
        }
    }
    let mut ln_i = vec![0.0; lmax + 1];
    let mut g_i = vec![0.0; lmax + 1];
    // ln sinh x without overflow.
    ln_i[0] = x + (-(-2.0 * x).exp_m1() / 2.0).ln();
    g_i[0] = 1.0 / x.tanh();
    for l in 1..=lmax {
        ln_i[l] = ln_i[l - 1] + r[l].ln();
        g_i[l] = 1.0 / r[l] - l as f64 / x;
    }
    let mut ln_k = vec![0.0; lmax + 1];
    let mut g_k = vec![0.0; lmax + 1];
    // q_l = 𝓚_l/𝓚_{l-1}; 𝓚_{-1} = 𝓚₀ gives q₀ = 1.
    let mut q = 1.0;
    ln_k[0] = -x;
    g_k[0] = -1.0;
    for l in 1..=lmax {
        q = (2 * l - 1) as f64 / x + 1.0 / q;
        ln_k[l] = ln_k[l - 1] + q.ln();
        g_k[l] = -1.0 / q - l as f64 / x;
    }
    Ok(BesselTable { x, ln_i, g_i, ln_k, g_k, wronskian_unit: Wronskian::Riccati })
}

/// K₀(x)e^x and K₁(x)e^x.
///
/// Temme's series for x ≤ 2, Steed's continued fraction above.
pub fn k01_scaled(x: f64) -> Result<(f64, f64), SpecError> {
    check_arg(x)?;
    const EPS: f64 = 1e-17;
    if x <= 2.0 {
        let x2 = 0.5 * x;
        let mut ff = -EULER_GAMMA - x2.ln();
        let mut p = 0.5;
        let mut q = 0.5;
        let mut c = 1.0;
        let d = x2 * x2;
        let mut sum = ff;
        let mut sum1 = p;
        for i in 1..500 {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi);
            c *= d / fi;
            p /= fi;
            q /= fi;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                let e = x.exp();
                return Ok((sum * e, sum1 * 2.0 / x * e));
            }
        }
        Err(SpecError::NoConvergence(x))
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..100_000 {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                let k0 = (PI / (2.0 * x)).sqrt() / s;
                let k1 = k0 * (x + 0.5 - a1 * h) / x;
                return Ok((k0, k1));
            }
        }
        Err(SpecError::NoConvergence(x))
    }
}

/// Cylinder functions I_m, K_m for m = 0..=mmax in log form.
pub fn cyl_table(mmax: usize, x: f64) -> Result<BesselTable, SpecError> {
    check_arg(x)?;
    let n_start = start_order(mmax.max(1), x);
    // r_m = I_m/I_{m-1}, from I_{m-1} − I_{m+1} = (2m/x) I_m.
    let mut r = vec![0.0; mmax.max(1) + 1];
    let mut rr = x / (2.0 * (n_start as f64 + 1.0));
    for m in (1..=n_start).rev() {
        rr = 1.0 / (2.0 * m as f64 / x + rr);
        if m < r.len() {
            r[m] = rr;
        }
    }
    let (k0s, k1s) = k01_scaled(x)?;
    let mut ln_i = vec![0.0; mmax + 1];
    let mut g_i = vec![0.0; mmax + 1];
    let mut ln_k = vec![0.0; mmax + 1];
    let mut g_k = vec![0.0; mmax + 1];
    // Wronskian I₀K₁ + I₁K₀ = 1/x fixes I₀.
    ln_i[0] = x - (x * (k1s + r[1] * k0s)).ln();
    g_i[0] = r[1];
    ln_k[0] = k0s.ln() - x;
    let mut q = k1s / k0s;
    g_k[0] = -q;
    for m in 1..=mmax {
        let fm = m as f64;
        ln_i[m] = ln_i[m - 1] + r[m].ln();
        g_i[m] = 1.0 / r[m] - fm / x;
        if m > 1 {
            q = 2.0 * (fm - 1.0) / x + 1.0 / q;
        }
        ln_k[m] = ln_k[m - 1] + q.ln();
        g_k[m] = -1.0 / q - fm / x;
    }
    Ok(BesselTable { x, ln_i, g_i, ln_k, g_k, wronskian_unit: Wronskian::Cylinder })
}

/// Riccati pair 𝓘_l, 𝓚_l in the Abramowitz–Stegun normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiPair {
    pub l: usize,
    pub x: f64,
    pub ln_i: f64,
    pub ln_k: f64,
    pub g_i: f64,
    pub g_k: f64,
}

/// Cylinder pair I_m, K_m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylBesselPair {
    pub m: i64,
    pub x: f64,
    pub ln_i: f64,
    pub ln_k: f64,
    pub g_i: f64,
    pub g_k: f64,
}

macro_rules! pair_accessors {
    ($t:ty) => {
        impl $t {
            /// First kind value; infinite when not representable.
            pub fn i(&self) -> f64 {
                self.ln_i.exp()
            }
            pub fn di(&self) -> f64 {
                self.g_i * self.i()
            }
            /// Third kind value; infinite when not representable.
            pub fn k(&self) -> f64 {
                self.ln_k.exp()
            }
            pub fn dk(&self) -> f64 {
                self.g_k * self.k()
            }
            /// e^(−x) times the first kind value.
            pub fn i_scaled(&self) -> f64 {
                (self.ln_i - self.x).exp()
            }
            /// e^(x) times the third kind value.
            pub fn k_scaled(&self) -> f64 {
                (self.ln_k + self.x).exp()
            }
            /// True when all four unscaled values are finite and nonzero.
            pub fn representable(&self) -> bool {
                let ok = |v: f64| v.is_finite() && v != 0.0;
                ok(self.i()) && ok(self.k()) && ok(self.di()) && ok(self.dk())
            }
            /// I K′ − I′ K evaluated in log form.
            pub fn wronskian(&self) -> f64 {
                (self.ln_i + self.ln_k).exp() * (self.g_k - self.g_i)
            }
        }
    };
}

pair_accessors!(RiccatiPair);
pair_accessors!(CylBesselPair);

/// 𝓘_l(x) = x·i_l(x) and 𝓚_l(x) = x·k_l(x), k_l(x) = √(π/(2x)) K_{l+1/2}(x).
pub fn riccati_ik(l: usize, x: f64) -> Result<RiccatiPair, SpecError> {
    let t = riccati_table(l, x)?;
    Ok(RiccatiPair {
        l,
        x,
        ln_i: t.ln_i[l],
        ln_k: t.ln_k[l] + FRAC_PI_2.ln(),
        g_i: t.g_i[l],
        g_k: t.g_k[l],
    })
}

/// I_m(x), K_m(x) and derivatives for any integer m.
pub fn cyl_ik(m: i64, x: f64) -> Result<CylBesselPair, SpecError> {
    let n = m.unsigned_abs() as usize;
    let t = cyl_table(n, x)?;
    Ok(CylBesselPair { m, x, ln_i: t.ln_i[n], ln_k: t.ln_k[n], g_i: t.g_i[n], g_k: t.g_k[n] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn spherical_closed_forms() {
        for x in [0.01, 0.3, 2.0, 17.0, 300.0] {
            let p = riccati_ik(0, x).unwrap();
            assert!(rel(p.ln_i, x.sinh().ln()) < 1e-13 || (p.ln_i - x.sinh().ln()).abs() < 1e-13);
            assert!((p.ln_k - (FRAC_PI_2.ln() - x)).abs() < 1e-14);
            assert!(rel(p.wronskian(), -FRAC_PI_2) < 1e-12);
        }
    }

    #[test]
    fn k0_k1_reference_values() {
        // K₀(1) e, K₁(1) e and K₀(5) e^5, K₁(5) e^5.
        let (a, b) = k01_scaled(1.0).unwrap();
        assert!(rel(a, 0.421_024_438_240_708_3 * 1f64.exp()) < 1e-14);
        assert!(rel(b, 0.601_907_230_197_234_6 * 1f64.exp()) < 1e-14);
        let (c, d) = k01_scaled(5.0).unwrap();
        assert!(rel(c, 0.547_807_564_313_519_0) < 1e-13);
        assert!(rel(d, 0.600_273_858_788_312_6) < 1e-13);
    }

    #[test]
    fn k0_small_argument_asymptote() {
        let x = 1e-6;
        let p = cyl_ik(0, x).unwrap();
        assert!(rel(p.k(), -(x / 2.0).ln() - EULER_GAMMA) < 1e-10);
        assert!(rel(p.i(), 1.0) < 1e-11);
    }

    #[test]
    fn negative_order_symmetry() {
        let a = cyl_ik(4, 2.5).unwrap();
        let b = cyl_ik(-4, 2.5).unwrap();
        assert_eq!((a.ln_i, a.ln_k), (b.ln_i, b.ln_k));
    }

    #[test]
    fn products_match_exponentials() {
        let t = cyl_table(6, 3.3).unwrap();
        let p = t.products(6);
        let direct = (t.ln_i[6] + t.ln_k[6]).exp();
        assert!(rel(p.p1, direct) < 1e-13);
        let t = riccati_table(9, 0.7).unwrap();
        let p = t.products(9);
        assert!(rel(p.p1, (t.ln_i[9] + t.ln_k[9]).exp()) < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(riccati_ik(1, 0.0).is_err());
        assert!(cyl_ik(1, -1.0).is_err());
        assert!(cyl_ik(1, f64::NAN).is_err());
    }
}
