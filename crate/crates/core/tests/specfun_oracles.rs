//! Bessel values against 40-digit references.

use cpmse::specfun::{cyl_ik, riccati_ik};

// (order, x, ln I, ln K, I'/I, K'/K)
const CYL: [(i64, f64, f64, f64, f64, f64); 9] = [
    (0, 1e-3, 2.4999998437500175e-7, 1.9492885501921987, 0.00049999993750001043, -142.3747928689575),
    (0, 0.5, 0.061549719185481304, -0.078589769869081417, 0.24249961258080195, -1.7918725084322202),
    (1, 1.0, -0.57064798749083128, -0.50765194821075233, 1.2401937238700897, -1.6994839355937723),
    (3, 2.5, -0.74576680934435345, -1.3159210962788395, 1.4908637726946418, -1.6528259272474973),
    (10, 0.7, -25.591502615974118, 22.593301982398225, 14.317502989783828, -14.324537265375779),
    (25, 40.0, 29.571897603810827, -34.118817252811115, 1.1702793827232846, -1.1882545118637974),
    (60, 150.0, 134.69206034377962, -140.47005153989347, 1.0741580286029785, -1.0799051346755304),
    (0, 700.0, 695.80569999844345, -703.04992725894391, 0.99928545881842609, -1.0007140309758653),
    (200, 5.0, -679.9427486829643, 673.95097172567505, 40.012435896938255, -40.012560821974459),
];

// Riccati functions with 𝓚₀ = (π/2)e^(−x).
const RICCATI: [(usize, f64, f64, f64, f64, f64); 8] = [
    (0, 1e-2, -4.6051535193769799, 0.44158270528945486, 100.00333331111132, -1.0),
    (1, 0.3, -3.4975694379911434, 1.6179197740828819, 6.7265129954380292, -3.5641025641025642),
    (2, 1.0, -2.6371789131320262, 1.3974928543447682, 3.1406468257332285, -2.2857142857142857),
    (5, 4.0, -0.33900572736161098, -0.43537953006198209, 1.7855838486569123, -1.6218789352555474),
    (20, 3.0, -34.660384425977862, 32.48638866368982, 7.0694458015059567, -6.7431161932703569),
    (40, 100.0, 91.175475462774819, -91.492979126955609, 1.0796015591645369, -1.0781923673601789),
    (100, 10.0, -202.67409367638301, 200.12003006500515, 10.149143270456338, -10.050123730498286),
    (3, 500.0, 499.29484084365669, -499.53642931849518, 1.0000240478542657, -1.0000239518577217),
];

fn close_log(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-12 * want.abs().max(1.0)
}

fn close_rel(got: f64, want: f64) -> bool {
    ((got - want) / want).abs() <= 1e-11
}

#[test]
fn cylinder_functions_match_references() {
    for (m, x, li, lk, gi, gk) in CYL {
        let p = cyl_ik(m, x).unwrap();
        assert!(close_log(p.ln_i, li), "ln I_{m}({x}) = {} vs {li}", p.ln_i);
        assert!(close_log(p.ln_k, lk), "ln K_{m}({x}) = {} vs {lk}", p.ln_k);
        assert!(close_rel(p.g_i, gi), "I'/I {m} {x}: {} vs {gi}", p.g_i);
        assert!(close_rel(p.g_k, gk), "K'/K {m} {x}: {} vs {gk}", p.g_k);
    }
}

#[test]
fn riccati_functions_match_references() {
    for (l, x, li, lk, gi, gk) in RICCATI {
        let p = riccati_ik(l, x).unwrap();
        assert!(close_log(p.ln_i, li), "ln 𝓘_{l}({x}) = {} vs {li}", p.ln_i);
        assert!(close_log(p.ln_k, lk), "ln 𝓚_{l}({x}) = {} vs {lk}", p.ln_k);
        assert!(close_rel(p.g_i, gi), "𝓘'/𝓘 {l} {x}: {} vs {gi}", p.g_i);
        assert!(close_rel(p.g_k, gk), "𝓚'/𝓚 {l} {x}: {} vs {gk}", p.g_k);
    }
}
