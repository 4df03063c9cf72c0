//! Sweep serialisation: CSV with a provenance header, JSON lines, and a
//! companion plotting script.

use cpmse::pipeline::{SweepMetadata, SweepResult};
use cpmse::{Configuration, Gauge, GuardPolicy};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

pub const CSV_COLUMNS: &str = "d_over_r,order,e_mse,e_exact,ratio,lmax_or_mmax,n_matsubara,flags";

/// 17 significant digits, enough to round-trip any f64.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn policy_label(p: GuardPolicy) -> &'static str {
    match p {
        GuardPolicy::Refuse => "refuse",
        GuardPolicy::Resum => "resum",
    }
}

fn gauge_label(g: &Gauge) -> String {
    match g {
        Gauge::Custom { interior, exterior } => format!(
            "custom(interior={},{};exterior={},{})",
            float(interior.0),
            float(interior.1),
            float(exterior.0),
            float(exterior.1)
        ),
        g => g.label().to_string(),
    }
}

/// Everything that determines the numbers of a sweep, as `key=value` pairs in
/// a fixed order.
pub fn provenance(template: &Configuration, meta: &SweepMetadata, distances: &[f64], orders: &[usize]) -> Vec<(String, String)> {
    let t = &meta.tolerances;
    let list = |v: Vec<String>| v.join(" ");
    vec![
        ("code_version".into(), meta.code_version.to_string()),
        ("geometry".into(), meta.geometry.to_string()),
        ("material".into(), meta.material.clone()),
        ("material_model".into(), format!("{:?}", template.material.model)),
        ("gauge".into(), gauge_label(&template.gauge)),
        ("temperature_k".into(), float(meta.temperature)),
        ("radius_um".into(), float(meta.radius)),
        ("mu".into(), float(meta.mu)),
        ("alpha".into(), float(meta.alpha)),
        ("d_over_r".into(), list(distances.iter().map(|d| float(*d)).collect())),
        ("orders".into(), list(orders.iter().map(|k| k.to_string()).collect())),
        ("matsubara_rel_tol".into(), float(t.matsubara_rel_tol)),
        ("matsubara_n_max".into(), t.matsubara_n_max.to_string()),
        ("channel_rel_tol".into(), float(t.channel_rel_tol)),
        ("channel_cap".into(), t.channel_cap.to_string()),
        ("quadrature_rel_tol".into(), float(t.quadrature_rel_tol)),
        ("quadrature_start_nodes".into(), t.quadrature_start_nodes.to_string()),
        ("quadrature_max_nodes".into(), t.quadrature_max_nodes.to_string()),
        ("spectral_guard".into(), float(t.spectral_guard)),
        ("dual_route_tol".into(), float(meta.dual_route_tol)),
        ("guard_policy".into(), policy_label(meta.policy).into()),
        ("deterministic".into(), t.deterministic.to_string()),
    ]
}

/// SHA-256 over the provenance pairs.
pub fn config_hash(pairs: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in pairs {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Extra header lines that vary between runs (threads, timestamps).
pub struct RunInfo {
    pub threads: usize,
    pub extra: Vec<(String, String)>,
}

pub fn write_csv(result: &SweepResult, pairs: &[(String, String)], info: &RunInfo) -> String {
    let mut out = String::new();
    out.push_str("# cpmse sweep\n");
    for (k, v) in pairs {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# config_hash=sha256:{}", config_hash(pairs));
    let _ = writeln!(out, "# threads={}", info.threads);
    for (k, v) in &info.extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(CSV_COLUMNS);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            float(r.d_over_r),
            r.order,
            float(r.e_mse),
            float(r.e_exact),
            float(r.ratio),
            r.channel_max,
            r.n_matsubara,
            r.flag_string()
        );
    }
    for e in &result.errors {
        let _ = writeln!(out, "# error d_over_r={}: {}", float(e.d_over_r), e.error);
    }
    out
}

pub fn write_json_lines(result: &SweepResult, pairs: &[(String, String)], info: &RunInfo) -> String {
    let mut meta = serde_json::Map::new();
    meta.insert("type".into(), json!("metadata"));
    for (k, v) in pairs {
        meta.insert(k.clone(), json!(v));
    }
    meta.insert("config_hash".into(), json!(format!("sha256:{}", config_hash(pairs))));
    meta.insert("threads".into(), json!(info.threads));
    for (k, v) in &info.extra {
        meta.insert(k.clone(), json!(v));
    }
    let mut out = serde_json::Value::Object(meta).to_string();
    out.push('\n');
    for r in &result.rows {
        let v = json!({
            "type": "row",
            "d_over_r": r.d_over_r,
            "order": r.order,
            "e_mse": r.e_mse,
            "e_exact": r.e_exact,
            "ratio": r.ratio,
            "lmax_or_mmax": r.channel_max,
            "n_matsubara": r.n_matsubara,
            "flags": r.flags.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        });
        out.push_str(&v.to_string());
        out.push('\n');
    }
    for e in &result.errors {
        out.push_str(&json!({"type": "error", "d_over_r": e.d_over_r, "message": e.error.to_string()}).to_string());
        out.push('\n');
    }
    out
}

/// A standalone matplotlib script plotting |MSE_k/exact - 1| against d/R for
/// every order found in a sweep CSV.
pub fn plot_script(csv_hint: &str, title: &str) -> String {
    format!(
        r##"#!/usr/bin/env python3
"""Plot MSE_k / exact from a cpmse sweep CSV.

usage: python3 plot.py [sweep.csv] [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_hint:?}
out = sys.argv[2] if len(sys.argv) > 2 else None

series = defaultdict(list)
with open(path) as fh:
    rows = csv.DictReader(line for line in fh if not line.startswith("#"))
    for row in rows:
        series[int(row["order"])].append((float(row["d_over_r"]), float(row["ratio"])))

fig, (ax_ratio, ax_err) = plt.subplots(1, 2, figsize=(10, 4))
for k in sorted(series):
    pts = sorted(series[k])
    x = [p[0] for p in pts]
    y = [p[1] for p in pts]
    ax_ratio.plot(x, y, marker="o", ms=3, label=f"MSE$_{{{{{{k}}}}}}$")
    ax_err.plot(x, [100 * abs(v - 1) for v in y], marker="o", ms=3, label=f"k={{k}}")
for ax in (ax_ratio, ax_err):
    ax.set_xscale("log")
    ax.set_xlabel("d/R")
    ax.legend()
ax_ratio.axhline(1.0, color="grey", lw=0.5)
ax_ratio.set_ylabel("E_MSE / E_exact")
ax_err.set_yscale("log")
ax_err.set_ylabel("error (%)")
fig.suptitle({title:?})
fig.tight_layout()
if out:
    fig.savefig(out, dpi=150)
else:
    plt.show()
"##
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -2.149657643e-4, 1.0 / 3.0, 5e-324, f64::MAX] {
            let s = float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn hash_depends_on_values() {
        let a = vec![("k".to_string(), "1".to_string())];
        let b = vec![("k".to_string(), "2".to_string())];
        assert_eq!(config_hash(&a).len(), 64);
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
