//! Shared Matsubara loop for the energy routines.

use crate::error::{CpError, Result};
use crate::materials::Permittivity;
use crate::quantities::{matsubara_term, primed_sum_batched, Configuration, MatsubaraTerm, PrimedSum};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Mutex;

/// Output of one Matsubara term.
pub(crate) struct TermOut {
    pub values: Vec<f64>,
    /// Largest partial-wave index retained.
    pub channels: usize,
}

/// Summed energies plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SumReport {
    pub values: Vec<f64>,
    pub n_matsubara: usize,
    pub channel_max: usize,
    pub converged: bool,
    pub tail_estimate: f64,
}

/// Primed sum over Matsubara terms, evaluating each batch in parallel.
///
/// `term` receives the frequency data and the body permittivity; `scale`
/// multiplies the final sums.
pub(crate) fn matsubara_sum<F>(cfg: &Configuration, scale: f64, term: F) -> Result<SumReport>
where
    F: Fn(MatsubaraTerm, Permittivity) -> Result<TermOut> + Sync,
{
    let tol = &cfg.tolerances;
    let channels: Mutex<BTreeMap<usize, usize>> = Mutex::new(BTreeMap::new());
    let batch = rayon::current_num_threads().max(1);
    let eval = |n: usize| -> Result<Vec<f64>> {
        let mt = matsubara_term(n, cfg.temperature)?;
        let eps = cfg.material.permittivity(mt.xi)?;
        let out = term(mt, eps)?;
        channels.lock().expect("channel map").insert(n, out.channels);
        Ok(out.values)
    };
    let sum: PrimedSum = primed_sum_batched(
        |range| {
            let results: Vec<Result<Vec<f64>>> = range.into_par_iter().map(eval).collect();
            results.into_iter().collect::<Result<Vec<_>>>()
        },
        tol.matsubara_rel_tol,
        tol.matsubara_n_max,
        batch,
    )
    .map_err(|e: CpError| e)?;
    let map = channels.into_inner().expect("channel map");
    let channel_max = map.range(..sum.terms).map(|(_, c)| *c).max().unwrap_or(0);
    Ok(SumReport {
        values: sum.values.iter().map(|v| v * scale).collect(),
        n_matsubara: sum.terms,
        channel_max,
        converged: sum.termination == crate::quantities::Termination::Converged,
        tail_estimate: sum.tail_estimate * scale.abs(),
    })
}

/// Partial-wave sum with doubling: `terms(lmax)` returns the per-order
/// contributions for orders up to `lmax` (already tabulated); the sum is
/// accepted once doubling the cutoff changes every component by less than
/// `rel_tol` relative.
pub(crate) fn doubling_sum<F>(
    start: usize,
    cap: usize,
    rel_tol: f64,
    what: &'static str,
    mut partial: F,
) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(usize) -> Result<(Vec<f64>, Vec<f64>)>,
{
    // `partial(l2)` returns (sum up to l2/2, sum up to l2).
    let mut l = start.max(2);
    loop {
        let l2 = 2 * l;
        let (half, full) = partial(l2)?;
        let scale = full.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ok = half
            .iter()
            .zip(&full)
            .all(|(h, f)| (f - h).abs() <= rel_tol * scale.max(f64::MIN_POSITIVE));
        if ok {
            return Ok((full, l2));
        }
        if l2 >= cap {
            return Err(CpError::NotConverged {
                what,
                detail: format!("cutoff {l2} reached, last change {:e}", max_rel(&half, &full)),
            });
        }
        l = l2;
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if *y != 0.0 { ((x - y) / y).abs() } else { (x - y).abs() })
        .fold(0.0, f64::max)
}
