use serde::{Deserialize, Serialize};

use super::{bfgs, differential_evolution, BfgsOptions, Bounds, DeConfig, Observer, OptResult, StopReason, TraceEntry};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DinoConfig {
    /// Half-width of the search box around the start, per parameter.
    pub radius: Vec<f64>,
    pub de: DeConfig,
    pub bfgs: BfgsOptions,
}

impl Default for DinoConfig {
    fn default() -> Self {
        DinoConfig {
            radius: vec![20.0, 20.0, 20.0, 15.0, 15.0, 15.0],
            de: DeConfig::default(),
            bfgs: BfgsOptions { grad_step: vec![0.5], gtol: 1e-5, xtol: 1e-3, max_iter: 30 },
        }
    }
}

/// Truncated differential evolution in a box around `init`, then BFGS from
/// the best member. Never returns a point worse than `init`.
pub fn dino(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    init: &[f64],
    cfg: &DinoConfig,
    observer: &mut dyn Observer,
) -> Result<OptResult> {
    let bounds = Bounds::around(init, &cfg.radius)?;
    let f_init = f(init);
    let f_init = if f_init.is_finite() { f_init } else { f64::INFINITY };

    let mut best = (init.to_vec(), f_init);
    let mut trace = vec![TraceEntry { iteration: 0, x: init.to_vec(), f: f_init, evaluations: 1 }];
    let mut offset = 1;
    let mut cancelled = !observer.observe(&trace[0]);

    // Forwards best-so-far entries, renumbered across both stages.
    let mut relay = |stage: &TraceEntry, best: &mut (Vec<f64>, f64), offset: usize, trace: &mut Vec<TraceEntry>| {
        if stage.f < best.1 {
            *best = (stage.x.clone(), stage.f);
        }
        let entry = TraceEntry {
            iteration: trace.len(),
            x: best.0.clone(),
            f: best.1,
            evaluations: offset + stage.evaluations,
        };
        let go = observer.observe(&entry);
        trace.push(entry);
        go
    };

    let mut de_out = None;
    if !cancelled {
        let mut seen = Vec::new();
        let r = differential_evolution(f, &bounds, &cfg.de, &mut |e: &TraceEntry| {
            seen.push(e.clone());
            true
        })?;
        for e in &seen {
            cancelled |= !relay(e, &mut best, offset, &mut trace);
        }
        offset += r.evaluations;
        de_out = Some(r);
    }

    let mut non_finite = de_out.as_ref().map_or(0, |r| r.non_finite);
    let mut stop = StopReason::Cancelled;
    if !cancelled && best.1.is_finite() {
        let start = best.0.clone();
        let mut seen = Vec::new();
        let r = bfgs(f, &start, &cfg.bfgs, &mut |e: &TraceEntry| {
            seen.push(e.clone());
            true
        })?;
        // The BFGS start repeats the DE best, so skip its first entry.
        for e in seen.iter().skip(1) {
            relay(e, &mut best, offset, &mut trace);
        }
        offset += r.evaluations;
        non_finite += r.non_finite;
        stop = r.stop;
    }

    Ok(OptResult { x: best.0, f: best.1, evaluations: offset, non_finite, trace, stop })
}
