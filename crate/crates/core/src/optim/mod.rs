//! Derivative-free and quasi-Newton minimisers over `R^n`.
//!
//! Objectives are plain `Fn(&[f64]) -> f64`. A non-finite value is treated as
//! `+inf`, so a degenerate candidate is rejected rather than aborting a run.

mod bfgs;
mod de;
mod dino;
mod powell;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bfgs::{bfgs, BfgsOptions};
pub use de::{differential_evolution, DeConfig};
pub use dino::{dino, DinoConfig};
pub use powell::{powell, PowellOptions};

/// Per-parameter box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("bounds need matching, non-empty lo and hi"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::invalid("every bound must satisfy lo < hi"));
        }
        Ok(Bounds { lo, hi })
    }

    /// `center +- radius` per parameter.
    pub fn around(center: &[f64], radius: &[f64]) -> Result<Self> {
        if center.len() != radius.len() {
            return Err(Error::invalid("center and radius lengths differ"));
        }
        Bounds::new(
            center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Best point known after one iteration (a generation for DE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    GradientTolerance,
    StepTolerance,
    FunctionTolerance,
    LineSearchFailed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// Objective calls that returned a non-finite value.
    pub non_finite: usize,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
}

/// Sees every trace entry as it is produced; returning `false` stops the run
/// at the next iteration boundary.
pub trait Observer {
    fn observe(&mut self, entry: &TraceEntry) -> bool;
}

impl Observer for () {
    fn observe(&mut self, _: &TraceEntry) -> bool {
        true
    }
}

impl<F: FnMut(&TraceEntry) -> bool> Observer for F {
    fn observe(&mut self, entry: &TraceEntry) -> bool {
        self(entry)
    }
}

/// Counting, sanitising wrapper around an objective.
pub(crate) struct Counted<'a> {
    f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    calls: AtomicUsize,
    bad: AtomicUsize,
}

impl<'a> Counted<'a> {
    pub(crate) fn new(f: &'a (dyn Fn(&[f64]) -> f64 + Sync)) -> Self {
        Counted { f, calls: AtomicUsize::new(0), bad: AtomicUsize::new(0) }
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            self.bad.fetch_add(1, Ordering::Relaxed);
            f64::INFINITY
        }
    }

    pub(crate) fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub(crate) fn bad(&self) -> usize {
        self.bad.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Returns the initial point untouched.
    None,
    De,
    Bfgs,
    Powell,
    Dino,
}

impl OptimizerKind {
    pub fn id(self) -> &'static str {
        match self {
            OptimizerKind::None => "none",
            OptimizerKind::De => "de",
            OptimizerKind::Bfgs => "bfgs",
            OptimizerKind::Powell => "powell",
            OptimizerKind::Dino => "dino",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OptimizerKind::None),
            "de" => Ok(OptimizerKind::De),
            "bfgs" => Ok(OptimizerKind::Bfgs),
            "powell" => Ok(OptimizerKind::Powell),
            "dino" => Ok(OptimizerKind::Dino),
            other => {
                Err(Error::config(format!("unknown optimizer '{other}' (expected de, bfgs, powell, dino or none)")))
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod testfns {
    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    /// `sin(5 x0) + 0.1 x0^2` plus a convex bowl in the other coordinates.
    pub fn wavy(x: &[f64]) -> f64 {
        (5.0 * x[0]).sin() + 0.1 * x[0] * x[0] + x[1..].iter().map(|v| v * v).sum::<f64>()
    }
}
