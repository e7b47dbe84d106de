use serde::{Deserialize, Serialize};

use super::{Counted, Observer, OptResult, StopReason, TraceEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    /// Central-difference step per parameter; a single value applies to all.
    pub grad_step: Vec<f64>,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    /// Stop when the largest accepted step component falls below this.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_step: vec![1e-6], gtol: 1e-8, xtol: 1e-12, max_iter: 200 }
    }
}

impl BfgsOptions {
    fn step(&self, i: usize) -> f64 {
        *self.grad_step.get(i).unwrap_or(&self.grad_step[0])
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const CURVATURE_GUARD: f64 = 1e-10;

/// Quasi-Newton minimisation from `x0` with finite-difference gradients.
pub fn bfgs(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    opts: &BfgsOptions,
    observer: &mut dyn Observer,
) -> Result<OptResult> {
    let n = x0.len();
    if n == 0 || opts.grad_step.is_empty() || opts.grad_step.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::config("bfgs needs a non-empty start and positive gradient steps"));
    }
    let f = Counted::new(f);
    let mut x = x0.to_vec();
    let mut fx = f.eval(&x);
    if !fx.is_finite() {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let mut g = gradient(&f, &x, opts);
    let mut h = identity(n);
    let mut trace = vec![TraceEntry { iteration: 0, x: x.clone(), f: fx, evaluations: f.calls() }];
    let mut stop = if observer.observe(&trace[0]) { StopReason::MaxIterations } else { StopReason::Cancelled };

    for iteration in 1..=opts.max_iter {
        if stop == StopReason::Cancelled {
            break;
        }
        if norm_inf(&g) <= opts.gtol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut p = matvec(&h, &g).iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            // Lost descent; fall back to steepest descent.
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = dot(&g, &p);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let fnew = f.eval(&xn);
            if fnew.is_finite() && fnew <= fx + ARMIJO_C1 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gn = gradient(&f, &xn, opts);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > CURVATURE_GUARD {
            update_inverse_hessian(&mut h, &s, &y, ys);
            debug_assert!(cholesky_ok(&h), "inverse Hessian lost positive definiteness");
        }
        x = xn;
        fx = fnew;
        g = gn;
        let entry = TraceEntry { iteration, x: x.clone(), f: fx, evaluations: f.calls() };
        if !observer.observe(&entry) {
            stop = StopReason::Cancelled;
        }
        trace.push(entry);
        if stop != StopReason::Cancelled && norm_inf(&s) <= opts.xtol {
            stop = StopReason::StepTolerance;
            break;
        }
    }

    Ok(OptResult { x, f: fx, evaluations: f.calls(), non_finite: f.bad(), trace, stop })
}

fn gradient(f: &Counted<'_>, x: &[f64], opts: &BfgsOptions) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = opts.step(i);
            probe[i] = x[i] + h;
            let up = f.eval(&probe);
            probe[i] = x[i] - h;
            let down = f.eval(&probe);
            probe[i] = x[i];
            let d = (up - down) / (2.0 * h);
            // An infinite side gives no usable slope information.
            if d.is_finite() {
                d
            } else {
                0.0
            }
        })
        .collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    // Keep exact symmetry against rounding drift.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = m;
            h[j][i] = m;
        }
    }
}

pub(crate) fn cholesky_ok(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
