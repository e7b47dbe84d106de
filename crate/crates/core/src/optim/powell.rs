use serde::{Deserialize, Serialize};

use super::{Counted, Observer, OptResult, StopReason, TraceEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowellOptions {
    /// Relative tolerance of each line minimisation.
    pub xtol: f64,
    /// Stop when a full sweep lowers f by less than this fraction.
    pub ftol: f64,
    pub max_iter: usize,
    /// Initial trial step along each direction.
    pub initial_step: f64,
}

impl Default for PowellOptions {
    fn default() -> Self {
        PowellOptions { xtol: 1e-8, ftol: 1e-12, max_iter: 200, initial_step: 1.0 }
    }
}

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;
const TINY: f64 = 1e-25;

/// Powell's conjugate direction method.
pub fn powell(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    opts: &PowellOptions,
    observer: &mut dyn Observer,
) -> Result<OptResult> {
    let n = x0.len();
    if n == 0 || !(opts.initial_step > 0.0) {
        return Err(Error::config("powell needs a non-empty start and a positive initial step"));
    }
    let f = Counted::new(f);
    let mut x = x0.to_vec();
    let mut fx = f.eval(&x);
    if !fx.is_finite() {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let mut dirs: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut trace = vec![TraceEntry { iteration: 0, x: x.clone(), f: fx, evaluations: f.calls() }];
    let mut stop = if observer.observe(&trace[0]) { StopReason::MaxIterations } else { StopReason::Cancelled };

    for iteration in 1..=opts.max_iter {
        if stop == StopReason::Cancelled {
            break;
        }
        let (x_start, f_start) = (x.clone(), fx);
        let mut biggest = (0.0, 0);
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            line_minimise(&f, &mut x, &mut fx, d, opts);
            if before - fx > biggest.0 {
                biggest = (before - fx, i);
            }
        }
        let converged = 2.0 * (f_start - fx) <= opts.ftol * (f_start.abs() + fx.abs()) + TINY;
        if !converged {
            let new_dir: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
            let extrapolated: Vec<f64> = x.iter().zip(&new_dir).map(|(a, d)| a + d).collect();
            let fe = f.eval(&extrapolated);
            if fe < f_start {
                let (drop, ibig) = biggest;
                let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - drop).powi(2) - drop * (f_start - fe).powi(2);
                if t < 0.0 {
                    line_minimise(&f, &mut x, &mut fx, &new_dir, opts);
                    dirs[ibig] = dirs[n - 1].clone();
                    dirs[n - 1] = new_dir;
                }
            }
        }
        let entry = TraceEntry { iteration, x: x.clone(), f: fx, evaluations: f.calls() };
        if !observer.observe(&entry) {
            stop = StopReason::Cancelled;
        }
        trace.push(entry);
        if converged && stop != StopReason::Cancelled {
            stop = StopReason::FunctionTolerance;
            break;
        }
    }

    Ok(OptResult { x, f: fx, evaluations: f.calls(), non_finite: f.bad(), trace, stop })
}

/// Moves `x` to the minimum of f along `d`; leaves it unchanged unless f
/// strictly improves.
fn line_minimise(f: &Counted<'_>, x: &mut Vec<f64>, fx: &mut f64, d: &[f64], opts: &PowellOptions) {
    if d.iter().all(|v| *v == 0.0) {
        return;
    }
    let at = |a: f64| -> Vec<f64> { x.iter().zip(d).map(|(p, q)| p + a * q).collect() };
    let phi = |a: f64| f.eval(&at(a));
    let (a, b, c, fb) = bracket(&phi, *fx, opts.initial_step);
    let (alpha, fa) = brent(&phi, a, b, c, fb, opts.xtol);
    if fa < *fx {
        *x = at(alpha);
        *fx = fa;
    }
}

/// Returns `(a, b, c, f(b))` with `b` between `a` and `c` and `f(b)` no
/// larger than either end, expanding by the golden ratio.
fn bracket(phi: &dyn Fn(f64) -> f64, f0: f64, step: f64) -> (f64, f64, f64, f64) {
    let (mut a, mut fa) = (0.0, f0);
    let (mut b, mut fb) = (step, phi(step));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = phi(c);
    let mut guard = 0;
    while fb > fc && guard < 60 {
        a = b;
        b = c;
        fb = fc;
        c = b + GOLD * (b - a);
        fc = phi(c);
        guard += 1;
    }
    (a, b, c, fb)
}

/// Brent's parabolic/golden-section minimiser on a bracket.
fn brent(phi: &dyn Fn(f64) -> f64, ax: f64, bx: f64, cx: f64, fbx: f64, tol: f64) -> (f64, f64) {
    const ZEPS: f64 = 1e-18;
    let (mut a, mut b) = (ax.min(cx), ax.max(cx));
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            let usable = p.is_finite() && q.is_finite() && q != 0.0;
            if usable && p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = phi(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, w) = (w, u);
                (fv, fw) = (fw, fu);
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}
