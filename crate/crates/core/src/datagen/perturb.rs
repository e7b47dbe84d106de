use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PhantomCase;
use crate::error::{Error, Result};
use crate::nn::{stack_pair, TrainingSample};
use crate::volgeom::{resample, rigid_matrix, tre, Mat4, Point3, RigidParams, SurfacePointSet};

/// Magnitude interval per component (tx, ty, tz mm; rx, ry, rz degrees).
/// Signs are drawn separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRanges(pub [[f64; 2]; 6]);

impl Default for PerturbationRanges {
    fn default() -> Self {
        PerturbationRanges([[1.0, 3.0], [1.0, 3.0], [1.0, 5.0], [2.5, 12.5], [2.5, 7.5], [2.5, 7.5]])
    }
}

impl PerturbationRanges {
    pub fn validate(&self) -> Result<()> {
        for [lo, hi] in self.0 {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::config(format!("invalid perturbation interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, ranges: &PerturbationRanges) -> RigidParams {
    let v = ranges.0.map(|[lo, hi]| {
        let m = rng.random_range(lo..=hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    RigidParams::from_array(v)
}

fn tre_of(params: &RigidParams, surface: &SurfacePointSet, center: Point3) -> Result<f64> {
    tre(surface, &rigid_matrix(params, center)?, &Mat4::IDENTITY)
}

/// Scales all six components of `params` by one factor so that the TRE
/// against identity equals `target` mm.
///
/// TRE(s) is scanned on a grid up to the first bracket that reaches the
/// target, then bisected there. The returned TRE never exceeds `target` and
/// is within 1e-6 mm of it.
pub fn scale_to_tre(
    params: &RigidParams,
    surface: &SurfacePointSet,
    center: Point3,
    target: f64,
) -> Result<RigidParams> {
    if !(target > 0.0 && target <= TrainingSample::MAX_LABEL) {
        return Err(Error::invalid(format!("target TRE must be in (0, 20] mm, got {target}")));
    }
    if !params.is_finite() || params.to_array().iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("cannot scale an identity or non-finite perturbation"));
    }
    let f = |s: f64| tre_of(&params.scaled(s), surface, center);

    let mut hi = 1.0;
    while f(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Unreachable(format!("TRE {target} mm not reachable by scaling")));
        }
    }
    const SCAN: usize = 64;
    let mut lo = 0.0;
    for i in 1..=SCAN {
        let s = hi * i as f64 / SCAN as f64;
        if f(s)? >= target {
            hi = s;
            break;
        }
        lo = s;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(hi)? == target {
        return Ok(params.scaled(hi));
    }
    let reached = f(lo)?;
    if target - reached > 1e-6 {
        return Err(Error::Unreachable(format!("bisection stalled at {reached} mm for target {target} mm")));
    }
    Ok(params.scaled(lo))
}

/// Draws `n` perturbed pairs from one case. Sample `i` depends only on
/// `(seed, i)`.
pub fn gen_training_set(
    case: &PhantomCase,
    case_index: usize,
    n: usize,
    seed: u64,
    ranges: &PerturbationRanges,
) -> Result<Vec<TrainingSample>> {
    if n == 0 {
        return Err(Error::invalid("training set size must be at least 1"));
    }
    ranges.validate()?;
    let center = case.center();
    let grid = case.fixed.geometry();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let raw = sample_perturbation(&mut rng, ranges);
            // Uniform on (0, 20].
            let target = TrainingSample::MAX_LABEL * (1.0 - rng.random::<f64>());
            let params = scale_to_tre(&raw, &case.surface, center, target)?;
            let warped = resample(&case.moving, &rigid_matrix(&params, center)?, grid)?;
            Ok(TrainingSample {
                input: stack_pair(&case.fixed, &warped)?,
                dims: grid.dims,
                label: tre_of(&params, &case.surface, center)?,
                params,
                case: case_index,
            })
        })
        .collect()
}
