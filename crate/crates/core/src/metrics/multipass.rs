use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgeom::{compose, resample, rigid_matrix, Mat4, Point3, RigidParams, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultipassConfig {
    pub n_passes: usize,
    /// mm
    pub translation_halfwidth: f64,
    /// degrees
    pub rotation_halfwidth: f64,
    pub rng_seed: u64,
}

impl Default for MultipassConfig {
    fn default() -> Self {
        MultipassConfig { n_passes: 5, translation_halfwidth: 0.25, rotation_halfwidth: 1.0, rng_seed: 0 }
    }
}

impl MultipassConfig {
    /// A config that reduces [`multipass`] to a single plain evaluation.
    pub fn single() -> Self {
        MultipassConfig { n_passes: 1, translation_halfwidth: 0.0, rotation_halfwidth: 0.0, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_passes < 1 {
            return Err(Error::config("multipass needs at least one pass"));
        }
        let ok = |h: f64| h.is_finite() && h >= 0.0;
        if !ok(self.translation_halfwidth) || !ok(self.rotation_halfwidth) {
            return Err(Error::config("multipass halfwidths must be finite and non-negative"));
        }
        Ok(())
    }
}

/// The perturbation used on pass `n`. Depends only on the seed and `n`, so
/// every candidate in a run is scored against the same perturbation set.
pub fn perturbation(cfg: &MultipassConfig, n: usize) -> RigidParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(n as u64);
    let mut draw = |h: f64| h * (2.0 * rng.random::<f64>() - 1.0);
    let t = cfg.translation_halfwidth;
    let r = cfg.rotation_halfwidth;
    RigidParams::new(draw(t), draw(t), draw(t), draw(r), draw(r), draw(r))
}

/// Mean of `metric(resample(moving, candidate * theta_n), fixed)` over the
/// configured passes. Rigid transforms are taken about the fixed grid centre
/// and each pass resamples once from the original moving volume.
pub fn multipass<F>(
    metric: F,
    moving: &Volume3D,
    fixed: &Volume3D,
    candidate: &RigidParams,
    cfg: &MultipassConfig,
) -> Result<f64>
where
    F: Fn(&Volume3D, &Volume3D) -> Result<f64>,
{
    let mut values = Vec::with_capacity(cfg.n_passes);
    for t in pass_transforms(candidate, fixed.geometry().center(), cfg)? {
        let warped = resample(moving, &t, fixed.geometry())?;
        values.push(metric(&warped, fixed)?);
    }
    Ok(mean_anchored(&values))
}

/// `rigid(candidate) * rigid(theta_n)` for each pass.
pub fn pass_transforms(candidate: &RigidParams, center: Point3, cfg: &MultipassConfig) -> Result<Vec<Mat4>> {
    cfg.validate()?;
    let base = rigid_matrix(candidate, center)?;
    (0..cfg.n_passes).map(|n| Ok(compose(&base, &rigid_matrix(&perturbation(cfg, n), center)?))).collect()
}

/// Mean computed relative to the first value so that equal inputs give that
/// value back bit-for-bit.
pub(crate) fn mean_anchored(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgeom::Geometry;

    fn pair() -> (Volume3D, Volume3D) {
        let g = Geometry::centered([12, 12, 12], [2.0; 3]).unwrap();
        let f = Volume3D::from_world_fn(g, |p| (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 60.0).exp()).unwrap();
        let m =
            Volume3D::from_world_fn(g, |p| (-((p[0] - 2.0).powi(2) + p[1] * p[1] + p[2] * p[2]) / 60.0).exp()).unwrap();
        (f, m)
    }

    fn ssd(a: &Volume3D, b: &Volume3D) -> Result<f64> {
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum())
    }

    #[test]
    fn zero_halfwidths_equal_single_pass() {
        let (f, m) = pair();
        let cand = RigidParams::new(1.0, -0.5, 0.2, 3.0, 0.0, -2.0);
        let single =
            ssd(&resample(&m, &rigid_matrix(&cand, f.geometry().center()).unwrap(), f.geometry()).unwrap(), &f)
                .unwrap();
        for n in [1, 2, 5, 7] {
            let cfg = MultipassConfig { n_passes: n, translation_halfwidth: 0.0, rotation_halfwidth: 0.0, rng_seed: 9 };
            assert_eq!(multipass(ssd, &m, &f, &cand, &cfg).unwrap(), single);
        }
    }

    #[test]
    fn constant_metric_passes_through() {
        let (f, m) = pair();
        for seed in 0..5 {
            let cfg = MultipassConfig { rng_seed: seed, ..Default::default() };
            let v = multipass(|_, _| Ok(0.1), &m, &f, &RigidParams::IDENTITY, &cfg).unwrap();
            assert_eq!(v, 0.1);
        }
    }

    #[test]
    fn perturbations_respect_halfwidths() {
        let cfg = MultipassConfig::default();
        for n in 0..200 {
            let p = perturbation(&cfg, n).to_array();
            assert!(p[..3].iter().all(|t| t.abs() <= 0.25));
            assert!(p[3..].iter().all(|r| r.abs() <= 1.0));
        }
        assert_ne!(perturbation(&cfg, 0), perturbation(&cfg, 1));
    }

    #[test]
    fn translation_metric_equals_hand_average() {
        let center = [1.0, -2.0, 0.5];
        let cand = RigidParams::translation(1.0, 2.0, -3.0);
        let cfg = MultipassConfig { rng_seed: 42, ..Default::default() };
        let l1 = |p: &RigidParams| p.tx.abs() + p.ty.abs() + p.tz.abs();

        // Translation-only perturbations keep the composite a pure translation,
        // so m(theta) = |t|_1 can be averaged by hand from the logged theta_n.
        let cfg_t = MultipassConfig { rotation_halfwidth: 0.0, ..cfg };
        let mut by_hand = 0.0;
        for n in 0..5 {
            let th = perturbation(&cfg_t, n);
            by_hand += l1(&RigidParams::translation(cand.tx + th.tx, cand.ty + th.ty, cand.tz + th.tz));
        }
        by_hand /= 5.0;
        let values: Vec<f64> = pass_transforms(&cand, center, &cfg_t)
            .unwrap()
            .iter()
            .map(|m| m.translation_part().iter().map(|x| x.abs()).sum())
            .collect();
        assert_eq!(values.len(), 5);
        assert!((mean_anchored(&values) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let (f, m) = pair();
        let cand = RigidParams::new(1.0, 0.0, 0.0, 0.0, 4.0, 0.0);
        let cfg = MultipassConfig { rng_seed: 3, ..Default::default() };
        let a = multipass(ssd, &m, &f, &cand, &cfg).unwrap();
        let b = multipass(ssd, &m, &f, &cand, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let other = MultipassConfig { rng_seed: 4, ..cfg };
        assert_ne!(a, multipass(ssd, &m, &f, &cand, &other).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let (f, m) = pair();
        let cfg = MultipassConfig { n_passes: 0, ..Default::default() };
        assert!(multipass(ssd, &m, &f, &RigidParams::IDENTITY, &cfg).is_err());
        let cfg = MultipassConfig { rotation_halfwidth: -1.0, ..Default::default() };
        assert!(multipass(ssd, &m, &f, &RigidParams::IDENTITY, &cfg).is_err());
    }
}
