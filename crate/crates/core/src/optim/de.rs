use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bounds, Counted, Observer, OptResult, StopReason, TraceEntry};
use crate::error::{Error, Result};

/// best/1/bin differential evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    /// Number of members, or members per parameter when `population_per_dim`.
    pub population: usize,
    pub population_per_dim: bool,
    pub generations: usize,
    /// Mutation factor, redrawn uniformly from this range every generation.
    pub mutation: [f64; 2],
    pub crossover: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            population: 5,
            population_per_dim: false,
            generations: 13,
            mutation: [0.5, 1.0],
            crossover: 0.7,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn members(&self, dim: usize) -> usize {
        if self.population_per_dim {
            self.population * dim
        } else {
            self.population
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.members(dim) < 4 {
            return Err(Error::config("differential evolution needs at least 4 members"));
        }
        let [lo, hi] = self.mutation;
        if !(0.0 <= lo && lo <= hi && hi <= 2.0) {
            return Err(Error::config("mutation range must satisfy 0 <= lo <= hi <= 2"));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::config("crossover probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Minimises `f` over `bounds`.
///
/// Trial vectors for a generation are all built before any is scored, so
/// parallel scoring leaves the run identical to a serial one.
pub fn differential_evolution(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &Bounds,
    cfg: &DeConfig,
    observer: &mut dyn Observer,
) -> Result<OptResult> {
    let dim = bounds.dim();
    cfg.validate(dim)?;
    let np = cfg.members(dim);
    let f = Counted::new(f);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop = latin_hypercube(&mut rng, bounds, np);
    let mut fit: Vec<f64> = pop.par_iter().map(|x| f.eval(x)).collect();
    let mut best = argmin(&fit);
    let mut trace = vec![TraceEntry { iteration: 0, x: pop[best].clone(), f: fit[best], evaluations: f.calls() }];
    let mut stop = StopReason::MaxIterations;
    if !observer.observe(&trace[0]) {
        stop = StopReason::Cancelled;
    }

    for generation in 1..=cfg.generations {
        if stop == StopReason::Cancelled {
            break;
        }
        let [flo, fhi] = cfg.mutation;
        let scale = if fhi > flo { rng.random_range(flo..fhi) } else { flo };
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (r1, r2) = pick_two(&mut rng, np, i);
                let jrand = rng.random_range(0..dim);
                let mut trial = pop[i].clone();
                for j in 0..dim {
                    if j == jrand || rng.random::<f64>() < cfg.crossover {
                        trial[j] = pop[best][j] + scale * (pop[r1][j] - pop[r2][j]);
                    }
                }
                bounds.clip(&mut trial);
                trial
            })
            .collect();
        let scores: Vec<f64> = trials.par_iter().map(|x| f.eval(x)).collect();
        for (i, (trial, score)) in trials.into_iter().zip(scores).enumerate() {
            if score <= fit[i] {
                pop[i] = trial;
                fit[i] = score;
            }
        }
        best = argmin(&fit);
        let entry = TraceEntry { iteration: generation, x: pop[best].clone(), f: fit[best], evaluations: f.calls() };
        if !observer.observe(&entry) {
            stop = StopReason::Cancelled;
        }
        trace.push(entry);
    }

    Ok(OptResult { x: pop[best].clone(), f: fit[best], evaluations: f.calls(), non_finite: f.bad(), trace, stop })
}

fn latin_hypercube(rng: &mut ChaCha8Rng, bounds: &Bounds, n: usize) -> Vec<Vec<f64>> {
    let mut pop = vec![vec![0.0; bounds.dim()]; n];
    for j in 0..bounds.dim() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let (lo, hi) = (bounds.lo()[j], bounds.hi()[j]);
        for (member, s) in pop.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            member[j] = lo + u * (hi - lo);
        }
    }
    pop
}

/// Two distinct member indices, both different from `exclude`.
fn pick_two(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> (usize, usize) {
    let mut draw = |avoid: &[usize]| loop {
        let r = rng.random_range(0..n);
        if !avoid.contains(&r) {
            return r;
        }
    };
    let a = draw(&[exclude]);
    let b = draw(&[exclude, a]);
    (a, b)
}

/// Lowest index among the minima, so ties resolve the same way every run.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::optim::testfns::sphere;

    fn box20(n: usize) -> Bounds {
        Bounds::new(vec![-20.0; n], vec![20.0; n]).unwrap()
    }

    #[test]
    fn solves_sphere() {
        let cfg = DeConfig { population: 30, generations: 100, seed: 1, ..Default::default() };
        let r = differential_evolution(&sphere, &box20(6), &cfg, &mut ()).unwrap();
        assert!(r.f < 1e-3, "{}", r.f);
        assert_eq!(r.evaluations, 30 * 101);
    }

    #[test]
    fn best_is_monotone_and_candidates_in_bounds() {
        let seen = Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            sphere(x) + (3.0 * x[0]).sin()
        };
        let b = box20(6);
        let r = differential_evolution(&f, &b, &DeConfig { seed: 4, generations: 40, ..Default::default() }, &mut ())
            .unwrap();
        assert!(r.trace.windows(2).all(|w| w[1].f <= w[0].f));
        assert!(seen.lock().unwrap().iter().all(|x| b.contains(x)));
        assert_eq!(r.trace.len(), 41);
        assert_eq!(r.f, f(&r.x));
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = DeConfig { seed: 11, ..Default::default() };
        let a = differential_evolution(&sphere, &box20(6), &cfg, &mut ()).unwrap();
        let b = differential_evolution(&sphere, &box20(6), &cfg, &mut ()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_candidates_rejected() {
        let f = |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { sphere(x) };
        let r = differential_evolution(&f, &box20(3), &DeConfig { seed: 2, ..Default::default() }, &mut ()).unwrap();
        assert!(r.f.is_finite());
        assert!(r.x[0] <= 0.0);
        assert!(r.non_finite > 0);
    }

    #[test]
    fn observer_can_cancel() {
        let mut calls = 0;
        let mut stop_after_two = |_: &TraceEntry| {
            calls += 1;
            calls < 2
        };
        let r = differential_evolution(&sphere, &box20(2), &DeConfig::default(), &mut stop_after_two).unwrap();
        assert_eq!(r.stop, StopReason::Cancelled);
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn population_rules() {
        let too_small = DeConfig { population: 3, ..Default::default() };
        assert!(differential_evolution(&sphere, &box20(6), &too_small, &mut ()).is_err());
        let per_dim = DeConfig { population: 5, population_per_dim: true, generations: 0, ..Default::default() };
        let r = differential_evolution(&sphere, &box20(6), &per_dim, &mut ()).unwrap();
        assert_eq!(r.evaluations, 30);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Bounds::new(vec![0.0, -1.0], vec![10.0, 1.0]).unwrap();
        let pop = latin_hypercube(&mut rng, &b, 10);
        for j in 0..2 {
            let mut strata: Vec<usize> =
                pop.iter().map(|m| ((m[j] - b.lo()[j]) / (b.hi()[j] - b.lo()[j]) * 10.0) as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
    }
}
