use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, Similarity};
use crate::datagen::{scale_to_tre, PhantomCase};
use crate::error::{Error, Result};
use crate::metrics::{MetricKind, MindConfig, MultipassConfig, DEFAULT_BINS};
use crate::nn::{load_model, Network};
use crate::optim::{
    bfgs, differential_evolution, dino, powell, Bounds, DinoConfig, Observer, OptimizerKind, PowellOptions, StopReason,
    TraceEntry,
};
use crate::volgeom::{rigid_matrix, tre, Mat4, RigidParams, SurfacePointSet, Volume3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Initialization {
    Params {
        params: RigidParams,
    },
    /// Random direction scaled to an exact TRE against the ground truth.
    AtTre {
        tre_mm: f64,
        seed: u64,
    },
}

impl Default for Initialization {
    fn default() -> Self {
        Initialization::Params { params: RigidParams::IDENTITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub metric: MetricKind,
    pub multipass: bool,
    pub multipass_config: MultipassConfig,
    pub optimizer: OptimizerKind,
    /// Search box and DE/BFGS settings. Plain "de" and "bfgs" runs use the
    /// same settings as the corresponding DINO stage.
    pub dino: DinoConfig,
    pub powell: PowellOptions,
    pub mi_bins: usize,
    pub mind: MindConfig,
    pub model: Option<PathBuf>,
    pub init: Initialization,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            metric: MetricKind::Mi,
            multipass: false,
            multipass_config: MultipassConfig::default(),
            optimizer: OptimizerKind::Dino,
            dino: DinoConfig::default(),
            powell: PowellOptions { initial_step: 2.0, xtol: 1e-4, ftol: 1e-6, max_iter: 20 },
            mi_bins: DEFAULT_BINS,
            mind: MindConfig::default(),
            model: None,
            init: Initialization::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.check_with_model(false)
    }

    /// `have_model`: a network is supplied in-process, so no path is needed.
    pub fn check_with_model(&self, have_model: bool) -> Result<()> {
        match (self.metric, &self.model) {
            (MetricKind::Deep, None) if !have_model => {
                return Err(Error::config("metric 'deep' requires a model path"))
            }
            (MetricKind::Mi | MetricKind::Mind, Some(_)) => {
                return Err(Error::config(format!(
                    "a model path is only used with metric 'deep', not '{}'",
                    self.metric
                )))
            }
            _ => {}
        }
        if self.dino.radius.len() != 6 {
            return Err(Error::config("search radius needs six entries"));
        }
        self.multipass_config.validate()?;
        self.mind.validate()
    }
}

/// Known alignment for reporting TRE.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub surface: SurfacePointSet,
    pub transform: Mat4,
}

impl From<&PhantomCase> for GroundTruth {
    fn from(case: &PhantomCase) -> Self {
        GroundTruth { surface: case.surface.clone(), transform: case.ground_truth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub initial: RigidParams,
    pub params: RigidParams,
    pub matrix: Mat4,
    pub initial_objective: f64,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub initial_tre: Option<f64>,
    pub final_tre: Option<f64>,
    pub evaluations: usize,
    pub stop: Option<StopReason>,
    pub wall_time_s: f64,
}

/// Rigid parameters whose TRE against identity is exactly `target` mm, in a
/// direction drawn uniformly from the unit sphere of (mm, mm, mm, deg, deg, deg),
/// redrawn until every component lies within the default DINO search radius
/// so the ground truth is inside the search box around the start.
pub fn init_at_tre(case: &PhantomCase, target: f64, seed: u64) -> Result<RigidParams> {
    if !(target > 0.0) {
        return Err(Error::invalid("initial TRE must be positive"));
    }
    let radius = DinoConfig::default().radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let mut v: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let p = scale_to_tre(&RigidParams::from_array(v), &case.surface, case.center(), target)?;
        if p.to_array().iter().zip(&radius).all(|(x, r)| x.abs() <= *r) {
            return Ok(p);
        }
    }
    Err(Error::Unreachable(format!("no start at TRE {target} mm lies inside the search radius")))
}

/// Registers a phantom case.
pub fn register_case(
    case: &PhantomCase,
    cfg: &RegistrationConfig,
    model: Option<&Network>,
    observer: &mut dyn Observer,
) -> Result<RegistrationResult> {
    let init = match &cfg.init {
        Initialization::Params { params } => *params,
        Initialization::AtTre { tre_mm, seed } => init_at_tre(case, *tre_mm, *seed)?,
    };
    register(&case.fixed, &case.moving, Some(&GroundTruth::from(case)), cfg, init, model, observer)
}

/// Optimises the rigid transform of `moving` onto `fixed` from `init`.
///
/// `model` takes precedence over `cfg.model` for the deep metric and is
/// ignored by the other metrics.
pub fn register(
    fixed: &Volume3D,
    moving: &Volume3D,
    truth: Option<&GroundTruth>,
    cfg: &RegistrationConfig,
    init: RigidParams,
    model: Option<&Network>,
    observer: &mut dyn Observer,
) -> Result<RegistrationResult> {
    let started = Instant::now();
    cfg.check_with_model(model.is_some())?;
    if !init.is_finite() {
        return Err(Error::invalid("initial parameters must be finite"));
    }
    let loaded;
    let net = match (cfg.metric, model) {
        (MetricKind::Deep, Some(m)) => Some(m),
        (MetricKind::Deep, None) => {
            let path = cfg.model.as_ref().expect("validated");
            loaded = load_model(path)?;
            Some(&loaded)
        }
        _ => None,
    };
    let objective = Objective {
        fixed,
        moving,
        similarity: Similarity::new(cfg.metric, fixed, net, cfg.mi_bins, &cfg.mind)?,
        multipass: cfg.multipass.then_some(cfg.multipass_config),
    };
    let f = |x: &[f64]| objective.eval(x);
    let x0 = init.to_array();
    let initial_objective = f(&x0);

    let out = match cfg.optimizer {
        OptimizerKind::None => None,
        OptimizerKind::De => {
            let bounds = Bounds::around(&x0, &cfg.dino.radius)?;
            Some(differential_evolution(&f, &bounds, &cfg.dino.de, observer)?)
        }
        OptimizerKind::Bfgs => Some(bfgs(&f, &x0, &cfg.dino.bfgs, observer)?),
        OptimizerKind::Powell => Some(powell(&f, &x0, &cfg.powell, observer)?),
        OptimizerKind::Dino => Some(dino(&f, &x0, &cfg.dino, observer)?),
    };
    let (params, objective_value, trace, evaluations, stop) = match out {
        Some(r) => (RigidParams::from_slice(&r.x)?, r.f, r.trace, r.evaluations + 1, Some(r.stop)),
        None => {
            let entry = TraceEntry { iteration: 0, x: x0.to_vec(), f: initial_objective, evaluations: 1 };
            observer.observe(&entry);
            (init, initial_objective, vec![entry], 1, None)
        }
    };
    if stop == Some(StopReason::Cancelled) {
        return Err(Error::Cancelled);
    }

    let center = fixed.geometry().center();
    let matrix = rigid_matrix(&params, center)?;
    let (initial_tre, final_tre) = match truth {
        Some(t) => (
            Some(tre(&t.surface, &rigid_matrix(&init, center)?, &t.transform)?),
            Some(tre(&t.surface, &matrix, &t.transform)?),
        ),
        None => (None, None),
    };
    Ok(RegistrationResult {
        initial: init,
        params,
        matrix,
        initial_objective,
        objective: objective_value,
        trace,
        initial_tre,
        final_tre,
        evaluations,
        stop,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
