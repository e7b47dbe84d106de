use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use simreg_core::datagen::{list_cases, read_case, PhantomCase};
use simreg_core::metrics::{MetricKind, MindConfig, DEFAULT_BINS};
use simreg_core::nn::{predict_tre, Network};
use simreg_core::optim::TraceEntry;
use simreg_core::pipeline::{RegistrationResult, Similarity};
use simreg_core::volgeom::{resample, rigid_matrix, tre, RigidParams, Volume3D};

use crate::error::ApiError;

/// A named alignment kept for later comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedAlignment {
    pub name: String,
    pub params: RigidParams,
    pub metric: MetricKind,
    pub metric_value: f64,
    pub predicted_tre: Option<f64>,
    pub true_tre: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

pub struct Session {
    pub case_id: String,
    /// Incremented on every load, so a job finishing after a reload does not
    /// overwrite the new session's parameters.
    pub generation: u64,
    pub case: Arc<PhantomCase>,
    pub params: RigidParams,
    pub history: Vec<SavedAlignment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobPhase {
    Pending,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobPhase {
    pub fn finished(self) -> bool {
        matches!(self, JobPhase::Done | JobPhase::Failed | JobPhase::Cancelled)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub case: String,
    pub status: JobPhase,
    pub trace: Vec<TraceEntry>,
    pub result: Option<RegistrationResult>,
    pub error: Option<String>,
}

pub struct Job {
    pub status: Mutex<JobStatus>,
    pub cancel: AtomicBool,
}

#[derive(Default)]
pub struct Jobs {
    next_id: u64,
    pub map: HashMap<u64, Arc<Job>>,
    pub active: Option<u64>,
}

impl Jobs {
    pub fn start(&mut self, case: &str) -> Result<Arc<Job>, ApiError> {
        if let Some(id) = self.active {
            let busy = self.map.get(&id).is_some_and(|j| !j.status.lock().unwrap().status.finished());
            if busy {
                return Err(ApiError::Conflict(format!("registration job {id} is still running")));
            }
        }
        self.next_id += 1;
        let id = self.next_id;
        let job = Arc::new(Job {
            status: Mutex::new(JobStatus {
                id,
                case: case.to_owned(),
                status: JobPhase::Pending,
                trace: Vec::new(),
                result: None,
                error: None,
            }),
            cancel: AtomicBool::new(false),
        });
        self.map.insert(id, job.clone());
        self.active = Some(id);
        Ok(job)
    }
}

impl Job {
    pub fn snapshot(&self) -> JobStatus {
        self.status.lock().unwrap().clone()
    }

    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

pub struct Inner {
    pub cases_dir: PathBuf,
    pub store_dir: PathBuf,
    pub model: Option<Arc<Network>>,
    pub session: RwLock<Option<Session>>,
    pub jobs: Mutex<Jobs>,
    generation: Mutex<u64>,
}

/// Shared server state.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    /// `store_dir` holds one `<case>.history.json` per case.
    pub fn new(cases_dir: impl Into<PathBuf>, store_dir: impl Into<PathBuf>, model: Option<Network>) -> Self {
        AppState(Arc::new(Inner {
            cases_dir: cases_dir.into(),
            store_dir: store_dir.into(),
            model: model.map(Arc::new),
            session: RwLock::new(None),
            jobs: Mutex::new(Jobs::default()),
            generation: Mutex::new(0),
        }))
    }

    pub fn model(&self) -> Option<&Network> {
        self.0.model.as_deref()
    }

    pub fn default_metric(&self) -> MetricKind {
        if self.0.model.is_some() {
            MetricKind::Deep
        } else {
            MetricKind::Mi
        }
    }

    pub fn case_ids(&self) -> Result<Vec<String>, ApiError> {
        if !self.0.cases_dir.is_dir() {
            return Ok(Vec::new());
        }
        Ok(list_cases(&self.0.cases_dir)?)
    }

    fn history_path(&self, case_id: &str) -> PathBuf {
        self.0.store_dir.join(format!("{case_id}.history.json"))
    }

    pub fn load(&self, case_id: &str) -> Result<(), ApiError> {
        // Only listed ids resolve, so path tricks in the id never reach the
        // filesystem.
        if !self.case_ids()?.iter().any(|c| c == case_id) {
            return Err(ApiError::NotFound(format!("unknown case '{case_id}'")));
        }
        let case = read_case(self.0.cases_dir.join(case_id))?;
        let history = read_history(&self.history_path(case_id))?;
        let generation = {
            let mut g = self.0.generation.lock().unwrap();
            *g += 1;
            *g
        };
        *self.0.session.write().unwrap() = Some(Session {
            case_id: case_id.to_owned(),
            generation,
            case: Arc::new(case),
            params: RigidParams::IDENTITY,
            history,
        });
        Ok(())
    }

    /// Case, parameters and generation of the current session.
    pub fn snapshot(&self) -> Result<(String, Arc<PhantomCase>, RigidParams, u64), ApiError> {
        let s = self.0.session.read().unwrap();
        let s = s.as_ref().ok_or_else(no_session)?;
        Ok((s.case_id.clone(), s.case.clone(), s.params, s.generation))
    }

    pub fn with_session<T>(&self, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut s = self.0.session.write().unwrap();
        f(s.as_mut().ok_or_else(no_session)?)
    }

    pub fn persist_history(&self, session: &Session) -> Result<(), ApiError> {
        std::fs::create_dir_all(&self.0.store_dir)?;
        let path = self.history_path(&session.case_id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&session.history)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

fn no_session() -> ApiError {
    ApiError::Conflict("no case loaded".into())
}

fn read_history(path: &Path) -> Result<Vec<SavedAlignment>, ApiError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Metric readouts for one parameter vector.
pub struct Readout {
    pub warped: Volume3D,
    pub metric_value: f64,
    pub predicted_tre: Option<f64>,
    pub true_tre: Option<f64>,
}

/// Single-pass evaluation of `metric` at `params`.
pub fn evaluate_params(
    case: &PhantomCase,
    params: &RigidParams,
    metric: MetricKind,
    model: Option<&Network>,
) -> Result<Readout, ApiError> {
    if !params.is_finite() {
        return Err(ApiError::Unprocessable("parameters must be finite".into()));
    }
    if metric == MetricKind::Deep && model.is_none() {
        return Err(ApiError::Unprocessable("metric 'deep' needs a model; start the server with one".into()));
    }
    let center = case.center();
    let m = rigid_matrix(params, center)?;
    let warped = resample(&case.moving, &m, case.fixed.geometry())?;
    let predicted_tre = model.map(|net| predict_tre(net, &case.fixed, &warped)).transpose()?;
    let metric_value = match (metric, predicted_tre) {
        (MetricKind::Deep, Some(p)) => p,
        _ => Similarity::new(metric, &case.fixed, model, DEFAULT_BINS, &MindConfig::default())?
            .score(&warped, &case.fixed)?,
    };
    let true_tre = Some(tre(&case.surface, &m, &case.ground_truth)?);
    Ok(Readout { warped, metric_value, predicted_tre, true_tre })
}
