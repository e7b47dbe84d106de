use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::register::{register_case, Initialization, RegistrationConfig};
use crate::datagen::{list_cases, make_phantom, read_case, PhantomCase, PhantomConfig};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::volgeom::RigidParams;

/// One registration configuration in an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    #[serde(flatten)]
    pub config: RegistrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CaseSource {
    /// Phantoms with seeds `seed, seed + 1, ...`.
    Generate {
        count: usize,
        seed: u64,
        #[serde(default)]
        phantom: PhantomConfig,
    },
    /// Every case directory under `path`, in name order.
    Dir { path: PathBuf },
}

impl CaseSource {
    pub fn load(&self) -> Result<Vec<PhantomCase>> {
        match self {
            CaseSource::Generate { count, seed, phantom } => {
                (0..*count as u64).into_par_iter().map(|i| make_phantom(seed + i, phantom)).collect()
            }
            CaseSource::Dir { path } => list_cases(path)?.iter().map(|id| read_case(path.join(id))).collect(),
        }
    }
}

/// Contents of an `evaluate --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub cases: CaseSource,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_inits")]
    pub inits_mm: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    pub runs: Vec<RunSpec>,
}

fn default_inits() -> Vec<f64> {
    vec![8.0, 16.0]
}

/// Seeds shared by every run for one (case, initialisation) pair, so all
/// runs start from the same place and see the same perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSeeds {
    pub init: u64,
    pub optimizer: u64,
    pub multipass: u64,
}

impl CaseSeeds {
    pub fn derive(seed: u64, case: usize, init_index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((case as u64) << 8) | init_index as u64);
        CaseSeeds { init: rng.random(), optimizer: rng.random(), multipass: rng.random() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub run: String,
    pub init_mm: f64,
    pub case: usize,
    pub seeds: CaseSeeds,
    pub initial_tre: Option<f64>,
    pub final_tre: Option<f64>,
    pub params: Option<RigidParams>,
    pub evaluations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub init_mm: f64,
    pub n: usize,
    pub failures: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ReportRow {
    pub fn from_records(run: &str, init_mm: f64, records: &[CaseRecord]) -> Self {
        let mine: Vec<&CaseRecord> = records.iter().filter(|r| r.run == run && r.init_mm == init_mm).collect();
        let tres: Vec<f64> = mine.iter().filter_map(|r| r.final_tre).collect();
        let n = tres.len();
        let mean = if n > 0 { tres.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let std =
            if n > 1 { (tres.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        ReportRow {
            run: run.to_owned(),
            init_mm,
            n,
            failures: mine.len() - n,
            mean,
            std,
            min: tres.iter().cloned().fold(f64::INFINITY, f64::min),
            max: tres.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Summary rows plus per-case results. Contains no timings, so repeated runs
/// with the same seeds serialise identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    pub fn row(&self, run: &str, init_mm: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.run == run && r.init_mm == init_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub run: String,
    pub init_mm: f64,
    pub case: usize,
    pub wall_time_s: f64,
}

/// Runs every (run, initialisation, case) combination. A failed
/// registration is recorded in its case record and does not stop the rest.
pub fn evaluate(
    cases: &[PhantomCase],
    runs: &[RunSpec],
    inits_mm: &[f64],
    seed: u64,
    model: Option<&Network>,
) -> Result<(EvalReport, Vec<Timing>)> {
    if cases.is_empty() {
        return Err(Error::invalid("evaluation needs at least one case"));
    }
    if runs.is_empty() || inits_mm.is_empty() {
        return Err(Error::invalid("evaluation needs at least one run and one initialisation"));
    }
    for r in runs {
        if runs.iter().filter(|o| o.name == r.name).count() > 1 {
            return Err(Error::config(format!("duplicate run name '{}'", r.name)));
        }
    }
    let jobs: Vec<(usize, usize, usize)> = (0..runs.len())
        .flat_map(|r| (0..inits_mm.len()).flat_map(move |i| (0..cases.len()).map(move |c| (r, i, c))))
        .collect();
    let results: Vec<(CaseRecord, Timing)> = jobs
        .par_iter()
        .map(|&(r, i, c)| {
            let run = &runs[r];
            let seeds = CaseSeeds::derive(seed, c, i);
            let mut cfg = run.config.clone();
            cfg.init = Initialization::AtTre { tre_mm: inits_mm[i], seed: seeds.init };
            cfg.dino.de.seed = seeds.optimizer;
            cfg.multipass_config.rng_seed = seeds.multipass;
            let outcome = register_case(&cases[c], &cfg, model, &mut ());
            let mut record = CaseRecord {
                run: run.name.clone(),
                init_mm: inits_mm[i],
                case: c,
                seeds,
                initial_tre: None,
                final_tre: None,
                params: None,
                evaluations: 0,
                error: None,
            };
            let mut wall = 0.0;
            match outcome {
                Ok(res) => {
                    record.initial_tre = res.initial_tre;
                    record.final_tre = res.final_tre;
                    record.params = Some(res.params);
                    record.evaluations = res.evaluations;
                    wall = res.wall_time_s;
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            let timing = Timing { run: run.name.clone(), init_mm: inits_mm[i], case: c, wall_time_s: wall };
            (record, timing)
        })
        .collect();
    let (records, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let rows =
        runs.iter().flat_map(|r| inits_mm.iter().map(|&i| ReportRow::from_records(&r.name, i, &records))).collect();
    Ok((EvalReport { rows, cases: records }, timings))
}

#[derive(Serialize)]
struct CaseCsvRow<'a> {
    run: &'a str,
    init_mm: f64,
    case: usize,
    init_seed: u64,
    optimizer_seed: u64,
    multipass_seed: u64,
    initial_tre: Option<f64>,
    final_tre: Option<f64>,
    tx: Option<f64>,
    ty: Option<f64>,
    tz: Option<f64>,
    rx: Option<f64>,
    ry: Option<f64>,
    rz: Option<f64>,
    evaluations: usize,
    error: &'a str,
}

/// Writes `report.json`, `cases.csv` and `timings.csv` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &EvalReport, timings: &[Timing]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;

    let mut w = csv::Writer::from_path(dir.join("cases.csv")).map_err(csv_error)?;
    for r in &report.cases {
        let p = r.params.map(|p| p.to_array());
        let c = |i: usize| p.map(|a| a[i]);
        w.serialize(CaseCsvRow {
            run: &r.run,
            init_mm: r.init_mm,
            case: r.case,
            init_seed: r.seeds.init,
            optimizer_seed: r.seeds.optimizer,
            multipass_seed: r.seeds.multipass,
            initial_tre: r.initial_tre,
            final_tre: r.final_tre,
            tx: c(0),
            ty: c(1),
            tz: c(2),
            rx: c(3),
            ry: c(4),
            rz: c(5),
            evaluations: r.evaluations,
            error: r.error.as_deref().unwrap_or(""),
        })
        .map_err(csv_error)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv")).map_err(csv_error)?;
    for t in timings {
        w.serialize(t).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-case CSV back as `(run, init_mm, final_tre)` triples.
pub fn read_case_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64, Option<f64>)>> {
    #[derive(Deserialize)]
    struct Row {
        run: String,
        init_mm: f64,
        final_tre: Option<f64>,
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize::<Row>().map(|row| row.map(|x| (x.run, x.init_mm, x.final_tre)).map_err(csv_error)).collect()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}
