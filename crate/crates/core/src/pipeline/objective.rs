use crate::error::{Error, Result};
use crate::metrics::{
    mind_descriptor, mind_ssd_descriptors, multipass, mutual_information, MetricKind, MindConfig, MindDescriptor,
    MultipassConfig,
};
use crate::nn::{predict_tre, Network};
use crate::volgeom::{resample, rigid_matrix, RigidParams, Volume3D};

/// A metric bound to one fixed volume, with per-volume work done up front.
pub enum Similarity<'a> {
    Mi { bins: usize },
    Mind { cfg: MindConfig, fixed: MindDescriptor },
    Deep { net: &'a Network },
}

impl<'a> Similarity<'a> {
    pub fn new(
        kind: MetricKind,
        fixed: &Volume3D,
        net: Option<&'a Network>,
        mi_bins: usize,
        mind: &MindConfig,
    ) -> Result<Self> {
        Ok(match kind {
            MetricKind::Mi => {
                if mi_bins < 2 {
                    return Err(Error::config("mi_bins must be at least 2"));
                }
                Similarity::Mi { bins: mi_bins }
            }
            MetricKind::Mind => Similarity::Mind { cfg: mind.clone(), fixed: mind_descriptor(fixed, mind)? },
            MetricKind::Deep => {
                let net = net.ok_or_else(|| Error::config("the deep metric needs a model"))?;
                let [c, d, h, w] = net.spec().input;
                let [nx, ny, nz] = fixed.dims();
                if c != 2 || [d, h, w] != [nz, ny, nx] {
                    return Err(Error::config(format!(
                        "model input {:?} does not fit volumes of {:?} voxels",
                        net.spec().input,
                        fixed.dims()
                    )));
                }
                Similarity::Deep { net }
            }
        })
    }

    pub fn kind(&self) -> MetricKind {
        match self {
            Similarity::Mi { .. } => MetricKind::Mi,
            Similarity::Mind { .. } => MetricKind::Mind,
            Similarity::Deep { .. } => MetricKind::Deep,
        }
    }

    /// Scores a moving volume already resampled onto the fixed grid.
    pub fn score(&self, warped: &Volume3D, fixed: &Volume3D) -> Result<f64> {
        match self {
            Similarity::Mi { bins } => mutual_information(warped, fixed, *bins),
            Similarity::Mind { cfg, fixed: fd } => mind_ssd_descriptors(&mind_descriptor(warped, cfg)?, fd),
            Similarity::Deep { net } => predict_tre(net, fixed, warped),
        }
    }
}

/// Similarity as a function of the six rigid parameters.
pub struct Objective<'a> {
    pub fixed: &'a Volume3D,
    pub moving: &'a Volume3D,
    pub similarity: Similarity<'a>,
    /// `None` scores each candidate once.
    pub multipass: Option<MultipassConfig>,
}

impl Objective<'_> {
    pub fn value(&self, params: &RigidParams) -> Result<f64> {
        let score = |w: &Volume3D, f: &Volume3D| self.similarity.score(w, f);
        match &self.multipass {
            Some(cfg) => multipass(score, self.moving, self.fixed, params, cfg),
            None => {
                let t = rigid_matrix(params, self.fixed.geometry().center())?;
                score(&resample(self.moving, &t, self.fixed.geometry())?, self.fixed)
            }
        }
    }

    /// As [`Objective::value`] over a raw parameter slice; failures become NaN
    /// so optimisers can reject the candidate.
    pub fn eval(&self, x: &[f64]) -> f64 {
        RigidParams::from_slice(x).and_then(|p| self.value(&p)).unwrap_or(f64::NAN)
    }
}
