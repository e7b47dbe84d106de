//! A small from-scratch tensor engine and the TRE regression network.
//!
//! The network takes the fixed volume and the resampled moving volume as a
//! two-channel image and regresses the target registration error in mm.

mod adam;
mod model_io;
mod network;
pub mod ops;
mod spec;
mod tensor;
mod train;

pub use adam::Adam;
pub use model_io::{decode_model, encode_model, load_model, save_model, MAGIC, VERSION};
pub use network::{ForwardCache, LayerParams, Mode, Network};
pub use spec::{LayerSpec, NetworkSpec};
pub use tensor::Tensor;
pub use train::{evaluate_mse, train, train_step, EpochLog, TrainConfig, TrainingLog};

use crate::error::{Error, Result};
use crate::volgeom::{RigidParams, Volume3D};

/// A two-channel network input with its ground-truth TRE label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `2 x D x H x W`, channel 0 fixed, channel 1 resampled moving, each
    /// min-max normalised to `[0, 1]`.
    pub input: Vec<f32>,
    pub dims: [usize; 3],
    pub label: f64,
    /// Rigid perturbation that produced the moving channel.
    pub params: RigidParams,
    /// Index of the phantom case the sample came from.
    pub case: usize,
}

impl TrainingSample {
    pub const MAX_LABEL: f64 = 20.0;
}

/// Stacks normalised fixed and moving volumes into a `2 x D x H x W` buffer.
pub fn stack_pair(fixed: &Volume3D, moving: &Volume3D) -> Result<Vec<f32>> {
    if fixed.dims() != moving.dims() {
        return Err(Error::invalid(format!(
            "fixed {:?} and moving {:?} are on different grids",
            fixed.dims(),
            moving.dims()
        )));
    }
    let mut out = Vec::with_capacity(2 * fixed.data().len());
    out.extend_from_slice(fixed.normalized().data());
    out.extend_from_slice(moving.normalized().data());
    Ok(out)
}

/// Predicted TRE in mm for a fixed volume and a moving volume already
/// resampled onto the fixed grid. Uses eval-mode batch norm; mutates nothing.
pub fn predict_tre(net: &Network, fixed: &Volume3D, moving_resampled: &Volume3D) -> Result<f64> {
    if !fixed.same_grid(moving_resampled) {
        return Err(Error::invalid("fixed and moving volumes must share a grid"));
    }
    let [c, d, h, w] = net.spec().input;
    let [nx, ny, nz] = fixed.dims();
    if c != 2 || [d, h, w] != [nz, ny, nx] {
        return Err(Error::invalid(format!(
            "network input {:?} does not match volume dims {:?}",
            net.spec().input,
            fixed.dims()
        )));
    }
    let input = stack_pair(fixed, moving_resampled)?;
    predict_stacked(net, &input)
}

/// As [`predict_tre`] for an already stacked and normalised input.
pub fn predict_stacked(net: &Network, input: &[f32]) -> Result<f64> {
    let [c, d, h, w] = net.spec().input;
    let x = Tensor::new(vec![1, c, d, h, w], input.iter().map(|&v| v as f64).collect())?;
    let out = net.predict_batch(&x)?;
    Ok(out[0] * net.spec().label_scale)
}
