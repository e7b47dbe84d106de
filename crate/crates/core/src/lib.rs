// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod volgeom;

pub use datagen::PhantomCase;
pub use error::{Error, Result};
pub use metrics::MetricKind;
pub use nn::{Network, TrainingSample};
pub use optim::OptimizerKind;
pub use pipeline::{RegistrationConfig, RegistrationResult};
pub use volgeom::{Geometry, Mat4, RigidParams, SurfacePointSet, Volume3D};
