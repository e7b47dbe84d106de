//! Volumes, rigid transforms, trilinear resampling and the surface-point TRE.
//!
//! All geometry is expressed in world millimetres. A voxel index `(i, j, k)`
//! maps to `origin + (i, j, k) * spacing`; there is no direction-cosine
//! matrix, so every volume is axis aligned.

mod io;
mod resample;
mod transform;
mod tre;
mod volume;

pub use io::{read_volume, write_volume, VolumeHeader};
pub use resample::{resample, resample_into};
pub use transform::{compose, rigid_matrix, Mat4, RigidParams};
pub use tre::{tre, SurfacePointSet};
pub use volume::{Geometry, Volume3D};

pub type Point3 = [f64; 3];
