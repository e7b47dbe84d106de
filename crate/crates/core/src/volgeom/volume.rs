use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};

/// Sampling grid of a volume: voxel counts, voxel size and the world
/// position of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let geometry = Geometry { dims, spacing, origin };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Grid whose centre voxel sits at the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = std::array::from_fn(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive and finite, got {:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Point3 {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// World position of the geometric centre of the grid.
    pub fn center(&self) -> Point3 {
        std::array::from_fn(|a| self.origin[a] + 0.5 * (self.dims[a] as f64 - 1.0) * self.spacing[a])
    }

    /// Physical extent covered by voxel centres along each axis.
    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.dims[a] as f64 - 1.0) * self.spacing[a])
    }
}

/// Scalar 3D image, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::shape(format!(
                "volume data has {} values, geometry {:?} needs {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume intensity at index {pos}")));
        }
        Ok(Volume3D { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Volume3D { data: vec![0.0; geometry.len()], geometry }
    }

    /// Samples `f` at every voxel's world position.
    pub fn from_world_fn(geometry: Geometry, f: impl Fn(Point3) -> f64) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(geometry.world(i, j, k)) as f32);
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Maps intensities affinely onto `[0, 1]`. A constant volume maps to zeros.
    pub fn normalized(&self) -> Volume3D {
        let (lo, hi) = self.min_max();
        let range = hi as f64 - lo as f64;
        let data = if range > 0.0 {
            self.data.iter().map(|&v| ((v as f64 - lo as f64) / range) as f32).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Volume3D { geometry: self.geometry, data }
    }

    /// Returns a copy with every intensity mapped through `f`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume3D> {
        Volume3D::new(self.geometry, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.geometry == other.geometry
    }
}
