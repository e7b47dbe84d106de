use rayon::prelude::*;

use super::{Geometry, Mat4, Volume3D};
use crate::error::{Error, Result};

/// Pulls `moving` onto `grid` through `transform`.
///
/// `transform` maps moving space into the output space, so each output
/// voxel's world point is taken back through its inverse and sampled
/// trilinearly. Samples outside the moving grid are 0.
pub fn resample(moving: &Volume3D, transform: &Mat4, grid: &Geometry) -> Result<Volume3D> {
    grid.validate()?;
    let mut out = vec![0.0f32; grid.len()];
    resample_into(moving, transform, grid, &mut out)?;
    Volume3D::new(*grid, out)
}

/// As [`resample`], writing into a caller-owned buffer of `grid.len()` values.
pub fn resample_into(moving: &Volume3D, transform: &Mat4, grid: &Geometry, out: &mut [f32]) -> Result<()> {
    if out.len() != grid.len() {
        return Err(Error::shape(format!("output buffer has {} values, grid needs {}", out.len(), grid.len())));
    }
    let inverse = transform.inverse()?;
    let map = index_map(&inverse, moving.geometry(), grid);
    let [nx, ny, _] = grid.dims;
    let sampler = Trilinear::new(moving);
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            let row = &mut slab[j * nx..(j + 1) * nx];
            let base: [f64; 3] = std::array::from_fn(|r| map[r][1] * j as f64 + map[r][2] * k as f64 + map[r][3]);
            for (i, v) in row.iter_mut().enumerate() {
                let u: [f64; 3] = std::array::from_fn(|r| map[r][0] * i as f64 + base[r]);
                *v = sampler.sample(u);
            }
        }
    });
    Ok(())
}

/// Affine map from output voxel index to continuous moving voxel index:
/// `S_m^-1 * T(-o_m) * inverse * T(o_g) * S_g`.
fn index_map(inverse: &Mat4, moving: &Geometry, grid: &Geometry) -> [[f64; 4]; 3] {
    let m = &inverse.0;
    let mut a = [[0.0; 4]; 3];
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = m[r][c] * grid.spacing[c] / moving.spacing[r];
        }
        let world = m[r][0] * grid.origin[0] + m[r][1] * grid.origin[1] + m[r][2] * grid.origin[2] + m[r][3];
        a[r][3] = (world - moving.origin[r]) / moving.spacing[r];
    }
    a
}

struct Trilinear<'a> {
    data: &'a [f32],
    dims: [usize; 3],
}

impl<'a> Trilinear<'a> {
    fn new(v: &'a Volume3D) -> Self {
        Trilinear { data: v.data(), dims: v.dims() }
    }

    /// Lower corner index and fractional weight along one axis, or `None`
    /// outside `[0, n - 1]`.
    #[inline]
    fn axis(u: f64, n: usize) -> Option<(usize, f64)> {
        let upper = (n - 1) as f64;
        if !(u >= 0.0 && u <= upper) {
            return None;
        }
        if n == 1 {
            return Some((0, 0.0));
        }
        let i0 = (u.floor() as usize).min(n - 2);
        Some((i0, u - i0 as f64))
    }

    #[inline]
    fn sample(&self, u: [f64; 3]) -> f32 {
        let [nx, ny, nz] = self.dims;
        let (Some((i, fx)), Some((j, fy)), Some((k, fz))) =
            (Self::axis(u[0], nx), Self::axis(u[1], ny), Self::axis(u[2], nz))
        else {
            return 0.0;
        };
        let dx = usize::from(nx > 1);
        let dy = if ny > 1 { nx } else { 0 };
        let dz = if nz > 1 { nx * ny } else { 0 };
        let base = i + nx * (j + ny * k);
        let at = |off: usize| self.data[base + off] as f64;
        let c00 = at(0) * (1.0 - fx) + at(dx) * fx;
        let c10 = at(dy) * (1.0 - fx) + at(dy + dx) * fx;
        let c01 = at(dz) * (1.0 - fx) + at(dz + dx) * fx;
        let c11 = at(dz + dy) * (1.0 - fx) + at(dz + dy + dx) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        (c0 * (1.0 - fz) + c1 * fz) as f32
    }
}
