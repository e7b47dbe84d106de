use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgeom::Volume3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MindConfig {
    pub patch_radius: usize,
    pub neighborhood: Vec<[i32; 3]>,
    pub gaussian_sigma: f64,
    pub variance_floor: f64,
}

impl Default for MindConfig {
    fn default() -> Self {
        MindConfig {
            patch_radius: 1,
            neighborhood: vec![[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            gaussian_sigma: 0.5,
            variance_floor: 1e-6,
        }
    }
}

impl MindConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 {
            return Err(Error::config("MIND patch radius must be at least 1"));
        }
        if self.neighborhood.is_empty() {
            return Err(Error::config("MIND neighbourhood is empty"));
        }
        if !(self.gaussian_sigma > 0.0) || !self.gaussian_sigma.is_finite() {
            return Err(Error::config("MIND sigma must be positive"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::config("MIND variance floor must be positive"));
        }
        Ok(())
    }

    /// Normalised 1-D Gaussian taps for offsets `-r..=r`. The patch weight
    /// of an offset is the product of its three taps.
    fn taps(&self) -> Vec<f64> {
        let r = self.patch_radius as i64;
        let raw: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * self.gaussian_sigma.powi(2))).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

/// One descriptor vector per voxel, stored voxel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MindDescriptor {
    dims: [usize; 3],
    components: usize,
    data: Vec<f64>,
}

impl MindDescriptor {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn voxel(&self, index: usize) -> &[f64] {
        &self.data[index * self.components..(index + 1) * self.components]
    }
}

/// Self-similarity descriptor. Volumes are extended by edge replication, so
/// boundary patches see the same intensities as their nearest interior voxel.
pub fn mind_descriptor(v: &Volume3D, cfg: &MindConfig) -> Result<MindDescriptor> {
    cfg.validate()?;
    let dims = v.dims();
    let [nx, ny, nz] = dims;
    let data = v.data();
    let taps = cfg.taps();
    let r = cfg.patch_radius;
    let k = cfg.neighborhood.len();
    let at = |x: i64, y: i64, z: i64| -> f64 {
        let c = |p: i64, n: usize| p.clamp(0, n as i64 - 1) as usize;
        data[c(x, nx) + nx * (c(y, ny) + ny * c(z, nz))] as f64
    };

    // Patch distance for each neighbour offset: squared differences on a grid
    // padded by the patch radius, then a separable Gaussian filter.
    let [px, py, pz] = dims.map(|n| n + 2 * r);
    let dists: Vec<Vec<f64>> = cfg
        .neighborhood
        .par_iter()
        .map(|off| {
            let [ox, oy, oz] = off.map(i64::from);
            let ri = r as i64;
            let mut sq = Vec::with_capacity(px * py * pz);
            for z in 0..pz as i64 {
                for y in 0..py as i64 {
                    for x in 0..px as i64 {
                        let (x, y, z) = (x - ri, y - ri, z - ri);
                        let d = at(x, y, z) - at(x + ox, y + oy, z + oz);
                        sq.push(d * d);
                    }
                }
            }
            let mut fx = vec![0.0; nx * py * pz];
            for (row, out) in sq.chunks_exact(px).zip(fx.chunks_exact_mut(nx)) {
                for (x, o) in out.iter_mut().enumerate() {
                    *o = taps.iter().zip(&row[x..]).map(|(w, v)| w * v).sum();
                }
            }
            let mut fy = vec![0.0; nx * ny * pz];
            for z in 0..pz {
                for y in 0..ny {
                    for x in 0..nx {
                        fy[x + nx * (y + ny * z)] =
                            taps.iter().enumerate().map(|(j, w)| w * fx[x + nx * (y + j + py * z)]).sum();
                    }
                }
            }
            let mut fz = vec![0.0; nx * ny * nz];
            let plane = nx * ny;
            for z in 0..nz {
                for i in 0..plane {
                    fz[i + plane * z] = taps.iter().enumerate().map(|(j, w)| w * fy[i + plane * (z + j)]).sum();
                }
            }
            fz
        })
        .collect();

    let mut out = vec![0.0; data.len() * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, cell)| {
        for (c, d) in cell.iter_mut().zip(&dists) {
            *c = d[i];
        }
        let var = (cell.iter().sum::<f64>() / k as f64).max(cfg.variance_floor);
        cell.iter_mut().for_each(|c| *c = (-*c / var).exp());
        let max = cell.iter().cloned().fold(0.0, f64::max);
        cell.iter_mut().for_each(|c| *c /= max);
    });
    Ok(MindDescriptor { dims, components: k, data: out })
}

/// Mean squared descriptor difference over voxels and components.
pub fn mind_ssd(a: &Volume3D, b: &Volume3D, cfg: &MindConfig) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::invalid("MIND-SSD needs volumes on the same grid"));
    }
    mind_ssd_descriptors(&mind_descriptor(a, cfg)?, &mind_descriptor(b, cfg)?)
}

/// As [`mind_ssd`] for precomputed descriptors.
pub fn mind_ssd_descriptors(a: &MindDescriptor, b: &MindDescriptor) -> Result<f64> {
    if a.dims != b.dims || a.components != b.components {
        return Err(Error::invalid("MIND descriptors have different shapes"));
    }
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data.len() as f64)
}
