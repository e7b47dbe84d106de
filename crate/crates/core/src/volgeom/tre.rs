use serde::{Deserialize, Serialize};

use super::{Mat4, Point3};
use crate::error::{Error, Result};

/// Organ surface points (world mm) on which the target registration error
/// is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePointSet {
    points: Vec<Point3>,
}

impl SurfacePointSet {
    pub const MIN_POINTS: usize = 3;

    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::invalid(format!(
                "surface needs at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("surface point coordinates must be finite"));
        }
        Ok(SurfacePointSet { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mean distance between each surface point mapped by `estimate` and by
/// `ground_truth`.
pub fn tre(surface: &SurfacePointSet, estimate: &Mat4, ground_truth: &Mat4) -> Result<f64> {
    if surface.points.is_empty() {
        return Err(Error::invalid("empty surface point set"));
    }
    let total: f64 = surface
        .points
        .iter()
        .map(|&p| {
            let a = estimate.transform_point(p);
            let b = ground_truth.transform_point(p);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(total / surface.points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgeom::{rigid_matrix, RigidParams};

    fn cube_corners() -> SurfacePointSet {
        let mut pts = Vec::new();
        for &x in &[-10.0, 10.0] {
            for &y in &[-10.0, 10.0] {
                for &z in &[-10.0, 10.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        SurfacePointSet::new(pts).unwrap()
    }

    #[test]
    fn identical_transforms_give_zero() {
        let m = rigid_matrix(&RigidParams::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0), [0.0; 3]).unwrap();
        assert_eq!(tre(&cube_corners(), &m, &m).unwrap(), 0.0);
    }

    #[test]
    fn translation_gives_its_norm() {
        let gt = rigid_matrix(&RigidParams::new(0.0, 0.0, 0.0, 3.0, -8.0, 20.0), [1.0; 3]).unwrap();
        let est = Mat4::translation([3.0, 4.0, 12.0]).mul(&gt);
        assert!((tre(&cube_corners(), &est, &gt).unwrap() - 13.0).abs() < 1e-9);
    }

    /// Brute force: rotate each corner with an explicit 2D rotation about z.
    #[test]
    fn cube_rotation_matches_brute_force() {
        let est = rigid_matrix(&RigidParams { rz: 10.0, ..Default::default() }, [0.0; 3]).unwrap();
        let (s, c) = 10f64.to_radians().sin_cos();
        let pts = cube_corners();
        let mut sum = 0.0;
        for p in pts.points() {
            let q = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
            sum += ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
        }
        let expected = sum / 8.0;
        let got = tre(&pts, &est, &Mat4::IDENTITY).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // Chord at radius 10*sqrt(2) for a 10 degree turn.
        let chord = 2.0 * 200f64.sqrt() * (5f64.to_radians()).sin();
        assert!((got - chord).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(SurfacePointSet::new(vec![]).is_err());
        assert!(SurfacePointSet::new(vec![[0.0; 3], [1.0; 3]]).is_err());
    }

    #[test]
    fn symmetric() {
        let a = rigid_matrix(&RigidParams::new(1.0, -2.0, 0.5, 7.0, 0.0, -3.0), [2.0; 3]).unwrap();
        let b = rigid_matrix(&RigidParams::new(-4.0, 0.0, 1.5, 0.0, 11.0, 2.0), [2.0; 3]).unwrap();
        let s = cube_corners();
        assert_eq!(tre(&s, &a, &b).unwrap(), tre(&s, &b, &a).unwrap());
    }
}
