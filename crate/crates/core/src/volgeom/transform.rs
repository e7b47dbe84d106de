use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};

/// Six rigid registration parameters: translations in mm, rotations in
/// degrees about the x, y and z axes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl RigidParams {
    pub const IDENTITY: RigidParams = RigidParams { tx: 0.0, ty: 0.0, tz: 0.0, rx: 0.0, ry: 0.0, rz: 0.0 };

    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        RigidParams { tx, ty, tz, rx, ry, rz }
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        RigidParams { tx, ty, tz, ..Self::IDENTITY }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        RigidParams::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; 6] =
            v.try_into().map_err(|_| Error::invalid(format!("expected 6 rigid parameters, got {}", v.len())))?;
        Ok(Self::from_array(arr))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::str::FromStr for RigidParams {
    type Err = Error;

    /// Parses `"tx,ty,tz,rx,ry,rz"`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad parameter {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        RigidParams::from_slice(&values)
    }
}

/// Homogeneous 4x4 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Default for Mat4 {
    fn default() -> Self {
        Mat4::IDENTITY
    }
}

impl Mat4 {
    pub const IDENTITY: Mat4 =
        Mat4([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);

    pub fn translation(t: Point3) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        m.0[0][3] = t[0];
        m.0[1][3] = t[1];
        m.0[2][3] = t[2];
        m
    }

    pub fn rotation_x(degrees: f64) -> Mat4 {
        let (s, c) = degrees.to_radians().sin_cos();
        Mat4([[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]])
    }

    pub fn rotation_y(degrees: f64) -> Mat4 {
        let (s, c) = degrees.to_radians().sin_cos();
        Mat4([[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]])
    }

    pub fn rotation_z(degrees: f64) -> Mat4 {
        let (s, c) = degrees.to_radians().sin_cos();
        Mat4([[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, rhs: &Mat4) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        Mat4(out)
    }

    #[inline]
    pub fn transform_point(&self, p: Point3) -> Point3 {
        let m = &self.0;
        std::array::from_fn(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }

    pub fn translation_part(&self) -> Point3 {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    fn linear_det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse of an affine matrix (bottom row `0 0 0 1`).
    pub fn inverse(&self) -> Result<Mat4> {
        let m = &self.0;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("matrix is not affine"));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let det = self.linear_det();
        let scale = m[..3].iter().flat_map(|row| row[..3].iter()).fold(0.0f64, |acc, v| acc.max(v.abs()));
        if det.abs() <= 1e-12 * scale.powi(3).max(f64::MIN_POSITIVE) || det == 0.0 {
            return Err(Error::invalid("singular transform"));
        }
        let mut inv = [[0.0; 4]; 4];
        // Adjugate of the 3x3 block.
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
        for r in 0..3 {
            inv[r][3] = -(inv[r][0] * m[0][3] + inv[r][1] * m[1][3] + inv[r][2] * m[2][3]);
        }
        inv[3][3] = 1.0;
        Ok(Mat4(inv))
    }

    /// True when the bottom row is `0 0 0 1` and the linear block is a proper
    /// rotation to within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let m = &self.0;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return false;
        }
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][a] * m[k][b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot - expected).abs() > tol {
                    return false;
                }
            }
        }
        (self.linear_det() - 1.0).abs() <= tol
    }

    pub fn max_abs_diff(&self, other: &Mat4) -> f64 {
        self.0.iter().flatten().zip(other.0.iter().flatten()).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Rigid transform `T(c) * T(t) * Rz * Ry * Rx * T(-c)`: rotations are
/// applied x first, then y, then z, all about `center`, followed by the
/// translation.
pub fn rigid_matrix(params: &RigidParams, center: Point3) -> Result<Mat4> {
    if !params.is_finite() || center.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("rigid parameters and center must be finite"));
    }
    let rotation = Mat4::rotation_z(params.rz).mul(&Mat4::rotation_y(params.ry)).mul(&Mat4::rotation_x(params.rx));
    Ok(Mat4::translation(center)
        .mul(&Mat4::translation([params.tx, params.ty, params.tz]))
        .mul(&rotation)
        .mul(&Mat4::translation(center.map(|c| -c))))
}

/// Matrix product `a * b`: `b` is applied first.
pub fn compose(a: &Mat4, b: &Mat4) -> Mat4 {
    a.mul(b)
}
