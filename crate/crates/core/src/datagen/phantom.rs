use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgeom::{Geometry, Mat4, Point3, SurfacePointSet, Volume3D};

/// Grid and anatomy bounds for [`make_phantom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: f64,
    /// Range of organ semi-axis lengths, mm.
    pub semi_axis: [f64; 2],
    /// Maximum organ centre offset from the grid centre, mm.
    pub center_jitter: f64,
    pub surface_points: usize,
    /// Gaussian noise sigma of the MR-like channel.
    pub mr_noise: f64,
    /// Half-angle of the ultrasound cone, degrees.
    pub us_cone_half_angle: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [32, 32, 32],
            spacing: 2.0,
            semi_axis: [11.0, 16.0],
            center_jitter: 3.0,
            surface_points: 64,
            mr_noise: 0.02,
            us_cone_half_angle: 50.0,
        }
    }
}

/// A synthetic fixed/moving pair with known alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    /// MR-like.
    pub fixed: Volume3D,
    /// Ultrasound-like, on the same grid as `fixed`.
    pub moving: Volume3D,
    pub surface: SurfacePointSet,
    pub ground_truth: Mat4,
}

impl PhantomCase {
    /// Centre used for every rigid transform applied to this case.
    pub fn center(&self) -> Point3 {
        self.fixed.geometry().center()
    }
}

/// Randomised ellipsoid with a local rotation about z.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: Point3,
    axes: [f64; 3],
    /// cos and sin of the rotation about z.
    rot: [f64; 2],
}

impl Ellipsoid {
    fn local(&self, p: Point3) -> Point3 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let [c, s] = self.rot;
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    /// Approximate signed distance in mm, negative inside.
    fn distance(&self, p: Point3) -> f64 {
        let q = self.local(p);
        let r = (0..3).map(|i| (q[i] / self.axes[i]).powi(2)).sum::<f64>().sqrt();
        let mean = (self.axes[0] * self.axes[1] * self.axes[2]).cbrt();
        (r - 1.0) * mean
    }

    /// Implicit function, 0 on the surface.
    #[cfg(test)]
    fn implicit(&self, p: Point3) -> f64 {
        let q = self.local(p);
        (0..3).map(|i| (q[i] / self.axes[i]).powi(2)).sum::<f64>() - 1.0
    }

    fn surface_point(&self, unit: Point3) -> Point3 {
        let a = [unit[0] * self.axes[0], unit[1] * self.axes[1], unit[2] * self.axes[2]];
        let [c, s] = self.rot;
        [self.center[0] + c * a[0] - s * a[1], self.center[1] + s * a[0] + c * a[1], self.center[2] + a[2]]
    }
}

fn sphere(center: Point3, r: f64) -> Ellipsoid {
    Ellipsoid { center, axes: [r; 3], rot: [1.0, 0.0] }
}

/// Soft inside indicator with a ~1 mm transition.
fn inside(d: f64) -> f64 {
    1.0 / (1.0 + (d / 0.6).exp())
}

/// Sum of random plane waves; smooth texture in roughly [-1, 1].
struct Waves(Vec<([f64; 3], f64, f64)>);

impl Waves {
    fn new(rng: &mut ChaCha8Rng, count: usize, wavelength: [f64; 2]) -> Self {
        let waves = (0..count)
            .map(|_| {
                let mut dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                let k = std::f64::consts::TAU / rng.random_range(wavelength[0]..wavelength[1]);
                dir.iter_mut().for_each(|v| *v *= k / n);
                (dir, rng.random_range(0.0..std::f64::consts::TAU), 1.0 / count as f64)
            })
            .collect();
        Waves(waves)
    }

    fn at(&self, p: Point3) -> f64 {
        self.0.iter().map(|(k, phase, amp)| amp * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin()).sum::<f64>()
            * 2.0
    }
}

struct Anatomy {
    organ: Ellipsoid,
    gland: Ellipsoid,
    lesions: Vec<Ellipsoid>,
    bladder: Ellipsoid,
    /// Rectum axis (x, y) and radius; runs along z.
    rectum: (f64, f64, f64),
    texture: Waves,
}

impl Anatomy {
    fn rectum_distance(&self, p: Point3) -> f64 {
        let (x, y, r) = self.rectum;
        ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt() - r
    }
}

/// Weights of each tissue class at a point; they sum to 1.
struct Tissue {
    background: f64,
    organ: f64,
    gland: f64,
    lesion: f64,
    bladder: f64,
    rectum: f64,
    rectum_wall: f64,
}

fn tissue(a: &Anatomy, p: Point3) -> Tissue {
    let bladder = inside(a.bladder.distance(p));
    let rd = a.rectum_distance(p);
    let rectum = inside(rd);
    let wall = inside(rd - 2.0) - rectum;
    let organ_in = inside(a.organ.distance(p));
    let lesion = a.lesions.iter().map(|l| inside(l.distance(p))).fold(0.0, f64::max);
    let gland = inside(a.gland.distance(p));
    // Later structures occlude earlier ones.
    let mut rest = 1.0;
    let mut take = |w: f64| {
        let t = rest * w;
        rest -= t;
        t
    };
    let rectum = take(rectum);
    let rectum_wall = take(wall);
    let bladder = take(bladder);
    let lesion = take(lesion * organ_in);
    let gland = take(gland * organ_in);
    let organ = take(organ_in);
    Tissue { background: rest, organ, gland, lesion, bladder, rectum, rectum_wall }
}

/// Builds a deterministic phantom case from `seed`.
pub fn make_phantom(seed: u64, cfg: &PhantomConfig) -> Result<PhantomCase> {
    let geometry = Geometry::centered(cfg.dims, [cfg.spacing; 3])?;
    let [lo, hi] = cfg.semi_axis;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::config("semi-axis range must satisfy 0 < lo <= hi"));
    }
    if cfg.surface_points < SurfacePointSet::MIN_POINTS {
        return Err(Error::config("too few surface points"));
    }
    let half_extent = geometry.extent().map(|e| e / 2.0);
    let reach = hi + cfg.center_jitter + 2.0 * cfg.spacing;
    if half_extent.iter().any(|&h| reach > h) {
        return Err(Error::config(format!("organ reach {reach:.1} mm exceeds grid half-extent {half_extent:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = geometry.center();
    let mut jitter = || rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
    let center = [c[0] + jitter(), c[1] + jitter(), c[2] + jitter()];
    let axes = [rng.random_range(lo..=hi), rng.random_range(lo..=hi) * 0.85, rng.random_range(lo..=hi)];
    let angle = rng.random_range(-15f64..15.0).to_radians();
    let organ = Ellipsoid { center, axes, rot: [angle.cos(), angle.sin()] };
    let gland = Ellipsoid {
        center: [center[0], center[1] + 0.25 * axes[1], center[2] + 0.1 * axes[2]],
        axes: axes.map(|a| a * rng.random_range(0.45..0.6)),
        rot: organ.rot,
    };
    let lesions = (0..rng.random_range(1..=3))
        .map(|_| {
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.55..0.55));
            let p = organ.surface_point(u);
            sphere(p, rng.random_range(2.5..4.5))
        })
        .collect();
    let br = rng.random_range(8.0..11.0);
    let bladder = sphere(
        [
            center[0] + rng.random_range(-3.0..3.0),
            center[1] + axes[1] * 0.6 + br * 0.7,
            center[2] + axes[2] * 0.7 + br * 0.5,
        ],
        br,
    );
    let rr = rng.random_range(4.0..6.0);
    let rectum = (center[0] + rng.random_range(-2.0..2.0), center[1] - axes[1] - rr - 1.5, rr);
    let texture = Waves::new(&mut rng, 6, [14.0, 40.0]);
    let bias = Waves::new(&mut rng, 3, [80.0, 160.0]);
    let anatomy = Anatomy { organ, gland, lesions, bladder, rectum, texture };

    let surface = SurfacePointSet::new(
        fibonacci_sphere(cfg.surface_points).into_iter().map(|u| organ.surface_point(u)).collect(),
    )?;

    let noise = Normal::new(0.0, cfg.mr_noise).map_err(|e| Error::config(e.to_string()))?;
    let mr_rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x4d52);
    let mut fixed = Vec::with_capacity(geometry.len());
    let mut echo = Vec::with_capacity(geometry.len());
    let [nx, ny, nz] = geometry.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = geometry.world(i, j, k);
                let t = tissue(&anatomy, p);
                let tex = anatomy.texture.at(p);
                let mr = t.background * (0.32 + 0.08 * tex)
                    + t.organ * (0.62 + 0.04 * tex)
                    + t.gland * 0.42
                    + t.lesion * 0.2
                    + t.bladder * 0.95
                    + t.rectum * 0.06
                    + t.rectum_wall * 0.3;
                let b = 1.0 + 0.15 * bias.at(p);
                fixed.push((mr * b + noise.sample(mr_rng)) as f32);
                let us = t.background * (0.38 + 0.12 * tex * tex)
                    + t.organ * 0.22
                    + t.gland * 0.3
                    + t.lesion * 0.12
                    + t.bladder * 0.03
                    + t.rectum * 0.1
                    + t.rectum_wall * 0.9;
                echo.push(us);
            }
        }
    }
    let fixed = Volume3D::new(geometry, fixed)?;
    let moving = Volume3D::new(geometry, ultrasound(&geometry, &echo, &anatomy, cfg, seed)?)?;
    Ok(PhantomCase { fixed, moving, surface, ground_truth: Mat4::IDENTITY })
}

/// Boundary emphasis, speckle, depth attenuation and a cone-shaped field of
/// view from a probe sitting in the rectum.
fn ultrasound(g: &Geometry, echo: &[f64], a: &Anatomy, cfg: &PhantomConfig, seed: u64) -> Result<Vec<f32>> {
    let [nx, ny, nz] = g.dims;
    let at = |i: isize, j: isize, k: isize| {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        echo[c(i, nx) + nx * (c(j, ny) + ny * c(k, nz))]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5553);
    let probe = [a.rectum.0, a.rectum.1, a.organ.center[2]];
    let cos_half = cfg.us_cone_half_angle.to_radians().cos();
    let mut out = Vec::with_capacity(echo.len());
    for k in 0..nz as isize {
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let p = g.world(i as usize, j as usize, k as usize);
                let d = [p[0] - probe[0], p[1] - probe[1], p[2] - probe[2]];
                let depth = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                // Cone opens anteriorly (+y) from just behind the probe.
                let behind = depth.max(1e-9);
                if d[1] / behind < cos_half && depth > a.rectum.2 + 2.0 {
                    out.push(0.0);
                    continue;
                }
                let gx = at(i + 1, j, k) - at(i - 1, j, k);
                let gy = at(i, j + 1, k) - at(i, j - 1, k);
                let gz = at(i, j, k + 1) - at(i, j, k - 1);
                let edge = (gx * gx + gy * gy + gz * gz).sqrt();
                let base = echo[i as usize + nx * (j as usize + ny * k as usize)] + 3.0 * edge;
                // Rayleigh-distributed amplitude with unit mean.
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let speckle = (re * re + im * im).sqrt() / (std::f64::consts::PI / 2.0).sqrt();
                let atten = (-0.012 * depth).exp();
                out.push((base * (0.5 + 0.5 * speckle) * atten) as f32);
            }
        }
    }
    Ok(out)
}

/// Quasi-uniform unit vectors on the sphere.
pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}
