//! Occlusion-aware distances for superquadric configurations.
//!
//! There is no closed-form point-to-superquadric distance, so surfaces are
//! represented by `N` samples. Occlusion is decided by marching `L` samples
//! along the line of sight and watching the inside-outside function for a
//! sign change. Samples facing away from an outside camera are dropped.

use crate::error::{Error, Result};
use crate::geometry::{rotation_matrix, CameraModel, Mat3, Vec3};
use crate::par;

/// `f < -INSIDE_TOL` counts as inside; keeps points lying on the surface
/// from registering a spurious sign change through roundoff.
const INSIDE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqEvalConfig {
    pub line_samples: usize,
    pub surface_samples: usize,
}

impl Default for SqEvalConfig {
    fn default() -> Self {
        SqEvalConfig {
            line_samples: 256,
            surface_samples: 2048,
        }
    }
}

impl SqEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.line_samples < 2 {
            return Err(Error::invalid("line samples", "need at least 2"));
        }
        if self.surface_samples < 8 {
            return Err(Error::invalid("surface samples", "need at least 8"));
        }
        Ok(())
    }
}

/// `sign(b)·|b|^e`.
fn signed_pow(b: f64, e: f64) -> f64 {
    b.signum() * b.abs().powf(e)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Superquadric {
    eps1: f64,
    eps2: f64,
    half_extents: Vec3,
    rotation: Vec3,
    translation: Vec3,
    matrix: Mat3,
}

impl Superquadric {
    pub fn new(
        eps1: f64,
        eps2: f64,
        half_extents: Vec3,
        rotation: Vec3,
        translation: Vec3,
    ) -> Result<Self> {
        for (name, e) in [("eps1", eps1), ("eps2", eps2)] {
            if !(e.is_finite() && e > 0.0 && e <= 2.0) {
                return Err(Error::invalid(
                    "superquadric",
                    format!("{name} = {e} outside (0, 2]"),
                ));
            }
        }
        if !half_extents.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(Error::invalid(
                "superquadric",
                "half-extents must be positive",
            ));
        }
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("superquadric", "pose must be finite"));
        }
        Ok(Superquadric {
            eps1,
            eps2,
            half_extents,
            rotation,
            translation,
            matrix: rotation_matrix(&rotation),
        })
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    pub fn half_extents(&self) -> Vec3 {
        self.half_extents
    }

    pub fn rotation(&self) -> Vec3 {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn to_local(&self, y: &Vec3) -> Vec3 {
        self.matrix * (y - self.translation)
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.matrix.transpose() * p + self.translation
    }

    /// Inside-outside function in the local frame.
    pub fn inside_outside_local(&self, p: &Vec3) -> f64 {
        let a = &self.half_extents;
        let e1 = 2.0 / self.eps1;
        let e2 = 2.0 / self.eps2;
        let xy = (p.x / a.x).abs().powf(e2) + (p.y / a.y).abs().powf(e2);
        xy.powf(self.eps2 / self.eps1) + (p.z / a.z).abs().powf(e1) - 1.0
    }

    /// Negative inside, zero on the surface, positive outside.
    pub fn inside_outside(&self, y: &Vec3) -> f64 {
        self.inside_outside_local(&self.to_local(y))
    }

    pub fn surface_point_local(&self, eta: f64, omega: f64) -> Vec3 {
        let a = &self.half_extents;
        let ce = signed_pow(eta.cos(), self.eps1);
        Vec3::new(
            a.x * ce * signed_pow(omega.cos(), self.eps2),
            a.y * ce * signed_pow(omega.sin(), self.eps2),
            a.z * signed_pow(eta.sin(), self.eps1),
        )
    }

    /// Outward normal in the local frame, not normalised.
    pub fn normal_local(&self, eta: f64, omega: f64) -> Vec3 {
        let a = &self.half_extents;
        let ce = signed_pow(eta.cos(), 2.0 - self.eps1);
        Vec3::new(
            ce * signed_pow(omega.cos(), 2.0 - self.eps2) / a.x,
            ce * signed_pow(omega.sin(), 2.0 - self.eps2) / a.y,
            signed_pow(eta.sin(), 2.0 - self.eps1) / a.z,
        )
    }

    pub fn surface_point(&self, eta: f64, omega: f64) -> Vec3 {
        self.to_world(&self.surface_point_local(eta, omega))
    }

    /// Unit outward normal in the world frame.
    pub fn normal(&self, eta: f64, omega: f64) -> Vec3 {
        (self.matrix.transpose() * self.normal_local(eta, omega)).normalize()
    }

    /// `N` surface parameters spread approximately uniformly by area.
    ///
    /// A dense `(η, ω)` grid is weighted by the area of each cell's image and
    /// resampled systematically, which keeps the result deterministic.
    pub fn surface_parameters(&self, n: usize) -> Vec<(f64, f64)> {
        use std::f64::consts::PI;
        let rows = ((n as f64).sqrt().ceil() as usize * 4).max(16);
        let cols = 2 * rows;
        let d_eta = PI / rows as f64;
        let d_omega = 2.0 * PI / cols as f64;
        let mut cells = Vec::with_capacity(rows * cols);
        let mut cumulative = Vec::with_capacity(rows * cols);
        let mut acc = 0.0;
        for i in 0..rows {
            let e0 = -PI / 2.0 + i as f64 * d_eta;
            for j in 0..cols {
                let w0 = -PI + j as f64 * d_omega;
                let p00 = self.surface_point_local(e0, w0);
                let p11 = self.surface_point_local(e0 + d_eta, w0 + d_omega);
                let p01 = self.surface_point_local(e0, w0 + d_omega);
                let p10 = self.surface_point_local(e0 + d_eta, w0);
                acc += 0.5 * (p11 - p00).cross(&(p10 - p01)).norm();
                cumulative.push(acc);
                cells.push((e0 + 0.5 * d_eta, w0 + 0.5 * d_omega));
            }
        }
        let step = acc / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cell = 0;
        for k in 0..n {
            let target = (k as f64 + 0.5) * step;
            while cell + 1 < cumulative.len() && cumulative[cell] < target {
                cell += 1;
            }
            out.push(cells[cell]);
        }
        out
    }

    /// Surface samples seen from `camera`: back-facing samples are dropped
    /// when the camera is outside the superquadric.
    pub fn visible_points(&self, camera: &CameraModel, config: &SqEvalConfig) -> Vec<Vec3> {
        let c = self.to_local(&camera.center);
        let outside = self.inside_outside_local(&c) > 0.0;
        self.surface_parameters(config.surface_samples)
            .into_iter()
            .filter(|&(eta, omega)| {
                !outside || {
                    let p = self.surface_point_local(eta, omega);
                    (p - c).dot(&self.normal_local(eta, omega)) <= 0.0
                }
            })
            .map(|(eta, omega)| self.surface_point(eta, omega))
            .collect()
    }

    pub fn surface_points(&self, n: usize) -> Vec<Vec3> {
        self.surface_parameters(n)
            .into_iter()
            .map(|(eta, omega)| self.surface_point(eta, omega))
            .collect()
    }

    /// Does the inside-outside function change sign along the `L` samples
    /// `c + (k/L)(y − c)`, `k = 1..=L`?
    pub fn occludes(&self, y: &Vec3, camera: &CameraModel, config: &SqEvalConfig) -> bool {
        let c = self.to_local(&camera.center);
        let p = self.to_local(y);
        let l = config.line_samples;
        let mut first: Option<bool> = None;
        for k in 1..=l {
            let s = c + (p - c) * (k as f64 / l as f64);
            let inside = self.inside_outside_local(&s) < -INSIDE_TOL;
            match first {
                None => first = Some(inside),
                Some(f) if f != inside => return true,
                _ => {}
            }
        }
        false
    }
}

pub fn sq_inside_outside(point: &Vec3, sq: &Superquadric) -> f64 {
    sq.inside_outside(point)
}

pub fn sq_occludes(
    point: &Vec3,
    sq: &Superquadric,
    camera: &CameraModel,
    config: &SqEvalConfig,
) -> bool {
    sq.occludes(point, camera, config)
}

/// Superquadrics with their visible and full sample sets precomputed.
#[derive(Clone, Debug)]
pub struct SqScene {
    primitives: Vec<Superquadric>,
    visible: Vec<Vec<Vec3>>,
    surface: Vec<Vec<Vec3>>,
    camera: CameraModel,
    config: SqEvalConfig,
}

fn nearest(samples: &[Vec3], y: &Vec3) -> f64 {
    samples
        .iter()
        .map(|p| (p - y).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

impl SqScene {
    pub fn new(
        primitives: Vec<Superquadric>,
        camera: CameraModel,
        config: SqEvalConfig,
    ) -> Result<Self> {
        config.validate()?;
        if primitives.is_empty() {
            return Err(Error::NoPrimitives);
        }
        let visible = primitives
            .iter()
            .map(|s| s.visible_points(&camera, &config))
            .collect();
        let surface = primitives
            .iter()
            .map(|s| s.surface_points(config.surface_samples))
            .collect();
        Ok(SqScene {
            primitives,
            visible,
            surface,
            camera,
            config,
        })
    }

    pub fn primitives(&self) -> &[Superquadric] {
        &self.primitives
    }

    pub fn visible(&self, i: usize) -> &[Vec3] {
        &self.visible[i]
    }

    /// Distance to the nearest visible sample of primitive `i`.
    pub fn distance_to(&self, i: usize, y: &Vec3) -> f64 {
        nearest(&self.visible[i], y)
    }

    /// Plain distance to the nearest surface sample of any primitive.
    pub fn min_distance(&self, y: &Vec3) -> f64 {
        self.surface
            .iter()
            .map(|s| nearest(s, y))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn oa_distance(&self, y: &Vec3) -> f64 {
        let mut closest = f64::INFINITY;
        let mut occluding = 0.0f64;
        for (i, sq) in self.primitives.iter().enumerate() {
            let d = self.distance_to(i, y);
            closest = closest.min(d);
            if sq.occludes(y, &self.camera, &self.config) {
                occluding = occluding.max(d);
            }
        }
        closest.max(occluding)
    }

    pub fn oa_distances(&self, points: &[Vec3]) -> Vec<f64> {
        par::map_indices(points.len(), |i| self.oa_distance(&points[i]))
    }

    pub fn min_distances(&self, points: &[Vec3]) -> Vec<f64> {
        par::map_indices(points.len(), |i| self.min_distance(&points[i]))
    }
}

/// One-off occlusion-aware distance; use [`SqScene`] for many points.
pub fn sq_oa_distance(
    sqs: &[Superquadric],
    point: &Vec3,
    camera: &CameraModel,
    config: &SqEvalConfig,
) -> Result<f64> {
    Ok(SqScene::new(sqs.to_vec(), *camera, *config)?.oa_distance(point))
}

/// Largest distance from any sample to its nearest neighbour among the
/// others; bounds how far a surface point can be from the sample set.
pub fn sampling_resolution(samples: &[Vec3]) -> f64 {
    let per_point = par::map_indices(samples.len(), |i| {
        samples
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| (q - samples[i]).norm_squared())
            .fold(f64::INFINITY, f64::min)
    });
    per_point.into_iter().fold(0.0, f64::max).sqrt()
}
