//! Cuboid primitives, pinhole cameras and (occlusion-aware) point distances.
//!
//! A cuboid is stored as half-extents `a`, an angle-axis rotation `r` and a
//! translation `t`. The rotation maps world coordinates into the cuboid frame:
//! `ŷ = R(y - t)` with `R = exp([r]×)`. In its own frame a cuboid is the box
//! `[-a_x, a_x] × [-a_y, a_y] × [-a_z, a_z]`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `d(h, x)` when deciding whether a sight-line intersection
/// lies on the cuboid surface.
pub const SURFACE_EPS: f64 = 1e-9;

/// Sight lines with `|vᵀe|` below this never hit the corresponding face plane.
pub const PARALLEL_EPS: f64 = 1e-12;

const SMALL_ANGLE: f64 = 1e-8;

/// Rodrigues' formula, switching to a second-order expansion near identity.
pub fn rotation_matrix(r: &Vec3) -> Mat3 {
    let theta2 = r.norm_squared();
    let k = r.cross_matrix();
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Logarithm of a rotation matrix, returned with angle in `[0, π]`.
pub fn rotation_log(m: &Mat3) -> Vec3 {
    // Shepperd's method keeps the axis accurate near θ = π.
    let trace = m.trace();
    let (w, x, y, z);
    if trace > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
        let s = (1.0 + trace).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] >= m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let (w, v) = if w < 0.0 {
        (-w, -Vec3::new(x, y, z))
    } else {
        (w, Vec3::new(x, y, z))
    };
    let vn = v.norm();
    if vn < 1e-300 {
        return Vec3::zeros();
    }
    let theta = 2.0 * vn.atan2(w);
    v * (theta / vn)
}

/// Map an angle-axis vector onto the equivalent one with angle in `[0, π]`.
pub fn canonical_angle_axis(r: &Vec3) -> Vec3 {
    let theta = r.norm();
    if theta <= PI {
        return *r;
    }
    let axis = r / theta;
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        -axis * (2.0 * PI - wrapped)
    } else {
        axis * wrapped
    }
}

/// One of the six cuboid sides, ordered `+x, -x, +y, -y, +z, -z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::PosX,
        Face::NegX,
        Face::PosY,
        Face::NegY,
        Face::PosZ,
        Face::NegZ,
    ];

    /// 1-based face number.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(index: usize) -> Option<Face> {
        index.checked_sub(1).and_then(|i| Face::ALL.get(i).copied())
    }

    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn sign(self) -> f64 {
        if (self as usize).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

/// Pinhole intrinsics plus the camera centre in world coordinates.
///
/// The camera looks down `+z` with image rows growing along `+y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub center: Vec3,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            if !v.is_finite() {
                return Err(Error::invalid("camera", format!("{name} is not finite")));
            }
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            center: Vec3::zeros(),
        })
    }

    pub fn with_center(mut self, center: Vec3) -> Self {
        self.center = center;
        self
    }

    /// World point seen at pixel `(u, v)` with depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        self.center + Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Pixel coordinates `(u, v)` of a world point in front of the camera.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let q = p - self.center;
        (self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy)
    }

    /// Viewing ray direction (unnormalised, unit `z`) through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// An oriented box. Construct with [`Cuboid::new`] to enforce invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CuboidRecord", into = "CuboidRecord")]
pub struct Cuboid {
    half_extents: Vec3,
    rotation: Vec3,
    translation: Vec3,
    matrix: Mat3,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct CuboidRecord {
    half_extents: [f64; 3],
    rotation: [f64; 3],
    translation: [f64; 3],
}

impl TryFrom<CuboidRecord> for Cuboid {
    type Error = Error;

    fn try_from(r: CuboidRecord) -> Result<Self> {
        Cuboid::new(
            r.half_extents.into(),
            r.rotation.into(),
            r.translation.into(),
        )
    }
}

impl From<Cuboid> for CuboidRecord {
    fn from(c: Cuboid) -> Self {
        CuboidRecord {
            half_extents: c.half_extents.into(),
            rotation: c.rotation.into(),
            translation: c.translation.into(),
        }
    }
}

impl Cuboid {
    pub fn new(half_extents: Vec3, rotation: Vec3, translation: Vec3) -> Result<Self> {
        if half_extents.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::invalid(
                "cuboid",
                format!("half-extents must be positive and finite, got {half_extents:?}"),
            ));
        }
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("cuboid", "pose must be finite"));
        }
        let rotation = canonical_angle_axis(&rotation);
        Ok(Cuboid {
            half_extents,
            rotation,
            translation,
            matrix: rotation_matrix(&rotation),
        })
    }

    pub fn axis_aligned(half_extents: Vec3, translation: Vec3) -> Result<Self> {
        Cuboid::new(half_extents, Vec3::zeros(), translation)
    }

    /// Build from a world→cuboid rotation matrix.
    pub fn from_rotation_matrix(
        half_extents: Vec3,
        matrix: &Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        Cuboid::new(half_extents, rotation_log(matrix), translation)
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

    /// World→cuboid rotation matrix `R`.
    pub fn rotation_matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// The nine parameters `(a_x, a_y, a_z, r, t)`.
    pub fn params(&self) -> [f64; 9] {
        let (a, r, t) = (self.half_extents, self.rotation, self.translation);
        [a.x, a.y, a.z, r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn from_params(p: &[f64; 9]) -> Result<Self> {
        Cuboid::new(
            Vec3::new(p[0], p[1], p[2]),
            Vec3::new(p[3], p[4], p[5]),
            Vec3::new(p[6], p[7], p[8]),
        )
    }

    pub fn to_local(&self, y: &Vec3) -> Vec3 {
        self.matrix * (y - self.translation)
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.matrix.transpose() * p + self.translation
    }

    pub fn squared_distance(&self, y: &Vec3) -> f64 {
        squared_distance_local(&self.half_extents, &self.to_local(y))
    }

    pub fn distance(&self, y: &Vec3) -> f64 {
        self.squared_distance(y).sqrt()
    }

    pub fn face_squared_distance(&self, y: &Vec3, face: Face) -> f64 {
        face_squared_distance_local(&self.half_extents, &self.to_local(y), face)
    }

    pub fn face_distance(&self, y: &Vec3, face: Face) -> f64 {
        self.face_squared_distance(y, face).sqrt()
    }

    /// Whether the closed box contains `y`.
    pub fn contains(&self, y: &Vec3) -> bool {
        let p = self.to_local(y);
        (0..3).all(|k| p[k].abs() <= self.half_extents[k])
    }

    /// Whether `face` blocks the line of sight from `camera` to `y`.
    pub fn occludes(&self, y: &Vec3, face: Face, camera: &CameraModel) -> bool {
        occludes_local(
            &self.half_extents,
            &self.to_local(y),
            &self.to_local(&camera.center),
            face,
        )
    }

    /// The eight corners in world coordinates; bit `k` of the index selects
    /// the sign along axis `k`.
    pub fn corners(&self) -> [Vec3; 8] {
        let a = self.half_extents;
        std::array::from_fn(|i| {
            let s = |k: usize| if i >> k & 1 == 1 { 1.0 } else { -1.0 };
            self.to_world(&Vec3::new(s(0) * a.x, s(1) * a.y, s(2) * a.z))
        })
    }

    /// Apply the rigid motion `x ↦ Q x + s` to the cuboid.
    pub fn transformed(&self, q: &Mat3, s: &Vec3) -> Result<Self> {
        let matrix = self.matrix * q.transpose();
        Cuboid::from_rotation_matrix(self.half_extents, &matrix, q * self.translation + s)
    }
}

/// `ŷ = R(y − t)`.
pub fn to_cuboid_frame(point: &Vec3, cuboid: &Cuboid) -> Vec3 {
    cuboid.to_local(point)
}

pub fn from_cuboid_frame(point: &Vec3, cuboid: &Cuboid) -> Vec3 {
    cuboid.to_world(point)
}

pub fn point_cuboid_distance(cuboid: &Cuboid, point: &Vec3) -> f64 {
    cuboid.distance(point)
}

pub fn face_distance(cuboid: &Cuboid, point: &Vec3, face: Face) -> f64 {
    cuboid.face_distance(point, face)
}

pub fn occludes(cuboid: &Cuboid, point: &Vec3, face: Face, camera: &CameraModel) -> bool {
    cuboid.occludes(point, face, camera)
}

/// Distance to the most distant occluding face over all cuboids; zero if
/// nothing occludes `point`.
pub fn occlusion_distance(cuboids: &[Cuboid], point: &Vec3, camera: &CameraModel) -> f64 {
    let mut worst = 0.0f64;
    for c in cuboids {
        let p = c.to_local(point);
        let cam = c.to_local(&camera.center);
        for face in Face::ALL {
            if occludes_local(&c.half_extents, &p, &cam, face) {
                worst = worst.max(face_squared_distance_local(&c.half_extents, &p, face));
            }
        }
    }
    worst.sqrt()
}

/// Smallest point-to-cuboid distance over a non-empty set.
pub fn min_distance(cuboids: &[Cuboid], point: &Vec3) -> Result<f64> {
    if cuboids.is_empty() {
        return Err(Error::NoPrimitives);
    }
    Ok(cuboids
        .iter()
        .map(|c| c.squared_distance(point))
        .fold(f64::INFINITY, f64::min)
        .sqrt())
}

/// `max(min_h d(h, y), d_o(M, y))`.
pub fn oa_distance(cuboids: &[Cuboid], point: &Vec3, camera: &CameraModel) -> Result<f64> {
    let l2 = min_distance(cuboids, point)?;
    Ok(l2.max(occlusion_distance(cuboids, point, camera)))
}

pub(crate) fn squared_distance_local(a: &Vec3, p: &Vec3) -> f64 {
    let (x, y, z) = (p.x.abs(), p.y.abs(), p.z.abs());
    let inside = (a.x - x).min(a.y - y).min(a.z - z).max(0.0);
    let ox = (x - a.x).max(0.0);
    let oy = (y - a.y).max(0.0);
    let oz = (z - a.z).max(0.0);
    inside * inside + ox * ox + oy * oy + oz * oz
}

pub(crate) fn face_squared_distance_local(a: &Vec3, p: &Vec3, face: Face) -> f64 {
    let k = face.axis();
    let normal = p[k] - face.sign() * a[k];
    let mut acc = normal * normal;
    for j in 0..3 {
        if j != k {
            let e = (p[j].abs() - a[j]).max(0.0);
            acc += e * e;
        }
    }
    acc
}

/// Occlusion test in the cuboid frame: `p` is the point, `cam` the camera
/// centre. The sight line `x(λ) = p + λ(cam − p)` must meet the face plane
/// at `0 < λ ≤ 1` inside the face.
pub(crate) fn occludes_local(a: &Vec3, p: &Vec3, cam: &Vec3, face: Face) -> bool {
    let k = face.axis();
    let v = cam - p;
    if v[k].abs() < PARALLEL_EPS {
        return false;
    }
    let plane = face.sign() * a[k];
    let lambda = (plane - p[k]) / v[k];
    if !(lambda > 0.0 && lambda <= 1.0) {
        return false;
    }
    let mut x = p + v * lambda;
    x[k] = plane;
    squared_distance_local(a, &x) <= SURFACE_EPS * SURFACE_EPS
}
