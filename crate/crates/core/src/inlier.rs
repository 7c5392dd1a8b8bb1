//! Occlusion-aware soft inlier counting.
//!
//! Every point gets a value in `[-1, 1]`: positive when it is an inlier to
//! some cuboid face, negative when a face it is not an inlier to hides it
//! from the camera, and zero for plain outliers. The inlier count `I_c` is
//! the sum of these values over the scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    face_squared_distance_local, occludes_local, CameraModel, Cuboid, Face, Mat3, Vec3,
};
use crate::par;
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InlierParams {
    /// Squared-distance threshold in m².
    pub tau: f64,
    /// Sigmoid softness.
    pub beta: f64,
    /// When false, occlusion indicators are forced to zero.
    pub occlusion_aware: bool,
}

impl Default for InlierParams {
    fn default() -> Self {
        InlierParams {
            tau: 0.004,
            beta: 100.0,
            occlusion_aware: true,
        }
    }
}

impl InlierParams {
    pub fn new(tau: f64, beta: f64) -> Result<Self> {
        let params = InlierParams {
            tau,
            beta,
            occlusion_aware: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("inlier threshold", "tau must be positive"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid("inlier softness", "beta must be positive"));
        }
        Ok(())
    }

    pub fn with_occlusion(mut self, enabled: bool) -> Self {
        self.occlusion_aware = enabled;
        self
    }
}

/// `1 − σ(β(d²/τ − 1))` for a squared face distance.
pub fn soft_inlier_from_squared(squared_distance: f64, params: &InlierParams) -> f64 {
    1.0 / (1.0 + (params.beta * (squared_distance / params.tau - 1.0)).exp())
}

pub fn soft_inlier(point: &Vec3, cuboid: &Cuboid, face: Face, params: &InlierParams) -> f64 {
    soft_inlier_from_squared(cuboid.face_squared_distance(point, face), params)
}

/// `f_I − χ_o·(1 − f_I)`.
pub fn combine_inlier_occlusion(inlier: f64, occluded: bool) -> f64 {
    if occluded {
        inlier - (1.0 - inlier)
    } else {
        inlier
    }
}

pub fn f_io(
    point: &Vec3,
    cuboid: &Cuboid,
    face: Face,
    camera: &CameraModel,
    params: &InlierParams,
) -> f64 {
    let occluded = params.occlusion_aware && cuboid.occludes(point, face, camera);
    combine_inlier_occlusion(soft_inlier(point, cuboid, face, params), occluded)
}

/// Resolve per-point extrema of `f_IO` into `f_OAI`.
fn resolve(min: f64, max: f64) -> f64 {
    if min < 0.0 {
        min
    } else if max.is_finite() {
        max
    } else {
        0.0
    }
}

/// `f_OAI` from per-face `f_IO` values: the most negative value if any is
/// negative, else the largest. No values means an outlier.
pub fn f_oai_from_values(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    resolve(lo, hi)
}

pub fn f_oai(
    point: &Vec3,
    cuboids: &[Cuboid],
    camera: &CameraModel,
    params: &InlierParams,
) -> Result<f64> {
    if cuboids.is_empty() {
        return Err(Error::NoPrimitives);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in cuboids {
        let (l, h) = Prepared::new(c, camera).extrema(point, params);
        lo = lo.min(l);
        hi = hi.max(h);
    }
    Ok(resolve(lo, hi))
}

/// `I_c(Y, M)`: the sum of `f_OAI` over all scene points. The empty set
/// scores zero.
pub fn inlier_count(scene: &Scene, cuboids: &[Cuboid], params: &InlierParams) -> Result<f64> {
    if scene.is_empty() {
        return Err(Error::NoValidPoints);
    }
    if cuboids.is_empty() {
        return Ok(0.0);
    }
    let prepared: Vec<Prepared> = cuboids
        .iter()
        .map(|c| Prepared::new(c, scene.camera()))
        .collect();
    let order = scene.canonical_order();
    let values = par::map_indices(order.len(), |k| {
        let p = &scene.points()[order[k]];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &prepared {
            let (l, h) = c.extrema(p, params);
            lo = lo.min(l);
            hi = hi.max(h);
        }
        resolve(lo, hi)
    });
    Ok(par::pairwise_sum(&values))
}

/// A cuboid with its camera centre pre-transformed into the local frame.
#[derive(Clone, Copy, Debug)]
struct Prepared {
    matrix: Mat3,
    translation: Vec3,
    half: Vec3,
    camera: Vec3,
}

impl Prepared {
    fn new(c: &Cuboid, camera: &CameraModel) -> Self {
        Prepared {
            matrix: *c.rotation_matrix(),
            translation: c.translation(),
            half: c.half_extents(),
            camera: c.to_local(&camera.center),
        }
    }

    /// `(min_i f_IO, max_i f_IO)` over the six faces.
    #[inline]
    fn extrema(&self, point: &Vec3, params: &InlierParams) -> (f64, f64) {
        let p = self.matrix * (point - self.translation);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for face in Face::ALL {
            let fi =
                soft_inlier_from_squared(face_squared_distance_local(&self.half, &p, face), params);
            let occluded =
                params.occlusion_aware && occludes_local(&self.half, &p, &self.camera, face);
            let v = combine_inlier_occlusion(fi, occluded);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Per-point `f_IO` extrema for an accepted cuboid set, so that scoring a
/// candidate `M ∪ {h}` only touches the candidate's six faces.
#[derive(Clone, Debug)]
pub struct ScoreCache {
    points: Vec<Vec3>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    camera: CameraModel,
    params: InlierParams,
    cuboids: Vec<Cuboid>,
    count: f64,
}

impl ScoreCache {
    pub fn new(scene: &Scene, params: InlierParams) -> Result<Self> {
        params.validate()?;
        if scene.is_empty() {
            return Err(Error::NoValidPoints);
        }
        let points: Vec<Vec3> = scene
            .canonical_order()
            .iter()
            .map(|&i| scene.points()[i])
            .collect();
        let n = points.len();
        Ok(ScoreCache {
            points,
            lo: vec![f64::INFINITY; n],
            hi: vec![f64::NEG_INFINITY; n],
            camera: *scene.camera(),
            params,
            cuboids: Vec::new(),
            count: 0.0,
        })
    }

    pub fn with_cuboids(scene: &Scene, cuboids: &[Cuboid], params: InlierParams) -> Result<Self> {
        let mut cache = ScoreCache::new(scene, params)?;
        for c in cuboids {
            cache.push(c);
        }
        Ok(cache)
    }

    pub fn params(&self) -> &InlierParams {
        &self.params
    }

    pub fn cuboids(&self) -> &[Cuboid] {
        &self.cuboids
    }

    /// `I_c(Y, M)` for the cached set.
    pub fn count(&self) -> f64 {
        self.count
    }

    /// `I_c(Y, M ∪ {h})` without modifying the cache.
    pub fn count_with(&self, h: &Cuboid) -> f64 {
        let prepared = Prepared::new(h, &self.camera);
        let values: Vec<f64> = self
            .points
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(p, (lo, hi))| {
                let (l, h) = prepared.extrema(p, &self.params);
                resolve(lo.min(l), hi.max(h))
            })
            .collect();
        par::pairwise_sum(&values)
    }

    /// Per-point `f_OAI` in canonical order for the cached set.
    pub fn point_values(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| resolve(*l, *h))
            .collect()
    }

    pub fn push(&mut self, h: &Cuboid) {
        let prepared = Prepared::new(h, &self.camera);
        for ((p, lo), hi) in self.points.iter().zip(&mut self.lo).zip(&mut self.hi) {
            let (l, u) = prepared.extrema(p, &self.params);
            *lo = lo.min(l);
            *hi = hi.max(u);
        }
        self.cuboids.push(*h);
        self.count = par::pairwise_sum(&self.point_values());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    fn camera() -> CameraModel {
        CameraModel::new(60.0, 60.0, 32.0, 24.0).unwrap()
    }

    fn unit_at(t: Vec3) -> Cuboid {
        Cuboid::axis_aligned(Vec3::new(1.0, 1.0, 1.0), t).unwrap()
    }

    #[test]
    fn soft_inlier_examples() {
        let p = InlierParams::default();
        assert_eq!(soft_inlier_from_squared(p.tau, &p), 0.5);
        assert!((soft_inlier_from_squared(0.0, &p) - 1.0).abs() < 1e-9);
        assert!(soft_inlier_from_squared(2.0 * p.tau, &p).abs() < 1e-9);
    }

    #[test]
    fn soft_inlier_is_strictly_decreasing() {
        let p = InlierParams::default();
        let mut prev = soft_inlier_from_squared(0.0, &p);
        for k in 1..200 {
            let d2 = k as f64 * 1e-4;
            let v = soft_inlier_from_squared(d2, &p);
            // Far from the threshold the sigmoid saturates to 0 or 1 in f64.
            if (d2 / p.tau - 1.0).abs() < 0.3 {
                assert!(v < prev);
            } else {
                assert!(v <= prev);
            }
            prev = v;
        }
    }

    #[test]
    fn io_combination_examples() {
        assert_eq!(combine_inlier_occlusion(1.0, false), 1.0);
        assert_eq!(combine_inlier_occlusion(0.0, true), -1.0);
        assert_eq!(combine_inlier_occlusion(1.0, true), 1.0);
    }

    #[test]
    fn resolve_examples() {
        assert_eq!(resolve(0.0, 0.9), 0.9);
        assert_eq!(resolve(-0.8, 0.9), -0.8);
        assert_eq!(resolve(0.0, 0.0), 0.0);
    }

    #[test]
    fn f_oai_behind_cuboid_is_negative() {
        let c = unit_at(Vec3::new(0.0, 0.0, 3.0));
        let p = InlierParams::default();
        let v = f_oai(&Vec3::new(0.0, 0.0, 5.0), &[c], &camera(), &p).unwrap();
        assert!((v + 1.0).abs() < 1e-9);
        let free = f_oai(
            &Vec3::new(0.0, 0.0, 5.0),
            &[c],
            &camera(),
            &p.with_occlusion(false),
        )
        .unwrap();
        assert!(free.abs() < 1e-9);
        assert!(f_oai(&Vec3::zeros(), &[], &camera(), &p).is_err());
    }

    #[test]
    fn f_io_agrees_with_definition() {
        let c = unit_at(Vec3::new(0.0, 0.0, 3.0));
        let p = InlierParams::default();
        let y = Vec3::new(0.1, 0.2, 5.0);
        for face in Face::ALL {
            let fi = soft_inlier(&y, &c, face, &p);
            let chi = if c.occludes(&y, face, &camera()) {
                1.0
            } else {
                0.0
            };
            assert_eq!(f_io(&y, &c, face, &camera(), &p), fi - chi * (1.0 - fi));
        }
    }

    fn front_face_points(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let u = (i % 10) as f64 / 10.0 - 0.45;
                let v = (i / 10) as f64 / 10.0 - 0.45;
                Vec3::new(u, v, 2.0)
            })
            .collect()
    }

    #[test]
    fn count_examples() {
        let cam = camera();
        let c = unit_at(Vec3::new(0.0, 0.0, 3.0));
        let p = InlierParams::default();
        let n = 100;
        let scene = Scene::from_points(front_face_points(n), cam).unwrap();
        let on = inlier_count(&scene, &[c], &p).unwrap();
        assert!((on - n as f64).abs() < n as f64 * 1e-6);

        let far = Scene::from_points(
            (0..n)
                .map(|i| Vec3::new(5.0 + i as f64 * 0.01, 0.0, 1.0))
                .collect(),
            cam,
        )
        .unwrap();
        assert!(inlier_count(&far, &[c], &p).unwrap().abs() < 1e-6);
        assert_eq!(inlier_count(&far, &[], &p).unwrap(), 0.0);
    }

    #[test]
    fn cache_matches_direct_count() {
        let cam = camera();
        let scene = Scene::from_points(front_face_points(100), cam).unwrap();
        let p = InlierParams::default();
        let a = unit_at(Vec3::new(0.0, 0.0, 3.0));
        let b = Cuboid::axis_aligned(Vec3::new(0.2, 0.2, 0.2), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let mut cache = ScoreCache::new(&scene, p).unwrap();
        assert_eq!(cache.count(), 0.0);
        assert_eq!(
            cache.count_with(&a),
            inlier_count(&scene, &[a], &p).unwrap()
        );
        cache.push(&a);
        assert_eq!(cache.count(), inlier_count(&scene, &[a], &p).unwrap());
        assert_eq!(
            cache.count_with(&b),
            inlier_count(&scene, &[a, b], &p).unwrap()
        );
    }
}
