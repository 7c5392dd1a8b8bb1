//! Synthetic room-scale scenes with known ground truth, rendered at 64×48.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{rotation_matrix, CameraModel, Cuboid, Face, Mat3, Vec3};
use crate::scene::{render_synthetic, DepthRaster};
use crate::solver::{MinimalSet, MINIMAL_SET_SIZE};

pub const DESK_WIDTH: usize = 64;
pub const DESK_HEIGHT: usize = 48;

const DEPTH_LO: f64 = 4.0;
const DEPTH_HI: f64 = 5.5;
const EXT_LO: f64 = 0.35;
const EXT_HI: f64 = 0.9;

/// Pinhole camera for 64×48 renders, roughly a 56° horizontal field of view.
pub fn desk_camera() -> CameraModel {
    CameraModel::new(60.0, 60.0, 31.5, 23.5).expect("valid constants")
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rotation drawn uniformly from SO(3) via a normalised Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| gaussian(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                q[0] / n,
                q[1] / n,
                q[2] / n,
                q[3] / n,
            ));
            return *quat.to_rotation_matrix().matrix();
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; one sample per call is enough here.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Arbitrary cuboid with half-extents in `[lo, hi]`, uniform rotation and
/// translation in the cube of side `2·spread` around `center`.
pub fn random_cuboid<R: Rng + ?Sized>(
    rng: &mut R,
    lo: f64,
    hi: f64,
    center: Vec3,
    spread: f64,
) -> Cuboid {
    let a = Vec3::from_fn(|_, _| rng.random_range(lo..=hi));
    let t = center + Vec3::from_fn(|_, _| rng.random_range(-spread..=spread));
    Cuboid::from_rotation_matrix(a, &random_rotation(rng), t).expect("positive extents")
}

/// Point drawn uniformly over the cuboid surface.
pub fn sample_surface_point<R: Rng + ?Sized>(cuboid: &Cuboid, rng: &mut R) -> Vec3 {
    let a = cuboid.half_extents();
    let areas: Vec<f64> = Face::ALL
        .iter()
        .map(|f| {
            let k = f.axis();
            a[(k + 1) % 3] * a[(k + 2) % 3]
        })
        .collect();
    let total: f64 = areas.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut face = Face::ALL[5];
    for (f, area) in Face::ALL.iter().zip(&areas) {
        if u < *area {
            face = *f;
            break;
        }
        u -= area;
    }
    let k = face.axis();
    let mut local = Vec3::zeros();
    local[k] = face.sign() * a[k];
    for j in [(k + 1) % 3, (k + 2) % 3] {
        local[j] = rng.random_range(-a[j]..=a[j]);
    }
    cuboid.to_world(&local)
}

/// A random cuboid, sized like the scene generator's boxes, and nine points
/// lying exactly on its surface.
pub fn random_surface_minimal_set<R: Rng + ?Sized>(rng: &mut R) -> (Cuboid, MinimalSet) {
    let cuboid = random_cuboid(rng, EXT_LO, EXT_HI, Vec3::new(0.0, 0.0, 4.5), 1.0);
    let points: [Vec3; MINIMAL_SET_SIZE] =
        std::array::from_fn(|_| sample_surface_point(&cuboid, rng));
    let set = MinimalSet::from_points(points).expect("finite points");
    (cuboid, set)
}

/// Ground truth plus its depth render.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cuboids: Vec<Cuboid>,
    pub camera: CameraModel,
    pub depth: DepthRaster,
}

impl SyntheticScene {
    pub fn render(
        cuboids: Vec<Cuboid>,
        camera: CameraModel,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let depth = render_synthetic(&cuboids, &camera, height, width)?;
        Ok(SyntheticScene {
            cuboids,
            camera,
            depth,
        })
    }
}

/// The two-cuboid occlusion example.
///
/// The scene is a single frontal box seen face-on. Cuboid A is that box.
/// Cuboid B has the same footprint but sits in front of the observed face,
/// so the observed points lie on its back face and its front face hides
/// all of them.
#[derive(Clone, Debug)]
pub struct OccluderPair {
    pub scene: SyntheticScene,
    pub a: Cuboid,
    pub b: Cuboid,
}

pub fn occluder_box() -> Cuboid {
    Cuboid::axis_aligned(Vec3::new(0.6, 0.45, 0.25), Vec3::new(0.0, 0.0, 2.75)).expect("constant")
}

pub fn occluder_pair() -> Result<OccluderPair> {
    let a = occluder_box();
    let ext = a.half_extents();
    let b = Cuboid::axis_aligned(ext, a.translation() - Vec3::new(0.0, 0.0, 2.0 * ext.z))?;
    let scene = SyntheticScene::render(vec![a], desk_camera(), DESK_HEIGHT, DESK_WIDTH)?;
    Ok(OccluderPair { scene, a, b })
}

/// Floor slab with two boxes standing on it, neither hiding the other. The
/// camera sits 1.2 m above the floor.
pub fn room_cuboids() -> Vec<Cuboid> {
    let floor = Cuboid::axis_aligned(Vec3::new(2.6, 0.05, 2.0), Vec3::new(0.0, 1.2, 5.0));
    let left = Cuboid::new(
        Vec3::new(0.5, 0.45, 0.5),
        Vec3::new(0.0, 0.35, 0.0),
        Vec3::new(-1.0, 0.7, 4.5),
    );
    let right = Cuboid::new(
        Vec3::new(0.6, 0.35, 0.45),
        Vec3::new(0.0, -0.5, 0.0),
        Vec3::new(1.1, 0.8, 5.2),
    );
    vec![
        floor.expect("constant"),
        left.expect("constant"),
        right.expect("constant"),
    ]
}

pub fn room_scene() -> Result<SyntheticScene> {
    SyntheticScene::render(room_cuboids(), desk_camera(), DESK_HEIGHT, DESK_WIDTH)
}

/// One to three boxes floating in front of the camera.
///
/// Each box gets its own horizontal lane of the view so boxes never hide
/// one another, and a random yaw and tilt so two or three faces show.
pub fn random_scene_cuboids<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<Cuboid> {
    let count = count.clamp(1, 3);
    let cam = desk_camera();
    (0..count)
        .map(|i| {
            let depth = rng.random_range(DEPTH_LO..DEPTH_HI);
            let half_width = cam.cx / cam.fx * depth;
            let lane = 2.0 * half_width / count as f64;
            let x = -half_width + lane * (i as f64 + 0.5);
            let max_extent = (0.35 * lane).min(EXT_HI);
            let a = Vec3::from_fn(|_, _| rng.random_range(EXT_LO..=max_extent.max(EXT_LO + 0.05)));
            let yaw = rng.random_range(-0.8..0.8);
            let tilt = rng.random_range(-0.4..0.4);
            let r = rotation_matrix(&Vec3::new(tilt, 0.0, 0.0))
                * rotation_matrix(&Vec3::new(0.0, yaw, 0.0));
            let y = rng.random_range(-0.1 * depth..0.1 * depth);
            Cuboid::from_rotation_matrix(a, &r, Vec3::new(x, y, depth)).expect("positive extents")
        })
        .collect()
}

pub fn random_scene(seed: u64) -> Result<SyntheticScene> {
    let mut rng = seeded_rng(seed);
    let count = rng.random_range(1..=3);
    let cuboids = random_scene_cuboids(&mut rng, count);
    SyntheticScene::render(cuboids, desk_camera(), DESK_HEIGHT, DESK_WIDTH)
}
