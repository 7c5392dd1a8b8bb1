//! Properties that hold for arbitrary inputs.

use proptest::prelude::*;
use rand::seq::SliceRandom;

use cuboid_core::geometry::{
    min_distance, oa_distance, rotation_matrix, CameraModel, Cuboid, Vec3,
};
use cuboid_core::inlier::{inlier_count, InlierParams, ScoreCache};
use cuboid_core::scene::{backproject, render_synthetic, DepthRaster, Scene};
use cuboid_core::solver::{fit_cuboid, MinimalSet, SolverConfig};
use cuboid_core::superquadric::Superquadric;
use cuboid_core::synthetic::{desk_camera, random_cuboid, sample_surface_point, seeded_rng};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cuboid() -> impl Strategy<Value = Cuboid> {
    (vec3(0.2, 1.0), vec3(-2.0, 2.0), vec3(-1.0, 1.0)).prop_map(|(a, r, t)| {
        Cuboid::new(a, r, t + Vec3::new(0.0, 0.0, 4.0)).expect("positive extents")
    })
}

fn cuboids(max: usize) -> impl Strategy<Value = Vec<Cuboid>> {
    prop::collection::vec(cuboid(), 1..=max)
}

/// Points in front of the desk camera.
fn scene_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(
        (-2.0..2.0, -1.5..1.5, 1.5..7.0).prop_map(|(x, y, z): (f64, f64, f64)| Vec3::new(x, y, z)),
        n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_is_rigid_motion_equivariant(seed in any::<u64>(), r in vec3(-3.0, 3.0), s in vec3(-2.0, 2.0)) {
        let mut rng = seeded_rng(seed);
        let truth = random_cuboid(&mut rng, 0.35, 0.9, Vec3::new(0.0, 0.0, 4.5), 1.0);
        let points: [Vec3; 9] = std::array::from_fn(|_| sample_surface_point(&truth, &mut rng));
        let q = rotation_matrix(&r);
        let moved = points.map(|p| q * p + s);
        let config = SolverConfig::default();
        let a = fit_cuboid(&MinimalSet::from_points(points).unwrap(), &config).unwrap().cuboid;
        let b = fit_cuboid(&MinimalSet::from_points(moved).unwrap(), &config).unwrap().cuboid;
        for (p, m) in points.iter().zip(&moved) {
            prop_assert!((a.distance(p) - b.distance(m)).abs() < 1e-6);
        }
    }

    #[test]
    fn oa_distance_dominates_plain_distance(set in cuboids(3), y in vec3(-3.0, 3.0), c in vec3(-1.0, 1.0)) {
        let camera = desk_camera().with_center(c + Vec3::new(0.0, 0.0, -1.0));
        let y = y + Vec3::new(0.0, 0.0, 4.0);
        let oa = oa_distance(&set, &y, &camera).unwrap();
        prop_assert!(oa >= min_distance(&set, &y).unwrap());
    }

    #[test]
    fn inlier_count_ignores_point_order(set in cuboids(2), pts in scene_points(9..80), seed in any::<u64>()) {
        let params = InlierParams::default();
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut seeded_rng(seed));
        let a = inlier_count(&Scene::from_points(pts, desk_camera()).unwrap(), &set, &params).unwrap();
        let b = inlier_count(&Scene::from_points(shuffled, desk_camera()).unwrap(), &set, &params).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn incremental_score_matches_full_rescoring(set in cuboids(4), pts in scene_points(9..80), occlusion in any::<bool>()) {
        let params = InlierParams::default().with_occlusion(occlusion);
        let scene = Scene::from_points(pts, desk_camera()).unwrap();
        let mut cache = ScoreCache::new(&scene, params).unwrap();
        for (k, h) in set.iter().enumerate() {
            let predicted = cache.count_with(h);
            let full = inlier_count(&scene, &set[..=k], &params).unwrap();
            prop_assert!((predicted - full).abs() <= 1e-9 * full.abs().max(1.0));
            cache.push(h);
            prop_assert!((cache.count() - full).abs() <= 1e-9 * full.abs().max(1.0));
        }
    }

    #[test]
    fn render_is_the_nearest_surface(set in cuboids(3)) {
        let camera = desk_camera();
        let joint = render_synthetic(&set, &camera, 24, 32).unwrap();
        let singles: Vec<DepthRaster> = set
            .iter()
            .map(|c| render_synthetic(std::slice::from_ref(c), &camera, 24, 32).unwrap())
            .collect();
        for (i, d) in joint.values().iter().enumerate() {
            let nearest = singles
                .iter()
                .map(|s| s.values()[i])
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
            let expected = if nearest.is_finite() { nearest } else { 0.0 };
            prop_assert_eq!(d.to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn backprojected_points_reproject_to_pixel_centres(
        depths in prop::collection::vec(prop_oneof![Just(0.0), 0.5..9.0], 12 * 16),
        fx in 20.0..200.0f64,
        c in vec3(-1.0, 1.0),
    ) {
        let camera = CameraModel::new(fx, fx * 1.1, 7.5, 5.5).unwrap().with_center(c);
        let raster = DepthRaster::new(12, 16, depths).unwrap();
        let scene = backproject(&raster, &camera);
        prop_assert_eq!(scene.len(), raster.valid_count());
        for (i, p) in scene.points().iter().enumerate() {
            let (row, col) = scene.pixel(i);
            let (u, v) = camera.project(p);
            prop_assert!((u - col as f64).abs() < 1e-9 && (v - row as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn superquadric_surface_points_lie_on_the_surface(
        eps in (0.1..2.0f64, 0.1..2.0f64),
        a in vec3(0.2, 2.0),
        r in vec3(-3.0, 3.0),
        eta in -1.5..1.5f64,
        omega in -3.1..3.1f64,
    ) {
        let sq = Superquadric::new(eps.0, eps.1, a, r, Vec3::new(0.0, 0.0, 3.0)).unwrap();
        let p = sq.to_world(&sq.surface_point_local(eta, omega));
        prop_assert!(sq.inside_outside(&p).abs() < 1e-6);
    }
}
