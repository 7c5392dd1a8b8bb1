//! Finite-difference checks of the solver's analytic derivatives.
//!
//! Two suites run from one seed:
//!
//! * the objective gradient against central differences at configurations
//!   where every point has a unique nearest box feature;
//! * the implicit-function Jacobian `∂(r, t)/∂S` against differences of a
//!   pose-only Gauss–Newton refit, at exact surface fits whose pose block
//!   is well conditioned.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dual::{Dual, Scalar};
use crate::error::Result;
use crate::geometry::{Cuboid, Vec3};
use crate::solver::{
    ift_gradient, objective, objective_gradient, signed_distance, to_local, MinimalSet,
    MINIMAL_SET_SIZE,
};
use crate::synthetic::{random_cuboid, seeded_rng};

pub const OBJECTIVE_STEP: f64 = 1e-6;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-4;
pub const IFT_STEP: f64 = 1e-4;
pub const IFT_TOLERANCE: f64 = 1e-2;
/// Floor on the reference magnitude in the IFT relative error.
pub const IFT_FLOOR: f64 = 1e-3;
pub const IFT_PASS_FRACTION: f64 = 0.95;
pub const EQUIVARIANCE_TOLERANCE: f64 = 5e-2;
/// Pose blocks above this condition number are skipped as ill-posed.
pub const WELL_CONDITIONED: f64 = 1e4;

/// Minimum gap between competing branches of the distance formula.
const BRANCH_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub objective_configurations: usize,
    pub ift_instances: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 1,
            objective_configurations: 100,
            ift_instances: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveCheck {
    pub configurations: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IftCheck {
    pub instances: usize,
    /// Drawn instances skipped for a poorly conditioned pose block.
    pub skipped: usize,
    pub entries: usize,
    pub fraction_within_tolerance: f64,
    pub max_relative_error: f64,
    /// Largest deviation of `Σ_j ∂t/∂y_j` from the identity.
    pub max_equivariance_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub objective: ObjectiveCheck,
    pub ift: IftCheck,
    pub passed: bool,
}

pub fn run(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = seeded_rng(config.seed);
    let objective = check_objective(&mut rng, config.objective_configurations)?;
    let ift = check_ift(&mut rng, config.ift_instances)?;
    Ok(GradcheckReport {
        seed: config.seed,
        passed: objective.passed && ift.passed,
        objective,
        ift,
    })
}

fn test_cuboid(rng: &mut ChaCha8Rng) -> Cuboid {
    loop {
        let c = random_cuboid(rng, 0.2, 1.0, Vec3::new(0.0, 0.0, 3.0), 1.0);
        // Keep clear of the angle-axis wrap at π.
        if c.rotation().norm() < 3.0 {
            return c;
        }
    }
}

/// True when every branch choice in the distance formula is decided by at
/// least [`BRANCH_MARGIN`].
fn off_branch_boundaries(cuboid: &Cuboid, y: &Vec3) -> bool {
    let p = cuboid.to_local(y);
    let a = cuboid.half_extents();
    let gap: Vec<f64> = (0..3).map(|k| a[k] - p[k].abs()).collect();
    if gap.iter().any(|g| g.abs() < BRANCH_MARGIN) || p.iter().any(|v| v.abs() < BRANCH_MARGIN) {
        return false;
    }
    if gap.iter().all(|g| *g > 0.0) {
        let mut sorted = gap.clone();
        sorted.sort_by(f64::total_cmp);
        return sorted[1] - sorted[0] > BRANCH_MARGIN;
    }
    true
}

fn check_objective(rng: &mut ChaCha8Rng, configurations: usize) -> Result<ObjectiveCheck> {
    let mut worst = 0.0f64;
    for _ in 0..configurations {
        let cuboid = test_cuboid(rng);
        let a = cuboid.half_extents();
        let points: [Vec3; MINIMAL_SET_SIZE] = std::array::from_fn(|_| loop {
            let local = Vec3::from_fn(|k, _| rng.random_range(-1.6 * a[k]..1.6 * a[k]));
            let y = cuboid.to_world(&local);
            if off_branch_boundaries(&cuboid, &y) {
                break y;
            }
        });
        let set = MinimalSet::from_points(points)?;
        let analytic = objective_gradient(&set, &cuboid);
        let params = cuboid.params();
        let mut numeric = [0.0; 9];
        for i in 0..9 {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params;
                p[i] += delta;
                Ok(objective(&set, &Cuboid::from_params(&p)?))
            };
            numeric[i] = (eval(OBJECTIVE_STEP)? - eval(-OBJECTIVE_STEP)?) / (2.0 * OBJECTIVE_STEP);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (g, n)| m.max((g - n).abs()));
        worst = worst.max(err / scale);
    }
    Ok(ObjectiveCheck {
        configurations,
        max_relative_error: worst,
        passed: worst < OBJECTIVE_TOLERANCE,
    })
}

/// Nine points on faces of `cuboid`, each at least 5% of the face size
/// away from every edge.
fn surface_set(rng: &mut ChaCha8Rng, cuboid: &Cuboid) -> Result<MinimalSet> {
    let a = cuboid.half_extents();
    let points = std::array::from_fn(|_| {
        let k = rng.random_range(0..3usize);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut local = Vec3::zeros();
        local[k] = sign * a[k];
        for j in [(k + 1) % 3, (k + 2) % 3] {
            local[j] = rng.random_range(-0.95 * a[j]..0.95 * a[j]);
        }
        cuboid.to_world(&local)
    });
    MinimalSet::from_points(points)
}

/// Signed distances and their `(r, t)` Jacobian with extents held fixed.
fn pose_residuals(
    a: &Vec3,
    pose: &[f64; 6],
    points: &[Vec3; MINIMAL_SET_SIZE],
) -> (DVector<f64>, DMatrix<f64>) {
    let a = [a.x, a.y, a.z].map(Dual::<6>::constant);
    let r: [Dual<6>; 3] = std::array::from_fn(|k| Dual::variable(pose[k], k));
    let t: [Dual<6>; 3] = std::array::from_fn(|k| Dual::variable(pose[3 + k], 3 + k));
    let mut res = DVector::zeros(MINIMAL_SET_SIZE);
    let mut jac = DMatrix::zeros(MINIMAL_SET_SIZE, 6);
    for (i, y) in points.iter().enumerate() {
        let y = [y.x, y.y, y.z].map(Dual::<6>::constant);
        let s = signed_distance(&a, &to_local(&r, &t, &y));
        res[i] = s.re;
        for c in 0..6 {
            jac[(i, c)] = s.eps[c];
        }
    }
    (res, jac)
}

/// Least-squares pose for `points` with extents fixed, warm-started at
/// `start`.
pub fn refit_pose(start: &Cuboid, points: &[Vec3; MINIMAL_SET_SIZE]) -> [f64; 6] {
    let a = start.half_extents();
    let p = start.params();
    let mut pose = [p[3], p[4], p[5], p[6], p[7], p[8]];
    for _ in 0..50 {
        let (res, jac) = pose_residuals(&a, &pose, points);
        let Ok(step) = jac.svd(true, true).solve(&res, 1e-14) else {
            break;
        };
        for c in 0..6 {
            pose[c] -= step[c];
        }
        if step.norm() < 1e-15 {
            break;
        }
    }
    pose
}

fn check_ift(rng: &mut ChaCha8Rng, instances: usize) -> Result<IftCheck> {
    let mut skipped = 0;
    let mut entries = 0;
    let mut within = 0;
    let mut worst = 0.0f64;
    let mut worst_equivariance = 0.0f64;
    let mut accepted = 0;
    while accepted < instances {
        let cuboid = test_cuboid(rng);
        let set = surface_set(rng, &cuboid)?;
        let ift = ift_gradient(&set, &cuboid);
        if !ift.reliable || ift.condition > WELL_CONDITIONED {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let pose = ift.pose_block();
        for col in 0..3 * MINIMAL_SET_SIZE {
            let (j, k) = (col / 3, col % 3);
            let shifted = |delta: f64| {
                let mut pts = *set.points();
                pts[j][k] += delta;
                refit_pose(&cuboid, &pts)
            };
            let plus = shifted(IFT_STEP);
            let minus = shifted(-IFT_STEP);
            for row in 0..6 {
                let numeric = (plus[row] - minus[row]) / (2.0 * IFT_STEP);
                let rel = (pose[(row, col)] - numeric).abs() / numeric.abs().max(IFT_FLOOR);
                entries += 1;
                if rel < IFT_TOLERANCE {
                    within += 1;
                }
                worst = worst.max(rel);
            }
        }
        // Moving every point by the same offset moves the box with it.
        for row in 0..3 {
            for k in 0..3 {
                let total: f64 = (0..MINIMAL_SET_SIZE)
                    .map(|j| pose[(3 + row, 3 * j + k)])
                    .sum();
                let expected = if row == k { 1.0 } else { 0.0 };
                worst_equivariance = worst_equivariance.max((total - expected).abs());
            }
        }
    }
    let fraction = if entries == 0 {
        1.0
    } else {
        within as f64 / entries as f64
    };
    Ok(IftCheck {
        instances,
        skipped,
        entries,
        fraction_within_tolerance: fraction,
        max_relative_error: worst,
        max_equivariance_error: worst_equivariance,
        passed: fraction >= IFT_PASS_FRACTION && worst_equivariance < EQUIVARIANCE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run(&GradcheckConfig {
            seed: 3,
            objective_configurations: 10,
            ift_instances: 5,
        })
        .unwrap();
        assert!(report.objective.passed, "{:?}", report.objective);
        assert!(report.ift.passed, "{:?}", report.ift);
    }

    #[test]
    fn refit_is_stationary_at_an_exact_fit() {
        let mut rng = seeded_rng(8);
        let c = test_cuboid(&mut rng);
        let set = surface_set(&mut rng, &c).unwrap();
        let pose = refit_pose(&c, set.points());
        let p = c.params();
        for k in 0..6 {
            assert!((pose[k] - p[3 + k]).abs() < 1e-9);
        }
    }

    #[test]
    fn report_is_deterministic() {
        let config = GradcheckConfig {
            seed: 1,
            objective_configurations: 5,
            ift_instances: 2,
        };
        assert_eq!(run(&config).unwrap(), run(&config).unwrap());
    }
}
