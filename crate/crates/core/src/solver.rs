//! Minimal solver: fit one cuboid to nine points.
//!
//! The fit minimises `(1/C) Σ_i d(h, y_i)² (a_x + a_y + a_z)` with Adam,
//! starting from a PCA box around the sample. Descent runs in the frame of
//! that initial box (rotation increment and offset relative to it), which
//! makes the result independent of how the sample is posed in the world.
//!
//! Gradients of the fitted pose with respect to the sample points come from
//! the implicit function theorem rather than from unrolling the iterations.

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::geometry::{Cuboid, Mat3, Vec3};

/// Points per minimal set (one per degree of freedom).
pub const MINIMAL_SET_SIZE: usize = 9;

/// Lower bound on every half-extent during and after fitting, in metres.
pub const MIN_HALF_EXTENT: f64 = 1e-4;

/// Singular-value floor below which the sample counts as collinear.
const DEGENERATE_SPREAD: f64 = 1e-9;

/// IFT Jacobians with a larger condition number are discarded.
pub const MAX_IFT_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct MinimalSet {
    indices: [usize; MINIMAL_SET_SIZE],
    points: [Vec3; MINIMAL_SET_SIZE],
}

impl MinimalSet {
    pub fn new(
        indices: [usize; MINIMAL_SET_SIZE],
        points: [Vec3; MINIMAL_SET_SIZE],
    ) -> Result<Self> {
        for i in 0..MINIMAL_SET_SIZE {
            if indices[..i].contains(&indices[i]) {
                return Err(Error::invalid(
                    "minimal set",
                    format!("duplicate index {}", indices[i]),
                ));
            }
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("minimal set", "non-finite point"));
        }
        Ok(MinimalSet { indices, points })
    }

    /// A set whose indices are simply `0..9`.
    pub fn from_points(points: [Vec3; MINIMAL_SET_SIZE]) -> Result<Self> {
        MinimalSet::new(std::array::from_fn(|i| i), points)
    }

    pub fn indices(&self) -> &[usize; MINIMAL_SET_SIZE] {
        &self.indices
    }

    pub fn points(&self) -> &[Vec3; MINIMAL_SET_SIZE] {
        &self.points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 50,
            learning_rate: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("solver iterations", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("solver learning rate", "must be positive"));
        }
        for (name, b) in [
            ("adam beta1", self.adam_beta1),
            ("adam beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(
                    "solver config",
                    format!("{name} must lie in [0, 1)"),
                ));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::invalid("solver config", "adam eps must be positive"));
        }
        Ok(())
    }
}

// Generic residual machinery shared by the descent loop and the IFT.

fn rodrigues<T: Scalar>(r: &[T; 3]) -> [[T; 3]; 3] {
    let theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let one = T::constant(1.0);
    let (a, b) = if theta2.value() < 1e-16 {
        (
            one - theta2 / T::constant(6.0),
            T::constant(0.5) - theta2 / T::constant(24.0),
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (one - theta.cos()) / theta2)
    };
    // K = [r]×, R = I + aK + bK².
    let k = [
        [T::constant(0.0), -r[2], r[1]],
        [r[2], T::constant(0.0), -r[0]],
        [-r[1], r[0], T::constant(0.0)],
    ];
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let k2 = k[i][0] * k[0][j] + k[i][1] * k[1][j] + k[i][2] * k[2][j];
            let id = if i == j { one } else { T::constant(0.0) };
            id + a * k[i][j] + b * k2
        })
    })
}

pub(crate) fn to_local<T: Scalar>(rotation: &[T; 3], translation: &[T; 3], y: &[T; 3]) -> [T; 3] {
    let m = rodrigues(rotation);
    let d = [
        y[0] - translation[0],
        y[1] - translation[1],
        y[2] - translation[2],
    ];
    std::array::from_fn(|i| m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2])
}

fn squared_distance<T: Scalar>(a: &[T; 3], p: &[T; 3]) -> T {
    let ax = p.map(Scalar::abs);
    let inside = (a[0] - ax[0])
        .min_first(a[1] - ax[1])
        .min_first(a[2] - ax[2])
        .clamp_min_zero();
    let mut acc = inside * inside;
    for k in 0..3 {
        let e = (ax[k] - a[k]).clamp_min_zero();
        acc = acc + e * e;
    }
    acc
}

/// Signed surface distance: negative inside, smooth across faces.
pub(crate) fn signed_distance<T: Scalar>(a: &[T; 3], p: &[T; 3]) -> T {
    let ax = p.map(Scalar::abs);
    if (0..3).all(|k| ax[k].value() <= a[k].value()) {
        let margin = (a[0] - ax[0])
            .min_first(a[1] - ax[1])
            .min_first(a[2] - ax[2]);
        return -margin;
    }
    let excess: [T; 3] = std::array::from_fn(|k| (ax[k] - a[k]).clamp_min_zero());
    let outside: Vec<usize> = (0..3).filter(|&k| excess[k].value() > 0.0).collect();
    if let [k] = outside[..] {
        excess[k]
    } else {
        (excess[0] * excess[0] + excess[1] * excess[1] + excess[2] * excess[2]).sqrt()
    }
}

fn split_params<T: Copy>(p: &[T; 9]) -> ([T; 3], [T; 3], [T; 3]) {
    ([p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]])
}

/// `(1/C) Σ d(h, y)² Σa` with `h = (a, r, t)` acting as `ŷ = R(r)(y − t)`.
fn mean_objective<T: Scalar>(params: &[T; 9], points: &[Vec3; MINIMAL_SET_SIZE]) -> T {
    let (a, r, t) = split_params(params);
    let size = a[0] + a[1] + a[2];
    let mut acc = T::constant(0.0);
    for y in points {
        let y = [T::constant(y.x), T::constant(y.y), T::constant(y.z)];
        acc = acc + squared_distance(&a, &to_local(&r, &t, &y));
    }
    acc * size / T::constant(MINIMAL_SET_SIZE as f64)
}

fn value_and_gradient(params: &[f64; 9], points: &[Vec3; MINIMAL_SET_SIZE]) -> (f64, [f64; 9]) {
    let seeded: [Dual<9>; 9] = std::array::from_fn(|i| Dual::variable(params[i], i));
    let out = mean_objective(&seeded, points);
    (out.re, out.eps)
}

/// Per-point residuals `F(y, h) = d(h, y)² (a_x + a_y + a_z)`.
pub fn residuals(minimal_set: &MinimalSet, cuboid: &Cuboid) -> [f64; MINIMAL_SET_SIZE] {
    let size = cuboid.half_extents().sum();
    minimal_set
        .points
        .map(|y| cuboid.squared_distance(&y) * size)
}

/// `(1/C) ‖F(S, h)‖₁`.
pub fn objective(minimal_set: &MinimalSet, cuboid: &Cuboid) -> f64 {
    residuals(minimal_set, cuboid).iter().sum::<f64>() / MINIMAL_SET_SIZE as f64
}

/// Gradient of [`objective`] with respect to `(a_x, a_y, a_z, r, t)`.
///
/// At ties between branches of the distance formula the first branch in
/// axis order supplies the derivative.
pub fn objective_gradient(minimal_set: &MinimalSet, cuboid: &Cuboid) -> [f64; 9] {
    value_and_gradient(&cuboid.params(), &minimal_set.points).1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub cuboid: Cuboid,
    /// World→box rotation of the PCA frame.
    pub frame: Mat3,
    /// Mean of the sample.
    pub center: Vec3,
    /// Set when the sample spread is (numerically) rank ≤ 1.
    pub degenerate: bool,
}

/// PCA box around the sample: centroid, principal axes of the centred
/// points, and per-axis maximal absolute coordinate as half-extent.
///
/// Axis signs are fixed by the sign of each axis' third moment so that the
/// initialisation moves rigidly with the sample.
pub fn init_cuboid(minimal_set: &MinimalSet) -> Initialization {
    let pts = &minimal_set.points;
    let center = pts.iter().sum::<Vec3>() / MINIMAL_SET_SIZE as f64;
    let centered = SMatrix::<f64, MINIMAL_SET_SIZE, 3>::from_fn(|i, k| pts[i][k] - center[k]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let degenerate = svd.singular_values[order[1]] <= DEGENERATE_SPREAD;

    let mut frame = Mat3::zeros();
    for (row, &src) in order.iter().enumerate() {
        let mut axis: Vec3 = v_t.row(src).transpose();
        let skew: f64 = pts.iter().map(|y| axis.dot(&(y - center)).powi(3)).sum();
        if skew < 0.0 {
            axis = -axis;
        }
        frame.set_row(row, &axis.transpose());
    }
    if frame.determinant() < 0.0 {
        let last = -frame.row(2);
        frame.set_row(2, &last);
    }

    let mut half = Vec3::repeat(MIN_HALF_EXTENT);
    for y in pts {
        let p = frame * (y - center);
        for k in 0..3 {
            half[k] = half[k].max(p[k].abs());
        }
    }
    let cuboid = Cuboid::from_rotation_matrix(half, &frame, center)
        .expect("clamped extents and finite pose");
    Initialization {
        cuboid,
        frame,
        center,
        degenerate,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub cuboid: Cuboid,
    /// Objective of the returned iterate.
    pub objective: f64,
    /// Objective at every evaluated iterate, starting with the initialisation.
    pub trace: Vec<f64>,
    pub best_iteration: usize,
    pub degenerate: bool,
    /// Descent hit a non-finite objective and stopped early.
    pub non_finite: bool,
}

/// Adam descent from [`init_cuboid`], returning the best iterate seen.
pub fn fit_cuboid(minimal_set: &MinimalSet, config: &SolverConfig) -> Result<FitOutcome> {
    config.validate()?;
    let init = init_cuboid(minimal_set);
    let local: [Vec3; MINIMAL_SET_SIZE] =
        minimal_set.points.map(|y| init.frame * (y - init.center));

    let a0 = init.cuboid.half_extents();
    // (a, ω, δ): the box is posed by R = exp([ω]×) R₀ and t = t₀ + R₀ᵀ δ.
    let mut theta = [a0.x, a0.y, a0.z, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut m = [0.0; 9];
    let mut v = [0.0; 9];
    let mut best = (f64::INFINITY, theta, 0usize);
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut non_finite = false;

    for step in 0..=config.iterations {
        let (f, g) = value_and_gradient(&theta, &local);
        if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
            non_finite = true;
            break;
        }
        trace.push(f);
        if f < best.0 {
            best = (f, theta, step);
        }
        if step == config.iterations {
            break;
        }
        let t = (step + 1) as i32;
        let c1 = 1.0 - config.adam_beta1.powi(t);
        let c2 = 1.0 - config.adam_beta2.powi(t);
        for i in 0..9 {
            m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g[i];
            v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
        for a in &mut theta[..3] {
            *a = a.max(MIN_HALF_EXTENT);
        }
    }

    let (_, theta, best_iteration) = best;
    if !best.0.is_finite() {
        return Err(Error::Numerical(
            "minimal solver produced no finite iterate".into(),
        ));
    }
    let omega = Vec3::new(theta[3], theta[4], theta[5]);
    let delta = Vec3::new(theta[6], theta[7], theta[8]);
    let rotation = crate::geometry::rotation_matrix(&omega) * init.frame;
    let cuboid = Cuboid::from_rotation_matrix(
        Vec3::new(theta[0], theta[1], theta[2]),
        &rotation,
        init.center + init.frame.transpose() * delta,
    )?;
    Ok(FitOutcome {
        objective: objective(minimal_set, &cuboid),
        cuboid,
        trace,
        best_iteration,
        degenerate: init.degenerate,
        non_finite,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IftGradient {
    /// `∂h/∂S`, 9 parameter rows `(a, r, t)` by 27 columns; column `3j + k`
    /// is coordinate `k` of point `j`. Size rows are zero.
    pub jacobian: DMatrix<f64>,
    /// Condition number of the pose block of `∂F/∂h`.
    pub condition: f64,
    /// False when the pose block was too ill-conditioned; the Jacobian is
    /// then all zeros.
    pub reliable: bool,
}

impl IftGradient {
    /// `∂(r, t)/∂S` (rows 3..9).
    pub fn pose_block(&self) -> DMatrix<f64> {
        self.jacobian.rows(3, 6).into_owned()
    }
}

/// Residual used by the implicit-function step: the signed square root of
/// `F`, i.e. `s(h, y)·√(a_x + a_y + a_z)` with `s` the signed surface
/// distance. Its derivatives stay informative at a zero-residual fit, where
/// those of `F` itself vanish.
fn ift_residual(cuboid: &Cuboid, y: &Vec3) -> Dual<9> {
    let p = cuboid.params();
    let a = [p[0], p[1], p[2]].map(Dual::<9>::constant);
    let r: [Dual<9>; 3] = std::array::from_fn(|k| Dual::variable(p[3 + k], k));
    let t: [Dual<9>; 3] = std::array::from_fn(|k| Dual::variable(p[6 + k], 3 + k));
    let yv: [Dual<9>; 3] = std::array::from_fn(|k| Dual::variable(y[k], 6 + k));
    let scale = Dual::constant(cuboid.half_extents().sum().sqrt());
    signed_distance(&a, &to_local(&r, &t, &yv)) * scale
}

/// `∂h/∂S ≈ −(∂F/∂(r,t))⁺ ∂F/∂S`, with the size derivatives masked out.
pub fn ift_gradient(minimal_set: &MinimalSet, fitted: &Cuboid) -> IftGradient {
    let n = MINIMAL_SET_SIZE;
    let mut d_pose = DMatrix::<f64>::zeros(n, 6);
    let mut d_points = DMatrix::<f64>::zeros(n, 3 * n);
    for (i, y) in minimal_set.points.iter().enumerate() {
        let res = ift_residual(fitted, y);
        for c in 0..6 {
            d_pose[(i, c)] = res.eps[c];
        }
        for k in 0..3 {
            d_points[(i, 3 * i + k)] = res.eps[6 + k];
        }
    }

    let svd = d_pose.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    let mut jacobian = DMatrix::<f64>::zeros(9, 3 * n);
    if !(condition.is_finite() && condition <= MAX_IFT_CONDITION) {
        return IftGradient {
            jacobian,
            condition,
            reliable: false,
        };
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    let pinv = v_t.transpose() * inv_s * u.transpose();
    let pose = -(pinv * d_points);
    jacobian.rows_mut(3, 6).copy_from(&pose);
    IftGradient {
        jacobian,
        condition,
        reliable: true,
    }
}
