//! Scene-level evaluation by occlusion-aware distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_distance, oa_distance, Cuboid};
use crate::par;
use crate::scene::Scene;
use crate::superquadric::{SqEvalConfig, SqScene, Superquadric};

/// Default AUC upper bounds in metres.
pub const DEFAULT_BOUNDS: [f64; 4] = [0.50, 0.20, 0.10, 0.05];

#[derive(Clone, Debug)]
pub enum Primitives {
    Cuboids(Vec<Cuboid>),
    Superquadrics(Vec<Superquadric>, SqEvalConfig),
}

impl Primitives {
    pub fn len(&self) -> usize {
        match self {
            Primitives::Cuboids(c) => c.len(),
            Primitives::Superquadrics(s, _) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent, keyed by the bound in metres.
    pub auc: BTreeMap<String, f64>,
    pub mean_oa: f64,
    pub mean_l2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_point_distances: Option<Vec<f64>>,
}

/// Report key for a bound: the shortest decimal that round-trips.
pub fn bound_key(bound: f64) -> String {
    format!("{bound}")
}

fn validate_bound(bound: f64) -> Result<()> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::invalid(
            "bound",
            format!("{bound} is not a positive length"),
        ));
    }
    Ok(())
}

/// `(100/N)·Σ clamp(1 − d_i/b, 0, 1)`: the normalised area under the
/// recall curve on `[0, b]`.
pub fn auc(distances: &[f64], bound: f64) -> Result<f64> {
    validate_bound(bound)?;
    if distances.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let terms: Vec<f64> = distances
        .iter()
        .map(|d| (1.0 - d / bound).clamp(0.0, 1.0))
        .collect();
    Ok(100.0 * par::pairwise_sum(&terms) / distances.len() as f64)
}

/// Fraction of distances `<= t` at `steps` evenly spaced thresholds on
/// `[0, bound]`.
pub fn recall_curve(distances: &[f64], bound: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    validate_bound(bound)?;
    if steps < 2 {
        return Err(Error::invalid("recall curve", "need at least 2 steps"));
    }
    if distances.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok((0..steps)
        .map(|k| {
            let t = bound * k as f64 / (steps - 1) as f64;
            let within = sorted.partition_point(|d| *d <= t);
            (t, within as f64 / n)
        })
        .collect())
}

fn mean(values: &[f64]) -> f64 {
    par::pairwise_sum(values) / values.len() as f64
}

/// Per-point `(oa, plain)` distances of the scene to the primitives.
pub fn point_distances(scene: &Scene, primitives: &Primitives) -> Result<(Vec<f64>, Vec<f64>)> {
    if scene.is_empty() {
        return Err(Error::NoValidPoints);
    }
    if primitives.is_empty() {
        return Err(Error::NoPrimitives);
    }
    let points = scene.points();
    Ok(match primitives {
        Primitives::Cuboids(cuboids) => {
            let camera = scene.camera();
            let pairs = par::map_indices(points.len(), |i| {
                let oa = oa_distance(cuboids, &points[i], camera).expect("non-empty set");
                let l2 = min_distance(cuboids, &points[i]).expect("non-empty set");
                (oa, l2)
            });
            pairs.into_iter().unzip()
        }
        Primitives::Superquadrics(sqs, config) => {
            let sq_scene = SqScene::new(sqs.clone(), *scene.camera(), *config)?;
            (
                sq_scene.oa_distances(points),
                sq_scene.min_distances(points),
            )
        }
    })
}

pub fn evaluate(
    scene: &Scene,
    primitives: &Primitives,
    bounds: &[f64],
    keep_per_point: bool,
) -> Result<EvalReport> {
    if bounds.is_empty() {
        return Err(Error::invalid("bounds", "need at least one bound"));
    }
    for b in bounds {
        validate_bound(*b)?;
    }
    let (oa, l2) = point_distances(scene, primitives)?;
    // Reduce in canonical point order so the report ignores input order.
    let order = scene.canonical_order();
    let oa_sorted: Vec<f64> = order.iter().map(|&i| oa[i]).collect();
    let l2_sorted: Vec<f64> = order.iter().map(|&i| l2[i]).collect();
    let mut table = BTreeMap::new();
    for b in bounds {
        table.insert(bound_key(*b), auc(&oa_sorted, *b)?);
    }
    Ok(EvalReport {
        auc: table,
        mean_oa: mean(&oa_sorted),
        mean_l2: mean(&l2_sorted),
        per_point_distances: keep_per_point.then_some(oa),
    })
}
