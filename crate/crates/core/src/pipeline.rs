//! Sequential robust fitting.
//!
//! Each round draws a pool of hypotheses, scores every candidate `M ∪ {h}`
//! by the occlusion-aware inlier count and keeps the best one if it raises
//! the count by more than the cutoff `Θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::inlier::{InlierParams, ScoreCache};
use crate::par;
use crate::sampling::{select_weight_set, PointSampler, RngStream, SamplingWeights};
use crate::scene::Scene;
use crate::solver::{fit_cuboid, MinimalSet, SolverConfig, MINIMAL_SET_SIZE};

/// Redraws allowed per hypothesis slot before a degenerate fit is kept.
pub const MAX_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_instances: usize,
    pub hypotheses_per_round: usize,
    pub cutoff: f64,
    pub inlier: InlierParams,
    pub solver: SolverConfig,
    pub master_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_instances: 6,
            hypotheses_per_round: 4096,
            cutoff: 10.0,
            inlier: InlierParams::default(),
            solver: SolverConfig::default(),
            master_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_instances == 0 {
            return Err(Error::invalid("instances", "must be at least 1"));
        }
        if self.hypotheses_per_round == 0 {
            return Err(Error::invalid("hypotheses", "must be at least 1"));
        }
        if !(self.cutoff.is_finite() && self.cutoff >= 0.0) {
            return Err(Error::invalid("cutoff", "must be finite and non-negative"));
        }
        self.inlier.validate()?;
        self.solver.validate()
    }

    /// Random stream for one hypothesis slot.
    pub fn stream(&self, round: usize, slot: usize) -> RngStream {
        let id = round as u64 * self.hypotheses_per_round as u64 + slot as u64;
        RngStream::new(self.master_seed, id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub cuboid: Cuboid,
    pub minimal_set: MinimalSet,
    /// `I_c(Y, M ∪ {h})`.
    pub score: f64,
    pub weight_set_index: usize,
    pub stream: RngStream,
    /// Every draw for this slot produced a degenerate or non-finite fit.
    pub degenerate: bool,
}

/// Accepted cuboids in acceptance order with the inlier count after each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CuboidSet {
    pub cuboids: Vec<Cuboid>,
    pub scores: Vec<f64>,
    /// Best candidate gain of every round run, including the rejected one.
    pub gains: Vec<f64>,
}

impl CuboidSet {
    pub fn len(&self) -> usize {
        self.cuboids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuboids.is_empty()
    }
}

/// Draw and fit `hypotheses_per_round` candidates, each scored against the
/// accepted set held by `current`.
pub fn generate_hypotheses(
    scene: &Scene,
    weights: &SamplingWeights,
    config: &FitConfig,
    round: usize,
    current: &ScoreCache,
) -> Result<Vec<Hypothesis>> {
    if scene.len() < MINIMAL_SET_SIZE {
        return Err(Error::InsufficientSupport {
            available: scene.len(),
            required: MINIMAL_SET_SIZE,
        });
    }
    weights.validate_for(scene)?;
    let samplers = weights
        .sets()
        .iter()
        .map(|set| PointSampler::new(set, scene))
        .collect::<Result<Vec<_>>>()?;

    let slots = par::map_indices(config.hypotheses_per_round, |slot| {
        let stream = config.stream(round, slot);
        let mut rng = stream.generator();
        let mut attempt = 0;
        loop {
            let set_index = select_weight_set(weights, &mut rng);
            let minimal_set = samplers[set_index].sample(scene, &mut rng);
            let fit = fit_cuboid(&minimal_set, &config.solver)?;
            let bad = fit.degenerate || fit.non_finite;
            if !bad || attempt == MAX_RETRIES {
                let score = current.count_with(&fit.cuboid);
                return Ok(Hypothesis {
                    cuboid: fit.cuboid,
                    minimal_set,
                    score,
                    weight_set_index: set_index,
                    stream,
                    degenerate: bad,
                });
            }
            attempt += 1;
        }
    });
    slots.into_iter().collect()
}

/// Index of the highest-scoring hypothesis; ties go to the lowest index.
pub fn select_best(pool: &[Hypothesis]) -> Result<usize> {
    argmax(pool.iter().map(|h| h.score))
}

fn argmax(scores: impl Iterator<Item = f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if !s.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("hypothesis pool", "no finite scores"))
}

/// Softmax over pool scores, shifted by the maximum for overflow safety.
pub fn selection_probabilities(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("hypothesis pool", "pool is empty"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite hypothesis score".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// Fit cuboids one at a time until the best candidate's gain drops to `Θ`
/// or `max_instances` are accepted.
///
/// Round `k` samples with `weights[min(k, len - 1)]`, so a single entry
/// serves every round.
pub fn sequential_fit(
    scene: &Scene,
    weights: &[SamplingWeights],
    config: &FitConfig,
) -> Result<CuboidSet> {
    config.validate()?;
    if weights.is_empty() {
        return Err(Error::invalid(
            "sampling weights",
            "need at least one weight file",
        ));
    }
    let mut cache = ScoreCache::new(scene, config.inlier)?;
    let mut result = CuboidSet::default();
    for round in 0..config.max_instances {
        let round_weights = &weights[round.min(weights.len() - 1)];
        let pool = generate_hypotheses(scene, round_weights, config, round, &cache)?;
        let best = &pool[select_best(&pool)?];
        let before = cache.count();
        let gain = best.score - before;
        result.gains.push(gain);
        if gain <= config.cutoff {
            break;
        }
        cache.push(&best.cuboid);
        assert!(
            cache.count() - before > config.cutoff,
            "accepted cuboid did not raise the inlier count"
        );
        result.cuboids.push(best.cuboid);
        result.scores.push(cache.count());
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{oa_distance, Vec3};
    use crate::sampling::uniform_weights;
    use crate::scene::backproject;
    use crate::synthetic::{desk_camera, occluder_pair, seeded_rng, SyntheticScene};
    use rand::Rng;

    fn small_config(h: usize) -> FitConfig {
        FitConfig {
            hypotheses_per_round: h,
            master_seed: 11,
            ..FitConfig::default()
        }
    }

    fn single_box() -> SyntheticScene {
        let c = Cuboid::new(
            Vec3::new(0.8, 0.6, 0.7),
            Vec3::new(0.3, 0.6, 0.1),
            Vec3::new(0.0, 0.0, 5.2),
        )
        .unwrap();
        SyntheticScene::render(vec![c], desk_camera(), 48, 64).unwrap()
    }

    fn dummy(score: f64) -> Hypothesis {
        let pts = std::array::from_fn(|i| Vec3::new(i as f64, 0.0, 1.0));
        Hypothesis {
            cuboid: Cuboid::axis_aligned(Vec3::new(1.0, 1.0, 1.0), Vec3::zeros()).unwrap(),
            minimal_set: MinimalSet::from_points(pts).unwrap(),
            score,
            weight_set_index: 0,
            stream: RngStream::new(0, 0),
            degenerate: false,
        }
    }

    #[test]
    fn argmax_first_tie() {
        let pool: Vec<_> = [3.0, 7.0, 7.0].into_iter().map(dummy).collect();
        assert_eq!(select_best(&pool).unwrap(), 1);
        assert_eq!(select_best(&pool[..1]).unwrap(), 0);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = selection_probabilities(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = selection_probabilities(&[0.0, 1000.0]).unwrap();
        assert!(p[0] < 1e-300 && (p[1] - 1.0).abs() < 1e-15);
        let mut rng = seeded_rng(4);
        let s: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.0).collect();
        let (a, b) = (
            selection_probabilities(&s).unwrap(),
            selection_probabilities(&shifted).unwrap(),
        );
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_contract() {
        let s = single_box();
        let scene = backproject(&s.depth, &s.camera);
        let w = uniform_weights(&scene).unwrap();
        let config = small_config(4);
        let cache = ScoreCache::new(&scene, config.inlier).unwrap();
        let pool = generate_hypotheses(&scene, &w, &config, 2, &cache).unwrap();
        assert_eq!(pool.len(), 4);
        let ids: Vec<u64> = pool.iter().map(|h| h.stream.stream_id).collect();
        assert_eq!(ids, vec![8, 9, 10, 11]);
        assert!(pool.iter().all(|h| h.score.is_finite()));
        let again = generate_hypotheses(&scene, &w, &config, 2, &cache).unwrap();
        assert_eq!(pool, again);
    }

    #[test]
    fn some_hypothesis_fits_a_clean_box() {
        // Per-seed success is about 90%, so look across seeds.
        let s = single_box();
        let scene = backproject(&s.depth, &s.camera);
        let w = uniform_weights(&scene).unwrap();
        let hits = (0..10)
            .filter(|&seed| {
                let config = FitConfig {
                    master_seed: seed,
                    ..small_config(64)
                };
                let cache = ScoreCache::new(&scene, config.inlier).unwrap();
                let pool = generate_hypotheses(&scene, &w, &config, 0, &cache).unwrap();
                pool.iter().any(|h| {
                    h.minimal_set
                        .points()
                        .iter()
                        .all(|p| h.cuboid.distance(p) < 1e-2)
                })
            })
            .count();
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn eight_points_are_not_enough() {
        let pts = (0..8)
            .map(|i| Vec3::new(i as f64 * 0.1, 0.0, 2.0))
            .collect();
        let scene = Scene::from_points(pts, desk_camera()).unwrap();
        let w = uniform_weights(&scene);
        let config = small_config(4);
        let cache = ScoreCache::new(&scene, config.inlier).unwrap();
        // The uniform raster itself is fine; the scene lacks support.
        let w = w.unwrap();
        assert!(matches!(
            generate_hypotheses(&scene, &w, &config, 0, &cache),
            Err(Error::InsufficientSupport { available: 8, .. })
        ));
    }

    #[test]
    fn occluding_candidate_loses() {
        let pair = occluder_pair().unwrap();
        let scene = backproject(&pair.scene.depth, &pair.scene.camera);
        let cache = ScoreCache::new(&scene, InlierParams::default()).unwrap();
        let mut pool = vec![dummy(0.0), dummy(0.0)];
        pool[0].cuboid = pair.b;
        pool[1].cuboid = pair.a;
        for h in &mut pool {
            h.score = cache.count_with(&h.cuboid);
        }
        assert_eq!(select_best(&pool).unwrap(), 1);
    }

    #[test]
    fn single_box_is_recovered() {
        let s = single_box();
        let scene = backproject(&s.depth, &s.camera);
        let w = uniform_weights(&scene).unwrap();
        let config = small_config(256);
        let fit = sequential_fit(&scene, &[w], &config).unwrap();
        assert_eq!(fit.len(), 1, "{:?}", fit.gains);
        assert_eq!(fit.gains.len(), 2);
        let mean = scene
            .points()
            .iter()
            .map(|p| oa_distance(&fit.cuboids, p, scene.camera()).unwrap())
            .sum::<f64>()
            / scene.len() as f64;
        assert!(mean < 0.05, "{mean}");
    }

    #[test]
    fn noise_yields_nothing() {
        let mut rng = seeded_rng(8);
        // Sparse points scattered through a large volume: no nine of them
        // share a cuboid surface closely enough to beat the cutoff.
        let pts = (0..60)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(10.0..50.0),
                )
            })
            .collect();
        let scene = Scene::from_points(pts, desk_camera()).unwrap();
        let w = uniform_weights(&scene).unwrap();
        let fit = sequential_fit(&scene, &[w], &small_config(64)).unwrap();
        assert!(fit.is_empty(), "{:?}", fit.gains);
    }

    #[test]
    fn reproducible() {
        let s = single_box();
        let scene = backproject(&s.depth, &s.camera);
        let w = uniform_weights(&scene).unwrap();
        let config = small_config(64);
        let a = sequential_fit(&scene, std::slice::from_ref(&w), &config).unwrap();
        let b = sequential_fit(&scene, &[w], &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(small_config(0).validate().is_err());
        let mut c = small_config(4);
        c.cutoff = -1.0;
        assert!(c.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
    }
}
