//! Two-step minimal-set sampling.
//!
//! A weight set is drawn according to the selection probabilities `q`, then
//! nine distinct points are drawn in proportion to that set's per-pixel
//! weights. Weight rasters live at 1/8 of the pixel resolution; every cell
//! covers an 8×8 pixel block. A single uniform raster reproduces plain
//! Sequential RANSAC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::solver::{MinimalSet, MINIMAL_SET_SIZE};

/// Pixels per raster cell along each axis.
pub const RASTER_STRIDE: usize = 8;

/// Raster dimensions `(rows, cols)` for a pixel grid.
pub fn raster_shape(grid: (usize, usize)) -> (usize, usize) {
    (
        grid.0.div_ceil(RASTER_STRIDE),
        grid.1.div_ceil(RASTER_STRIDE),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightRaster {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl WeightRaster {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::invalid(
                "weight raster",
                format!("{} values for {height}x{width}", values.len()),
            ));
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "weight raster",
                "weights must be finite and non-negative",
            ));
        }
        Ok(WeightRaster {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Weight of the cell covering pixel `(row, col)`.
    pub fn at_pixel(&self, row: u32, col: u32) -> f64 {
        let r = (row as usize / RASTER_STRIDE).min(self.height - 1);
        let c = (col as usize / RASTER_STRIDE).min(self.width - 1);
        self.values[r * self.width + c]
    }
}

/// `Q` weight rasters with selection probabilities `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWeights {
    sets: Vec<WeightRaster>,
    selection: Vec<f64>,
}

impl SamplingWeights {
    pub fn new(sets: Vec<WeightRaster>, selection: Vec<f64>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid(
                "sampling weights",
                "need at least one weight set",
            ));
        }
        if sets.len() != selection.len() {
            return Err(Error::invalid(
                "sampling weights",
                format!(
                    "{} sets but {} selection probabilities",
                    sets.len(),
                    selection.len()
                ),
            ));
        }
        let (h, w) = (sets[0].height, sets[0].width);
        if sets.iter().any(|s| s.height != h || s.width != w) {
            return Err(Error::invalid(
                "sampling weights",
                "weight sets differ in shape",
            ));
        }
        if selection.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::invalid(
                "sampling weights",
                "selection probabilities must be non-negative",
            ));
        }
        let total: f64 = selection.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "sampling weights",
                format!("selection probabilities sum to {total}"),
            ));
        }
        Ok(SamplingWeights { sets, selection })
    }

    pub fn sets(&self) -> &[WeightRaster] {
        &self.sets
    }

    pub fn selection(&self) -> &[f64] {
        &self.selection
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Check shape against the scene grid and that every set can support a
    /// minimal sample.
    pub fn validate_for(&self, scene: &Scene) -> Result<()> {
        let expected = raster_shape(scene.grid_shape());
        let got = (self.sets[0].height, self.sets[0].width);
        if got != expected {
            return Err(Error::invalid(
                "sampling weights",
                format!(
                    "raster is {}x{}, scene needs {}x{}",
                    got.0, got.1, expected.0, expected.1
                ),
            ));
        }
        for set in &self.sets {
            PointSampler::new(set, scene)?;
        }
        Ok(())
    }
}

/// Uniform weights over the valid pixels: one set, `q = (1)`.
pub fn uniform_weights(scene: &Scene) -> Result<SamplingWeights> {
    if scene.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let (h, w) = raster_shape(scene.grid_shape());
    let mut values = vec![0.0; h * w];
    for i in 0..scene.len() {
        let (row, col) = scene.pixel(i);
        values[(row as usize / RASTER_STRIDE) * w + col as usize / RASTER_STRIDE] = 1.0;
    }
    SamplingWeights::new(vec![WeightRaster::new(h, w, values)?], vec![1.0])
}

/// Address of an independent random stream.
///
/// Streams are ChaCha8 keystreams keyed by `master_seed` with `stream_id`
/// as the stream selector, so any `(seed, id)` pair yields the same draws on
/// every platform and thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStream {
            master_seed,
            stream_id,
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Categorical draw of a weight-set index according to `q`.
pub fn select_weight_set<R: Rng + ?Sized>(weights: &SamplingWeights, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let last_positive = weights
        .selection
        .iter()
        .rposition(|q| *q > 0.0)
        .unwrap_or(0);
    for (i, q) in weights.selection.iter().enumerate() {
        acc += q;
        if u < acc && *q > 0.0 {
            return i;
        }
    }
    last_positive
}

/// Prefix sums of per-point weights for one raster.
#[derive(Clone, Debug)]
pub struct PointSampler {
    cumulative: Vec<f64>,
    positive: usize,
}

impl PointSampler {
    pub fn new(raster: &WeightRaster, scene: &Scene) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(scene.len());
        let mut acc = 0.0;
        let mut positive = 0;
        for i in 0..scene.len() {
            let (row, col) = scene.pixel(i);
            let w = raster.at_pixel(row, col);
            if w > 0.0 {
                positive += 1;
            }
            acc += w;
            cumulative.push(acc);
        }
        if positive < MINIMAL_SET_SIZE {
            return Err(Error::InsufficientSupport {
                available: positive,
                required: MINIMAL_SET_SIZE,
            });
        }
        Ok(PointSampler {
            cumulative,
            positive,
        })
    }

    pub fn positive_count(&self) -> usize {
        self.positive
    }

    fn weight(&self, i: usize) -> f64 {
        self.cumulative[i] - if i == 0 { 0.0 } else { self.cumulative[i - 1] }
    }

    fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|c| *c <= u);
        // Skip zero-weight entries sharing the same prefix value.
        let mut i = i.min(self.cumulative.len() - 1);
        while self.weight(i) <= 0.0 {
            i -= 1;
        }
        i
    }

    /// Nine distinct indices, drawn one by one proportionally to weight
    /// among those not yet chosen.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> [usize; MINIMAL_SET_SIZE] {
        let mut chosen = [usize::MAX; MINIMAL_SET_SIZE];
        let mut rejections = 0;
        let mut k = 0;
        while k < MINIMAL_SET_SIZE {
            if rejections > 64 * MINIMAL_SET_SIZE {
                chosen[k] = self.draw_excluding(&chosen[..k], rng);
                k += 1;
                continue;
            }
            let i = self.draw_one(rng);
            if chosen[..k].contains(&i) {
                rejections += 1;
                continue;
            }
            chosen[k] = i;
            k += 1;
        }
        chosen
    }

    /// Exact draw from the renormalised remaining weights.
    fn draw_excluding<R: Rng + ?Sized>(&self, excluded: &[usize], rng: &mut R) -> usize {
        let removed: f64 = excluded.iter().map(|&i| self.weight(i)).sum();
        let total = self.cumulative.last().expect("non-empty") - removed;
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for i in 0..self.cumulative.len() {
            let w = self.weight(i);
            if w <= 0.0 || excluded.contains(&i) {
                continue;
            }
            acc += w;
            last = Some(i);
            if u < acc {
                return i;
            }
        }
        last.expect("at least nine positive weights")
    }

    pub fn sample<R: Rng + ?Sized>(&self, scene: &Scene, rng: &mut R) -> MinimalSet {
        let indices = self.sample_indices(rng);
        let points = indices.map(|i| scene.points()[i]);
        MinimalSet::new(indices, points).expect("distinct indices of finite scene points")
    }
}

/// Draw a minimal set from one raster.
pub fn sample_minimal_set<R: Rng + ?Sized>(
    raster: &WeightRaster,
    scene: &Scene,
    rng: &mut R,
) -> Result<MinimalSet> {
    Ok(PointSampler::new(raster, scene)?.sample(scene, rng))
}
