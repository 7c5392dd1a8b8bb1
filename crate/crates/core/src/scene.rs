//! Depth rasters, point-cloud scenes and a ray-cast renderer for synthetic
//! ground truth.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Cuboid, Vec3};
use crate::par;

/// Row-major depth map. Values `<= 0` or non-finite mark invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthRaster {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthRaster {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(
                "depth raster",
                "dimensions must be non-zero",
            ));
        }
        if values.len() != height * width {
            return Err(Error::invalid(
                "depth raster",
                format!("{} values for {height}x{width}", values.len()),
            ));
        }
        Ok(DepthRaster {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        DepthRaster::new(height, width, vec![0.0; height * width])
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, depth: f64) {
        self.values[row * self.width + col] = depth;
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| is_valid_depth(**d)).count()
    }
}

pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// 3D feature points with their source pixels and camera.
///
/// Scenes built from a point list get a virtual `1 × N` pixel grid so that
/// weight rasters apply uniformly to both kinds of input.
#[derive(Clone, Debug)]
pub struct Scene {
    points: Vec<Vec3>,
    pixels: Vec<(u32, u32)>,
    grid: (usize, usize),
    valid_mask: Option<Vec<bool>>,
    camera: CameraModel,
    canonical: Vec<usize>,
}

impl Scene {
    pub fn from_points(points: Vec<Vec3>, camera: CameraModel) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("scene", format!("point {i} is not finite")));
            }
            if p.z - camera.center.z <= 0.0 {
                return Err(Error::invalid(
                    "scene",
                    format!("point {i} has non-positive depth"),
                ));
            }
        }
        let n = points.len();
        let pixels = (0..n as u32).map(|i| (0, i)).collect();
        Ok(Scene::assemble(points, pixels, (1, n.max(1)), None, camera))
    }

    fn assemble(
        points: Vec<Vec3>,
        pixels: Vec<(u32, u32)>,
        grid: (usize, usize),
        valid_mask: Option<Vec<bool>>,
        camera: CameraModel,
    ) -> Self {
        let mut canonical: Vec<usize> = (0..points.len()).collect();
        canonical.sort_by(|&i, &j| {
            let (a, b) = (&points[i], &points[j]);
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
                .then(Ordering::Equal)
        });
        Scene {
            points,
            pixels,
            grid,
            valid_mask,
            camera,
            canonical,
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    /// `(row, col)` of point `i` on the pixel grid.
    pub fn pixel(&self, i: usize) -> (u32, u32) {
        self.pixels[i]
    }

    /// `(H, W)` when the scene came from a raster.
    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.valid_mask.as_ref().map(|_| self.grid)
    }

    /// Pixel grid used for weight rasters; `(1, N)` for point-list scenes.
    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid
    }

    pub fn valid_mask(&self) -> Option<&[bool]> {
        self.valid_mask.as_deref()
    }

    /// Point indices sorted by coordinates. Reductions over points follow
    /// this order so that results do not depend on input ordering.
    pub fn canonical_order(&self) -> &[usize] {
        &self.canonical
    }
}

/// Lift every valid pixel through the pinhole model.
pub fn backproject(depth: &DepthRaster, camera: &CameraModel) -> Scene {
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    let mut mask = Vec::with_capacity(depth.values.len());
    for row in 0..depth.height {
        for col in 0..depth.width {
            let z = depth.get(row, col);
            let valid = is_valid_depth(z);
            mask.push(valid);
            if valid {
                points.push(camera.backproject(col as f64, row as f64, z));
                pixels.push((row as u32, col as u32));
            }
        }
    }
    Scene::assemble(
        points,
        pixels,
        (depth.height, depth.width),
        Some(mask),
        *camera,
    )
}

/// Ray parameter of the first surface hit along `origin + s·dir`, `s > 0`.
pub fn ray_hit(cuboid: &Cuboid, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let o = cuboid.to_local(origin);
    let d = cuboid.rotation_matrix() * dir;
    let a = cuboid.half_extents();
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > a[k] {
                return None;
            }
            continue;
        }
        let s0 = (-a[k] - o[k]) / d[k];
        let s1 = (a[k] - o[k]) / d[k];
        near = near.max(s0.min(s1));
        far = far.min(s0.max(s1));
    }
    if near > far || far <= 0.0 {
        return None;
    }
    Some(if near > 0.0 { near } else { far })
}

/// Ray-cast depth map of a cuboid set; pixels that miss everything are 0.
pub fn render_synthetic(
    cuboids: &[Cuboid],
    camera: &CameraModel,
    height: usize,
    width: usize,
) -> Result<DepthRaster> {
    if cuboids.is_empty() {
        return Err(Error::NoPrimitives);
    }
    let rows = par::map_indices(height, |row| {
        (0..width)
            .map(|col| {
                let dir = camera.ray_direction(col as f64, row as f64);
                cuboids
                    .iter()
                    .filter_map(|c| ray_hit(c, &camera.center, &dir))
                    .fold(f64::INFINITY, f64::min)
            })
            .map(|s| if s.is_finite() { s } else { 0.0 })
            .collect::<Vec<_>>()
    });
    DepthRaster::new(height, width, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> CameraModel {
        CameraModel::new(60.0, 60.0, 31.5, 23.5).unwrap()
    }

    #[test]
    fn backprojection_examples() {
        let cam = CameraModel::new(100.0, 80.0, 2.0, 1.0).unwrap();
        let mut depth = DepthRaster::zeros(3, 103).unwrap();
        depth.set(1, 2, 2.0);
        depth.set(1, 102, 1.0);
        let scene = backproject(&depth, &cam);
        assert_eq!(scene.len(), 2);
        assert_eq!(scene.points()[0], Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(scene.points()[1], Vec3::new(1.0, 0.0, 1.0));
        let mask = scene.valid_mask().unwrap();
        assert_eq!(mask.iter().filter(|m| **m).count(), 2);
        assert!(!mask[0]);
        assert_eq!(scene.resolution(), Some((3, 103)));
    }

    #[test]
    fn invalid_depths_are_dropped() {
        let depth = DepthRaster::new(1, 4, vec![0.0, -1.0, f64::NAN, f64::INFINITY]).unwrap();
        let scene = backproject(&depth, &camera());
        assert!(scene.is_empty());
        assert_eq!(depth.valid_count(), 0);
    }

    #[test]
    fn reprojection_recovers_pixel_centres() {
        let cam = camera();
        let mut depth = DepthRaster::zeros(48, 64).unwrap();
        for row in 0..48 {
            for col in 0..64 {
                depth.set(row, col, 1.0 + (row * 64 + col) as f64 * 1e-3);
            }
        }
        let scene = backproject(&depth, &cam);
        for (i, p) in scene.points().iter().enumerate() {
            let (u, v) = cam.project(p);
            let (row, col) = scene.pixel(i);
            assert!((u - col as f64).abs() < 1e-9 && (v - row as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn render_examples() {
        let c = Cuboid::axis_aligned(Vec3::new(1.0, 1.0, 1.0), Vec3::new(0.0, 0.0, 3.0)).unwrap();
        let cam = CameraModel::new(60.0, 60.0, 32.0, 24.0).unwrap();
        let depth = render_synthetic(&[c], &cam, 48, 64).unwrap();
        assert_eq!(depth.get(24, 32), 2.0);
        assert_eq!(depth.get(0, 0), 0.0);
        assert!(render_synthetic(&[], &cam, 4, 4).is_err());
    }

    #[test]
    fn render_is_min_over_cuboids() {
        let cam = camera();
        let a = Cuboid::new(
            Vec3::new(0.5, 0.4, 0.3),
            Vec3::new(0.1, 0.5, 0.0),
            Vec3::new(-0.2, 0.0, 3.0),
        )
        .unwrap();
        let b = Cuboid::new(
            Vec3::new(0.3, 0.6, 0.4),
            Vec3::new(0.0, -0.3, 0.2),
            Vec3::new(0.4, 0.1, 4.0),
        )
        .unwrap();
        let both = render_synthetic(&[a, b], &cam, 48, 64).unwrap();
        let ra = render_synthetic(&[a], &cam, 48, 64).unwrap();
        let rb = render_synthetic(&[b], &cam, 48, 64).unwrap();
        for i in 0..both.values().len() {
            let da = ra.values()[i];
            let db = rb.values()[i];
            let expected = match (da > 0.0, db > 0.0) {
                (true, true) => da.min(db),
                (true, false) => da,
                (false, true) => db,
                (false, false) => 0.0,
            };
            assert_eq!(both.values()[i], expected);
        }
    }

    #[test]
    fn point_list_scene_validation() {
        let cam = camera();
        assert!(Scene::from_points(vec![Vec3::new(0.0, 0.0, -1.0)], cam).is_err());
        assert!(Scene::from_points(vec![Vec3::new(f64::NAN, 0.0, 1.0)], cam).is_err());
        let s = Scene::from_points(
            vec![Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0)],
            cam,
        )
        .unwrap();
        assert_eq!(s.grid_shape(), (1, 2));
        assert_eq!(s.resolution(), None);
        assert_eq!(s.canonical_order(), &[1, 0]);
    }
}
