//! Synthetic scene generation for testing and benchmarking.
//!
//! Scenes pair an analytic surface (with exact gradients, hence exact
//! normals) with a rendered image produced by the same discrete gradient
//! operator the solvers use, so the ground-truth depth reproduces the input
//! image to machine precision. Two-view scenes raycast an actual sphere in
//! world space so that cross-view correspondences are geometrically exact.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as Gaussian};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, normal_from_gradient, pixel_ray, project, DepthMap, Intrinsics, Normal, Pose,
};
use crate::gradient::GradientScheme;
use crate::grid::{Grid, Mask, PixelSet};
use crate::multiview::{CorrespondenceSet, Match, ViewBundle};
use crate::shading::{render, Albedo, Image, Lighting};
use crate::solver::SfsProblem;

/// Metric depth (along the ray) of the flat reference plane behind the
/// relief in perspective single-view scenes.
const PERSPECTIVE_BASE_DEPTH: f64 = 2.0;

/// Fraction of the base depth spanned by the relief in perspective
/// single-view scenes.
const PERSPECTIVE_RELIEF: f64 = 0.3;

/// Surfaces steeper than this against the viewing ray are masked out of
/// raycast scenes; grazing geometry carries almost no shading signal.
const MAX_SLANT_DEGREES: f64 = 65.0;

/// Named lighting configurations used across tests and examples, plus an
/// escape hatch for arbitrary coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightingPreset {
    /// Grey lighting dominated by the first-order band.
    L1,
    /// Grey lighting with all second-order terms active.
    L2,
    /// Colored lighting: three distinct rows, one per RGB channel.
    L3,
    /// Explicit per-channel coefficient rows.
    Custom(Vec<[f64; 9]>),
}

impl LightingPreset {
    /// Coefficient rows for this preset.
    pub fn lighting(&self) -> Result<Lighting> {
        let rows = match self {
            LightingPreset::L1 => vec![[0.1, -0.25, -0.7, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]],
            LightingPreset::L2 => vec![[0.2, 0.3, -0.7, 0.5, -0.2, -0.2, 0.3, 0.3, 0.2]],
            LightingPreset::L3 => vec![
                [-0.2, -0.2, -1.0, 0.4, 0.1, -0.1, -0.1, -0.1, 0.05],
                [0.0, 0.2, -1.0, 0.3, 0.0, 0.2, 0.1, 0.0, 0.1],
                [0.2, -0.2, -1.0, 0.2, -0.1, 0.0, 0.0, 0.1, 0.0],
            ],
            LightingPreset::Custom(rows) => rows.clone(),
        };
        Lighting::new(rows)
    }
}

/// Analytic height-field families for single-view scenes.
///
/// Each surface provides its height and exact gradient in pixel units; the
/// camera model then decides how heights map to stored depth values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    /// Spherical cap bulging toward the camera. The sphere radius is
    /// `radius_frac * size / 2` pixels and the mask keeps polar radii up to
    /// ninety percent of it, bounding the slant away from grazing.
    Sphere { radius_frac: f64 },
    /// Smooth bump of height `amplitude * size / 2` pixels and standard
    /// deviation `sigma_frac * size / 2` pixels, defined everywhere.
    GaussianBlob { sigma_frac: f64, amplitude: f64 },
    /// Plane with constant per-pixel slopes.
    Ramp { slope_x: f64, slope_y: f64 },
    /// Fixed arrangement of two opposing bumps on a gentle tilt; useful when
    /// a scene needs both convex and concave regions.
    Composite,
}

/// Camera model for single-view scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "projection", rename_all = "snake_case")]
pub enum CameraSpec {
    Orthographic,
    /// Pinhole camera with focal length `focal_factor * size` pixels and the
    /// principal point at the image center.
    Perspective { focal_factor: f64 },
}

/// Reflectance patterns for generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlbedoSpec {
    Constant { value: f64 },
    /// Square checkerboard alternating between two reflectance values.
    Checker { low: f64, high: f64, period: u32 },
}

/// Full description of a single-view synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePreset {
    /// Image width and height in pixels.
    pub size: u32,
    pub surface: SurfaceKind,
    pub camera: CameraSpec,
    pub albedo: AlbedoSpec,
    pub lighting: LightingPreset,
    /// Gradient discretization used when rendering; must match the solver's
    /// for the ground truth to reproduce the image exactly.
    #[serde(default)]
    pub scheme: GradientScheme,
}

impl ScenePreset {
    /// Sphere over the given lighting with sensible defaults; the workhorse
    /// configuration for single-view experiments.
    pub fn sphere(size: u32, lighting: LightingPreset) -> Self {
        ScenePreset {
            size,
            surface: SurfaceKind::Sphere { radius_frac: 0.9 },
            camera: CameraSpec::Orthographic,
            albedo: AlbedoSpec::Constant { value: 0.8 },
            lighting,
            scheme: GradientScheme::default(),
        }
    }

    /// Gaussian blob over the given lighting with sensible defaults.
    pub fn blob(size: u32, lighting: LightingPreset) -> Self {
        ScenePreset {
            size,
            surface: SurfaceKind::GaussianBlob {
                sigma_frac: 0.5,
                amplitude: 0.35,
            },
            camera: CameraSpec::Orthographic,
            albedo: AlbedoSpec::Constant { value: 0.8 },
            lighting,
            scheme: GradientScheme::default(),
        }
    }
}

/// A generated scene: ground truth and the observations derived from it.
#[derive(Clone, Debug)]
pub struct Scene {
    /// Ground-truth depth; height for orthographic cameras, log of the
    /// metric depth along the ray for perspective ones. NaN outside the mask.
    pub depth: DepthMap,
    /// Exact surface normals from the analytic gradient (camera frame for
    /// raycast scenes). NaN outside the mask.
    pub normals: Grid<Normal>,
    /// Rendered intensities, including any requested noise.
    pub image: Image,
    pub albedo: Albedo,
    pub lighting: Lighting,
    pub intr: Intrinsics,
    pub pose: Pose,
    pub mask: Mask,
}

impl Scene {
    /// The scene packaged as a single-view reconstruction problem.
    pub fn problem(&self) -> Result<SfsProblem<'_>> {
        SfsProblem::new(
            &self.image,
            &self.albedo,
            &self.lighting,
            &self.intr,
            &self.mask,
        )
    }

    /// The scene packaged as one view of a multi-view problem.
    pub fn view(&self) -> ViewBundle<'_> {
        ViewBundle {
            image: &self.image,
            albedo: &self.albedo,
            lighting: &self.lighting,
            intr: &self.intr,
            pose: &self.pose,
            mask: &self.mask,
        }
    }
}

/// A pair of views of one world-space surface, with shared ground truth.
#[derive(Clone, Debug)]
pub struct TwoViewScene {
    pub views: Vec<Scene>,
    /// World-space center of the observed sphere.
    pub sphere_center: Vector3<f64>,
    /// World-space radius of the observed sphere.
    pub sphere_radius: f64,
}

/// Height and exact gradient of the analytic surface at a (sub)pixel
/// position, or None where the surface is undefined (outside its mask).
fn sample_surface(kind: SurfaceKind, size: u32, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let half = (size as f64 - 1.0) / 2.0;
    let (cx, cy) = (half, half);
    match kind {
        SurfaceKind::Sphere { radius_frac } => {
            let r = radius_frac * size as f64 / 2.0;
            let (dx, dy) = (x - cx, y - cy);
            let rho2 = dx * dx + dy * dy;
            let lim = 0.9 * r;
            if rho2 > lim * lim {
                return None;
            }
            let s = (r * r - rho2).sqrt();
            Some((-s, dx / s, dy / s))
        }
        SurfaceKind::GaussianBlob {
            sigma_frac,
            amplitude,
        } => {
            let sigma = sigma_frac * size as f64 / 2.0;
            let a = amplitude * size as f64 / 2.0;
            let (dx, dy) = (x - cx, y - cy);
            let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            let scale = a * g / (sigma * sigma);
            Some((-a * g, scale * dx, scale * dy))
        }
        SurfaceKind::Ramp { slope_x, slope_y } => {
            Some((slope_x * (x - cx) + slope_y * (y - cy), slope_x, slope_y))
        }
        SurfaceKind::Composite => {
            let s = size as f64;
            let bump = |bx: f64, by: f64, sigma: f64, a: f64| {
                let (dx, dy) = (x - bx, y - by);
                let g = a * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                (g, -g * dx / (sigma * sigma), -g * dy / (sigma * sigma))
            };
            let (h1, gx1, gy1) = bump(0.35 * s, 0.40 * s, 0.18 * s, -0.12 * s);
            let (h2, gx2, gy2) = bump(0.66 * s, 0.62 * s, 0.14 * s, 0.08 * s);
            let tilt = 0.05;
            Some((h1 + h2 + tilt * (x - cx), gx1 + gx2 + tilt, gy1 + gy2))
        }
    }
}

fn validate_preset(preset: &ScenePreset) -> Result<()> {
    if preset.size < 2 {
        return Err(Error::InvalidConfig(format!(
            "scene size must be at least 2, got {}",
            preset.size
        )));
    }
    match preset.surface {
        SurfaceKind::Sphere { radius_frac } => {
            if !(radius_frac.is_finite() && radius_frac > 0.0 && radius_frac <= 1.1) {
                return Err(Error::InvalidConfig(format!(
                    "sphere radius fraction must be in (0, 1.1], got {radius_frac}"
                )));
            }
        }
        SurfaceKind::GaussianBlob {
            sigma_frac,
            amplitude,
        } => {
            if !(sigma_frac.is_finite() && sigma_frac > 0.0 && amplitude.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "blob parameters must be finite with positive sigma, got \
                     sigma_frac={sigma_frac} amplitude={amplitude}"
                )));
            }
        }
        SurfaceKind::Ramp { slope_x, slope_y } => {
            if !(slope_x.is_finite() && slope_y.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "ramp slopes must be finite, got ({slope_x}, {slope_y})"
                )));
            }
        }
        SurfaceKind::Composite => {}
    }
    if let CameraSpec::Perspective { focal_factor } = preset.camera {
        if !(focal_factor.is_finite() && focal_factor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal factor must be positive, got {focal_factor}"
            )));
        }
    }
    match preset.albedo {
        AlbedoSpec::Constant { value } => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "albedo must be finite and non-negative, got {value}"
                )));
            }
        }
        AlbedoSpec::Checker { low, high, period } => {
            if !(low.is_finite() && high.is_finite() && low >= 0.0 && high >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "checker albedo values must be finite and non-negative, got \
                     ({low}, {high})"
                )));
            }
            if period == 0 {
                return Err(Error::InvalidConfig(
                    "checker period must be positive".to_string(),
                ));
            }
        }
    }
    Ok(())
}

fn albedo_image(spec: AlbedoSpec, size: u32, channels: usize) -> Image {
    Image::from_fn(size, size, channels, |_, x, y| match spec {
        AlbedoSpec::Constant { value } => value,
        AlbedoSpec::Checker { low, high, period } => {
            if (x / period + y / period) % 2 == 0 {
                low
            } else {
                high
            }
        }
    })
}

/// Adds zero-mean Gaussian noise to every masked intensity, in a fixed
/// channel-major pixel order so results are reproducible.
fn add_noise(image: &mut Image, mask: &Mask, noise_sd: f64, rng: &mut ChaCha8Rng) {
    if noise_sd == 0.0 {
        return;
    }
    let gaussian = Gaussian::new(0.0, noise_sd).expect("validated noise level");
    for c in 0..image.channels() {
        let chan = image.channel_mut(c);
        for y in 0..chan.height() {
            for x in 0..chan.width() {
                if mask.contains(x as i64, y as i64) {
                    *chan.at_mut(x, y) += gaussian.sample(rng);
                }
            }
        }
    }
}

/// Builds a single-view scene: evaluates the analytic surface, renders it
/// with the discrete gradient operator, and adds seeded noise.
///
/// With `noise_sd == 0` the ground-truth depth reproduces the image bit for
/// bit, because rendering and the solvers share one gradient operator.
pub fn generate_scene(preset: &ScenePreset, noise_sd: f64, seed: u64) -> Result<Scene> {
    validate_preset(preset)?;
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise level must be finite and non-negative, got {noise_sd}"
        )));
    }
    let size = preset.size;
    let lighting = preset.lighting.lighting()?;
    let intr = match preset.camera {
        CameraSpec::Orthographic => Intrinsics::orthographic(),
        CameraSpec::Perspective { focal_factor } => {
            let center = (size as f64 - 1.0) / 2.0;
            Intrinsics::perspective(focal_factor * size as f64, center, center)?
        }
    };

    let mut depth = Grid::filled(size, size, f64::NAN);
    let mut normals = Grid::filled(size, size, Vector3::repeat(f64::NAN));
    let mut covered = vec![false; (size as usize) * (size as usize)];
    for y in 0..size {
        for x in 0..size {
            let Some((h, hx, hy)) = sample_surface(preset.surface, size, x as f64, y as f64)
            else {
                continue;
            };
            let (z, zx, zy) = match preset.camera {
                CameraSpec::Orthographic => (h, hx, hy),
                CameraSpec::Perspective { .. } => {
                    // Interpret the height field as relief on a plane of
                    // constant metric depth, then store log-depth.
                    let half = size as f64 / 2.0;
                    let s = PERSPECTIVE_BASE_DEPTH * (1.0 + PERSPECTIVE_RELIEF * h / half);
                    let sx = PERSPECTIVE_BASE_DEPTH * PERSPECTIVE_RELIEF * hx / half;
                    let sy = PERSPECTIVE_BASE_DEPTH * PERSPECTIVE_RELIEF * hy / half;
                    (s.ln(), sx / s, sy / s)
                }
            };
            *depth.at_mut(x, y) = z;
            *normals.at_mut(x, y) = normal_from_gradient(zx, zy, intr.frame_at(x, y));
            covered[(y as usize) * (size as usize) + x as usize] = true;
        }
    }
    let mask = Mask::from_fn(size, size, |x, y| {
        covered[(y as usize) * (size as usize) + x as usize]
    });

    let albedo = albedo_image(preset.albedo, size, lighting.channels());
    let mut image = render(&depth, &albedo, &lighting, &intr, &mask, preset.scheme)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise(&mut image, &mask, noise_sd, &mut rng);

    Ok(Scene {
        depth,
        normals,
        image,
        albedo,
        lighting,
        intr,
        pose: Pose::identity(),
        mask,
    })
}

/// Builds a two-view scene by raycasting a sphere sitting in front of both
/// cameras.
///
/// The first camera is the world frame; the second is rotated by
/// `angle_deg` about the vertical axis through the sphere center, so both
/// stare at the same surface from different directions. Depth is stored as
/// the log of metric depth along each pixel ray, normals are exact sphere
/// normals expressed in each camera frame, and pixels viewed at more than
/// 65 degrees of slant are masked out.
pub fn generate_two_view_scene(
    size: u32,
    lighting: LightingPreset,
    angle_deg: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<TwoViewScene> {
    if size < 8 {
        return Err(Error::InvalidConfig(format!(
            "two-view scenes need at least 8 pixels per side, got {size}"
        )));
    }
    if !(angle_deg.is_finite() && angle_deg > 0.0 && angle_deg < 90.0) {
        return Err(Error::InvalidConfig(format!(
            "baseline angle must be in (0, 90) degrees, got {angle_deg}"
        )));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise level must be finite and non-negative, got {noise_sd}"
        )));
    }

    let sphere_center = Vector3::new(0.0, 0.0, 20000.0);
    let sphere_radius = 20000.0 / 3.0;
    let center = (size as f64 - 1.0) / 2.0;
    let intr = Intrinsics::perspective(1.1 * size as f64, center, center)?;
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), angle_deg.to_radians()).into_inner();
    let poses = vec![
        Pose::identity(),
        Pose::new(rot, sphere_center - rot * sphere_center)?,
    ];

    let lighting = lighting.lighting()?;
    let min_cos_slant = MAX_SLANT_DEGREES.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = Vec::with_capacity(poses.len());
    for pose in &poses {
        let mut depth = Grid::filled(size, size, f64::NAN);
        let mut normals = Grid::filled(size, size, Vector3::repeat(f64::NAN));
        let mut covered = vec![false; (size as usize) * (size as usize)];
        for y in 0..size {
            for x in 0..size {
                let ray = pixel_ray(x as f64, y as f64, &intr)?;
                let dir = pose.rotation() * ray;
                let oc = pose.translation() - sphere_center;
                // Nearer intersection of `origin + s * dir` with the sphere.
                let aq = dir.dot(&dir);
                let bq = 2.0 * dir.dot(&oc);
                let cq = oc.dot(&oc) - sphere_radius * sphere_radius;
                let disc = bq * bq - 4.0 * aq * cq;
                if disc <= 0.0 {
                    continue;
                }
                let s = (-bq - disc.sqrt()) / (2.0 * aq);
                if s <= 0.0 {
                    continue;
                }
                let point = pose.translation() + s * dir;
                let n_world = (point - sphere_center) / sphere_radius;
                if n_world.dot(&-dir.normalize()) < min_cos_slant {
                    continue;
                }
                *depth.at_mut(x, y) = s.ln();
                *normals.at_mut(x, y) = pose.rotation().transpose() * n_world;
                covered[(y as usize) * (size as usize) + x as usize] = true;
            }
        }
        let mask = Mask::from_fn(size, size, |x, y| {
            covered[(y as usize) * (size as usize) + x as usize]
        });
        let albedo = albedo_image(
            AlbedoSpec::Constant { value: 0.85 },
            size,
            lighting.channels(),
        );
        let mut image = render(
            &depth,
            &albedo,
            &lighting,
            &intr,
            &mask,
            GradientScheme::default(),
        )?;
        add_noise(&mut image, &mask, noise_sd, &mut rng);
        views.push(Scene {
            depth,
            normals,
            image,
            albedo,
            lighting: lighting.clone(),
            intr,
            pose: *pose,
            mask,
        });
    }

    Ok(TwoViewScene {
        views,
        sphere_center,
        sphere_radius,
    })
}

/// How far the stored surface may sit from a reprojected point, in
/// log-depth, before the point counts as occluded at that pixel. Scales
/// with the local depth variation because reprojections land between pixel
/// centers.
fn visibility_slack(depth: &DepthMap, mask: &Mask, x: u32, y: u32) -> f64 {
    let z = *depth.at(x, y);
    let mut vary: f64 = 0.0;
    for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if mask.contains(nx, ny) {
            vary = vary.max((depth.at(nx as u32, ny as u32) - z).abs());
        }
    }
    (1.5 * vary).max(0.01)
}

/// Samples ground-truth correspondences between the two views of a scene.
///
/// Pixels are drawn uniformly from the first view's mask, carried through
/// the ground-truth geometry into the second view, and rounded to the
/// nearest pixel; samples that land outside the partner mask or behind the
/// stored surface are rejected. Fails with how many matches were found when
/// the requested count is not reachable.
pub fn generate_matches(
    scene: &TwoViewScene,
    count: usize,
    seed: u64,
) -> Result<CorrespondenceSet> {
    if count == 0 {
        return Err(Error::InvalidOptions(
            "requested match count must be positive".to_string(),
        ));
    }
    if scene.views.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "match generation",
            expected: "2 views".to_string(),
            got: format!("{} views", scene.views.len()),
        });
    }
    let (v0, v1) = (&scene.views[0], &scene.views[1]);
    let sources = PixelSet::from_mask(&v0.mask);
    if sources.is_empty() {
        return Err(Error::EmptyDomain("match generation"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut matches = Vec::with_capacity(count);
    let max_attempts = 500 * count;
    for _ in 0..max_attempts {
        if matches.len() == count {
            break;
        }
        let (x0, y0) = sources.pixel(rng.gen_range(0..sources.len()));
        if !used.insert((x0, y0)) {
            continue;
        }
        let world = backproject(x0 as f64, y0 as f64, *v0.depth.at(x0, y0), &v0.intr, &v0.pose)?;
        let (px, py, cam_depth) = project(&world, &v1.intr, &v1.pose)?;
        if cam_depth <= 0.0 {
            continue;
        }
        let (xr, yr) = (px.round(), py.round());
        if !(0.0..v1.mask.grid().width() as f64).contains(&xr)
            || !(0.0..v1.mask.grid().height() as f64).contains(&yr)
        {
            continue;
        }
        let (x1, y1) = (xr as u32, yr as u32);
        if !v1.mask.contains(x1 as i64, y1 as i64) {
            continue;
        }
        let slack = visibility_slack(&v1.depth, &v1.mask, x1, y1);
        if (cam_depth.ln() - v1.depth.at(x1, y1)).abs() > slack {
            continue;
        }
        matches.push(Match {
            view_i: 0,
            pixel_i: (x0, y0),
            view_j: 1,
            pixel_j: (x1, y1),
        });
    }

    if matches.len() < count {
        return Err(Error::NotEnoughVisiblePixels {
            requested: count,
            found: matches.len(),
        });
    }
    CorrespondenceSet::new(matches)
}

/// Mask-aware Gaussian blur of a depth map; weights are renormalized over
/// the masked footprint so values never bleed across the mask boundary.
pub fn gaussian_smooth(depth: &DepthMap, mask: &Mask, sigma: f64) -> Result<DepthMap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidOptions(format!(
            "smoothing sigma must be positive, got {sigma}"
        )));
    }
    crate::shading::check_raster_shape("smoothing", depth, mask)?;
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    let (w, h) = (depth.width(), depth.height());
    let mut out = Grid::filled(w, h, f64::NAN);
    for y in 0..h {
        for x in 0..w {
            if !mask.contains(x as i64, y as i64) {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !mask.contains(nx, ny) {
                        continue;
                    }
                    let z = *depth.at(nx as u32, ny as u32);
                    if !z.is_finite() {
                        return Err(Error::NonFiniteInput("depth under smoothing mask"));
                    }
                    let wgt = taps[(dx + radius) as usize] * taps[(dy + radius) as usize];
                    num += wgt * z;
                    den += wgt;
                }
            }
            *out.at_mut(x, y) = num / den;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiview::consistency_residual;
    use crate::shading::normals_from_depth;

    #[test]
    fn ground_truth_depth_reproduces_the_image() {
        for camera in [
            CameraSpec::Orthographic,
            CameraSpec::Perspective { focal_factor: 1.2 },
        ] {
            let preset = ScenePreset {
                camera,
                ..ScenePreset::sphere(24, LightingPreset::L2)
            };
            let scene = generate_scene(&preset, 0.0, 0).unwrap();
            let problem = scene.problem().unwrap();
            let energy = problem
                .photometric_energy(&scene.depth, preset.scheme)
                .unwrap();
            assert!(energy <= 1e-20, "energy={energy} for {camera:?}");
        }
    }

    #[test]
    fn analytic_normals_agree_with_discrete_ones() {
        let preset = ScenePreset::sphere(48, LightingPreset::L1);
        let scene = generate_scene(&preset, 0.0, 0).unwrap();
        let discrete =
            normals_from_depth(&scene.depth, &scene.intr, &scene.mask, preset.scheme).unwrap();
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for y in 0..48 {
            for x in 0..48 {
                if !scene.mask.contains(x as i64, y as i64) {
                    continue;
                }
                let dot = scene.normals.at(x, y).dot(discrete.at(x, y)).clamp(-1.0, 1.0);
                worst = worst.max(dot.acos().to_degrees());
                count += 1;
            }
        }
        assert!(count > 500, "mask too small: {count}");
        assert!(worst < 5.0, "worst discretization angle {worst} degrees");
    }

    #[test]
    fn noise_is_seeded_and_deterministic() {
        let preset = ScenePreset::blob(16, LightingPreset::L2);
        let a = generate_scene(&preset, 0.01, 7).unwrap();
        let b = generate_scene(&preset, 0.01, 7).unwrap();
        let c = generate_scene(&preset, 0.01, 8).unwrap();
        let flat = |s: &Scene| s.image.channel(0).data().to_vec();
        assert_eq!(
            flat(&a).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            flat(&b).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(
            flat(&a).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            flat(&c).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn two_view_matches_close_the_geometry() {
        let scene = generate_two_view_scene(48, LightingPreset::L2, 20.0, 0.0, 3).unwrap();
        let matches = generate_matches(&scene, 60, 4).unwrap();
        assert_eq!(matches.len(), 60);
        let views = [scene.views[0].view(), scene.views[1].view()];
        let depths = vec![scene.views[0].depth.clone(), scene.views[1].depth.clone()];
        // A match rounds the reprojection to the nearest pixel, so its 3D
        // residual is bounded by how far the surface moves across one pixel
        // footprint around the matched point.
        for m in matches.matches() {
            let r = consistency_residual(m, &views, &depths).unwrap().norm();
            let (x1, y1) = m.pixel_j;
            let v1 = &scene.views[1];
            let here =
                backproject(x1 as f64, y1 as f64, *v1.depth.at(x1, y1), &v1.intr, &v1.pose)
                    .unwrap();
            let mut footprint: f64 = 0.0;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x1 as i64 + dx, y1 as i64 + dy);
                if v1.mask.contains(nx, ny) {
                    let p = backproject(
                        nx as f64,
                        ny as f64,
                        *v1.depth.at(nx as u32, ny as u32),
                        &v1.intr,
                        &v1.pose,
                    )
                    .unwrap();
                    footprint = footprint.max((p - here).norm());
                }
            }
            assert!(
                r <= 1.5 * footprint.max(1e-9),
                "residual {r} exceeds pixel footprint {footprint}"
            );
        }
    }

    #[test]
    fn match_generation_is_deterministic() {
        let scene = generate_two_view_scene(32, LightingPreset::L1, 18.0, 0.0, 1).unwrap();
        let a = generate_matches(&scene, 25, 9).unwrap();
        let b = generate_matches(&scene, 25, 9).unwrap();
        assert_eq!(a.matches(), b.matches());
    }

    #[test]
    fn impossible_match_counts_report_the_shortfall() {
        let scene = generate_two_view_scene(16, LightingPreset::L1, 20.0, 0.0, 2).unwrap();
        let err = generate_matches(&scene, 100_000, 0).unwrap_err();
        match err {
            Error::NotEnoughVisiblePixels { requested, found } => {
                assert_eq!(requested, 100_000);
                assert!(found < requested);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn smoothing_preserves_constants_and_mask() {
        let mask = Mask::from_fn(12, 12, |x, y| x >= 2 && y >= 2);
        let depth = Grid::from_fn(12, 12, |x, y| {
            if mask.contains(x as i64, y as i64) {
                3.5
            } else {
                f64::NAN
            }
        });
        let sm = gaussian_smooth(&depth, &mask, 2.0).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                if mask.contains(x as i64, y as i64) {
                    assert!((sm.at(x, y) - 3.5).abs() < 1e-12);
                } else {
                    assert!(sm.at(x, y).is_nan());
                }
            }
        }
    }

    #[test]
    fn smoothing_flattens_a_spike() {
        let mask = Mask::full(11, 11);
        let mut depth = Grid::filled(11, 11, 0.0);
        *depth.at_mut(5, 5) = 10.0;
        let sm = gaussian_smooth(&depth, &mask, 1.5).unwrap();
        assert!(*sm.at(5, 5) < 2.0, "spike survived: {}", sm.at(5, 5));
        assert!(*sm.at(5, 5) > *sm.at(0, 0), "smoothing moved the peak");
    }

    #[test]
    fn preset_validation_rejects_bad_parameters() {
        let mut preset = ScenePreset::sphere(16, LightingPreset::L1);
        preset.size = 1;
        assert!(matches!(
            generate_scene(&preset, 0.0, 0),
            Err(Error::InvalidConfig(_))
        ));
        let preset = ScenePreset {
            surface: SurfaceKind::Sphere { radius_frac: -1.0 },
            ..ScenePreset::sphere(16, LightingPreset::L1)
        };
        assert!(matches!(
            generate_scene(&preset, 0.0, 0),
            Err(Error::InvalidConfig(_))
        ));
        let preset = ScenePreset::sphere(16, LightingPreset::L1);
        assert!(matches!(
            generate_scene(&preset, f64::NAN, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            generate_two_view_scene(16, LightingPreset::L1, 0.0, 0.0, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn lighting_presets_have_expected_channel_counts() {
        assert_eq!(LightingPreset::L1.lighting().unwrap().channels(), 1);
        assert_eq!(LightingPreset::L2.lighting().unwrap().channels(), 1);
        assert_eq!(LightingPreset::L3.lighting().unwrap().channels(), 3);
        let custom = LightingPreset::Custom(vec![[0.0; 9], [0.1; 9]]);
        assert_eq!(custom.lighting().unwrap().channels(), 2);
    }
}
