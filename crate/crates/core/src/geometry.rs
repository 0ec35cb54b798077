//! Camera models, the depth-gradient-to-normal map, and 3D backprojection.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Unit surface normal in camera coordinates. The visible side of a surface
/// has `n.z < 0`: a fronto-parallel patch maps to `[0, 0, -1]`.
pub type Normal = Vector3<f64>;

/// Per-pixel depth raster. Plain depth under an orthographic camera,
/// log-depth under a perspective one. Pixels outside the mask carry NaN and
/// are never read.
pub type DepthMap = Grid<f64>;

/// Floor applied to the normalization coefficient before any division, so
/// the degenerate configuration where all its terms vanish stays harmless.
pub const DENOM_FLOOR: f64 = 1e-9;

/// Projection model of a camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    Orthographic,
    /// Pinhole camera with focal length `f` in pixels.
    Perspective { f: f64 },
}

/// Camera intrinsics: projection model plus principal point in pixels.
///
/// Pixel `(0, 0)` is the top-left pixel center; `x` grows along columns and
/// `y` along rows. Orthographic cameras fix `f = 1` and a zero principal
/// point so that the centered coordinates vanish everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    projection: Projection,
    x0: f64,
    y0: f64,
}

/// Per-pixel coefficients entering the normal map: the focal scale and the
/// centered pixel coordinates. Orthographic cameras use `(1, 0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFrame {
    pub f: f64,
    pub xt: f64,
    pub yt: f64,
}

impl Intrinsics {
    pub fn orthographic() -> Self {
        Intrinsics {
            projection: Projection::Orthographic,
            x0: 0.0,
            y0: 0.0,
        }
    }

    pub fn perspective(f: f64, x0: f64, y0: f64) -> Result<Self> {
        if !(f.is_finite() && x0.is_finite() && y0.is_finite()) {
            return Err(Error::NonFiniteInput("intrinsics"));
        }
        if f <= 0.0 {
            return Err(Error::InvalidOptions(format!(
                "focal length must be positive, got {f}"
            )));
        }
        Ok(Intrinsics {
            projection: Projection::Perspective { f },
            x0,
            y0,
        })
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn is_perspective(&self) -> bool {
        matches!(self.projection, Projection::Perspective { .. })
    }

    /// Focal length in pixels (1 for orthographic cameras).
    pub fn focal(&self) -> f64 {
        match self.projection {
            Projection::Orthographic => 1.0,
            Projection::Perspective { f } => f,
        }
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.x0, self.y0)
    }

    /// Frame coefficients at integer pixel `(x, y)`.
    pub fn frame_at(&self, x: u32, y: u32) -> PixelFrame {
        self.frame_at_subpixel(x as f64, y as f64)
    }

    /// Frame coefficients at real-valued pixel coordinates.
    pub fn frame_at_subpixel(&self, x: f64, y: f64) -> PixelFrame {
        match self.projection {
            Projection::Orthographic => PixelFrame {
                f: 1.0,
                xt: 0.0,
                yt: 0.0,
            },
            Projection::Perspective { f } => PixelFrame {
                f,
                xt: x - self.x0,
                yt: y - self.y0,
            },
        }
    }
}

/// Normalization coefficient `d` of the normal map at one pixel.
pub fn normalization_coefficient(zx: f64, zy: f64, frame: PixelFrame) -> f64 {
    let u = 1.0 + frame.xt * zx + frame.yt * zy;
    let fx = frame.f * zx;
    let fy = frame.f * zy;
    (fx * fx + fy * fy + u * u).sqrt().max(DENOM_FLOOR)
}

/// Unit normal induced by the depth gradient `(zx, zy)` at one pixel.
pub fn normal_from_gradient(zx: f64, zy: f64, frame: PixelFrame) -> Normal {
    let u = 1.0 + frame.xt * zx + frame.yt * zy;
    let d = normalization_coefficient(zx, zy, frame);
    Vector3::new(frame.f * zx / d, frame.f * zy / d, -u / d)
}

/// Rigid world-from-camera transform: `x_world = R x_cam + t`. The
/// translation is the camera center in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

/// Tolerance on orthonormality and determinant of rotation matrices.
const ROTATION_TOL: f64 = 1e-10;

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Validates that `r` is a proper rotation before accepting the pose.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        if !(r.iter().all(|v| v.is_finite()) && t.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteInput("pose"));
        }
        let gram_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if gram_err > ROTATION_TOL {
            return Err(Error::NotARotation(format!(
                "RtR deviates from identity by {gram_err:.3e}"
            )));
        }
        let det_err = (r.determinant() - 1.0).abs();
        if det_err > ROTATION_TOL {
            return Err(Error::NotARotation(format!(
                "determinant deviates from 1 by {det_err:.3e}"
            )));
        }
        Ok(Pose { r, t })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Camera-frame coordinates of a world point.
    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (x - self.t)
    }
}

/// Unnormalized camera-frame ray direction through pixel `(x, y)`; its third
/// component is 1, so scaling it by metric depth lands on the surface point.
pub fn pixel_ray(x: f64, y: f64, intr: &Intrinsics) -> Result<Vector3<f64>> {
    match intr.projection {
        Projection::Orthographic => Err(Error::OrthographicUnsupported),
        Projection::Perspective { f } => Ok(Vector3::new(
            (x - intr.x0) / f,
            (y - intr.y0) / f,
            1.0,
        )),
    }
}

/// World point conjugate to pixel `(x, y)` at log-depth `z`.
pub fn backproject(
    x: f64,
    y: f64,
    z: f64,
    intr: &Intrinsics,
    pose: &Pose,
) -> Result<Vector3<f64>> {
    if !z.is_finite() {
        return Err(Error::NonFiniteInput("depth"));
    }
    let ray = pixel_ray(x, y, intr)?;
    Ok(z.exp() * (pose.r * ray) + pose.t)
}

/// Projects a world point into a perspective camera.
///
/// Returns pixel coordinates and the camera-frame depth (positive in front
/// of the camera); the caller decides what to do with points behind it.
pub fn project(
    x_world: &Vector3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
) -> Result<(f64, f64, f64)> {
    let f = match intr.projection {
        Projection::Orthographic => return Err(Error::OrthographicUnsupported),
        Projection::Perspective { f } => f,
    };
    let cam = pose.world_to_camera(x_world);
    let px = f * cam.x / cam.z + intr.x0;
    let py = f * cam.y / cam.z + intr.y0;
    Ok((px, py, cam.z))
}
