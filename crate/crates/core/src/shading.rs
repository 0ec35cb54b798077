//! Second-order spherical-harmonics image formation and the per-pixel PDE
//! coefficient fields `a`, `b` it induces, together with their exact first
//! and second derivatives in the gradient surrogate.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{
    normal_from_gradient, normalization_coefficient, DepthMap, Intrinsics, Normal, PixelFrame,
    DENOM_FLOOR,
};
use crate::gradient::{GradientOperator, GradientScheme};
use crate::grid::{Grid, Mask, PixelSet};

/// Number of spherical-harmonics coefficients per channel.
pub const SH_COEFFS: usize = 9;

/// Per-channel 9-vectors of lighting coefficients in the monomial basis
/// ordering `[n1, n2, n3, 1, n1 n2, n1 n3, n2 n3, n1^2 - n2^2, 3 n3^2 - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lighting {
    rows: Vec<[f64; SH_COEFFS]>,
}

impl Lighting {
    pub fn new(rows: Vec<[f64; SH_COEFFS]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidOptions("lighting needs at least one channel".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("lighting"));
        }
        Ok(Lighting { rows })
    }

    /// Single-channel (greylevel) lighting.
    pub fn grey(row: [f64; SH_COEFFS]) -> Result<Self> {
        Lighting::new(vec![row])
    }

    pub fn channels(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, c: usize) -> &[f64; SH_COEFFS] {
        &self.rows[c]
    }

    pub fn rows(&self) -> &[[f64; SH_COEFFS]] {
        &self.rows
    }
}

/// Multi-channel raster of per-pixel values; channel planes share one shape.
/// Doubles as the albedo container (same layout, nonnegative values).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: Vec<Grid<f64>>,
}

/// Per-pixel, per-channel reflectance. Same storage as [`Image`].
pub type Albedo = Image;

impl Image {
    pub fn new(channels: Vec<Grid<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidOptions("image needs at least one channel".into()));
        }
        for c in 1..channels.len() {
            if !channels[0].same_shape(&channels[c]) {
                return Err(Error::DimensionMismatch {
                    context: "Image::new",
                    expected: format!("{}x{}", channels[0].width(), channels[0].height()),
                    got: format!("{}x{}", channels[c].width(), channels[c].height()),
                });
            }
        }
        Ok(Image { channels })
    }

    pub fn constant(width: u32, height: u32, channels: usize, value: f64) -> Self {
        Image {
            channels: vec![Grid::filled(width, height, value); channels.max(1)],
        }
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: usize,
        mut f: impl FnMut(usize, u32, u32) -> f64,
    ) -> Self {
        Image {
            channels: (0..channels.max(1))
                .map(|c| Grid::from_fn(width, height, |x, y| f(c, x, y)))
                .collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.channels[0].width()
    }

    pub fn height(&self) -> u32 {
        self.channels[0].height()
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &Grid<f64> {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut Grid<f64> {
        &mut self.channels[c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width() == other.width()
            && self.height() == other.height()
            && self.channels() == other.channels()
    }
}

/// Spherical-harmonics basis evaluated at a unit normal, in the same
/// ordering as the [`Lighting`] rows.
pub fn sh_basis(n: &Normal) -> [f64; SH_COEFFS] {
    [
        n.x,
        n.y,
        n.z,
        1.0,
        n.x * n.y,
        n.x * n.z,
        n.y * n.z,
        n.x * n.x - n.y * n.y,
        3.0 * n.z * n.z - 1.0,
    ]
}

/// Shaded intensity of a unit normal under one lighting row (albedo 1).
pub fn shade(n: &Normal, l: &[f64; SH_COEFFS]) -> f64 {
    let b = sh_basis(n);
    (0..SH_COEFFS).map(|k| l[k] * b[k]).sum()
}

/// Renders the image of a depth map under the given albedo and lighting.
///
/// Normals come from the discrete gradient of `depth` under `scheme`, the
/// same operator the solvers use, so a rendered image is exactly consistent
/// with the PDE fields evaluated on that gradient. Pixels outside the mask
/// are NaN; intensities are not clipped.
pub fn render(
    depth: &DepthMap,
    albedo: &Albedo,
    lighting: &Lighting,
    intr: &Intrinsics,
    mask: &Mask,
    scheme: GradientScheme,
) -> Result<Image> {
    check_raster_shape("render depth", depth, mask)?;
    check_image_shape("render albedo", albedo, mask, lighting.channels())?;
    let px = PixelSet::from_mask(mask);
    let grad = GradientOperator::build(&px, scheme);
    validate_albedo(albedo, &px)?;
    if px.is_empty() || !(0..px.len()).any(|i| grad.has_any_row(i)) {
        return Err(Error::EmptyDomain("render: no pixel has a computable gradient"));
    }
    let z = px.gather(depth, "depth")?;
    let mut gz = vec![0.0; 2 * px.len()];
    grad.apply(&z, &mut gz);

    let n = px.len();
    let mut out = Image::constant(mask.width(), mask.height(), lighting.channels(), f64::NAN);
    for i in 0..n {
        let (x, y) = px.pixel(i);
        let frame = intr.frame_at(x, y);
        let normal = normal_from_gradient(gz[i], gz[n + i], frame);
        for c in 0..lighting.channels() {
            let rho = *albedo.channel(c).at(x, y);
            *out.channel_mut(c).at_mut(x, y) = rho * shade(&normal, lighting.row(c));
        }
    }
    Ok(out)
}

pub(crate) fn check_raster_shape(
    context: &'static str,
    raster: &Grid<f64>,
    mask: &Mask,
) -> Result<()> {
    if raster.width() != mask.width() || raster.height() != mask.height() {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", mask.width(), mask.height()),
            got: format!("{}x{}", raster.width(), raster.height()),
        });
    }
    Ok(())
}

pub(crate) fn check_image_shape(
    context: &'static str,
    image: &Image,
    mask: &Mask,
    channels: usize,
) -> Result<()> {
    if image.width() != mask.width()
        || image.height() != mask.height()
        || image.channels() != channels
    {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{} with {} channels", mask.width(), mask.height(), channels),
            got: format!(
                "{}x{} with {} channels",
                image.width(),
                image.height(),
                image.channels()
            ),
        });
    }
    Ok(())
}

pub(crate) fn validate_albedo(albedo: &Albedo, px: &PixelSet) -> Result<()> {
    for c in 0..albedo.channels() {
        for &(x, y) in px.pixels() {
            let rho = *albedo.channel(c).at(x, y);
            if !rho.is_finite() {
                return Err(Error::NonFiniteInput("albedo"));
            }
            if rho < 0.0 {
                return Err(Error::InvalidOptions(format!(
                    "albedo must be nonnegative, got {rho} at ({x}, {y})"
                )));
            }
        }
    }
    Ok(())
}

/// Normal field of a depth map under the discrete gradient `scheme`.
/// Unmasked pixels carry NaN normals.
pub fn normals_from_depth(
    depth: &DepthMap,
    intr: &Intrinsics,
    mask: &Mask,
    scheme: GradientScheme,
) -> Result<Grid<Normal>> {
    check_raster_shape("normals depth", depth, mask)?;
    let px = PixelSet::from_mask(mask);
    if px.is_empty() {
        return Err(Error::EmptyDomain("normals: empty mask"));
    }
    let grad = GradientOperator::build(&px, scheme);
    let z = px.gather(depth, "depth")?;
    let mut gz = vec![0.0; 2 * px.len()];
    grad.apply(&z, &mut gz);
    let n = px.len();
    let mut out = Grid::filled(mask.width(), mask.height(), Normal::new(f64::NAN, f64::NAN, f64::NAN));
    for i in 0..n {
        let (x, y) = px.pixel(i);
        *out.at_mut(x, y) = normal_from_gradient(gz[i], gz[n + i], intr.frame_at(x, y));
    }
    Ok(out)
}

/// Value, gradient, and Hessian data of the seven rational basis terms that
/// enter the field `b`, all with respect to `(theta1, theta2)`.
struct FieldTerms {
    d: f64,
    s: [f64; 7],
    ds: [Vector2<f64>; 7],
    hs: [Matrix2<f64>; 7],
}

fn field_terms(t1: f64, t2: f64, frame: PixelFrame) -> FieldTerms {
    let (f, xt, yt) = (frame.f, frame.xt, frame.yt);
    let f2 = f * f;
    let u = 1.0 + xt * t1 + yt * t2;
    let q = f2 * t1 * t1 + f2 * t2 * t2 + u * u;
    let d_raw = q.sqrt();
    let clamped = d_raw < DENOM_FLOOR;
    let d = if clamped { DENOM_FLOOR } else { d_raw };
    let d2 = d * d;
    let d3 = d2 * d;
    let d4 = d2 * d2;

    // Gradient and Hessian of d itself; both vanish while the clamp is
    // active (d is then constant).
    let (dd, hd) = if clamped {
        (Vector2::zeros(), Matrix2::zeros())
    } else {
        let dd = Vector2::new((f2 * t1 + u * xt) / d, (f2 * t2 + u * yt) / d);
        let hd = Matrix2::new(
            (f2 + xt * xt - dd.x * dd.x) / d,
            (xt * yt - dd.x * dd.y) / d,
            (xt * yt - dd.x * dd.y) / d,
            (f2 + yt * yt - dd.y * dd.y) / d,
        );
        (dd, hd)
    };
    let ddt = dd * dd.transpose();

    // Polynomial numerators over d^2 (the constant term of s[6] and the
    // constant s[1] differentiate to zero).
    let p = [
        f2 * t1 * t2,
        -f * t1 * u,
        -f * t2 * u,
        f2 * (t1 * t1 - t2 * t2),
        3.0 * u * u,
    ];
    let gp = [
        Vector2::new(f2 * t2, f2 * t1),
        Vector2::new(-f * (u + xt * t1), -f * yt * t1),
        Vector2::new(-f * xt * t2, -f * (u + yt * t2)),
        Vector2::new(2.0 * f2 * t1, -2.0 * f2 * t2),
        Vector2::new(6.0 * u * xt, 6.0 * u * yt),
    ];
    let hp = [
        Matrix2::new(0.0, f2, f2, 0.0),
        Matrix2::new(-2.0 * f * xt, -f * yt, -f * yt, 0.0),
        Matrix2::new(0.0, -f * xt, -f * xt, -2.0 * f * yt),
        Matrix2::new(2.0 * f2, 0.0, 0.0, -2.0 * f2),
        Matrix2::new(
            6.0 * xt * xt,
            6.0 * xt * yt,
            6.0 * xt * yt,
            6.0 * yt * yt,
        ),
    ];

    let mut s = [0.0; 7];
    let mut ds = [Vector2::zeros(); 7];
    let mut hs = [Matrix2::zeros(); 7];
    s[0] = -1.0 / d;
    ds[0] = dd / d2;
    hs[0] = hd / d2 - 2.0 * ddt / d3;
    s[1] = 1.0;
    for k in 0..5 {
        let (pk, gpk, hpk) = (p[k], gp[k], hp[k]);
        s[k + 2] = pk / d2;
        ds[k + 2] = gpk / d2 - 2.0 * pk * dd / d3;
        hs[k + 2] = hpk / d2 - 2.0 * (gpk * dd.transpose() + dd * gpk.transpose()) / d3
            - 2.0 * pk * hd / d3
            + 6.0 * pk * ddt / d4;
    }
    s[6] -= 1.0;

    FieldTerms { d, s, ds, hs }
}

/// Constant (in theta) 2-vector multiplying `rho / d` in the field `a`.
#[inline]
fn a_direction(l: &[f64; SH_COEFFS], frame: PixelFrame) -> Vector2<f64> {
    Vector2::new(
        frame.f * l[0] - frame.xt * l[2],
        frame.f * l[1] - frame.yt * l[2],
    )
}

#[inline]
fn b_shading(terms: &FieldTerms, l: &[f64; SH_COEFFS]) -> f64 {
    (0..7).map(|k| l[k + 2] * terms.s[k]).sum()
}

/// Advection field of the PDE at one pixel and channel.
pub fn field_a(
    theta: (f64, f64),
    rho_c: f64,
    l_c: &[f64; SH_COEFFS],
    frame: PixelFrame,
) -> Vector2<f64> {
    let d = normalization_coefficient(theta.0, theta.1, frame);
    (rho_c / d) * a_direction(l_c, frame)
}

/// Source term of the PDE at one pixel and channel.
pub fn field_b(
    theta: (f64, f64),
    i_c: f64,
    rho_c: f64,
    l_c: &[f64; SH_COEFFS],
    frame: PixelFrame,
) -> f64 {
    let terms = field_terms(theta.0, theta.1, frame);
    i_c - rho_c * b_shading(&terms, l_c)
}

/// Exact Jacobians of the fields with respect to theta: `(da, db)` with
/// `da[(i, j)] = d a_i / d theta_j` and `db[j] = d b / d theta_j`.
pub fn field_jacobians(
    theta: (f64, f64),
    rho_c: f64,
    l_c: &[f64; SH_COEFFS],
    frame: PixelFrame,
) -> (Matrix2<f64>, Vector2<f64>) {
    let terms = field_terms(theta.0, theta.1, frame);
    let k = a_direction(l_c, frame);
    // a = rho k / d, so da = rho k (d(1/d))^T with d(1/d) = -ds[0].
    let dinv_grad = -terms.ds[0];
    let da = (rho_c * k) * dinv_grad.transpose();
    let mut db = Vector2::zeros();
    for j in 0..7 {
        db -= rho_c * l_c[j + 2] * terms.ds[j];
    }
    (da, db)
}

/// Value, gradient, and Hessian in theta of the per-pixel PDE residual
/// `r(theta) = a(theta) . g - b(theta)` for a frozen gradient sample `g`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ResidualDerivs {
    pub r: f64,
    pub dr: Vector2<f64>,
    pub hr: Matrix2<f64>,
}

pub(crate) fn residual_derivs(
    theta: (f64, f64),
    g: (f64, f64),
    i_c: f64,
    rho_c: f64,
    l_c: &[f64; SH_COEFFS],
    frame: PixelFrame,
) -> ResidualDerivs {
    let terms = field_terms(theta.0, theta.1, frame);
    let k = a_direction(l_c, frame);
    let kg = k.x * g.0 + k.y * g.1;
    let r = rho_c * kg / terms.d - i_c + rho_c * b_shading(&terms, l_c);
    // 1/d = -s[0], so d(1/d) = -ds[0] and H(1/d) = -hs[0].
    let mut dr = rho_c * kg * (-terms.ds[0]);
    let mut hr = rho_c * kg * (-terms.hs[0]);
    for j in 0..7 {
        dr += rho_c * l_c[j + 2] * terms.ds[j];
        hr += rho_c * l_c[j + 2] * terms.hs[j];
    }
    ResidualDerivs { r, dr, hr }
}
