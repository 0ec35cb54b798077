//! Single-view variational solver: alternating depth and gradient-surrogate
//! updates with scaled dual ascent, plus a frozen-coefficient fixed-point
//! baseline. No smoothness regularizer anywhere; the only coupling between
//! pixels is the discrete gradient operator.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normal_from_gradient, DepthMap, Intrinsics, PixelFrame};
use crate::gradient::{GradientOperator, GradientScheme};
use crate::grid::{Mask, PixelSet};
use crate::shading::{
    check_image_shape, check_raster_shape, field_a, field_b, residual_derivs, shade,
    validate_albedo, Albedo, Image, Lighting, SH_COEFFS,
};

pub mod cg;
pub mod newton;

use cg::{pcg, CgOutcome};
use newton::damped_newton;

/// Per-pixel surrogate variables stored plane-major: all first components,
/// then all second components, and for three-component fields all third
/// components, each in masked-pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaField {
    comps: usize,
    n: usize,
    data: Vec<f64>,
}

impl ThetaField {
    pub fn zeros(comps: usize, n: usize) -> Result<Self> {
        if comps != 2 && comps != 3 {
            return Err(Error::InvalidOptions(format!(
                "theta field supports 2 or 3 components per pixel, got {comps}"
            )));
        }
        Ok(ThetaField {
            comps,
            n,
            data: vec![0.0; comps * n],
        })
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Knobs of the alternating solver. The defaults are the recommended
/// starting point for all built-in scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Initial penalty weight on the splitting constraint.
    pub beta0: f64,
    /// Imbalance ratio between primal and dual residuals that triggers a
    /// penalty adjustment.
    pub mu: f64,
    /// Multiplicative penalty adjustment factor.
    pub tau: f64,
    /// Relative energy-change threshold that stops the outer loop.
    pub stop_tol: f64,
    pub max_outer: usize,
    /// Relative residual target of the inner conjugate-gradient solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Gradient infinity-norm target of the per-pixel Newton solve.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub scheme: GradientScheme,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            beta0: 0.1,
            mu: 10.0,
            tau: 2.0,
            stop_tol: 1e-3,
            max_outer: 500,
            cg_tol: 1e-9,
            cg_max_iters: 1000,
            newton_tol: 1e-9,
            newton_max_iters: 20,
            scheme: GradientScheme::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.beta0, "beta0"),
            (self.stop_tol, "stop_tol"),
            (self.cg_tol, "cg_tol"),
            (self.newton_tol, "newton_tol"),
        ];
        for (v, name) in positive {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidOptions(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !self.beta0.is_finite() || self.beta0 <= 0.0 {
            return Err(Error::InvalidOptions(format!("beta0 must be positive, got {}", self.beta0)));
        }
        for (v, name) in [(self.mu, "mu"), (self.tau, "tau")] {
            if !v.is_finite() || v <= 1.0 {
                return Err(Error::InvalidOptions(format!("{name} must exceed 1, got {v}")));
            }
        }
        for (v, name) in [
            (self.max_outer, "max_outer"),
            (self.cg_max_iters, "cg_max_iters"),
            (self.newton_max_iters, "newton_max_iters"),
        ] {
            if v == 0 {
                return Err(Error::InvalidOptions(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Diagnostics of one solver run.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub converged: bool,
    /// Photometric energy of the returned iterate for the alternating
    /// solver (which returns its best iterate), of the best iterate seen
    /// for the fixed-point baseline (which returns its final iterate).
    pub best_energy: f64,
    pub best_iteration: usize,
    /// Photometric energy at the initial point and after every sweep.
    pub energy_trace: Vec<f64>,
    /// Final penalty weight, one entry per view.
    pub final_betas: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Depth estimate plus run diagnostics. The depth map is NaN outside the
/// problem mask.
#[derive(Clone, Debug)]
pub struct SfsSolution {
    pub depth: DepthMap,
    pub report: SolveReport,
}

/// Starting point for the depth unknowns.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Constant(f64),
    Depth(&'a DepthMap),
}

/// One shading problem: an observed image with known per-pixel albedo,
/// lighting, camera intrinsics, and domain mask.
#[derive(Clone, Copy, Debug)]
pub struct SfsProblem<'a> {
    pub(crate) image: &'a Image,
    pub(crate) albedo: &'a Albedo,
    pub(crate) lighting: &'a Lighting,
    pub(crate) intr: &'a Intrinsics,
    pub(crate) mask: &'a Mask,
}

impl<'a> SfsProblem<'a> {
    pub fn new(
        image: &'a Image,
        albedo: &'a Albedo,
        lighting: &'a Lighting,
        intr: &'a Intrinsics,
        mask: &'a Mask,
    ) -> Result<Self> {
        check_image_shape("problem image", image, mask, lighting.channels())?;
        check_image_shape("problem albedo", albedo, mask, lighting.channels())?;
        Ok(SfsProblem {
            image,
            albedo,
            lighting,
            intr,
            mask,
        })
    }

    pub fn mask(&self) -> &Mask {
        self.mask
    }

    pub fn lighting(&self) -> &Lighting {
        self.lighting
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        self.intr
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    pub fn albedo(&self) -> &Albedo {
        self.albedo
    }

    /// Sum over masked pixels and channels of the squared difference
    /// between the image shaded from `depth` and the observed image.
    pub fn photometric_energy(&self, depth: &DepthMap, scheme: GradientScheme) -> Result<f64> {
        check_raster_shape("energy depth", depth, self.mask)?;
        let view = ViewData::build(self, scheme)?;
        let z = view.px.gather(depth, "depth")?;
        Ok(photometric_energy_view(&view, &z))
    }
}

/// Flattened per-view working data in masked-pixel order; image and albedo
/// samples are channel-major (`c * n + i`).
pub(crate) struct ViewData {
    pub px: PixelSet,
    pub grad: GradientOperator,
    pub frames: Vec<PixelFrame>,
    pub img: Vec<f64>,
    pub rho: Vec<f64>,
    pub light: Vec<[f64; SH_COEFFS]>,
    pub n: usize,
    pub channels: usize,
    pub width: u32,
    pub height: u32,
}

impl ViewData {
    pub(crate) fn build(problem: &SfsProblem, scheme: GradientScheme) -> Result<ViewData> {
        let mask = problem.mask;
        let px = PixelSet::from_mask(mask);
        if px.is_empty() {
            return Err(Error::EmptyDomain("solve: empty mask"));
        }
        let grad = GradientOperator::build(&px, scheme);
        if !(0..px.len()).any(|i| grad.has_any_row(i)) {
            return Err(Error::EmptyDomain("solve: no masked pixel has a computable gradient"));
        }
        validate_albedo(problem.albedo, &px)?;
        let n = px.len();
        let channels = problem.lighting.channels();
        let mut img = Vec::with_capacity(channels * n);
        let mut rho = Vec::with_capacity(channels * n);
        for c in 0..channels {
            img.extend(px.gather(problem.image.channel(c), "image")?);
            rho.extend(px.gather(problem.albedo.channel(c), "albedo")?);
        }
        let frames = px
            .pixels()
            .iter()
            .map(|&(x, y)| problem.intr.frame_at(x, y))
            .collect();
        Ok(ViewData {
            frames,
            img,
            rho,
            light: problem.lighting.rows().to_vec(),
            n,
            channels,
            width: mask.width(),
            height: mask.height(),
            px,
            grad,
        })
    }
}

pub(crate) fn init_vector(view: &ViewData, mask: &Mask, init: &Init) -> Result<Vec<f64>> {
    match init {
        Init::Constant(v) => {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput("init"));
            }
            Ok(vec![*v; view.n])
        }
        Init::Depth(d) => {
            check_raster_shape("init depth", d, mask)?;
            view.px.gather(d, "init depth")
        }
    }
}

/// PDE coefficients per channel and pixel at the current surrogate values,
/// channel-major like the view samples.
pub(crate) fn assemble_fields(view: &ViewData, theta: &ThetaField) -> (Vec<Vector2<f64>>, Vec<f64>) {
    let n = view.n;
    let (tx, ty) = (theta.plane(0), theta.plane(1));
    let mut a = Vec::with_capacity(view.channels * n);
    let mut b = Vec::with_capacity(view.channels * n);
    for c in 0..view.channels {
        for i in 0..n {
            let th = (tx[i], ty[i]);
            let idx = c * n + i;
            a.push(field_a(th, view.rho[idx], &view.light[c], view.frames[i]));
            b.push(field_b(th, view.img[idx], view.rho[idx], &view.light[c], view.frames[i]));
        }
    }
    (a, b)
}

/// Extra terms of the depth normal equations used by the multi-view solver
/// (a diagonal shift and a right-hand-side contribution in depth space).
pub(crate) struct ZStepExtra<'a> {
    pub z_diag: f64,
    pub lin_z: Option<&'a [f64]>,
    /// Pin the mean of the solution to the mean of the warm start. Only
    /// meaningful while the system is singular in the constant direction.
    pub anchor_mean: bool,
}

/// Solves the depth update's normal equations with frozen coefficient
/// fields, warm-started at the current depth.
#[allow(clippy::too_many_arguments)]
pub(crate) fn z_step(
    view: &ViewData,
    a: &[Vector2<f64>],
    b: &[f64],
    beta: f64,
    duals: &[f64],
    theta: &ThetaField,
    extra: ZStepExtra,
    z: &mut [f64],
    cg_tol: f64,
    cg_max_iters: usize,
) -> CgOutcome {
    let n = view.n;

    // Per-pixel 2x2 blocks of the weight matrix acting in gradient space.
    let mut w11 = vec![beta; n];
    let mut w12 = vec![0.0; n];
    let mut w22 = vec![0.0; n];
    w22.copy_from_slice(&w11);
    for c in 0..view.channels {
        let base = c * n;
        for i in 0..n {
            let ac = a[base + i];
            w11[i] += 2.0 * ac.x * ac.x;
            w12[i] += 2.0 * ac.x * ac.y;
            w22[i] += 2.0 * ac.y * ac.y;
        }
    }

    // Right-hand side assembled in gradient space, then pulled back.
    let (tx, ty) = (theta.plane(0), theta.plane(1));
    let mut y = vec![0.0; 2 * n];
    for i in 0..n {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for c in 0..view.channels {
            let idx = c * n + i;
            sx += 2.0 * a[idx].x * b[idx];
            sy += 2.0 * a[idx].y * b[idx];
        }
        y[i] = sx - duals[i] + beta * tx[i];
        y[n + i] = sy - duals[n + i] + beta * ty[i];
    }
    let mut rhs = vec![0.0; n];
    view.grad.apply_transpose_add(&y, &mut rhs);
    if let Some(lz) = extra.lin_z {
        for i in 0..n {
            rhs[i] += lz[i];
        }
    }

    // Exact diagonal of the normal matrix for the Jacobi preconditioner,
    // including the cross term where a pixel's two stencil rows share a
    // column.
    let mut diag = vec![extra.z_diag; n];
    let mut xrow = [(0u32, 0.0); 2];
    let mut yrow = [(0u32, 0.0); 2];
    for i in 0..n {
        let nx = fill_row(view.grad.row_entries(i), &mut xrow);
        let ny = fill_row(view.grad.row_entries(n + i), &mut yrow);
        for &(c, w) in &xrow[..nx] {
            diag[c as usize] += w11[i] * w * w;
        }
        for &(c, w) in &yrow[..ny] {
            diag[c as usize] += w22[i] * w * w;
        }
        for &(cx, wx) in &xrow[..nx] {
            for &(cy, wy) in &yrow[..ny] {
                if cx == cy {
                    diag[cx as usize] += 2.0 * w12[i] * wx * wy;
                }
            }
        }
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() <= 1e-300 { 1.0 } else { 1.0 / d })
        .collect();

    let grad = &view.grad;
    let z_diag = extra.z_diag;
    let mut gv = vec![0.0; 2 * n];
    let apply = move |v: &[f64], out: &mut [f64]| {
        grad.apply(v, &mut gv);
        for i in 0..n {
            let (gx, gy) = (gv[i], gv[n + i]);
            gv[i] = w11[i] * gx + w12[i] * gy;
            gv[n + i] = w12[i] * gx + w22[i] * gy;
        }
        out.fill(0.0);
        grad.apply_transpose_add(&gv, out);
        if z_diag != 0.0 {
            for i in 0..n {
                out[i] += z_diag * v[i];
            }
        }
    };

    let mean0 = mean(z);
    let outcome = pcg(apply, &inv_diag, &rhs, z, cg_tol, cg_max_iters);
    if extra.anchor_mean {
        let delta = mean0 - mean(z);
        if delta != 0.0 {
            for v in z.iter_mut() {
                *v += delta;
            }
        }
    }
    outcome
}

fn fill_row(it: impl Iterator<Item = (u32, f64)>, buf: &mut [(u32, f64); 2]) -> usize {
    let mut len = 0;
    for e in it {
        buf[len] = e;
        len += 1;
    }
    len
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Value, gradient, and Hessian of the per-pixel surrogate objective: the
/// sum over channels of the squared PDE residual with the gradient sample
/// frozen, the multiplier term, and the quadratic penalty.
pub(crate) fn theta_objective_core<'l>(
    theta: Vector2<f64>,
    grad_sample: Vector2<f64>,
    dual: Vector2<f64>,
    beta: f64,
    frame: PixelFrame,
    channels: impl Iterator<Item = (f64, f64, &'l [f64; SH_COEFFS])>,
) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let mut f = 0.0;
    let mut grad = Vector2::zeros();
    let mut hess = Matrix2::zeros();
    for (i_c, rho_c, l_c) in channels {
        let rd = residual_derivs(
            (theta.x, theta.y),
            (grad_sample.x, grad_sample.y),
            i_c,
            rho_c,
            l_c,
            frame,
        );
        f += rd.r * rd.r;
        grad += 2.0 * rd.r * rd.dr;
        hess += 2.0 * (rd.dr * rd.dr.transpose() + rd.r * rd.hr);
    }
    let diff = theta - grad_sample;
    f += -dual.dot(&theta) + 0.5 * beta * diff.norm_squared();
    grad += -dual + beta * diff;
    hess += Matrix2::identity() * beta;
    (f, grad, hess)
}

/// Public form of the per-pixel surrogate objective, exposed so the Newton
/// derivatives can be checked independently. `intensities` and `albedo`
/// hold one entry per lighting channel.
#[allow(clippy::too_many_arguments)]
pub fn theta_objective(
    theta: Vector2<f64>,
    grad_sample: Vector2<f64>,
    dual: Vector2<f64>,
    beta: f64,
    intensities: &[f64],
    albedo: &[f64],
    lighting: &Lighting,
    frame: PixelFrame,
) -> Result<(f64, Vector2<f64>, Matrix2<f64>)> {
    if intensities.len() != lighting.channels() || albedo.len() != lighting.channels() {
        return Err(Error::DimensionMismatch {
            context: "theta_objective",
            expected: format!("{} channels", lighting.channels()),
            got: format!("{} intensities, {} albedos", intensities.len(), albedo.len()),
        });
    }
    Ok(theta_objective_core(
        theta,
        grad_sample,
        dual,
        beta,
        frame,
        intensities
            .iter()
            .zip(albedo)
            .zip(lighting.rows())
            .map(|((i, r), l)| (*i, *r, l)),
    ))
}

/// Runs one pixel's Newton minimization of the surrogate objective from the
/// given start, exactly as a sweep of the alternating solver does for that
/// pixel. Returns the minimizing surrogate gradient.
#[allow(clippy::too_many_arguments)]
pub fn theta_update_pixel(
    start: Vector2<f64>,
    grad_sample: Vector2<f64>,
    dual: Vector2<f64>,
    beta: f64,
    intensities: &[f64],
    albedo: &[f64],
    lighting: &Lighting,
    frame: PixelFrame,
    tol: f64,
    max_iters: usize,
) -> Result<Vector2<f64>> {
    if intensities.len() != lighting.channels() || albedo.len() != lighting.channels() {
        return Err(Error::DimensionMismatch {
            context: "theta_update_pixel",
            expected: format!("{} channels", lighting.channels()),
            got: format!("{} intensities, {} albedos", intensities.len(), albedo.len()),
        });
    }
    let (x, _) = damped_newton(
        start,
        |th| {
            theta_objective_core(
                *th,
                grad_sample,
                dual,
                beta,
                frame,
                intensities
                    .iter()
                    .zip(albedo)
                    .zip(lighting.rows())
                    .map(|((i, r), l)| (*i, *r, l)),
            )
        },
        tol,
        max_iters,
    );
    Ok(x)
}

/// Independent per-pixel Newton minimizations of the surrogate objective,
/// warm-started at the current surrogate values.
fn theta_update(
    view: &ViewData,
    gz: &[f64],
    duals: &[f64],
    beta: f64,
    theta: &mut ThetaField,
    tol: f64,
    max_iters: usize,
) {
    let n = view.n;
    let results: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let frame = view.frames[i];
            let g = Vector2::new(gz[i], gz[n + i]);
            let dual = Vector2::new(duals[i], duals[n + i]);
            let x0 = Vector2::new(theta.plane(0)[i], theta.plane(1)[i]);
            let (x, _) = damped_newton(
                x0,
                |th| {
                    theta_objective_core(
                        *th,
                        g,
                        dual,
                        beta,
                        frame,
                        (0..view.channels)
                            .map(|c| (view.img[c * n + i], view.rho[c * n + i], &view.light[c])),
                    )
                },
                tol,
                max_iters,
            );
            (x.x, x.y)
        })
        .collect();
    for (i, (tx, ty)) in results.into_iter().enumerate() {
        theta.plane_mut(0)[i] = tx;
        theta.plane_mut(1)[i] = ty;
    }
}

/// Penalty adjustment from the primal/dual residual imbalance. The
/// multipliers are rescaled by the inverse factor so the scaled dual
/// variables stay aligned with the new penalty.
pub(crate) fn adapt_beta(
    primal: f64,
    dual: f64,
    mu: f64,
    tau: f64,
    beta: f64,
    duals: &mut [f64],
) -> f64 {
    if primal > mu * dual {
        for d in duals.iter_mut() {
            *d /= tau;
        }
        beta * tau
    } else if dual > mu * primal {
        for d in duals.iter_mut() {
            *d *= tau;
        }
        beta / tau
    } else {
        beta
    }
}

/// Photometric energy of a masked depth vector (forward model against the
/// observed image, summed over pixels and channels).
pub(crate) fn photometric_energy_view(view: &ViewData, z: &[f64]) -> f64 {
    let n = view.n;
    let mut gz = vec![0.0; 2 * n];
    view.grad.apply(z, &mut gz);
    let mut e = 0.0;
    for i in 0..n {
        let nrm = normal_from_gradient(gz[i], gz[n + i], view.frames[i]);
        for c in 0..view.channels {
            let idx = c * n + i;
            let r = view.rho[idx] * shade(&nrm, &view.light[c]) - view.img[idx];
            e += r * r;
        }
    }
    e
}

/// Relative energy change used by the outer stopping rule.
pub(crate) fn relative_energy_change(e_prev: f64, e: f64) -> f64 {
    (e - e_prev).abs() / e_prev.max(1e-15)
}

/// Outer stopping rule: the energy has plateaued relative to the previous
/// sweep, or it has collapsed so far below its starting value that further
/// relative comparisons only measure rounding noise in a sum that is zero
/// for all practical purposes.
pub(crate) fn energy_stopped(e0: f64, e_prev: f64, e: f64, stop_tol: f64) -> bool {
    (e0.is_finite() && e <= e0 * 1e-12) || relative_energy_change(e_prev, e) <= stop_tol
}

/// Runs the alternating solver and returns the best-energy iterate (the
/// starting point counts as iterate zero, so the result is never worse
/// than the initialization).
pub fn solve_sfs(problem: &SfsProblem, init: Init, opts: &SolverOptions) -> Result<SfsSolution> {
    opts.validate()?;
    let view = ViewData::build(problem, opts.scheme)?;
    let n = view.n;
    let mut z = init_vector(&view, problem.mask, &init)?;

    let mut gz = vec![0.0; 2 * n];
    view.grad.apply(&z, &mut gz);
    let mut theta = ThetaField::zeros(2, n)?;
    theta.plane_mut(0).copy_from_slice(&gz[..n]);
    theta.plane_mut(1).copy_from_slice(&gz[n..]);
    let mut duals = vec![0.0; 2 * n];
    let mut beta = opts.beta0;

    let mut energy_trace = vec![photometric_energy_view(&view, &z)];
    let mut best_z = z.clone();
    let mut best_energy = energy_trace[0];
    let mut best_iteration = 0;
    let mut converged = false;
    let mut primal = 0.0;
    let mut dual_res = 0.0;
    let mut outer = 0;

    for k in 1..=opts.max_outer {
        outer = k;
        let (a, b) = assemble_fields(&view, &theta);
        z_step(
            &view,
            &a,
            &b,
            beta,
            &duals,
            &theta,
            ZStepExtra {
                z_diag: 0.0,
                lin_z: None,
                anchor_mean: true,
            },
            &mut z,
            opts.cg_tol,
            opts.cg_max_iters,
        );

        view.grad.apply(&z, &mut gz);
        let theta_prev = theta.clone();
        theta_update(
            &view,
            &gz,
            &duals,
            beta,
            &mut theta,
            opts.newton_tol,
            opts.newton_max_iters,
        );

        primal = l2_diff(&gz, theta.data());
        for j in 0..2 * n {
            duals[j] += beta * (gz[j] - theta.data()[j]);
        }
        dual_res = beta * l2_diff(theta.data(), theta_prev.data());
        beta = adapt_beta(primal, dual_res, opts.mu, opts.tau, beta, &mut duals);

        let e = photometric_energy_view(&view, &z);
        let e_prev = *energy_trace.last().unwrap();
        energy_trace.push(e);
        if !e.is_finite() {
            break;
        }
        if e < best_energy {
            best_energy = e;
            best_z.copy_from_slice(&z);
            best_iteration = k;
        }
        if energy_stopped(energy_trace[0], e_prev, e, opts.stop_tol) {
            converged = true;
            break;
        }
    }

    let depth = view.px.scatter(&best_z, view.width, view.height);
    Ok(SfsSolution {
        depth,
        report: SolveReport {
            outer_iterations: outer,
            converged,
            best_energy,
            best_iteration,
            energy_trace,
            final_betas: vec![beta],
            primal_residual: primal,
            dual_residual: dual_res,
        },
    })
}

/// Baseline that freezes the PDE coefficients at the current gradient and
/// solves the resulting linear least-squares problem, repeatedly. Returns
/// the final iterate; the report still records the best energy seen.
pub fn solve_sfs_fixed_point(
    problem: &SfsProblem,
    init: Init,
    opts: &SolverOptions,
) -> Result<SfsSolution> {
    opts.validate()?;
    let view = ViewData::build(problem, opts.scheme)?;
    let n = view.n;
    let mut z = init_vector(&view, problem.mask, &init)?;

    let mut gz = vec![0.0; 2 * n];
    let mut theta = ThetaField::zeros(2, n)?;
    let zero_duals = vec![0.0; 2 * n];

    let mut energy_trace = vec![photometric_energy_view(&view, &z)];
    let mut best_energy = energy_trace[0];
    let mut best_iteration = 0;
    let mut converged = false;
    let mut outer = 0;

    for k in 1..=opts.max_outer {
        outer = k;
        view.grad.apply(&z, &mut gz);
        theta.plane_mut(0).copy_from_slice(&gz[..n]);
        theta.plane_mut(1).copy_from_slice(&gz[n..]);
        let (a, b) = assemble_fields(&view, &theta);
        z_step(
            &view,
            &a,
            &b,
            0.0,
            &zero_duals,
            &theta,
            ZStepExtra {
                z_diag: 0.0,
                lin_z: None,
                anchor_mean: true,
            },
            &mut z,
            opts.cg_tol,
            opts.cg_max_iters,
        );

        let e = photometric_energy_view(&view, &z);
        let e_prev = *energy_trace.last().unwrap();
        energy_trace.push(e);
        if !e.is_finite() {
            break;
        }
        if e < best_energy {
            best_energy = e;
            best_iteration = k;
        }
        if energy_stopped(energy_trace[0], e_prev, e, opts.stop_tol) {
            converged = true;
            break;
        }
    }

    let depth = view.px.scatter(&z, view.width, view.height);
    Ok(SfsSolution {
        depth,
        report: SolveReport {
            outer_iterations: outer,
            converged,
            best_energy,
            best_iteration,
            energy_trace,
            final_betas: vec![0.0],
            primal_residual: 0.0,
            dual_residual: 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::shading::render;

    fn blob_depth(w: u32, h: u32) -> DepthMap {
        Grid::from_fn(w, h, |x, y| {
            let dx = x as f64 - (w as f64 - 1.0) / 2.0;
            let dy = y as f64 - (h as f64 - 1.0) / 2.0;
            2.0 - 0.6 * (-(dx * dx + dy * dy) / 18.0).exp()
        })
    }

    fn l2() -> Lighting {
        Lighting::grey([0.2, 0.3, -0.7, 0.5, -0.2, -0.2, 0.3, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        for bad in [
            SolverOptions { beta0: 0.0, ..Default::default() },
            SolverOptions { beta0: f64::NAN, ..Default::default() },
            SolverOptions { mu: 1.0, ..Default::default() },
            SolverOptions { tau: 0.5, ..Default::default() },
            SolverOptions { max_outer: 0, ..Default::default() },
            SolverOptions { cg_max_iters: 0, ..Default::default() },
            SolverOptions { newton_max_iters: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidOptions(_))));
        }
    }

    #[test]
    fn zero_albedo_keeps_init() {
        // With zero albedo and a zero image the energy is identically zero,
        // so the first sweep must leave the depth untouched and stop.
        let (w, h) = (6, 6);
        let mask = Mask::full(w, h);
        let image = Image::constant(w, h, 1, 0.0);
        let albedo = Image::constant(w, h, 1, 0.0);
        let lighting = l2();
        let intr = Intrinsics::orthographic();
        let problem = SfsProblem::new(&image, &albedo, &lighting, &intr, &mask).unwrap();
        let init = Grid::from_fn(w, h, |x, y| 0.2 * x as f64 - 0.1 * y as f64);
        let sol = solve_sfs(&problem, Init::Depth(&init), &SolverOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.outer_iterations, 1);
        for y in 0..h {
            for x in 0..w {
                assert!((sol.depth.at(x, y) - init.at(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ground_truth_is_stationary() {
        let (w, h) = (16, 16);
        let mask = Mask::full(w, h);
        let gt = blob_depth(w, h);
        let lighting = l2();
        let albedo = Image::constant(w, h, 1, 0.9);
        let intr = Intrinsics::orthographic();
        let scheme = GradientScheme::AveragedForwardBackward;
        let image = render(&gt, &albedo, &lighting, &intr, &mask, scheme).unwrap();
        let problem = SfsProblem::new(&image, &albedo, &lighting, &intr, &mask).unwrap();

        assert!(problem.photometric_energy(&gt, scheme).unwrap() <= 1e-20);

        let sol = solve_sfs(&problem, Init::Depth(&gt), &SolverOptions::default()).unwrap();
        assert!(sol.report.converged);
        for y in 0..h {
            for x in 0..w {
                assert!((sol.depth.at(x, y) - gt.at(x, y)).abs() < 1e-8);
            }
        }
        assert!(sol.report.best_energy <= 1e-20);
        // Outside-mask pixels keep NaN.
        let full_sol = sol.depth;
        assert_eq!(full_sol.width(), w);
    }

    #[test]
    fn theta_update_beats_a_grid_search_value() {
        // The Newton result must reach at least as low an objective value
        // as a brute-force scan of the square [-1.5, 1.5]^2.
        let lighting = l2();
        let frame = PixelFrame { f: 1.0, xt: 0.0, yt: 0.0 };
        let cases = [
            (Vector2::new(0.4, -0.2), Vector2::new(0.05, -0.3), 2.0, 0.7, 0.9),
            (Vector2::new(-0.8, 0.6), Vector2::new(0.2, 0.1), 0.5, 1.2, 1.0),
            (Vector2::new(0.0, 0.0), Vector2::new(-0.4, 0.4), 8.0, 0.3, 0.5),
        ];
        for (g, dual, beta, i_c, rho) in cases {
            let eval = |th: Vector2<f64>| {
                theta_objective(th, g, dual, beta, &[i_c], &[rho], &lighting, frame)
                    .unwrap()
            };
            let (x, _) = damped_newton(g, |th| eval(*th), 1e-10, 30);
            let newton_val = eval(x).0;
            let mut grid_best = f64::INFINITY;
            let steps = 301;
            for iy in 0..steps {
                for ix in 0..steps {
                    let th = Vector2::new(
                        -1.5 + 3.0 * ix as f64 / (steps - 1) as f64,
                        -1.5 + 3.0 * iy as f64 / (steps - 1) as f64,
                    );
                    grid_best = grid_best.min(eval(th).0);
                }
            }
            assert!(
                newton_val <= grid_best + 1e-9,
                "newton {newton_val} vs grid {grid_best}"
            );
        }
    }

    #[test]
    fn beta_adaptation_rescales_duals() {
        let mut duals = vec![4.0, -2.0];
        // Primal residual dominates: penalty grows, duals shrink.
        let beta = adapt_beta(10.0, 0.1, 10.0, 2.0, 0.5, &mut duals);
        assert_eq!(beta, 1.0);
        assert_eq!(duals, vec![2.0, -1.0]);
        // Dual residual dominates: penalty shrinks, duals grow.
        let beta = adapt_beta(0.1, 10.0, 10.0, 2.0, 1.0, &mut duals);
        assert_eq!(beta, 0.5);
        assert_eq!(duals, vec![4.0, -2.0]);
        // Balanced residuals: nothing changes.
        let beta = adapt_beta(1.0, 1.0, 10.0, 2.0, 0.7, &mut duals);
        assert_eq!(beta, 0.7);
        assert_eq!(duals, vec![4.0, -2.0]);
    }

    #[test]
    fn admm_descends_and_the_fixed_point_report_is_consistent() {
        let (w, h) = (20, 20);
        let mask = Mask::from_fn(w, h, |x, y| {
            let dx = x as f64 - 9.5;
            let dy = y as f64 - 9.5;
            dx * dx + dy * dy < 81.0
        });
        let gt = blob_depth(w, h);
        let lighting = l2();
        let albedo = Image::constant(w, h, 1, 0.9);
        let intr = Intrinsics::orthographic();
        let scheme = GradientScheme::AveragedForwardBackward;
        let image = render(&gt, &albedo, &lighting, &intr, &mask, scheme).unwrap();
        let problem = SfsProblem::new(&image, &albedo, &lighting, &intr, &mask).unwrap();
        let opts = SolverOptions {
            max_outer: 40,
            ..Default::default()
        };

        let admm = solve_sfs(&problem, Init::Constant(2.0), &opts).unwrap();
        assert!(admm.report.energy_trace[0] > 0.0);
        assert!(admm.report.best_energy < 0.5 * admm.report.energy_trace[0]);
        // The returned iterate realizes the reported best energy.
        let realized = problem.photometric_energy(&admm.depth, scheme).unwrap();
        assert!((realized - admm.report.best_energy).abs() <= 1e-12 * realized.max(1.0));

        // The fixed-point baseline is not a descent method (its frozen
        // coefficient step is undamped and can overshoot), so only the
        // structure of its report is asserted here; the solver comparison
        // lives in the acceptance suite.
        let fp = solve_sfs_fixed_point(&problem, Init::Constant(2.0), &opts).unwrap();
        assert_eq!(fp.report.energy_trace[0], admm.report.energy_trace[0]);
        let (min_it, min_e) = fp
            .report
            .energy_trace
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(fp.report.best_energy, *min_e);
        assert_eq!(fp.report.best_iteration, min_it);
        // The fixed-point baseline returns its final iterate.
        let fp_final = problem.photometric_energy(&fp.depth, scheme).unwrap();
        let fp_trace_last = *fp.report.energy_trace.last().unwrap();
        assert!((fp_final - fp_trace_last).abs() <= 1e-12 * fp_final.max(1.0));

        // Started at the ground truth, the baseline recognizes the fixed
        // point and stays there.
        let fp_gt = solve_sfs_fixed_point(&problem, Init::Depth(&gt), &opts).unwrap();
        assert!(fp_gt.report.energy_trace.iter().all(|&e| e <= 1e-18));
    }

    #[test]
    fn init_validation() {
        let (w, h) = (4, 4);
        let mask = Mask::full(w, h);
        let image = Image::constant(w, h, 1, 0.5);
        let albedo = Image::constant(w, h, 1, 1.0);
        let lighting = l2();
        let intr = Intrinsics::orthographic();
        let problem = SfsProblem::new(&image, &albedo, &lighting, &intr, &mask).unwrap();
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_sfs(&problem, Init::Constant(f64::NAN), &opts),
            Err(Error::NonFiniteInput(_))
        ));
        let wrong = Grid::filled(3, 4, 1.0);
        assert!(matches!(
            solve_sfs(&problem, Init::Depth(&wrong), &opts),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
