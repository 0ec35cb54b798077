//! Multi-view shape from shading: several single-view problems whose
//! per-pixel log-depths are tied together by sparse pixel correspondences
//! penalizing the 3D distance between backprojected match endpoints.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{backproject, pixel_ray, DepthMap, Intrinsics, PixelFrame, Pose};
use crate::grid::Mask;
use crate::shading::{check_raster_shape, Albedo, Image, Lighting, SH_COEFFS};
use crate::solver::newton::damped_newton;
use crate::solver::{
    adapt_beta, assemble_fields, init_vector, l2_diff, photometric_energy_view,
    energy_stopped, solve_sfs, theta_objective_core, Init, SfsProblem, SolveReport,
    SolverOptions, ThetaField, ViewData, ZStepExtra,
};

/// One pixel correspondence between two views. View indices must satisfy
/// `view_i < view_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Match {
    pub view_i: usize,
    pub pixel_i: (u32, u32),
    pub view_j: usize,
    pub pixel_j: (u32, u32),
}

/// Validated collection of correspondences: view order is enforced and
/// exact duplicates are rejected.
#[derive(Clone, Debug, Default)]
pub struct CorrespondenceSet {
    matches: Vec<Match>,
}

impl CorrespondenceSet {
    pub fn empty() -> Self {
        CorrespondenceSet::default()
    }

    pub fn new(matches: Vec<Match>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(matches.len());
        for (index, m) in matches.iter().enumerate() {
            if m.view_i >= m.view_j {
                return Err(Error::MatchOutOfBounds {
                    index,
                    msg: format!(
                        "match views must satisfy i < j, got {} and {}",
                        m.view_i, m.view_j
                    ),
                });
            }
            if !seen.insert(*m) {
                return Err(Error::InvalidMatches(format!(
                    "duplicate match at index {index}"
                )));
            }
        }
        Ok(CorrespondenceSet { matches })
    }

    pub fn matches(&self) -> &[Match] {
        &self.matches
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Checks every endpoint against the given views: the view indices must
    /// be in range and each pixel must lie inside its view's mask.
    pub fn validate_against(&self, views: &[ViewBundle]) -> Result<()> {
        for (index, m) in self.matches.iter().enumerate() {
            if m.view_j >= views.len() {
                return Err(Error::MatchOutOfBounds {
                    index,
                    msg: format!("view {} out of range ({} views)", m.view_j, views.len()),
                });
            }
            for (v, (x, y)) in [(m.view_i, m.pixel_i), (m.view_j, m.pixel_j)] {
                if !views[v].mask.contains(x as i64, y as i64) {
                    return Err(Error::MatchOutOfBounds {
                        index,
                        msg: format!("pixel ({x}, {y}) is outside the mask of view {v}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Everything one view contributes to a multi-view problem. Cameras must be
/// perspective; the pose maps camera coordinates to world coordinates.
#[derive(Clone, Copy, Debug)]
pub struct ViewBundle<'a> {
    pub image: &'a Image,
    pub albedo: &'a Albedo,
    pub lighting: &'a Lighting,
    pub intr: &'a Intrinsics,
    pub pose: &'a Pose,
    pub mask: &'a Mask,
}

impl<'a> ViewBundle<'a> {
    fn problem(&self) -> Result<SfsProblem<'a>> {
        SfsProblem::new(self.image, self.albedo, self.lighting, self.intr, self.mask)
    }
}

/// Weight of the correspondence coupling plus the shared solver knobs.
#[derive(Clone, Copy, Debug)]
pub struct CouplingOptions {
    pub lambda: f64,
    pub solver: SolverOptions,
}

impl CouplingOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidOptions(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        self.solver.validate()
    }
}

/// Per-view depth estimates plus aggregate run diagnostics.
#[derive(Clone, Debug)]
pub struct MultiViewSolution {
    pub depths: Vec<DepthMap>,
    pub report: SolveReport,
}

/// 3D gap between the two backprojected endpoints of a match under the
/// given depth estimates (world frame, first endpoint minus second).
pub fn consistency_residual(
    m: &Match,
    views: &[ViewBundle],
    depths: &[DepthMap],
) -> Result<Vector3<f64>> {
    if m.view_j >= views.len() || m.view_j >= depths.len() {
        return Err(Error::InvalidMatches(format!(
            "match references view {} but only {} views are present",
            m.view_j,
            views.len().min(depths.len())
        )));
    }
    let mut points = [Vector3::zeros(); 2];
    for (k, (v, (x, y))) in [(m.view_i, m.pixel_i), (m.view_j, m.pixel_j)]
        .into_iter()
        .enumerate()
    {
        if !depths[v].in_bounds(x as i64, y as i64) {
            return Err(Error::InvalidMatches(format!(
                "match pixel ({x}, {y}) out of bounds in view {v}"
            )));
        }
        points[k] = backproject(
            x as f64,
            y as f64,
            *depths[v].at(x, y),
            views[v].intr,
            views[v].pose,
        )?;
    }
    Ok(points[0] - points[1])
}

/// Value, gradient, and Hessian of the three-variable per-pixel objective:
/// the single-view surrogate objective in the first two components plus the
/// correspondence coupling and the depth-consensus penalty in the third.
/// The Hessian is exact and block-diagonal because the shading term does
/// not involve the log-depth component.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mv_theta_objective_core<'l>(
    theta: Vector3<f64>,
    grad_sample: Vector2<f64>,
    depth_sample: f64,
    dual: Vector3<f64>,
    beta: f64,
    frame: PixelFrame,
    channels: impl Iterator<Item = (f64, f64, &'l [f64; SH_COEFFS])>,
    couplings: &[(Vector3<f64>, Vector3<f64>)],
    lambda: f64,
) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let th12 = Vector2::new(theta.x, theta.y);
    let dual12 = Vector2::new(dual.x, dual.y);
    let (mut f, g2, h2) = theta_objective_core(th12, grad_sample, dual12, beta, frame, channels);

    let e = theta.z.exp();
    let mut g3 = 0.0;
    let mut h33 = 0.0;
    for &(v, c) in couplings {
        let ev = e * v;
        let diff = ev - c;
        f += 0.5 * lambda * diff.norm_squared();
        let vv = ev.norm_squared();
        let vc = ev.dot(&c);
        g3 += lambda * (vv - vc);
        h33 += lambda * (2.0 * vv - vc);
    }
    let zd = theta.z - depth_sample;
    f += -dual.z * theta.z + 0.5 * beta * zd * zd;
    g3 += -dual.z + beta * zd;
    h33 += beta;

    (
        f,
        Vector3::new(g2.x, g2.y, g3),
        Matrix3::new(
            h2[(0, 0)],
            h2[(0, 1)],
            0.0,
            h2[(1, 0)],
            h2[(1, 1)],
            0.0,
            0.0,
            0.0,
            h33,
        ),
    )
}

/// Public form of the three-variable per-pixel objective, exposed so the
/// Newton derivatives can be checked independently. Each entry of
/// `couplings` is a pair `(v, c)`: the scaled ray of this pixel and the
/// frozen 3D target it is pulled towards.
#[allow(clippy::too_many_arguments)]
pub fn mv_theta_objective(
    theta: Vector3<f64>,
    grad_sample: Vector2<f64>,
    depth_sample: f64,
    dual: Vector3<f64>,
    beta: f64,
    intensities: &[f64],
    albedo: &[f64],
    lighting: &Lighting,
    frame: PixelFrame,
    couplings: &[(Vector3<f64>, Vector3<f64>)],
    lambda: f64,
) -> Result<(f64, Vector3<f64>, Matrix3<f64>)> {
    if intensities.len() != lighting.channels() || albedo.len() != lighting.channels() {
        return Err(Error::DimensionMismatch {
            context: "mv_theta_objective",
            expected: format!("{} channels", lighting.channels()),
            got: format!("{} intensities, {} albedos", intensities.len(), albedo.len()),
        });
    }
    Ok(mv_theta_objective_core(
        theta,
        grad_sample,
        depth_sample,
        dual,
        beta,
        frame,
        intensities
            .iter()
            .zip(albedo)
            .zip(lighting.rows())
            .map(|((i, r), l)| (*i, *r, l)),
        couplings,
        lambda,
    ))
}

/// Solves the coupled multi-view problem. With a zero coupling weight or no
/// matches the views are independent, and the solver dispatches to separate
/// single-view solves whose results it returns unchanged.
pub fn solve_mvsfs(
    views: &[ViewBundle],
    matches: &CorrespondenceSet,
    coupling: &CouplingOptions,
    inits: &[Init],
) -> Result<MultiViewSolution> {
    coupling.validate()?;
    if views.len() < 2 {
        return Err(Error::ViewCountTooSmall {
            need: 2,
            got: views.len(),
        });
    }
    if inits.len() != views.len() {
        return Err(Error::DimensionMismatch {
            context: "solve_mvsfs inits",
            expected: format!("{} views", views.len()),
            got: format!("{} inits", inits.len()),
        });
    }
    for view in views {
        if !view.intr.is_perspective() {
            return Err(Error::OrthographicUnsupported);
        }
    }
    matches.validate_against(views)?;

    if coupling.lambda == 0.0 || matches.is_empty() {
        solve_decoupled(views, coupling, inits)
    } else {
        solve_joint(views, matches, coupling, inits)
    }
}

fn solve_decoupled(
    views: &[ViewBundle],
    coupling: &CouplingOptions,
    inits: &[Init],
) -> Result<MultiViewSolution> {
    let mut depths = Vec::with_capacity(views.len());
    let mut reports = Vec::with_capacity(views.len());
    for (view, init) in views.iter().zip(inits) {
        let problem = view.problem()?;
        let sol = solve_sfs(&problem, *init, &coupling.solver)?;
        depths.push(sol.depth);
        reports.push(sol.report);
    }

    let max_len = reports.iter().map(|r| r.energy_trace.len()).max().unwrap();
    let mut energy_trace = vec![0.0; max_len];
    for r in &reports {
        let last = *r.energy_trace.last().unwrap();
        for (k, slot) in energy_trace.iter_mut().enumerate() {
            *slot += r.energy_trace.get(k).copied().unwrap_or(last);
        }
    }
    let rss = |f: &dyn Fn(&SolveReport) -> f64| {
        reports.iter().map(|r| f(r) * f(r)).sum::<f64>().sqrt()
    };
    let report = SolveReport {
        outer_iterations: reports.iter().map(|r| r.outer_iterations).max().unwrap(),
        converged: reports.iter().all(|r| r.converged),
        best_energy: reports.iter().map(|r| r.best_energy).sum(),
        best_iteration: reports.iter().map(|r| r.best_iteration).max().unwrap(),
        energy_trace,
        final_betas: reports.iter().flat_map(|r| r.final_betas.clone()).collect(),
        primal_residual: rss(&|r| r.primal_residual),
        dual_residual: rss(&|r| r.dual_residual),
    };
    Ok(MultiViewSolution { depths, report })
}

/// World-frame scaled ray and partner data of one coupled pixel.
struct PixelCoupling {
    ray_self: Vector3<f64>,
    partner_view: usize,
    partner_index: usize,
    partner_ray: Vector3<f64>,
    /// Partner camera center minus this camera center.
    t_diff: Vector3<f64>,
}

/// Match endpoints resolved to masked-pixel indices and world rays.
struct PreparedMatch {
    vi: usize,
    ii: usize,
    ray_i: Vector3<f64>,
    vj: usize,
    ij: usize,
    ray_j: Vector3<f64>,
    /// Camera center of view i minus camera center of view j.
    t_diff: Vector3<f64>,
}

struct ViewState {
    data: ViewData,
    z: Vec<f64>,
    theta: ThetaField,
    duals: Vec<f64>,
    beta: f64,
    couplings: Vec<Vec<PixelCoupling>>,
}

fn joint_energy(states: &[ViewState], prepared: &[PreparedMatch], lambda: f64) -> f64 {
    let mut e = states
        .iter()
        .map(|s| photometric_energy_view(&s.data, &s.z))
        .sum::<f64>();
    for pm in prepared {
        let r = states[pm.vi].z[pm.ii].exp() * pm.ray_i - states[pm.vj].z[pm.ij].exp() * pm.ray_j
            + pm.t_diff;
        e += 0.5 * lambda * r.norm_squared();
    }
    e
}

fn solve_joint(
    views: &[ViewBundle],
    matches: &CorrespondenceSet,
    coupling: &CouplingOptions,
    inits: &[Init],
) -> Result<MultiViewSolution> {
    let opts = &coupling.solver;
    let lambda = coupling.lambda;

    let mut states = Vec::with_capacity(views.len());
    for (view, init) in views.iter().zip(inits) {
        let problem = view.problem()?;
        let data = ViewData::build(&problem, opts.scheme)?;
        let z = init_vector(&data, view.mask, init)?;
        let n = data.n;
        let mut theta = ThetaField::zeros(3, n)?;
        let mut gz = vec![0.0; 2 * n];
        data.grad.apply(&z, &mut gz);
        theta.plane_mut(0).copy_from_slice(&gz[..n]);
        theta.plane_mut(1).copy_from_slice(&gz[n..]);
        theta.plane_mut(2).copy_from_slice(&z);
        states.push(ViewState {
            couplings: (0..n).map(|_| Vec::new()).collect(),
            duals: vec![0.0; 3 * n],
            beta: opts.beta0,
            data,
            z,
            theta,
        });
    }

    let mut prepared = Vec::with_capacity(matches.len());
    for (index, m) in matches.matches().iter().enumerate() {
        let resolve = |v: usize, (x, y): (u32, u32)| -> Result<usize> {
            states[v]
                .data
                .px
                .index_of(x as i64, y as i64)
                .map(|i| i as usize)
                .ok_or_else(|| Error::MatchOutOfBounds {
                    index,
                    msg: format!("pixel ({x}, {y}) is outside the mask of view {v}"),
                })
        };
        let ii = resolve(m.view_i, m.pixel_i)?;
        let ij = resolve(m.view_j, m.pixel_j)?;
        let ray = |v: usize, (x, y): (u32, u32)| -> Result<Vector3<f64>> {
            Ok(views[v].pose.rotation() * pixel_ray(x as f64, y as f64, views[v].intr)?)
        };
        prepared.push(PreparedMatch {
            vi: m.view_i,
            ii,
            ray_i: ray(m.view_i, m.pixel_i)?,
            vj: m.view_j,
            ij,
            ray_j: ray(m.view_j, m.pixel_j)?,
            t_diff: views[m.view_i].pose.translation() - views[m.view_j].pose.translation(),
        });
    }
    for pm in &prepared {
        states[pm.vi].couplings[pm.ii].push(PixelCoupling {
            ray_self: pm.ray_i,
            partner_view: pm.vj,
            partner_index: pm.ij,
            partner_ray: pm.ray_j,
            t_diff: -pm.t_diff,
        });
        states[pm.vj].couplings[pm.ij].push(PixelCoupling {
            ray_self: pm.ray_j,
            partner_view: pm.vi,
            partner_index: pm.ii,
            partner_ray: pm.ray_i,
            t_diff: pm.t_diff,
        });
    }

    let mut energy_trace = vec![joint_energy(&states, &prepared, lambda)];
    let mut best_energy = energy_trace[0];
    let mut best_z: Vec<Vec<f64>> = states.iter().map(|s| s.z.clone()).collect();
    let mut best_iteration = 0;
    let mut converged = false;
    let mut outer = 0;
    let mut primal = 0.0;
    let mut dual_res = 0.0;

    for k in 1..=opts.max_outer {
        outer = k;
        let mut primal_sq = 0.0;
        let mut dual_sq = 0.0;

        for v in 0..states.len() {
            // Depth update with the coupling-free extra consensus terms.
            {
                let st = &mut states[v];
                let beta = st.beta;
                let n = st.data.n;
                let (a, b) = assemble_fields(&st.data, &st.theta);
                let lin_z: Vec<f64> = (0..n)
                    .map(|i| -st.duals[2 * n + i] + beta * st.theta.plane(2)[i])
                    .collect();
                let ViewState {
                    data, z, theta, duals, ..
                } = st;
                crate::solver::z_step(
                    data,
                    &a,
                    &b,
                    beta,
                    &duals[..2 * n],
                    theta,
                    ZStepExtra {
                        z_diag: beta,
                        lin_z: Some(&lin_z),
                        anchor_mean: false,
                    },
                    z,
                    opts.cg_tol,
                    opts.cg_max_iters,
                );
            }

            // Coupling targets frozen at the partners' current log-depth
            // surrogates (earlier views already updated this sweep).
            let n = states[v].data.n;
            let targets: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = (0..n)
                .map(|i| {
                    states[v].couplings[i]
                        .iter()
                        .map(|pc| {
                            let th3 = states[pc.partner_view].theta.plane(2)[pc.partner_index];
                            (pc.ray_self, th3.exp() * pc.partner_ray + pc.t_diff)
                        })
                        .collect()
                })
                .collect();

            let st = &mut states[v];
            let beta = st.beta;
            let mut gz = vec![0.0; 2 * n];
            st.data.grad.apply(&st.z, &mut gz);
            let theta_prev = st.theta.clone();
            let results: Vec<(f64, f64, f64)> = {
                let data = &st.data;
                let theta = &st.theta;
                let duals = &st.duals;
                let z = &st.z;
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let frame = data.frames[i];
                        let g = Vector2::new(gz[i], gz[n + i]);
                        let dual = Vector3::new(duals[i], duals[n + i], duals[2 * n + i]);
                        let x0 = Vector3::new(
                            theta.plane(0)[i],
                            theta.plane(1)[i],
                            theta.plane(2)[i],
                        );
                        let (x, _) = damped_newton(
                            x0,
                            |th| {
                                mv_theta_objective_core(
                                    *th,
                                    g,
                                    z[i],
                                    dual,
                                    beta,
                                    frame,
                                    (0..data.channels).map(|c| {
                                        (
                                            data.img[c * n + i],
                                            data.rho[c * n + i],
                                            &data.light[c],
                                        )
                                    }),
                                    &targets[i],
                                    lambda,
                                )
                            },
                            opts.newton_tol,
                            opts.newton_max_iters,
                        );
                        (x.x, x.y, x.z)
                    })
                    .collect()
            };
            for (i, (t1, t2, t3)) in results.into_iter().enumerate() {
                st.theta.plane_mut(0)[i] = t1;
                st.theta.plane_mut(1)[i] = t2;
                st.theta.plane_mut(2)[i] = t3;
            }

            let mut primal_sq_v = 0.0;
            let mut grad_primal_sq = 0.0;
            for ((&g, &t), dual) in gz
                .iter()
                .zip(&st.theta.data()[..2 * n])
                .zip(&mut st.duals[..2 * n])
            {
                let r = g - t;
                primal_sq_v += r * r;
                grad_primal_sq += r * r;
                *dual += beta * r;
            }
            for i in 0..n {
                let r = st.z[i] - st.theta.plane(2)[i];
                primal_sq_v += r * r;
                st.duals[2 * n + i] += beta * r;
            }
            // The penalty weight is balanced on the gradient consensus alone,
            // as in the single-view solver: the depth-value surrogate tracks
            // the depth step by construction (exactly so for weak coupling),
            // so its movement says nothing about dual infeasibility and would
            // only bias the schedule.
            let primal_v = grad_primal_sq.sqrt();
            let dual_v = beta
                * l2_diff(
                    &st.theta.data()[..2 * n],
                    &theta_prev.data()[..2 * n],
                );
            st.beta = adapt_beta(primal_v, dual_v, opts.mu, opts.tau, beta, &mut st.duals);
            primal_sq += primal_sq_v;
            dual_sq += dual_v * dual_v;
        }

        primal = primal_sq.sqrt();
        dual_res = dual_sq.sqrt();

        let e = joint_energy(&states, &prepared, lambda);
        let e_prev = *energy_trace.last().unwrap();
        energy_trace.push(e);
        if !e.is_finite() {
            break;
        }
        if e < best_energy {
            best_energy = e;
            for (slot, st) in best_z.iter_mut().zip(&states) {
                slot.copy_from_slice(&st.z);
            }
            best_iteration = k;
        }
        if energy_stopped(energy_trace[0], e_prev, e, opts.stop_tol) {
            converged = true;
            break;
        }
    }

    let depths = states
        .iter()
        .zip(&best_z)
        .map(|(st, z)| st.data.px.scatter(z, st.data.width, st.data.height))
        .collect();
    Ok(MultiViewSolution {
        depths,
        report: SolveReport {
            outer_iterations: outer,
            converged,
            best_energy,
            best_iteration,
            energy_trace,
            final_betas: states.iter().map(|s| s.beta).collect(),
            primal_residual: primal,
            dual_residual: dual_res,
        },
    })
}

/// Fused world-frame point cloud with 8-bit colors sampled from the view
/// images.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Diagonal of the axis-aligned bounding box of the positions.
    pub fn bounding_diameter(&self) -> f64 {
        if self.positions.is_empty() {
            return 0.0;
        }
        let mut lo = self.positions[0];
        let mut hi = self.positions[0];
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }
}

/// Backprojects every masked pixel with a finite depth from every view into
/// one world-frame cloud, colored by the observed image (intensities are
/// clipped to [0, 1]).
pub fn fuse_point_cloud(views: &[ViewBundle], depths: &[DepthMap]) -> Result<PointCloud> {
    if views.len() != depths.len() {
        return Err(Error::DimensionMismatch {
            context: "fuse_point_cloud",
            expected: format!("{} views", views.len()),
            got: format!("{} depth maps", depths.len()),
        });
    }
    let mut cloud = PointCloud::default();
    for (view, depth) in views.iter().zip(depths) {
        check_raster_shape("fuse depth", depth, view.mask)?;
        if !view.intr.is_perspective() {
            return Err(Error::OrthographicUnsupported);
        }
        let rgb = view.image.channels() >= 3;
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                if !view.mask.contains(x as i64, y as i64) {
                    continue;
                }
                let z = *depth.at(x, y);
                if !z.is_finite() {
                    continue;
                }
                let p = backproject(x as f64, y as f64, z, view.intr, view.pose)?;
                let sample = |c: usize| {
                    let v = view.image.channel(c).at(x, y).clamp(0.0, 1.0);
                    (v * 255.0).round() as u8
                };
                let color = if rgb {
                    [sample(0), sample(1), sample(2)]
                } else {
                    let g = sample(0);
                    [g, g, g]
                };
                cloud.positions.push(p);
                cloud.colors.push(color);
            }
        }
    }
    if cloud.is_empty() {
        return Err(Error::EmptyDomain("fuse: no masked pixel has a finite depth"));
    }
    Ok(cloud)
}

/// Summary of the 3D gaps across all matches under the given depths.
#[derive(Clone, Copy, Debug)]
pub struct MatchStats {
    pub count: usize,
    pub mean_distance: f64,
    pub max_distance: f64,
}

pub fn match_stats(
    matches: &CorrespondenceSet,
    views: &[ViewBundle],
    depths: &[DepthMap],
) -> Result<MatchStats> {
    if matches.is_empty() {
        return Err(Error::InvalidMatches("no matches to evaluate".into()));
    }
    let mut sum = 0.0;
    let mut max = 0.0_f64;
    for m in matches.matches() {
        let d = consistency_residual(m, views, depths)?.norm();
        sum += d;
        max = max.max(d);
    }
    Ok(MatchStats {
        count: matches.len(),
        mean_distance: sum / matches.len() as f64,
        max_distance: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::GradientScheme;
    use crate::grid::Grid;
    use crate::shading::render;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn l2() -> Lighting {
        Lighting::grey([0.2, 0.3, -0.7, 0.5, -0.2, -0.2, 0.3, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn correspondence_validation() {
        let ok = Match {
            view_i: 0,
            pixel_i: (1, 1),
            view_j: 1,
            pixel_j: (2, 2),
        };
        assert!(CorrespondenceSet::new(vec![ok]).is_ok());
        let swapped = Match {
            view_i: 1,
            pixel_i: (1, 1),
            view_j: 0,
            pixel_j: (2, 2),
        };
        assert!(matches!(
            CorrespondenceSet::new(vec![swapped]),
            Err(Error::MatchOutOfBounds { .. })
        ));
        assert!(matches!(
            CorrespondenceSet::new(vec![ok, ok]),
            Err(Error::InvalidMatches(_))
        ));
    }

    #[test]
    fn validate_against_checks_masks_and_views() {
        let (w, h) = (4, 4);
        let image = Image::constant(w, h, 1, 0.5);
        let albedo = Image::constant(w, h, 1, 1.0);
        let lighting = l2();
        let intr = Intrinsics::perspective(8.0, 1.5, 1.5).unwrap();
        let pose = Pose::identity();
        let mask = Mask::from_fn(w, h, |x, _| x < 3);
        let view = ViewBundle {
            image: &image,
            albedo: &albedo,
            lighting: &lighting,
            intr: &intr,
            pose: &pose,
            mask: &mask,
        };
        let views = [view, view];

        let in_range = CorrespondenceSet::new(vec![Match {
            view_i: 0,
            pixel_i: (2, 2),
            view_j: 1,
            pixel_j: (0, 0),
        }])
        .unwrap();
        assert!(in_range.validate_against(&views).is_ok());

        let bad_view = CorrespondenceSet::new(vec![Match {
            view_i: 0,
            pixel_i: (0, 0),
            view_j: 2,
            pixel_j: (0, 0),
        }])
        .unwrap();
        assert!(matches!(
            bad_view.validate_against(&views),
            Err(Error::MatchOutOfBounds { index: 0, .. })
        ));

        let unmasked = CorrespondenceSet::new(vec![Match {
            view_i: 0,
            pixel_i: (3, 0),
            view_j: 1,
            pixel_j: (0, 0),
        }])
        .unwrap();
        assert!(matches!(
            unmasked.validate_against(&views),
            Err(Error::MatchOutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn consistency_residual_vanishes_for_consistent_geometry() {
        let (w, h) = (5, 5);
        let image = Image::constant(w, h, 1, 0.5);
        let albedo = Image::constant(w, h, 1, 1.0);
        let lighting = l2();
        let intr = Intrinsics::perspective(10.0, 2.0, 2.0).unwrap();
        let pose0 = Pose::identity();
        let pose1 = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let mask = Mask::full(w, h);

        // View 0 sees the world point (0, 0, 2) at its principal point with
        // metric depth 2; view 1 sits one unit closer and sees it at depth 1.
        let d0 = Grid::filled(w, h, 2.0_f64.ln());
        let d1 = Grid::filled(w, h, 0.0);
        let views = [
            ViewBundle {
                image: &image,
                albedo: &albedo,
                lighting: &lighting,
                intr: &intr,
                pose: &pose0,
                mask: &mask,
            },
            ViewBundle {
                image: &image,
                albedo: &albedo,
                lighting: &lighting,
                intr: &intr,
                pose: &pose1,
                mask: &mask,
            },
        ];
        let m = Match {
            view_i: 0,
            pixel_i: (2, 2),
            view_j: 1,
            pixel_j: (2, 2),
        };
        let r = consistency_residual(&m, &views, &[d0, d1]).unwrap();
        assert!(r.norm() < 1e-14, "residual {r:?}");
    }

    #[test]
    fn mv_objective_matches_finite_differences() {
        let lighting = l2();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..200 {
            let frame = PixelFrame {
                f: rng.gen_range(50.0..400.0),
                xt: rng.gen_range(-30.0..30.0),
                yt: rng.gen_range(-30.0..30.0),
            };
            let g = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let zp = rng.gen_range(-0.5..1.0);
            let dual = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let beta = rng.gen_range(0.05..5.0);
            let lambda = rng.gen_range(0.0..2.0);
            let i_c = rng.gen_range(0.0..1.5);
            let rho = rng.gen_range(0.2..1.5);
            let couplings: Vec<(Vector3<f64>, Vector3<f64>)> = (0..rng.gen_range(0..3))
                .map(|_| {
                    (
                        Vector3::new(
                            rng.gen_range(-0.3..0.3),
                            rng.gen_range(-0.3..0.3),
                            rng.gen_range(0.7..1.3),
                        ),
                        Vector3::new(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.5..2.5),
                        ),
                    )
                })
                .collect();
            let theta = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..1.0),
            );
            let at = |t: Vector3<f64>| {
                mv_theta_objective(
                    t, g, zp, dual, beta, &[i_c], &[rho], &lighting, frame, &couplings, lambda,
                )
                .unwrap()
            };
            let (_, grad, hess) = at(theta);
            for j in 0..3 {
                let h = 1e-6 * theta[j].abs().max(1.0);
                let mut tp = theta;
                let mut tm = theta;
                tp[j] += h;
                tm[j] -= h;
                let fd = (at(tp).0 - at(tm).0) / (2.0 * h);
                let scale = grad[j].abs().max(fd.abs()).max(1.0);
                assert!(
                    (grad[j] - fd).abs() <= 1e-5 * scale,
                    "case {case} grad[{j}]: {} vs {fd}",
                    grad[j]
                );
                for i in 0..3 {
                    let fdh = (at(tp).1[i] - at(tm).1[i]) / (2.0 * h);
                    let scale = hess[(i, j)].abs().max(fdh.abs()).max(1.0);
                    assert!(
                        (hess[(i, j)] - fdh).abs() <= 1e-5 * scale,
                        "case {case} hess[{i},{j}]"
                    );
                }
            }
        }
    }

    #[test]
    fn coupling_term_has_the_closed_form_minimizer() {
        // With zero albedo the shading term vanishes; with a tiny beta the
        // consensus term is negligible, so the optimum of the third
        // component is ln(v . c / |v|^2).
        let lighting = l2();
        let frame = PixelFrame {
            f: 100.0,
            xt: 3.0,
            yt: -2.0,
        };
        let v = Vector3::new(0.1, -0.05, 1.0);
        let c = Vector3::new(0.3, 0.2, 1.8);
        let couplings = [(v, c)];
        let eval = |t: Vector3<f64>| {
            mv_theta_objective(
                t,
                Vector2::zeros(),
                0.0,
                Vector3::zeros(),
                1e-12,
                &[0.0],
                &[0.0],
                &lighting,
                frame,
                &couplings,
                3.0,
            )
            .unwrap()
        };
        let (x, out) = damped_newton(Vector3::new(0.0, 0.0, 0.0), |t| eval(*t), 1e-12, 60);
        assert!(out.converged);
        let expect = (v.dot(&c) / v.norm_squared()).ln();
        assert!((x.z - expect).abs() < 1e-8, "{} vs {expect}", x.z);
    }

    #[test]
    fn lambda_zero_matches_independent_solves_bitwise() {
        let (w, h) = (10, 10);
        let mask = Mask::from_fn(w, h, |x, y| (1..9).contains(&x) && (1..9).contains(&y));
        let intr = Intrinsics::perspective(12.0, 4.5, 4.5).unwrap();
        let lighting = l2();
        let albedo = Image::constant(w, h, 1, 0.8);
        let scheme = GradientScheme::AveragedForwardBackward;

        let gt0 = Grid::from_fn(w, h, |x, y| 0.4 + 0.01 * x as f64 - 0.008 * y as f64);
        let gt1 = Grid::from_fn(w, h, |x, y| 0.5 + 0.012 * (x as f64 + y as f64));
        let img0 = render(&gt0, &albedo, &lighting, &intr, &mask, scheme).unwrap();
        let img1 = render(&gt1, &albedo, &lighting, &intr, &mask, scheme).unwrap();
        let pose0 = Pose::identity();
        let pose1 = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.2, 0.0, 0.0)).unwrap();

        let views = [
            ViewBundle {
                image: &img0,
                albedo: &albedo,
                lighting: &lighting,
                intr: &intr,
                pose: &pose0,
                mask: &mask,
            },
            ViewBundle {
                image: &img1,
                albedo: &albedo,
                lighting: &lighting,
                intr: &intr,
                pose: &pose1,
                mask: &mask,
            },
        ];
        let opts = SolverOptions {
            max_outer: 8,
            ..Default::default()
        };
        let coupling = CouplingOptions {
            lambda: 0.0,
            solver: opts,
        };
        let inits = [Init::Constant(0.45), Init::Constant(0.45)];
        let mv = solve_mvsfs(&views, &CorrespondenceSet::empty(), &coupling, &inits).unwrap();

        for (view_idx, gt_img) in [(0usize, &img0), (1, &img1)] {
            let problem = SfsProblem::new(gt_img, &albedo, &lighting, &intr, &mask).unwrap();
            let single = solve_sfs(&problem, inits[view_idx], &opts).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let a = *mv.depths[view_idx].at(x, y);
                    let b = *single.depth.at(x, y);
                    assert_eq!(a.to_bits(), b.to_bits(), "view {view_idx} pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn solve_mvsfs_validates_inputs() {
        let (w, h) = (4, 4);
        let image = Image::constant(w, h, 1, 0.5);
        let albedo = Image::constant(w, h, 1, 1.0);
        let lighting = l2();
        let persp = Intrinsics::perspective(8.0, 1.5, 1.5).unwrap();
        let ortho = Intrinsics::orthographic();
        let pose = Pose::identity();
        let mask = Mask::full(w, h);
        let good = ViewBundle {
            image: &image,
            albedo: &albedo,
            lighting: &lighting,
            intr: &persp,
            pose: &pose,
            mask: &mask,
        };
        let bad = ViewBundle { intr: &ortho, ..good };
        let coupling = CouplingOptions {
            lambda: 1e-5,
            solver: SolverOptions::default(),
        };
        let inits = [Init::Constant(0.0), Init::Constant(0.0)];

        assert!(matches!(
            solve_mvsfs(&[good], &CorrespondenceSet::empty(), &coupling, &inits[..1]),
            Err(Error::ViewCountTooSmall { need: 2, got: 1 })
        ));
        assert!(matches!(
            solve_mvsfs(&[good, bad], &CorrespondenceSet::empty(), &coupling, &inits),
            Err(Error::OrthographicUnsupported)
        ));
        let neg = CouplingOptions {
            lambda: -1.0,
            solver: SolverOptions::default(),
        };
        assert!(matches!(
            solve_mvsfs(&[good, good], &CorrespondenceSet::empty(), &neg, &inits),
            Err(Error::InvalidOptions(_))
        ));
    }
}
