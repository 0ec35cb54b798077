//! Python bindings for the shape-from-shading library.
//!
//! The module exposes the in-memory pipeline: generate a synthetic scene,
//! solve for depth, score the estimate, calibrate lighting, and couple two
//! views through correspondences. Rasters cross the boundary as flat
//! row-major `list[float]` plus a `(width, height)` shape; pixels outside
//! the mask hold NaN.

// The pyo3 macros insert `.into()` on already-converted error values,
// which trips this lint in every generated method wrapper.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mvsfs::error::Error;
use mvsfs::geometry::DepthMap;
use mvsfs::grid::Grid;
use mvsfs::metrics::{calibrate_lighting, mae_normals_from_depth, relative_residual, rmse_image};
use mvsfs::multiview::{fuse_point_cloud, solve_mvsfs, CouplingOptions, ViewBundle};
use mvsfs::shading::render;
use mvsfs::solver::{solve_sfs, solve_sfs_fixed_point, Init, SolveReport, SolverOptions};
use mvsfs::synth::{
    gaussian_smooth, generate_matches, generate_scene, generate_two_view_scene, AlbedoSpec,
    CameraSpec, LightingPreset, ScenePreset, SurfaceKind, TwoViewScene,
};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidOptions(_)
        | Error::InvalidConfig(_)
        | Error::InvalidMatches(_)
        | Error::DimensionMismatch { .. }
        | Error::NotEnoughVisiblePixels { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_lighting(name: &str) -> PyResult<LightingPreset> {
    match name {
        "l1" => Ok(LightingPreset::L1),
        "l2" => Ok(LightingPreset::L2),
        "l3" => Ok(LightingPreset::L3),
        other => Err(PyValueError::new_err(format!(
            "unknown lighting preset '{other}': expected l1, l2, or l3"
        ))),
    }
}

/// Applies optional overrides on top of the default solver settings.
fn solver_options(
    max_outer: Option<usize>,
    stop_tol: Option<f64>,
    beta0: Option<f64>,
) -> PyResult<SolverOptions> {
    let mut opts = SolverOptions::default();
    if let Some(m) = max_outer {
        opts.max_outer = m;
    }
    if let Some(t) = stop_tol {
        opts.stop_tol = t;
    }
    if let Some(b) = beta0 {
        opts.beta0 = b;
    }
    opts.validate().map_err(to_py_err)?;
    Ok(opts)
}

fn depth_from_list(scene: &mvsfs::synth::Scene, data: Vec<f64>) -> PyResult<DepthMap> {
    Grid::from_vec(scene.mask.width(), scene.mask.height(), data).map_err(to_py_err)
}

/// Run diagnostics shared by every solve.
#[pyclass(name = "Report")]
#[derive(Clone)]
pub struct PyReport {
    #[pyo3(get)]
    pub iterations: usize,
    #[pyo3(get)]
    pub converged: bool,
    #[pyo3(get)]
    pub best_energy: f64,
    #[pyo3(get)]
    pub best_iteration: usize,
    #[pyo3(get)]
    pub energy_trace: Vec<f64>,
    #[pyo3(get)]
    pub final_betas: Vec<f64>,
    #[pyo3(get)]
    pub primal_residual: f64,
    #[pyo3(get)]
    pub dual_residual: f64,
}

impl PyReport {
    fn from_report(r: &SolveReport) -> Self {
        PyReport {
            iterations: r.outer_iterations,
            converged: r.converged,
            best_energy: r.best_energy,
            best_iteration: r.best_iteration,
            energy_trace: r.energy_trace.clone(),
            final_betas: r.final_betas.clone(),
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
        }
    }
}

/// A single-view depth estimate plus its run diagnostics.
#[pyclass(name = "Solution")]
pub struct PySolution {
    #[pyo3(get)]
    pub depth: Vec<f64>,
    #[pyo3(get)]
    pub shape: (u32, u32),
    #[pyo3(get)]
    pub report: PyReport,
}

/// Per-view depth estimates from a coupled solve.
#[pyclass(name = "MultiViewSolution")]
pub struct PyMultiViewSolution {
    #[pyo3(get)]
    pub depths: Vec<Vec<f64>>,
    #[pyo3(get)]
    pub shape: (u32, u32),
    #[pyo3(get)]
    pub lambda_: f64,
    #[pyo3(get)]
    pub report: PyReport,
}

/// Quality scores of a depth estimate against one scene.
#[pyclass(name = "EvalMetrics")]
pub struct PyEvalMetrics {
    #[pyo3(get)]
    pub mae_normals_deg: f64,
    #[pyo3(get)]
    pub rmse_image: f64,
    #[pyo3(get)]
    pub relative_residual: f64,
}

/// A synthetic single-view scene: observations plus ground truth.
#[pyclass(name = "Scene")]
#[derive(Clone)]
pub struct PyScene {
    inner: mvsfs::synth::Scene,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn shape(&self) -> (u32, u32) {
        (self.inner.mask.width(), self.inner.mask.height())
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.image.channels()
    }

    /// Flat row-major mask, true inside the reconstruction domain.
    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask.grid().data().to_vec()
    }

    /// Ground-truth depth (NaN outside the mask).
    #[getter]
    fn depth_gt(&self) -> Vec<f64> {
        self.inner.depth.data().to_vec()
    }

    /// Lighting coefficients, one row of nine per channel.
    #[getter]
    fn lighting(&self) -> Vec<Vec<f64>> {
        self.inner
            .lighting
            .rows()
            .iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// One observed image channel, flat row-major.
    fn image(&self, channel: usize) -> PyResult<Vec<f64>> {
        if channel >= self.inner.image.channels() {
            return Err(PyValueError::new_err(format!(
                "channel {channel} out of range: image has {}",
                self.inner.image.channels()
            )));
        }
        Ok(self.inner.image.channel(channel).data().to_vec())
    }

    /// Reconstructs depth from the observed image.
    ///
    /// The start is a constant depth (`init_const`, default 0), the
    /// ground truth blurred by `smooth_sigma` pixels, or an explicit
    /// `init_depth` raster. `fixed_point=True` runs the frozen-coefficient
    /// baseline instead of the alternating solver.
    #[pyo3(signature = (init_const=None, smooth_sigma=None, init_depth=None,
                        fixed_point=false, max_outer=None, stop_tol=None, beta0=None))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        init_const: Option<f64>,
        smooth_sigma: Option<f64>,
        init_depth: Option<Vec<f64>>,
        fixed_point: bool,
        max_outer: Option<usize>,
        stop_tol: Option<f64>,
        beta0: Option<f64>,
    ) -> PyResult<PySolution> {
        let opts = solver_options(max_outer, stop_tol, beta0)?;
        let chosen = [
            init_const.is_some(),
            smooth_sigma.is_some(),
            init_depth.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if chosen > 1 {
            return Err(PyValueError::new_err(
                "give at most one of init_const, smooth_sigma, init_depth",
            ));
        }
        let owned: Option<DepthMap> = match (&smooth_sigma, init_depth) {
            (Some(sigma), _) => Some(
                gaussian_smooth(&self.inner.depth, &self.inner.mask, *sigma)
                    .map_err(to_py_err)?,
            ),
            (None, Some(data)) => Some(depth_from_list(&self.inner, data)?),
            (None, None) => None,
        };
        let init = match &owned {
            Some(d) => Init::Depth(d),
            None => Init::Constant(init_const.unwrap_or(0.0)),
        };
        let scene = self.inner.clone();
        let solution = py
            .allow_threads(move || {
                let problem = scene.problem()?;
                if fixed_point {
                    solve_sfs_fixed_point(&problem, init, &opts)
                } else {
                    solve_sfs(&problem, init, &opts)
                }
            })
            .map_err(to_py_err)?;
        Ok(PySolution {
            depth: solution.depth.data().to_vec(),
            shape: (solution.depth.width(), solution.depth.height()),
            report: PyReport::from_report(&solution.report),
        })
    }

    /// Scores a depth raster against this scene's ground truth.
    fn evaluate(&self, depth: Vec<f64>) -> PyResult<PyEvalMetrics> {
        let depth = depth_from_list(&self.inner, depth)?;
        let scene = &self.inner;
        let scheme = Default::default();
        let problem = scene.problem().map_err(to_py_err)?;
        let rel = relative_residual(&problem, &depth, scheme).map_err(to_py_err)?;
        let rendered = render(
            &depth,
            &scene.albedo,
            &scene.lighting,
            &scene.intr,
            &scene.mask,
            scheme,
        )
        .map_err(to_py_err)?;
        let rmse = rmse_image(&rendered, &scene.image, &scene.mask).map_err(to_py_err)?;
        let mae = mae_normals_from_depth(&depth, &scene.normals, &scene.intr, &scene.mask, scheme)
            .map_err(to_py_err)?;
        Ok(PyEvalMetrics {
            mae_normals_deg: mae,
            rmse_image: rmse,
            relative_residual: rel,
        })
    }

    /// Recovers the lighting rows from the observed image and a depth
    /// raster (the ground truth when omitted).
    #[pyo3(signature = (depth=None))]
    fn calibrate_lighting(&self, depth: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let scene = &self.inner;
        let depth = match depth {
            Some(data) => depth_from_list(scene, data)?,
            None => scene.depth.clone(),
        };
        let lighting = calibrate_lighting(
            &scene.image,
            &scene.albedo,
            &depth,
            &scene.intr,
            &scene.mask,
            Default::default(),
        )
        .map_err(to_py_err)?;
        Ok(lighting.rows().iter().map(|r| r.to_vec()).collect())
    }
}

/// A calibrated stereo pair of one surface, with ground truth.
#[pyclass(name = "TwoViewScene")]
pub struct PyTwoViewScene {
    inner: TwoViewScene,
}

#[pymethods]
impl PyTwoViewScene {
    #[getter]
    fn n_views(&self) -> usize {
        self.inner.views.len()
    }

    #[getter]
    fn sphere_center(&self) -> (f64, f64, f64) {
        let c = self.inner.sphere_center;
        (c.x, c.y, c.z)
    }

    #[getter]
    fn sphere_radius(&self) -> f64 {
        self.inner.sphere_radius
    }

    /// One view as a standalone scene.
    fn view(&self, k: usize) -> PyResult<PyScene> {
        self.inner
            .views
            .get(k)
            .cloned()
            .map(|inner| PyScene { inner })
            .ok_or_else(|| {
                PyValueError::new_err(format!(
                    "view {k} out of range: scene has {}",
                    self.inner.views.len()
                ))
            })
    }

    /// Samples ground-truth correspondences as (x0, y0, x1, y1) pixel
    /// tuples between view 0 and view 1.
    fn sample_matches(&self, count: usize, seed: u64) -> PyResult<Vec<(u32, u32, u32, u32)>> {
        let set = generate_matches(&self.inner, count, seed).map_err(to_py_err)?;
        Ok(set
            .matches()
            .iter()
            .map(|m| (m.pixel_i.0, m.pixel_i.1, m.pixel_j.0, m.pixel_j.1))
            .collect())
    }

    /// Reconstructs both views jointly, coupled by sampled ground-truth
    /// correspondences with weight `lambda_`.
    #[pyo3(signature = (lambda_=1e-5, n_matches=50, match_seed=1, init_const=None,
                        max_outer=None, stop_tol=None, beta0=None))]
    #[allow(clippy::too_many_arguments)]
    fn solve_coupled(
        &self,
        py: Python<'_>,
        lambda_: f64,
        n_matches: usize,
        match_seed: u64,
        init_const: Option<f64>,
        max_outer: Option<usize>,
        stop_tol: Option<f64>,
        beta0: Option<f64>,
    ) -> PyResult<PyMultiViewSolution> {
        let solver = solver_options(max_outer, stop_tol, beta0)?;
        let matches = generate_matches(&self.inner, n_matches, match_seed).map_err(to_py_err)?;
        // A constant start defaults to the log-depth of the sphere center,
        // the natural "flat and wrong" initialization for this scene.
        let c = init_const.unwrap_or_else(|| self.inner.sphere_center.z.ln());
        let views = self.inner.views.clone();
        let solution = py
            .allow_threads(move || {
                let bundles: Vec<ViewBundle> = views.iter().map(|v| v.view()).collect();
                let coupling = CouplingOptions {
                    lambda: lambda_,
                    solver,
                };
                let inits = vec![Init::Constant(c); bundles.len()];
                solve_mvsfs(&bundles, &matches, &coupling, &inits)
            })
            .map_err(to_py_err)?;
        Ok(PyMultiViewSolution {
            depths: solution.depths.iter().map(|d| d.data().to_vec()).collect(),
            shape: (
                solution.depths[0].width(),
                solution.depths[0].height(),
            ),
            lambda_,
            report: PyReport::from_report(&solution.report),
        })
    }

    /// Backprojects per-view depth rasters into one world-frame cloud;
    /// returns (x, y, z) positions.
    fn fuse(&self, depths: Vec<Vec<f64>>) -> PyResult<Vec<(f64, f64, f64)>> {
        if depths.len() != self.inner.views.len() {
            return Err(PyValueError::new_err(format!(
                "need one depth raster per view: scene has {}, got {}",
                self.inner.views.len(),
                depths.len()
            )));
        }
        let maps: Vec<DepthMap> = self
            .inner
            .views
            .iter()
            .zip(depths)
            .map(|(v, d)| depth_from_list(v, d))
            .collect::<PyResult<_>>()?;
        let bundles: Vec<ViewBundle> = self.inner.views.iter().map(|v| v.view()).collect();
        let cloud = fuse_point_cloud(&bundles, &maps).map_err(to_py_err)?;
        Ok(cloud.positions.iter().map(|p| (p.x, p.y, p.z)).collect())
    }
}

/// Generates a synthetic single-view scene.
#[pyfunction(name = "generate_scene")]
#[pyo3(signature = (preset="sphere", lighting="l2", size=48, noise=0.0, seed=0,
                    perspective=false, checker_albedo=false))]
#[allow(clippy::too_many_arguments)]
fn py_generate_scene(
    preset: &str,
    lighting: &str,
    size: u32,
    noise: f64,
    seed: u64,
    perspective: bool,
    checker_albedo: bool,
) -> PyResult<PyScene> {
    let surface = match preset {
        "sphere" => SurfaceKind::Sphere { radius_frac: 0.9 },
        "blob" => SurfaceKind::GaussianBlob {
            sigma_frac: 0.5,
            amplitude: 0.35,
        },
        "ramp" => SurfaceKind::Ramp {
            slope_x: 0.25,
            slope_y: -0.15,
        },
        "composite" => SurfaceKind::Composite,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown preset '{other}': expected sphere, blob, ramp, or composite"
            )))
        }
    };
    let preset = ScenePreset {
        size,
        surface,
        camera: if perspective {
            CameraSpec::Perspective { focal_factor: 1.2 }
        } else {
            CameraSpec::Orthographic
        },
        albedo: if checker_albedo {
            AlbedoSpec::Checker {
                low: 0.5,
                high: 0.95,
                period: 8,
            }
        } else {
            AlbedoSpec::Constant { value: 0.8 }
        },
        lighting: parse_lighting(lighting)?,
        scheme: Default::default(),
    };
    let inner = generate_scene(&preset, noise, seed).map_err(to_py_err)?;
    Ok(PyScene { inner })
}

/// Generates a calibrated stereo pair of a dome, the second camera rotated
/// by `angle_deg` about the surface.
#[pyfunction(name = "generate_two_view_scene")]
#[pyo3(signature = (size=32, lighting="l1", angle_deg=20.0, noise=0.0, seed=0))]
fn py_generate_two_view_scene(
    size: u32,
    lighting: &str,
    angle_deg: f64,
    noise: f64,
    seed: u64,
) -> PyResult<PyTwoViewScene> {
    let inner = generate_two_view_scene(size, parse_lighting(lighting)?, angle_deg, noise, seed)
        .map_err(to_py_err)?;
    Ok(PyTwoViewScene { inner })
}

#[pymodule]
fn mvsfs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyTwoViewScene>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyMultiViewSolution>()?;
    m.add_class::<PyEvalMetrics>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(py_generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(py_generate_two_view_scene, m)?)?;
    Ok(())
}
