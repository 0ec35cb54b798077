//! Shared pipeline steps behind the command line interface.
//!
//! These functions connect the on-disk formats to the solvers: writing
//! generated scenes out as scene directories, preparing depth
//! initializations, running the solvers on loaded scenes, and scoring
//! results. The command line binary stays a thin argument-parsing shell.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::gradient::GradientScheme;
use crate::metrics::{mae_normals, mae_normals_from_depth, relative_residual, rmse_image};
use crate::multiview::{
    solve_mvsfs, CorrespondenceSet, CouplingOptions, MultiViewSolution, ViewBundle,
};
use crate::shading::{normals_from_depth, render};
use crate::solver::{solve_sfs, solve_sfs_fixed_point, Init, SfsSolution, SolverOptions};
use crate::synth::{gaussian_smooth, Scene, TwoViewScene};

use super::light::write_lighting;
use super::matches::write_matches;
use super::pfm::{read_depth_pfm, write_depth_pfm, write_image_pfm, write_normals_pfm};
use super::png::write_mask_png;
use super::scene::{
    CameraConfig, CouplingConfig, LoadedScene, LoadedView, PoseConfig, SceneConfig, ViewConfig,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn view_files(dir: &Path, rel: &Path, scene: &Scene, with_gt: bool) -> Result<ViewConfig> {
    ensure_dir(dir)?;
    write_image_pfm(&dir.join("image.pfm"), &scene.image)?;
    write_image_pfm(&dir.join("albedo.pfm"), &scene.albedo)?;
    write_lighting(&dir.join("light.txt"), &scene.lighting)?;
    write_mask_png(&dir.join("mask.png"), &scene.mask)?;
    let (mut depth_gt, mut normals_gt) = (None, None);
    if with_gt {
        write_depth_pfm(&dir.join("depth_gt.pfm"), &scene.depth)?;
        write_normals_pfm(&dir.join("normals_gt.pfm"), &scene.normals)?;
        depth_gt = Some(rel.join("depth_gt.pfm"));
        normals_gt = Some(rel.join("normals_gt.pfm"));
    }
    Ok(ViewConfig {
        image: rel.join("image.pfm"),
        albedo: rel.join("albedo.pfm"),
        lighting: rel.join("light.txt"),
        mask: rel.join("mask.png"),
        depth_gt,
        normals_gt,
        camera: CameraConfig::from_intrinsics(&scene.intr),
        pose: PoseConfig::from_pose(&scene.pose),
    })
}

/// Writes a single-view scene as a directory with a `scene.toml` inside;
/// returns the config path.
pub fn write_single_view_scene(
    dir: &Path,
    scene: &Scene,
    solver: &SolverOptions,
    with_gt: bool,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let view = view_files(&dir.join("view0"), Path::new("view0"), scene, with_gt)?;
    let config = SceneConfig {
        views: vec![view],
        matches: None,
        solver: *solver,
        coupling: CouplingConfig::default(),
    };
    let path = dir.join("scene.toml");
    config.save(&path)?;
    Ok(path)
}

/// Writes a two-view scene plus its matches as a directory with a
/// `scene.toml` inside; returns the config path.
pub fn write_two_view_scene(
    dir: &Path,
    scene: &TwoViewScene,
    matches: &CorrespondenceSet,
    solver: &SolverOptions,
    lambda: Option<f64>,
    with_gt: bool,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let mut views = Vec::with_capacity(scene.views.len());
    for (k, view) in scene.views.iter().enumerate() {
        let rel = PathBuf::from(format!("view{k}"));
        views.push(view_files(&dir.join(&rel), &rel, view, with_gt)?);
    }
    write_matches(&dir.join("matches.txt"), matches)?;
    let config = SceneConfig {
        views,
        matches: Some("matches.txt".into()),
        solver: *solver,
        coupling: CouplingConfig { lambda },
    };
    let path = dir.join("scene.toml");
    config.save(&path)?;
    Ok(path)
}

/// How to choose the starting depth for a solve.
#[derive(Clone, Debug)]
pub enum InitSpec {
    /// The same value at every pixel.
    Constant(f64),
    /// A depth map loaded from a float map file.
    DepthFile(PathBuf),
    /// The view's ground truth blurred by a mask-aware Gaussian; needs
    /// `depth_gt` in the scene config.
    SmoothedGt { sigma: f64 },
}

/// An initialization that owns whatever data it loaded.
#[derive(Clone, Debug)]
pub enum OwnedInit {
    Constant(f64),
    Depth(DepthMap),
}

impl OwnedInit {
    pub fn as_init(&self) -> Init<'_> {
        match self {
            OwnedInit::Constant(v) => Init::Constant(*v),
            OwnedInit::Depth(d) => Init::Depth(d),
        }
    }
}

/// Materializes an initialization spec against one loaded view.
pub fn prepare_init(view: &LoadedView, spec: &InitSpec) -> Result<OwnedInit> {
    match spec {
        InitSpec::Constant(v) => Ok(OwnedInit::Constant(*v)),
        InitSpec::DepthFile(path) => Ok(OwnedInit::Depth(read_depth_pfm(path)?)),
        InitSpec::SmoothedGt { sigma } => {
            let gt = view.depth_gt.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "smoothed ground-truth init needs depth_gt in the scene config".to_string(),
                )
            })?;
            Ok(OwnedInit::Depth(gaussian_smooth(gt, &view.mask, *sigma)?))
        }
    }
}

/// Runs the single-view solver on a one-view scene.
pub fn solve_single(
    scene: &LoadedScene,
    init: &OwnedInit,
    fixed_point: bool,
) -> Result<SfsSolution> {
    let [view] = scene.views.as_slice() else {
        return Err(Error::InvalidConfig(format!(
            "single-view solve needs exactly 1 view, config has {}",
            scene.views.len()
        )));
    };
    let problem = view.problem()?;
    if fixed_point {
        solve_sfs_fixed_point(&problem, init.as_init(), &scene.solver)
    } else {
        solve_sfs(&problem, init.as_init(), &scene.solver)
    }
}

/// Runs the multi-view solver; `lambda` falls back to the config, then 0.
pub fn solve_multi(
    scene: &LoadedScene,
    inits: &[OwnedInit],
    lambda: Option<f64>,
) -> Result<MultiViewSolution> {
    let bundles: Vec<ViewBundle> = scene.views.iter().map(|v| v.bundle()).collect();
    let coupling = CouplingOptions {
        lambda: lambda.or(scene.coupling_lambda).unwrap_or(0.0),
        solver: scene.solver,
    };
    let init_refs: Vec<Init> = inits.iter().map(|i| i.as_init()).collect();
    solve_mvsfs(&bundles, &scene.matches, &coupling, &init_refs)
}

/// Quality summary of one reconstructed view.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Photometric residual relative to the image magnitude.
    pub relative_residual: f64,
    /// RMS difference between the re-rendered and observed image.
    pub rmse_image: f64,
    /// Mean angular normal error in degrees, when ground truth is present.
    pub mae_normals_deg: Option<f64>,
}

/// Scores a depth map against one loaded view and its ground truth.
pub fn evaluate_view(
    view: &LoadedView,
    depth: &DepthMap,
    scheme: GradientScheme,
) -> Result<EvalReport> {
    let problem = view.problem()?;
    let rel = relative_residual(&problem, depth, scheme)?;
    let rendered = render(depth, &view.albedo, &view.lighting, &view.intr, &view.mask, scheme)?;
    let rmse = rmse_image(&rendered, &view.image, &view.mask)?;
    let mae = if let Some(gt_normals) = &view.normals_gt {
        Some(mae_normals_from_depth(
            depth, gt_normals, &view.intr, &view.mask, scheme,
        )?)
    } else if let Some(gt_depth) = &view.depth_gt {
        let reference = normals_from_depth(gt_depth, &view.intr, &view.mask, scheme)?;
        let estimated = normals_from_depth(depth, &view.intr, &view.mask, scheme)?;
        Some(mae_normals(&estimated, &reference, &view.mask)?)
    } else {
        None
    };
    Ok(EvalReport {
        relative_residual: rel,
        rmse_image: rmse,
        mae_normals_deg: mae,
    })
}

/// Writes any serializable report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidOptions(format!("cannot serialize report: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}
