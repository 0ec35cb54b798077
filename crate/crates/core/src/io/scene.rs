//! Scene configuration files.
//!
//! A scene config is a TOML document listing the per-view input files
//! (image, albedo, lighting, mask, optional ground truth), each view's
//! camera and pose, an optional match file, and solver settings. Relative
//! paths are resolved against the directory containing the config.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, Normal, Pose, Projection};
use crate::grid::{Grid, Mask};
use crate::multiview::{CorrespondenceSet, ViewBundle};
use crate::shading::{Albedo, Image, Lighting};
use crate::solver::{SfsProblem, SolverOptions};

use super::matches::read_matches;
use super::pfm::{read_depth_pfm, read_image_pfm, read_normals_pfm};
use super::png::{read_image_png, read_mask_png};

/// Camera description as stored in a scene config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "projection", rename_all = "snake_case")]
pub enum CameraConfig {
    Orthographic,
    Perspective {
        focal: f64,
        principal_point: [f64; 2],
    },
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        match *self {
            CameraConfig::Orthographic => Ok(Intrinsics::orthographic()),
            CameraConfig::Perspective {
                focal,
                principal_point,
            } => Intrinsics::perspective(focal, principal_point[0], principal_point[1]),
        }
    }

    pub fn from_intrinsics(intr: &Intrinsics) -> Self {
        match intr.projection() {
            Projection::Orthographic => CameraConfig::Orthographic,
            Projection::Perspective { f } => CameraConfig::Perspective {
                focal: f,
                principal_point: [intr.principal_point().0, intr.principal_point().1],
            },
        }
    }
}

/// Camera-to-world pose as stored in a scene config: row-major rotation and
/// a translation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseConfig {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for PoseConfig {
    fn default() -> Self {
        PoseConfig {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }
}

impl PoseConfig {
    pub fn pose(&self) -> Result<Pose> {
        let r = &self.rotation;
        Pose::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation();
        PoseConfig {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [pose.translation().x, pose.translation().y, pose.translation().z],
        }
    }
}

/// One view's input files and camera, as stored in a scene config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub image: PathBuf,
    pub albedo: PathBuf,
    pub lighting: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub depth_gt: Option<PathBuf>,
    #[serde(default)]
    pub normals_gt: Option<PathBuf>,
    pub camera: CameraConfig,
    #[serde(default)]
    pub pose: PoseConfig,
}

/// Cross-view coupling settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    /// Weight of the correspondence term; None defers to the caller.
    #[serde(default)]
    pub lambda: Option<f64>,
}

/// The on-disk description of a reconstruction problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub views: Vec<ViewConfig>,
    /// Path to a match file coupling the views.
    #[serde(default)]
    pub matches: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub coupling: CouplingConfig,
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<SceneConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize scene config: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// One view with all referenced files loaded into memory.
#[derive(Clone, Debug)]
pub struct LoadedView {
    pub image: Image,
    pub albedo: Albedo,
    pub lighting: Lighting,
    pub mask: Mask,
    pub intr: Intrinsics,
    pub pose: Pose,
    pub depth_gt: Option<DepthMap>,
    pub normals_gt: Option<Grid<Normal>>,
}

impl LoadedView {
    pub fn bundle(&self) -> ViewBundle<'_> {
        ViewBundle {
            image: &self.image,
            albedo: &self.albedo,
            lighting: &self.lighting,
            intr: &self.intr,
            pose: &self.pose,
            mask: &self.mask,
        }
    }

    pub fn problem(&self) -> Result<SfsProblem<'_>> {
        SfsProblem::new(&self.image, &self.albedo, &self.lighting, &self.intr, &self.mask)
    }
}

/// A scene config with every referenced file loaded and validated.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub views: Vec<LoadedView>,
    pub matches: CorrespondenceSet,
    pub solver: SolverOptions,
    pub coupling_lambda: Option<f64>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_image_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_image_pfm(path),
        Some("png") => read_image_png(path),
        _ => Err(Error::InvalidConfig(format!(
            "image files must be .pfm or .png, got {}",
            path.display()
        ))),
    }
}

/// Loads a scene config and everything it references.
pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    let config = SceneConfig::load(path)?;
    if config.views.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} lists no views",
            path.display()
        )));
    }
    config.solver.validate()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut views = Vec::with_capacity(config.views.len());
    for vc in &config.views {
        let view = LoadedView {
            image: read_image_any(&resolve(base, &vc.image))?,
            albedo: read_image_any(&resolve(base, &vc.albedo))?,
            lighting: super::light::read_lighting(&resolve(base, &vc.lighting))?,
            mask: read_mask_png(&resolve(base, &vc.mask))?,
            intr: vc.camera.intrinsics()?,
            pose: vc.pose.pose()?,
            depth_gt: vc
                .depth_gt
                .as_ref()
                .map(|p| read_depth_pfm(&resolve(base, p)))
                .transpose()?,
            normals_gt: vc
                .normals_gt
                .as_ref()
                .map(|p| read_normals_pfm(&resolve(base, p)))
                .transpose()?,
        };
        // Fail here, with the view's files just named, rather than deep in a
        // solver call.
        view.problem()?;
        views.push(view);
    }

    let matches = match &config.matches {
        Some(p) => read_matches(&resolve(base, p))?,
        None => CorrespondenceSet::empty(),
    };

    Ok(LoadedScene {
        views,
        matches,
        solver: config.solver,
        coupling_lambda: config.coupling.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::light::write_lighting;
    use crate::io::pfm::write_image_pfm;
    use crate::io::png::write_mask_png;
    use crate::synth::{generate_scene, LightingPreset, ScenePreset};
    use tempfile::tempdir;

    fn write_view_files(dir: &Path, scene: &crate::synth::Scene) -> ViewConfig {
        write_image_pfm(&dir.join("image.pfm"), &scene.image).unwrap();
        write_image_pfm(&dir.join("albedo.pfm"), &scene.albedo).unwrap();
        write_lighting(&dir.join("light.txt"), &scene.lighting).unwrap();
        write_mask_png(&dir.join("mask.png"), &scene.mask).unwrap();
        ViewConfig {
            image: "image.pfm".into(),
            albedo: "albedo.pfm".into(),
            lighting: "light.txt".into(),
            mask: "mask.png".into(),
            depth_gt: None,
            normals_gt: None,
            camera: CameraConfig::from_intrinsics(&scene.intr),
            pose: PoseConfig::from_pose(&scene.pose),
        }
    }

    #[test]
    fn configs_round_trip_and_load() {
        let dir = tempdir().unwrap();
        let scene =
            generate_scene(&ScenePreset::sphere(12, LightingPreset::L2), 0.0, 0).unwrap();
        let view = write_view_files(dir.path(), &scene);
        let config = SceneConfig {
            views: vec![view],
            matches: None,
            solver: SolverOptions::default(),
            coupling: CouplingConfig { lambda: Some(1e-5) },
        };
        let path = dir.path().join("scene.toml");
        config.save(&path).unwrap();
        assert_eq!(SceneConfig::load(&path).unwrap(), config);

        let loaded = load_scene(&path).unwrap();
        assert_eq!(loaded.views.len(), 1);
        assert_eq!(loaded.coupling_lambda, Some(1e-5));
        assert_eq!(loaded.views[0].image.width(), 12);
        assert!(loaded.matches.is_empty());
        loaded.views[0].problem().unwrap();
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempdir().unwrap();
        let config = SceneConfig {
            views: vec![ViewConfig {
                image: "absent.pfm".into(),
                albedo: "absent.pfm".into(),
                lighting: "absent.txt".into(),
                mask: "absent.png".into(),
                depth_gt: None,
                normals_gt: None,
                camera: CameraConfig::Orthographic,
                pose: PoseConfig::default(),
            }],
            matches: None,
            solver: SolverOptions::default(),
            coupling: CouplingConfig::default(),
        };
        let path = dir.path().join("scene.toml");
        config.save(&path).unwrap();
        match load_scene(&path).unwrap_err() {
            Error::Io { path, .. } => assert!(path.contains("absent.pfm"), "path={path}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_rotations_and_empty_scenes_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        let empty = SceneConfig {
            views: vec![],
            matches: None,
            solver: SolverOptions::default(),
            coupling: CouplingConfig::default(),
        };
        empty.save(&path).unwrap();
        assert!(matches!(
            load_scene(&path).unwrap_err(),
            Error::InvalidConfig(_)
        ));

        let scene =
            generate_scene(&ScenePreset::sphere(8, LightingPreset::L1), 0.0, 0).unwrap();
        let mut view = write_view_files(dir.path(), &scene);
        view.pose.rotation[0][0] = 2.0;
        let config = SceneConfig {
            views: vec![view],
            matches: None,
            solver: SolverOptions::default(),
            coupling: CouplingConfig::default(),
        };
        config.save(&path).unwrap();
        assert!(matches!(
            load_scene(&path).unwrap_err(),
            Error::NotARotation(_)
        ));
    }

    #[test]
    fn malformed_toml_is_an_invalid_config() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        fs::write(&path, "views = 3\n").unwrap();
        assert!(matches!(
            SceneConfig::load(&path).unwrap_err(),
            Error::InvalidConfig(_)
        ));
    }
}
