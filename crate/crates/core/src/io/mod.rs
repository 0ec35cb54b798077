//! On-disk formats and the pipeline steps behind the command line.
//!
//! * [`pfm`]: float maps for depth, images, and normals.
//! * [`png`]: masks and display images.
//! * [`light`]: lighting coefficient text files.
//! * [`matches`]: sparse correspondence text files.
//! * [`ply`]: ASCII point clouds.
//! * [`scene`]: the TOML scene configuration tying the files together.
//! * [`run`]: scene writing, initialization, solving, and scoring steps
//!   shared by the command line binary and the test suites.

pub mod light;
pub mod matches;
pub mod pfm;
pub mod ply;
pub mod png;
pub mod run;
pub mod scene;
