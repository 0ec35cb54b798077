//! `mvsfs`: command line front end for the shape-from-shading library.
//!
//! Every subcommand is a thin wrapper over `mvsfs::io`: parse arguments,
//! load a scene config, call one library entry point, write the outputs.
//!
//! Exit codes: 0 on success, 1 on any input or usage error, 2 when a solve
//! ran out of iterations before meeting its stop tolerance (the best
//! iterate and its report are still written in that case).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mvsfs::error::{Error, Result};
use mvsfs::geometry::DepthMap;
use mvsfs::io::light::write_lighting;
use mvsfs::io::pfm::{read_depth_pfm, write_depth_pfm, write_image_pfm};
use mvsfs::io::ply::write_ply;
use mvsfs::io::png::write_image_png;
use mvsfs::io::run::{
    evaluate_view, prepare_init, solve_multi, solve_single, write_json, write_single_view_scene,
    write_two_view_scene, InitSpec, OwnedInit,
};
use mvsfs::io::scene::{load_scene, LoadedScene, LoadedView};
use mvsfs::metrics::{calibrate_lighting, relative_residual};
use mvsfs::multiview::{fuse_point_cloud, ViewBundle};
use mvsfs::shading::render;
use mvsfs::solver::{SolveReport, SolverOptions};
use mvsfs::synth::{
    generate_matches, generate_scene, generate_two_view_scene, AlbedoSpec, CameraSpec,
    LightingPreset, ScenePreset, SurfaceKind,
};

#[derive(Parser)]
#[command(
    name = "mvsfs",
    version,
    about = "Variational shape from shading under spherical-harmonics lighting",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one view's shading model over a depth map.
    Render(RenderArgs),
    /// Reconstruct depth for a single-view scene.
    Solve(SolveArgs),
    /// Jointly reconstruct depth for all views of a scene.
    SolveMv(SolveMvArgs),
    /// Recover lighting coefficients from known geometry and reflectance.
    CalibrateLight(CalibrateLightArgs),
    /// Score a depth estimate against a view.
    Eval(EvalArgs),
    /// Backproject per-view depth maps into one colored point cloud.
    Fuse(FuseArgs),
    /// Generate a synthetic scene directory with a scene.toml inside.
    GenScene(GenSceneArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Scene config file.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Which view of the scene to render.
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Depth map to shade; defaults to the view's ground truth.
    #[arg(long, value_name = "FILE")]
    depth: Option<PathBuf>,
    /// Output directory for render.png and render.pfm.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Scene config file; must list exactly one view.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Starting depth: const:<value>, file:<depth.pfm>, or smooth-gt:<sigma>.
    #[arg(long, default_value = "const:0")]
    init: String,
    /// Use the frozen-coefficient fixed-point baseline instead of the
    /// alternating solver.
    #[arg(long)]
    fixed_point: bool,
    /// Output directory for depth.pfm and report.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveMvArgs {
    /// Scene config file with two or more views.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Weight of the cross-view correspondence term; overrides the scene
    /// config. When neither sets it, 1e-5 is used.
    #[arg(long)]
    lambda: Option<f64>,
    /// Starting depth, as in solve. Give once for all views or once per
    /// view.
    #[arg(long, default_value = "const:0")]
    init: Vec<String>,
    /// Output directory for depth_view<k>.pfm and report.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateLightArgs {
    /// Scene config file.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Which view to calibrate against.
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Known depth map; defaults to the view's ground truth.
    #[arg(long, value_name = "FILE")]
    depth: Option<PathBuf>,
    /// Output lighting coefficient file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene config file.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// Which view to score against.
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Depth estimate to score.
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Scene config file.
    #[arg(long, value_name = "FILE")]
    scene: PathBuf,
    /// One depth map per view, in view order.
    #[arg(long, value_name = "FILE", required = true, num_args = 1..)]
    depth: Vec<PathBuf>,
    /// Output ASCII PLY file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Spherical cap, the standard well-conditioned benchmark.
    Sphere,
    /// Smooth Gaussian bump.
    Blob,
    /// Tilted plane with constant slopes.
    Ramp,
    /// Two opposing bumps on a gentle tilt.
    Composite,
    /// Calibrated stereo pair of a dome seen from two directions, with
    /// ground-truth pixel correspondences.
    TwoView,
}

#[derive(Clone, Copy, ValueEnum)]
enum LightingArg {
    /// Grey lighting dominated by the first-order band.
    L1,
    /// Grey lighting with all second-order terms active.
    L2,
    /// Colored lighting with one coefficient row per RGB channel.
    L3,
}

impl LightingArg {
    fn preset(self) -> LightingPreset {
        match self {
            LightingArg::L1 => LightingPreset::L1,
            LightingArg::L2 => LightingPreset::L2,
            LightingArg::L3 => LightingPreset::L3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CameraArg {
    Orthographic,
    Perspective,
}

#[derive(Args)]
struct GenSceneArgs {
    /// Directory to create the scene in.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PresetArg::Sphere)]
    preset: PresetArg,
    #[arg(long, value_enum, default_value_t = LightingArg::L2)]
    lighting: LightingArg,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Standard deviation of Gaussian image noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera model for single-view presets; the two-view preset is always
    /// perspective.
    #[arg(long, value_enum, default_value_t = CameraArg::Orthographic)]
    camera: CameraArg,
    /// Checkerboard reflectance instead of a constant one.
    #[arg(long)]
    checker_albedo: bool,
    /// Rotation between the two cameras in degrees (two-view only).
    #[arg(long, default_value_t = 20.0)]
    angle: f64,
    /// Number of ground-truth correspondences to sample (two-view only).
    #[arg(long, default_value_t = 100)]
    matches: usize,
    /// Correspondence weight written into the scene config (two-view only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Leave ground-truth depth and normals out of the scene.
    #[arg(long)]
    no_gt: bool,
    /// Override the solver iteration cap stored in the scene config.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Override the solver stop tolerance stored in the scene config.
    #[arg(long)]
    stop_tol: Option<f64>,
}

/// Whether a command finished cleanly or returned a best-effort result.
enum CmdStatus {
    Clean,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version are requested output, not failures; anything
            // else is a usage error and must exit 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(CmdStatus::Clean) => ExitCode::SUCCESS,
        Ok(CmdStatus::NotConverged) => {
            eprintln!(
                "mvsfs: solver hit its iteration cap before the stop tolerance; \
                 best iterate written"
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("mvsfs: error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<CmdStatus> {
    match command {
        Command::Render(a) => cmd_render(a),
        Command::Solve(a) => cmd_solve(a),
        Command::SolveMv(a) => cmd_solve_mv(a),
        Command::CalibrateLight(a) => cmd_calibrate_light(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::GenScene(a) => cmd_gen_scene(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn pick_view(scene: &LoadedScene, idx: usize) -> Result<&LoadedView> {
    scene.views.get(idx).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "view {idx} out of range: scene has {} view(s)",
            scene.views.len()
        ))
    })
}

fn parse_init(spec: &str) -> Result<InitSpec> {
    let bad = || {
        Error::InvalidOptions(format!(
            "bad init spec '{spec}': expected const:<value>, file:<depth.pfm>, \
             or smooth-gt:<sigma>"
        ))
    };
    let (kind, value) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "const" => value.parse().map(InitSpec::Constant).map_err(|_| bad()),
        "file" if !value.is_empty() => Ok(InitSpec::DepthFile(value.into())),
        "smooth-gt" => value
            .parse()
            .map(|sigma| InitSpec::SmoothedGt { sigma })
            .map_err(|_| bad()),
        _ => Err(bad()),
    }
}

/// Loads the depth to operate on: an explicit file if given, the view's
/// ground truth otherwise.
fn depth_or_gt(view: &LoadedView, depth: &Option<PathBuf>, what: &str) -> Result<DepthMap> {
    match depth {
        Some(path) => read_depth_pfm(path),
        None => view.depth_gt.clone().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{what} needs --depth or a depth_gt entry in the scene config"
            ))
        }),
    }
}

/// On-disk solve report: the solver diagnostics plus the quantities that
/// describe the written result.
#[derive(Serialize)]
struct ReportJson<'a> {
    #[serde(flatten)]
    solver: &'a SolveReport,
    /// Photometric energy of the written depth estimate(s).
    final_energy: f64,
    /// Relative photometric residual of the written depth, one entry per
    /// view.
    relative_residual: Vec<f64>,
    /// Correspondence weight actually used (multi-view solves only).
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    wall_time_seconds: f64,
}

fn cmd_render(a: RenderArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    let view = pick_view(&scene, a.view)?;
    let depth = depth_or_gt(view, &a.depth, "render")?;
    let image = render(
        &depth,
        &view.albedo,
        &view.lighting,
        &view.intr,
        &view.mask,
        scene.solver.scheme,
    )?;
    ensure_dir(&a.out)?;
    let png = a.out.join("render.png");
    let pfm = a.out.join("render.pfm");
    write_image_png(&png, &image)?;
    write_image_pfm(&pfm, &image)?;
    println!("wrote {} and {}", png.display(), pfm.display());
    Ok(CmdStatus::Clean)
}

fn cmd_solve(a: SolveArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    let view = pick_view(&scene, 0)?;
    let init = prepare_init(view, &parse_init(&a.init)?)?;
    ensure_dir(&a.out)?;

    let start = Instant::now();
    let solution = solve_single(&scene, &init, a.fixed_point)?;
    let wall = start.elapsed().as_secs_f64();

    let depth_path = a.out.join("depth.pfm");
    write_depth_pfm(&depth_path, &solution.depth)?;

    let problem = view.problem()?;
    let report = ReportJson {
        solver: &solution.report,
        final_energy: problem.photometric_energy(&solution.depth, scene.solver.scheme)?,
        relative_residual: vec![relative_residual(
            &problem,
            &solution.depth,
            scene.solver.scheme,
        )?],
        lambda: None,
        wall_time_seconds: wall,
    };
    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;

    println!(
        "wrote {} and {} ({} sweeps, energy {:.6e})",
        depth_path.display(),
        report_path.display(),
        solution.report.outer_iterations,
        report.final_energy,
    );
    Ok(if solution.report.converged {
        CmdStatus::Clean
    } else {
        CmdStatus::NotConverged
    })
}

fn cmd_solve_mv(a: SolveMvArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    let n_views = scene.views.len();
    let specs: Vec<&str> = match a.init.len() {
        1 => vec![a.init[0].as_str(); n_views],
        n if n == n_views => a.init.iter().map(|s| s.as_str()).collect(),
        n => {
            return Err(Error::InvalidOptions(format!(
                "--init given {n} times for {n_views} views; give it once or once per view"
            )))
        }
    };
    let inits: Vec<OwnedInit> = scene
        .views
        .iter()
        .zip(&specs)
        .map(|(view, spec)| prepare_init(view, &parse_init(spec)?))
        .collect::<Result<_>>()?;
    let lambda = a.lambda.or(scene.coupling_lambda).unwrap_or(1e-5);
    ensure_dir(&a.out)?;

    let start = Instant::now();
    let solution = solve_multi(&scene, &inits, Some(lambda))?;
    let wall = start.elapsed().as_secs_f64();

    let mut depth_paths = Vec::with_capacity(n_views);
    for (k, depth) in solution.depths.iter().enumerate() {
        let path = a.out.join(format!("depth_view{k}.pfm"));
        write_depth_pfm(&path, depth)?;
        depth_paths.push(path);
    }

    let mut final_energy = 0.0;
    let mut residuals = Vec::with_capacity(n_views);
    for (view, depth) in scene.views.iter().zip(&solution.depths) {
        let problem = view.problem()?;
        final_energy += problem.photometric_energy(depth, scene.solver.scheme)?;
        residuals.push(relative_residual(&problem, depth, scene.solver.scheme)?);
    }
    let report = ReportJson {
        solver: &solution.report,
        final_energy,
        relative_residual: residuals,
        lambda: Some(lambda),
        wall_time_seconds: wall,
    };
    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;

    println!(
        "wrote {} depth map(s) and {} ({} sweeps, lambda {:.3e}, energy {:.6e})",
        depth_paths.len(),
        report_path.display(),
        solution.report.outer_iterations,
        lambda,
        report.final_energy,
    );
    Ok(if solution.report.converged {
        CmdStatus::Clean
    } else {
        CmdStatus::NotConverged
    })
}

fn cmd_calibrate_light(a: CalibrateLightArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    let view = pick_view(&scene, a.view)?;
    let depth = depth_or_gt(view, &a.depth, "calibrate-light")?;
    let lighting = calibrate_lighting(
        &view.image,
        &view.albedo,
        &depth,
        &view.intr,
        &view.mask,
        scene.solver.scheme,
    )?;
    write_lighting(&a.out, &lighting)?;
    println!("wrote {}", a.out.display());
    Ok(CmdStatus::Clean)
}

fn cmd_eval(a: EvalArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    let view = pick_view(&scene, a.view)?;
    let depth = read_depth_pfm(&a.depth)?;
    let report = evaluate_view(view, &depth, scene.solver.scheme)?;
    match report.mae_normals_deg {
        Some(mae) => println!("MAE-N: {mae:.4} deg"),
        None => println!("MAE-N: unavailable (scene has no ground truth)"),
    }
    println!("RMSE-I: {:.6}", report.rmse_image);
    println!("relative residual: {:.6e}", report.relative_residual);
    Ok(CmdStatus::Clean)
}

fn cmd_fuse(a: FuseArgs) -> Result<CmdStatus> {
    let scene = load_scene(&a.scene)?;
    if a.depth.len() != scene.views.len() {
        return Err(Error::InvalidOptions(format!(
            "fuse needs one --depth per view: scene has {} view(s), got {}",
            scene.views.len(),
            a.depth.len()
        )));
    }
    let depths: Vec<DepthMap> = a
        .depth
        .iter()
        .map(|p| read_depth_pfm(p))
        .collect::<Result<_>>()?;
    let bundles: Vec<ViewBundle> = scene.views.iter().map(|v| v.bundle()).collect();
    let cloud = fuse_point_cloud(&bundles, &depths)?;
    write_ply(&a.out, &cloud)?;
    println!("wrote {} ({} points)", a.out.display(), cloud.len());
    Ok(CmdStatus::Clean)
}

fn cmd_gen_scene(a: GenSceneArgs) -> Result<CmdStatus> {
    let mut solver = SolverOptions::default();
    if let Some(m) = a.max_outer {
        solver.max_outer = m;
    }
    if let Some(t) = a.stop_tol {
        solver.stop_tol = t;
    }
    solver.validate()?;
    let with_gt = !a.no_gt;

    let config_path = match a.preset {
        PresetArg::TwoView => {
            let scene =
                generate_two_view_scene(a.size, a.lighting.preset(), a.angle, a.noise, a.seed)?;
            let matches = generate_matches(&scene, a.matches, a.seed.wrapping_add(1))?;
            write_two_view_scene(&a.out, &scene, &matches, &solver, a.lambda, with_gt)?
        }
        single => {
            let surface = match single {
                PresetArg::Sphere => SurfaceKind::Sphere { radius_frac: 0.9 },
                PresetArg::Blob => SurfaceKind::GaussianBlob {
                    sigma_frac: 0.5,
                    amplitude: 0.35,
                },
                PresetArg::Ramp => SurfaceKind::Ramp {
                    slope_x: 0.25,
                    slope_y: -0.15,
                },
                PresetArg::Composite => SurfaceKind::Composite,
                PresetArg::TwoView => unreachable!(),
            };
            let preset = ScenePreset {
                size: a.size,
                surface,
                camera: match a.camera {
                    CameraArg::Orthographic => CameraSpec::Orthographic,
                    CameraArg::Perspective => CameraSpec::Perspective { focal_factor: 1.2 },
                },
                albedo: if a.checker_albedo {
                    AlbedoSpec::Checker {
                        low: 0.5,
                        high: 0.95,
                        period: 8,
                    }
                } else {
                    AlbedoSpec::Constant { value: 0.8 }
                },
                lighting: a.lighting.preset(),
                scheme: solver.scheme,
            };
            let scene = generate_scene(&preset, a.noise, a.seed)?;
            write_single_view_scene(&a.out, &scene, &solver, with_gt)?
        }
    };
    println!("wrote {}", config_path.display());
    Ok(CmdStatus::Clean)
}
