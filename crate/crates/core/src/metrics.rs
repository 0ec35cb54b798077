//! Reconstruction quality metrics and lighting calibration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, Normal};
use crate::gradient::GradientScheme;
use crate::grid::{Grid, Mask, PixelSet};
use crate::shading::{
    check_image_shape, check_raster_shape, normals_from_depth, sh_basis, Albedo, Image, Lighting,
    SH_COEFFS,
};
use crate::solver::SfsProblem;

/// Mean angular error between two normal fields over the mask, in degrees.
pub fn mae_normals(estimated: &Grid<Normal>, reference: &Grid<Normal>, mask: &Mask) -> Result<f64> {
    if !estimated.same_shape(reference) || !estimated.same_shape(mask.grid()) {
        return Err(Error::DimensionMismatch {
            context: "normal comparison",
            expected: format!("{}x{}", mask.grid().width(), mask.grid().height()),
            got: format!("{}x{}", estimated.width(), estimated.height()),
        });
    }
    let px = PixelSet::from_mask(mask);
    if px.is_empty() {
        return Err(Error::EmptyDomain("normal comparison"));
    }
    let mut sum = 0.0;
    for i in 0..px.len() {
        let (x, y) = px.pixel(i);
        let (a, b) = (estimated.at(x, y), reference.at(x, y));
        if !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteInput("normals under mask"));
        }
        let cos = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
        sum += cos.acos().to_degrees();
    }
    Ok(sum / px.len() as f64)
}

/// Mean angular error, in degrees, of the normals induced by a depth map
/// against a reference normal field.
pub fn mae_normals_from_depth(
    depth: &DepthMap,
    reference: &Grid<Normal>,
    intr: &Intrinsics,
    mask: &Mask,
    scheme: GradientScheme,
) -> Result<f64> {
    let estimated = normals_from_depth(depth, intr, mask, scheme)?;
    mae_normals(&estimated, reference, mask)
}

/// Root-mean-square intensity difference over the mask, pooled across
/// channels.
pub fn rmse_image(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    check_image_shape("image comparison", a, mask, a.channels())?;
    check_image_shape("image comparison", b, mask, a.channels())?;
    let px = PixelSet::from_mask(mask);
    if px.is_empty() {
        return Err(Error::EmptyDomain("image comparison"));
    }
    let mut sum = 0.0;
    for c in 0..a.channels() {
        let ac = px.gather(a.channel(c), "image")?;
        let bc = px.gather(b.channel(c), "image")?;
        for (va, vb) in ac.iter().zip(&bc) {
            sum += (va - vb) * (va - vb);
        }
    }
    Ok((sum / (px.len() * a.channels()) as f64).sqrt())
}

/// Photometric residual of a depth map relative to the image magnitude:
/// the square root of the energy divided by the summed squared intensities.
pub fn relative_residual(
    problem: &SfsProblem<'_>,
    depth: &DepthMap,
    scheme: GradientScheme,
) -> Result<f64> {
    let energy = problem.photometric_energy(depth, scheme)?;
    let px = PixelSet::from_mask(problem.mask());
    let mut denom = 0.0;
    for c in 0..problem.image().channels() {
        for v in px.gather(problem.image().channel(c), "image")? {
            denom += v * v;
        }
    }
    if denom <= 0.0 {
        return Err(Error::InvalidOptions(
            "relative residual is undefined for an all-zero image".to_string(),
        ));
    }
    Ok((energy / denom).sqrt())
}

/// Recovers per-channel lighting coefficients from an image with known
/// geometry and reflectance, by linear least squares over the masked pixels.
///
/// The normals come from the same discrete gradient operator the renderer
/// uses, so calibration on noiseless rendered data is exact up to rounding.
/// Fails when the observed normals do not constrain all nine coefficients.
pub fn calibrate_lighting(
    image: &Image,
    albedo: &Albedo,
    depth: &DepthMap,
    intr: &Intrinsics,
    mask: &Mask,
    scheme: GradientScheme,
) -> Result<Lighting> {
    check_image_shape("lighting calibration", image, mask, image.channels())?;
    check_image_shape("lighting calibration", albedo, mask, image.channels())?;
    check_raster_shape("lighting calibration", depth, mask)?;
    let px = PixelSet::from_mask(mask);
    if px.len() < SH_COEFFS {
        return Err(Error::RankDeficient {
            rank: px.len(),
            need: SH_COEFFS,
        });
    }
    let normals = normals_from_depth(depth, intr, mask, scheme)?;
    let basis: Vec<[f64; SH_COEFFS]> = (0..px.len())
        .map(|i| {
            let (x, y) = px.pixel(i);
            sh_basis(normals.at(x, y))
        })
        .collect();

    let mut rows = Vec::with_capacity(image.channels());
    for c in 0..image.channels() {
        let rho = px.gather(albedo.channel(c), "albedo")?;
        let intensity = px.gather(image.channel(c), "image")?;
        let a = DMatrix::from_fn(px.len(), SH_COEFFS, |i, j| rho[i] * basis[i][j]);
        let rhs = DVector::from_vec(intensity);
        let svd = a.svd(true, true);
        let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let eps = max_sv * f64::EPSILON * px.len().max(SH_COEFFS) as f64;
        let rank = svd.rank(eps);
        if rank < SH_COEFFS {
            return Err(Error::RankDeficient {
                rank,
                need: SH_COEFFS,
            });
        }
        let sol = svd
            .solve(&rhs, eps)
            .map_err(|msg| Error::InvalidOptions(format!("lighting solve failed: {msg}")))?;
        let mut row = [0.0; SH_COEFFS];
        for (dst, src) in row.iter_mut().zip(sol.iter()) {
            *dst = *src;
        }
        rows.push(row);
    }
    Lighting::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, LightingPreset, ScenePreset, SurfaceKind};
    use nalgebra::Vector3;

    #[test]
    fn identical_normals_have_zero_error() {
        let mask = Mask::full(4, 4);
        let grid = Grid::filled(4, 4, Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(mae_normals(&grid, &grid, &mask).unwrap(), 0.0);
    }

    #[test]
    fn a_uniform_five_degree_tilt_measures_five_degrees() {
        let mask = Mask::full(6, 6);
        let a = Grid::filled(6, 6, Vector3::new(0.0, 0.0, -1.0));
        let t = 5f64.to_radians();
        let b = Grid::filled(6, 6, Vector3::new(t.sin(), 0.0, -t.cos()));
        let mae = mae_normals(&a, &b, &mask).unwrap();
        assert!((mae - 5.0).abs() < 1e-10, "mae={mae}");
    }

    #[test]
    fn unnormalized_inputs_are_handled() {
        let mask = Mask::full(3, 3);
        let a = Grid::filled(3, 3, Vector3::new(0.0, 0.0, -2.0));
        let b = Grid::filled(3, 3, Vector3::new(0.0, 0.0, -0.5));
        assert!(mae_normals(&a, &b, &mask).unwrap() < 1e-12);
    }

    #[test]
    fn rmse_of_a_constant_offset_is_that_offset() {
        let mask = Mask::full(5, 5);
        let a = Image::constant(5, 5, 2, 0.4);
        let b = Image::constant(5, 5, 2, 0.5);
        let rmse = rmse_image(&a, &b, &mask).unwrap();
        assert!((rmse - 0.1).abs() < 1e-12, "rmse={rmse}");
    }

    #[test]
    fn ground_truth_has_zero_relative_residual() {
        let preset = ScenePreset::sphere(20, LightingPreset::L1);
        let scene = generate_scene(&preset, 0.0, 0).unwrap();
        let problem = scene.problem().unwrap();
        let r = relative_residual(&problem, &scene.depth, preset.scheme).unwrap();
        assert!(r <= 1e-12, "residual={r}");

        let mut wrong = scene.depth.clone();
        for v in wrong.data_mut() {
            if v.is_finite() {
                *v *= 1.2;
            }
        }
        assert!(relative_residual(&problem, &wrong, preset.scheme).unwrap() > 1e-4);
    }

    #[test]
    fn calibration_recovers_the_rendering_coefficients() {
        for lighting in [LightingPreset::L1, LightingPreset::L2, LightingPreset::L3] {
            let preset = ScenePreset::sphere(32, lighting);
            let scene = generate_scene(&preset, 0.0, 0).unwrap();
            let fit = calibrate_lighting(
                &scene.image,
                &scene.albedo,
                &scene.depth,
                &scene.intr,
                &scene.mask,
                preset.scheme,
            )
            .unwrap();
            assert_eq!(fit.channels(), scene.lighting.channels());
            for c in 0..fit.channels() {
                for (got, want) in fit.row(c).iter().zip(scene.lighting.row(c)) {
                    assert!((got - want).abs() < 1e-9, "channel {c}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn constant_normals_cannot_constrain_the_lighting() {
        let preset = ScenePreset {
            surface: SurfaceKind::Ramp {
                slope_x: 0.2,
                slope_y: -0.1,
            },
            ..ScenePreset::sphere(16, LightingPreset::L1)
        };
        let scene = generate_scene(&preset, 0.0, 0).unwrap();
        let err = calibrate_lighting(
            &scene.image,
            &scene.albedo,
            &scene.depth,
            &scene.intr,
            &scene.mask,
            preset.scheme,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::RankDeficient { rank, need: 9 } if rank < 9),
            "unexpected error {err:?}"
        );
    }
}
