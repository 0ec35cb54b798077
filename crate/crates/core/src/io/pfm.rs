//! Portable FloatMap (PFM) reading and writing.
//!
//! Depth maps, images, and normal fields are stored as 32-bit floats with a
//! three-line header (`Pf` for one channel or `PF` for three, then the
//! dimensions, then the byte-order scale). Rows run bottom-up, values within
//! a row left to right, and pixels outside the mask hold NaN.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Normal};
use crate::grid::Grid;
use crate::shading::Image;

/// Every float written to disk; non-finite values collapse to the canonical
/// quiet NaN so rewrites of our own files are byte-identical.
fn to_storage(v: f64) -> f32 {
    let f = v as f32;
    if f.is_finite() {
        f
    } else {
        f32::NAN
    }
}

fn write_planes(path: &Path, planes: &[&Grid<f64>]) -> Result<()> {
    let (magic, channels) = match planes.len() {
        1 => ("Pf", 1),
        3 => ("PF", 3),
        n => {
            return Err(Error::InvalidOptions(format!(
                "float maps hold 1 or 3 channels, got {n}"
            )))
        }
    };
    let (w, h) = (planes[0].width(), planes[0].height());
    if planes.iter().any(|p| !p.same_shape(planes[0])) {
        return Err(Error::DimensionMismatch {
            context: "float map write",
            expected: format!("{w}x{h}"),
            got: "mismatched channel shapes".to_string(),
        });
    }
    let mut bytes = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve((w as usize) * (h as usize) * channels * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for plane in planes {
                bytes.extend_from_slice(&to_storage(*plane.at(x, y)).to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_planes(path: &Path) -> Result<Vec<Grid<f64>>> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(name.as_str(), e))?;

    // The header is three newline-terminated ASCII lines.
    let mut offset = 0;
    let mut line_no = 0;
    let mut next_line = || -> Result<String> {
        line_no += 1;
        let rest = &bytes[offset.min(bytes.len())..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(name.as_str(), line_no, "unterminated header line"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(name.as_str(), line_no, "header is not ASCII"))?
            .trim()
            .to_string();
        offset += end + 1;
        Ok(line)
    };

    let magic = next_line()?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::parse(
                &name,
                1,
                format!("expected magic Pf or PF, got {other:?}"),
            ))
        }
    };
    let dims = next_line()?;
    let mut it = dims.split_whitespace();
    let (w, h): (u32, u32) = match (it.next(), it.next(), it.next()) {
        (Some(w), Some(h), None) => (
            w.parse()
                .map_err(|_| Error::parse(name.as_str(), 2, format!("bad width {w:?}")))?,
            h.parse()
                .map_err(|_| Error::parse(name.as_str(), 2, format!("bad height {h:?}")))?,
        ),
        _ => return Err(Error::parse(name.as_str(), 2, format!("bad dimensions {dims:?}"))),
    };
    if w == 0 || h == 0 {
        return Err(Error::parse(name.as_str(), 2, "zero-sized float map"));
    }
    let scale: f64 = next_line()?
        .parse()
        .map_err(|_| Error::parse(name.as_str(), 3, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(name.as_str(), 3, "scale must be finite and nonzero"));
    }
    let little_endian = scale < 0.0;

    let expected = (w as usize) * (h as usize) * channels * 4;
    let data = &bytes[offset..];
    if data.len() != expected {
        return Err(Error::parse(
            &name,
            4,
            format!("expected {expected} data bytes, got {}", data.len()),
        ));
    }
    let mut planes = vec![Grid::filled(w, h, f64::NAN); channels];
    let mut pos = 0;
    for y in (0..h).rev() {
        for x in 0..w {
            for plane in planes.iter_mut() {
                let raw: [u8; 4] = data[pos..pos + 4].try_into().expect("sized above");
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                *plane.at_mut(x, y) = v as f64;
                pos += 4;
            }
        }
    }
    Ok(planes)
}

/// Writes a depth map as a one-channel float map.
pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_planes(path, &[depth])
}

/// Reads a one-channel float map as a depth map.
pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let mut planes = read_planes(path)?;
    if planes.len() != 1 {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            format!("expected a one-channel float map, got {}", planes.len()),
        ));
    }
    Ok(planes.remove(0))
}

/// Writes a one- or three-channel image as a float map.
pub fn write_image_pfm(path: &Path, image: &Image) -> Result<()> {
    let planes: Vec<&Grid<f64>> = (0..image.channels()).map(|c| image.channel(c)).collect();
    write_planes(path, &planes)
}

/// Reads a float map as a one- or three-channel image.
pub fn read_image_pfm(path: &Path) -> Result<Image> {
    Image::new(read_planes(path)?)
}

/// Writes a normal field as a three-channel float map.
pub fn write_normals_pfm(path: &Path, normals: &Grid<Normal>) -> Result<()> {
    let comp = |k: usize| Grid::from_fn(normals.width(), normals.height(), |x, y| normals.at(x, y)[k]);
    let planes = [comp(0), comp(1), comp(2)];
    write_planes(path, &[&planes[0], &planes[1], &planes[2]])
}

/// Reads a three-channel float map as a normal field.
pub fn read_normals_pfm(path: &Path) -> Result<Grid<Normal>> {
    let planes = read_planes(path)?;
    if planes.len() != 3 {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            format!("expected a three-channel float map, got {}", planes.len()),
        ));
    }
    Ok(Grid::from_fn(planes[0].width(), planes[0].height(), |x, y| {
        Vector3::new(*planes[0].at(x, y), *planes[1].at(x, y), *planes[2].at(x, y))
    }))
}
