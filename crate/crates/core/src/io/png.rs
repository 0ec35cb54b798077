//! PNG reading and writing for masks and display images.
//!
//! Images are written as 16-bit linear PNG (no gamma), with intensities
//! clipped to `[0, 1]`; reading normalizes 8-bit data by 255 and 16-bit
//! data by 65535. Masks are 8-bit grayscale where any nonzero value means
//! the pixel is inside the domain.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::shading::Image;

fn image_error(path: &Path, err: image::ImageError) -> Error {
    Error::io(
        path.display().to_string(),
        std::io::Error::new(std::io::ErrorKind::InvalidData, err.to_string()),
    )
}

/// Writes a mask as an 8-bit grayscale PNG (255 inside, 0 outside).
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = (mask.grid().width(), mask.grid().height());
    let buf = ImageBuffer::from_fn(w, h, |x, y| {
        Luma([if mask.contains(x as i64, y as i64) {
            255u8
        } else {
            0
        }])
    });
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Reads any grayscale-convertible PNG as a mask; nonzero means inside.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .decode()
        .map_err(|e| image_error(path, e))?
        .into_luma8();
    Ok(Mask::from_fn(img.width(), img.height(), |x, y| {
        img.get_pixel(x, y)[0] != 0
    }))
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a one- or three-channel image as a 16-bit linear PNG, clipping
/// intensities to `[0, 1]`. Non-finite pixels (outside the mask) write as 0.
pub fn write_image_png(path: &Path, image: &Image) -> Result<()> {
    let (w, h) = (image.width(), image.height());
    let sample = |c: usize, x: u32, y: u32| {
        let v = *image.channel(c).at(x, y);
        quantize(if v.is_finite() { v } else { 0.0 })
    };
    match image.channels() {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w, h, |x, y| Luma([sample(0, x, y)]));
            buf.save_with_format(path, ImageFormat::Png)
                .map_err(|e| image_error(path, e))
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
                Rgb([sample(0, x, y), sample(1, x, y), sample(2, x, y)])
            });
            buf.save_with_format(path, ImageFormat::Png)
                .map_err(|e| image_error(path, e))
        }
        n => Err(Error::InvalidOptions(format!(
            "png images hold 1 or 3 channels, got {n}"
        ))),
    }
}

/// Reads an 8- or 16-bit PNG as a linear image normalized to `[0, 1]`.
pub fn read_image_png(path: &Path) -> Result<Image> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .decode()
        .map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width(), img.height());
    let image = match img {
        DynamicImage::ImageLuma8(b) => {
            Image::from_fn(w, h, 1, |_, x, y| b.get_pixel(x, y)[0] as f64 / 255.0)
        }
        DynamicImage::ImageLuma16(b) => {
            Image::from_fn(w, h, 1, |_, x, y| b.get_pixel(x, y)[0] as f64 / 65535.0)
        }
        DynamicImage::ImageRgb8(b) => {
            Image::from_fn(w, h, 3, |c, x, y| b.get_pixel(x, y)[c] as f64 / 255.0)
        }
        DynamicImage::ImageRgb16(b) => {
            Image::from_fn(w, h, 3, |c, x, y| b.get_pixel(x, y)[c] as f64 / 65535.0)
        }
        other => {
            return Err(Error::InvalidOptions(format!(
                "unsupported png layout {:?} in {}",
                other.color(),
                path.display()
            )))
        }
    };
    Ok(image)
}
