//! Dense row-major rasters, the binary pixel mask, and the indexing of
//! masked pixels that every solver stage shares.

use crate::error::{Error, Result};

/// Dense row-major raster of `T` with `u32` pixel coordinates.
///
/// Pixel `(0, 0)` is the top-left pixel center, `x` grows to the right along
/// columns and `y` grows downward along rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T> Grid<T> {
    /// Wraps an existing row-major buffer; its length must be `width * height`.
    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "Grid::from_vec",
                expected: format!("{expected} elements"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    /// Builds a grid by evaluating `f` at every pixel in row-major order.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when `(x, y)` lies inside the raster bounds.
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> &T {
        &self.data[self.offset(x, y)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: u32, y: u32) -> &mut T {
        let i = self.offset(x, y);
        &mut self.data[i]
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// True when `other` has the same width and height.
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Clone> Grid<T> {
    /// Fills a new grid with copies of `value`.
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }
}

/// Binary pixel mask selecting the reconstruction domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: Grid<bool>,
}

impl Mask {
    pub fn new(grid: Grid<bool>) -> Self {
        Mask { grid }
    }

    pub fn from_fn(width: u32, height: u32, f: impl FnMut(u32, u32) -> bool) -> Self {
        Mask {
            grid: Grid::from_fn(width, height, f),
        }
    }

    /// Mask that covers the whole raster.
    pub fn full(width: u32, height: u32) -> Self {
        Mask {
            grid: Grid::filled(width, height, true),
        }
    }

    pub fn width(&self) -> u32 {
        self.grid.width()
    }

    pub fn height(&self) -> u32 {
        self.grid.height()
    }

    /// True when `(x, y)` is in bounds and masked in.
    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.grid.in_bounds(x, y) && *self.grid.at(x as u32, y as u32)
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.grid
    }

    /// Number of masked pixels.
    pub fn count(&self) -> usize {
        self.grid.data().iter().filter(|&&b| b).count()
    }

    /// True when some masked pixel has all four direct neighbors masked.
    pub fn has_interior_pixel(&self) -> bool {
        for y in 0..self.height() {
            for x in 0..self.width() {
                let (xi, yi) = (x as i64, y as i64);
                if self.contains(xi, yi)
                    && self.contains(xi - 1, yi)
                    && self.contains(xi + 1, yi)
                    && self.contains(xi, yi - 1)
                    && self.contains(xi, yi + 1)
                {
                    return true;
                }
            }
        }
        false
    }
}

/// Enumeration of the masked pixels in row-major order together with the
/// inverse pixel-to-index map. All solver vectors are aligned to this order.
#[derive(Clone, Debug)]
pub struct PixelSet {
    pixels: Vec<(u32, u32)>,
    index: Grid<u32>,
}

/// Sentinel for pixels outside the mask in [`PixelSet::index_of`].
const NO_INDEX: u32 = u32::MAX;

impl PixelSet {
    pub fn from_mask(mask: &Mask) -> Self {
        let mut pixels = Vec::with_capacity(mask.count());
        let mut index = Grid::filled(mask.width(), mask.height(), NO_INDEX);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.contains(x as i64, y as i64) {
                    *index.at_mut(x, y) = pixels.len() as u32;
                    pixels.push((x, y));
                }
            }
        }
        PixelSet { pixels, index }
    }

    /// Number of masked pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Pixel coordinates of masked index `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> (u32, u32) {
        self.pixels[i]
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    /// Masked index of `(x, y)`, or `None` outside the mask or the raster.
    #[inline]
    pub fn index_of(&self, x: i64, y: i64) -> Option<u32> {
        if !self.index.in_bounds(x, y) {
            return None;
        }
        match *self.index.at(x as u32, y as u32) {
            NO_INDEX => None,
            i => Some(i),
        }
    }

    /// Gathers the masked pixels of `depth` into a flat vector.
    ///
    /// Fails with [`Error::NonFiniteInput`] when a masked pixel holds NaN or
    /// infinity.
    pub fn gather(&self, depth: &Grid<f64>, what: &'static str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for &(x, y) in &self.pixels {
            let v = *depth.at(x, y);
            if !v.is_finite() {
                return Err(Error::NonFiniteInput(what));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Scatters a flat vector back into a raster, writing NaN outside the
    /// mask.
    pub fn scatter(&self, values: &[f64], width: u32, height: u32) -> Grid<f64> {
        assert_eq!(values.len(), self.len());
        let mut out = Grid::filled(width, height, f64::NAN);
        for (i, &(x, y)) in self.pixels.iter().enumerate() {
            *out.at_mut(x, y) = values[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip_and_bounds() {
        let g = Grid::from_fn(3, 2, |x, y| (10 * y + x) as f64);
        assert_eq!(g.width(), 3);
        assert_eq!(g.height(), 2);
        assert_eq!(*g.at(2, 1), 12.0);
        assert!(g.in_bounds(2, 1));
        assert!(!g.in_bounds(3, 0));
        assert!(!g.in_bounds(-1, 0));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::from_vec(2, 2, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn mask_count_and_interior() {
        let disk = Mask::from_fn(9, 9, |x, y| {
            let (dx, dy) = (x as f64 - 4.0, y as f64 - 4.0);
            dx * dx + dy * dy <= 9.0
        });
        assert!(disk.count() > 0);
        assert!(disk.has_interior_pixel());

        let line = Mask::from_fn(9, 1, |_, _| true);
        assert!(!line.has_interior_pixel());
    }

    #[test]
    fn pixel_set_indexing_is_row_major() {
        let mask = Mask::from_fn(3, 3, |x, y| x != 1 || y != 1);
        let px = PixelSet::from_mask(&mask);
        assert_eq!(px.len(), 8);
        assert_eq!(px.pixel(0), (0, 0));
        assert_eq!(px.index_of(1, 1), None);
        assert_eq!(px.index_of(2, 2), Some(7));
        assert_eq!(px.index_of(-1, 0), None);
    }

    #[test]
    fn gather_scatter_roundtrip() {
        let mask = Mask::from_fn(4, 3, |x, _| x < 3);
        let px = PixelSet::from_mask(&mask);
        let depth = Grid::from_fn(4, 3, |x, y| (x + 4 * y) as f64);
        let z = px.gather(&depth, "depth").unwrap();
        let back = px.scatter(&z, 4, 3);
        for y in 0..3 {
            for x in 0..4 {
                if mask.contains(x as i64, y as i64) {
                    assert_eq!(back.at(x, y), depth.at(x, y));
                } else {
                    assert!(back.at(x, y).is_nan());
                }
            }
        }
    }

    #[test]
    fn gather_rejects_nan_inside_mask() {
        let mask = Mask::full(2, 2);
        let px = PixelSet::from_mask(&mask);
        let mut depth = Grid::filled(2, 2, 1.0);
        *depth.at_mut(0, 1) = f64::NAN;
        assert!(matches!(
            px.gather(&depth, "depth"),
            Err(Error::NonFiniteInput("depth"))
        ));
    }
}
