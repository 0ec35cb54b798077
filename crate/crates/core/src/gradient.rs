//! Masked finite-difference gradient operator shared by the renderer and
//! the solvers, so that rendering and solving agree exactly on what the
//! discrete gradient of a depth map is.

use serde::{Deserialize, Serialize};

use crate::grid::PixelSet;

/// Discretization of the depth gradient on the masked grid.
///
/// Both schemes act only on masked pixels. No boundary condition is imposed:
/// a pixel that lacks the needed neighbor inside the mask simply falls back
/// to the other one-sided difference, or contributes a zero row when neither
/// neighbor is masked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientScheme {
    /// Forward difference, backward where the forward neighbor is unmasked.
    ForwardWithBackwardFallback,
    /// Mean of the forward and backward differences (each weighted 1/2,
    /// which is the central difference) where both neighbors are masked,
    /// one-sided where only one is.
    #[default]
    AveragedForwardBackward,
}

/// One sparse row of the gradient operator: at most two (column, weight)
/// entries.
#[derive(Clone, Copy, Debug, Default)]
struct StencilRow {
    cols: [u32; 2],
    weights: [f64; 2],
    len: u8,
}

impl StencilRow {
    fn empty() -> Self {
        StencilRow::default()
    }

    fn push(&mut self, col: u32, w: f64) {
        self.cols[self.len as usize] = col;
        self.weights[self.len as usize] = w;
        self.len += 1;
    }

    #[inline]
    fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        (0..self.len as usize).map(|k| (self.cols[k], self.weights[k]))
    }
}

/// Sparse discrete gradient operator `G` over the masked pixels.
///
/// `G` maps a masked depth vector of length `n` to `2n` gradient samples
/// laid out plane-major: rows `0..n` are the x-derivatives in masked pixel
/// order, rows `n..2n` the y-derivatives.
#[derive(Clone, Debug)]
pub struct GradientOperator {
    n: usize,
    rows: Vec<StencilRow>,
}

impl GradientOperator {
    pub fn build(pixels: &PixelSet, scheme: GradientScheme) -> Self {
        let n = pixels.len();
        let mut rows = vec![StencilRow::empty(); 2 * n];
        for (i, &(x, y)) in pixels.pixels().iter().enumerate() {
            let (xi, yi) = (x as i64, y as i64);
            rows[i] = Self::direction_row(pixels, scheme, i as u32, (xi + 1, yi), (xi - 1, yi));
            rows[n + i] =
                Self::direction_row(pixels, scheme, i as u32, (xi, yi + 1), (xi, yi - 1));
        }
        GradientOperator { n, rows }
    }

    fn direction_row(
        pixels: &PixelSet,
        scheme: GradientScheme,
        this: u32,
        fwd: (i64, i64),
        bwd: (i64, i64),
    ) -> StencilRow {
        let fwd = pixels.index_of(fwd.0, fwd.1);
        let bwd = pixels.index_of(bwd.0, bwd.1);
        let mut row = StencilRow::empty();
        match scheme {
            GradientScheme::ForwardWithBackwardFallback => {
                if let Some(f) = fwd {
                    row.push(f, 1.0);
                    row.push(this, -1.0);
                } else if let Some(b) = bwd {
                    row.push(this, 1.0);
                    row.push(b, -1.0);
                }
            }
            GradientScheme::AveragedForwardBackward => match (fwd, bwd) {
                (Some(f), Some(b)) => {
                    row.push(f, 0.5);
                    row.push(b, -0.5);
                }
                (Some(f), None) => {
                    row.push(f, 1.0);
                    row.push(this, -1.0);
                }
                (None, Some(b)) => {
                    row.push(this, 1.0);
                    row.push(b, -1.0);
                }
                (None, None) => {}
            },
        }
        row
    }

    /// Number of masked pixels `n`; the operator has `2n` rows.
    pub fn pixel_count(&self) -> usize {
        self.n
    }

    /// `out = G z`; `out` must have length `2n`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.n);
        debug_assert_eq!(out.len(), 2 * self.n);
        for (r, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (c, w) in row.entries() {
                acc += w * z[c as usize];
            }
            out[r] = acc;
        }
    }

    /// `out += Gᵀ v`; `v` has length `2n`, `out` length `n`.
    pub fn apply_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), 2 * self.n);
        debug_assert_eq!(out.len(), self.n);
        for (r, row) in self.rows.iter().enumerate() {
            let vr = v[r];
            if vr != 0.0 {
                for (c, w) in row.entries() {
                    out[c as usize] += w * vr;
                }
            }
        }
    }

    /// Gradient pair `(zx, zy)` of masked pixel `i`.
    pub fn gradient_at(&self, z: &[f64], i: usize) -> (f64, f64) {
        let mut g = [0.0; 2];
        for (k, row) in [&self.rows[i], &self.rows[self.n + i]].iter().enumerate() {
            for (c, w) in row.entries() {
                g[k] += w * z[c as usize];
            }
        }
        (g[0], g[1])
    }

    /// True when pixel `i` has a nonempty row in at least one direction.
    pub fn has_any_row(&self, i: usize) -> bool {
        self.rows[i].len > 0 || self.rows[self.n + i].len > 0
    }

    /// Entries of row `r` as (column, weight) pairs.
    pub(crate) fn row_entries(&self, r: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.rows[r].entries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mask;
    use proptest::prelude::*;

    fn build(w: u32, h: u32, scheme: GradientScheme) -> (PixelSet, GradientOperator) {
        let mask = Mask::full(w, h);
        let px = PixelSet::from_mask(&mask);
        let g = GradientOperator::build(&px, scheme);
        (px, g)
    }

    #[test]
    fn averaged_is_central_in_the_interior() {
        let (px, g) = build(5, 1, GradientScheme::AveragedForwardBackward);
        let z: Vec<f64> = (0..5).map(|i| (i as f64).powi(2)).collect();
        // Central difference of x^2 at x=2 is ((9-1)/2) = 4.
        let i = px.index_of(2, 0).unwrap() as usize;
        assert_eq!(g.gradient_at(&z, i).0, 4.0);
    }

    #[test]
    fn averaged_falls_back_to_one_sided_at_the_border() {
        let (px, g) = build(3, 1, GradientScheme::AveragedForwardBackward);
        let z = vec![1.0, 4.0, 9.0];
        let left = px.index_of(0, 0).unwrap() as usize;
        let right = px.index_of(2, 0).unwrap() as usize;
        assert_eq!(g.gradient_at(&z, left).0, 3.0);
        assert_eq!(g.gradient_at(&z, right).0, 5.0);
    }

    #[test]
    fn forward_scheme_prefers_forward() {
        let (px, g) = build(3, 1, GradientScheme::ForwardWithBackwardFallback);
        let z = vec![1.0, 4.0, 9.0];
        assert_eq!(g.gradient_at(&z, px.index_of(0, 0).unwrap() as usize).0, 3.0);
        assert_eq!(g.gradient_at(&z, px.index_of(1, 0).unwrap() as usize).0, 5.0);
        // Last pixel has no forward neighbor: backward fallback.
        assert_eq!(g.gradient_at(&z, px.index_of(2, 0).unwrap() as usize).0, 5.0);
    }

    #[test]
    fn isolated_pixel_contributes_zero_rows() {
        let mask = Mask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        let px = PixelSet::from_mask(&mask);
        for scheme in [
            GradientScheme::ForwardWithBackwardFallback,
            GradientScheme::AveragedForwardBackward,
        ] {
            let g = GradientOperator::build(&px, scheme);
            assert!(!g.has_any_row(0));
            assert_eq!(g.gradient_at(&[7.0], 0), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_depth_has_zero_gradient() {
        for scheme in [
            GradientScheme::ForwardWithBackwardFallback,
            GradientScheme::AveragedForwardBackward,
        ] {
            let (_, g) = build(4, 4, scheme);
            let z = vec![3.25; 16];
            let mut out = vec![f64::NAN; 32];
            g.apply(&z, &mut out);
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    proptest! {
        #[test]
        fn transpose_is_the_adjoint(
            seed_z in proptest::collection::vec(-10.0f64..10.0, 12),
            seed_v in proptest::collection::vec(-10.0f64..10.0, 24),
            scheme_avg in proptest::bool::ANY,
        ) {
            let scheme = if scheme_avg {
                GradientScheme::AveragedForwardBackward
            } else {
                GradientScheme::ForwardWithBackwardFallback
            };
            // 4x3 grid with one pixel masked out.
            let mask = Mask::from_fn(4, 3, |x, y| !(x == 2 && y == 1));
            let px = PixelSet::from_mask(&mask);
            let g = GradientOperator::build(&px, scheme);
            let n = px.len();
            let z = &seed_z[..n];
            let v = &seed_v[..2 * n];

            let mut gz = vec![0.0; 2 * n];
            g.apply(z, &mut gz);
            let lhs: f64 = gz.iter().zip(v).map(|(a, b)| a * b).sum();

            let mut gtv = vec![0.0; n];
            g.apply_transpose_add(v, &mut gtv);
            let rhs: f64 = gtv.iter().zip(z).map(|(a, b)| a * b).sum();

            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
        }
    }
}
