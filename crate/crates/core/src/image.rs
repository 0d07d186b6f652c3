use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Square `N x N` image on `[-1, 1]^2`, row-major, row 0 at the top (`y` near 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    size: usize,
    pixels: Vec<f64>,
}

/// Enclosing cell of a point: top-left pixel `(r0, c0)` and the fractional
/// offsets along columns and rows.
#[derive(Clone, Copy)]
struct Cell {
    r0: isize,
    c0: isize,
    fu: f64,
    fv: f64,
}

impl ImageGrid {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn from_pixels(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "{} pixels for a {size}x{size} image",
                pixels.len()
            )));
        }
        Ok(Self { size, pixels })
    }

    /// Builds an image by evaluating `f` at every pixel center.
    pub fn from_fn(size: usize, f: impl Fn(Vec2) -> f64) -> Self {
        let mut img = Self::zeros(size);
        for r in 0..size {
            for c in 0..size {
                img.pixels[r * size + c] = f(img.pixel_center(r, c));
            }
        }
        img
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    pub fn pixel_spacing(&self) -> f64 {
        2.0 / self.size as f64
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        pixel_center(self.size, row, col)
    }

    /// All pixel centers in row-major order.
    pub fn pixel_centers(size: usize) -> Vec<Vec2> {
        (0..size * size)
            .map(|i| pixel_center(size, i / size, i % size))
            .collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Pixelwise `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &ImageGrid, b: f64) -> Result<ImageGrid> {
        if other.size != self.size {
            return Err(Error::Shape("image sizes differ".into()));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ImageGrid {
            size: self.size,
            pixels,
        })
    }

    #[inline]
    fn cell(&self, p: Vec2) -> Option<Cell> {
        let [x, y] = p;
        if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
            return None;
        }
        let half = self.size as f64 / 2.0;
        let u = (x + 1.0) * half - 0.5;
        let v = (1.0 - y) * half - 0.5;
        let (c0, r0) = (u.floor(), v.floor());
        Some(Cell {
            r0: r0 as isize,
            c0: c0 as isize,
            fu: u - c0,
            fv: v - r0,
        })
    }

    #[inline]
    fn index(&self, r: isize, c: isize) -> Option<usize> {
        let n = self.size as isize;
        (r >= 0 && c >= 0 && r < n && c < n).then(|| (r * n + c) as usize)
    }

    /// The four corners of a cell: pixel index (if inside the grid), weight,
    /// and the weight's derivatives with respect to `u` and `v`.
    #[inline]
    fn corners(&self, cell: Cell) -> [(Option<usize>, f64, f64, f64); 4] {
        let Cell { r0, c0, fu, fv } = cell;
        [
            (self.index(r0, c0), (1.0 - fu) * (1.0 - fv), -(1.0 - fv), -(1.0 - fu)),
            (self.index(r0, c0 + 1), fu * (1.0 - fv), 1.0 - fv, -fu),
            (self.index(r0 + 1, c0), (1.0 - fu) * fv, -fv, 1.0 - fu),
            (self.index(r0 + 1, c0 + 1), fu * fv, fv, fu),
        ]
    }

    /// Bilinear interpolation between pixel centers. Neighbors outside the
    /// grid read as 0 and every point outside the closed square is 0.
    #[inline]
    pub fn sample(&self, p: Vec2) -> f64 {
        let Some(cell) = self.cell(p) else {
            return 0.0;
        };
        let at = |i: Option<usize>| i.map_or(0.0, |i| self.pixels[i]);
        let Cell { r0, c0, fu, fv } = cell;
        (1.0 - fv) * ((1.0 - fu) * at(self.index(r0, c0)) + fu * at(self.index(r0, c0 + 1)))
            + fv * ((1.0 - fu) * at(self.index(r0 + 1, c0)) + fu * at(self.index(r0 + 1, c0 + 1)))
    }

    /// Value and spatial gradient of the bilinear interpolant.
    #[inline]
    pub fn sample_with_grad(&self, p: Vec2) -> (f64, Vec2) {
        let Some(cell) = self.cell(p) else {
            return (0.0, [0.0, 0.0]);
        };
        let half = self.size as f64 / 2.0;
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for (i, w, dwdu, dwdv) in self.corners(cell) {
            if let Some(i) = i {
                let px = self.pixels[i];
                v += w * px;
                g[0] += dwdu * px;
                g[1] += dwdv * px;
            }
        }
        // du/dx = N/2, dv/dy = -N/2
        (v, [g[0] * half, -g[1] * half])
    }

    /// Adds `g * dI/dpixels` at `p` into `grad` and returns `g * dI/dp`.
    #[inline]
    pub(crate) fn scatter_grad(&self, p: Vec2, g: f64, grad: &mut [f64]) -> Vec2 {
        let Some(cell) = self.cell(p) else {
            return [0.0, 0.0];
        };
        let half = self.size as f64 / 2.0;
        let mut cg = [0.0, 0.0];
        for (i, w, dwdu, dwdv) in self.corners(cell) {
            if let Some(i) = i {
                let px = self.pixels[i];
                grad[i] += g * w;
                cg[0] += dwdu * px;
                cg[1] += dwdv * px;
            }
        }
        [g * cg[0] * half, -g * cg[1] * half]
    }
}

#[inline]
pub fn pixel_center(size: usize, row: usize, col: usize) -> Vec2 {
    let d = 2.0 / size as f64;
    [-1.0 + (col as f64 + 0.5) * d, 1.0 - (row as f64 + 0.5) * d]
}
