//! Pixel grids in probe coordinates and images living on them.
//!
//! The probe face lies on `z = 0` with `x` along the array. Row index runs
//! with depth (`z`), column index with lateral position (`x`).

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    /// Metres per pixel, identical along both axes.
    pub pitch: f64,
    /// Lateral position of pixel (0, 0), metres.
    pub origin_x: f64,
    /// Depth of pixel (0, 0), metres.
    pub origin_z: f64,
}

impl Grid {
    /// A `rows x cols` grid whose geometric centre sits at `(center_x, center_z)`.
    pub fn centered(rows: usize, cols: usize, pitch: f64, center_x: f64, center_z: f64) -> Self {
        Grid {
            rows,
            cols,
            pitch,
            origin_x: center_x - 0.5 * (cols as f64 - 1.0) * pitch,
            origin_z: center_z - 0.5 * (rows as f64 - 1.0) * pitch,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn x(&self, col: usize) -> f64 {
        self.origin_x + col as f64 * self.pitch
    }

    #[inline]
    pub fn z(&self, row: usize) -> f64 {
        self.origin_z + row as f64 * self.pitch
    }

    /// Position of the pixel with row-major linear index `idx`.
    #[inline]
    pub fn position(&self, idx: usize) -> (f64, f64) {
        (self.x(idx % self.cols), self.z(idx / self.cols))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.rows == 0 || self.cols == 0 {
            errs.push(format!("grid must be non-empty, got {}x{}", self.rows, self.cols));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            errs.push(format!("grid pitch must be positive, got {}", self.pitch));
        }
        if !self.origin_x.is_finite() || !self.origin_z.is_finite() {
            errs.push("grid origin must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Central `rows x cols` sub-grid, aligned on this grid's pixels.
    /// Returns the sub-grid with its (row, col) offset.
    pub fn centered_crop(&self, rows: usize, cols: usize) -> Result<(Grid, usize, usize)> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::GridMismatch(format!(
                "crop {rows}x{cols} larger than grid {}x{}",
                self.rows, self.cols
            )));
        }
        let r0 = (self.rows - rows) / 2;
        let c0 = (self.cols - cols) / 2;
        let sub = Grid {
            rows,
            cols,
            pitch: self.pitch,
            origin_x: self.x(c0),
            origin_z: self.z(r0),
        };
        Ok((sub, r0, c0))
    }

    /// True when both grids describe the same pixel positions (to 1e-9 of a pixel).
    pub fn same_as(&self, other: &Grid) -> bool {
        let tol = 1e-9 * self.pitch;
        self.rows == other.rows
            && self.cols == other.cols
            && (self.pitch - other.pitch).abs() <= tol
            && (self.origin_x - other.origin_x).abs() <= tol
            && (self.origin_z - other.origin_z).abs() <= tol
    }
}

/// Real-valued image on a [`Grid`]. Ground-truth objects use this type directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Array2<f64>,
    pub grid: Grid,
}

pub type GroundTruthImage = Image;

impl Image {
    pub fn zeros(grid: Grid) -> Self {
        Image {
            pixels: Array2::zeros(grid.shape()),
            grid,
        }
    }

    pub fn new(pixels: Array2<f64>, grid: Grid) -> Result<Self> {
        if pixels.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(
                pixels.shape().to_vec(),
                vec![grid.rows, grid.cols],
            ));
        }
        Ok(Image { pixels, grid })
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of the pixels inside `sub`, which must be aligned on this grid.
    pub fn crop_to(&self, sub: &Grid) -> Result<Image> {
        let c0 = ((sub.origin_x - self.grid.origin_x) / self.grid.pitch).round();
        let r0 = ((sub.origin_z - self.grid.origin_z) / self.grid.pitch).round();
        let aligned = Grid {
            origin_x: self.grid.x(c0.max(0.0) as usize),
            origin_z: self.grid.z(r0.max(0.0) as usize),
            ..*sub
        };
        if c0 < 0.0
            || r0 < 0.0
            || r0 as usize + sub.rows > self.grid.rows
            || c0 as usize + sub.cols > self.grid.cols
            || !aligned.same_as(sub)
        {
            return Err(Error::GridMismatch(
                "crop window is not an aligned sub-grid".into(),
            ));
        }
        let (r0, c0) = (r0 as usize, c0 as usize);
        Ok(Image {
            pixels: self
                .pixels
                .slice(s![r0..r0 + sub.rows, c0..c0 + sub.cols])
                .to_owned(),
            grid: *sub,
        })
    }
}

/// Scale so the largest magnitude is 1. All-zero input is returned unchanged.
pub fn max_normalized(a: &Array2<f64>) -> Array2<f64> {
    let m = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        a / m
    } else {
        a.clone()
    }
}
