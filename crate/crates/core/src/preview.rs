//! 8-bit PNG previews and side-by-side comparison panels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::max_normalized;

pub const MAX_PANEL_TILES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Gray,
    Hot,
}

/// Max-normalizes and quantizes to 8 bits; negative values clip to 0.
pub fn to_u8(a: &Array2<f64>) -> Array2<u8> {
    max_normalized(a).mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

fn hot(v: u8) -> [u8; 3] {
    let t = v as f64 / 255.0;
    let ch = |lo: f64| (((t - lo) * 3.0).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)]
}

/// Writes a preview PNG of `a`.
pub fn write_png(path: &Path, a: &Array2<f64>, cmap: Colormap) -> Result<()> {
    let q = to_u8(a);
    let (rows, cols) = q.dim();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    enc.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = match cmap {
        Colormap::Gray => {
            enc.set_color(png::ColorType::Grayscale);
            q.iter().copied().collect()
        }
        Colormap::Hot => {
            enc.set_color(png::ColorType::Rgb);
            q.iter().flat_map(|&v| hot(v)).collect()
        }
    };
    let mut w = enc.write_header()?;
    w.write_image_data(&data)?;
    w.finish()?;
    Ok(())
}

/// Tiles up to four images left to right, each max-normalized on its own.
/// Shorter tiles are padded with zeros at the bottom.
pub fn tile_panel(images: &[Array2<f64>]) -> Result<Array2<f64>> {
    if images.is_empty() || images.len() > MAX_PANEL_TILES {
        return Err(Error::Config(vec![format!(
            "a panel takes 1 to {MAX_PANEL_TILES} images, got {}",
            images.len()
        )]));
    }
    let rows = images.iter().map(|a| a.nrows()).max().unwrap_or(0);
    let cols: usize = images.iter().map(|a| a.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut c0 = 0;
    for a in images {
        let n = max_normalized(a).mapv(|v| v.max(0.0));
        out.slice_mut(s![..a.nrows(), c0..c0 + a.ncols()]).assign(&n);
        c0 += a.ncols();
    }
    Ok(out)
}
