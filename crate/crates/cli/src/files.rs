//! Tensor files with JSON sidecars, and TOML config loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Array3, Ix3};
use patk_core::acoustics::{Medium, ProbeConfig, RfData};
use patk_core::preview::{write_png, Colormap};
use patk_core::tensorio::{read_image, read_tensor, write_image};
use patk_core::{Grid, Image};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Metadata stored next to an image tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMeta {
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

/// Metadata stored next to an RF tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfMeta {
    pub fs: f64,
    pub t0: f64,
    pub probe: ProbeConfig,
    pub medium: Medium,
    /// Grid of the simulated object.
    pub source_grid: Grid,
    pub snr: Option<f64>,
    pub noise_seed: u64,
}

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Parses a TOML config, or returns the default when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `<dir>/<stem>.patk`, a PNG preview and, when the grid is known,
/// a JSON sidecar.
pub fn save_image(
    dir: &Path,
    stem: &str,
    pixels: &Array2<f64>,
    grid: Option<Grid>,
    kind: Option<String>,
    cmap: Colormap,
) -> Result<()> {
    let path = dir.join(format!("{stem}.patk"));
    write_image(&path, pixels)?;
    if let Some(grid) = grid {
        write_json(&sidecar(&path), &ImageMeta { grid, kind })?;
    }
    write_png(&dir.join(format!("{stem}.png")), pixels, cmap)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let pixels = read_image(path)?;
    let meta: ImageMeta = read_json(&sidecar(path))
        .with_context(|| format!("{} needs a grid sidecar", path.display()))?;
    Ok(Image::new(pixels, meta.grid)?)
}

pub fn load_pixels(path: &Path) -> Result<Array2<f64>> {
    Ok(read_image(path)?)
}

pub fn save_rf(dir: &Path, rf: &RfData, meta: &RfMeta) -> Result<()> {
    let path = dir.join("rf.patk");
    write_image(&path, &rf.samples)?;
    write_json(&sidecar(&path), meta)?;
    write_png(&dir.join("rf.png"), &rf.samples.mapv(f64::abs), Colormap::Gray)?;
    Ok(())
}

pub fn load_rf(path: &Path) -> Result<(RfData, RfMeta)> {
    let samples = read_image(path)?;
    let meta: RfMeta = read_json(&sidecar(path))
        .with_context(|| format!("{} needs an RF sidecar", path.display()))?;
    if samples.nrows() != meta.probe.n_elements {
        bail!(
            "{} has {} rows but the probe has {} elements",
            path.display(),
            samples.nrows(),
            meta.probe.n_elements
        );
    }
    Ok((
        RfData {
            samples,
            fs: meta.fs,
            t0: meta.t0,
        },
        meta,
    ))
}

pub fn load_stack(path: &Path) -> Result<Array3<f64>> {
    let t = read_tensor(path)?;
    let t = t
        .into_dimensionality::<Ix3>()
        .with_context(|| format!("{} is not a 3-D stack", path.display()))?;
    Ok(t.mapv(f64::from))
}
