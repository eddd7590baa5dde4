//! Delay-and-sum reconstruction.
//!
//! DAS on the real RF record gives the modulated image (mBF); DAS on the
//! analytic signal followed by the modulus gives the demodulated, envelope
//! image (dmBF).

use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acoustics::{path, Medium, ProbeConfig, RfData};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BeamformKind {
    /// Signed DAS of the real RF signals.
    #[default]
    Mbf,
    /// Modulus of DAS of the analytic signals.
    Dmbf,
}

impl fmt::Display for BeamformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeamformKind::Mbf => "mbf",
            BeamformKind::Dmbf => "dmbf",
        })
    }
}

impl FromStr for BeamformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mbf" => Ok(BeamformKind::Mbf),
            "dmbf" => Ok(BeamformKind::Dmbf),
            other => Err(Error::Config(vec![format!("unknown beamform kind {other:?}")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedImage {
    pub image: Image,
    pub kind: BeamformKind,
}

/// Complex analytic RF record.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRf {
    pub samples: Array2<Complex64>,
    pub fs: f64,
    pub t0: f64,
}

/// Per-element analytic signal by the frequency-domain method: negative
/// frequencies zeroed, positive ones doubled, DC and Nyquist kept.
pub fn analytic_signal(rf: &RfData) -> Result<AnalyticRf> {
    let (n_el, n) = rf.samples.dim();
    if n < 2 {
        return Err(Error::Config(vec![format!("need at least 2 samples, got {n}")]));
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = Array2::<Complex64>::zeros((n_el, n));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for (src, mut dst) in rf.samples.rows().into_iter().zip(out.rows_mut()) {
        for (b, &v) in buf.iter_mut().zip(src.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        fwd.process(&mut buf);
        // odd n: bins 1..=half positive; even n: 1..half positive, half is Nyquist
        let pos_end = if n % 2 == 0 { half } else { half + 1 };
        for b in &mut buf[1..pos_end] {
            *b *= 2.0;
        }
        for b in &mut buf[half + 1..] {
            *b = Complex64::new(0.0, 0.0);
        }
        inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b * scale;
        }
    }
    Ok(AnalyticRf {
        samples: out,
        fs: rf.fs,
        t0: rf.t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DasOptions {
    /// Treat samples outside the record as zero instead of failing.
    pub zero_fill: bool,
}

fn das_sum<T>(
    samples: &Array2<T>,
    fs: f64,
    t0: f64,
    grid: &Grid,
    probe: &ProbeConfig,
    medium: &Medium,
    opts: DasOptions,
) -> Result<Vec<T>>
where
    T: Copy + Send + Sync + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    grid.validate()?;
    probe.validate()?;
    medium.validate()?;
    let (n_el, ns) = samples.dim();
    if n_el != probe.n_elements {
        return Err(Error::GridMismatch(format!(
            "RF has {n_el} elements, probe has {}",
            probe.n_elements
        )));
    }
    let data = samples.as_standard_layout();
    let data = data.as_slice().expect("standard layout");
    let last = (ns - 1) as f64;
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let (x, z) = grid.position(p);
            if z <= 0.0 {
                return Err(Error::BehindProbe { x, z });
            }
            let mut acc = T::default();
            for i in 0..n_el {
                let Some((tof, _)) = path(x, z, probe.element_x(i), medium) else {
                    continue;
                };
                let pos = (tof - t0) * fs;
                if !(0.0..=last).contains(&pos) {
                    if opts.zero_fill {
                        continue;
                    }
                    return Err(Error::OutsideRecord { pixel: p, tof });
                }
                let k = pos.floor() as usize;
                let f = pos - k as f64;
                let row = &data[i * ns..(i + 1) * ns];
                let mut v = row[k] * (1.0 - f);
                if f > 0.0 {
                    v = v + row[k + 1] * f;
                }
                acc = acc + v;
            }
            Ok(acc)
        })
        .collect()
}

/// Modulated (signed) DAS image.
pub fn das_real(
    rf: &RfData,
    grid: &Grid,
    probe: &ProbeConfig,
    medium: &Medium,
    opts: DasOptions,
) -> Result<Array2<f64>> {
    let v = das_sum(&rf.samples, rf.fs, rf.t0, grid, probe, medium, opts)?;
    Ok(Array2::from_shape_vec(grid.shape(), v).expect("grid shape"))
}

/// Demodulated DAS image: modulus after summation.
pub fn das_complex(
    rf: &AnalyticRf,
    grid: &Grid,
    probe: &ProbeConfig,
    medium: &Medium,
    opts: DasOptions,
) -> Result<Array2<f64>> {
    let v = das_sum(&rf.samples, rf.fs, rf.t0, grid, probe, medium, opts)?;
    Ok(Array2::from_shape_vec(grid.shape(), v.iter().map(|c| c.norm()).collect()).expect("grid shape"))
}

pub fn das(
    rf: &RfData,
    grid: &Grid,
    probe: &ProbeConfig,
    medium: &Medium,
    kind: BeamformKind,
    opts: DasOptions,
) -> Result<BeamformedImage> {
    let pixels = match kind {
        BeamformKind::Mbf => das_real(rf, grid, probe, medium, opts)?,
        BeamformKind::Dmbf => das_complex(&analytic_signal(rf)?, grid, probe, medium, opts)?,
    };
    Ok(BeamformedImage {
        image: Image::new(pixels, *grid)?,
        kind,
    })
}
