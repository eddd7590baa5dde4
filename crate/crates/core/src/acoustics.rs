//! Linear-array forward model.
//!
//! Each object pixel emits the system impulse response `h`, delayed by its
//! time of flight to every element and weighted by geometric spreading and a
//! cosine directivity. The resulting propagation operator is stored in
//! factored form (per pixel/element delay and weight plus one shared
//! waveform) and applied matrix-free. Sub-sample delays are handled by linear
//! interpolation, and the adjoint uses exactly the transposed weights.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GroundTruthImage, Grid, Image};
use crate::operator::LinearOperator;

/// Elements see nothing beyond this angle from their normal.
pub const ACCEPTANCE_ANGLE: f64 = 75.0 * PI / 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub n_elements: usize,
    /// Element spacing, metres.
    pub pitch: f64,
    /// Centre frequency, Hz.
    pub f_center: f64,
    /// -6 dB bandwidth divided by the centre frequency.
    pub fractional_bandwidth: f64,
    /// Sampling rate, Hz.
    pub fs: f64,
    pub n_samples: usize,
    /// Time of the first sample, seconds.
    pub t0: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_elements: 128,
            pitch: 1e-4,
            f_center: 15.6e6,
            fractional_bandwidth: 0.6,
            fs: 62.5e6,
            n_samples: 1024,
            t0: 0.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_elements < 2 {
            errs.push(format!("n_elements must be >= 2, got {}", self.n_elements));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            errs.push(format!("pitch must be positive, got {}", self.pitch));
        }
        if !(self.f_center > 0.0 && self.f_center.is_finite()) {
            errs.push(format!("f_center must be positive, got {}", self.f_center));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth.is_finite()) {
            errs.push(format!(
                "fractional_bandwidth must be positive, got {}",
                self.fractional_bandwidth
            ));
        }
        if !(self.fs > 2.0 * self.f_center * (1.0 + self.fractional_bandwidth)) {
            errs.push(format!(
                "fs {} Hz does not exceed 2 f_center (1 + bandwidth)",
                self.fs
            ));
        }
        if self.n_samples < 2 {
            errs.push(format!("n_samples must be >= 2, got {}", self.n_samples));
        }
        if !self.t0.is_finite() {
            errs.push("t0 must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Lateral position of element `i`; elements sit on `z = 0`.
    #[inline]
    pub fn element_x(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.n_elements as f64 - 1.0)) * self.pitch
    }

    /// Number of samples needed so every echo from `grid`, including the
    /// impulse-response tail, lands inside the record.
    pub fn samples_to_cover(&self, grid: &Grid, medium: &Medium) -> usize {
        let half = impulse_half_support(self);
        let mut max_r: f64 = 0.0;
        let x_lo = self.element_x(0);
        let x_hi = self.element_x(self.n_elements - 1);
        for (x, z) in [
            (grid.x(0), grid.z(grid.rows - 1)),
            (grid.x(grid.cols - 1), grid.z(grid.rows - 1)),
        ] {
            for ex in [x_lo, x_hi] {
                max_r = max_r.max((x - ex).hypot(z));
            }
        }
        ((max_r / medium.sound_speed - self.t0) * self.fs).ceil() as usize + half + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Medium {
    /// m/s.
    pub sound_speed: f64,
    /// Amplitude falls as `r^-spreading_exponent`.
    pub spreading_exponent: f64,
}

impl Default for Medium {
    fn default() -> Self {
        Medium {
            sound_speed: 1500.0,
            spreading_exponent: 1.0,
        }
    }
}

impl Medium {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.sound_speed > 0.0 && self.sound_speed.is_finite()) {
            errs.push(format!("sound_speed must be positive, got {}", self.sound_speed));
        }
        if !(self.spreading_exponent >= 0.0 && self.spreading_exponent.is_finite()) {
            errs.push("spreading_exponent must be >= 0".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Element x time-sample record.
#[derive(Debug, Clone, PartialEq)]
pub struct RfData {
    /// `n_elements x n_samples`.
    pub samples: Array2<f64>,
    pub fs: f64,
    pub t0: f64,
}

/// Sampling metadata stored next to an RF tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfMeta {
    pub fs: f64,
    pub t0: f64,
}

impl RfData {
    pub fn n_elements(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn meta(&self) -> RfMeta {
        RfMeta {
            fs: self.fs,
            t0: self.t0,
        }
    }
}

/// Sampled impulse response; sample `k` sits at time `(k - center) / fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub center: usize,
}

impl Waveform {
    pub fn time(&self, k: usize) -> f64 {
        (k as f64 - self.center as f64) / self.fs
    }
}

/// Gaussian envelope width giving a -6 dB (half amplitude) spectral width of
/// `fractional_bandwidth * f_center`.
pub fn envelope_sigma(probe: &ProbeConfig) -> f64 {
    (2.0 * 2f64.ln()).sqrt() / (PI * probe.fractional_bandwidth * probe.f_center)
}

fn impulse_half_support(probe: &ProbeConfig) -> usize {
    (4.0 * envelope_sigma(probe) * probe.fs).ceil() as usize
}

/// `h(t) = exp(-t^2 / 2 sigma^2) sin(2 pi f_c t)` on `|t| <= 4 sigma`, peak magnitude 1.
pub fn impulse_response(probe: &ProbeConfig) -> Result<Waveform> {
    probe.validate()?;
    let sigma = envelope_sigma(probe);
    let half = impulse_half_support(probe);
    let mut samples: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let t = (k as f64 - half as f64) / probe.fs;
            (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * probe.f_center * t).sin()
        })
        .collect();
    let peak = samples.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    for v in &mut samples {
        *v /= peak;
    }
    Ok(Waveform {
        samples,
        fs: probe.fs,
        center: half,
    })
}

/// Per (element, pixel) delay and weight, element-major.
#[derive(Debug)]
struct Geometry {
    /// Arrival time in samples relative to `t0`.
    delay: Vec<f32>,
    weight: Vec<f32>,
}

/// Matrix-free propagation operator `A` mapping an object on `grid` to RF data.
///
/// The RF vector is element-major (`n_elements x n_samples`, row-major).
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    grid: Grid,
    probe: ProbeConfig,
    medium: Medium,
    waveform: Waveform,
    geometry: Arc<Geometry>,
}

/// Time of flight, spreading and directivity between a pixel and an element.
/// Returns `None` outside the acceptance cone.
#[inline]
pub(crate) fn path(px: f64, pz: f64, ex: f64, medium: &Medium) -> Option<(f64, f64)> {
    let r = (px - ex).hypot(pz);
    let cos = pz / r;
    if cos < ACCEPTANCE_ANGLE.cos() {
        return None;
    }
    Some((r / medium.sound_speed, cos / r.powf(medium.spreading_exponent)))
}

pub fn build_operator(grid: &Grid, probe: &ProbeConfig, medium: &Medium) -> Result<PropagationOperator> {
    grid.validate()?;
    probe.validate()?;
    medium.validate()?;
    if grid.z(0) <= 0.0 || grid.z(grid.rows - 1) <= 0.0 {
        return Err(Error::BehindProbe {
            x: grid.x(0),
            z: grid.z(0).min(grid.z(grid.rows - 1)),
        });
    }
    let waveform = impulse_response(probe)?;
    let npix = grid.len();
    let n_el = probe.n_elements;
    let mut delay = vec![0f32; npix * n_el];
    let mut weight = vec![0f32; npix * n_el];
    delay
        .par_chunks_mut(npix)
        .zip(weight.par_chunks_mut(npix))
        .enumerate()
        .for_each(|(i, (d_row, w_row))| {
            let ex = probe.element_x(i);
            for p in 0..npix {
                let (x, z) = grid.position(p);
                if let Some((tof, w)) = path(x, z, ex, medium) {
                    d_row[p] = ((tof - probe.t0) * probe.fs) as f32;
                    w_row[p] = w as f32;
                }
            }
        });
    Ok(PropagationOperator {
        grid: *grid,
        probe: probe.clone(),
        medium: medium.clone(),
        waveform,
        geometry: Arc::new(Geometry { delay, weight }),
    })
}

impl PropagationOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn probe(&self) -> &ProbeConfig {
        &self.probe
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    /// Same geometry, different impulse response (e.g. a jittered probe).
    pub fn with_waveform(&self, waveform: Waveform) -> Result<PropagationOperator> {
        if waveform.fs != self.probe.fs {
            return Err(Error::Config(vec![format!(
                "waveform sampled at {} Hz, operator at {} Hz",
                waveform.fs, self.probe.fs
            )]));
        }
        Ok(PropagationOperator {
            waveform,
            ..self.clone()
        })
    }

    /// Record `A x` as RF data.
    pub fn apply_image(&self, x: &Array2<f64>) -> Result<RfData> {
        if x.dim() != self.grid.shape() {
            return Err(Error::ShapeMismatch(
                x.shape().to_vec(),
                vec![self.grid.rows, self.grid.cols],
            ));
        }
        let flat: Vec<f64> = x.iter().copied().collect();
        let out = self.apply_vec(&flat);
        Ok(RfData {
            samples: Array2::from_shape_vec((self.probe.n_elements, self.probe.n_samples), out)
                .expect("range length"),
            fs: self.probe.fs,
            t0: self.probe.t0,
        })
    }

    /// `A^T y` as an image on the operator grid.
    pub fn adjoint_image(&self, rf: &RfData) -> Result<Image> {
        self.check_rf(rf)?;
        let flat: Vec<f64> = rf.samples.iter().copied().collect();
        let out = self.adjoint_vec(&flat);
        Image::new(Array2::from_shape_vec(self.grid.shape(), out).expect("domain"), self.grid)
    }

    pub fn check_rf(&self, rf: &RfData) -> Result<()> {
        if rf.samples.dim() != (self.probe.n_elements, self.probe.n_samples)
            || rf.fs != self.probe.fs
            || rf.t0 != self.probe.t0
        {
            return Err(Error::GridMismatch(format!(
                "RF record {:?} at fs {} t0 {} does not match operator ({}, {}) at fs {} t0 {}",
                rf.samples.dim(),
                rf.fs,
                rf.t0,
                self.probe.n_elements,
                self.probe.n_samples,
                self.probe.fs,
                self.probe.t0
            )));
        }
        Ok(())
    }
}

impl LinearOperator for PropagationOperator {
    fn domain_len(&self) -> usize {
        self.grid.len()
    }

    fn range_len(&self) -> usize {
        self.probe.n_elements * self.probe.n_samples
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let npix = self.grid.len();
        let ns = self.probe.n_samples as isize;
        let h = &self.waveform.samples;
        let center = self.waveform.center as isize;
        let geo = &*self.geometry;
        // one output row per element: race-free and independent of thread count
        out.par_chunks_mut(self.probe.n_samples)
            .enumerate()
            .for_each(|(i, row)| {
                row.fill(0.0);
                let delays = &geo.delay[i * npix..(i + 1) * npix];
                let weights = &geo.weight[i * npix..(i + 1) * npix];
                for p in 0..npix {
                    let w = weights[p];
                    if x[p] == 0.0 || w == 0.0 {
                        continue;
                    }
                    let a = x[p] * w as f64;
                    let pos = delays[p] as f64;
                    let base = pos.floor();
                    let frac = pos - base;
                    let start = base as isize - center;
                    for (k, &hk) in h.iter().enumerate() {
                        let n = start + k as isize;
                        if n >= 0 && n < ns {
                            row[n as usize] += a * (1.0 - frac) * hk;
                        }
                        if n + 1 >= 0 && n + 1 < ns {
                            row[(n + 1) as usize] += a * frac * hk;
                        }
                    }
                }
            });
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let npix = self.grid.len();
        let n_el = self.probe.n_elements;
        let ns = self.probe.n_samples;
        let h = &self.waveform.samples;
        let center = self.waveform.center as isize;
        let geo = &*self.geometry;
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let mut acc = 0.0;
            for i in 0..n_el {
                let w = geo.weight[i * npix + p];
                if w == 0.0 {
                    continue;
                }
                let row = &y[i * ns..(i + 1) * ns];
                let pos = geo.delay[i * npix + p] as f64;
                let base = pos.floor();
                let frac = pos - base;
                let start = base as isize - center;
                let mut s = 0.0;
                for (k, &hk) in h.iter().enumerate() {
                    let n = start + k as isize;
                    let lo = if n >= 0 && (n as usize) < ns { row[n as usize] } else { 0.0 };
                    let hi = if n + 1 >= 0 && ((n + 1) as usize) < ns {
                        row[(n + 1) as usize]
                    } else {
                        0.0
                    };
                    s += hk * ((1.0 - frac) * lo + frac * hi);
                }
                acc += w as f64 * s;
            }
            *o = acc;
        });
    }
}

/// RF record of `obj` through `op` (noise-free).
pub fn synthesize_rf(obj: &GroundTruthImage, op: &PropagationOperator) -> Result<RfData> {
    if !obj.grid.same_as(op.grid()) {
        return Err(Error::GridMismatch(format!(
            "object grid {:?} differs from operator grid {:?}",
            obj.grid,
            op.grid()
        )));
    }
    op.apply_image(&obj.pixels)
}

/// Adds i.i.d. Gaussian noise with standard deviation `max|rf| / snr`.
pub fn add_noise(rf: &RfData, snr: f64, seed: u64) -> Result<RfData> {
    if !(snr > 0.0) {
        return Err(Error::Config(vec![format!("snr must be positive, got {snr}")]));
    }
    let std = rf.max_abs() / snr;
    let mut out = rf.clone();
    if std == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.samples.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += std * e;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::dot;
    use rand::Rng;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn spectrum(h: &[f64], n: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(h.get(k).copied().unwrap_or(0.0), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf[..n / 2].iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn impulse_peak_at_center_frequency() {
        let probe = ProbeConfig::default();
        let h = impulse_response(&probe).unwrap();
        let n = h.samples.len();
        let mag = spectrum(&h.samples, n);
        let peak = mag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let df = probe.fs / n as f64;
        let nearest = (probe.f_center / df).round() as usize;
        assert_eq!(peak, nearest);
    }

    #[test]
    fn impulse_is_odd_with_unit_peak() {
        let h = impulse_response(&ProbeConfig::default()).unwrap();
        let c = h.center;
        assert_eq!(h.samples[c], 0.0);
        for k in 1..=c {
            assert_eq!(h.samples[c + k], -h.samples[c - k]);
        }
        let peak = h.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn six_db_bandwidth_matches_config() {
        for fb in [0.4, 0.6, 0.8] {
            let probe = ProbeConfig {
                fractional_bandwidth: fb,
                fs: 125e6,
                ..Default::default()
            };
            let h = impulse_response(&probe).unwrap();
            let n = 1 << 15;
            let mag = spectrum(&h.samples, n);
            let (kmax, &peak) = mag
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let half = 0.5 * peak;
            let mut lo = kmax;
            while mag[lo] > half {
                lo -= 1;
            }
            let mut hi = kmax;
            while mag[hi] > half {
                hi += 1;
            }
            let bw = (hi - lo) as f64 * probe.fs / n as f64;
            let measured = bw / probe.f_center;
            assert!((measured / fb - 1.0).abs() < 0.05, "fb {fb}: measured {measured}");
        }
    }

    fn point_probe(n_elements: usize) -> ProbeConfig {
        ProbeConfig {
            n_elements,
            n_samples: 700,
            ..Default::default()
        }
    }

    #[test]
    fn single_pixel_arrives_at_time_of_flight() {
        let probe = point_probe(17);
        let medium = Medium::default();
        let grid = Grid::centered(1, 1, 4e-5, 0.0, 0.01);
        let op = build_operator(&grid, &probe, &medium).unwrap();
        let rf = op.apply_image(&Array2::ones((1, 1))).unwrap();
        let tof: f64 = 0.01 / 1500.0;
        assert!((tof - 6.6667e-6).abs() < 1e-9);
        let trace = rf.samples.row(8);
        // oracle: linearly interpolated waveform evaluated at t_n - tof, weighted 1/r
        let h = impulse_response(&probe).unwrap();
        let w = 1.0 / 0.01;
        let interp = |u: f64| -> f64 {
            let k = u.floor();
            let f = u - k;
            let at = |k: f64| -> f64 {
                if k < 0.0 || k as usize >= h.samples.len() {
                    0.0
                } else {
                    h.samples[k as usize]
                }
            };
            (1.0 - f) * at(k) + f * at(k + 1.0)
        };
        let d = tof * probe.fs;
        let mut energy_t = 0.0;
        let mut energy = 0.0;
        for n in 0..probe.n_samples {
            let expected = w * interp(n as f64 - d + h.center as f64);
            let got = trace[n];
            assert!((got - expected).abs() <= 1e-4 * w, "n {n}: {got} vs {expected}");
            energy_t += n as f64 / probe.fs * got * got;
            energy += got * got;
        }
        assert!((energy_t / energy - tof).abs() < 0.5 / probe.fs);
    }

    #[test]
    fn zero_object_gives_zero_rf() {
        let probe = point_probe(16);
        let grid = Grid::centered(8, 8, 1e-4, 0.0, 0.01);
        let op = build_operator(&grid, &probe, &Medium::default()).unwrap();
        let rf = op.apply_image(&Array2::zeros((8, 8))).unwrap();
        assert!(rf.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_behind_probe_rejected() {
        let grid = Grid::centered(8, 8, 1e-4, 0.0, 0.0);
        let err = build_operator(&grid, &point_probe(16), &Medium::default()).unwrap_err();
        assert!(matches!(err, Error::BehindProbe { .. }));
    }

    #[test]
    fn invalid_probe_lists_all_fields() {
        let probe = ProbeConfig {
            n_elements: 1,
            pitch: -1.0,
            fs: 1e6,
            ..Default::default()
        };
        match probe.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adjoint_dot_product() {
        let probe = ProbeConfig {
            n_elements: 16,
            n_samples: 512,
            ..Default::default()
        };
        let grid = Grid::centered(32, 32, 5e-5, 0.0, 6e-3);
        let op = build_operator(&grid, &probe, &Medium::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x: Vec<f64> = (0..op.domain_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..op.range_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&op.apply_vec(&x), &y);
            let rhs = dot(&x, &op.adjoint_vec(&y));
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn synthesize_is_linear_and_superposes() {
        let probe = point_probe(16);
        let grid = Grid::centered(16, 16, 1e-4, 0.0, 0.01);
        let op = build_operator(&grid, &probe, &Medium::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((16, 16), |_| rng.random::<f64>());
        let y = Array2::from_shape_fn((16, 16), |_| rng.random::<f64>());
        let (a, b) = (1.7, -0.4);
        let lhs = op.apply_image(&(a * &x + b * &y)).unwrap().samples;
        let rhs = a * &op.apply_image(&x).unwrap().samples + b * &op.apply_image(&y).unwrap().samples;
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(lhs.iter().zip(rhs.iter()).all(|(p, q)| (p - q).abs() <= 1e-5 * scale));

        let mut one = Array2::zeros((16, 16));
        one[[3, 4]] = 1.0;
        let mut two = Array2::zeros((16, 16));
        two[[10, 12]] = 1.0;
        let sum = op.apply_image(&(&one + &two)).unwrap().samples;
        let parts = op.apply_image(&one).unwrap().samples + op.apply_image(&two).unwrap().samples;
        assert!(sum.iter().zip(parts.iter()).all(|(p, q)| (p - q).abs() <= 1e-9 * scale));

        // scaling by a scales RF by exactly a (power of two avoids rounding)
        let doubled = op.apply_image(&(2.0 * &x)).unwrap().samples;
        assert_eq!(doubled, 2.0 * &op.apply_image(&x).unwrap().samples);
    }

    #[test]
    fn synthesize_rejects_grid_mismatch() {
        let grid = Grid::centered(8, 8, 1e-4, 0.0, 0.01);
        let op = build_operator(&grid, &point_probe(16), &Medium::default()).unwrap();
        let other = Image::zeros(Grid::centered(8, 8, 1e-4, 1e-3, 0.01));
        assert!(matches!(synthesize_rf(&other, &op), Err(Error::GridMismatch(_))));
    }

    fn arrival(trace: ndarray::ArrayView1<f64>, fs: f64) -> f64 {
        let (mut et, mut e) = (0.0, 0.0);
        for (n, v) in trace.iter().enumerate() {
            et += n as f64 / fs * v * v;
            e += v * v;
        }
        et / e
    }

    #[test]
    fn deeper_source_arrives_later() {
        // 1.5 mm deeper at 1500 m/s -> 1 us later at the element right above
        let probe = ProbeConfig {
            n_elements: 17,
            n_samples: 1000,
            ..Default::default()
        };
        let medium = Medium::default();
        let mut t = Vec::new();
        for depth in [0.01, 0.0115] {
            let grid = Grid::centered(1, 1, 4e-5, 0.0, depth);
            let op = build_operator(&grid, &probe, &medium).unwrap();
            let rf = op.apply_image(&Array2::ones((1, 1))).unwrap();
            t.push(arrival(rf.samples.row(8), probe.fs));
        }
        assert!((t[1] - t[0] - 1e-6).abs() < 0.5 / probe.fs, "{:?}", t);
    }

    #[test]
    fn horizontal_bar_outshines_vertical_bar() {
        let probe = ProbeConfig {
            n_elements: 64,
            n_samples: 800,
            ..Default::default()
        };
        let grid = Grid::centered(128, 128, 4e-5, 0.0, 0.01);
        let op = build_operator(&grid, &probe, &Medium::default()).unwrap();
        // 3 mm = 75 px long, one pixel thick, centred at 10 mm depth
        let mut horiz = Array2::zeros((128, 128));
        for c in 26..101 {
            horiz[[64, c]] = 1.0;
        }
        let vert = horiz.t().to_owned();
        let peaks = |rf: &RfData| -> Vec<f64> {
            rf.samples
                .rows()
                .into_iter()
                .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .collect()
        };
        let ph = peaks(&op.apply_image(&horiz).unwrap());
        let pv = peaks(&op.apply_image(&vert).unwrap());
        let (x_lo, x_hi) = (grid.x(26), grid.x(100));
        let mut checked = 0;
        for i in 0..probe.n_elements {
            let ex = probe.element_x(i);
            if ex >= x_lo && ex <= x_hi {
                assert!(ph[i] >= 5.0 * pv[i], "element {i}: {} vs {}", ph[i], pv[i]);
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn noise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rf = RfData {
            samples: Array2::from_shape_fn((8, 64), |_| rng.random_range(-1.0..1.0)),
            fs: 62.5e6,
            t0: 0.0,
        };
        let out = add_noise(&rf, 1e12, 1).unwrap();
        let m = rf.max_abs();
        assert!(out.samples.iter().zip(rf.samples.iter()).all(|(a, b)| (a - b).abs() <= 1e-9 * m));

        let zero = RfData {
            samples: Array2::zeros((8, 64)),
            ..rf.clone()
        };
        assert_eq!(add_noise(&zero, 60.0, 1).unwrap(), zero);
        assert_eq!(add_noise(&rf, 60.0, 5).unwrap(), add_noise(&rf, 60.0, 5).unwrap());
        assert_ne!(add_noise(&rf, 60.0, 5).unwrap(), add_noise(&rf, 60.0, 6).unwrap());
        assert!(add_noise(&rf, 0.0, 1).is_err());
    }

    #[test]
    fn noise_std_matches_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rf = RfData {
            samples: Array2::from_shape_fn((128, 2048), |_| rng.random_range(-1.0..1.0)),
            fs: 62.5e6,
            t0: 0.0,
        };
        let out = add_noise(&rf, 60.0, 42).unwrap();
        let diff = &out.samples - &rf.samples;
        let n = diff.len() as f64;
        let mean = diff.sum() / n;
        let std = (diff.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let ratio = std / rf.max_abs() * 60.0;
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }
}
