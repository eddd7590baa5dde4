//! Similarity-transform registration by correlation maximization.
//!
//! Transforms act on pixel coordinates `(x = col, z = row)` about the image
//! centre: `p' = s R(theta) (p - c) + c + t`. [`apply_transform`] resamples
//! with inverse mapping, so `register(reference, moving)` returns the `T`
//! for which `apply_transform(moving, T)` lines up with `reference`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::max_normalized;
use crate::phantom::bilinear_zero;

/// Smallest overlap, as a fraction of the reference, that a candidate
/// transform may leave.
pub const MIN_OVERLAP_FRACTION: f64 = 0.25;

const COARSE_ROTATION: f64 = PI / 180.0;
const COARSE_SHIFT: f64 = 1.0;
const COARSE_SCALE: f64 = 1.025;
const REFINE_HALVINGS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    /// Radians, counter-clockwise in `(x, z)`.
    pub rotation: f64,
    /// Pixels along columns.
    pub tx: f64,
    /// Pixels along rows.
    pub tz: f64,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        rotation: 0.0,
        tx: 0.0,
        tz: 0.0,
        scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            errs.push(format!("scale must be positive and finite, got {}", self.scale));
        }
        for (name, v) in [("rotation", self.rotation), ("tx", self.tx), ("tz", self.tz)] {
            if !v.is_finite() {
                errs.push(format!("{name} must be finite, got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Maps a point `(x, z)` about centre `(cx, cz)`.
    pub fn forward(&self, x: f64, z: f64, cx: f64, cz: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dz) = (x - cx, z - cz);
        (
            self.scale * (c * dx - s * dz) + cx + self.tx,
            self.scale * (s * dx + c * dz) + cz + self.tz,
        )
    }

    pub fn inverse_point(&self, x: f64, z: f64, cx: f64, cz: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dz) = (x - cx - self.tx, z - cz - self.tz);
        (
            (c * dx + s * dz) / self.scale + cx,
            (-s * dx + c * dz) / self.scale + cz,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let (s, c) = self.rotation.sin_cos();
        SimilarityTransform {
            rotation: -self.rotation,
            tx: -(c * self.tx + s * self.tz) / self.scale,
            tz: -(-s * self.tx + c * self.tz) / self.scale,
            scale: 1.0 / self.scale,
        }
    }
}

fn centre(rows: usize, cols: usize) -> (f64, f64) {
    ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0)
}

/// Resamples `img` so that `out(p) = img(T^-1 p)`, zero outside.
pub fn apply_transform(img: &Array2<f64>, t: &SimilarityTransform) -> Array2<f64> {
    warp_masked(img, t).0
}

/// Warped image plus the mask of pixels sampled from inside `img`.
fn warp_masked(img: &Array2<f64>, t: &SimilarityTransform) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = img.dim();
    let (cx, cz) = centre(rows, cols);
    let eps = 1e-9;
    let mut out = Array2::zeros((rows, cols));
    let mut mask = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let (x, z) = t.inverse_point(c as f64, r as f64, cx, cz);
            if x >= -eps && z >= -eps && x <= cols as f64 - 1.0 + eps && z <= rows as f64 - 1.0 + eps {
                out[[r, c]] = bilinear_zero(img, z, x);
                mask[[r, c]] = 1.0;
            }
        }
    }
    (out, mask)
}

fn masked_pearson(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<f64>) -> Option<(f64, usize)> {
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m > 0.0 {
            n += 1;
            sa += x;
            sb += y;
        }
    }
    if n == 0 {
        return None;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m > 0.0 {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Some((f64::NAN, n));
    }
    Some((sab / (saa * sbb).sqrt(), n))
}

fn check_reference(reference: &Array2<f64>, moving: &Array2<f64>) -> Result<()> {
    if reference.dim() != moving.dim() {
        return Err(Error::ShapeMismatch(reference.shape().to_vec(), moving.shape().to_vec()));
    }
    let first = reference.iter().next().copied().unwrap_or(0.0);
    if reference.iter().all(|&v| v == first) {
        return Err(Error::ConstantImage("registration reference is constant"));
    }
    Ok(())
}

/// Pearson correlation between `reference` and `moving` warped by `t`,
/// over the pixels the warp actually covers.
pub fn correlation(reference: &Array2<f64>, moving: &Array2<f64>, t: &SimilarityTransform) -> Result<f64> {
    check_reference(reference, moving)?;
    t.validate()?;
    let r = max_normalized(reference);
    let m = max_normalized(moving);
    objective(&r, &m, t).ok_or(Error::EmptyOverlap)
}

fn objective(r: &Array2<f64>, m: &Array2<f64>, t: &SimilarityTransform) -> Option<f64> {
    let (w, mask) = warp_masked(m, t);
    let min = (MIN_OVERLAP_FRACTION * r.len() as f64).ceil() as usize;
    match masked_pearson(r, &w, &mask) {
        Some((v, n)) if n >= min && v.is_finite() => Some(v),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationBounds {
    /// Largest |rotation| in radians.
    pub max_rotation: f64,
    /// Largest |translation| as a fraction of the image side.
    pub max_shift_fraction: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for RegistrationBounds {
    fn default() -> Self {
        RegistrationBounds {
            max_rotation: PI / 4.0,
            max_shift_fraction: 0.2,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }
}

impl RegistrationBounds {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.max_rotation >= 0.0 && self.max_rotation <= PI) {
            errs.push(format!("max_rotation must lie in [0, pi], got {}", self.max_rotation));
        }
        if !(self.max_shift_fraction >= 0.0 && self.max_shift_fraction < 1.0) {
            errs.push(format!("max_shift_fraction must lie in [0, 1), got {}", self.max_shift_fraction));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0 && self.scale_max >= 1.0 && self.scale_max.is_finite()) {
            errs.push(format!(
                "scale bounds must satisfy 0 < min <= 1 <= max, got [{}, {}]",
                self.scale_min, self.scale_max
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn clamp(&self, t: SimilarityTransform, rows: usize, cols: usize) -> SimilarityTransform {
        let sr = self.max_shift_fraction * rows as f64;
        let sc = self.max_shift_fraction * cols as f64;
        SimilarityTransform {
            rotation: t.rotation.clamp(-self.max_rotation, self.max_rotation),
            tx: t.tx.clamp(-sc, sc),
            tz: t.tz.clamp(-sr, sr),
            scale: t.scale.clamp(self.scale_min, self.scale_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub transform: SimilarityTransform,
    pub score: f64,
}

/// 2-D FFT on a row-major `p x q` buffer.
struct Fft2 {
    p: usize,
    q: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    irows: Arc<dyn Fft<f64>>,
    icols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(p: usize, q: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            p,
            q,
            rows: planner.plan_fft_forward(q),
            cols: planner.plan_fft_forward(p),
            irows: planner.plan_fft_inverse(q),
            icols: planner.plan_fft_inverse(p),
        }
    }

    fn run(&self, buf: &mut Vec<Complex64>, inverse: bool) {
        let (rows, cols) = if inverse { (&self.irows, &self.icols) } else { (&self.rows, &self.cols) };
        rows.process(buf);
        let mut t = transpose(buf, self.p, self.q);
        cols.process(&mut t);
        *buf = transpose(&t, self.q, self.p);
        if inverse {
            let k = 1.0 / (self.p * self.q) as f64;
            buf.iter_mut().for_each(|v| *v *= k);
        }
    }

    fn forward_real(&self, a: &Array2<f64>) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.p * self.q];
        for ((r, c), &v) in a.indexed_iter() {
            buf[r * self.q + c] = Complex64::new(v, 0.0);
        }
        self.run(&mut buf, false);
        buf
    }

    /// Inverse transforms of `x * conj(y)` and `u * conj(v)` in one pass;
    /// both results are real.
    fn correlate_pair(&self, x: &[Complex64], y: &[Complex64], u: &[Complex64], v: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut buf: Vec<Complex64> = (0..x.len())
            .map(|k| x[k] * y[k].conj() + i * (u[k] * v[k].conj()))
            .collect();
        self.run(&mut buf, true);
        (buf.iter().map(|c| c.re).collect(), buf.iter().map(|c| c.im).collect())
    }
}

fn transpose(a: &[Complex64], p: usize, q: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len()];
    for r in 0..p {
        for c in 0..q {
            out[c * p + r] = a[r * q + c];
        }
    }
    out
}

/// Smallest 2^a 3^b 5^c at least `n`.
fn fft_size(n: usize) -> usize {
    (n..)
        .find(|&k| {
            let mut m = k;
            for f in [2, 3, 5] {
                while m % f == 0 {
                    m /= f;
                }
            }
            m == 1
        })
        .expect("fft size")
}

struct CoarseSearch<'a> {
    moving: &'a Array2<f64>,
    fft: Fft2,
    one_hat: Vec<Complex64>,
    r_hat: Vec<Complex64>,
    r2_hat: Vec<Complex64>,
    max_dr: usize,
    max_dc: usize,
    min_count: f64,
}

impl<'a> CoarseSearch<'a> {
    fn new(reference: &Array2<f64>, moving: &'a Array2<f64>, bounds: &RegistrationBounds) -> Self {
        let (rows, cols) = reference.dim();
        let max_dr = (bounds.max_shift_fraction * rows as f64).floor() as usize;
        let max_dc = (bounds.max_shift_fraction * cols as f64).floor() as usize;
        let fft = Fft2::new(fft_size(rows + max_dr + 1), fft_size(cols + max_dc + 1));
        let one_hat = fft.forward_real(&Array2::ones((rows, cols)));
        let r_hat = fft.forward_real(reference);
        let r2_hat = fft.forward_real(&reference.mapv(|v| v * v));
        CoarseSearch {
            moving,
            fft,
            one_hat,
            r_hat,
            r2_hat,
            max_dr,
            max_dc,
            min_count: (MIN_OVERLAP_FRACTION * (rows * cols) as f64).ceil(),
        }
    }

    /// Best integer translation for a fixed rotation and scale.
    fn best_shift(&self, rotation: f64, scale: f64) -> Option<(f64, SimilarityTransform)> {
        let t0 = SimilarityTransform {
            rotation,
            scale,
            ..SimilarityTransform::IDENTITY
        };
        let (w, mask) = warp_masked(self.moving, &t0);
        let f = &self.fft;
        let m_hat = f.forward_real(&mask);
        let w_hat = f.forward_real(&w);
        let w2_hat = f.forward_real(&w.mapv(|v| v * v));
        let (n, sr) = f.correlate_pair(&self.one_hat, &m_hat, &self.r_hat, &m_hat);
        let (sr2, sw) = f.correlate_pair(&self.r2_hat, &m_hat, &self.one_hat, &w_hat);
        let (sw2, srw) = f.correlate_pair(&self.one_hat, &w2_hat, &self.r_hat, &w_hat);
        let mut best: Option<(f64, isize, isize)> = None;
        let (p, q) = (f.p as isize, f.q as isize);
        for dr in -(self.max_dr as isize)..=self.max_dr as isize {
            for dc in -(self.max_dc as isize)..=self.max_dc as isize {
                let k = (dr.rem_euclid(p) * q + dc.rem_euclid(q)) as usize;
                let cnt = n[k].round();
                if cnt < self.min_count {
                    continue;
                }
                let var_r = sr2[k] - sr[k] * sr[k] / cnt;
                let var_w = sw2[k] - sw[k] * sw[k] / cnt;
                if var_r <= 1e-9 * cnt || var_w <= 1e-9 * cnt {
                    continue;
                }
                let v = (srw[k] - sr[k] * sw[k] / cnt) / (var_r * var_w).sqrt();
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, dr, dc));
                }
            }
        }
        best.map(|(v, dr, dc)| {
            (
                v,
                SimilarityTransform {
                    tx: dc as f64,
                    tz: dr as f64,
                    ..t0
                },
            )
        })
    }
}

fn grid_steps(max: f64, step: f64) -> Vec<f64> {
    let k = (max / step + 1e-9).floor() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

fn scale_steps(min: f64, max: f64) -> Vec<f64> {
    let l = COARSE_SCALE.ln();
    let lo = (min.ln() / l - 1e-9).ceil() as i64;
    let hi = (max.ln() / l + 1e-9).floor() as i64;
    (lo..=hi).map(|i| COARSE_SCALE.powi(i as i32)).collect()
}

/// Finds the similarity transform maximizing the correlation between
/// `reference` and the warped `moving` image, within `bounds`.
pub fn register(reference: &Array2<f64>, moving: &Array2<f64>, bounds: &RegistrationBounds) -> Result<Registration> {
    check_reference(reference, moving)?;
    bounds.validate()?;
    let (rows, cols) = reference.dim();
    let r = max_normalized(reference);
    let m = max_normalized(moving);

    let search = CoarseSearch::new(&r, &m, bounds);
    let rotations = grid_steps(bounds.max_rotation, COARSE_ROTATION);
    let scales = scale_steps(bounds.scale_min, bounds.scale_max);
    let combos: Vec<(f64, f64)> = rotations
        .iter()
        .flat_map(|&a| scales.iter().map(move |&s| (a, s)))
        .collect();
    let coarse: Vec<Option<(f64, SimilarityTransform)>> =
        combos.par_iter().map(|&(a, s)| search.best_shift(a, s)).collect();

    let mut best_t = SimilarityTransform::IDENTITY;
    let mut best = objective(&r, &m, &best_t).unwrap_or(f64::NEG_INFINITY);
    // the FFT score is exact only up to rounding, so re-score the winner directly
    if let Some((_, t)) = coarse
        .into_iter()
        .flatten()
        .fold(None::<(f64, SimilarityTransform)>, |acc, c| match acc {
            Some(a) if a.0 >= c.0 => Some(a),
            _ => Some(c),
        })
    {
        if let Some(v) = objective(&r, &m, &t) {
            if v > best {
                best = v;
                best_t = t;
            }
        }
    }

    let mut steps = [COARSE_ROTATION, COARSE_SHIFT, COARSE_SHIFT, COARSE_SCALE.ln()];
    for _ in 0..=REFINE_HALVINGS {
        for _ in 0..100 {
            let mut improved = false;
            for (k, &step) in steps.iter().enumerate() {
                for sign in [1.0, -1.0] {
                    let mut t = best_t;
                    match k {
                        0 => t.rotation += sign * step,
                        1 => t.tx += sign * step,
                        2 => t.tz += sign * step,
                        _ => t.scale *= (sign * step).exp(),
                    }
                    let t = bounds.clamp(t, rows, cols);
                    if let Some(v) = objective(&r, &m, &t) {
                        if v > best {
                            best = v;
                            best_t = t;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        steps.iter_mut().for_each(|s| *s *= 0.5);
    }
    if !best.is_finite() {
        return Err(Error::EmptyOverlap);
    }
    Ok(Registration {
        transform: best_t,
        score: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_image(n: usize) -> Array2<f64> {
        let blobs = [(20.0, 18.0, 4.0, 1.0), (40.0, 30.0, 6.0, 0.7), (25.0, 44.0, 3.0, 0.9), (45.0, 12.0, 3.5, 0.5)];
        Array2::from_shape_fn((n, n), |(r, c)| {
            blobs
                .iter()
                .map(|&(y, x, s, a)| a * (-((r as f64 - y).powi(2) + (c as f64 - x).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
    }

    #[test]
    fn identity_warp_is_exact() {
        let x = blob_image(33);
        assert_eq!(apply_transform(&x, &SimilarityTransform::IDENTITY), x);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = SimilarityTransform {
            rotation: 0.3,
            tx: 2.5,
            tz: -1.0,
            scale: 1.1,
        };
        let (x, z) = t.forward(3.0, 7.0, 10.0, 12.0);
        let (bx, bz) = t.inverse().forward(x, z, 10.0, 12.0);
        assert!((bx - 3.0).abs() < 1e-12 && (bz - 7.0).abs() < 1e-12);
        let (ix, iz) = t.inverse_point(x, z, 10.0, 12.0);
        assert!((ix - 3.0).abs() < 1e-12 && (iz - 7.0).abs() < 1e-12);
    }

    #[test]
    fn pure_shift_moves_content() {
        let x = blob_image(40);
        let t = SimilarityTransform {
            tx: 3.0,
            tz: -2.0,
            ..SimilarityTransform::IDENTITY
        };
        let w = apply_transform(&x, &t);
        assert_eq!(w[[10, 13]], x[[12, 10]]);
    }

    #[test]
    fn self_registration_is_identity() {
        let x = blob_image(64);
        let reg = register(&x, &x, &RegistrationBounds::default()).unwrap();
        assert!((reg.score - 1.0).abs() < 1e-12);
        assert_eq!(reg.transform, SimilarityTransform::IDENTITY);
    }

    #[test]
    fn recovers_rotation_and_shift() {
        let x = blob_image(64);
        let t0 = SimilarityTransform {
            rotation: 5f64.to_radians(),
            tx: 3.0,
            tz: -2.0,
            scale: 1.0,
        };
        let moving = apply_transform(&x, &t0);
        let bounds = RegistrationBounds {
            max_rotation: 10f64.to_radians(),
            scale_min: 0.95,
            scale_max: 1.05,
            ..Default::default()
        };
        let reg = register(&x, &moving, &bounds).unwrap();
        let want = t0.inverse();
        let got = reg.transform;
        assert!((got.rotation - want.rotation).abs() < 0.5f64.to_radians(), "{got:?} vs {want:?}");
        assert!((got.tx - want.tx).abs() < 0.5 && (got.tz - want.tz).abs() < 0.5, "{got:?} vs {want:?}");
        assert!(reg.score > correlation(&x, &moving, &SimilarityTransform::IDENTITY).unwrap());
    }

    #[test]
    fn errors() {
        let x = blob_image(32);
        assert!(matches!(
            register(&Array2::ones((32, 32)), &x, &RegistrationBounds::default()),
            Err(Error::ConstantImage(_))
        ));
        let far = SimilarityTransform {
            tx: 40.0,
            ..SimilarityTransform::IDENTITY
        };
        assert!(matches!(correlation(&x, &x, &far), Err(Error::EmptyOverlap)));
        let bad = RegistrationBounds {
            scale_min: 1.2,
            ..Default::default()
        };
        assert!(matches!(register(&x, &x, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(fft_size(153), 160);
        assert_eq!(fft_size(64), 64);
        assert_eq!(fft_size(7), 8);
    }
}
