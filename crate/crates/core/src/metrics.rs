//! Image-quality metrics: windowed normalized cross-correlation, SSIM,
//! scaled-and-shifted SSIM and absolute-error maps.
//!
//! All scores are computed on max-normalized images.

use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::max_normalized;

/// Largest shift, in pixels, searched by [`ncc`].
pub const NCC_MAX_SHIFT: usize = 5;

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

fn is_constant(a: &Array2<f64>) -> bool {
    let first = a.iter().next().copied().unwrap_or(0.0);
    a.iter().all(|&v| v == first)
}

/// Pearson correlation coefficient over all pixels.
pub fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    });
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantImage("pearson correlation of a constant image"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Summed-area table with a zero first row and column.
fn integral(a: &Array2<f64>, square: bool) -> Array2<f64> {
    let (r, c) = a.dim();
    let mut s = Array2::zeros((r + 1, c + 1));
    for i in 0..r {
        let mut row = 0.0;
        for j in 0..c {
            let v = a[[i, j]];
            row += if square { v * v } else { v };
            s[[i + 1, j + 1]] = s[[i, j + 1]] + row;
        }
    }
    s
}

fn box_sum(s: &Array2<f64>, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    s[[r1, c1]] - s[[r0, c1]] - s[[r1, c0]] + s[[r0, c0]]
}

/// Normalized cross-correlation surface of image `a` against template `b`
/// (same size) for shifts in `[-max_shift, max_shift]^2`.
///
/// The template is mean-subtracted; the image is normalized by its local
/// sums over the shifted template footprint, zero-padded outside, as in
/// fast template matching. Entry `[max_shift, max_shift]` is the zero shift.
pub fn ncc_surface(a: &Array2<f64>, b: &Array2<f64>, max_shift: usize) -> Result<Array2<f64>> {
    check_shapes(a, b)?;
    if is_constant(b) {
        return Err(Error::ConstantImage("ground truth is constant"));
    }
    let a = max_normalized(a);
    let b = max_normalized(b);
    let (rows, cols) = a.dim();
    let n = (rows * cols) as f64;
    let mb = b.sum() / n;
    let bc = b.mapv(|v| v - mb);
    let sbb: f64 = bc.iter().map(|v| v * v).sum();
    let s1 = integral(&a, false);
    let s2 = integral(&a, true);
    let m = max_shift as isize;
    let side = 2 * max_shift + 1;
    let vals: Vec<f64> = (0..side * side)
        .into_par_iter()
        .map(|k| {
            let dy = (k / side) as isize - m;
            let dx = (k % side) as isize - m;
            // template rows r map to image rows r + dy
            let r0 = (-dy).max(0) as usize;
            let r1 = (rows as isize - dy.max(0)).max(0) as usize;
            let c0 = (-dx).max(0) as usize;
            let c1 = (cols as isize - dx.max(0)).max(0) as usize;
            if r0 >= r1 || c0 >= c1 {
                return 0.0;
            }
            let mut num = 0.0;
            for r in r0..r1 {
                let ar = (r as isize + dy) as usize;
                for c in c0..c1 {
                    num += a[[ar, (c as isize + dx) as usize]] * bc[[r, c]];
                }
            }
            let ir0 = (r0 as isize + dy) as usize;
            let ic0 = (c0 as isize + dx) as usize;
            let ir1 = ir0 + (r1 - r0);
            let ic1 = ic0 + (c1 - c0);
            let sa = box_sum(&s1, ir0, ir1, ic0, ic1);
            let saa = box_sum(&s2, ir0, ir1, ic0, ic1);
            let var_a = saa - sa * sa / n;
            if var_a <= 1e-12 * n {
                0.0
            } else {
                num / (var_a * sbb).sqrt()
            }
        })
        .collect();
    Ok(Array2::from_shape_vec((side, side), vals).expect("surface shape"))
}

/// Peak of the normalized cross-correlation surface within +-[`NCC_MAX_SHIFT`] pixels.
pub fn ncc(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let s = ncc_surface(a, b, NCC_MAX_SHIFT)?;
    Ok(s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd Gaussian window size.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn kernel(&self) -> Vec<f64> {
        let h = (self.window / 2) as f64;
        let mut k: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - h).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Separable 'valid' filtering.
fn filter_valid(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (rows, cols) = a.dim();
    let w = k.len();
    let oc = cols + 1 - w;
    let or = rows + 1 - w;
    let mut tmp = Array2::zeros((rows, oc));
    for r in 0..rows {
        for c in 0..oc {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * a[[r, c + j]];
            }
            tmp[[r, c]] = s;
        }
    }
    let mut out = Array2::zeros((or, oc));
    for r in 0..or {
        for c in 0..oc {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * tmp[[r + j, c]];
            }
            out[[r, c]] = s;
        }
    }
    out
}

/// Local window statistics of a pair; SSIM of `(g a + o, b)` follows from
/// them in closed form.
#[derive(Debug, Clone)]
pub struct SsimStats {
    mu_a: Array2<f64>,
    mu_b: Array2<f64>,
    var_a: Array2<f64>,
    var_b: Array2<f64>,
    cov: Array2<f64>,
    c1: f64,
    c2: f64,
}

impl SsimStats {
    pub fn new(a: &Array2<f64>, b: &Array2<f64>, params: &SsimParams) -> Result<Self> {
        check_shapes(a, b)?;
        let (rows, cols) = a.dim();
        if params.window == 0 || params.window % 2 == 0 {
            return Err(Error::Config(vec![format!("SSIM window must be odd, got {}", params.window)]));
        }
        if rows < params.window || cols < params.window {
            return Err(Error::ImageTooSmall {
                rows,
                cols,
                window: params.window,
            });
        }
        let k = params.kernel();
        let mu_a = filter_valid(a, &k);
        let mu_b = filter_valid(b, &k);
        let var_a = filter_valid(&(a * a), &k) - &mu_a * &mu_a;
        let var_b = filter_valid(&(b * b), &k) - &mu_b * &mu_b;
        let cov = filter_valid(&(a * b), &k) - &mu_a * &mu_b;
        Ok(SsimStats {
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
            c1: params.c1(),
            c2: params.c2(),
        })
    }

    /// Mean SSIM of `(gain * a + offset, b)`.
    pub fn score(&self, gain: f64, offset: f64) -> f64 {
        let mut total = 0.0;
        let g2 = gain * gain;
        Zip::from(&self.mu_a)
            .and(&self.mu_b)
            .and(&self.var_a)
            .and(&self.var_b)
            .and(&self.cov)
            .for_each(|&ma, &mb, &va, &vb, &cv| {
                let m = gain * ma + offset;
                let num = (2.0 * m * mb + self.c1) * (2.0 * gain * cv + self.c2);
                let den = (m * m + mb * mb + self.c1) * (g2 * va + vb + self.c2);
                total += num / den;
            });
        total / self.mu_a.len() as f64
    }
}

/// SSIM on the images as given (no normalization).
pub fn ssim_raw(a: &Array2<f64>, b: &Array2<f64>, params: &SsimParams) -> Result<f64> {
    Ok(SsimStats::new(a, b, params)?.score(1.0, 0.0))
}

/// Mean SSIM of the max-normalized images.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, params: &SsimParams) -> Result<f64> {
    ssim_raw(&max_normalized(a), &max_normalized(b), params)
}

/// Search bounds for [`sssim`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SssimSearch {
    pub gain_min: f64,
    pub gain_max: f64,
    pub gain_steps: usize,
    pub offset_min: f64,
    pub offset_max: f64,
    pub offset_steps: usize,
}

impl Default for SssimSearch {
    fn default() -> Self {
        SssimSearch {
            gain_min: 0.1,
            gain_max: 10.0,
            gain_steps: 32,
            offset_min: -0.5,
            offset_max: 0.5,
            offset_steps: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SssimFit {
    pub score: f64,
    pub gain: f64,
    pub offset: f64,
}

/// Affine map of `a` onto `[0, 1]`; constant input maps to zeros.
fn min_max(a: &Array2<f64>) -> (Array2<f64>, f64, f64) {
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        (a.mapv(|v| (v - lo) / span), lo, hi)
    } else {
        (Array2::zeros(a.dim()), lo, hi)
    }
}

/// SSIM maximized over an intensity gain and offset applied to `a`.
///
/// `a` is first mapped onto `[0, 1]` (which makes the score invariant to
/// positive affine intensity changes of `a`), `b` is max-normalized. The
/// search is a coarse log/linear grid plus the identity map and the map
/// reproducing plain SSIM, then a pattern search with halving steps. The
/// reported gain and offset act on the `[0, 1]`-mapped `a`.
pub fn sssim_fit(a: &Array2<f64>, b: &Array2<f64>, params: &SsimParams, search: &SssimSearch) -> Result<SssimFit> {
    let (an, lo, hi) = min_max(a);
    let stats = SsimStats::new(&an, &max_normalized(b), params)?;
    let (mut lg_lo, mut lg_hi) = (search.gain_min.ln(), search.gain_max.ln());
    let (mut o_lo, mut o_hi) = (search.offset_min, search.offset_max);
    let steps = |n: usize| (n.max(2) - 1) as f64;
    let lg_step = (lg_hi - lg_lo) / steps(search.gain_steps);
    let o_step = (o_hi - o_lo) / steps(search.offset_steps);

    let mut best = (stats.score(1.0, 0.0), 0.0_f64, 0.0_f64);
    // a / max|a| expressed on the mapped image, so the result is never below ssim(a, b)
    let m = lo.abs().max(hi.abs());
    if m > 0.0 && hi > lo {
        let (g, o) = ((hi - lo) / m, lo / m);
        let s = stats.score(g, o);
        if s > best.0 {
            best = (s, g.ln(), o);
        }
    }
    for i in 0..search.gain_steps {
        let lg = lg_lo + i as f64 * lg_step;
        for j in 0..search.offset_steps {
            let o = o_lo + j as f64 * o_step;
            let s = stats.score(lg.exp(), o);
            if s > best.0 {
                best = (s, lg, o);
            }
        }
    }
    lg_lo = lg_lo.min(best.1);
    lg_hi = lg_hi.max(best.1);
    o_lo = o_lo.min(best.2);
    o_hi = o_hi.max(best.2);

    let (mut ds, mut dof) = (lg_step, o_step);
    let mut evals = 0;
    while (ds > 1e-9 || dof > 1e-9) && evals < 4000 {
        let mut moved = false;
        for (dl, dofs) in [
            (ds, 0.0),
            (-ds, 0.0),
            (0.0, dof),
            (0.0, -dof),
            (ds, dof),
            (ds, -dof),
            (-ds, dof),
            (-ds, -dof),
        ] {
            let lg = (best.1 + dl).clamp(lg_lo, lg_hi);
            let o = (best.2 + dofs).clamp(o_lo, o_hi);
            let s = stats.score(lg.exp(), o);
            evals += 1;
            if s > best.0 {
                best = (s, lg, o);
                moved = true;
            }
        }
        if !moved {
            ds *= 0.5;
            dof *= 0.5;
        }
    }
    Ok(SssimFit {
        score: best.0,
        gain: best.1.exp(),
        offset: best.2,
    })
}

pub fn sssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    Ok(sssim_fit(a, b, &SsimParams::default(), &SssimSearch::default())?.score)
}

/// Pixelwise `|gt - pred|`; callers pass max-normalized images.
pub fn abs_error_map(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(pred, gt)?;
    Ok(Zip::from(pred).and(gt).map_collect(|p, g| (g - p).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub ncc: f64,
    pub ssim: f64,
    pub sssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased (n - 1) estimator; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: Vec<PairScores>,
    pub ncc: Summary,
    pub ssim: Summary,
    pub sssim: Summary,
}

pub fn evaluate_pair(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<PairScores> {
    Ok(PairScores {
        ncc: ncc(pred, gt)?,
        ssim: ssim(pred, gt, &SsimParams::default())?,
        sssim: sssim(pred, gt)?,
    })
}

/// Scores every `(prediction, ground truth)` pair and summarizes the set.
pub fn evaluate_set(pairs: &[(Array2<f64>, Array2<f64>)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Config(vec!["metric set is empty".into()]));
    }
    let scores = pairs
        .par_iter()
        .map(|(p, g)| evaluate_pair(p, g))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&PairScores) -> f64| Summary::of(&scores.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        ncc: col(|s| s.ncc),
        ssim: col(|s| s.ssim),
        sssim: col(|s| s.sssim),
        pairs: scores,
    })
}

impl MetricReport {
    /// Aligned text table, one row per metric.
    pub fn table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>16}", "metric", label);
        for (name, m) in [("NCC", &self.ncc), ("SSIM", &self.ssim), ("sSSIM", &self.sssim)] {
            let _ = writeln!(s, "{:<8} {:>9.2} ± {:.2}", name, m.mean, m.std);
        }
        s
    }
}
