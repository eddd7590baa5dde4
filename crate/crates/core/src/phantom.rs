//! Procedural leaf-skeleton phantoms, geometric augmentation and
//! ground-truth preparation.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GroundTruthImage, Grid, Image};

/// Largest angle between a child branch and its parent.
pub const MAX_BRANCH_ANGLE: f64 = 75.0 * PI / 180.0;
const MIN_BRANCH_ANGLE: f64 = 15.0 * PI / 180.0;
/// Polyline step along a stroke, pixels.
const STEP_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchingConfig {
    pub grid: Grid,
    pub trunks: usize,
    /// Number of generations including the trunk.
    pub depth: usize,
    pub width_min_px: f64,
    pub width_max_px: f64,
    /// Probability that a branch spawns children (if depth allows).
    pub branch_probability: f64,
    /// Maximum heading change per polyline step, radians.
    pub curvature: f64,
    /// End width over start width along one stroke.
    pub taper: f64,
}

impl Default for BranchingConfig {
    fn default() -> Self {
        BranchingConfig {
            // 10 x 10 mm centred 10 mm in front of the probe
            grid: Grid::centered(250, 250, 4e-5, 0.0, 10e-3),
            trunks: 2,
            depth: 4,
            width_min_px: 2.0,
            width_max_px: 20.0,
            branch_probability: 0.85,
            curvature: 0.06,
            taper: 0.7,
        }
    }
}

impl BranchingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.grid.validate() {
            Err(Error::Config(e)) => e,
            _ => Vec::new(),
        };
        if self.trunks < 1 {
            errs.push("trunks must be >= 1".into());
        }
        if self.depth < 1 {
            errs.push("depth must be >= 1".into());
        }
        if !(self.width_min_px > 0.0 && self.width_min_px <= self.width_max_px) {
            errs.push(format!(
                "vein width range [{}, {}] invalid",
                self.width_min_px, self.width_max_px
            ));
        }
        if !(0.0..=1.0).contains(&self.branch_probability) {
            errs.push("branch_probability must lie in [0, 1]".into());
        }
        if !(self.curvature >= 0.0 && self.curvature.is_finite()) {
            errs.push("curvature must be >= 0".into());
        }
        if !(self.taper > 0.0 && self.taper <= 1.0) {
            errs.push("taper must lie in (0, 1]".into());
        }
        let side = self.grid.rows.min(self.grid.cols) as f64;
        if side < 2.0 * self.width_max_px.ceil().max(self.width_min_px) {
            errs.push(format!(
                "grid {}x{} too small for vein width {} px",
                self.grid.rows, self.grid.cols, self.width_max_px
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Tapering polyline in pixel coordinates `(col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<(f64, f64)>,
    /// Full width at each point, pixels.
    pub widths: Vec<f64>,
    pub generation: usize,
}

struct Grower<'a> {
    cfg: &'a BranchingConfig,
    rng: ChaCha8Rng,
    strokes: Vec<Stroke>,
}

impl Grower<'_> {
    fn grow(&mut self, start: (f64, f64), heading: f64, length: f64, width: f64, generation: usize) {
        let n = (length / STEP_PX).ceil().max(1.0) as usize;
        let step = length / n as f64;
        let mut points = Vec::with_capacity(n + 1);
        let mut widths = Vec::with_capacity(n + 1);
        let mut headings = Vec::with_capacity(n + 1);
        let (mut x, mut y, mut h) = (start.0, start.1, heading);
        for k in 0..=n {
            let frac = k as f64 / n as f64;
            points.push((x, y));
            widths.push(width * (1.0 - frac * (1.0 - self.cfg.taper)));
            headings.push(h);
            if self.cfg.curvature > 0.0 {
                h += self.rng.random_range(-self.cfg.curvature..=self.cfg.curvature);
            }
            x += step * h.cos();
            y += step * h.sin();
        }
        self.strokes.push(Stroke {
            points: points.clone(),
            widths: widths.clone(),
            generation,
        });

        if generation + 1 >= self.cfg.depth || self.rng.random::<f64>() >= self.cfg.branch_probability {
            return;
        }
        let children = self.rng.random_range(2..=3usize);
        let mut side = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        for _ in 0..children {
            let at = ((self.rng.random_range(0.2..0.9) * n as f64) as usize).min(n);
            let angle = side * self.rng.random_range(MIN_BRANCH_ANGLE..=MAX_BRANCH_ANGLE);
            side = -side;
            let child_width = widths[at] * self.rng.random_range(0.5..=0.8);
            let child_len = length * self.rng.random_range(0.4..0.7);
            if child_width < self.cfg.width_min_px {
                continue;
            }
            self.grow(points[at], headings[at] + angle, child_len, child_width, generation + 1);
        }
    }
}

/// Stroke skeleton for `(seed, cfg)`; [`generate_branching_phantom`] rasterizes it.
pub fn branching_strokes(seed: u64, cfg: &BranchingConfig) -> Result<Vec<Stroke>> {
    cfg.validate()?;
    let mut g = Grower {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        strokes: Vec::new(),
    };
    let (rows, cols) = (cfg.grid.rows as f64, cfg.grid.cols as f64);
    let (cx, cy) = (0.5 * (cols - 1.0), 0.5 * (rows - 1.0));
    let side = rows.min(cols);
    for _ in 0..cfg.trunks {
        // trunks enter near the border and head through the central region
        let phi = g.rng.random_range(0.0..2.0 * PI);
        let radius = 0.45 * side;
        let start = (cx + radius * phi.cos(), cy + radius * phi.sin());
        let heading = phi + PI + g.rng.random_range(-0.35..0.35);
        let length = side * g.rng.random_range(0.6..0.95);
        let width = g.rng.random_range(0.5 * cfg.width_max_px..=cfg.width_max_px).max(cfg.width_min_px);
        g.grow(start, heading, length, width, 0);
    }
    Ok(g.strokes)
}

/// Anti-aliased union of strokes: each pixel takes the maximum coverage
/// `clamp(r + 1/2 - d, 0, 1)` over all segments, `d` being the distance from
/// the pixel centre to the segment and `r` the local half-width.
pub fn rasterize(strokes: &[Stroke], rows: usize, cols: usize) -> Array2<f64> {
    let mut img = Array2::<f64>::zeros((rows, cols));
    for s in strokes {
        for k in 0..s.points.len().saturating_sub(1) {
            let (p0, p1) = (s.points[k], s.points[k + 1]);
            let (r0, r1) = (0.5 * s.widths[k], 0.5 * s.widths[k + 1]);
            let reach = r0.max(r1) + 1.0;
            let c_lo = (p0.0.min(p1.0) - reach).floor().max(0.0) as usize;
            let c_hi = (p0.0.max(p1.0) + reach).ceil().min(cols as f64 - 1.0);
            let r_lo = (p0.1.min(p1.1) - reach).floor().max(0.0) as usize;
            let r_hi = (p0.1.max(p1.1) + reach).ceil().min(rows as f64 - 1.0);
            if c_hi < 0.0 || r_hi < 0.0 {
                continue;
            }
            let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
            let len2 = dx * dx + dy * dy;
            for row in r_lo..=r_hi as usize {
                for col in c_lo..=c_hi as usize {
                    let (px, py) = (col as f64 - p0.0, row as f64 - p0.1);
                    let u = if len2 > 0.0 {
                        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let d = ((px - u * dx).powi(2) + (py - u * dy).powi(2)).sqrt();
                    let r = r0 + u * (r1 - r0);
                    let cov = (r + 0.5 - d).clamp(0.0, 1.0);
                    let v = &mut img[[row, col]];
                    if cov > *v {
                        *v = cov;
                    }
                }
            }
        }
    }
    img
}

pub fn generate_branching_phantom(seed: u64, cfg: &BranchingConfig) -> Result<GroundTruthImage> {
    let strokes = branching_strokes(seed, cfg)?;
    let mut pixels = rasterize(&strokes, cfg.grid.rows, cfg.grid.cols);
    let m = pixels.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        pixels /= m;
    }
    Ok(Image {
        pixels,
        grid: cfg.grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mirror {
    #[default]
    None,
    /// Left-right flip.
    Horizontal,
    /// Top-bottom flip.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation: f64,
    pub mirror: Mirror,
    /// (lateral, axial) shear coefficients.
    pub shear: (f64, f64),
    /// Radial expansion (> 1) or compression (< 1) about the image centre.
    pub scale: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec::IDENTITY
    }
}

impl AugmentSpec {
    pub const IDENTITY: AugmentSpec = AugmentSpec {
        rotation: 0.0,
        mirror: Mirror::None,
        shear: (0.0, 0.0),
        scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !self.rotation.is_finite() {
            errs.push("rotation must be finite".to_string());
        }
        if !(0.5..=2.0).contains(&self.scale) {
            errs.push(format!("scale {} outside [0.5, 2]", self.scale));
        }
        if !(self.shear.0.abs() <= 0.5 && self.shear.1.abs() <= 0.5) {
            errs.push(format!("shear {:?} exceeds 0.5", self.shear));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Draws a random augmentation: any rotation, random mirror, a horizontal
    /// or vertical shear up to 0.3 and a scale in [0.8, 1.25].
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mirror = match rng.random_range(0..3) {
            0 => Mirror::None,
            1 => Mirror::Horizontal,
            _ => Mirror::Vertical,
        };
        let s = rng.random_range(-0.3..=0.3);
        let shear = if rng.random::<bool>() { (s, 0.0) } else { (0.0, s) };
        AugmentSpec {
            rotation: rng.random_range(-PI..PI),
            mirror,
            shear,
            scale: rng.random_range(0.8..=1.25),
        }
    }

    /// [`AugmentSpec::random`] driven by a seeded ChaCha8 stream.
    pub fn from_seed(seed: u64) -> Self {
        Self::random(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Forward 2x2 map on centred pixel offsets `(col, row)`:
    /// scale * shear * rotation * mirror.
    fn matrix(&self) -> [[f64; 2]; 2] {
        let f = match self.mirror {
            Mirror::None => [1.0, 1.0],
            Mirror::Horizontal => [-1.0, 1.0],
            Mirror::Vertical => [1.0, -1.0],
        };
        let (s, c) = self.rotation.sin_cos();
        let rf = [[c * f[0], -s * f[1]], [s * f[0], c * f[1]]];
        let sh = [[1.0, self.shear.0], [self.shear.1, 1.0]];
        let k = self.scale;
        [
            [
                k * (sh[0][0] * rf[0][0] + sh[0][1] * rf[1][0]),
                k * (sh[0][0] * rf[0][1] + sh[0][1] * rf[1][1]),
            ],
            [
                k * (sh[1][0] * rf[0][0] + sh[1][1] * rf[1][0]),
                k * (sh[1][0] * rf[0][1] + sh[1][1] * rf[1][1]),
            ],
        ]
    }
}

/// Bilinear sample with zero outside the image.
#[inline]
pub(crate) fn bilinear_zero(img: &Array2<f64>, row: f64, col: f64) -> f64 {
    let (rows, cols) = img.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            img[[r as usize, c as usize]]
        }
    };
    let mut v = 0.0;
    if (1.0 - fr) * (1.0 - fc) != 0.0 {
        v += (1.0 - fr) * (1.0 - fc) * at(r0, c0);
    }
    if (1.0 - fr) * fc != 0.0 {
        v += (1.0 - fr) * fc * at(r0, c0 + 1);
    }
    if fr * (1.0 - fc) != 0.0 {
        v += fr * (1.0 - fc) * at(r0 + 1, c0);
    }
    if fr * fc != 0.0 {
        v += fr * fc * at(r0 + 1, c0 + 1);
    }
    v
}

pub fn augment(img: &GroundTruthImage, spec: &AugmentSpec) -> Result<GroundTruthImage> {
    spec.validate()?;
    let m = spec.matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let (rows, cols) = img.pixels.dim();
    let (cc, rc) = (0.5 * (cols as f64 - 1.0), 0.5 * (rows as f64 - 1.0));
    let pixels = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (u, v) = (c as f64 - cc, r as f64 - rc);
        let su = inv[0][0] * u + inv[0][1] * v + cc;
        let sv = inv[1][0] * u + inv[1][1] * v + rc;
        bilinear_zero(&img.pixels, sv, su)
    });
    Ok(Image {
        pixels,
        grid: img.grid,
    })
}

/// Normalizes to unit maximum and zeroes every pixel below `threshold`.
/// An all-zero image is returned unchanged.
pub fn prepare_ground_truth(img: &GroundTruthImage, threshold: f64) -> Result<GroundTruthImage> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(vec![format!(
            "threshold {threshold} outside [0, 1)"
        )]));
    }
    let m = img.pixels.iter().copied().fold(0.0, f64::max);
    if m <= 0.0 {
        return Ok(img.clone());
    }
    let pixels = img.pixels.mapv(|v| {
        let n = v / m;
        if n < threshold {
            0.0
        } else {
            n
        }
    });
    Ok(Image {
        pixels,
        grid: img.grid,
    })
}

pub const DEFAULT_GT_THRESHOLD: f64 = 0.1;


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = GroundTruthImage> {
        prop::collection::vec(0.0f64..=1.0, 24 * 24).prop_map(|v| {
            Image::new(
                Array2::from_shape_vec((24, 24), v).unwrap(),
                Grid::centered(24, 24, 1e-4, 0.0, 0.01),
            )
            .unwrap()
        })
    }

    fn arb_spec() -> impl Strategy<Value = AugmentSpec> {
        (
            -PI..PI,
            0usize..3,
            -0.5f64..=0.5,
            -0.5f64..=0.5,
            0.5f64..=2.0,
        )
            .prop_map(|(rotation, m, sx, sz, scale)| AugmentSpec {
                rotation,
                mirror: [Mirror::None, Mirror::Horizontal, Mirror::Vertical][m],
                shear: (sx, sz),
                scale,
            })
    }

    proptest! {
        #[test]
        fn augment_keeps_unit_range(img in arb_image(), spec in arb_spec()) {
            let out = augment(&img, &spec).unwrap();
            for &v in out.pixels.iter() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn prepare_is_idempotent(img in arb_image(), t in 0.0f64..0.99) {
            let once = prepare_ground_truth(&img, t).unwrap();
            let twice = prepare_ground_truth(&once, t).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
