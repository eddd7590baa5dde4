//! Pixelwise statistics over prediction stacks and noise-variability
//! experiments.

use ndarray::{Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acoustics::{add_noise, synthesize_rf, PropagationOperator, RfData};
use crate::error::{Error, Result};
use crate::grid::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMaps {
    pub mean: Array2<f64>,
    /// Unbiased (n - 1) standard deviation.
    pub std: Array2<f64>,
    pub n: usize,
    pub abs_error: Option<Array2<f64>>,
}

/// Pixelwise mean and unbiased std of an `n x H x W` stack.
///
/// Each pixel's samples are sorted before reduction, so the result is
/// bit-identical under any reordering of the stack.
pub fn aggregate(stack: &Array3<f64>) -> Result<UncertaintyMaps> {
    let (n, rows, cols) = stack.dim();
    if n < 2 {
        return Err(Error::StackTooSmall(n));
    }
    let stats: Vec<(f64, f64)> = (0..rows * cols)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / cols, p % cols);
            let mut v: Vec<f64> = (0..n).map(|k| stack[[k, r, c]]).collect();
            v.sort_by(f64::total_cmp);
            // shifted by the median: exact zero spread for constant pixels
            let shift = v[n / 2];
            let d: Vec<f64> = v.iter().map(|x| x - shift).collect();
            let dm = d.iter().sum::<f64>() / n as f64;
            let ss: f64 = d.iter().map(|x| (x - dm) * (x - dm)).sum();
            (shift + dm, (ss / (n - 1) as f64).sqrt())
        })
        .collect();
    Ok(UncertaintyMaps {
        mean: Array2::from_shape_fn((rows, cols), |(r, c)| stats[r * cols + c].0),
        std: Array2::from_shape_fn((rows, cols), |(r, c)| stats[r * cols + c].1),
        n,
        abs_error: None,
    })
}

/// Stacks equally-shaped images along a new leading axis.
pub fn stack_images(images: &[Array2<f64>]) -> Result<Array3<f64>> {
    let first = images.first().ok_or(Error::StackTooSmall(0))?;
    let views: Vec<_> = images.iter().map(|a| a.view()).collect();
    for a in images {
        if a.dim() != first.dim() {
            return Err(Error::ShapeMismatch(first.shape().to_vec(), a.shape().to_vec()));
        }
    }
    Ok(ndarray::stack(Axis(0), &views).expect("shapes checked"))
}

impl UncertaintyMaps {
    /// Attaches `|mean - gt|`.
    pub fn with_ground_truth(mut self, gt: &Array2<f64>) -> Result<Self> {
        if gt.dim() != self.mean.dim() {
            return Err(Error::ShapeMismatch(self.mean.shape().to_vec(), gt.shape().to_vec()));
        }
        self.abs_error = Some(Zip::from(&self.mean).and(gt).map_collect(|m, g| (m - g).abs()));
        Ok(self)
    }
}

/// `n_acq` noisy RF records of the same object, each with a fresh noise seed
/// drawn from `seed`. An infinite `snr` yields identical clean records.
pub fn noise_variability(
    obj: &Image,
    op: &PropagationOperator,
    snr: f64,
    n_acq: usize,
    seed: u64,
) -> Result<Vec<RfData>> {
    if n_acq < 2 {
        return Err(Error::StackTooSmall(n_acq));
    }
    let clean = synthesize_rf(obj, op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n_acq).map(|_| rng.random()).collect();
    seeds.into_iter().map(|s| add_noise(&clean, snr, s)).collect()
}

/// Fraction of the top-`q` error pixels that fall inside the top-`2q` std
/// region. Chance level for unrelated maps is about `2q`.
pub fn overlap_score(std_map: &Array2<f64>, error_map: &Array2<f64>, q: f64) -> Result<f64> {
    if std_map.dim() != error_map.dim() {
        return Err(Error::ShapeMismatch(std_map.shape().to_vec(), error_map.shape().to_vec()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(vec![format!("quantile must lie in (0, 1), got {q}")]));
    }
    let constant = |a: &Array2<f64>| {
        let f = a.iter().next().copied().unwrap_or(0.0);
        a.iter().all(|&v| v == f)
    };
    if constant(std_map) {
        return Err(Error::ConstantImage("std map is constant"));
    }
    if constant(error_map) {
        return Err(Error::ConstantImage("error map is constant"));
    }
    let n = std_map.len();
    let top = |a: &Array2<f64>, frac: f64| -> Vec<bool> {
        let k = ((frac * n as f64).ceil() as usize).clamp(1, n);
        let mut idx: Vec<usize> = (0..n).collect();
        let flat: Vec<f64> = a.iter().copied().collect();
        // stable on ties: larger value first, then lower index
        idx.sort_by(|&i, &j| flat[j].total_cmp(&flat[i]).then(i.cmp(&j)));
        let mut sel = vec![false; n];
        idx[..k].iter().for_each(|&i| sel[i] = true);
        sel
    };
    let err_top = top(error_map, q);
    let std_top = top(std_map, (2.0 * q).min(1.0));
    let total = err_top.iter().filter(|&&b| b).count();
    let hit = err_top.iter().zip(&std_top).filter(|(e, s)| **e && **s).count();
    Ok(hit as f64 / total as f64)
}
