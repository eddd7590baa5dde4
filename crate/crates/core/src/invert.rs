//! Regularized least-squares inversion with FISTA.
//!
//! Minimizes `1/2 ||A x - y||^2 + alpha^2 P(x)` where `P` is either the L2
//! norm or its square, optionally restricted to `x >= 0`. Momentum restarts
//! whenever a step would increase the objective, so the objective trace is
//! non-increasing.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acoustics::{PropagationOperator, RfData};
use crate::error::{Error, Result};
use crate::grid::{GroundTruthImage, Image};
use crate::operator::{dot, norm, LinearOperator};

/// Safety margin applied to the power-iteration eigenvalue.
pub const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `alpha^2 ||x||`
    L2Norm,
    /// `alpha^2 ||x||^2`
    #[default]
    L2Squared,
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::L2Norm => "l2_norm",
            Penalty::L2Squared => "l2_squared",
        })
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2_norm" => Ok(Penalty::L2Norm),
            "l2_squared" => Ok(Penalty::L2Squared),
            other => Err(Error::Config(vec![format!("unknown penalty {other:?}, expected l2_norm or l2_squared")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaConfig {
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease drops below this.
    pub rel_tol: f64,
    pub penalty: Penalty,
    pub nonnegativity: bool,
    /// Skip power iteration and use this Lipschitz constant.
    pub lipschitz: Option<f64>,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig {
            alpha: 0.0,
            max_iters: 200,
            rel_tol: 1e-6,
            penalty: Penalty::L2Squared,
            nonnegativity: false,
            lipschitz: None,
            power_iters: 30,
            seed: 0,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            errs.push(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.max_iters < 1 {
            errs.push("max_iters must be >= 1".into());
        }
        if !(self.rel_tol > 0.0) {
            errs.push(format!("rel_tol must be > 0, got {}", self.rel_tol));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                errs.push(format!("lipschitz must be positive, got {l}"));
            }
        }
        if self.lipschitz.is_none() && self.power_iters < 5 {
            errs.push("power_iters must be >= 5".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Objective before the first step, then after each iteration.
    pub objective: Vec<f64>,
    /// `||A x - y|| / ||y||`.
    pub relative_residual: f64,
    pub lipschitz: f64,
    pub restarts: usize,
}

/// Power iteration on `A^T A` from a seeded Gaussian start; returns the
/// largest eigenvalue times [`LIPSCHITZ_MARGIN`].
pub fn estimate_lipschitz(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    if iters < 5 {
        return Err(Error::Config(vec![format!("power iterations must be >= 5, got {iters}")]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.domain_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|e| *e /= n0);
    let mut av = vec![0.0; op.range_len()];
    let mut w = vec![0.0; op.domain_len()];
    let mut lambda = 0.0;
    for _ in 0..iters {
        op.apply(&v, &mut av);
        op.adjoint(&av, &mut w);
        lambda = norm(&w);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DegenerateOperator);
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / lambda;
        }
    }
    Ok(lambda * LIPSCHITZ_MARGIN)
}

struct Problem<'a> {
    op: &'a dyn LinearOperator,
    y: &'a [f64],
    cfg: &'a FistaConfig,
    lipschitz: f64,
}

impl Problem<'_> {
    fn objective(&self, x: &[f64], ax: &[f64]) -> f64 {
        let r2: f64 = ax.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum();
        let a2 = self.cfg.alpha * self.cfg.alpha;
        let p = match self.cfg.penalty {
            Penalty::L2Norm => norm(x),
            Penalty::L2Squared => dot(x, x),
        };
        0.5 * r2 + a2 * p
    }

    /// Proximal gradient step from `y` (with `ay = A y` precomputed).
    fn step(&self, y: &[f64], ay: &[f64], resid: &mut [f64], grad: &mut [f64]) -> Vec<f64> {
        for ((r, a), b) in resid.iter_mut().zip(ay).zip(self.y) {
            *r = a - b;
        }
        self.op.adjoint(resid, grad);
        let inv_l = 1.0 / self.lipschitz;
        let mut x: Vec<f64> = y.iter().zip(grad.iter()).map(|(v, g)| v - inv_l * g).collect();
        if self.cfg.nonnegativity {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let a2 = self.cfg.alpha * self.cfg.alpha;
        match self.cfg.penalty {
            Penalty::L2Squared => {
                let s = self.lipschitz / (self.lipschitz + 2.0 * a2);
                x.iter_mut().for_each(|v| *v *= s);
            }
            Penalty::L2Norm => {
                let n = norm(&x);
                let s = if n > 0.0 { (1.0 - a2 / (self.lipschitz * n)).max(0.0) } else { 0.0 };
                x.iter_mut().for_each(|v| *v *= s);
            }
        }
        x
    }
}

/// FISTA from `x = 0`.
pub fn fista_solve(y: &[f64], op: &dyn LinearOperator, cfg: &FistaConfig) -> Result<(Vec<f64>, SolveReport)> {
    fista_solve_from(y, op, cfg, &vec![0.0; op.domain_len()])
}

pub fn fista_solve_from(
    y: &[f64],
    op: &dyn LinearOperator,
    cfg: &FistaConfig,
    x0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    if y.len() != op.range_len() || x0.len() != op.domain_len() {
        return Err(Error::ShapeMismatch(
            vec![y.len(), x0.len()],
            vec![op.range_len(), op.domain_len()],
        ));
    }
    let lipschitz = match cfg.lipschitz {
        Some(l) => l,
        None => estimate_lipschitz(op, cfg.power_iters, cfg.seed)?,
    };
    let pb = Problem { op, y, cfg, lipschitz };
    let mut resid = vec![0.0; op.range_len()];
    let mut grad = vec![0.0; op.domain_len()];

    let mut x = x0.to_vec();
    let mut ax = op.apply_vec(&x);
    let mut f = pb.objective(&x, &ax);
    if !f.is_finite() {
        return Err(Error::Diverged(0));
    }
    let mut yk = x.clone();
    let mut ayk = ax.clone();
    let mut t = 1.0_f64;
    let mut trace = vec![f];
    let mut restarts = 0;
    let mut iterations = 0;

    for k in 1..=cfg.max_iters {
        iterations = k;
        let mut x_new = pb.step(&yk, &ayk, &mut resid, &mut grad);
        let mut ax_new = op.apply_vec(&x_new);
        let mut f_new = pb.objective(&x_new, &ax_new);
        if !f_new.is_finite() {
            return Err(Error::Diverged(k));
        }
        if f_new > f {
            // restart: plain proximal-gradient step from the current iterate
            restarts += 1;
            t = 1.0;
            x_new = pb.step(&x, &ax, &mut resid, &mut grad);
            ax_new = op.apply_vec(&x_new);
            f_new = pb.objective(&x_new, &ax_new);
            if !f_new.is_finite() {
                return Err(Error::Diverged(k));
            }
            if f_new > f {
                // no descent possible at this step size
                trace.push(f);
                break;
            }
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        for i in 0..yk.len() {
            yk[i] = x_new[i] + beta * (x_new[i] - x[i]);
        }
        for i in 0..ayk.len() {
            ayk[i] = ax_new[i] + beta * (ax_new[i] - ax[i]);
        }
        let rel = if f > 0.0 { (f - f_new) / f } else { 0.0 };
        x = x_new;
        ax = ax_new;
        f = f_new;
        t = t_new;
        trace.push(f);
        if f == 0.0 || rel < cfg.rel_tol {
            break;
        }
    }

    let ynorm = norm(y);
    let rnorm = ax.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let report = SolveReport {
        iterations,
        objective: trace,
        relative_residual: if ynorm > 0.0 { rnorm / ynorm } else { rnorm },
        lipschitz,
        restarts,
    };
    Ok((x, report))
}

/// Deconvolves an RF record into an image on the operator grid.
pub fn deconvolve(rf: &RfData, op: &PropagationOperator, cfg: &FistaConfig) -> Result<(GroundTruthImage, SolveReport)> {
    op.check_rf(rf)?;
    let y: Vec<f64> = rf.samples.iter().copied().collect();
    let (x, report) = fista_solve(&y, op, cfg)?;
    let img = Image::new(Array2::from_shape_vec(op.grid().shape(), x).expect("domain"), *op.grid())?;
    Ok((img, report))
}
