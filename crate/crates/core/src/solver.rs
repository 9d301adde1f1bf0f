//! Projected subgradient descent on the W1 alignment objective.
//!
//! This is a slow reference used to bound how far the closed-form
//! alignment is from the optimum on small images. Brightness is kept
//! continuous inside the loop:
//!
//! `v(x) = (1 - α - β) I_b + α J_b + β A_b`
//!
//! and the objective is the W1 distance between the empirical measure of
//! `v` and the target, both sampled on the midpoint quantile grid.

use crate::alignment::MixWeights;
use crate::density::{to_quantile, DensityHistogram, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::image::{check_dims, BrightnessImage};

/// Largest image side accepted by [`pgd_solve`].
pub const MAX_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Base step; `None` means `50 / |Ω|`. Iteration `t` moves a pixel's
    /// brightness by up to `step_size · |Ω| / t` levels.
    pub step_size: Option<f64>,
    pub max_iters: usize,
    /// Wasserstein order. Only 1 is supported.
    pub p: f64,
    /// Stop when the relative objective change falls below this.
    pub tolerance: f64,
    pub grid: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: None,
            max_iters: 500,
            p: 1.0,
            tolerance: 1e-6,
            grid: DEFAULT_GRID,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if let Some(s) = self.step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("step size must be positive"));
            }
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if self.p != 1.0 {
            return Err(Error::invalid("the reference solver supports p = 1 only"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be nonnegative"));
        }
        if self.grid < 1 {
            return Err(Error::invalid("grid size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub weights: MixWeights,
    /// Objective of the returned weights.
    pub objective: f64,
    /// Objective after each iteration, including the initial point.
    pub history: Vec<f64>,
    pub iterations: usize,
}

struct Problem<'a> {
    hazy: &'a [u8],
    clean: &'a [u8],
    airlight: f64,
    target_q: Vec<f64>,
    /// Sorted position sampled by each grid point.
    grid_index: Vec<usize>,
}

impl Problem<'_> {
    fn brightness(&self, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
        (0..self.hazy.len())
            .map(|i| {
                let ib = f64::from(self.hazy[i]);
                let jb = f64::from(self.clean[i]);
                (1.0 - alpha[i] - beta[i]) * ib + alpha[i] * jb + beta[i] * self.airlight
            })
            .collect()
    }

    /// Objective and, optionally, its subgradient with respect to `v`.
    fn evaluate(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let m = self.target_q.len() as f64;
        let mut obj = 0.0;
        let mut g_sorted = vec![0.0; v.len()];
        for (&j, &q) in self.grid_index.iter().zip(&self.target_q) {
            let d = v[order[j]] - q;
            obj += d.abs();
            g_sorted[j] += d.signum() * f64::from(u8::from(d != 0.0)) / m;
        }
        if let Some(g) = grad {
            for (j, &i) in order.iter().enumerate() {
                g[i] = g_sorted[j];
            }
        }
        obj / m
    }
}

/// Clamps to the box, rescales pairs with `α + β > 1`, then rewrites any
/// pair with both weights active as the single weight giving the same
/// brightness so that `α β = 0` holds.
fn project(alpha: &mut [f64], beta: &mut [f64], hazy: &[u8], clean: &[u8], airlight: f64) {
    for i in 0..alpha.len() {
        let (mut a, mut b) = (alpha[i].max(0.0), beta[i].max(0.0));
        let s = a + b;
        if s > 1.0 {
            a /= s;
            b /= s;
        }
        if a > 0.0 && b > 0.0 {
            let ib = f64::from(hazy[i]);
            let down = ib - f64::from(clean[i]);
            let up = airlight - ib;
            let shift = b * up - a * down;
            (a, b) = if shift < 0.0 && down > 0.0 {
                ((-shift / down).min(1.0), 0.0)
            } else if shift > 0.0 && up > 0.0 {
                (0.0, (shift / up).min(1.0))
            } else {
                (0.0, 0.0)
            };
        }
        alpha[i] = a;
        beta[i] = b;
    }
}

/// Minimizes `W1(μ_v, target)` over feasible mix weights, starting from
/// `α = β = 0`, and returns the best iterate.
pub fn pgd_solve(
    hazy_b: &BrightnessImage,
    clean_b: &BrightnessImage,
    airlight_b: u8,
    target: &DensityHistogram,
    cfg: &SolverConfig,
) -> Result<SolverOutcome> {
    cfg.validate()?;
    check_dims(hazy_b.dims(), clean_b.dims())?;
    let (w, h) = hazy_b.dims();
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::invalid(format!(
            "reference solver accepts at most {MAX_SIDE}×{MAX_SIDE} images, got {w}×{h}"
        )));
    }
    if airlight_b < hazy_b.max_value() {
        return Err(Error::invalid("airlight brightness is below the image maximum"));
    }
    let n = hazy_b.len();
    let m = cfg.grid;
    // Sorted index sampled by u = (k + 0.5)/m: ceil(u n) - 1, in integers.
    let grid_index = (0..m)
        .map(|k| ((2 * k + 1) * n).div_ceil(2 * m) - 1)
        .collect();
    let problem = Problem {
        hazy: hazy_b.as_raw(),
        clean: clean_b.as_raw(),
        airlight: f64::from(airlight_b),
        target_q: to_quantile(target, m)?.values().to_vec(),
        grid_index,
    };
    // Brightness moved by a fully-signed pixel on the first iteration.
    let step_levels = cfg.step_size.unwrap_or(50.0 / n as f64) * n as f64;

    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut obj = problem.evaluate(&problem.brightness(&alpha, &beta), Some(&mut grad));
    let mut best = (obj, alpha.clone(), beta.clone());
    let mut history = vec![obj];
    let mut iterations = 0;
    while iterations < cfg.max_iters && best.0 > 0.0 {
        iterations += 1;
        let eta = step_levels / iterations as f64;
        for i in 0..n {
            // The subgradient routed to a pixel is at most 1/n in magnitude;
            // scaling each coordinate by n / slope² makes one step move the
            // pixel's brightness by at most `eta` levels along either weight.
            let ib = f64::from(problem.hazy[i]);
            let toward = grad[i] * n as f64 * eta;
            let down = f64::from(problem.clean[i]) - ib;
            let up = problem.airlight - ib;
            if down != 0.0 {
                alpha[i] -= toward / down;
            }
            if up != 0.0 {
                beta[i] -= toward / up;
            }
        }
        project(&mut alpha, &mut beta, problem.hazy, problem.clean, problem.airlight);
        let prev = obj;
        obj = problem.evaluate(&problem.brightness(&alpha, &beta), Some(&mut grad));
        history.push(obj);
        if obj < best.0 {
            best = (obj, alpha.clone(), beta.clone());
        }
        if (prev - obj).abs() <= cfg.tolerance * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (objective, alpha, beta) = best;
    Ok(SolverOutcome {
        weights: MixWeights::new(w, h, alpha, beta)?,
        objective,
        history,
        iterations,
    })
}
