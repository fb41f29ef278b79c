//! Bound-constrained Nelder–Mead maximisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Converged when the objective spread over the simplex falls below this.
    pub f_tol: f64,
    /// Initial simplex edge as a fraction of each parameter's bound width.
    pub initial_step: f64,
    /// Fresh simplices started from the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-6,
            initial_step: 0.05,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub initial_f: f64,
    pub evals: usize,
    pub converged: bool,
    /// Every finite evaluation lay within `f_tol` of the others.
    pub no_improvement: bool,
    /// Indices of coordinates that ended on a bound.
    pub at_bound: Vec<usize>,
    /// Best objective value after each evaluation.
    pub trace: Vec<f64>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Counter<'a, F> {
    f: &'a mut F,
    bounds: &'a [(f64, f64)],
    evals: usize,
    max_evals: usize,
    best: f64,
    best_x: Vec<f64>,
    lo_f: f64,
    hi_f: f64,
    trace: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> Counter<'_, F> {
    /// Negated objective at the projected point, so the simplex minimises.
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        for (v, &(lo, hi)) in x.iter_mut().zip(self.bounds) {
            *v = v.clamp(lo, hi);
        }
        let value = (self.f)(x);
        self.evals += 1;
        if value.is_finite() {
            self.lo_f = self.lo_f.min(value);
            self.hi_f = self.hi_f.max(value);
        }
        if value > self.best || self.best_x.is_empty() {
            self.best = value;
            self.best_x = x.to_vec();
        }
        self.trace.push(self.best);
        if value.is_nan() {
            f64::INFINITY
        } else {
            -value
        }
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }
}

fn step_size(x: f64, (lo, hi): (f64, f64), frac: f64) -> f64 {
    let width = hi - lo;
    if width.is_finite() {
        frac * width
    } else {
        frac * x.abs().max(1.0)
    }
}

/// One simplex run from `x0`; returns whether the spread criterion was met.
fn run_simplex<F: FnMut(&[f64]) -> f64>(counter: &mut Counter<'_, F>, x0: &[f64], config: &NelderMeadConfig) -> bool {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    let f0 = counter.eval(&mut start);
    simplex.push((start, f0));
    for i in 0..d {
        let mut x = x0.to_vec();
        let h = step_size(x0[i], counter.bounds[i], config.initial_step);
        x[i] = if x0[i] + h <= counter.bounds[i].1 { x0[i] + h } else { x0[i] - h };
        let fx = counter.eval(&mut x);
        simplex.push((x, fx));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if worst.is_finite() && worst - best <= config.f_tol {
            return true;
        }
        if counter.exhausted() {
            return false;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + coef * (c - w)).collect()
        };
        let worst_x = simplex[d].0.clone();
        let mut xr = toward(REFLECT, &worst_x);
        let fr = counter.eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = toward(EXPAND, &worst_x);
            let fe = counter.eval(&mut xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (mut xc, fc) = if fr < worst {
            let mut xc = toward(CONTRACT, &worst_x);
            let fc = counter.eval(&mut xc);
            (xc, fc)
        } else {
            let mut xc = toward(-CONTRACT, &worst_x);
            let fc = counter.eval(&mut xc);
            (xc, fc)
        };
        if fc < worst.min(fr) {
            simplex[d] = (std::mem::take(&mut xc), fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x.iter().zip(&vertex.0).map(|(b, v)| b + SHRINK * (v - b)).collect();
            let fx = counter.eval(&mut x);
            *vertex = (x, fx);
            if counter.exhausted() {
                return false;
            }
        }
    }
}

/// Maximise `f` over the box `bounds` from `x0`. Points are projected onto
/// the box before evaluation; `−∞` and NaN values count as rejections.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    config: &NelderMeadConfig,
) -> Result<OptimResult> {
    if x0.is_empty() || x0.len() != bounds.len() {
        return Err(Error::dims(format!("{} start values for {} bounds", x0.len(), bounds.len())));
    }
    if config.max_evals == 0 || !(config.f_tol > 0.0) || !(config.initial_step > 0.0) {
        return Err(Error::invalid("need max_evals >= 1, f_tol > 0 and initial_step > 0"));
    }
    let mut counter = Counter {
        f: &mut f,
        bounds,
        evals: 0,
        max_evals: config.max_evals,
        best: f64::NEG_INFINITY,
        best_x: Vec::new(),
        lo_f: f64::INFINITY,
        hi_f: f64::NEG_INFINITY,
        trace: Vec::new(),
    };
    let mut x = x0.to_vec();
    let initial_f = -counter.eval(&mut x);
    if !initial_f.is_finite() {
        return Err(Error::InitInvalid(format!("objective is {initial_f} at the start point")));
    }

    let mut converged = run_simplex(&mut counter, x0, config);
    let mut restarts = 0;
    while converged && restarts < config.restarts && !counter.exhausted() {
        let before = counter.best;
        let start = counter.best_x.clone();
        converged = run_simplex(&mut counter, &start, config);
        restarts += 1;
        if counter.best - before <= config.f_tol {
            break;
        }
    }

    let at_bound = counter
        .best_x
        .iter()
        .zip(bounds)
        .enumerate()
        .filter(|(_, (&v, &(lo, hi)))| {
            let tol = 1e-6 * if (hi - lo).is_finite() { hi - lo } else { 1.0 };
            (v - lo).abs() <= tol || (hi - v).abs() <= tol
        })
        .map(|(i, _)| i)
        .collect();
    Ok(OptimResult {
        x: counter.best_x.clone(),
        f: counter.best,
        initial_f,
        evals: counter.evals,
        converged,
        no_improvement: counter.hi_f - counter.lo_f <= config.f_tol,
        at_bound,
        trace: counter.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_peak() {
        let f = |x: &[f64]| -((x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2));
        let cfg = NelderMeadConfig {
            f_tol: 1e-14,
            ..Default::default()
        };
        let res = nelder_mead(f, &[0.0, 0.0], &[(-2.0, 2.0), (-2.0, 2.0)], &cfg).unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 0.3).abs() < 1e-5 && (res.x[1] + 0.7).abs() < 1e-5);
        assert!(res.f >= res.initial_f);
        assert!(res.at_bound.is_empty());
    }

    #[test]
    fn peak_outside_box_ends_on_bound() {
        let f = |x: &[f64]| -(x[0] - 5.0).powi(2);
        let res = nelder_mead(f, &[0.5], &[(0.0, 1.0)], &NelderMeadConfig::default()).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-9);
        assert_eq!(res.at_bound, vec![0]);
    }

    #[test]
    fn flat_objective_is_flagged() {
        let res = nelder_mead(|_: &[f64]| 1.0, &[0.5, 0.5], &[(0.0, 1.0), (0.0, 1.0)], &NelderMeadConfig::default()).unwrap();
        assert!(res.no_improvement);
    }

    #[test]
    fn rejects_infinite_start() {
        let err = nelder_mead(|_: &[f64]| f64::NEG_INFINITY, &[0.5], &[(0.0, 1.0)], &NelderMeadConfig::default());
        assert!(matches!(err, Err(Error::InitInvalid(_))));
    }

    #[test]
    fn avoids_rejected_region() {
        let f = |x: &[f64]| if x[0] > 0.8 { f64::NEG_INFINITY } else { -(x[0] - 0.9).powi(2) };
        let res = nelder_mead(f, &[0.2], &[(0.0, 1.0)], &NelderMeadConfig::default()).unwrap();
        assert!(res.x[0] <= 0.8 && res.x[0] > 0.79);
    }
}
