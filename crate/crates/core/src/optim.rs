//! Thin wrapper over argmin's Nelder–Mead for small bounded problems.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;

use crate::error::{Error, Result};

/// Outcome of a simplex search.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
}

struct Problem<'a, F: Fn(&[f64]) -> f64> {
    f: &'a F,
    lower: &'a [f64],
    upper: &'a [f64],
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Problem<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        // out-of-box points are rejected with a huge cost instead of clamping
        let inside = x.iter().zip(self.lower.iter().zip(self.upper)).all(|(v, (lo, hi))| v >= lo && v <= hi);
        if !inside {
            return Ok(f64::MAX / 4.0);
        }
        let v = (self.f)(x);
        Ok(if v.is_finite() { v } else { f64::MAX / 4.0 })
    }
}

/// Minimises `f` from `x0` with initial simplex edges `step`, inside the box
/// `[lower, upper]`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iters: u64,
    tol: f64,
) -> Result<Minimum> {
    let n = x0.len();
    if step.len() != n || lower.len() != n || upper.len() != n || n == 0 {
        return Err(Error::invalid("nelder_mead: dimension mismatch"));
    }
    let mut simplex = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        // step inward if the vertex would leave the box
        v[i] = if x0[i] + step[i] <= upper[i] { x0[i] + step[i] } else { x0[i] - step[i] };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let problem = Problem { f, lower, upper };
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let state = res.state();
    let x =
        state.get_best_param().cloned().ok_or_else(|| Error::Numerical("nelder_mead produced no estimate".into()))?;
    Ok(Minimum { value: state.get_best_cost(), iterations: state.get_iter(), x })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(&f, &[-1.2, 1.0], &[0.5, 0.5], &[-5.0, -5.0], &[5.0, 5.0], 2000, 1e-14).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_box() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2);
        let m = nelder_mead(&f, &[0.0], &[0.5], &[-1.0], &[1.0], 500, 1e-12).unwrap();
        assert!(m.x[0] <= 1.0 && m.x[0] > 0.99);
    }
}
