//! Monotone minimizers: limited-memory BFGS and steepest descent, both with
//! projected backtracking (Armijo) line search. A step is only accepted if it
//! lowers the objective, so the value trace is strictly decreasing.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    QuasiNewton,
    GradientAscent,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::QuasiNewton => "quasi_newton",
            Method::GradientAscent => "gradient_ascent",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quasi_newton" | "lbfgs" => Ok(Method::QuasiNewton),
            "gradient_ascent" => Ok(Method::GradientAscent),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative change of the objective fell below the tolerance.
    Converged,
    MaxIterations,
    /// Gradient norm below 1e-8.
    SmallGradient,
    /// No decreasing step could be found along the search direction.
    LineSearchFailed,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::SmallGradient => "small_gradient",
            Termination::LineSearchFailed => "line_search_failed",
        })
    }
}

/// A differentiable function to minimize, optionally over a convex set.
pub trait Objective {
    /// Returns f(x) and writes ∇f(x) into `grad`.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Maps `x` onto the feasible set in place.
    fn project(&self, _x: &mut [f64]) {}
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// Stop once |Δf| / max(|f|, tiny) drops below this.
    pub tolerance: f64,
    /// Initial step of each gradient-descent line search.
    pub learning_rate: f64,
    /// Number of curvature pairs kept by the quasi-Newton method.
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::QuasiNewton,
            max_iterations: 500,
            tolerance: 1e-9,
            learning_rate: 1.0,
            history: 10,
        }
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Curvature {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns −H∇f.
fn lbfgs_direction(grad: &[f64], memory: &VecDeque<Curvature>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for m in memory.iter().rev() {
        let a = m.rho * dot(&m.s, &q);
        q.iter_mut().zip(&m.y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (m, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = m.rho * dot(&m.y, &q);
        q.iter_mut().zip(&m.s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

fn backtrack(
    objective: &dyn Objective,
    x: &[f64],
    value: f64,
    grad: &[f64],
    direction: &[f64],
    mut step: f64,
) -> Option<Trial> {
    let mut trial_grad = vec![0.0; x.len()];
    for _ in 0..MAX_BACKTRACKS {
        let mut trial: Vec<f64> = x.iter().zip(direction).map(|(x, d)| x + step * d).collect();
        objective.project(&mut trial);
        let decrease: f64 = grad
            .iter()
            .zip(trial.iter().zip(x))
            .map(|(g, (t, x))| g * (t - x))
            .sum();
        if decrease >= 0.0 {
            // projection killed the descent component
            step *= 0.5;
            continue;
        }
        let f = objective.evaluate(&trial, &mut trial_grad);
        if f.is_finite() && f <= value + ARMIJO * decrease && f < value {
            return Some(Trial {
                x: trial,
                value: f,
                grad: trial_grad,
            });
        }
        step *= 0.5;
    }
    None
}

/// Minimizes `objective` from `x0`. `on_accept(iteration, value)` is called
/// for the start point (iteration 0) and after every accepted step, right
/// after the accepted point was evaluated.
pub fn minimize(
    objective: &dyn Objective,
    x0: Vec<f64>,
    config: &OptimizerConfig,
    on_accept: &mut dyn FnMut(usize, f64),
) -> Result<Minimum> {
    let mut x = x0;
    objective.project(&mut x);
    let mut grad = vec![0.0; x.len()];
    let mut value = objective.evaluate(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { iteration: 0 });
    }
    on_accept(0, value);
    let mut trace = vec![value];
    let mut memory: VecDeque<Curvature> = VecDeque::with_capacity(config.history);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let gnorm = norm(&grad);
        if gnorm < GRADIENT_TOLERANCE {
            termination = Termination::SmallGradient;
            break;
        }
        let steepest: Vec<f64> = grad.iter().map(|g| -g).collect();
        let first_step = (1.0 / gnorm).min(1.0);

        let trial = match config.method {
            Method::GradientAscent => {
                backtrack(objective, &x, value, &grad, &steepest, config.learning_rate)
            }
            Method::QuasiNewton => {
                let mut found = None;
                if !memory.is_empty() {
                    let direction = lbfgs_direction(&grad, &memory);
                    if dot(&direction, &grad) < 0.0 {
                        found = backtrack(objective, &x, value, &grad, &direction, 1.0);
                    }
                }
                if found.is_none() {
                    memory.clear();
                    found = backtrack(objective, &x, value, &grad, &steepest, first_step);
                }
                found
            }
        };
        let Some(trial) = trial else {
            termination = Termination::LineSearchFailed;
            break;
        };
        if trial.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: iterations + 1,
            });
        }

        if config.method == Method::QuasiNewton {
            let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = trial.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
                if memory.len() == config.history {
                    memory.pop_front();
                }
                memory.push_back(Curvature { s, y, rho: 1.0 / sy });
            }
        }

        iterations += 1;
        let change = (value - trial.value).abs() / value.abs().max(f64::MIN_POSITIVE);
        x = trial.x;
        value = trial.value;
        grad = trial.grad;
        trace.push(value);
        on_accept(iterations, value);
        if change < config.tolerance {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(Minimum {
        x,
        value,
        trace,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = Σ a_i (x_i − b_i)² + (x_0 x_1)²
    struct Bowl;

    impl Objective for Bowl {
        fn evaluate(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let a = [1.0, 10.0, 0.5];
            let b = [1.0, -2.0, 3.0];
            let mut f = (x[0] * x[1]).powi(2);
            g[0] = 2.0 * x[0] * x[1] * x[1];
            g[1] = 2.0 * x[1] * x[0] * x[0];
            g[2] = 0.0;
            for i in 0..3 {
                f += a[i] * (x[i] - b[i]).powi(2);
                g[i] += 2.0 * a[i] * (x[i] - b[i]);
            }
            f
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn evaluate(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    /// Minimum of (x − 2)² subject to x ≤ 1 (projected).
    struct Clamped;

    impl Objective for Clamped {
        fn evaluate(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 2.0 * (x[0] - 2.0);
            (x[0] - 2.0).powi(2)
        }

        fn project(&self, x: &mut [f64]) {
            x[0] = x[0].min(1.0);
        }
    }

    fn run(obj: &dyn Objective, x0: Vec<f64>, method: Method) -> Minimum {
        let config = OptimizerConfig {
            method,
            max_iterations: 20_000,
            tolerance: 1e-15,
            ..Default::default()
        };
        minimize(obj, x0, &config, &mut |_, _| {}).unwrap()
    }

    #[test]
    fn quasi_newton_solves_rosenbrock() {
        let m = run(&Rosenbrock, vec![-1.2, 1.0], Method::QuasiNewton);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
        assert!(m.trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn both_methods_descend_monotonically() {
        for method in [Method::QuasiNewton, Method::GradientAscent] {
            let m = run(&Bowl, vec![5.0, 5.0, -5.0], method);
            assert!(m.trace.windows(2).all(|w| w[1] < w[0]));
            assert!(m.value < m.trace[0]);
        }
    }

    #[test]
    fn projection_respected() {
        let m = run(&Clamped, vec![-3.0], Method::QuasiNewton);
        assert!((m.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_returns_start() {
        let config = OptimizerConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let m = minimize(&Bowl, vec![0.0, 0.0, 0.0], &config, &mut |_, _| {}).unwrap();
        assert_eq!(m.trace.len(), 1);
        assert_eq!(m.x, vec![0.0, 0.0, 0.0]);
        assert_eq!(m.iterations, 0);
    }

    struct Broken;

    impl Objective for Broken {
        fn evaluate(&self, _: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 0.0;
            f64::INFINITY
        }
    }

    #[test]
    fn non_finite_start_reported() {
        let err = minimize(&Broken, vec![0.0], &OptimizerConfig::default(), &mut |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 0 }));
    }
}
