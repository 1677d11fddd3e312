use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::Factor;
use crate::geometry::Twist;
use crate::solver::{linearize, Graph, Values};

/// Damping beyond this value means the system cannot be solved or improved.
pub const LAMBDA_CAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    /// Stop once the largest gradient entry falls below this.
    pub gradient_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_iterations", self.max_iterations as f64),
            ("initial_lambda", self.initial_lambda),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
            ("relative_cost_tolerance", self.relative_cost_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config {
                    path: format!("solver.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if self.lambda_up <= 1.0 || self.lambda_down <= 1.0 {
            return Err(Error::Config {
                path: "solver.lambda_up".into(),
                message: "lambda factors must exceed 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    /// Number of accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub wall_time: Duration,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Levenberg-Marquardt with `lambda * diag(J^T J)` damping and right retraction.
pub fn optimize(graph: &Graph, init: &Values, settings: &SolverSettings) -> Result<(Values, SolveStats)> {
    settings.validate()?;
    if graph.is_empty() {
        return Err(Error::Validation("cannot optimize an empty graph".into()));
    }
    let start = Instant::now();
    let mut values = init.clone();
    let mut lambda = settings.initial_lambda;
    let mut cost = graph.total_cost(&values)?;
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < settings.max_iterations {
        let eq = linearize(graph, &values)?;
        if eq.gradient.amax() < settings.gradient_tolerance || cost == 0.0 {
            converged = true;
            break;
        }
        loop {
            let Some(delta) = eq.solve_damped(lambda) else {
                lambda *= settings.lambda_up;
                if lambda > LAMBDA_CAP {
                    return Err(Error::IllConditioned { lambda });
                }
                continue;
            };
            let mut candidate = values.clone();
            for (k, id) in eq.ids.iter().enumerate() {
                let step = Twist::from_vector(&delta.fixed_rows::<6>(k * 6).into_owned());
                let pose = values.get(*id)?.retract(&step);
                candidate.set(*id, pose);
            }
            let new_cost = graph.total_cost(&candidate)?;
            if new_cost.is_finite() && new_cost <= cost {
                let decrease = (cost - new_cost) / cost;
                values = candidate;
                cost = new_cost;
                history.push(cost);
                iterations += 1;
                lambda = (lambda / settings.lambda_down).max(1e-15);
                if decrease < settings.relative_cost_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= settings.lambda_up;
            if lambda > LAMBDA_CAP {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    Ok((
        values,
        SolveStats {
            iterations,
            initial_cost,
            final_cost: cost,
            converged,
            wall_time: start.elapsed(),
            cost_history: history,
        },
    ))
}

/// Appends factors and new nodes, then re-optimizes warm-started from `prev`.
///
/// Stands in for incremental smoothing: the result matches a cold-start
/// [`optimize`] on the combined graph for well-conditioned problems.
pub fn incremental_update(
    graph: &mut Graph,
    new_factors: Vec<Factor>,
    new_values: &Values,
    prev: &Values,
    settings: &SolverSettings,
) -> Result<(Values, SolveStats)> {
    for id in new_values.ids() {
        if prev.contains(id) {
            return Err(Error::DuplicateNode(id));
        }
    }
    let mut seed = prev.clone();
    for (id, pose) in new_values.iter() {
        seed.insert(id, *pose)?;
    }
    if new_factors.is_empty() && new_values.is_empty() {
        let cost = graph.total_cost(&seed)?;
        return Ok((
            seed,
            SolveStats {
                iterations: 0,
                initial_cost: cost,
                final_cost: cost,
                converged: true,
                wall_time: Duration::ZERO,
                cost_history: vec![cost],
            },
        ));
    }
    for f in &new_factors {
        for id in f.keys().iter() {
            if !seed.contains(*id) {
                return Err(Error::MissingNode(*id));
            }
        }
    }
    graph.extend(new_factors);
    optimize(graph, &seed, settings)
}
