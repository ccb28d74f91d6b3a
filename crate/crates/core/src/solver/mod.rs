//! Linear programming solvers: a dense two-phase primal simplex and a
//! northwest-corner/stepping-stone method for balanced transportation
//! problems.

mod simplex;
mod transport;

pub use simplex::{find_feasible_point, solve_simplex};
pub use transport::solve_transportation;

use crate::error::Result;
use crate::model::{lex_epsilon, LexicographicModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Entering-variable rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Dantzig's most-negative reduced cost, falling back to Bland's rule
    /// after `2·(n+m)` consecutive degenerate pivots.
    #[default]
    DantzigThenBland,
    /// Bland's lowest-index rule throughout.
    Bland,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// Primal feasibility tolerance on scaled rows.
    pub feas_tol: f64,
    /// Reduced-cost optimality tolerance.
    pub opt_tol: f64,
    /// Pivot limit; `None` means `50·(n+m)`.
    pub max_iterations: Option<usize>,
    pub pivot_rule: PivotRule,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-8,
            opt_tol: 1e-9,
            max_iterations: None,
            pivot_rule: PivotRule::DantzigThenBland,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.opt_tol > 0.0) {
            return Err(crate::Error::Argument("solver tolerances must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn iteration_limit(&self, n: usize, m: usize) -> usize {
        self.max_iterations.unwrap_or(50 * (n + m).max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: Status,
    /// Values of the problem's variables (empty unless optimal).
    pub values: Vec<f64>,
    /// Objective in the problem's own sense.
    pub objective: f64,
    pub iterations: usize,
    /// Column indices basic at termination.
    pub basis: Vec<usize>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Outcome of the two-stage revenue-then-impressions solve.
#[derive(Clone, Debug, PartialEq)]
pub struct LexicographicSolution {
    pub revenue_optimum: f64,
    pub stage1: LpSolution,
    pub stage2: LpSolution,
}

pub fn solve_lexicographic(
    model: &LexicographicModel,
    settings: &SolverSettings,
) -> Result<LexicographicSolution> {
    let stage1 = solve_simplex(&model.stage1, settings)?;
    match stage1.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(crate::Error::Infeasible),
        Status::Unbounded => return Err(crate::Error::Unbounded),
    }
    let f_star = stage1.objective;
    let stage2 = solve_simplex(&model.stage2(f_star), settings)?;
    if !stage2.is_optimal() {
        return Err(crate::Error::Numerical(format!(
            "stage 2 returned {:?} after stage 1 reached {f_star} (floor tolerance {})",
            stage2.status,
            lex_epsilon(f_star)
        )));
    }
    Ok(LexicographicSolution {
        revenue_optimum: f_star,
        stage1,
        stage2,
    })
}
