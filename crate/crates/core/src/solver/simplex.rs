use log::{debug, trace};

use super::{LpSolution, PivotRule, SolverSettings, Status};
use crate::error::{Error, Result};
use crate::model::{LpProblem, Relation, Sense};

const PIVOT_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Structural,
    Slack,
    Artificial,
}

/// Dense tableau in minimization form. Row `r` holds `B⁻¹A` followed by the
/// basic value; `cost` holds reduced costs followed by `-z`.
struct Tableau {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<ColumnKind>,
    n_structural: usize,
    /// Row scale factors in the original row order, for kept rows.
    row_scale: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
}

enum Built {
    Tableau(Tableau),
    /// A row with no coefficients contradicts its right-hand side.
    TriviallyInfeasible,
}

impl Tableau {
    fn build(problem: &LpProblem) -> Built {
        let n = problem.num_vars();
        struct Prepared {
            dense: Vec<f64>,
            relation: Relation,
            rhs: f64,
            scale: f64,
        }
        let mut prepared = Vec::with_capacity(problem.rows.len());
        for row in &problem.rows {
            let mut dense = vec![0.0; n];
            for (j, v) in &row.coeffs {
                dense[*j] += v;
            }
            let scale = dense.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                let ok = match row.relation {
                    Relation::Le => row.rhs >= 0.0,
                    Relation::Ge => row.rhs <= 0.0,
                    Relation::Eq => row.rhs == 0.0,
                };
                if !ok {
                    return Built::TriviallyInfeasible;
                }
                continue;
            }
            let mut rhs = row.rhs / scale;
            dense.iter_mut().for_each(|v| *v /= scale);
            let mut relation = row.relation;
            if rhs < 0.0 {
                rhs = -rhs;
                dense.iter_mut().for_each(|v| *v = -*v);
                relation = match relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            prepared.push(Prepared {
                dense,
                relation,
                rhs,
                scale,
            });
        }

        let m = prepared.len();
        let n_slack = prepared
            .iter()
            .filter(|p| p.relation != Relation::Eq)
            .count();
        let n_art = prepared
            .iter()
            .filter(|p| p.relation != Relation::Le)
            .count();
        let cols = n + n_slack + n_art;
        let width = cols + 1;
        let mut kinds = vec![ColumnKind::Structural; n];
        kinds.extend(std::iter::repeat_n(ColumnKind::Slack, n_slack));
        kinds.extend(std::iter::repeat_n(ColumnKind::Artificial, n_art));

        let mut a = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut next_slack = n;
        let mut next_art = n + n_slack;
        for (r, p) in prepared.iter().enumerate() {
            let row = &mut a[r * width..(r + 1) * width];
            row[..n].copy_from_slice(&p.dense);
            row[cols] = p.rhs;
            match p.relation {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[r] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
            }
        }
        Built::Tableau(Tableau {
            rows: m,
            cols,
            a,
            cost: vec![0.0; width],
            basis,
            kinds,
            n_structural: n,
            row_scale: prepared.iter().map(|p| p.scale).collect(),
        })
    }

    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, j: usize) -> f64 {
        self.a[r * self.width() + j]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn has_artificials(&self) -> bool {
        self.kinds.contains(&ColumnKind::Artificial)
    }

    /// Installs `costs` (minimization, one per column) and prices out the basis.
    fn set_costs(&mut self, costs: &[f64]) {
        let width = self.width();
        self.cost.iter_mut().for_each(|v| *v = 0.0);
        self.cost[..self.cols].copy_from_slice(costs);
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                let row = &self.a[r * width..(r + 1) * width];
                for (c, v) in self.cost.iter_mut().zip(row) {
                    *c -= cb * v;
                }
            }
        }
    }

    fn objective(&self) -> f64 {
        -self.cost[self.cols]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let width = self.width();
        let p = self.at(r, e);
        {
            let row = &mut self.a[r * width..(r + 1) * width];
            row.iter_mut().for_each(|v| *v /= p);
            row[e] = 1.0;
        }
        let (before, rest) = self.a.split_at_mut(r * width);
        let (pivot_row, after) = rest.split_at_mut(width);
        for chunk in before.chunks_exact_mut(width).chain(after.chunks_exact_mut(width)) {
            let f = chunk[e];
            if f != 0.0 {
                for (v, pr) in chunk.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pr;
                }
                chunk[e] = 0.0;
            }
        }
        let f = self.cost[e];
        if f != 0.0 {
            for (v, pr) in self.cost.iter_mut().zip(pivot_row.iter()) {
                *v -= f * pr;
            }
            self.cost[e] = 0.0;
        }
        self.basis[r] = e;
    }

    fn entering(&self, allowed: &[bool], bland: bool, opt_tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if !allowed[j] {
                continue;
            }
            let d = self.cost[j];
            if d < -opt_tol {
                if bland {
                    return Some(j);
                }
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Minimum-ratio row; ties go to the lowest basic variable index.
    fn leaving(&self, e: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows {
            let a = self.at(r, e);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(r).max(0.0) / a;
            best = match best {
                None => Some((r, ratio)),
                Some((br, b)) => {
                    if ratio < b - RATIO_TIE * b.max(1.0) {
                        Some((r, ratio))
                    } else if ratio <= b + RATIO_TIE * b.max(1.0)
                        && self.basis[r] < self.basis[br]
                    {
                        Some((r, ratio))
                    } else {
                        Some((br, b))
                    }
                }
            };
        }
        best
    }

    fn remove_row(&mut self, r: usize) {
        let width = self.width();
        self.a.drain(r * width..(r + 1) * width);
        self.basis.remove(r);
        self.rows -= 1;
    }

    fn structural_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_structural];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_structural {
                x[b] = self.rhs(r);
            }
        }
        x
    }
}

struct Run<'a> {
    settings: &'a SolverSettings,
    limit: usize,
    iterations: usize,
    degenerate_streak: usize,
    degenerate_cap: usize,
    bland: bool,
}

impl Run<'_> {
    fn optimize(&mut self, t: &mut Tableau, allowed: &[bool], phase_two: bool) -> Result<Step> {
        loop {
            let Some(e) = t.entering(allowed, self.bland, self.settings.opt_tol) else {
                return Ok(Step::Optimal);
            };
            let Some((r, ratio)) = t.leaving(e) else {
                return Ok(Step::Unbounded);
            };
            if self.iterations >= self.limit {
                let best = phase_two.then(|| t.structural_values());
                return Err(Error::IterationLimit {
                    limit: self.limit,
                    best,
                });
            }
            trace!("pivot row {r} col {e} ratio {ratio:e}");
            t.pivot(r, e);
            self.iterations += 1;
            if ratio <= RATIO_TIE {
                self.degenerate_streak += 1;
                if !self.bland && self.degenerate_streak >= self.degenerate_cap {
                    debug!(
                        "switching to Bland's rule after {} degenerate pivots",
                        self.degenerate_streak
                    );
                    self.bland = true;
                }
            } else {
                self.degenerate_streak = 0;
            }
        }
    }
}

/// Runs phase 1 and leaves a basis with no artificial column at a positive
/// level. Returns `false` when the problem is infeasible.
fn phase_one(t: &mut Tableau, run: &mut Run<'_>) -> Result<bool> {
    if !t.has_artificials() {
        return Ok(true);
    }
    let costs: Vec<f64> = t
        .kinds
        .iter()
        .map(|k| if *k == ColumnKind::Artificial { 1.0 } else { 0.0 })
        .collect();
    t.set_costs(&costs);
    let allowed = vec![true; t.cols];
    match run.optimize(t, &allowed, false)? {
        Step::Optimal => {}
        Step::Unbounded => {
            return Err(Error::Numerical("phase 1 reported an unbounded ray".into()))
        }
    }
    if t.objective() > run.settings.feas_tol {
        debug!("phase 1 optimum {:e} > tolerance", t.objective());
        return Ok(false);
    }
    // Drive zero-level artificials out of the basis; rows with no usable
    // pivot are linearly dependent and dropped.
    let mut r = 0;
    while r < t.rows {
        if t.kinds[t.basis[r]] != ColumnKind::Artificial {
            r += 1;
            continue;
        }
        let candidate = (0..t.cols)
            .filter(|&j| t.kinds[j] != ColumnKind::Artificial)
            .max_by(|&x, &y| t.at(r, x).abs().total_cmp(&t.at(r, y).abs()))
            .filter(|&j| t.at(r, j).abs() > PIVOT_TOL);
        match candidate {
            Some(j) => {
                t.pivot(r, j);
                r += 1;
            }
            None => t.remove_row(r),
        }
    }
    Ok(true)
}

fn new_run<'a>(settings: &'a SolverSettings, t: &Tableau) -> Run<'a> {
    let nm = t.n_structural + t.rows;
    Run {
        settings,
        limit: settings.iteration_limit(t.n_structural, t.rows),
        iterations: 0,
        degenerate_streak: 0,
        degenerate_cap: 2 * nm.max(1),
        bland: settings.pivot_rule == PivotRule::Bland,
    }
}

/// Two-phase primal simplex on a dense, row-scaled tableau.
pub fn solve_simplex(problem: &LpProblem, settings: &SolverSettings) -> Result<LpSolution> {
    problem.validate()?;
    settings.validate()?;
    let infeasible = |iterations| LpSolution {
        status: Status::Infeasible,
        values: Vec::new(),
        objective: f64::NAN,
        iterations,
        basis: Vec::new(),
    };
    let mut t = match Tableau::build(problem) {
        Built::Tableau(t) => t,
        Built::TriviallyInfeasible => return Ok(infeasible(0)),
    };
    let mut run = new_run(settings, &t);
    if !phase_one(&mut t, &mut run)? {
        return Ok(infeasible(run.iterations));
    }

    let sign = match problem.sense {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    let mut costs = vec![0.0; t.cols];
    for (c, o) in costs.iter_mut().zip(&problem.objective) {
        *c = sign * o;
    }
    t.set_costs(&costs);
    let allowed: Vec<bool> = t
        .kinds
        .iter()
        .map(|k| *k != ColumnKind::Artificial)
        .collect();
    run.degenerate_streak = 0;
    let step = run.optimize(&mut t, &allowed, true)?;
    if let Step::Unbounded = step {
        return Ok(LpSolution {
            status: Status::Unbounded,
            values: Vec::new(),
            objective: sign * f64::NEG_INFINITY,
            iterations: run.iterations,
            basis: t.basis.clone(),
        });
    }

    let mut x = t.structural_values();
    for v in &mut x {
        if *v < 0.0 && *v > -settings.feas_tol {
            *v = 0.0;
        }
    }
    let worst = problem
        .rows
        .iter()
        .map(|row| {
            let scale = row.coeffs.iter().fold(0.0_f64, |m, (_, a)| m.max(a.abs()));
            if scale == 0.0 {
                0.0
            } else {
                row.violation(&x) / scale
            }
        })
        .fold(0.0, f64::max);
    let check_tol = (1e3 * settings.feas_tol).max(1e-6);
    if worst > check_tol || x.iter().any(|v| *v < -check_tol) {
        return Err(Error::Numerical(format!(
            "optimal basis violates a constraint by {worst:e} (scaled)"
        )));
    }
    debug!(
        "simplex optimal after {} pivots ({} rows, {} columns, scales {}..{})",
        run.iterations,
        t.rows,
        t.cols,
        t.row_scale.iter().copied().fold(f64::INFINITY, f64::min),
        t.row_scale.iter().copied().fold(0.0, f64::max),
    );
    Ok(LpSolution {
        status: Status::Optimal,
        objective: problem.objective_value(&x),
        values: x,
        iterations: run.iterations,
        basis: t.basis.clone(),
    })
}

/// Phase 1 only: a point satisfying every row and `x ≥ 0`, or `None` when the
/// constraint set is empty.
pub fn find_feasible_point(problem: &LpProblem, settings: &SolverSettings) -> Result<Option<Vec<f64>>> {
    problem.validate()?;
    settings.validate()?;
    let mut t = match Tableau::build(problem) {
        Built::Tableau(t) => t,
        Built::TriviallyInfeasible => return Ok(None),
    };
    let mut run = new_run(settings, &t);
    if !phase_one(&mut t, &mut run)? {
        return Ok(None);
    }
    let x: Vec<f64> = t.structural_values().into_iter().map(|v| v.max(0.0)).collect();
    Ok(Some(x))
}
