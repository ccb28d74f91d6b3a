use std::collections::VecDeque;

use log::debug;

use super::{LpSolution, SolverSettings, Status};
use crate::error::{Error, Result};
use crate::model::{Goal, TransportationInstance};

/// Spanning-tree basis over `m` supply nodes followed by `n` demand nodes.
struct Basis {
    m: usize,
    n: usize,
    /// Basic cells as `(supply, demand)`.
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    /// Northwest-corner rule. Each step advances exactly one of the two
    /// indices, so the staircase always has `m + n - 1` cells.
    fn northwest(supplies: &[f64], demands: &[f64]) -> Basis {
        let (m, n) = (supplies.len(), demands.len());
        let mut s = supplies.to_vec();
        let mut d = demands.to_vec();
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            cells.push((i, j));
            flow.push(x);
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { m, n, cells, flow }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (c, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, c));
            adj[self.m + j].push((i, c));
        }
        adj
    }

    /// Dual potentials with `u[0] = 0` and `u_i + v_j = c_ij` on basic cells.
    fn potentials(&self, cost: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        let mut queue = VecDeque::from([0]);
        pot[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &(next, c) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.cells[c];
                    pot[next] = cost[i][j] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        if pot.iter().any(|p| p.is_nan()) {
            return Err(Error::Numerical("transportation basis is not spanning".into()));
        }
        let v = pot.split_off(self.m);
        Ok((pot, v))
    }

    /// Cells on the tree path from supply node `i` to demand node `j`,
    /// starting at `i`.
    fn path(&self, i: usize, j: usize) -> Result<Vec<usize>> {
        let adj = self.adjacency();
        let target = self.m + j;
        let mut via = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, c) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    via[next] = Some((node, c));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let (prev, c) = via[node]
                .ok_or_else(|| Error::Numerical("no tree path for entering cell".into()))?;
            cells.push(c);
            node = prev;
        }
        cells.reverse();
        Ok(cells)
    }

    /// Flows implied by the tree for the given totals, by leaf elimination.
    fn flows_for(&self, supplies: &[f64], demands: &[f64]) -> Result<Vec<f64>> {
        let adj = self.adjacency();
        let mut remaining: Vec<f64> = supplies.iter().chain(demands).copied().collect();
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.cells.len()];
        let mut flow = vec![0.0; self.cells.len()];
        let mut leaves: Vec<usize> = (0..degree.len()).filter(|&v| degree[v] == 1).collect();
        while let Some(leaf) = leaves.pop() {
            if degree[leaf] != 1 {
                continue;
            }
            let Some(&(other, c)) = adj[leaf].iter().find(|(_, c)| !done[*c]) else {
                continue;
            };
            flow[c] = remaining[leaf];
            remaining[other] -= remaining[leaf];
            done[c] = true;
            degree[leaf] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        if done.iter().any(|d| !d) {
            return Err(Error::Numerical("transportation basis has a cycle".into()));
        }
        Ok(flow)
    }
}

/// Northwest-corner start followed by stepping-stone improvement with MODI
/// potentials. Degeneracy is removed by perturbing the supplies by `ε` and
/// the last demand by `m·ε`; final flows are recomputed on the optimal tree
/// from the unperturbed totals.
pub fn solve_transportation(t: &TransportationInstance, settings: &SolverSettings) -> Result<LpSolution> {
    settings.validate()?;
    let check = TransportationInstance::new(
        t.supplies.clone(),
        t.demands.clone(),
        t.values.clone(),
        t.goal,
    )?;
    if !check.is_balanced() {
        return Err(Error::Argument(format!(
            "transportation problem is unbalanced (supply {} vs demand {}); balance it first",
            t.total_supply(),
            t.total_demand()
        )));
    }
    let (m, n) = (t.supplies.len(), t.demands.len());
    if m == 0 || n == 0 {
        return Ok(LpSolution {
            status: Status::Optimal,
            values: Vec::new(),
            objective: 0.0,
            iterations: 0,
            basis: Vec::new(),
        });
    }
    let sign = match t.goal {
        Goal::Minimize => 1.0,
        Goal::Maximize => -1.0,
    };
    let cost: Vec<Vec<f64>> = t
        .values
        .iter()
        .map(|row| row.iter().map(|c| sign * c).collect())
        .collect();

    let scale = t.total_supply().max(1.0);
    let eps = 1e-10 * scale / (m + n) as f64;
    let mut supplies: Vec<f64> = t.supplies.iter().map(|s| s + eps).collect();
    let mut demands = t.demands.clone();
    demands[n - 1] += eps * m as f64;
    // Keep the perturbed totals exactly equal.
    let drift = supplies.iter().sum::<f64>() - demands.iter().sum::<f64>();
    supplies[m - 1] -= drift;

    let mut basis = Basis::northwest(&supplies, &demands);
    let cost_scale = cost.iter().flatten().fold(1.0_f64, |a, c| a.max(c.abs()));
    let tol = settings.opt_tol * cost_scale;
    let limit = settings.iteration_limit(m * n, m + n);
    let mut iterations = 0;
    let mut degenerate = 0;
    let mut bland = settings.pivot_rule == super::PivotRule::Bland;

    loop {
        let (u, v) = basis.potentials(&cost)?;
        let mut in_basis = vec![false; m * n];
        for &(i, j) in &basis.cells {
            in_basis[i * n + j] = true;
        }
        let mut entering: Option<(usize, usize, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let reduced = cost[i][j] - u[i] - v[j];
                if reduced < -tol {
                    if bland {
                        entering = Some((i, j, reduced));
                        break 'scan;
                    }
                    if entering.is_none_or(|(_, _, r)| reduced < r) {
                        entering = Some((i, j, reduced));
                    }
                }
            }
        }
        let Some((ei, ej, _)) = entering else {
            break;
        };
        if iterations >= limit {
            return Err(Error::IterationLimit {
                limit,
                best: Some(dense_flows(&basis, &basis.flow, n)),
            });
        }

        // Path cells alternate between losing and gaining flow, starting and
        // ending with a losing cell.
        let path = basis.path(ei, ej)?;
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &c in path.iter().step_by(2) {
            let f = basis.flow[c];
            let (li, lj) = basis.cells[c];
            let better = f < theta
                || (f == theta && leave != usize::MAX && {
                    let (bi, bj) = basis.cells[leave];
                    li * n + lj < bi * n + bj
                });
            if better {
                theta = f;
                leave = c;
            }
        }
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[c] -= theta;
            } else {
                basis.flow[c] += theta;
            }
        }
        basis.cells[leave] = (ei, ej);
        basis.flow[leave] = theta;
        iterations += 1;
        if theta <= 0.0 {
            degenerate += 1;
            if degenerate >= 2 * (m + n) {
                bland = true;
            }
        } else {
            degenerate = 0;
        }
    }

    let mut flow = basis.flows_for(&t.supplies, &t.demands)?;
    for f in &mut flow {
        if *f < 0.0 {
            *f = 0.0;
        }
    }
    let values = dense_flows(&basis, &flow, n);
    let objective = values
        .iter()
        .zip(t.values.iter().flatten())
        .map(|(x, c)| x * c)
        .sum();
    debug!("stepping stone finished after {iterations} pivots");
    let mut cells: Vec<usize> = basis.cells.iter().map(|&(i, j)| i * n + j).collect();
    cells.sort_unstable();
    Ok(LpSolution {
        status: Status::Optimal,
        values,
        objective,
        iterations,
        basis: cells,
    })
}

fn dense_flows(basis: &Basis, flow: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; basis.m * n];
    for (&(i, j), f) in basis.cells.iter().zip(flow) {
        x[i * n + j] = *f;
    }
    x
}
