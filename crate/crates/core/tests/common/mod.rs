//! Random instance generators and brute-force oracles shared by the property
//! and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use adplan::domain::{Frame, Quad};
use adplan::feasibility::{lambda_bound, mu_bound};
use adplan::model::{
    Budget, ConstraintFamilies, Goal, Instance, LpProblem, Relation, Sense, TransportationInstance,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Uniform value in `[lo, hi)` rounded to `decimals` places.
pub fn decimal(rng: &mut impl Rng, lo: f64, hi: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (rng.random_range(lo..hi) * scale).round() / scale
}

/// Random LP with at most `max_n` variables and `max_m` rows. The first row
/// is a `≤` row with positive coefficients, so the region is bounded.
pub fn random_lp(rng: &mut impl Rng, max_n: usize, max_m: usize) -> LpProblem {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let sense = if rng.random_bool(0.5) {
        Sense::Maximize
    } else {
        Sense::Minimize
    };
    let mut lp = LpProblem::new(n, sense);
    lp.objective = (0..n).map(|_| decimal(rng, -1.0, 3.0, 2)).collect();
    let cap: Vec<f64> = (0..n).map(|_| decimal(rng, 0.1, 2.0, 2)).collect();
    lp.add_dense_row(&cap, Relation::Le, decimal(rng, 5.0, 20.0, 1));
    for _ in 1..m {
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { decimal(rng, -1.0, 2.0, 1) })
            .collect();
        let u: f64 = rng.random();
        if u < 0.7 {
            lp.add_dense_row(&row, Relation::Le, decimal(rng, 1.0, 20.0, 1));
        } else if u < 0.9 {
            lp.add_dense_row(&row, Relation::Ge, decimal(rng, 0.0, 5.0, 1));
        } else {
            lp.add_dense_row(&row, Relation::Eq, decimal(rng, 1.0, 10.0, 1));
        }
    }
    lp
}

fn combinations(pool: &[usize], k: usize, start: usize, current: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if current.len() == k {
        out(current);
        return;
    }
    for i in start..pool.len() {
        if pool.len() - i < k - current.len() {
            break;
        }
        current.push(pool[i]);
        combinations(pool, k, i + 1, current, out);
        current.pop();
    }
}

/// Best objective over all basic feasible solutions, or `None` when there
/// are none. Every `n`-subset of the rows and the bounds `x_j = 0` is solved
/// as a square system. Only valid for bounded problems.
pub fn enumerate_optimum(lp: &LpProblem) -> Option<f64> {
    let n = lp.num_vars();
    let rows = lp.rows.len();
    let dense: Vec<Vec<f64>> = lp
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![0.0; n];
            for (j, a) in &r.coeffs {
                v[*j] += a;
            }
            v
        })
        .collect();
    let tol = 1e-9;
    let mut best: Option<f64> = None;
    let candidates: Vec<usize> = (0..rows + n).collect();
    let mut chosen = Vec::with_capacity(n);
    combinations(&candidates, n, 0, &mut chosen, &mut |active: &[usize]| {
        let a = DMatrix::from_fn(n, n, |r, c| match active[r] {
            i if i < rows => dense[i][c],
            i => f64::from(u8::from(i - rows == c)),
        });
        let b = DVector::from_fn(n, |r, _| if active[r] < rows { lp.rows[active[r]].rhs } else { 0.0 });
        let lu = a.lu();
        if lu.determinant().abs() < 1e-12 {
            return;
        }
        let Some(x) = lu.solve(&b) else { return };
        if x.iter().any(|v| *v < -tol) {
            return;
        }
        let xs: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        if lp.rows.iter().any(|r| r.violation(&xs) > tol * r.rhs.abs().max(1.0)) {
            return;
        }
        let z = lp.objective_value(&xs);
        best = Some(match (best, lp.sense) {
            (None, _) => z,
            (Some(b), Sense::Maximize) => b.max(z),
            (Some(b), Sense::Minimize) => b.min(z),
        });
    });
    best
}

/// Balanced transportation instance of at most `max × max` with integer
/// supplies and demands and two-decimal unit values.
pub fn random_transport(rng: &mut impl Rng, max: usize) -> TransportationInstance {
    let m = rng.random_range(1..=max);
    let n = rng.random_range(1..=max);
    let supplies: Vec<f64> = (0..m).map(|_| rng.random_range(0..=20) as f64).collect();
    let total = supplies.iter().sum::<f64>() as u64;
    let mut demands = vec![0.0; n];
    for _ in 0..total {
        demands[rng.random_range(0..n)] += 1.0;
    }
    let values = (0..m)
        .map(|_| (0..n).map(|_| decimal(rng, 0.0, 20.0, 2)).collect())
        .collect();
    let goal = if rng.random_bool(0.5) { Goal::Minimize } else { Goal::Maximize };
    TransportationInstance::new(supplies, demands, values, goal).unwrap()
}

/// Random revenue-model instance over a random subset of a small grid.
/// Supplies are multiples of 0.5, profits have two decimals and budgets are
/// finite with probability 0.7.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let campaigns = rng.random_range(1..=4usize);
    let creatives = rng.random_range(1..=3usize);
    let locations = rng.random_range(1..=3usize);
    let frames = rng.random_range(1..=4u32);
    let mut admissible = BTreeSet::new();
    for i in 1..=campaigns {
        for j in 1..=creatives {
            for k in 1..=frames {
                for l in 1..=locations {
                    if rng.random_bool(0.6) {
                        admissible.insert(Quad::new(format!("C{i}"), format!("B{j}"), k, format!("L{l}")));
                    }
                }
            }
        }
    }
    if admissible.is_empty() {
        admissible.insert(Quad::new("C1", "B1", 1, "L1"));
    }
    let mut supply = BTreeMap::new();
    for l in 1..=locations {
        for k in 1..=frames {
            supply.insert((format!("L{l}").into(), Frame(k)), rng.random_range(0..=100) as f64 * 0.5);
        }
    }
    let mut demand = BTreeMap::new();
    for i in 1..=campaigns {
        let b = if rng.random_bool(0.7) {
            Budget::Finite(decimal(rng, 1.0, 60.0, 1))
        } else {
            Budget::Unbounded
        };
        demand.insert(format!("C{i}").into(), b);
    }
    let profit = admissible.iter().map(|q| (q.clone(), decimal(rng, 0.01, 2.0, 2))).collect();
    Instance {
        admissible: admissible.into_iter().collect(),
        supply,
        demand,
        profit,
        ..Default::default()
    }
}

/// Enables the lasting and learning families with every `μ` and `λ` at its
/// feasibility bound. About a third of the quads are flagged new.
pub fn at_bounds(rng: &mut impl Rng, mut inst: Instance) -> Instance {
    inst.families = ConstraintFamilies {
        lasting: true,
        overflow: false,
        learning: true,
    };
    for (i, k) in inst.admissible.campaign_frames() {
        let b = mu_bound(&inst, &i, k).unwrap();
        inst.mu.insert((i, k), b);
    }
    let flagged: Vec<Quad> = inst.admissible.iter().filter(|_| rng.random_bool(0.35)).cloned().collect();
    for q in flagged {
        let b = lambda_bound(&inst, &q).unwrap();
        inst.lambda.insert(q, b);
    }
    inst
}

/// `|a - b| <= tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
