//! Translation of an [`Instance`] into standard-form linear programs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::domain::{AdmissibleSet, CampaignId, Configuration, Frame, LocationId, Quad};
use crate::error::{Error, Result};

/// Campaign budget `D_i`. Unbounded budgets emit no demand row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Finite(f64),
    Unbounded,
}

impl Budget {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Budget::Finite(v) => Some(*v),
            Budget::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Budget::Unbounded)
    }

    /// `self / divisor`, where an unbounded budget stays unbounded.
    pub(crate) fn share(&self, divisor: f64) -> f64 {
        match self {
            Budget::Finite(d) if divisor > 0.0 => d / divisor,
            _ => f64::INFINITY,
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(v) => write!(f, "{v}"),
            Budget::Unbounded => f.write_str("inf"),
        }
    }
}

/// Optional constraint families. Primary constraints are always present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConstraintFamilies {
    pub lasting: bool,
    pub overflow: bool,
    pub learning: bool,
}

/// One optimization problem over an admissible set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Instance {
    pub admissible: AdmissibleSet,
    pub supply: BTreeMap<(LocationId, Frame), f64>,
    pub demand: BTreeMap<CampaignId, Budget>,
    pub profit: BTreeMap<Quad, f64>,
    /// Minimum per-frame campaign delivery; missing entries mean 0.
    pub mu: BTreeMap<(CampaignId, Frame), f64>,
    /// Overflow fraction `P_{l,k}`; missing entries mean 1.
    pub overflow_frac: BTreeMap<(LocationId, Frame), f64>,
    /// Learning minimum for quads flagged new. Only keys of this map get a row.
    pub lambda: BTreeMap<Quad, f64>,
    /// Objective weight per frame (risk discount); missing entries mean 1.
    /// Constraint rows always use undiscounted profits.
    pub frame_weight: BTreeMap<Frame, f64>,
    pub families: ConstraintFamilies,
}

impl Instance {
    pub fn supply_at(&self, location: &LocationId, frame: Frame) -> Option<f64> {
        self.supply.get(&(location.clone(), frame)).copied()
    }

    pub fn mu_at(&self, campaign: &CampaignId, frame: Frame) -> f64 {
        self.mu.get(&(campaign.clone(), frame)).copied().unwrap_or(0.0)
    }

    pub fn overflow_at(&self, location: &LocationId, frame: Frame) -> f64 {
        self.overflow_frac
            .get(&(location.clone(), frame))
            .copied()
            .unwrap_or(1.0)
    }

    pub fn weight_at(&self, frame: Frame) -> f64 {
        self.frame_weight.get(&frame).copied().unwrap_or(1.0)
    }

    pub fn budget(&self, campaign: &CampaignId) -> Budget {
        self.demand.get(campaign).copied().unwrap_or(Budget::Unbounded)
    }

    /// `M`: the largest admissible profit per impression.
    pub fn profit_cap(&self) -> f64 {
        self.admissible
            .iter()
            .filter_map(|q| self.profit.get(q))
            .fold(0.0, |m: f64, p| m.max(*p))
    }

    pub fn validate(&self) -> Result<()> {
        for q in self.admissible.iter() {
            match self.profit.get(q) {
                None => return Err(Error::Model(format!("no profit for admissible quad {q}"))),
                Some(p) if !(p.is_finite() && *p >= 0.0) => {
                    return Err(Error::Model(format!("profit at {q} must be finite and >= 0")))
                }
                _ => {}
            }
            if !self.demand.contains_key(&q.campaign) {
                return Err(Error::Model(format!("no budget for campaign {}", q.campaign)));
            }
        }
        for (l, k) in self.admissible.slots() {
            match self.supply_at(&l, k) {
                None => {
                    return Err(Error::Model(format!(
                        "no supply for location {l} at frame {k}"
                    )))
                }
                Some(s) if !(s.is_finite() && s >= 0.0) => {
                    return Err(Error::Model(format!(
                        "supply for location {l} at frame {k} must be finite and >= 0"
                    )))
                }
                _ => {}
            }
        }
        for (i, b) in &self.demand {
            if let Budget::Finite(d) = b {
                if !(d.is_finite() && *d >= 0.0) {
                    return Err(Error::Model(format!("budget of campaign {i} must be >= 0")));
                }
            }
        }
        for ((l, k), p) in &self.overflow_frac {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Model(format!(
                    "overflow fraction at ({l}, {k}) must lie in [0, 1]"
                )));
            }
        }
        for (key, v) in &self.mu {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Model(format!("lasting minimum at {key:?} must be >= 0")));
            }
        }
        for (q, v) in &self.lambda {
            if !self.admissible.contains(q) {
                return Err(Error::Model(format!("learning minimum on inadmissible quad {q}")));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Model(format!("learning minimum at {q} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Slots where at least two distinct `(campaign, creative)` pairs are admissible.
    pub fn overflow_slots(&self) -> BTreeSet<(LocationId, Frame)> {
        self.admissible
            .slots()
            .into_iter()
            .filter(|(l, k)| {
                self.admissible
                    .at_slot(l, *k)
                    .iter()
                    .map(Quad::pair)
                    .collect::<BTreeSet<_>>()
                    .len()
                    >= 2
            })
            .collect()
    }

    /// `Σ p·x` per campaign and in total.
    pub fn revenue(&self, config: &Configuration) -> f64 {
        config
            .iter()
            .map(|(q, x)| self.profit.get(q).copied().unwrap_or(0.0) * x)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// What an LP column stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variable {
    Quad(Quad),
    Named(String),
}

/// What an LP row encodes, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub enum RowKind {
    Supply(LocationId, Frame),
    Demand(CampaignId),
    Lasting(CampaignId, Frame),
    Overflow(Quad),
    Learning(Quad),
    Target(CampaignId),
    RevenueFloor,
    Other(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub kind: RowKind,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(j, a)| a * x[*j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A linear program over non-negative variables.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub rows: Vec<Row>,
}

impl LpProblem {
    /// Problem with `n` anonymous variables and a zero objective.
    pub fn new(n: usize, sense: Sense) -> Self {
        LpProblem {
            variables: (0..n).map(|j| Variable::Named(format!("x{j}"))).collect(),
            objective: vec![0.0; n],
            sense,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
            kind: RowKind::Other(String::new()),
        });
    }

    /// Dense convenience form of [`LpProblem::add_row`].
    pub fn add_dense_row(&mut self, coeffs: &[f64], relation: Relation, rhs: f64) {
        let sparse = coeffs
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .collect();
        self.add_row(sparse, relation, rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.objective.len() != n {
            return Err(Error::Model(format!(
                "objective has {} coefficients for {n} variables",
                self.objective.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Model("objective coefficients must be finite".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Model(format!("row {r} has a non-finite right-hand side")));
            }
            for (j, a) in &row.coeffs {
                if *j >= n {
                    return Err(Error::Model(format!("row {r} references variable {j} >= {n}")));
                }
                if !a.is_finite() {
                    return Err(Error::Model(format!("row {r} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row violation or negativity of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let signs = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        rows.max(signs)
    }

    /// Maps solver values back onto quads, clipping round-off negatives.
    pub fn to_configuration(&self, set: &AdmissibleSet, x: &[f64]) -> Result<Configuration> {
        let mut values = BTreeMap::new();
        for (var, v) in self.variables.iter().zip(x) {
            if let Variable::Quad(q) = var {
                values.insert(q.clone(), v.max(0.0));
            }
        }
        Configuration::new(set, values)
    }
}

fn quad_columns(instance: &Instance) -> (Vec<Variable>, BTreeMap<&Quad, usize>) {
    let vars: Vec<Variable> = instance.admissible.iter().cloned().map(Variable::Quad).collect();
    let index = instance
        .admissible
        .iter()
        .enumerate()
        .map(|(j, q)| (q, j))
        .collect();
    (vars, index)
}

fn supply_rows(instance: &Instance, index: &BTreeMap<&Quad, usize>) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (l, k) in instance.admissible.slots() {
        let s = instance
            .supply_at(&l, k)
            .ok_or_else(|| Error::Model(format!("no supply for location {l} at frame {k}")))?;
        let coeffs = instance
            .admissible
            .at_slot(&l, k)
            .iter()
            .map(|q| (index[q], 1.0))
            .collect();
        rows.push(Row {
            coeffs,
            relation: Relation::Le,
            rhs: s,
            kind: RowKind::Supply(l, k),
        });
    }
    Ok(rows)
}

fn profit_of(instance: &Instance, q: &Quad) -> Result<f64> {
    instance
        .profit
        .get(q)
        .copied()
        .ok_or_else(|| Error::Model(format!("no profit for admissible quad {q}")))
}

/// Revenue-maximization model: supply, demand, optional lasting, overflow and
/// learning rows, objective `max Σ w_k·p·x`.
pub fn build_revenue_lp(instance: &Instance) -> Result<LpProblem> {
    instance.validate()?;
    let (variables, index) = quad_columns(instance);
    let mut objective = Vec::with_capacity(variables.len());
    for q in instance.admissible.iter() {
        objective.push(instance.weight_at(q.frame) * profit_of(instance, q)?);
    }
    let mut rows = supply_rows(instance, &index)?;

    for i in instance.admissible.campaigns() {
        let Budget::Finite(d) = instance.budget(&i) else {
            continue;
        };
        let mut coeffs = Vec::new();
        for q in instance.admissible.of_campaign(&i) {
            let p = profit_of(instance, q)?;
            if p != 0.0 {
                coeffs.push((index[q], p));
            }
        }
        rows.push(Row {
            coeffs,
            relation: Relation::Le,
            rhs: d,
            kind: RowKind::Demand(i),
        });
    }

    if instance.families.lasting {
        for (i, k) in instance.admissible.campaign_frames() {
            let coeffs = instance
                .admissible
                .of_campaign_frame(&i, k)
                .iter()
                .map(|q| (index[q], 1.0))
                .collect();
            let rhs = instance.mu_at(&i, k);
            rows.push(Row {
                coeffs,
                relation: Relation::Ge,
                rhs,
                kind: RowKind::Lasting(i, k),
            });
        }
    }

    if instance.families.overflow {
        for (l, k) in instance.overflow_slots() {
            let cap = instance.overflow_at(&l, k) * instance.supply_at(&l, k).unwrap_or(0.0);
            for q in instance.admissible.at_slot(&l, k) {
                rows.push(Row {
                    coeffs: vec![(index[q], 1.0)],
                    relation: Relation::Le,
                    rhs: cap,
                    kind: RowKind::Overflow(q.clone()),
                });
            }
        }
    }

    if instance.families.learning {
        for (q, min) in &instance.lambda {
            rows.push(Row {
                coeffs: vec![(index[q], 1.0)],
                relation: Relation::Ge,
                rhs: *min,
                kind: RowKind::Learning(q.clone()),
            });
        }
    }

    Ok(LpProblem {
        variables,
        objective,
        sense: Sense::Maximize,
        rows,
    })
}

/// Fewest impressions meeting exact per-campaign revenue targets.
pub fn build_min_impressions_lp(
    instance: &Instance,
    targets: &BTreeMap<CampaignId, f64>,
) -> Result<LpProblem> {
    instance.validate()?;
    let campaigns = instance.admissible.campaigns();
    for (i, d) in targets {
        if !campaigns.contains(i) {
            return Err(Error::Model(format!("target for unknown campaign {i}")));
        }
        if !(d.is_finite() && *d >= 0.0) {
            return Err(Error::Model(format!("target for campaign {i} must be finite and >= 0")));
        }
    }
    let (variables, index) = quad_columns(instance);
    let mut rows = supply_rows(instance, &index)?;
    for (i, d) in targets {
        let mut coeffs = Vec::new();
        for q in instance.admissible.of_campaign(i) {
            coeffs.push((index[q], profit_of(instance, q)?));
        }
        rows.push(Row {
            coeffs,
            relation: Relation::Eq,
            rhs: *d,
            kind: RowKind::Target(i.clone()),
        });
    }
    let n = variables.len();
    Ok(LpProblem {
        variables,
        objective: vec![1.0; n],
        sense: Sense::Minimize,
        rows,
    })
}

/// Tolerance on the stage-2 revenue floor.
pub fn lex_epsilon(f_star: f64) -> f64 {
    1e-7 * f_star.abs().max(1.0)
}

/// Revenue first, then fewest impressions among revenue-optimal allocations.
#[derive(Clone, Debug, PartialEq)]
pub struct LexicographicModel {
    pub stage1: LpProblem,
}

impl LexicographicModel {
    /// Stage 2 given the stage-1 optimum `f_star`: same region plus
    /// `Σ w·p·x ≥ F* − ε`, minimizing total impressions.
    pub fn stage2(&self, f_star: f64) -> LpProblem {
        let mut lp = self.stage1.clone();
        let floor: Vec<(usize, f64)> = lp
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (j, *c))
            .collect();
        lp.rows.push(Row {
            coeffs: floor,
            relation: Relation::Ge,
            rhs: f_star - lex_epsilon(f_star),
            kind: RowKind::RevenueFloor,
        });
        lp.objective = vec![1.0; lp.num_vars()];
        lp.sense = Sense::Minimize;
        lp
    }
}

pub fn build_lexicographic(instance: &Instance) -> Result<LexicographicModel> {
    Ok(LexicographicModel {
        stage1: build_revenue_lp(instance)?,
    })
}

/// A constraint of the model found violated by a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintViolation {
    pub constraint: String,
    pub amount: f64,
}

/// Checks a configuration directly against the instance's constraints,
/// without going through any LP representation.
pub fn check_configuration(
    instance: &Instance,
    config: &Configuration,
    tol: f64,
) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    let mut report = |constraint: String, amount: f64| {
        if amount > tol {
            out.push(ConstraintViolation { constraint, amount });
        }
    };

    let mut slot_load: BTreeMap<(LocationId, Frame), f64> = BTreeMap::new();
    let mut spend: BTreeMap<CampaignId, f64> = BTreeMap::new();
    let mut delivered: BTreeMap<(CampaignId, Frame), f64> = BTreeMap::new();
    for (q, x) in config.iter() {
        if !instance.admissible.contains(q) {
            report(format!("admissibility of {q}"), x.abs().max(f64::MIN_POSITIVE) + tol);
        }
        report(format!("non-negativity of {q}"), -x);
        *slot_load.entry(q.slot()).or_default() += x;
        *spend.entry(q.campaign.clone()).or_default() +=
            instance.profit.get(q).copied().unwrap_or(0.0) * x;
        *delivered.entry((q.campaign.clone(), q.frame)).or_default() += x;
    }
    for ((l, k), load) in &slot_load {
        let s = instance.supply_at(l, *k).unwrap_or(0.0);
        report(format!("supply at ({l}, {k})"), load - s);
    }
    for (i, total) in &spend {
        if let Budget::Finite(d) = instance.budget(i) {
            report(format!("budget of {i}"), total - d);
        }
    }
    if instance.families.lasting {
        for (i, k) in instance.admissible.campaign_frames() {
            let got = delivered.get(&(i.clone(), k)).copied().unwrap_or(0.0);
            report(format!("lasting of {i} at {k}"), instance.mu_at(&i, k) - got);
        }
    }
    if instance.families.overflow {
        for (l, k) in instance.overflow_slots() {
            let cap = instance.overflow_at(&l, k) * instance.supply_at(&l, k).unwrap_or(0.0);
            for q in instance.admissible.at_slot(&l, k) {
                report(format!("overflow at {q}"), config.get(q) - cap);
            }
        }
    }
    if instance.families.learning {
        for (q, min) in &instance.lambda {
            report(format!("learning at {q}"), min - config.get(q));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

/// Classical transportation problem: `values[s][d]` is the unit cost (or
/// profit) of shipping from supply `s` to demand `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportationInstance {
    pub supplies: Vec<f64>,
    pub demands: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub goal: Goal,
}

impl TransportationInstance {
    pub fn new(supplies: Vec<f64>, demands: Vec<f64>, values: Vec<Vec<f64>>, goal: Goal) -> Result<Self> {
        if values.len() != supplies.len() || values.iter().any(|r| r.len() != demands.len()) {
            return Err(Error::Argument(format!(
                "value matrix must be {}x{}",
                supplies.len(),
                demands.len()
            )));
        }
        let finite = |v: &f64| v.is_finite() && *v >= 0.0;
        if !supplies.iter().all(finite) || !demands.iter().all(finite) {
            return Err(Error::Argument("supplies and demands must be finite and >= 0".into()));
        }
        if !values.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Argument("unit values must be finite".into()));
        }
        Ok(TransportationInstance {
            supplies,
            demands,
            values,
            goal,
        })
    }

    pub fn total_supply(&self) -> f64 {
        self.supplies.iter().sum()
    }

    pub fn total_demand(&self) -> f64 {
        self.demands.iter().sum()
    }

    pub fn is_balanced(&self) -> bool {
        let (s, d) = (self.total_supply(), self.total_demand());
        (s - d).abs() <= 1e-9 * s.abs().max(d.abs()).max(1.0)
    }

    /// Equivalent LP with one equality row per supply and per demand; column
    /// `s * demands + d` carries the flow `x[s][d]`.
    pub fn to_lp(&self) -> LpProblem {
        let (m, n) = (self.supplies.len(), self.demands.len());
        let sense = match self.goal {
            Goal::Minimize => Sense::Minimize,
            Goal::Maximize => Sense::Maximize,
        };
        let mut lp = LpProblem::new(m * n, sense);
        lp.objective = self.values.iter().flatten().copied().collect();
        for (s, &supply) in self.supplies.iter().enumerate() {
            lp.add_row((0..n).map(|d| (s * n + d, 1.0)).collect(), Relation::Eq, supply);
        }
        for (d, &demand) in self.demands.iter().enumerate() {
            lp.add_row((0..m).map(|s| (s * n + d, 1.0)).collect(), Relation::Eq, demand);
        }
        lp
    }
}

/// Appends a zero-valued dummy demand or supply so totals match.
pub fn balance(t: &TransportationInstance) -> TransportationInstance {
    let mut out = t.clone();
    if t.is_balanced() {
        return out;
    }
    let gap = t.total_supply() - t.total_demand();
    if gap > 0.0 {
        out.demands.push(gap);
        for row in &mut out.values {
            row.push(0.0);
        }
    } else {
        out.supplies.push(-gap);
        out.values.push(vec![0.0; t.demands.len()]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1_instance;

    fn count(lp: &LpProblem, pred: impl Fn(&RowKind) -> bool) -> usize {
        lp.rows.iter().filter(|r| pred(&r.kind)).count()
    }

    #[test]
    fn revenue_lp_for_t1() {
        let lp = build_revenue_lp(&t1_instance()).unwrap();
        assert_eq!(lp.num_vars(), 4);
        assert_eq!(count(&lp, |k| matches!(k, RowKind::Supply(..))), 2);
        assert_eq!(count(&lp, |k| matches!(k, RowKind::Demand(..))), 1);
        assert_eq!(lp.rows.len(), 3);
        assert_eq!(lp.objective, vec![1.0, 1.0, 0.5, 0.5]);
        assert_eq!(lp.sense, Sense::Maximize);
    }

    #[test]
    fn overflow_rows_cover_multi_creative_slots() {
        let mut t1 = t1_instance();
        t1.families.overflow = true;
        for k in [1, 2] {
            t1.overflow_frac.insert(("L1".into(), Frame(k)), 0.9);
        }
        let lp = build_revenue_lp(&t1).unwrap();
        let rows: Vec<_> = lp
            .rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Overflow(_)))
            .collect();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert!((r.rhs - 4.5).abs() < 1e-12);
            assert_eq!(r.coeffs.len(), 1);
        }
    }

    #[test]
    fn no_overflow_row_for_single_creative_slot() {
        let mut t1 = t1_instance();
        t1.admissible = t1
            .admissible
            .filter(|q| !(q.campaign.as_str() == "2" && q.frame == Frame(2)));
        t1.profit.retain(|q, _| t1.admissible.contains(q));
        t1.families.overflow = true;
        let lp = build_revenue_lp(&t1).unwrap();
        let overflow: Vec<_> = lp
            .rows
            .iter()
            .filter_map(|r| match &r.kind {
                RowKind::Overflow(q) => Some(q.frame),
                _ => None,
            })
            .collect();
        assert_eq!(overflow, vec![Frame(1), Frame(1)]);
    }

    #[test]
    fn missing_profit_names_the_quad() {
        let mut t1 = t1_instance();
        t1.profit.remove(&Quad::new("2", "1", 2, "L1"));
        let err = build_revenue_lp(&t1).unwrap_err().to_string();
        assert!(err.contains("(2, 1, 2, L1)"), "{err}");
    }

    #[test]
    fn lasting_and_learning_rows() {
        let mut t1 = t1_instance();
        t1.families.lasting = true;
        t1.families.learning = true;
        t1.mu.insert(("1".into(), Frame(1)), 1.5);
        t1.lambda.insert(Quad::new("2", "1", 1, "L1"), 0.5);
        let lp = build_revenue_lp(&t1).unwrap();
        assert_eq!(count(&lp, |k| matches!(k, RowKind::Lasting(..))), 4);
        assert_eq!(count(&lp, |k| matches!(k, RowKind::Learning(..))), 1);
        let lasting = lp
            .rows
            .iter()
            .find(|r| r.kind == RowKind::Lasting("1".into(), Frame(1)))
            .unwrap();
        assert_eq!(lasting.relation, Relation::Ge);
        assert_eq!(lasting.rhs, 1.5);
    }

    #[test]
    fn min_impressions_rejects_unknown_campaign() {
        let mut targets = BTreeMap::new();
        targets.insert(CampaignId::new("9"), 1.0);
        assert!(build_min_impressions_lp(&t1_instance(), &targets).is_err());
    }

    #[test]
    fn min_impressions_shape() {
        let mut targets = BTreeMap::new();
        targets.insert(CampaignId::new("1"), 10.0);
        targets.insert(CampaignId::new("2"), 0.0);
        let lp = build_min_impressions_lp(&t1_instance(), &targets).unwrap();
        assert_eq!(lp.sense, Sense::Minimize);
        assert_eq!(lp.objective, vec![1.0; 4]);
        assert_eq!(count(&lp, |k| matches!(k, RowKind::Target(..))), 2);
        assert!(lp
            .rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Target(..)))
            .all(|r| r.relation == Relation::Eq));
    }

    #[test]
    fn stage_two_adds_revenue_floor() {
        let lex = build_lexicographic(&t1_instance()).unwrap();
        let s2 = lex.stage2(10.0);
        let floor = s2.rows.last().unwrap();
        assert_eq!(floor.kind, RowKind::RevenueFloor);
        assert_eq!(floor.relation, Relation::Ge);
        assert!((floor.rhs - (10.0 - 1e-6)).abs() < 1e-15);
        assert_eq!(s2.sense, Sense::Minimize);
    }

    #[test]
    fn balance_examples() {
        let t = TransportationInstance::new(
            vec![3.0, 2.0],
            vec![2.0, 3.0],
            vec![vec![1.0, 2.0], vec![3.0, 1.0]],
            Goal::Minimize,
        )
        .unwrap();
        assert_eq!(balance(&t), t);

        let t = TransportationInstance::new(
            vec![3.0, 2.0],
            vec![2.0, 5.0],
            vec![vec![1.0, 2.0], vec![3.0, 1.0]],
            Goal::Minimize,
        )
        .unwrap();
        let b = balance(&t);
        assert_eq!(b.supplies, vec![3.0, 2.0, 2.0]);
        assert_eq!(b.values[2], vec![0.0, 0.0]);
        assert!(b.is_balanced());

        let t = TransportationInstance::new(
            vec![7.0],
            vec![2.0, 3.0],
            vec![vec![1.0, 1.0]],
            Goal::Maximize,
        )
        .unwrap();
        let b = balance(&t);
        assert_eq!(b.demands, vec![2.0, 3.0, 2.0]);
        assert_eq!(b.values[0], vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn checker_flags_supply_and_budget() {
        let t1 = t1_instance();
        let mut values = BTreeMap::new();
        values.insert(Quad::new("1", "1", 1, "L1"), 6.0);
        values.insert(Quad::new("1", "1", 2, "L1"), 5.0);
        let config = Configuration::new(&t1.admissible, values).unwrap();
        let v = check_configuration(&t1, &config, 1e-9);
        assert_eq!(v.len(), 2, "{v:?}");
    }
}
