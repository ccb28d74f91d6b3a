//! Rolling-horizon delivery loop: project, build the revenue model, solve,
//! convert to probabilities, deliver the next frame, record the outcome and
//! repeat.

mod horizon;
mod plan;

pub use horizon::apply_horizon;
pub use plan::{to_probabilities, DeliveryPlan, PROBABILITY_SUM_TOL};

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};

use crate::domain::{AdmissibleSet, CampaignId, CreativeId, Frame, FrameClock, LocationId, Quad};
use crate::error::{Error, Result};
use crate::feasibility::clamp_secondary;
use crate::model::{build_revenue_lp, Budget, ConstraintFamilies, Instance};
use crate::projection::{
    fit_supply_regressor, project_supply_weighted, FeatureSpec, HistoryLog, HistoryRecord,
    LadderLevel, ProfitProjector, ProjectionParams, RidgeRegressor, SimilarityIndex,
};
use crate::solver::{solve_simplex, SolverSettings, Status};

/// Admissible quads plus the `(campaign, creative, location)` triples flagged
/// as new, which get learning rows until they have `n_min` impressions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub admissible: AdmissibleSet,
    pub new: BTreeSet<(CampaignId, CreativeId, LocationId)>,
}

impl Schedule {
    pub fn is_new(&self, quad: &Quad) -> bool {
        self.new.contains(&(
            quad.campaign.clone(),
            quad.creative.clone(),
            quad.location.clone(),
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SupplyMethod {
    #[default]
    WeightedAverage,
    /// Calendar regression, falling back to the weighted average for
    /// locations without a model.
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Frames planned individually before the tail is aggregated.
    pub horizon: u32,
    /// Objective discount per frame of distance.
    pub gamma: f64,
    pub projection: ProjectionParams,
    pub solver: SolverSettings,
    pub families: ConstraintFamilies,
    /// Requested per-frame campaign minimum, before clamping.
    pub lasting_min: f64,
    pub overflow_fraction: f64,
    pub supply_method: SupplyMethod,
    /// Drop the secondary rows when they make the model infeasible instead of
    /// failing with [`Error::Infeasible`].
    pub relax_secondary: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            horizon: 24,
            gamma: 0.95,
            projection: ProjectionParams::default(),
            solver: SolverSettings::default(),
            families: ConstraintFamilies {
                lasting: false,
                overflow: false,
                learning: true,
            },
            lasting_min: 0.0,
            overflow_fraction: 1.0,
            supply_method: SupplyMethod::WeightedAverage,
            relax_secondary: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Argument("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Argument("gamma must lie in (0, 1]".into()));
        }
        if !(self.lasting_min.is_finite() && self.lasting_min >= 0.0) {
            return Err(Error::Argument("lasting minimum must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.overflow_fraction) {
            return Err(Error::Argument("overflow fraction must lie in [0, 1]".into()));
        }
        self.projection.validate()?;
        self.solver.validate()
    }
}

/// Projected supply per slot and profit per quad over a planning window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Projections {
    pub supply: BTreeMap<(LocationId, Frame), f64>,
    pub profit: BTreeMap<Quad, f64>,
    pub levels: BTreeMap<LadderLevel, usize>,
}

pub trait Projector {
    /// Projections for every slot and quad of `window`, seen from the start
    /// of frame `now`.
    fn project(
        &self,
        history: &HistoryLog,
        window: &AdmissibleSet,
        clock: &FrameClock,
        now: Frame,
    ) -> Result<Projections>;
}

/// Projections estimated from the delivery log. The similarity index is
/// kept between calls and extended as the log grows.
#[derive(Debug, Default)]
pub struct HistoryProjector {
    pub params: ProjectionParams,
    pub supply_method: SupplyMethod,
    index: RefCell<Option<SimilarityIndex>>,
}

impl HistoryProjector {
    pub fn new(params: ProjectionParams, supply_method: SupplyMethod) -> Self {
        HistoryProjector {
            params,
            supply_method,
            index: RefCell::new(None),
        }
    }
}

impl Projector for HistoryProjector {
    fn project(
        &self,
        history: &HistoryLog,
        window: &AdmissibleSet,
        clock: &FrameClock,
        now: Frame,
    ) -> Result<Projections> {
        let as_of = clock.start(now);
        let model = match self.supply_method {
            SupplyMethod::Regression => Some(fit_supply_regressor(
                history,
                FeatureSpec::default(),
                &RidgeRegressor::default(),
            )?),
            SupplyMethod::WeightedAverage => None,
        };
        let mut out = Projections::default();
        let mut supply = Vec::new();
        for (l, k) in window.slots() {
            let t = clock.start(k);
            let s = match &model {
                Some(m) if m.is_trained(&l) => m.predict(&l, t)?,
                _ => project_supply_weighted(history, &l, t, &self.params).value,
            };
            supply.push(((l, k), s));
        }
        out.supply = supply.into_iter().collect();
        let mut cached = self.index.borrow_mut();
        let index = cached.get_or_insert_with(|| SimilarityIndex::new(self.params.similarity));
        index.sync(history);
        let profits = ProfitProjector::with_index(history, &self.params, *clock, as_of, index)?;
        let mut profit = Vec::with_capacity(window.len());
        for q in window.iter() {
            let e = profits.project(q);
            *out.levels.entry(e.level).or_default() += 1;
            profit.push((q.clone(), e.value));
        }
        out.profit = profit.into_iter().collect();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub frame: Frame,
    /// Planned revenue over the window, undiscounted.
    pub objective: f64,
    pub iterations: usize,
    pub levels: BTreeMap<LadderLevel, usize>,
    /// Set when secondary rows had to be dropped to reach feasibility.
    pub secondary_dropped: bool,
    pub variables: usize,
}

/// Realized delivery of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutcome {
    pub frame: Frame,
    /// Rows appended to the log; may cover only the observed part of traffic.
    pub records: Vec<HistoryRecord>,
    /// Profit charged per campaign.
    pub spend: BTreeMap<CampaignId, f64>,
}

impl FrameOutcome {
    /// Outcome whose spend is read off fully observed records.
    pub fn from_records(frame: Frame, records: Vec<HistoryRecord>) -> Self {
        let mut spend = BTreeMap::new();
        for r in &records {
            if let Some(i) = r.campaign() {
                *spend.entry(i.clone()).or_insert(0.0) += r.profit;
            }
        }
        FrameOutcome {
            frame,
            records,
            spend,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineState {
    /// Next frame to deliver.
    pub frame: Frame,
    pub budgets: BTreeMap<CampaignId, Budget>,
    pub spent: BTreeMap<CampaignId, f64>,
    pub history: HistoryLog,
    pub clock: FrameClock,
    pub config: EngineConfig,
}

impl EngineState {
    pub fn new(
        frame: Frame,
        budgets: BTreeMap<CampaignId, Budget>,
        history: HistoryLog,
        clock: FrameClock,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(EngineState {
            frame,
            budgets,
            spent: BTreeMap::new(),
            history,
            clock,
            config,
        })
    }

    /// `D_i` minus realized spend, floored at zero.
    pub fn remaining(&self, campaign: &CampaignId) -> Budget {
        match self.budgets.get(campaign) {
            Some(Budget::Finite(d)) => {
                let spent = self.spent.get(campaign).copied().unwrap_or(0.0);
                Budget::Finite((d - spent).max(0.0))
            }
            _ => Budget::Unbounded,
        }
    }

    /// Instance for the window starting at the current frame, before the
    /// horizon and the secondary caps are applied.
    pub fn build_instance(&self, schedule: &Schedule, projections: &Projections) -> Result<Instance> {
        let window = schedule.admissible.filter(|q| q.frame >= self.frame);
        self.instance_for(window, schedule, projections)
    }

    fn instance_for(
        &self,
        window: AdmissibleSet,
        schedule: &Schedule,
        projections: &Projections,
    ) -> Result<Instance> {
        let k0 = self.frame;
        let cfg = &self.config;
        let mut inst = Instance {
            admissible: window,
            supply: projections.supply.clone(),
            profit: projections.profit.clone(),
            families: cfg.families,
            ..Default::default()
        };
        for i in inst.admissible.campaigns() {
            inst.demand.insert(i.clone(), self.remaining(&i));
        }
        for k in inst.admissible.frames() {
            inst.frame_weight
                .insert(k, cfg.gamma.powi((k.0 - k0.0) as i32));
        }
        if cfg.families.lasting {
            for key in inst.admissible.campaign_frames() {
                inst.mu.insert(key, cfg.lasting_min);
            }
        }
        if cfg.families.overflow {
            for slot in inst.admissible.slots() {
                inst.overflow_frac.insert(slot, cfg.overflow_fraction);
            }
        }
        if cfg.families.learning {
            let n_min = cfg.projection.n_min;
            for q in inst.admissible.iter().filter(|q| q.frame == k0) {
                if !schedule.is_new(q) {
                    continue;
                }
                let seen = self
                    .history
                    .delivered_impressions(&q.location, &q.campaign, &q.creative);
                if seen < n_min {
                    inst.lambda.insert(q.clone(), (n_min - seen) as f64);
                }
            }
        }
        Ok(inst)
    }

    /// One optimization cycle; returns the plan for the current frame.
    pub fn plan_cycle(
        &self,
        schedule: &Schedule,
        projector: &dyn Projector,
    ) -> Result<(DeliveryPlan, Diagnostics)> {
        let k0 = self.frame;
        let window = schedule.admissible.filter(|q| q.frame >= k0);
        let mut diag = Diagnostics {
            frame: k0,
            objective: 0.0,
            iterations: 0,
            levels: BTreeMap::new(),
            secondary_dropped: false,
            variables: 0,
        };
        if !window.iter().any(|q| q.frame == k0) {
            return Ok((DeliveryPlan::new(), diag));
        }
        let projections = projector.project(&self.history, &window, &self.clock, k0)?;
        diag.levels = projections.levels.clone();
        let raw = self.instance_for(window, schedule, &projections)?;
        let aggregated = apply_horizon(&raw, self.config.horizon)?;
        let mut inst = clamp_secondary(&aggregated)?;

        let mut solved = self.solve(&inst)?;
        if solved.is_none() && inst.families != ConstraintFamilies::default() {
            if !self.config.relax_secondary {
                return Err(Error::Infeasible);
            }
            warn!("frame {k0}: model infeasible with secondary rows, retrying without");
            inst.families = ConstraintFamilies::default();
            diag.secondary_dropped = true;
            solved = self.solve(&inst)?;
        }
        let Some((x, iterations)) = solved else {
            return Err(Error::Internal(format!(
                "frame {k0}: model infeasible after clamping and with secondary rows removed"
            )));
        };
        let lp = build_revenue_lp(&inst)?;
        let config = lp.to_configuration(&inst.admissible, &x)?;
        diag.objective = inst.revenue(&config);
        diag.iterations = iterations;
        diag.variables = lp.num_vars();
        debug!("frame {k0}: planned revenue {} in {iterations} pivots", diag.objective);
        let plan = to_probabilities(&config, &inst.supply)?.at_frame(k0);
        plan.validate()?;
        Ok((plan, diag))
    }

    fn solve(&self, inst: &Instance) -> Result<Option<(Vec<f64>, usize)>> {
        let lp = build_revenue_lp(inst)?;
        match solve_simplex(&lp, &self.config.solver) {
            Ok(sol) => match sol.status {
                Status::Optimal => Ok(Some((sol.values, sol.iterations))),
                Status::Infeasible => Ok(None),
                Status::Unbounded => Err(Error::Internal(
                    "revenue model unbounded despite supply rows".into(),
                )),
            },
            Err(Error::IterationLimit {
                limit,
                best: Some(best),
            }) => {
                warn!("iteration limit {limit} reached, using last feasible point");
                Ok(Some((best, limit)))
            }
            Err(e) => Err(e),
        }
    }

    /// Records the outcome of the current frame and moves to the next one.
    pub fn advance(&mut self, outcome: FrameOutcome) -> Result<()> {
        if outcome.frame != self.frame {
            return Err(Error::Argument(format!(
                "outcome for frame {} while the engine is at frame {}",
                outcome.frame, self.frame
            )));
        }
        let start = self.clock.start(self.frame);
        for r in outcome.records {
            if r.timestamp != start {
                return Err(Error::Argument(format!(
                    "record at {} does not belong to frame {}",
                    r.timestamp, self.frame
                )));
            }
            self.history.append(r)?;
        }
        for (i, v) in outcome.spend {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Argument(format!("spend of campaign {i} must be >= 0")));
            }
            *self.spent.entry(i).or_insert(0.0) += v;
        }
        self.frame = Frame(self.frame.0 + 1);
        Ok(())
    }
}
