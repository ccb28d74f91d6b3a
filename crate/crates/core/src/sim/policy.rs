use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::domain::{AdmissibleSet, CampaignId, Frame, FrameClock, LocationId};
use crate::engine::{
    DeliveryPlan, EngineConfig, EngineState, FrameOutcome, HistoryProjector, Projections, Projector,
    Schedule,
};
use crate::error::{Error, Result};
use crate::model::Budget;
use crate::projection::HistoryLog;

use super::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    LpEngine,
    Greedy,
    Uniform,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::LpEngine, PolicyKind::Greedy, PolicyKind::Uniform];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::LpEngine => "lp-engine",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown policy {s:?}")))
    }
}

/// A delivery strategy driven frame by frame by the simulator.
pub trait Policy {
    /// Plan for `frame`; campaigns in `stopped` have exhausted their budget.
    fn plan(&mut self, frame: Frame, stopped: &BTreeSet<CampaignId>) -> Result<DeliveryPlan>;

    fn observe(&mut self, outcome: FrameOutcome) -> Result<()>;
}

/// Ground-truth projections: mean supply and true profits.
#[derive(Clone, Debug)]
pub struct PerfectProjector {
    pub world: Arc<World>,
}

impl Projector for PerfectProjector {
    fn project(
        &self,
        _history: &HistoryLog,
        window: &AdmissibleSet,
        _clock: &FrameClock,
        _now: Frame,
    ) -> Result<Projections> {
        let mut out = Projections::default();
        for (l, k) in window.slots() {
            let s = self.world.expected_supply(&l, k);
            out.supply.insert((l, k), s);
        }
        for q in window.iter() {
            out.profit.insert(q.clone(), self.world.profit(q));
        }
        Ok(out)
    }
}

/// The rolling-horizon optimizer.
pub struct LpPolicy {
    pub state: EngineState,
    schedule: Schedule,
    projector: Box<dyn Projector>,
}

impl LpPolicy {
    pub fn new(world: &World, config: EngineConfig, perfect: Option<Arc<World>>) -> Result<Self> {
        let projector: Box<dyn Projector> = match perfect {
            Some(w) => Box::new(PerfectProjector { world: w }),
            None => Box::new(HistoryProjector::new(
                config.projection.clone(),
                config.supply_method,
            )),
        };
        let state = EngineState::new(
            Frame(1),
            world.config.budgets.clone(),
            world.warmup().clone(),
            *world.clock(),
            config,
        )?;
        Ok(LpPolicy {
            state,
            schedule: world.config.schedule.clone(),
            projector,
        })
    }
}

impl Policy for LpPolicy {
    fn plan(&mut self, frame: Frame, _stopped: &BTreeSet<CampaignId>) -> Result<DeliveryPlan> {
        if frame != self.state.frame {
            return Err(Error::Argument(format!(
                "engine at frame {} asked to plan frame {frame}",
                self.state.frame
            )));
        }
        Ok(self.state.plan_cycle(&self.schedule, self.projector.as_ref())?.0)
    }

    fn observe(&mut self, outcome: FrameOutcome) -> Result<()> {
        self.state.advance(outcome)
    }
}

/// Uniform over the admissible creatives of each slot.
pub struct UniformPolicy {
    schedule: AdmissibleSet,
}

impl UniformPolicy {
    pub fn new(world: &World) -> Self {
        UniformPolicy {
            schedule: world.config.schedule.admissible.clone(),
        }
    }
}

fn uniform_plan(
    schedule: &AdmissibleSet,
    frame: Frame,
    mut active: impl FnMut(&CampaignId, &LocationId) -> bool,
) -> Result<DeliveryPlan> {
    let mut plan = DeliveryPlan::new();
    for (l, k) in schedule.slots().into_iter().filter(|s| s.1 == frame) {
        let quads = schedule.at_slot(&l, k);
        let on: Vec<_> = quads.iter().filter(|q| active(&q.campaign, &l)).collect();
        let p = if on.is_empty() { 0.0 } else { 1.0 / on.len() as f64 };
        for q in quads {
            let v = if active(&q.campaign, &l) { p } else { 0.0 };
            plan.insert(k, l.clone(), q.campaign.clone(), q.creative.clone(), v)?;
        }
    }
    Ok(plan)
}

impl Policy for UniformPolicy {
    fn plan(&mut self, frame: Frame, stopped: &BTreeSet<CampaignId>) -> Result<DeliveryPlan> {
        uniform_plan(&self.schedule, frame, |i, _| !stopped.contains(i))
    }

    fn observe(&mut self, _outcome: FrameOutcome) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyConfig {
    /// Frames of uniform delivery before pacing starts.
    pub learning_frames: u32,
    /// Share of a campaign's nodes dropped when it runs ahead of pace.
    pub quantile: f64,
    /// Relative band around the target pace treated as on pace.
    pub pace_tolerance: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            learning_frames: 24,
            quantile: 0.25,
            pace_tolerance: 0.05,
        }
    }
}

/// Pacing baseline: uniform delivery, and a campaign running ahead of its
/// budget pace is removed from its lowest-eCPM nodes.
pub struct GreedyPolicy {
    config: GreedyConfig,
    schedule: AdmissibleSet,
    budgets: BTreeMap<CampaignId, Budget>,
    spent: BTreeMap<CampaignId, f64>,
    /// Observed (profit, impressions) per campaign and node.
    observed: BTreeMap<(CampaignId, LocationId), (f64, u64)>,
    dropped: BTreeMap<CampaignId, BTreeSet<LocationId>>,
    window: BTreeMap<CampaignId, (Frame, Frame)>,
    started: Option<Frame>,
}

impl GreedyPolicy {
    pub fn new(world: &World, config: GreedyConfig) -> Self {
        let schedule = world.config.schedule.admissible.clone();
        let mut window: BTreeMap<CampaignId, (Frame, Frame)> = BTreeMap::new();
        for q in schedule.iter() {
            let w = window.entry(q.campaign.clone()).or_insert((q.frame, q.frame));
            w.0 = w.0.min(q.frame);
            w.1 = w.1.max(q.frame);
        }
        GreedyPolicy {
            config,
            schedule,
            budgets: world.config.budgets.clone(),
            spent: BTreeMap::new(),
            observed: BTreeMap::new(),
            dropped: BTreeMap::new(),
            window,
            started: None,
        }
    }

    /// Observed profit per impression of a campaign at a node.
    pub fn ecpm(&self, campaign: &CampaignId, location: &LocationId) -> Option<f64> {
        let (p, n) = self.observed.get(&(campaign.clone(), location.clone()))?;
        (*n > 0).then(|| p / *n as f64)
    }

    /// Nodes in the bottom quantile of eCPM, ties broken by location id.
    pub fn lowest_nodes(&self, campaign: &CampaignId) -> BTreeSet<LocationId> {
        let mut nodes: Vec<(f64, LocationId)> = self
            .schedule
            .of_campaign(campaign)
            .iter()
            .map(|q| q.location.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|l| (self.ecpm(campaign, &l).unwrap_or(0.0), l))
            .collect();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let count = (self.config.quantile * nodes.len() as f64).ceil() as usize;
        nodes.into_iter().take(count).map(|(_, l)| l).collect()
    }

    fn update_pacing(&mut self, frame: Frame) {
        let campaigns: Vec<CampaignId> = self.window.keys().cloned().collect();
        for i in campaigns {
            let Some(Budget::Finite(d)) = self.budgets.get(&i).copied() else {
                continue;
            };
            let (first, last) = self.window[&i];
            let span = (last.0 - first.0 + 1) as f64;
            let elapsed = (frame.0.saturating_sub(first.0)) as f64 / span;
            let spent = self.spent.get(&i).copied().unwrap_or(0.0);
            let target = d * elapsed;
            let band = self.config.pace_tolerance * target.max(f64::MIN_POSITIVE);
            if spent > target + band {
                let nodes = self.lowest_nodes(&i);
                self.dropped.insert(i, nodes);
            } else if spent < target - band {
                self.dropped.remove(&i);
            }
        }
    }
}

impl Policy for GreedyPolicy {
    fn plan(&mut self, frame: Frame, stopped: &BTreeSet<CampaignId>) -> Result<DeliveryPlan> {
        let start = *self.started.get_or_insert(frame);
        if frame.0 >= start.0 + self.config.learning_frames {
            self.update_pacing(frame);
        }
        let dropped = &self.dropped;
        uniform_plan(&self.schedule, frame, |i, l| {
            !stopped.contains(i) && !dropped.get(i).is_some_and(|d| d.contains(l))
        })
    }

    fn observe(&mut self, outcome: FrameOutcome) -> Result<()> {
        for r in &outcome.records {
            if let Some(i) = r.campaign() {
                let e = self
                    .observed
                    .entry((i.clone(), r.location.clone()))
                    .or_insert((0.0, 0));
                e.0 += r.profit;
                e.1 += r.impressions;
            }
        }
        for (i, v) in outcome.spend {
            *self.spent.entry(i).or_insert(0.0) += v;
        }
        Ok(())
    }
}
