use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run::{sample_slot, RunReport};
use super::PolicyKind;
use crate::domain::{CampaignId, CreativeId, Frame, FrameClock, LocationId, Quad};
use crate::engine::{Diagnostics, EngineState, FrameOutcome, Projector, Schedule};
use crate::error::Result;
use crate::model::Budget;
use crate::projection::{HistoryLog, HistoryRecord};

type Triple = (CampaignId, CreativeId, LocationId);

/// Traffic and profit rates read from a log of what actually happened.
///
/// A quad's profit per impression is the rate logged for it in that frame,
/// else its triple's rate over the whole log, else its creative's rate, else
/// zero.
#[derive(Clone, Debug, Default)]
pub struct Replay {
    supply: BTreeMap<(LocationId, Frame), u64>,
    at_frame: HashMap<(Triple, Frame), (f64, u64)>,
    triple: HashMap<Triple, (f64, u64)>,
    pair: HashMap<(CampaignId, CreativeId), (f64, u64)>,
}

fn add(acc: &mut (f64, u64), profit: f64, n: u64) {
    acc.0 += profit;
    acc.1 += n;
}

fn rate(acc: Option<&(f64, u64)>) -> Option<f64> {
    acc.filter(|(_, n)| *n > 0).map(|(p, n)| p / *n as f64)
}

impl Replay {
    /// Records before frame 1 are ignored.
    pub fn from_log(log: &HistoryLog, clock: &FrameClock) -> Self {
        let mut r = Replay::default();
        for rec in log.records() {
            let Some(k) = clock.frame_at(rec.timestamp) else { continue };
            *r.supply.entry((rec.location.clone(), k)).or_default() += rec.impressions;
            if let Some((i, j)) = &rec.ad {
                let t = (i.clone(), j.clone(), rec.location.clone());
                add(r.at_frame.entry((t.clone(), k)).or_default(), rec.profit, rec.impressions);
                add(r.triple.entry(t).or_default(), rec.profit, rec.impressions);
                add(r.pair.entry((i.clone(), j.clone())).or_default(), rec.profit, rec.impressions);
            }
        }
        r
    }

    pub fn supply(&self, location: &LocationId, frame: Frame) -> u64 {
        self.supply.get(&(location.clone(), frame)).copied().unwrap_or(0)
    }

    pub fn profit(&self, quad: &Quad) -> f64 {
        let t = (quad.campaign.clone(), quad.creative.clone(), quad.location.clone());
        rate(self.at_frame.get(&(t.clone(), quad.frame)))
            .or_else(|| rate(self.triple.get(&t)))
            .or_else(|| rate(self.pair.get(&(quad.campaign.clone(), quad.creative.clone()))))
            .unwrap_or(0.0)
    }
}

/// Result of replaying the engine against recorded traffic.
#[derive(Clone, Debug)]
pub struct ReplayRun {
    pub report: RunReport,
    /// Delivery as the engine would have logged it.
    pub delivered: HistoryLog,
    pub diagnostics: Vec<Diagnostics>,
}

/// Runs the rolling-horizon loop from the engine's current frame through
/// `last`, delivering against the replayed traffic.
pub fn replay(
    mut state: EngineState,
    schedule: &Schedule,
    projector: &dyn Projector,
    traffic: &Replay,
    last: Frame,
    seed: u64,
) -> Result<ReplayRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations: BTreeSet<LocationId> = schedule.admissible.iter().map(|q| q.location.clone()).collect();
    let budgets = state.budgets.clone();
    let mut report = RunReport {
        policy: PolicyKind::LpEngine,
        seed,
        revenue: 0.0,
        impressions: 0,
        spend: budgets.keys().map(|i| (i.clone(), 0.0)).collect(),
        budgets: budgets.clone(),
        supply_violations: 0,
        probability_violations: 0,
        frame_revenue: Vec::new(),
        max_frame_profit: BTreeMap::new(),
        aborted: None,
    };
    let mut delivered = HistoryLog::new();
    let mut diagnostics = Vec::new();

    while state.frame <= last {
        let k = state.frame;
        let (plan, diag) = state.plan_cycle(schedule, projector)?;
        diagnostics.push(diag);
        if let Err(e) = plan.validate() {
            report.probability_violations += 1;
            report.aborted = Some(e.to_string());
            break;
        }
        let stopped: BTreeSet<&CampaignId> = budgets
            .keys()
            .filter(|i| matches!(state.remaining(i), Budget::Finite(d) if d <= 0.0))
            .collect();

        let t = state.clock.start(k);
        let mut records = Vec::new();
        let mut spend: BTreeMap<CampaignId, f64> = BTreeMap::new();
        let mut frame_revenue = 0.0;
        let mut cap: BTreeMap<CampaignId, f64> = BTreeMap::new();
        for l in &locations {
            let n = traffic.supply(l, k);
            let mut best: BTreeMap<&CampaignId, f64> = BTreeMap::new();
            for q in schedule.admissible.at_slot(l, k) {
                let e = best.entry(&q.campaign).or_insert(0.0);
                *e = e.max(traffic.profit(q));
            }
            for (i, p) in best {
                *cap.entry(i.clone()).or_insert(0.0) += n as f64 * p;
            }
            let entries: Vec<_> = plan
                .slot(k, l)
                .into_iter()
                .map(|(i, j, p)| (i.clone(), j.clone(), if stopped.contains(i) { 0.0 } else { p }))
                .collect();
            let probs: Vec<f64> = entries.iter().map(|e| e.2).collect();
            let counts = sample_slot(n, &probs, &mut rng);
            let total: u64 = counts.iter().sum();
            if total > n {
                report.supply_violations += 1;
            }
            for ((i, j, _), d) in entries.into_iter().zip(counts) {
                if d == 0 {
                    continue;
                }
                let q = Quad {
                    campaign: i.clone(),
                    creative: j.clone(),
                    frame: k,
                    location: l.clone(),
                };
                let earned = d as f64 * traffic.profit(&q);
                *spend.entry(i.clone()).or_insert(0.0) += earned;
                frame_revenue += earned;
                report.impressions += d;
                records.push(HistoryRecord::delivered(t, l.clone(), i, j, d, earned));
            }
            if total < n || records.iter().all(|r| r.location != *l) {
                records.push(HistoryRecord::unfilled(t, l.clone(), n - total.min(n)));
            }
        }
        for (i, c) in cap {
            let e = report.max_frame_profit.entry(i).or_insert(0.0);
            *e = e.max(c);
        }
        for (i, s) in &spend {
            *report.spend.entry(i.clone()).or_insert(0.0) += s;
        }
        report.revenue += frame_revenue;
        report.frame_revenue.push(frame_revenue);
        for r in &records {
            delivered.append(r.clone())?;
        }
        state.advance(FrameOutcome {
            frame: k,
            records,
            spend,
        })?;
    }
    Ok(ReplayRun {
        report,
        delivered,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, HistoryProjector};
    use crate::fixtures::t1_catalog;
    use crate::domain::full_grid;

    #[test]
    fn replays_t1_traffic() {
        let catalog = t1_catalog();
        let clock = catalog.clock;
        let mut recs = Vec::new();
        for k in [1, 2] {
            let t = clock.start(Frame(k));
            let past = t - chrono::Duration::weeks(1);
            recs.push(HistoryRecord::delivered(past, "L1", "1", "1", 3, 3.0));
            recs.push(HistoryRecord::delivered(past, "L1", "2", "1", 2, 1.0));
            recs.push(HistoryRecord::delivered(t, "L1", "1", "1", 3, 3.0));
            recs.push(HistoryRecord::delivered(t, "L1", "2", "1", 2, 1.0));
        }
        let all = HistoryLog::from_records(recs).unwrap();
        let history =
            HistoryLog::from_records(all.records().iter().filter(|r| r.timestamp < clock.epoch).cloned().collect())
                .unwrap();
        let traffic = Replay::from_log(&all, &clock);
        assert_eq!(traffic.supply(&"L1".into(), Frame(1)), 5);
        assert_eq!(traffic.profit(&Quad::new("2", "1", 2, "L1")), 0.5);

        let schedule = Schedule {
            admissible: full_grid(&catalog),
            new: BTreeSet::new(),
        };
        let mut config = EngineConfig::default();
        config.projection.n_min = 2;
        let projector = HistoryProjector::new(config.projection.clone(), config.supply_method);
        let budgets = [("1".into(), Budget::Finite(10.0)), ("2".into(), Budget::Unbounded)].into();
        let state = EngineState::new(Frame(1), budgets, history, clock, config).unwrap();
        let run = replay(state, &schedule, &projector, &traffic, Frame(2), 7).unwrap();
        assert_eq!(run.report.revenue, 10.0);
        assert_eq!(run.report.impressions, 10);
        assert_eq!(run.report.supply_violations, 0);
        assert!(run.report.budget_safe());
        assert_eq!(run.diagnostics.len(), 2);
        assert_eq!(run.delivered.delivered_impressions(&"L1".into(), &"1".into(), &"1".into()), 10);
    }
}
