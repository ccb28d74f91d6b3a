use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use super::policy::{GreedyConfig, GreedyPolicy, LpPolicy, Policy, PolicyKind, UniformPolicy};
use super::{World, WorldConfig};
use crate::domain::{CampaignId, Frame, Quad};
use crate::engine::{DeliveryPlan, EngineConfig, FrameOutcome};
use crate::error::{Error, Result};
use crate::model::Budget;
use crate::projection::HistoryRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub engine: EngineConfig,
    pub greedy: GreedyConfig,
    /// Feed the engine ground truth instead of log-based projections.
    pub perfect_projections: bool,
    /// Frames to simulate; `None` runs the whole span.
    pub frames: Option<u32>,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            engine: EngineConfig::default(),
            greedy: GreedyConfig::default(),
            perfect_projections: false,
            frames: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub policy: PolicyKind,
    pub seed: u64,
    pub revenue: f64,
    pub impressions: u64,
    pub spend: BTreeMap<CampaignId, f64>,
    pub budgets: BTreeMap<CampaignId, Budget>,
    /// Slots where delivered impressions exceeded arrivals.
    pub supply_violations: usize,
    /// Plans whose slot probabilities left `[0, 1]` or summed above one.
    pub probability_violations: usize,
    pub frame_revenue: Vec<f64>,
    /// Largest profit a campaign could have earned in any single frame.
    pub max_frame_profit: BTreeMap<CampaignId, f64>,
    /// Set when the run stopped on an invalid plan.
    pub aborted: Option<String>,
}

impl RunReport {
    /// Spend beyond the budget, per campaign (zero when within budget).
    pub fn overshoot(&self) -> BTreeMap<CampaignId, f64> {
        self.spend
            .iter()
            .map(|(i, s)| {
                let over = match self.budgets.get(i) {
                    Some(Budget::Finite(d)) => (s - d).max(0.0),
                    _ => 0.0,
                };
                (i.clone(), over)
            })
            .collect()
    }

    /// Every overshoot is within one frame's worth of maximal profit.
    pub fn budget_safe(&self) -> bool {
        self.overshoot().iter().all(|(i, over)| {
            *over <= self.max_frame_profit.get(i).copied().unwrap_or(0.0) + 1e-9
        })
    }
}

fn make_policy(world: &Arc<World>, kind: PolicyKind, options: &SimOptions) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::LpEngine => Box::new(LpPolicy::new(
            world,
            options.engine.clone(),
            options.perfect_projections.then(|| Arc::clone(world)),
        )?),
        PolicyKind::Greedy => Box::new(GreedyPolicy::new(world, options.greedy)),
        PolicyKind::Uniform => Box::new(UniformPolicy::new(world)),
    })
}

/// Splits `n` arrivals over the plan entries of one slot; the remainder is
/// unfilled.
pub(crate) fn sample_slot(n: u64, probs: &[f64], rng: &mut impl Rng) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        let d = if left == 0 || p <= 0.0 || mass <= 0.0 {
            0
        } else {
            let q = (p / mass).min(1.0);
            Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(0)
        };
        out.push(d);
        left -= d;
        mass -= p;
    }
    out
}

/// Simulates `kind` over the world's span.
pub fn run_policy(world: &Arc<World>, kind: PolicyKind, options: &SimOptions) -> Result<RunReport> {
    let mut policy = make_policy(world, kind, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let frames = options.frames.unwrap_or(world.frames()).min(world.frames());
    let schedule = &world.config.schedule.admissible;
    let mut report = RunReport {
        policy: kind,
        seed: options.seed,
        revenue: 0.0,
        impressions: 0,
        spend: world.config.budgets.keys().map(|i| (i.clone(), 0.0)).collect(),
        budgets: world.config.budgets.clone(),
        supply_violations: 0,
        probability_violations: 0,
        frame_revenue: Vec::with_capacity(frames as usize),
        max_frame_profit: BTreeMap::new(),
        aborted: None,
    };

    for k in (1..=frames).map(Frame) {
        let stopped: BTreeSet<CampaignId> = report
            .budgets
            .iter()
            .filter(|(i, b)| matches!(b, Budget::Finite(d) if report.spend[*i] >= *d))
            .map(|(i, _)| i.clone())
            .collect();
        let plan: DeliveryPlan = policy.plan(k, &stopped)?;
        if let Err(e) = plan.validate() {
            report.probability_violations += 1;
            report.aborted = Some(e.to_string());
            break;
        }

        let t = world.clock().start(k);
        let mut records = Vec::new();
        let mut frame_spend: BTreeMap<CampaignId, f64> = BTreeMap::new();
        let mut frame_revenue = 0.0;
        let mut frame_cap: BTreeMap<CampaignId, f64> = BTreeMap::new();
        for l in world.config.catalog.locations() {
            let n = world.draw_arrivals(world.expected_supply(l, k), &mut rng);
            let mut best: BTreeMap<&CampaignId, f64> = BTreeMap::new();
            for q in schedule.at_slot(l, k) {
                let p = world.profit(q);
                let e = best.entry(&q.campaign).or_insert(0.0);
                *e = e.max(p);
            }
            for (i, p) in best {
                *frame_cap.entry(i.clone()).or_insert(0.0) += n as f64 * p;
            }

            let entries: Vec<_> = plan
                .slot(k, l)
                .into_iter()
                .map(|(i, j, p)| (i.clone(), j.clone(), if stopped.contains(i) { 0.0 } else { p }))
                .collect();
            let probs: Vec<f64> = entries.iter().map(|e| e.2).collect();
            let counts = sample_slot(n, &probs, &mut rng);
            let delivered: u64 = counts.iter().sum();
            if delivered > n {
                report.supply_violations += 1;
            }
            let mut seen = 0;
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
                if !schedule.contains(&q) {
                    return Err(Error::Contract(format!("policy delivered inadmissible {q}")));
                }
                let p = world.profit(&q);
                let earned = d as f64 * p;
                *frame_spend.entry(i.clone()).or_insert(0.0) += earned;
                frame_revenue += earned;
                report.impressions += d;
                let o = world.observe(d, &mut rng);
                if o > 0 {
                    seen += o;
                    records.push(HistoryRecord::delivered(t, l.clone(), i, j, o, o as f64 * p));
                }
            }
            let unfilled = world.observe(n.saturating_sub(delivered), &mut rng);
            if unfilled > 0 || seen == 0 {
                records.push(HistoryRecord::unfilled(t, l.clone(), unfilled));
            }
        }

        for (i, cap) in frame_cap {
            let e = report.max_frame_profit.entry(i).or_insert(0.0);
            *e = e.max(cap);
        }
        for (i, s) in &frame_spend {
            *report.spend.entry(i.clone()).or_insert(0.0) += s;
        }
        report.revenue += frame_revenue;
        report.frame_revenue.push(frame_revenue);
        policy.observe(FrameOutcome {
            frame: k,
            records,
            spend: frame_spend,
        })?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub revenues: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub summaries: Vec<PolicySummary>,
    pub reports: Vec<RunReport>,
    /// Mean and standard deviation of the per-seed relative uplift of the
    /// engine over the greedy baseline.
    pub uplift: Option<(f64, f64)>,
    /// One-sided sign-test p-value for the engine beating greedy.
    pub sign_p: Option<f64>,
}

impl Comparison {
    pub fn summary(&self, policy: PolicyKind) -> Option<&PolicySummary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `P(X >= positives)` for `X ~ Binomial(n, 1/2)`, where `n` counts the
/// non-zero differences.
pub fn sign_test(differences: &[f64]) -> f64 {
    let positives = differences.iter().filter(|d| **d > 0.0).count() as u64;
    let n = differences.iter().filter(|d| **d != 0.0).count() as u64;
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut c = 1.0f64;
    for x in 0..=n {
        if x >= positives {
            p += c;
        }
        c = c * (n - x) as f64 / (x + 1) as f64;
    }
    p / 2f64.powi(n as i32)
}

/// Runs every policy on a world generated per seed. Seeds run in parallel.
pub fn compare(
    config: &WorldConfig,
    policies: &[PolicyKind],
    seeds: &[u64],
    options: &SimOptions,
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::Argument("compare needs at least one seed".into()));
    }
    let results: Vec<Result<Vec<RunReport>>> = thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let world = Arc::new(World::generate(WorldConfig {
                        seed,
                        ..config.clone()
                    })?);
                    let opts = SimOptions {
                        seed,
                        ..options.clone()
                    };
                    policies
                        .iter()
                        .map(|p| run_policy(&world, *p, &opts))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal("simulation thread panicked".into())))
            })
            .collect()
    });
    let mut reports = Vec::new();
    for r in results {
        reports.extend(r?);
    }
    let summaries = policies
        .iter()
        .map(|p| {
            let revenues: Vec<f64> = reports
                .iter()
                .filter(|r| r.policy == *p)
                .map(|r| r.revenue)
                .collect();
            let (mean, std) = mean_std(&revenues);
            PolicySummary {
                policy: *p,
                revenues,
                mean,
                std,
            }
        })
        .collect::<Vec<_>>();
    let by = |p: PolicyKind| summaries.iter().find(|s| s.policy == p);
    let (uplift, sign_p) = match (by(PolicyKind::LpEngine), by(PolicyKind::Greedy)) {
        (Some(lp), Some(greedy)) => {
            let rel: Vec<f64> = lp
                .revenues
                .iter()
                .zip(&greedy.revenues)
                .map(|(a, b)| if *b > 0.0 { (a - b) / b } else { 0.0 })
                .collect();
            let diffs: Vec<f64> = lp
                .revenues
                .iter()
                .zip(&greedy.revenues)
                .map(|(a, b)| a - b)
                .collect();
            (Some(mean_std(&rel)), Some(sign_test(&diffs)))
        }
        _ => (None, None),
    };
    Ok(Comparison {
        seeds: seeds.to_vec(),
        summaries,
        reports,
        uplift,
        sign_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1_catalog;
    use crate::domain::full_grid;
    use crate::engine::Schedule;
    use crate::sim::{Arrivals, SyntheticSpec};

    fn t1_world(budget_1: Budget, frames_supply: f64) -> WorldConfig {
        let catalog = t1_catalog();
        let admissible = full_grid(&catalog);
        let mut profit = BTreeMap::new();
        profit.insert(("1".into(), "1".into(), "L1".into()), 1.0);
        profit.insert(("2".into(), "1".into(), "L1".into()), 0.5);
        let mut budgets = BTreeMap::new();
        budgets.insert(CampaignId::new("1"), budget_1);
        budgets.insert(CampaignId::new("2"), Budget::Unbounded);
        WorldConfig {
            catalog,
            schedule: Schedule {
                admissible,
                new: BTreeSet::new(),
            },
            budgets,
            base_rate: [("L1".into(), frames_supply)].into_iter().collect(),
            day_multiplier: [1.0; 7],
            hour_multiplier: [1.0; 24],
            noise_sigma: 0.0,
            supply_trend: 0.0,
            profit,
            profit_drift: 0.0,
            observability: 1.0,
            arrivals: Arrivals::Exact,
            warmup_days: 0,
            seed: 0,
        }
    }

    #[test]
    fn t1_world_lp_engine_earns_ten() {
        let world = Arc::new(World::generate(t1_world(Budget::Finite(10.0), 5.0)).unwrap());
        let options = SimOptions {
            perfect_projections: true,
            ..Default::default()
        };
        let r = run_policy(&world, PolicyKind::LpEngine, &options).unwrap();
        assert!((r.revenue - 10.0).abs() < 1e-9, "{}", r.revenue);
        assert_eq!(r.impressions, 10);
        assert_eq!(r.supply_violations, 0);
        assert!(r.budget_safe());
    }

    #[test]
    fn uniform_mean_profit_per_slot() {
        let mut config = t1_world(Budget::Unbounded, 5000.0);
        config.arrivals = Arrivals::Exact;
        let world = Arc::new(World::generate(config).unwrap());
        let r = run_policy(&world, PolicyKind::Uniform, &SimOptions::default()).unwrap();
        assert_eq!(r.impressions, 10_000);
        let per_slot = r.revenue / 10_000.0;
        // Per-slot profit is 1.0 or 0.5 with equal odds: std 0.25.
        assert!((per_slot - 0.75).abs() < 3.0 * 0.25 / 100.0, "{per_slot}");
    }

    #[test]
    fn empty_schedule_earns_nothing() {
        let mut config = t1_world(Budget::Unbounded, 5.0);
        config.schedule = Schedule::default();
        let world = Arc::new(World::generate(config).unwrap());
        for p in PolicyKind::ALL {
            let r = run_policy(&world, p, &SimOptions::default()).unwrap();
            assert_eq!(r.revenue, 0.0);
            assert_eq!(r.impressions, 0);
        }
    }

    #[test]
    fn sampling_never_exceeds_arrivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [0, 1, 7, 1000] {
            let c = sample_slot(n, &[0.3, 0.0, 0.7], &mut rng);
            assert!(c.iter().sum::<u64>() <= n);
            assert_eq!(c[1], 0);
        }
        assert_eq!(sample_slot(10, &[1.0, 0.0], &mut rng), vec![10, 0]);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test(&[1.0; 20]) - 0.5f64.powi(20)).abs() < 1e-18);
        assert_eq!(sign_test(&[0.0, 0.0]), 1.0);
        assert!((sign_test(&[1.0, -1.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn self_comparison_and_determinism() {
        let spec = SyntheticSpec {
            days: 2,
            warmup_days: 0,
            ..Default::default()
        };
        let config = spec.build().unwrap();
        let c = compare(&config, &[PolicyKind::Uniform, PolicyKind::Uniform], &[1, 2], &SimOptions::default()).unwrap();
        assert_eq!(c.summaries[0].revenues, c.summaries[1].revenues);
        assert!(c.uplift.is_none());

        let det = SyntheticSpec {
            arrivals: Arrivals::Exact,
            ..spec
        }
        .build()
        .unwrap();
        let c = compare(&det, &[PolicyKind::Greedy], &[5, 5, 5], &SimOptions::default()).unwrap();
        assert_eq!(c.summaries[0].std, 0.0);
    }
}
