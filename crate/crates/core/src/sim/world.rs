use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Poisson};

use crate::domain::{
    full_grid, Campaign, CampaignId, Catalog, CreativeId, Frame, FrameClock, LocationId, Quad,
};
use crate::engine::Schedule;
use crate::error::{Error, Result};
use crate::model::Budget;
use crate::projection::{HistoryLog, HistoryRecord};

/// How many impressions arrive in a frame given its true supply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Arrivals {
    #[default]
    Poisson,
    /// The true supply rounded to the nearest integer.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub catalog: Catalog,
    pub schedule: Schedule,
    pub budgets: BTreeMap<CampaignId, Budget>,
    /// Mean traffic per frame before the calendar multipliers.
    pub base_rate: BTreeMap<LocationId, f64>,
    /// Monday first.
    pub day_multiplier: [f64; 7],
    pub hour_multiplier: [f64; 24],
    /// Log-scale standard deviation of the mean-one lognormal noise.
    pub noise_sigma: f64,
    /// Relative traffic growth per day, counted from the epoch.
    pub supply_trend: f64,
    /// Per-impression profit at the first frame.
    pub profit: BTreeMap<(CampaignId, CreativeId, LocationId), f64>,
    /// Relative profit change from the first to the last frame.
    pub profit_drift: f64,
    /// Share of traffic that reaches the logs.
    pub observability: f64,
    pub arrivals: Arrivals,
    /// Days of uniformly delivered traffic logged before the epoch.
    pub warmup_days: u32,
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.day_multiplier.iter().all(positive) || !self.hour_multiplier.iter().all(positive) {
            return Err(Error::Argument("calendar multipliers must be > 0".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Argument("noise sigma must be >= 0".into()));
        }
        if !(self.observability > 0.0 && self.observability <= 1.0) {
            return Err(Error::Argument("observability must lie in (0, 1]".into()));
        }
        if !self.supply_trend.is_finite() || !self.profit_drift.is_finite() {
            return Err(Error::Argument("trend and drift must be finite".into()));
        }
        for l in self.catalog.locations() {
            match self.base_rate.get(l) {
                Some(b) if b.is_finite() && *b >= 0.0 => {}
                _ => return Err(Error::Argument(format!("no valid base rate for location {l}"))),
            }
        }
        for q in self.schedule.admissible.iter() {
            let key = (q.campaign.clone(), q.creative.clone(), q.location.clone());
            match self.profit.get(&key) {
                Some(p) if p.is_finite() && *p >= 0.0 => {}
                _ => return Err(Error::Argument(format!("no valid profit for {q}"))),
            }
            if !self.budgets.contains_key(&q.campaign) {
                return Err(Error::Argument(format!("no budget for campaign {}", q.campaign)));
            }
        }
        Ok(())
    }
}

/// Shape of a generated synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub campaigns: usize,
    pub creatives_per_campaign: usize,
    pub locations: usize,
    pub days: u32,
    pub frame: Duration,
    pub epoch: DateTime<Utc>,
    /// One rate per location, cycled if shorter.
    pub base_rates: Vec<f64>,
    pub day_multiplier: [f64; 7],
    pub hour_multiplier: [f64; 24],
    pub noise_sigma: f64,
    pub supply_trend: f64,
    /// Profits are drawn uniformly from this range.
    pub profit_range: (f64, f64),
    pub profit_drift: f64,
    /// One budget per campaign, cycled; empty means unbounded.
    pub budgets: Vec<Budget>,
    /// Creatives per campaign, counted from the last, flagged new.
    pub new_creatives: usize,
    pub observability: f64,
    pub arrivals: Arrivals,
    pub warmup_days: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let clock = FrameClock::default();
        SyntheticSpec {
            campaigns: 3,
            creatives_per_campaign: 2,
            locations: 4,
            days: 14,
            frame: clock.duration,
            epoch: clock.epoch,
            base_rates: vec![100.0],
            day_multiplier: [1.0; 7],
            hour_multiplier: [1.0; 24],
            noise_sigma: 0.0,
            supply_trend: 0.0,
            profit_range: (0.001, 0.01),
            profit_drift: 0.0,
            budgets: Vec::new(),
            new_creatives: 0,
            observability: 1.0,
            arrivals: Arrivals::Poisson,
            warmup_days: 14,
            seed: 0,
        }
    }
}

/// A daily wave peaking in the afternoon, between 0.4 and 1.6.
pub fn diurnal_profile() -> [f64; 24] {
    let mut m = [1.0; 24];
    for (h, v) in m.iter_mut().enumerate() {
        *v = 1.0 + 0.6 * ((h as f64 - 9.0) / 24.0 * std::f64::consts::TAU).sin();
    }
    m
}

/// Busier weekdays, quieter weekends.
pub fn weekly_profile() -> [f64; 7] {
    [1.1, 1.15, 1.1, 1.05, 1.0, 0.8, 0.8]
}

impl SyntheticSpec {
    pub fn build(&self) -> Result<WorldConfig> {
        if self.campaigns == 0 || self.creatives_per_campaign == 0 || self.locations == 0 || self.days == 0 {
            return Err(Error::Argument("synthetic world needs at least one of everything".into()));
        }
        if self.base_rates.is_empty() {
            return Err(Error::Argument("at least one base rate is required".into()));
        }
        let (lo, hi) = self.profit_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Argument("profit range must satisfy 0 <= lo <= hi".into()));
        }
        let clock = FrameClock::new(self.epoch, self.frame)?;
        let frames_per_day = (Duration::days(1).num_seconds() / self.frame.num_seconds()).max(1);
        let frames = u32::try_from(frames_per_day * self.days as i64)
            .map_err(|_| Error::Argument("span too long".into()))?;
        let campaign_ids: Vec<CampaignId> =
            (1..=self.campaigns).map(|i| CampaignId::new(format!("C{i}"))).collect();
        let creative_ids: Vec<CreativeId> = (1..=self.creatives_per_campaign)
            .map(|j| CreativeId::new(format!("B{j}")))
            .collect();
        let locations: Vec<LocationId> =
            (1..=self.locations).map(|l| LocationId::new(format!("L{l}"))).collect();
        let catalog = Catalog::new(
            campaign_ids
                .iter()
                .map(|id| Campaign {
                    id: id.clone(),
                    name: format!("campaign {id}"),
                })
                .collect(),
            campaign_ids
                .iter()
                .map(|i| (i.clone(), creative_ids.clone()))
                .collect(),
            locations.clone(),
            frames,
            clock,
        )?;
        let mut new = BTreeSet::new();
        let first_new = self.creatives_per_campaign.saturating_sub(self.new_creatives);
        for i in &campaign_ids {
            for j in &creative_ids[first_new..] {
                for l in &locations {
                    new.insert((i.clone(), j.clone(), l.clone()));
                }
            }
        }
        let schedule = Schedule {
            admissible: full_grid(&catalog),
            new,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0f_9a0f_17);
        let mut profit = BTreeMap::new();
        for i in &campaign_ids {
            for j in &creative_ids {
                for l in &locations {
                    let p = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    profit.insert((i.clone(), j.clone(), l.clone()), p);
                }
            }
        }
        let budgets = campaign_ids
            .iter()
            .enumerate()
            .map(|(n, i)| {
                let b = if self.budgets.is_empty() {
                    Budget::Unbounded
                } else {
                    self.budgets[n % self.budgets.len()]
                };
                (i.clone(), b)
            })
            .collect();
        let base_rate = locations
            .iter()
            .enumerate()
            .map(|(n, l)| (l.clone(), self.base_rates[n % self.base_rates.len()]))
            .collect();
        let config = WorldConfig {
            catalog,
            schedule,
            budgets,
            base_rate,
            day_multiplier: self.day_multiplier,
            hour_multiplier: self.hour_multiplier,
            noise_sigma: self.noise_sigma,
            supply_trend: self.supply_trend,
            profit,
            profit_drift: self.profit_drift,
            observability: self.observability,
            arrivals: self.arrivals,
            warmup_days: self.warmup_days,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Materialized ground truth: mean supply for every warm-up and planning
/// frame and the warm-up delivery log.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    /// Keyed by frame offset: 1 is the first planning frame, offsets <= 0
    /// are warm-up frames.
    supply: BTreeMap<(LocationId, i64), f64>,
    warmup: HistoryLog,
}

impl World {
    pub fn generate(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let clock = config.catalog.clock;
        let per_day = (Duration::days(1).num_seconds() / clock.duration.num_seconds()).max(1);
        let first = 1 - per_day * config.warmup_days as i64;
        let last = config.catalog.frame_count() as i64;
        let noise = if config.noise_sigma > 0.0 {
            let s = config.noise_sigma;
            Some(LogNormal::new(-s * s / 2.0, s).map_err(|e| Error::Argument(e.to_string()))?)
        } else {
            None
        };
        let mut supply = BTreeMap::new();
        for l in config.catalog.locations() {
            let base = config.base_rate[l];
            for offset in first..=last {
                let t = offset_start(&clock, offset);
                let days = (t - clock.epoch).num_seconds() as f64 / 86_400.0;
                let trend = (1.0 + config.supply_trend * days).max(0.05);
                let calendar = config.day_multiplier[t.weekday().num_days_from_monday() as usize]
                    * config.hour_multiplier[t.hour() as usize];
                let eps = noise.as_ref().map_or(1.0, |d| d.sample(&mut rng));
                supply.insert((l.clone(), offset), base * calendar * trend * eps);
            }
        }
        let mut world = World {
            config,
            supply,
            warmup: HistoryLog::new(),
        };
        world.warmup = world.warmup_history(&mut rng, first)?;
        Ok(world)
    }

    pub fn clock(&self) -> &FrameClock {
        &self.config.catalog.clock
    }

    pub fn frames(&self) -> u32 {
        self.config.catalog.frame_count()
    }

    pub fn expected_supply(&self, location: &LocationId, frame: Frame) -> f64 {
        self.supply
            .get(&(location.clone(), frame.0 as i64))
            .copied()
            .unwrap_or(0.0)
    }

    /// Mean supply at a frame offset; non-positive offsets are warm-up frames.
    pub fn supply_at_offset(&self, location: &LocationId, offset: i64) -> f64 {
        self.supply
            .get(&(location.clone(), offset))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn profit(&self, quad: &Quad) -> f64 {
        self.profit_at(&quad.campaign, &quad.creative, &quad.location, quad.frame.0 as i64)
    }

    fn profit_at(&self, i: &CampaignId, j: &CreativeId, l: &LocationId, offset: i64) -> f64 {
        let base = self
            .config
            .profit
            .get(&(i.clone(), j.clone(), l.clone()))
            .copied()
            .unwrap_or(0.0);
        let span = (self.frames() as f64 - 1.0).max(1.0);
        (base * (1.0 + self.config.profit_drift * (offset - 1) as f64 / span)).max(0.0)
    }

    /// Log of the warm-up period.
    pub fn warmup(&self) -> &HistoryLog {
        &self.warmup
    }

    pub fn draw_arrivals(&self, mean: f64, rng: &mut impl Rng) -> u64 {
        match self.config.arrivals {
            Arrivals::Exact => mean.round().max(0.0) as u64,
            Arrivals::Poisson => {
                if mean <= 0.0 {
                    0
                } else {
                    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
                }
            }
        }
    }

    /// Thins a count by the observability fraction.
    pub fn observe(&self, n: u64, rng: &mut impl Rng) -> u64 {
        let f = self.config.observability;
        if f >= 1.0 || n == 0 {
            n
        } else {
            Binomial::new(n, f).map(|d| d.sample(rng)).unwrap_or(0)
        }
    }

    fn warmup_history(&self, rng: &mut ChaCha8Rng, first: i64) -> Result<HistoryLog> {
        let clock = self.config.catalog.clock;
        let mut triples: BTreeMap<LocationId, BTreeSet<(CampaignId, CreativeId)>> = BTreeMap::new();
        for q in self.config.schedule.admissible.iter() {
            if !self.config.schedule.is_new(q) {
                triples.entry(q.location.clone()).or_default().insert(q.pair());
            }
        }
        let mut log = HistoryLog::new();
        for offset in first..=0 {
            let t = offset_start(&clock, offset);
            for l in self.config.catalog.locations() {
                let n = self.draw_arrivals(self.supply_at_offset(l, offset), rng);
                let pairs: Vec<_> = triples.get(l).map(|s| s.iter().collect()).unwrap_or_default();
                let counts = split_uniform(n, pairs.len(), rng);
                let mut seen = 0;
                for ((i, j), c) in pairs.into_iter().zip(counts) {
                    let c = self.observe(c, rng);
                    if c == 0 {
                        continue;
                    }
                    seen += c;
                    let p = self.profit_at(i, j, l, offset);
                    log.append(HistoryRecord::delivered(t, l.clone(), i.clone(), j.clone(), c, c as f64 * p))?;
                }
                if seen == 0 {
                    log.append(HistoryRecord::unfilled(t, l.clone(), 0))?;
                }
            }
        }
        Ok(log)
    }
}

fn offset_start(clock: &FrameClock, offset: i64) -> DateTime<Utc> {
    clock.epoch + clock.duration * (offset - 1) as i32
}

/// Multinomial split of `n` into `k` equally likely cells.
fn split_uniform(n: u64, k: usize, rng: &mut impl Rng) -> Vec<u64> {
    let mut out = Vec::with_capacity(k);
    let mut left = n;
    for c in 0..k {
        let cells = (k - c) as f64;
        let d = if c + 1 == k {
            left
        } else {
            Binomial::new(left, 1.0 / cells).map(|b| b.sample(rng)).unwrap_or(0)
        };
        out.push(d);
        left -= d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_noise_free_world() {
        let w = World::generate(SyntheticSpec::default().build().unwrap()).unwrap();
        for k in [1, 50, 336] {
            assert_eq!(w.expected_supply(&"L1".into(), Frame(k)), 100.0);
        }
    }

    #[test]
    fn same_seed_same_world() {
        let spec = SyntheticSpec {
            noise_sigma: 0.2,
            seed: 7,
            ..Default::default()
        };
        let a = World::generate(spec.build().unwrap()).unwrap();
        let b = World::generate(spec.build().unwrap()).unwrap();
        assert_eq!(a.supply, b.supply);
        assert_eq!(a.warmup, b.warmup);
        assert_eq!(a.config, b.config);
    }

    #[test]
    fn hour_multiplier_scales_exactly() {
        let mut hours = [1.0; 24];
        hours[12] = 2.0;
        let spec = SyntheticSpec {
            hour_multiplier: hours,
            ..Default::default()
        };
        let w = World::generate(spec.build().unwrap()).unwrap();
        // Frame 13 starts at noon.
        assert_eq!(w.expected_supply(&"L2".into(), Frame(13)), 200.0);
        assert_eq!(w.expected_supply(&"L2".into(), Frame(12)), 100.0);
    }

    #[test]
    fn warmup_covers_established_triples_only() {
        let spec = SyntheticSpec {
            new_creatives: 1,
            warmup_days: 1,
            ..Default::default()
        };
        let w = World::generate(spec.build().unwrap()).unwrap();
        assert!(!w.warmup().is_empty());
        assert!(w
            .warmup()
            .records()
            .iter()
            .all(|r| r.creative().map_or(true, |j| j.as_str() == "B1")));
        assert!(w.warmup().records().iter().all(|r| r.timestamp < w.clock().epoch));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SyntheticSpec::default().build().unwrap();
        c.observability = 0.0;
        assert!(c.validate().is_err());
        let mut c = SyntheticSpec::default().build().unwrap();
        c.day_multiplier[3] = 0.0;
        assert!(c.validate().is_err());
        let mut c = SyntheticSpec::default().build().unwrap();
        c.noise_sigma = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_split_conserves_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = split_uniform(1000, 6, &mut rng);
        assert_eq!(v.iter().sum::<u64>(), 1000);
    }
}
