//! Line-based `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Every key and its default:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `history` | | history CSV |
//! | `schedule` | | schedule CSV |
//! | `campaigns` | | campaigns CSV |
//! | `replay` | | traffic log replayed by `run` |
//! | `plan_out` | `plan.csv` | plan written by `plan` |
//! | `report_out` | `report.csv` | report written by `run`, `simulate`, `compare` |
//! | `projections_out` | `projections.csv` | dump written by `project` |
//! | `delivered_out` | | delivery log written by `run` |
//! | `epoch` | `2010-04-01T00:00:00Z` | start of frame 1 |
//! | `frame_minutes` | `60` | frame length |
//! | `frames` | last scheduled frame | number of frames |
//! | `frame` | `1` | frame planned by `plan` and `project` |
//! | `horizon` | `24` | frames planned individually |
//! | `gamma` | `0.95` | objective discount per frame, in (0, 1] |
//! | `lasting`, `overflow`, `learning` | `false`, `false`, `true` | secondary constraint families |
//! | `lasting_min` | `0` | per-frame campaign minimum |
//! | `overflow_fraction` | `1` | overflow share, in [0, 1] |
//! | `relax_secondary` | `true` | drop infeasible secondary rows |
//! | `supply_method` | `weighted` | `weighted` or `regression` |
//! | `n_min` | `50` | impressions behind an informed average |
//! | `half_life_hours` | `168` | recency half-life |
//! | `hour_of_day`, `day_of_week` | `true` | similarity features |
//! | `w_loc` | `0.5` | same-location weight, in [0, 1] |
//! | `lookback_days` | `28` | supply fallback window |
//! | `prior_profit` | `0` | profit when the ladder is exhausted |
//! | `final_order` | `campaign` | `campaign` or `location` first at level 4 |
//! | `lag_weights` | `0.6,0.4` | one- and two-week lag weights |
//! | `feas_tol`, `opt_tol` | `1e-8`, `1e-9` | simplex tolerances |
//! | `max_iterations` | `50·(n+m)` | pivot limit |
//! | `pivot_rule` | `dantzig` | `dantzig` (with Bland fallback) or `bland` |
//! | `seed` | `0` | run seed of `simulate` and `run` |
//! | `seeds` | `1-20` | seeds of `compare`: ranges `a-b` and lists |
//! | `policy` | `lp-engine` | policy of `simulate` |
//! | `policies` | `lp-engine,greedy,uniform` | policies of `compare` |
//! | `perfect_projections` | `false` | feed the engine true supply and profit |
//! | `sim_frames` | whole span | frames simulated |
//! | `greedy.learning_frames` | `24` | uniform frames before pacing |
//! | `greedy.quantile` | `0.25` | share of nodes dropped when ahead |
//! | `greedy.pace_tolerance` | `0.05` | on-pace band |
//! | `world.campaigns` | `3` | synthetic campaigns |
//! | `world.creatives` | `2` | creatives per campaign |
//! | `world.locations` | `4` | locations |
//! | `world.days` | `14` | simulated days |
//! | `world.base_rates` | `100` | traffic per frame, per location, cycled |
//! | `world.hour_profile` | `flat` | `flat`, `diurnal` or 24 multipliers |
//! | `world.day_profile` | `flat` | `flat`, `weekly` or 7 multipliers from Monday |
//! | `world.noise_sigma` | `0` | lognormal noise |
//! | `world.supply_trend` | `0` | relative growth per day |
//! | `world.profit_min`, `world.profit_max` | `0.001`, `0.01` | profit range |
//! | `world.profit_drift` | `0` | relative profit change over the span |
//! | `world.budgets` | unbounded | per campaign, cycled; `inf` allowed |
//! | `world.new_creatives` | `0` | creatives per campaign flagged new |
//! | `world.observability` | `1` | share of traffic logged |
//! | `world.arrivals` | `poisson` | `poisson` or `exact` |
//! | `world.warmup_days` | `14` | logged days before the epoch |
//! | `world.seed` | `0` | world seed |

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::Duration;

use super::files::parse_timestamp;
use crate::domain::FrameClock;
use crate::engine::{EngineConfig, SupplyMethod};
use crate::error::{Error, Result};
use crate::model::Budget;
use crate::projection::FinalLevelOrder;
use crate::sim::{diurnal_profile, weekly_profile, Arrivals, GreedyConfig, PolicyKind, SyntheticSpec};
use crate::solver::PivotRule;

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "ADPLAN_CONFIG";

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    value: String,
    origin: String,
    /// Directory that relative paths are resolved against.
    base: Option<PathBuf>,
}

/// Raw key-value pairs with where each came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, Entry>,
}

impl ConfigMap {
    /// Relative paths are taken relative to the directory of `source`.
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let base = source.parent().map(Path::to_path_buf);
        let mut map = ConfigMap::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(source, n + 1, "expected `key = value`"));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(source, n + 1, "empty key"));
            }
            let origin = format!("{}:{}", source.display(), n + 1);
            if map.entries.contains_key(key) {
                return Err(Error::parse(source, n + 1, format!("duplicate key `{key}`")));
            }
            map.entries.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    origin,
                    base: base.clone(),
                },
            );
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Overrides `key`; later calls win. Relative paths stay relative to the
    /// working directory.
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: &str) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                origin: origin.to_string(),
                base: None,
            },
        );
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim(), "--set");
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }
}

/// Removes keys from a [`ConfigMap`] while converting them.
struct Reader {
    entries: BTreeMap<String, Entry>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn value<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => parse(&e.value)
                .map(Some)
                .map_err(|m| Error::Argument(format!("{}: `{key}`: {m}", e.origin))),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.value(key, |s| s.parse::<T>().map_err(|e| format!("cannot parse `{s}`: {e}")))
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn flag(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.value(key, parse_bool)? {
            *slot = v;
        }
        Ok(())
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|e| {
            let p = PathBuf::from(e.value);
            match e.base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        })
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, e)) => Err(Error::Argument(format!("{}: unknown key `{k}`", e.origin))),
        }
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(|p| item(p.trim())).collect()
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}

fn parse_budget(s: &str) -> std::result::Result<Budget, String> {
    if s == "inf" {
        return Ok(Budget::Unbounded);
    }
    match parse_f64(s)? {
        v if v.is_finite() && v > 0.0 => Ok(Budget::Finite(v)),
        _ => Err(format!("budget must be > 0 or `inf`, got `{s}`")),
    }
}

/// Seeds written as ranges `a-b` and single values separated by commas.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("`{t}` is not a seed"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("no seeds".into());
    }
    Ok(out)
}

fn parse_profile<const N: usize>(s: &str, named: &[(&str, [f64; N])]) -> std::result::Result<[f64; N], String> {
    if let Some((_, p)) = named.iter().find(|(n, _)| *n == s) {
        return Ok(*p);
    }
    let v = parse_list(s, parse_f64)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} multipliers, got {}", v.len()))
}

/// Input and output files.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Paths {
    pub history: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub campaigns: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub plan_out: PathBuf,
    pub report_out: PathBuf,
    pub projections_out: PathBuf,
    pub delivered_out: Option<PathBuf>,
}

/// Simulation and comparison settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub policy: PolicyKind,
    pub policies: Vec<PolicyKind>,
    pub perfect_projections: bool,
    pub frames: Option<u32>,
    pub greedy: GreedyConfig,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            seed: 0,
            seeds: (1..=20).collect(),
            policy: PolicyKind::LpEngine,
            policies: PolicyKind::ALL.to_vec(),
            perfect_projections: false,
            frames: None,
            greedy: GreedyConfig::default(),
        }
    }
}

/// Everything a command may need, resolved from the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub clock: FrameClock,
    pub frames: Option<u32>,
    /// Frame planned by single-cycle commands.
    pub frame: u32,
    pub engine: EngineConfig,
    pub world: SyntheticSpec,
    pub sim: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths {
                plan_out: "plan.csv".into(),
                report_out: "report.csv".into(),
                projections_out: "projections.csv".into(),
                ..Default::default()
            },
            clock: FrameClock::default(),
            frames: None,
            frame: 1,
            engine: EngineConfig::default(),
            world: SyntheticSpec::default(),
            sim: SimSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut r = Reader {
            entries: map.entries.clone(),
        };
        let mut c = RunConfig::default();

        let p = &mut c.paths;
        p.history = r.path("history");
        p.schedule = r.path("schedule");
        p.campaigns = r.path("campaigns");
        p.replay = r.path("replay");
        p.delivered_out = r.path("delivered_out");
        if let Some(v) = r.path("plan_out") {
            p.plan_out = v;
        }
        if let Some(v) = r.path("report_out") {
            p.report_out = v;
        }
        if let Some(v) = r.path("projections_out") {
            p.projections_out = v;
        }

        let epoch = r.value("epoch", parse_timestamp)?.unwrap_or(c.clock.epoch);
        let minutes = r
            .value("frame_minutes", |s| match s.parse::<i64>() {
                Ok(m) if m > 0 => Ok(m),
                _ => Err(format!("frame length must be a positive number of minutes, got `{s}`")),
            })?
            .unwrap_or(c.clock.duration.num_minutes());
        c.clock = FrameClock::new(epoch, Duration::minutes(minutes))?;
        c.frames = r.parsed("frames")?;
        r.set("frame", &mut c.frame)?;

        let e = &mut c.engine;
        r.set("horizon", &mut e.horizon)?;
        r.set("gamma", &mut e.gamma)?;
        r.flag("lasting", &mut e.families.lasting)?;
        r.flag("overflow", &mut e.families.overflow)?;
        r.flag("learning", &mut e.families.learning)?;
        r.set("lasting_min", &mut e.lasting_min)?;
        r.set("overflow_fraction", &mut e.overflow_fraction)?;
        r.flag("relax_secondary", &mut e.relax_secondary)?;
        if let Some(m) = r.value("supply_method", |s| match s {
            "weighted" => Ok(SupplyMethod::WeightedAverage),
            "regression" => Ok(SupplyMethod::Regression),
            _ => Err(format!("expected weighted or regression, got `{s}`")),
        })? {
            e.supply_method = m;
        }

        let pp = &mut e.projection;
        r.set("n_min", &mut pp.n_min)?;
        if let Some(h) = r.value("half_life_hours", parse_f64)? {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Argument("half_life_hours must be > 0".into()));
            }
            pp.half_life = Duration::seconds((h * 3600.0).round() as i64);
        }
        r.flag("hour_of_day", &mut pp.similarity.hour_of_day)?;
        r.flag("day_of_week", &mut pp.similarity.day_of_week)?;
        r.set("w_loc", &mut pp.w_loc)?;
        if let Some(d) = r.parsed::<u32>("lookback_days")? {
            pp.lookback = Duration::days(d as i64);
        }
        r.set("prior_profit", &mut pp.prior_profit)?;
        if let Some(o) = r.value("final_order", |s| match s {
            "campaign" => Ok(FinalLevelOrder::CampaignFirst),
            "location" => Ok(FinalLevelOrder::LocationFirst),
            _ => Err(format!("expected campaign or location, got `{s}`")),
        })? {
            pp.final_order = o;
        }
        if let Some(w) = r.value("lag_weights", |s| {
            let v = parse_list(s, parse_f64)?;
            <[f64; 2]>::try_from(v).map_err(|_| "expected two weights".to_string())
        })? {
            pp.lag_weights = w;
        }

        let sv = &mut e.solver;
        r.set("feas_tol", &mut sv.feas_tol)?;
        r.set("opt_tol", &mut sv.opt_tol)?;
        if let Some(m) = r.parsed("max_iterations")? {
            sv.max_iterations = Some(m);
        }
        if let Some(rule) = r.value("pivot_rule", |s| match s {
            "dantzig" => Ok(PivotRule::DantzigThenBland),
            "bland" => Ok(PivotRule::Bland),
            _ => Err(format!("expected dantzig or bland, got `{s}`")),
        })? {
            sv.pivot_rule = rule;
        }

        let s = &mut c.sim;
        r.set("seed", &mut s.seed)?;
        if let Some(v) = r.value("seeds", parse_seeds)? {
            s.seeds = v;
        }
        r.set("policy", &mut s.policy)?;
        if let Some(v) = r.value("policies", |v| {
            parse_list(v, |p| p.parse::<PolicyKind>().map_err(|e| e.to_string()))
        })? {
            s.policies = v;
        }
        r.flag("perfect_projections", &mut s.perfect_projections)?;
        s.frames = r.parsed("sim_frames")?;
        r.set("greedy.learning_frames", &mut s.greedy.learning_frames)?;
        r.set("greedy.quantile", &mut s.greedy.quantile)?;
        r.set("greedy.pace_tolerance", &mut s.greedy.pace_tolerance)?;

        let w = &mut c.world;
        w.epoch = c.clock.epoch;
        w.frame = c.clock.duration;
        r.set("world.campaigns", &mut w.campaigns)?;
        r.set("world.creatives", &mut w.creatives_per_campaign)?;
        r.set("world.locations", &mut w.locations)?;
        r.set("world.days", &mut w.days)?;
        if let Some(v) = r.value("world.base_rates", |s| parse_list(s, parse_f64))? {
            w.base_rates = v;
        }
        if let Some(v) = r.value("world.hour_profile", |s| {
            parse_profile(s, &[("flat", [1.0; 24]), ("diurnal", diurnal_profile())])
        })? {
            w.hour_multiplier = v;
        }
        if let Some(v) = r.value("world.day_profile", |s| {
            parse_profile(s, &[("flat", [1.0; 7]), ("weekly", weekly_profile())])
        })? {
            w.day_multiplier = v;
        }
        r.set("world.noise_sigma", &mut w.noise_sigma)?;
        r.set("world.supply_trend", &mut w.supply_trend)?;
        r.set("world.profit_min", &mut w.profit_range.0)?;
        r.set("world.profit_max", &mut w.profit_range.1)?;
        r.set("world.profit_drift", &mut w.profit_drift)?;
        if let Some(v) = r.value("world.budgets", |s| parse_list(s, parse_budget))? {
            w.budgets = v;
        }
        r.set("world.new_creatives", &mut w.new_creatives)?;
        r.set("world.observability", &mut w.observability)?;
        if let Some(a) = r.value("world.arrivals", |s| match s {
            "poisson" => Ok(Arrivals::Poisson),
            "exact" => Ok(Arrivals::Exact),
            _ => Err(format!("expected poisson or exact, got `{s}`")),
        })? {
            w.arrivals = a;
        }
        r.set("world.warmup_days", &mut w.warmup_days)?;
        r.set("world.seed", &mut w.seed)?;

        r.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Numeric ranges; file existence is checked by the commands that read
    /// each file.
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.frame == 0 {
            return Err(Error::Argument("frame must be >= 1".into()));
        }
        if self.frames == Some(0) {
            return Err(Error::Argument("frames must be >= 1".into()));
        }
        let g = &self.sim.greedy;
        if !(0.0..=1.0).contains(&g.quantile) || !(g.pace_tolerance >= 0.0) {
            return Err(Error::Argument("greedy quantile must lie in [0, 1] and tolerance be >= 0".into()));
        }
        if self.sim.policies.is_empty() {
            return Err(Error::Argument("at least one policy is required".into()));
        }
        Ok(())
    }
}

/// Requires an input path to be configured and present.
pub fn existing(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| Error::Argument(format!("`{key}` is not configured")))?;
    if !p.is_file() {
        return Err(Error::Argument(format!("{key} file {} does not exist", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(text: &str) -> ConfigMap {
        ConfigMap::parse(text, Path::new("test.conf")).unwrap()
    }

    #[test]
    fn defaults_without_keys() {
        let c = RunConfig::from_map(&ConfigMap::default()).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let c = RunConfig::from_map(&map(
            "# comment\n\nhorizon = 6\ngamma=0.9\nn_min = 2\nlearning = off\nseeds = 1-3,7\n\
             world.budgets = 40, inf\nworld.hour_profile = diurnal\nepoch = 2011-01-03T00:00:00Z\n\
             frame_minutes = 30\npolicies = greedy,uniform\n",
        ))
        .unwrap();
        assert_eq!(c.engine.horizon, 6);
        assert_eq!(c.engine.gamma, 0.9);
        assert_eq!(c.engine.projection.n_min, 2);
        assert!(!c.engine.families.learning);
        assert_eq!(c.sim.seeds, vec![1, 2, 3, 7]);
        assert_eq!(c.world.budgets, vec![Budget::Finite(40.0), Budget::Unbounded]);
        assert_eq!(c.world.hour_multiplier, diurnal_profile());
        assert_eq!(c.clock.duration, Duration::minutes(30));
        assert_eq!(c.world.frame, Duration::minutes(30));
        assert_eq!(c.sim.policies, vec![PolicyKind::Greedy, PolicyKind::Uniform]);
    }

    #[test]
    fn paths_follow_the_config_file() {
        let mut m = ConfigMap::parse("history = h.csv\nplan_out = /tmp/p.csv\n", Path::new("dir/run.conf")).unwrap();
        m.set("schedule", "s.csv", "--schedule");
        let c = RunConfig::from_map(&m).unwrap();
        assert_eq!(c.paths.history, Some(PathBuf::from("dir/h.csv")));
        assert_eq!(c.paths.plan_out, PathBuf::from("/tmp/p.csv"));
        assert_eq!(c.paths.schedule, Some(PathBuf::from("s.csv")));
    }

    #[test]
    fn overrides_win() {
        let mut m = map("horizon = 6\n");
        m.set_pair("horizon=3").unwrap();
        assert_eq!(RunConfig::from_map(&m).unwrap().engine.horizon, 3);
    }

    #[test]
    fn rejects_bad_input() {
        let unknown = RunConfig::from_map(&map("horizn = 3\n")).unwrap_err();
        assert!(unknown.to_string().contains("test.conf:1"));
        assert!(RunConfig::from_map(&map("gamma = 1.5\n")).is_err());
        assert!(RunConfig::from_map(&map("horizon = -1\n")).is_err());
        assert!(RunConfig::from_map(&map("world.hour_profile = 1,2\n")).is_err());
        assert!(ConfigMap::parse("no equals sign", Path::new("x")).is_err());
        assert!(ConfigMap::parse("a = 1\na = 2", Path::new("x")).is_err());
        assert!(parse_seeds("5-2").is_err());
    }
}
