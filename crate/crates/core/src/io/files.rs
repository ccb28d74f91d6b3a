use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

use super::write_atomic;
use crate::domain::{Campaign, CampaignId, Catalog, CreativeId, Frame, FrameClock, LocationId, Quad};
use crate::engine::{DeliveryPlan, Schedule};
use crate::error::{Error, Result};
use crate::model::Budget;
use crate::projection::{HistoryLog, HistoryRecord, LadderLevel};
use crate::sim::RunReport;

pub const HISTORY_HEADER: [&str; 6] = [
    "timestamp_utc",
    "location_id",
    "campaign_id",
    "creative_id",
    "impressions",
    "profit",
];
pub const SCHEDULE_HEADER: [&str; 6] = [
    "campaign_id",
    "creative_id",
    "location_id",
    "frame_start",
    "frame_end",
    "new_flag",
];
pub const CAMPAIGNS_HEADER: [&str; 2] = ["campaign_id", "budget"];
pub const PLAN_HEADER: [&str; 5] = ["frame", "location_id", "campaign_id", "creative_id", "probability"];

/// Data rows of a CSV file with their one-based line numbers.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if !saw_header {
            let got: Vec<&str> = fields.iter().map(|f| f.trim_start_matches('\u{feff}')).collect();
            if got != header {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
                ));
            }
            saw_header = true;
            continue;
        }
        if fields.len() == 1 && fields[0].is_empty() {
            continue;
        }
        if fields.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        rows.push((line, fields));
    }
    if !saw_header {
        return Err(Error::parse(path, 1, "missing header row"));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

/// Parses an ISO-8601 timestamp. Naive timestamps are read as UTC; explicit
/// offsets other than zero are rejected.
pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        if t.offset().local_minus_utc() != 0 {
            return Err(format!("timestamp `{s}` is not UTC"));
        }
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("`{s}` is not an ISO-8601 timestamp"))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_count(s: &str, what: &str) -> std::result::Result<u64, String> {
    s.parse::<u64>()
        .map_err(|_| format!("{what} must be an integer >= 0, got `{s}`"))
}

fn parse_nonneg(s: &str, what: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("{what} must be a finite decimal >= 0, got `{s}`")),
    }
}

/// Reads a history CSV. Rows with empty campaign and creative ids record
/// unfilled traffic. Records are ordered by timestamp, ties in file order.
pub fn load_history(path: impl AsRef<Path>) -> Result<HistoryLog> {
    let path = path.as_ref();
    let mut parsed = Vec::new();
    for (line, f) in read_rows(path, &HISTORY_HEADER)? {
        let bad = |m: String| Error::parse(path, line, m);
        let t = parse_timestamp(&f[0]).map_err(bad)?;
        if f[1].is_empty() {
            return Err(bad("location_id is empty".into()));
        }
        let n = parse_count(&f[4], "impressions").map_err(bad)?;
        let profit = parse_nonneg(&f[5], "profit").map_err(bad)?;
        let record = match (f[2].is_empty(), f[3].is_empty()) {
            (true, true) => {
                if profit != 0.0 {
                    return Err(bad("unfilled traffic cannot carry profit".into()));
                }
                HistoryRecord::unfilled(t, f[1].as_str(), n)
            }
            (false, false) => HistoryRecord::delivered(t, f[1].as_str(), f[2].as_str(), f[3].as_str(), n, profit),
            _ => return Err(bad("campaign_id and creative_id must be both set or both empty".into())),
        };
        parsed.push((line, record));
    }
    parsed.sort_by_key(|(_, r)| r.timestamp);
    let mut log = HistoryLog::new();
    for (line, r) in parsed {
        log.append(r).map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(log)
}

pub fn emit_history(history: &HistoryLog, path: impl AsRef<Path>) -> Result<()> {
    let rows = history.records().iter().map(|r| {
        let (i, j) = match &r.ad {
            Some((i, j)) => (i.to_string(), j.to_string()),
            None => (String::new(), String::new()),
        };
        vec![
            format_timestamp(r.timestamp),
            r.location.to_string(),
            i,
            j,
            r.impressions.to_string(),
            r.profit.to_string(),
        ]
    });
    write_csv(path.as_ref(), &HISTORY_HEADER, rows)
}

/// Budgets in file order.
pub fn load_campaigns(path: impl AsRef<Path>) -> Result<Vec<(CampaignId, Budget)>> {
    let path = path.as_ref();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, f) in read_rows(path, &CAMPAIGNS_HEADER)? {
        let bad = |m: String| Error::parse(path, line, m);
        if f[0].is_empty() {
            return Err(bad("campaign_id is empty".into()));
        }
        let id = CampaignId::new(f[0].as_str());
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate campaign {id}")));
        }
        let budget = if f[1] == "inf" {
            Budget::Unbounded
        } else {
            match f[1].parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Budget::Finite(v),
                _ => return Err(bad(format!("budget must be a decimal > 0 or `inf`, got `{}`", f[1]))),
            }
        };
        out.push((id, budget));
    }
    Ok(out)
}

pub fn emit_campaigns(budgets: &[(CampaignId, Budget)], path: impl AsRef<Path>) -> Result<()> {
    let rows = budgets.iter().map(|(i, b)| {
        let b = match b {
            Budget::Finite(v) => v.to_string(),
            Budget::Unbounded => "inf".to_string(),
        };
        vec![i.to_string(), b]
    });
    write_csv(path.as_ref(), &CAMPAIGNS_HEADER, rows)
}

/// One line of a schedule file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleRow {
    pub line: usize,
    pub campaign: CampaignId,
    pub creative: CreativeId,
    pub location: LocationId,
    pub first: Frame,
    pub last: Frame,
    pub new: bool,
}

pub fn read_schedule_rows(path: impl AsRef<Path>) -> Result<Vec<ScheduleRow>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line, f) in read_rows(path, &SCHEDULE_HEADER)? {
        let bad = |m: String| Error::parse(path, line, m);
        if f[..3].iter().any(String::is_empty) {
            return Err(bad("ids must not be empty".into()));
        }
        let frame = |s: &str, what: &str| match s.parse::<u32>() {
            Ok(k) if k >= 1 => Ok(Frame(k)),
            _ => Err(bad(format!("{what} must be an integer >= 1, got `{s}`"))),
        };
        let first = frame(&f[3], "frame_start")?;
        let last = frame(&f[4], "frame_end")?;
        if first > last {
            return Err(bad(format!("frame_start {first} exceeds frame_end {last}")));
        }
        let new = match f[5].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("new_flag must be 0 or 1, got `{other}`"))),
        };
        out.push(ScheduleRow {
            line,
            campaign: CampaignId::new(f[0].as_str()),
            creative: CreativeId::new(f[1].as_str()),
            location: LocationId::new(f[2].as_str()),
            first,
            last,
            new,
        });
    }
    Ok(out)
}

/// Catalog spanned by the campaigns file and the schedule rows. Creatives and
/// locations are those the schedule mentions; the frame count defaults to the
/// last scheduled frame.
pub fn catalog_from(
    path: impl AsRef<Path>,
    budgets: &[(CampaignId, Budget)],
    rows: &[ScheduleRow],
    clock: FrameClock,
    frames: Option<u32>,
) -> Result<Catalog> {
    let known: BTreeSet<&CampaignId> = budgets.iter().map(|(i, _)| i).collect();
    let mut creatives: BTreeMap<CampaignId, BTreeSet<CreativeId>> = BTreeMap::new();
    let mut locations = BTreeSet::new();
    for r in rows {
        if !known.contains(&r.campaign) {
            return Err(Error::parse(
                path.as_ref(),
                r.line,
                format!("campaign {} is missing from the campaigns file", r.campaign),
            ));
        }
        creatives.entry(r.campaign.clone()).or_default().insert(r.creative.clone());
        locations.insert(r.location.clone());
    }
    let last = rows.iter().map(|r| r.last.0).max().unwrap_or(1);
    let frames = frames.unwrap_or(last);
    Catalog::new(
        budgets
            .iter()
            .map(|(i, _)| Campaign {
                id: i.clone(),
                name: i.to_string(),
            })
            .collect(),
        creatives.into_iter().map(|(i, js)| (i, js.into_iter().collect())).collect(),
        locations.into_iter().collect(),
        frames,
        clock,
    )
}

/// Expands schedule rows into quads, checked against `catalog`.
pub fn schedule_from_rows(path: impl AsRef<Path>, rows: &[ScheduleRow], catalog: &Catalog) -> Result<Schedule> {
    let path = path.as_ref();
    let mut quads = Vec::new();
    let mut flags: BTreeMap<(CampaignId, CreativeId, LocationId), bool> = BTreeMap::new();
    for r in rows {
        let bad = |m: String| Error::parse(path, r.line, m);
        if !catalog.has_campaign(&r.campaign) {
            return Err(bad(format!("unknown campaign {}", r.campaign)));
        }
        if !catalog.has_creative(&r.campaign, &r.creative) {
            return Err(bad(format!("unknown creative {} of campaign {}", r.creative, r.campaign)));
        }
        if !catalog.has_location(&r.location) {
            return Err(bad(format!("unknown location {}", r.location)));
        }
        if r.last.0 > catalog.frame_count() {
            return Err(bad(format!(
                "frame_end {} lies beyond the last frame {}",
                r.last,
                catalog.frame_count()
            )));
        }
        let triple = (r.campaign.clone(), r.creative.clone(), r.location.clone());
        if let Some(prev) = flags.insert(triple, r.new) {
            if prev != r.new {
                return Err(bad("conflicting new_flag for the same campaign, creative and location".into()));
            }
        }
        for k in r.first.0..=r.last.0 {
            quads.push(Quad {
                campaign: r.campaign.clone(),
                creative: r.creative.clone(),
                frame: Frame(k),
                location: r.location.clone(),
            });
        }
    }
    Ok(Schedule {
        admissible: quads.into_iter().collect(),
        new: flags.into_iter().filter(|(_, n)| *n).map(|(t, _)| t).collect(),
    })
}

pub fn load_schedule(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Schedule> {
    let rows = read_schedule_rows(path.as_ref())?;
    schedule_from_rows(path, &rows, catalog)
}

/// Writes one row per run of consecutive frames.
pub fn emit_schedule(schedule: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    let mut runs: BTreeMap<(CampaignId, CreativeId, LocationId), Vec<(u32, u32)>> = BTreeMap::new();
    let mut by_triple: BTreeMap<(CampaignId, CreativeId, LocationId), Vec<u32>> = BTreeMap::new();
    for q in schedule.admissible.iter() {
        by_triple
            .entry((q.campaign.clone(), q.creative.clone(), q.location.clone()))
            .or_default()
            .push(q.frame.0);
    }
    for (t, mut frames) in by_triple {
        frames.sort_unstable();
        let list = runs.entry(t).or_default();
        for k in frames {
            match list.last_mut() {
                Some((_, end)) if *end + 1 == k => *end = k,
                _ => list.push((k, k)),
            }
        }
    }
    let rows = runs.into_iter().flat_map(|(t, list)| {
        let flag = if schedule.new.contains(&t) { "1" } else { "0" };
        list.into_iter().map(move |(a, b)| {
            vec![
                t.0.to_string(),
                t.1.to_string(),
                t.2.to_string(),
                a.to_string(),
                b.to_string(),
                flag.to_string(),
            ]
        })
    });
    write_csv(path.as_ref(), &SCHEDULE_HEADER, rows)
}

/// Six decimals with ties to even on the exact binary value.
pub fn format_probability(p: f64) -> String {
    format!("{:.6}", p + 0.0)
}

/// Writes plan rows sorted by frame, location, campaign and creative.
pub fn emit_plan(plan: &DeliveryPlan, path: impl AsRef<Path>) -> Result<()> {
    plan.validate()?;
    let rows = plan.rows().map(|(k, l, i, j, p)| {
        vec![
            k.to_string(),
            l.to_string(),
            i.to_string(),
            j.to_string(),
            format_probability(p),
        ]
    });
    write_csv(path.as_ref(), &PLAN_HEADER, rows)
}

/// Reads a plan file back; probabilities carry the six written decimals.
pub fn load_plan(path: impl AsRef<Path>) -> Result<DeliveryPlan> {
    let path = path.as_ref();
    let mut plan = DeliveryPlan::new();
    for (line, f) in read_rows(path, &PLAN_HEADER)? {
        let bad = |m: String| Error::parse(path, line, m);
        let k = match f[0].parse::<u32>() {
            Ok(k) if k >= 1 => Frame(k),
            _ => return Err(bad(format!("frame must be an integer >= 1, got `{}`", f[0]))),
        };
        let p = parse_nonneg(&f[4], "probability").map_err(bad)?;
        plan.insert(k, f[1].as_str().into(), f[2].as_str().into(), f[3].as_str().into(), p)
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(plan)
}

pub const REPORT_HEADER: [&str; 10] = [
    "policy",
    "seed",
    "revenue",
    "impressions",
    "spend",
    "max_overshoot",
    "budget_safe",
    "supply_violations",
    "probability_violations",
    "aborted",
];

pub fn emit_reports(reports: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    let rows = reports.iter().map(|r| {
        let spend: f64 = r.spend.values().sum();
        let over = r.overshoot().values().copied().fold(0.0, f64::max);
        vec![
            r.policy.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.revenue),
            r.impressions.to_string(),
            format!("{:.6}", spend),
            format!("{:.6}", over),
            r.budget_safe().to_string(),
            r.supply_violations.to_string(),
            r.probability_violations.to_string(),
            r.aborted.clone().unwrap_or_default(),
        ]
    });
    write_csv(path.as_ref(), &REPORT_HEADER, rows)
}

pub const PROJECTIONS_HEADER: [&str; 7] = [
    "frame",
    "location_id",
    "campaign_id",
    "creative_id",
    "supply",
    "profit",
    "level",
];

/// One quad of a projection dump.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub quad: Quad,
    pub supply: f64,
    pub profit: f64,
    pub level: LadderLevel,
}

/// Writes rows sorted by frame, location, campaign and creative.
pub fn emit_projections(rows: &[ProjectionRow], path: impl AsRef<Path>) -> Result<()> {
    let mut sorted: Vec<&ProjectionRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &ProjectionRow| (r.quad.frame, r.quad.location.clone(), r.quad.campaign.clone(), r.quad.creative.clone());
        key(a).cmp(&key(b))
    });
    let out = sorted.into_iter().map(|r| {
        vec![
            r.quad.frame.to_string(),
            r.quad.location.to_string(),
            r.quad.campaign.to_string(),
            r.quad.creative.to_string(),
            r.supply.to_string(),
            r.profit.to_string(),
            r.level.to_string(),
        ]
    });
    write_csv(path.as_ref(), &PROJECTIONS_HEADER, out)
}
