use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};

use crate::domain::{CampaignId, CreativeId, LocationId};
use crate::error::{Error, Result};

/// Delivery aggregated over one frame. Rows without a campaign record traffic
/// that was served no ad; they count towards supply but carry no profit.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub timestamp: DateTime<Utc>,
    pub location: LocationId,
    pub ad: Option<(CampaignId, CreativeId)>,
    pub impressions: u64,
    pub profit: f64,
}

impl HistoryRecord {
    pub fn delivered(
        timestamp: DateTime<Utc>,
        location: impl Into<LocationId>,
        campaign: impl Into<CampaignId>,
        creative: impl Into<CreativeId>,
        impressions: u64,
        profit: f64,
    ) -> Self {
        HistoryRecord {
            timestamp,
            location: location.into(),
            ad: Some((campaign.into(), creative.into())),
            impressions,
            profit,
        }
    }

    pub fn unfilled(timestamp: DateTime<Utc>, location: impl Into<LocationId>, impressions: u64) -> Self {
        HistoryRecord {
            timestamp,
            location: location.into(),
            ad: None,
            impressions,
            profit: 0.0,
        }
    }

    pub fn campaign(&self) -> Option<&CampaignId> {
        self.ad.as_ref().map(|(i, _)| i)
    }

    pub fn creative(&self) -> Option<&CreativeId> {
        self.ad.as_ref().map(|(_, j)| j)
    }
}

type StreamKey = (LocationId, Option<(CampaignId, CreativeId)>);

/// Append-only delivery log with lookup indexes.
///
/// Timestamps must be non-decreasing within each
/// `(location, campaign, creative)` stream.
#[derive(Clone, Debug, Default)]
pub struct HistoryLog {
    records: Vec<HistoryRecord>,
    last_in_stream: HashMap<StreamKey, DateTime<Utc>>,
    by_stream: HashMap<StreamKey, Vec<usize>>,
    supply: HashMap<LocationId, BTreeMap<DateTime<Utc>, u64>>,
}

impl PartialEq for HistoryLog {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log from records in any order; records are sorted by
    /// timestamp (stably) first.
    pub fn from_records(mut records: Vec<HistoryRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.timestamp);
        let mut log = HistoryLog::new();
        for r in records {
            log.append(r)?;
        }
        Ok(log)
    }

    pub fn append(&mut self, record: HistoryRecord) -> Result<()> {
        if !(record.profit.is_finite() && record.profit >= 0.0) {
            return Err(Error::Argument(format!(
                "profit must be finite and >= 0, got {}",
                record.profit
            )));
        }
        if record.ad.is_none() && record.profit != 0.0 {
            return Err(Error::Argument("unfilled traffic cannot carry profit".into()));
        }
        let key: StreamKey = (record.location.clone(), record.ad.clone());
        if let Some(last) = self.last_in_stream.get(&key) {
            if record.timestamp < *last {
                return Err(Error::Argument(format!(
                    "timestamp {} precedes {} in the same stream",
                    record.timestamp, last
                )));
            }
        }
        let idx = self.records.len();
        self.last_in_stream.insert(key.clone(), record.timestamp);
        self.by_stream.entry(key).or_default().push(idx);
        *self
            .supply
            .entry(record.location.clone())
            .or_default()
            .entry(record.timestamp)
            .or_default() += record.impressions;
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.records.iter().map(|r| r.timestamp).max()
    }

    pub(crate) fn get(&self, idx: usize) -> &HistoryRecord {
        &self.records[idx]
    }

    pub(crate) fn stream(&self, location: &LocationId, campaign: &CampaignId, creative: &CreativeId) -> &[usize] {
        self.by_stream
            .get(&(location.clone(), Some((campaign.clone(), creative.clone()))))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Total impressions delivered so far for the stream.
    pub fn delivered_impressions(
        &self,
        location: &LocationId,
        campaign: &CampaignId,
        creative: &CreativeId,
    ) -> u64 {
        self.stream(location, campaign, creative)
            .iter()
            .map(|&i| self.records[i].impressions)
            .sum()
    }

    /// Observed traffic (filled and unfilled) at `location` during the frame
    /// starting at `t`.
    pub fn supply_at(&self, location: &LocationId, t: DateTime<Utc>) -> Option<u64> {
        self.supply.get(location)?.get(&t).copied()
    }

    /// Observed traffic series for a location, ordered by time.
    pub fn supply_series(&self, location: &LocationId) -> impl Iterator<Item = (DateTime<Utc>, u64)> + '_ {
        self.supply
            .get(location)
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, v)| (*t, *v)))
    }

    /// Observed traffic for a location within `[from, to)`.
    pub fn supply_range(
        &self,
        location: &LocationId,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> impl Iterator<Item = (DateTime<Utc>, u64)> + '_ {
        self.supply
            .get(location)
            .into_iter()
            .flat_map(move |m| m.range(from..to).map(|(t, v)| (*t, *v)))
    }

    pub fn locations(&self) -> Vec<LocationId> {
        let mut v: Vec<_> = self.supply.keys().cloned().collect();
        v.sort();
        v
    }
}
