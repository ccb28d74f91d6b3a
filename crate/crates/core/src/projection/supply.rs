use chrono::{DateTime, Duration, Timelike, Utc};

use super::{HistoryLog, ProjectionParams};
use crate::domain::LocationId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupplySource {
    /// Weighted observations one and two weeks back.
    Lags,
    /// Mean over the lookback window at the same hour of day.
    WindowMean,
    NoData,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupplyEstimate {
    pub value: f64,
    pub source: SupplySource,
}

/// Weighted average of the traffic observed at `location` one and two weeks
/// before `target`.
pub fn project_supply_weighted(
    history: &HistoryLog,
    location: &LocationId,
    target: DateTime<Utc>,
    params: &ProjectionParams,
) -> SupplyEstimate {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, w) in params.lag_weights.iter().enumerate() {
        let t = target - Duration::weeks(a as i64 + 1);
        if let Some(s) = history.supply_at(location, t) {
            num += w * s as f64;
            den += w;
        }
    }
    if den > 0.0 {
        return SupplyEstimate {
            value: num / den,
            source: SupplySource::Lags,
        };
    }

    let from = target - params.lookback;
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, s) in history.supply_range(location, from, target) {
        if t.hour() == target.hour() {
            sum += s as f64;
            count += 1;
        }
    }
    if count > 0 {
        SupplyEstimate {
            value: sum / count as f64,
            source: SupplySource::WindowMean,
        }
    } else {
        SupplyEstimate {
            value: 0.0,
            source: SupplySource::NoData,
        }
    }
}
