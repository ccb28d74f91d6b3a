//! Projections of per-impression profit and of traffic supply from the
//! delivery log.

mod history;
mod profit;
mod regressor;
mod supply;

pub use history::{HistoryLog, HistoryRecord};
pub use profit::{project_profit, LadderLevel, ProfitEstimate, ProfitProjector, SimilarityIndex};
pub use regressor::{
    fit_supply_regressor, FeatureSpec, ForecastModel, Predictor, Regressor, RidgeRegressor, Target,
};
pub use supply::{project_supply_weighted, SupplyEstimate, SupplySource};

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};

use crate::error::{Error, Result};

/// Calendar features that make two frame start times "similar".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Similarity {
    pub hour_of_day: bool,
    pub day_of_week: bool,
}

impl Default for Similarity {
    fn default() -> Self {
        Similarity {
            hour_of_day: true,
            day_of_week: true,
        }
    }
}

/// Equivalence class of a timestamp under a [`Similarity`]; `None`
/// components are unconstrained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimilarityClass {
    pub hour: Option<u32>,
    pub weekday: Option<u32>,
}

impl Similarity {
    pub fn class_of(&self, t: DateTime<Utc>) -> SimilarityClass {
        SimilarityClass {
            hour: self.hour_of_day.then(|| t.hour()),
            weekday: self
                .day_of_week
                .then(|| t.weekday().num_days_from_monday()),
        }
    }

    pub fn similar(&self, a: DateTime<Utc>, b: DateTime<Utc>) -> bool {
        self.class_of(a) == self.class_of(b)
    }
}

/// Order of the two campaign-wide and location-wide averages at the last
/// ladder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FinalLevelOrder {
    #[default]
    CampaignFirst,
    LocationFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    /// Impressions needed before an average counts as informed.
    pub n_min: u64,
    pub half_life: Duration,
    pub similarity: Similarity,
    /// Weight of the same-location average in the blended levels.
    pub w_loc: f64,
    pub lookback: Duration,
    /// Returned when every level of the ladder lacks data.
    pub prior_profit: f64,
    pub final_order: FinalLevelOrder,
    /// Weights of the observations one and two weeks back.
    pub lag_weights: [f64; 2],
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            n_min: 50,
            half_life: Duration::days(7),
            similarity: Similarity::default(),
            w_loc: 0.5,
            lookback: Duration::days(28),
            prior_profit: 0.0,
            final_order: FinalLevelOrder::CampaignFirst,
            lag_weights: [0.6, 0.4],
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 {
            return Err(Error::Argument("n_min must be >= 1".into()));
        }
        if self.half_life <= Duration::zero() || self.lookback <= Duration::zero() {
            return Err(Error::Argument("half-life and lookback must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.w_loc) {
            return Err(Error::Argument("w_loc must lie in [0, 1]".into()));
        }
        if self.lag_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Argument("lag weights must lie in [0, 1]".into()));
        }
        if !(self.prior_profit.is_finite() && self.prior_profit >= 0.0) {
            return Err(Error::Argument("prior profit must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Recency weight of an observation taken at `t` seen from `as_of`.
    pub(crate) fn recency_weight(&self, as_of: DateTime<Utc>, t: DateTime<Utc>) -> f64 {
        let age = (as_of.timestamp() - t.timestamp()).max(0) as f64;
        let h = self.half_life.num_seconds() as f64;
        0.5f64.powf(age / h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn similarity_classes() {
        let s = Similarity::default();
        let a = Utc.with_ymd_and_hms(2010, 4, 1, 13, 0, 0).unwrap();
        assert!(s.similar(a, a - Duration::days(7)));
        assert!(!s.similar(a, a - Duration::days(1)));
        let hour_only = Similarity {
            hour_of_day: true,
            day_of_week: false,
        };
        assert!(hour_only.similar(a, a - Duration::days(1)));
    }

    #[test]
    fn params_validation() {
        assert!(ProjectionParams::default().validate().is_ok());
        let bad = ProjectionParams {
            w_loc: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ProjectionParams {
            n_min: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn recency_halves_per_half_life() {
        let p = ProjectionParams::default();
        let now = Utc.with_ymd_and_hms(2010, 4, 15, 0, 0, 0).unwrap();
        assert_eq!(p.recency_weight(now, now), 1.0);
        assert!((p.recency_weight(now, now - Duration::days(7)) - 0.5).abs() < 1e-15);
    }
}
