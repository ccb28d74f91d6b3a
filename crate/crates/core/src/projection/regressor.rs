use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Timelike, Utc};
use nalgebra::{DMatrix, DVector};

use super::HistoryLog;
use crate::domain::LocationId;
use crate::error::{Error, Result};

/// Calendar features of a frame start time. The intercept is always the
/// first column; hour 0 and Monday are the reference categories of the
/// one-hot blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub hour_of_day: bool,
    pub day_of_week: bool,
    pub trend: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            hour_of_day: true,
            day_of_week: true,
            trend: true,
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        1 + if self.hour_of_day { 23 } else { 0 }
            + if self.day_of_week { 6 } else { 0 }
            + usize::from(self.trend)
    }

    /// Feature vector at `t`; the trend counts days since `origin`.
    pub fn features(&self, t: DateTime<Utc>, origin: DateTime<Utc>) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(1.0);
        if self.hour_of_day {
            let h = t.hour() as usize;
            x.extend((1..24).map(|c| if c == h { 1.0 } else { 0.0 }));
        }
        if self.day_of_week {
            let d = t.weekday().num_days_from_monday() as usize;
            x.extend((1..7).map(|c| if c == d { 1.0 } else { 0.0 }));
        }
        if self.trend {
            x.push((t - origin).num_seconds() as f64 / 86_400.0);
        }
        x
    }
}

/// A fitted model mapping a feature vector to a raw prediction.
pub trait Predictor: fmt::Debug + Send + Sync {
    fn predict(&self, features: &[f64]) -> f64;

    fn weights(&self) -> Option<&[f64]> {
        None
    }
}

/// Fitting strategy for per-location supply models.
pub trait Regressor {
    fn fit(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<Arc<dyn Predictor>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Target {
    /// Fit `ln(max(y, 0.5))` and predict its exponential, so the calendar
    /// effects combine multiplicatively.
    #[default]
    Log,
    Linear,
}

/// Least squares with ridge damping on every column but the first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgeRegressor {
    pub ridge: f64,
    pub target: Target,
}

impl Default for RidgeRegressor {
    fn default() -> Self {
        RidgeRegressor {
            ridge: 1e-6,
            target: Target::Log,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPredictor {
    weights: Vec<f64>,
    target: Target,
}

impl Predictor for LinearPredictor {
    fn predict(&self, features: &[f64]) -> f64 {
        let z: f64 = self.weights.iter().zip(features).map(|(w, x)| w * x).sum();
        match self.target {
            Target::Log => z.exp(),
            Target::Linear => z,
        }
    }

    fn weights(&self) -> Option<&[f64]> {
        Some(&self.weights)
    }
}

impl Regressor for RidgeRegressor {
    fn fit(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<Arc<dyn Predictor>> {
        let n = targets.len();
        let dim = features.first().map_or(0, Vec::len);
        if n == 0 || dim == 0 || features.len() != n {
            return Err(Error::Argument("regression needs matching, non-empty data".into()));
        }
        let x = DMatrix::from_fn(n, dim, |r, c| features[r][c]);
        let y = DVector::from_iterator(
            n,
            targets.iter().map(|&v| match self.target {
                Target::Log => v.max(0.5).ln(),
                Target::Linear => v,
            }),
        );
        let mut a = x.transpose() * &x;
        for c in 1..dim {
            a[(c, c)] += self.ridge;
        }
        let b = x.transpose() * y;
        let w = match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Numerical("singular normal equations".into()))?,
        };
        Ok(Arc::new(LinearPredictor {
            weights: w.iter().copied().collect(),
            target: self.target,
        }))
    }
}

/// Per-location supply models fitted on the traffic series of a log.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub spec: FeatureSpec,
    pub origin: DateTime<Utc>,
    predictors: BTreeMap<LocationId, Arc<dyn Predictor>>,
    /// In-sample mean absolute percentage error per trained location.
    pub in_sample_mape: BTreeMap<LocationId, f64>,
    /// Locations left out, with the reason.
    pub excluded: Vec<(LocationId, String)>,
}

impl ForecastModel {
    pub fn is_trained(&self, location: &LocationId) -> bool {
        self.predictors.contains_key(location)
    }

    pub fn weights(&self, location: &LocationId) -> Option<&[f64]> {
        self.predictors.get(location)?.weights()
    }

    /// Predicted traffic at `location` for the frame starting at `t`, never
    /// negative.
    pub fn predict(&self, location: &LocationId, t: DateTime<Utc>) -> Result<f64> {
        let p = self
            .predictors
            .get(location)
            .ok_or_else(|| Error::Domain(format!("no supply model for location {location}")))?;
        Ok(p.predict(&self.spec.features(t, self.origin)).max(0.0))
    }
}

pub fn fit_supply_regressor(
    history: &HistoryLog,
    spec: FeatureSpec,
    regressor: &dyn Regressor,
) -> Result<ForecastModel> {
    let origin = history
        .records()
        .iter()
        .map(|r| r.timestamp)
        .min()
        .unwrap_or_default();
    let mut model = ForecastModel {
        spec,
        origin,
        predictors: BTreeMap::new(),
        in_sample_mape: BTreeMap::new(),
        excluded: Vec::new(),
    };
    let needed = 2 * spec.dim();
    for location in history.locations() {
        let series: Vec<_> = history.supply_series(&location).collect();
        if series.len() < needed {
            model.excluded.push((
                location,
                format!("{} observations, {needed} needed", series.len()),
            ));
            continue;
        }
        let xs: Vec<Vec<f64>> = series.iter().map(|(t, _)| spec.features(*t, origin)).collect();
        let ys: Vec<f64> = series.iter().map(|(_, s)| *s as f64).collect();
        let predictor = regressor.fit(&xs, &ys)?;
        let errors: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .filter(|(_, y)| **y > 0.0)
            .map(|(x, y)| (predictor.predict(x).max(0.0) - y).abs() / y)
            .collect();
        let mape = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        model.in_sample_mape.insert(location.clone(), mape);
        model.predictors.insert(location, predictor);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::HistoryRecord;
    use chrono::{Duration, TimeZone};

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2010, 4, 1, 0, 0, 0).unwrap()
    }

    fn hourly(days: i64, f: impl Fn(DateTime<Utc>) -> u64) -> HistoryLog {
        let recs = (0..days * 24)
            .map(|h| {
                let t = start() + Duration::hours(h);
                HistoryRecord::unfilled(t, "L1", f(t))
            })
            .collect();
        HistoryLog::from_records(recs).unwrap()
    }

    #[test]
    fn constant_traffic_is_reproduced() {
        let log = hourly(28, |_| 100);
        let m = fit_supply_regressor(&log, FeatureSpec::default(), &RidgeRegressor::default()).unwrap();
        let p = m
            .predict(&"L1".into(), start() + Duration::days(40) + Duration::hours(5))
            .unwrap();
        assert!((p - 100.0).abs() < 1e-6, "{p}");
        assert!(m.in_sample_mape[&LocationId::new("L1")] < 1e-9);
        assert_eq!(m.weights(&"L1".into()).unwrap().len(), FeatureSpec::default().dim());
    }

    #[test]
    fn periodic_pattern_recovered() {
        let log = hourly(21, |t| {
            let hour = 1.0 + 0.5 * (t.hour() as f64 / 24.0 * std::f64::consts::TAU).sin();
            let day = if t.weekday().num_days_from_monday() >= 5 { 1.5 } else { 1.0 };
            (1000.0 * hour * day).round() as u64
        });
        let m = fit_supply_regressor(&log, FeatureSpec::default(), &RidgeRegressor::default()).unwrap();
        assert!(m.in_sample_mape[&LocationId::new("L1")] < 1e-3);
    }

    #[test]
    fn short_series_is_excluded() {
        let log = HistoryLog::from_records(vec![HistoryRecord::unfilled(start(), "L1", 10)]).unwrap();
        let m = fit_supply_regressor(&log, FeatureSpec::default(), &RidgeRegressor::default()).unwrap();
        assert!(!m.is_trained(&"L1".into()));
        assert_eq!(m.excluded.len(), 1);
        assert!(matches!(m.predict(&"L1".into(), start()), Err(Error::Domain(_))));
    }

    #[test]
    fn negative_raw_prediction_is_clamped() {
        // Linear decline that crosses zero shortly after the data ends.
        let log = hourly(10, |t| {
            let days = (t - start()).num_hours() as f64 / 24.0;
            (1000.0 - 99.0 * days).max(0.0) as u64
        });
        let spec = FeatureSpec {
            hour_of_day: false,
            day_of_week: false,
            trend: true,
        };
        let reg = RidgeRegressor {
            target: Target::Linear,
            ..Default::default()
        };
        let m = fit_supply_regressor(&log, spec, &reg).unwrap();
        let p = m.predict(&"L1".into(), start() + Duration::days(30)).unwrap();
        assert_eq!(p, 0.0);
    }
}
