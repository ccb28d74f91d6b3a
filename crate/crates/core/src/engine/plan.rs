use std::collections::BTreeMap;

use crate::domain::{CampaignId, Configuration, CreativeId, Frame, LocationId};
use crate::error::{Error, Result};

/// Tolerance on the per-slot probability sum.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

type Slot = (Frame, LocationId);
type Pair = (CampaignId, CreativeId);

/// Per-slot probabilities of serving each creative; the residual mass serves
/// no ad.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeliveryPlan {
    slots: BTreeMap<Slot, BTreeMap<Pair, f64>>,
}

impl DeliveryPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        frame: Frame,
        location: LocationId,
        campaign: CampaignId,
        creative: CreativeId,
        probability: f64,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Contract(format!(
                "probability {probability} outside [0, 1]"
            )));
        }
        self.slots
            .entry((frame, location))
            .or_default()
            .insert((campaign, creative), probability);
        Ok(())
    }

    pub fn probability(
        &self,
        frame: Frame,
        location: &LocationId,
        campaign: &CampaignId,
        creative: &CreativeId,
    ) -> f64 {
        self.slots
            .get(&(frame, location.clone()))
            .and_then(|m| m.get(&(campaign.clone(), creative.clone())))
            .copied()
            .unwrap_or(0.0)
    }

    /// Entries of one slot, sorted by campaign then creative.
    pub fn slot(&self, frame: Frame, location: &LocationId) -> Vec<(&CampaignId, &CreativeId, f64)> {
        self.slots
            .get(&(frame, location.clone()))
            .map(|m| m.iter().map(|((i, j), p)| (i, j, *p)).collect())
            .unwrap_or_default()
    }

    pub fn residual(&self, frame: Frame, location: &LocationId) -> f64 {
        1.0 - self.slot(frame, location).iter().map(|e| e.2).sum::<f64>()
    }

    pub fn slots(&self) -> impl Iterator<Item = (Frame, &LocationId)> {
        self.slots.keys().map(|(k, l)| (*k, l))
    }

    /// All entries sorted by frame, location, campaign and creative.
    pub fn rows(&self) -> impl Iterator<Item = (Frame, &LocationId, &CampaignId, &CreativeId, f64)> {
        self.slots
            .iter()
            .flat_map(|((k, l), m)| m.iter().map(move |((i, j), p)| (*k, l, i, j, *p)))
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The part of the plan that applies to `frame`.
    pub fn at_frame(&self, frame: Frame) -> DeliveryPlan {
        DeliveryPlan {
            slots: self
                .slots
                .iter()
                .filter(|((k, _), _)| *k == frame)
                .map(|(key, m)| (key.clone(), m.clone()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for ((k, l), m) in &self.slots {
            let sum: f64 = m.values().sum();
            if m.values().any(|p| !(0.0..=1.0).contains(p)) || sum > 1.0 + PROBABILITY_SUM_TOL {
                return Err(Error::Contract(format!(
                    "probabilities at ({l}, {k}) sum to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Converts impressions into delivery probabilities `x / S` per slot.
pub fn to_probabilities(
    config: &Configuration,
    supply: &BTreeMap<(LocationId, Frame), f64>,
) -> Result<DeliveryPlan> {
    let mut by_slot: BTreeMap<(LocationId, Frame), Vec<(Pair, f64)>> = BTreeMap::new();
    for (q, x) in config.iter() {
        by_slot
            .entry(q.slot())
            .or_default()
            .push((q.pair(), x));
    }
    let mut plan = DeliveryPlan::new();
    for ((l, k), entries) in by_slot {
        let s = supply.get(&(l.clone(), k)).copied().unwrap_or(0.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if total > s + 1e-7 * s.max(1.0) {
            return Err(Error::Contract(format!(
                "{total} impressions planned at ({l}, {k}) exceed supply {s}"
            )));
        }
        let mut probs: Vec<f64> = entries
            .iter()
            .map(|(_, x)| if s > 0.0 { (x / s).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        for (((i, j), _), p) in entries.into_iter().zip(probs) {
            plan.insert(k, l.clone(), i, j, p)?;
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Quad;
    use crate::fixtures::t1_instance;

    fn supply(s: f64) -> BTreeMap<(LocationId, Frame), f64> {
        [1, 2].map(|k| (("L1".into(), Frame(k)), s)).into_iter().collect()
    }

    fn config(values: &[(Quad, f64)]) -> Configuration {
        Configuration::new(
            &t1_instance().admissible,
            values.iter().cloned().collect(),
        )
        .unwrap()
    }

    #[test]
    fn t1_optimum_gives_certain_delivery() {
        let c = config(&[
            (Quad::new("1", "1", 1, "L1"), 5.0),
            (Quad::new("2", "1", 1, "L1"), 0.0),
        ]);
        let plan = to_probabilities(&c, &supply(5.0)).unwrap();
        let l1 = LocationId::new("L1");
        assert_eq!(plan.probability(Frame(1), &l1, &"1".into(), &"1".into()), 1.0);
        assert_eq!(plan.probability(Frame(1), &l1, &"2".into(), &"1".into()), 0.0);
        assert_eq!(plan.residual(Frame(1), &l1), 0.0);
        assert_eq!(plan.len(), 2);
    }

    #[test]
    fn ratio_and_zero_supply() {
        let c = config(&[(Quad::new("1", "1", 1, "L1"), 2.5)]);
        let plan = to_probabilities(&c, &supply(5.0)).unwrap();
        assert_eq!(plan.probability(Frame(1), &"L1".into(), &"1".into(), &"1".into()), 0.5);

        let c = config(&[(Quad::new("1", "1", 1, "L1"), 0.0)]);
        let plan = to_probabilities(&c, &supply(0.0)).unwrap();
        assert_eq!(plan.probability(Frame(1), &"L1".into(), &"1".into(), &"1".into()), 0.0);
        assert_eq!(plan.residual(Frame(1), &"L1".into()), 1.0);
    }

    #[test]
    fn oversupplied_configuration_is_a_contract_violation() {
        let c = config(&[
            (Quad::new("1", "1", 1, "L1"), 4.0),
            (Quad::new("2", "1", 1, "L1"), 4.0),
        ]);
        assert!(matches!(
            to_probabilities(&c, &supply(5.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rounding_excess_is_renormalized() {
        let c = config(&[
            (Quad::new("1", "1", 1, "L1"), 2.500000001),
            (Quad::new("2", "1", 1, "L1"), 2.5),
        ]);
        let plan = to_probabilities(&c, &supply(5.0)).unwrap();
        plan.validate().unwrap();
        assert!(plan.residual(Frame(1), &"L1".into()) >= -PROBABILITY_SUM_TOL);
    }

    #[test]
    fn frame_filter_and_row_order() {
        let c = config(&[
            (Quad::new("2", "1", 2, "L1"), 1.0),
            (Quad::new("1", "1", 1, "L1"), 1.0),
            (Quad::new("2", "1", 1, "L1"), 1.0),
        ]);
        let plan = to_probabilities(&c, &supply(5.0)).unwrap();
        let rows: Vec<_> = plan.rows().map(|r| (r.0, r.2.to_string())).collect();
        assert_eq!(
            rows,
            vec![(Frame(1), "1".into()), (Frame(1), "2".into()), (Frame(2), "2".into())]
        );
        assert_eq!(plan.at_frame(Frame(2)).len(), 1);
    }

    #[test]
    fn insert_rejects_out_of_range() {
        let mut p = DeliveryPlan::new();
        assert!(p.insert(Frame(1), "L1".into(), "1".into(), "1".into(), 1.5).is_err());
    }
}
