use std::collections::BTreeMap;

use crate::domain::{AdmissibleSet, Frame, LocationId, Quad};
use crate::error::{Error, Result};
use crate::model::Instance;

/// Keeps the first `h` frames of the instance and merges the rest into one
/// aggregate frame, numbered as the first merged frame.
///
/// Supply, `μ` and `λ` of merged frames are summed. Profits, overflow
/// fractions and objective weights become supply-weighted means (plain means
/// when the merged supply is zero).
pub fn apply_horizon(instance: &Instance, h: u32) -> Result<Instance> {
    if h == 0 {
        return Err(Error::Argument("horizon must be at least 1 frame".into()));
    }
    let Some(first) = instance.admissible.frames().into_iter().next() else {
        return Ok(instance.clone());
    };
    let cut = Frame(first.0 + h);
    let merged = |k: Frame| k >= cut;
    if !instance.admissible.frames().into_iter().any(merged) {
        return Ok(instance.clone());
    }

    let admissible: AdmissibleSet = instance
        .admissible
        .iter()
        .map(|q| if merged(q.frame) { q.at_frame(cut) } else { q.clone() })
        .collect();

    let mut supply = BTreeMap::new();
    for ((l, k), s) in &instance.supply {
        let key = (l.clone(), if merged(*k) { cut } else { *k });
        *supply.entry(key).or_insert(0.0) += s;
    }

    let mut profit = BTreeMap::new();
    let mut merged_profit: BTreeMap<Quad, Vec<(f64, f64)>> = BTreeMap::new();
    for (q, p) in &instance.profit {
        if merged(q.frame) {
            let s = instance.supply_at(&q.location, q.frame).unwrap_or(0.0);
            merged_profit.entry(q.at_frame(cut)).or_default().push((s, *p));
        } else {
            profit.insert(q.clone(), *p);
        }
    }
    for (q, parts) in merged_profit {
        profit.insert(q, weighted_mean(&parts));
    }

    let mut mu = BTreeMap::new();
    for ((i, k), v) in &instance.mu {
        let key = (i.clone(), if merged(*k) { cut } else { *k });
        *mu.entry(key).or_insert(0.0) += v;
    }

    let mut lambda = BTreeMap::new();
    for (q, v) in &instance.lambda {
        let key = if merged(q.frame) { q.at_frame(cut) } else { q.clone() };
        *lambda.entry(key).or_insert(0.0) += v;
    }

    let mut overflow_frac = BTreeMap::new();
    let mut merged_overflow: BTreeMap<LocationId, Vec<(f64, f64)>> = BTreeMap::new();
    for ((l, k), p) in &instance.overflow_frac {
        if merged(*k) {
            let s = instance.supply_at(l, *k).unwrap_or(0.0);
            merged_overflow.entry(l.clone()).or_default().push((s, *p));
        } else {
            overflow_frac.insert((l.clone(), *k), *p);
        }
    }
    for (l, parts) in merged_overflow {
        overflow_frac.insert((l, cut), weighted_mean(&parts));
    }

    let mut frame_supply: BTreeMap<Frame, f64> = BTreeMap::new();
    for ((_, k), s) in &instance.supply {
        *frame_supply.entry(*k).or_insert(0.0) += s;
    }
    let mut frame_weight = BTreeMap::new();
    let mut merged_weight = Vec::new();
    for (k, w) in &instance.frame_weight {
        if merged(*k) {
            merged_weight.push((frame_supply.get(k).copied().unwrap_or(0.0), *w));
        } else {
            frame_weight.insert(*k, *w);
        }
    }
    if !merged_weight.is_empty() {
        frame_weight.insert(cut, weighted_mean(&merged_weight));
    }

    Ok(Instance {
        admissible,
        supply,
        demand: instance.demand.clone(),
        profit,
        mu,
        overflow_frac,
        lambda,
        frame_weight,
        families: instance.families,
    })
}

fn weighted_mean(parts: &[(f64, f64)]) -> f64 {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    if total > 0.0 {
        parts.iter().map(|(w, v)| w * v).sum::<f64>() / total
    } else {
        parts.iter().map(|(_, v)| v).sum::<f64>() / parts.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Campaign, CampaignId, Catalog, CreativeId, FrameClock, full_grid};
    use crate::fixtures::t1_instance;
    use crate::model::Budget;

    fn long_instance(frames: u32) -> Instance {
        let mut creatives = BTreeMap::new();
        creatives.insert(CampaignId::new("1"), vec![CreativeId::new("a")]);
        let catalog = Catalog::new(
            vec![Campaign {
                id: "1".into(),
                name: "one".into(),
            }],
            creatives,
            vec!["L1".into()],
            frames,
            FrameClock::default(),
        )
        .unwrap();
        let mut inst = Instance {
            admissible: full_grid(&catalog),
            ..Default::default()
        };
        inst.demand.insert("1".into(), Budget::Unbounded);
        for k in 1..=frames {
            inst.supply.insert(("L1".into(), Frame(k)), k as f64);
            inst.profit.insert(Quad::new("1", "a", k, "L1"), if k % 2 == 0 { 2.0 } else { 1.0 });
            inst.mu.insert(("1".into(), Frame(k)), 1.0);
        }
        inst
    }

    #[test]
    fn merges_tail_and_conserves_totals() {
        let inst = long_instance(48);
        let out = apply_horizon(&inst, 24).unwrap();
        assert_eq!(out.admissible.frames().len(), 25);
        let tail: f64 = (25..=48).map(|k| k as f64).sum();
        assert_eq!(out.supply_at(&"L1".into(), Frame(25)), Some(tail));
        assert_eq!(out.supply.values().sum::<f64>(), inst.supply.values().sum::<f64>());
        assert_eq!(out.mu.values().sum::<f64>(), 48.0);
        let p = out.profit[&Quad::new("1", "a", 25, "L1")];
        let expected: f64 = (25..=48)
            .map(|k| k as f64 * if k % 2 == 0 { 2.0 } else { 1.0 })
            .sum::<f64>()
            / tail;
        assert!((p - expected).abs() < 1e-12);
        out.validate().unwrap();
    }

    #[test]
    fn long_horizon_is_identity() {
        let inst = long_instance(5);
        assert_eq!(apply_horizon(&inst, 5).unwrap(), inst);
        assert_eq!(apply_horizon(&inst, 50).unwrap(), inst);
        assert!(apply_horizon(&inst, 0).is_err());
    }

    #[test]
    fn t1_with_unit_horizon() {
        let t1 = t1_instance();
        let out = apply_horizon(&t1, 1).unwrap();
        assert_eq!(out.admissible.frames().len(), 2);
        assert_eq!(out.supply_at(&"L1".into(), Frame(2)), Some(5.0));
        assert_eq!(out, t1);
    }

    #[test]
    fn weights_merge_by_supply() {
        let mut inst = long_instance(4);
        for k in 1..=4 {
            inst.frame_weight.insert(Frame(k), 0.5f64.powi(k as i32 - 1));
        }
        let out = apply_horizon(&inst, 2).unwrap();
        // Frames 3 and 4 with supplies 3 and 4, weights 0.25 and 0.125.
        let w = out.weight_at(Frame(3));
        assert!((w - (3.0 * 0.25 + 4.0 * 0.125) / 7.0).abs() < 1e-15);
        assert_eq!(out.frame_weight.len(), 3);
    }
}
