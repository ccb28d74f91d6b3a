//! Small reference instances shared by tests, examples and the C bindings.

use std::collections::BTreeMap;

use crate::domain::{full_grid, Campaign, CampaignId, Catalog, CreativeId, Frame, FrameClock, Quad};
use crate::model::{Budget, Instance};

/// Two campaigns with one creative each, one location `L1`, two frames.
/// Campaign 1 has budget 10 and profit 1.0, campaign 2 is unbounded with
/// profit 0.5; supply is 5 per frame. The revenue optimum is 10.
pub fn t1_catalog() -> Catalog {
    let mut creatives = BTreeMap::new();
    creatives.insert(CampaignId::new("1"), vec![CreativeId::new("1")]);
    creatives.insert(CampaignId::new("2"), vec![CreativeId::new("1")]);
    Catalog::new(
        vec![
            Campaign {
                id: "1".into(),
                name: "campaign 1".into(),
            },
            Campaign {
                id: "2".into(),
                name: "campaign 2".into(),
            },
        ],
        creatives,
        vec!["L1".into()],
        2,
        FrameClock::default(),
    )
    .expect("reference catalog is valid")
}

pub fn t1_instance() -> Instance {
    let admissible = full_grid(&t1_catalog());
    let mut supply = BTreeMap::new();
    for k in [1, 2] {
        supply.insert(("L1".into(), Frame(k)), 5.0);
    }
    let mut demand = BTreeMap::new();
    demand.insert(CampaignId::new("1"), Budget::Finite(10.0));
    demand.insert(CampaignId::new("2"), Budget::Unbounded);
    let mut profit = BTreeMap::new();
    for k in [1, 2] {
        profit.insert(Quad::new("1", "1", k, "L1"), 1.0);
        profit.insert(Quad::new("2", "1", k, "L1"), 0.5);
    }
    Instance {
        admissible,
        supply,
        demand,
        profit,
        ..Default::default()
    }
}
