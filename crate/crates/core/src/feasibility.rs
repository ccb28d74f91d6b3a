//! Safe caps for the lasting (`μ`) and learning (`λ`) minimums, and
//! feasibility certification of an instance.
//!
//! With `M` the largest admissible profit per impression:
//!
//! ```text
//! μ_{i,k} ≤ min{ D_i / (|C[1→i,2→*,4→*]|·M),  min_t S_{t,k} / |C[2→*,3→k,4→t]| }
//! λ_q     ≤ min{ D_i / (|C[1→i]|·M),           S_{l,k} / |C[3→k,4→l]| }
//! ```
//!
//! where `t` ranges over the locations of campaign `i` at frame `k`. Each cap
//! alone keeps supply, demand and its own family jointly satisfiable. When both
//! families are active at once the two witnesses add up, so [`clamp_secondary`]
//! halves both caps in that case.

use std::collections::BTreeMap;

use crate::domain::{CampaignId, Configuration, Frame, Quad};
use crate::error::{Error, Result};
use crate::model::{build_revenue_lp, Instance};
use crate::solver::{find_feasible_point, SolverSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityBounds {
    pub mu_max: BTreeMap<(CampaignId, Frame), f64>,
    pub lambda_max: BTreeMap<Quad, f64>,
    pub profit_cap: f64,
}

/// Largest lasting minimum for campaign `campaign` at `frame` that cannot
/// conflict with supply and budget. `f64::INFINITY` when neither binds.
pub fn mu_bound(instance: &Instance, campaign: &CampaignId, frame: Frame) -> Result<f64> {
    let locations = instance.admissible.campaign_locations(campaign, frame);
    if locations.is_empty() {
        return Err(Error::Domain(format!(
            "campaign {campaign} has no admissible point at frame {frame}"
        )));
    }
    let m = instance.profit_cap();
    let frames = instance.admissible.campaign_frame_count(campaign) as f64;
    let budget_term = instance.budget(campaign).share(frames * m);
    let mut supply_term = f64::INFINITY;
    for t in &locations {
        let s = instance.supply_at(t, frame).ok_or_else(|| {
            Error::Model(format!("no supply for location {t} at frame {frame}"))
        })?;
        let campaigns = instance.admissible.slot_campaign_count(t, frame) as f64;
        supply_term = supply_term.min(s / campaigns);
    }
    Ok(budget_term.min(supply_term))
}

/// Largest learning minimum for an admissible quad that cannot conflict with
/// supply and budget.
pub fn lambda_bound(instance: &Instance, quad: &Quad) -> Result<f64> {
    if !instance.admissible.contains(quad) {
        return Err(Error::Domain(format!("{quad} is not admissible")));
    }
    let m = instance.profit_cap();
    let count = instance.admissible.campaign_count(&quad.campaign) as f64;
    let budget_term = instance.budget(&quad.campaign).share(count * m);
    let s = instance
        .supply_at(&quad.location, quad.frame)
        .ok_or_else(|| Error::Model(format!("no supply at {quad}")))?;
    let pairs = instance
        .admissible
        .slot_pair_count(&quad.location, quad.frame) as f64;
    Ok(budget_term.min(s / pairs))
}

pub fn bounds(instance: &Instance) -> Result<FeasibilityBounds> {
    let mut mu_max = BTreeMap::new();
    for (i, k) in instance.admissible.campaign_frames() {
        let b = mu_bound(instance, &i, k)?;
        mu_max.insert((i, k), b);
    }
    let mut lambda_max = BTreeMap::new();
    for q in instance.admissible.iter() {
        lambda_max.insert(q.clone(), lambda_bound(instance, q)?);
    }
    Ok(FeasibilityBounds {
        mu_max,
        lambda_max,
        profit_cap: instance.profit_cap(),
    })
}

fn joint_share(instance: &Instance) -> f64 {
    let both = instance.families.lasting
        && instance.families.learning
        && instance.mu.values().any(|v| *v > 0.0)
        && instance.lambda.values().any(|v| *v > 0.0);
    if both {
        0.5
    } else {
        1.0
    }
}

/// Copy of `instance` with every requested `μ` and `λ` capped at its bound,
/// so that supply, demand, lasting and learning rows are jointly satisfiable.
pub fn clamp_secondary(instance: &Instance) -> Result<Instance> {
    let share = joint_share(instance);
    let mut out = instance.clone();
    for ((i, k), v) in out.mu.iter_mut() {
        if instance.admissible.of_campaign_frame(i, *k).is_empty() {
            continue;
        }
        *v = v.min(share * mu_bound(instance, i, *k)?);
    }
    for (q, v) in out.lambda.iter_mut() {
        *v = v.min(share * lambda_bound(instance, q)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Feasible(Configuration),
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

/// Phase-1 simplex on the full constraint set of the instance, including the
/// overflow rows when that family is enabled.
pub fn check_feasible(instance: &Instance, settings: &SolverSettings) -> Result<Feasibility> {
    let lp = build_revenue_lp(instance)?;
    match find_feasible_point(&lp, settings)? {
        Some(x) => Ok(Feasibility::Feasible(
            lp.to_configuration(&instance.admissible, &x)?,
        )),
        None => Ok(Feasibility::Infeasible),
    }
}

/// Lasting witness: each campaign spreads `μ_{i,k}` evenly over its admissible
/// points at frame `k`.
pub fn lasting_witness(instance: &Instance) -> Result<Configuration> {
    let mut values: BTreeMap<Quad, f64> = BTreeMap::new();
    for ((i, k), mu) in &instance.mu {
        let quads = instance.admissible.of_campaign_frame(i, *k);
        if quads.is_empty() || *mu <= 0.0 {
            continue;
        }
        let share = mu / quads.len() as f64;
        for q in quads {
            *values.entry(q.clone()).or_default() += share;
        }
    }
    Configuration::new(&instance.admissible, values)
}

/// Learning witness: `x_q = λ_q` on every flagged quad, zero elsewhere.
pub fn learning_witness(instance: &Instance) -> Result<Configuration> {
    Configuration::new(&instance.admissible, instance.lambda.clone())
}
