//! Grid model: campaigns, creatives, locations and time frames, the admissible
//! set of `(campaign, creative, frame, location)` points and configurations
//! over it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Self {
                $name(Arc::from(id.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(Arc::from(s))
            }
        }
    };
}

id_type!(
    /// Campaign identifier.
    CampaignId
);
id_type!(
    /// Creative identifier, unique within its campaign.
    CreativeId
);
id_type!(
    /// Opaque delivery-slot key. Composite keys such as `"node|profile"` are
    /// ordinary location ids.
    LocationId
);

/// One-based index of a planning time frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame(pub u32);

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maps frame indices onto wall-clock intervals: frame 1 starts at `epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameClock {
    pub epoch: DateTime<Utc>,
    pub duration: Duration,
}

impl Default for FrameClock {
    fn default() -> Self {
        FrameClock {
            epoch: Utc.with_ymd_and_hms(2010, 4, 1, 0, 0, 0).unwrap(),
            duration: Duration::hours(1),
        }
    }
}

impl FrameClock {
    pub fn new(epoch: DateTime<Utc>, duration: Duration) -> Result<Self> {
        if duration <= Duration::zero() {
            return Err(Error::Argument("frame duration must be positive".into()));
        }
        Ok(FrameClock { epoch, duration })
    }

    pub fn start(&self, frame: Frame) -> DateTime<Utc> {
        self.epoch + self.duration * (frame.0 as i32 - 1)
    }

    /// Frame containing `t`; `None` if `t` precedes the epoch.
    pub fn frame_at(&self, t: DateTime<Utc>) -> Option<Frame> {
        if t < self.epoch {
            return None;
        }
        let step = self.duration.num_seconds();
        let offset = (t - self.epoch).num_seconds();
        u32::try_from(offset / step + 1).ok().map(Frame)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Campaign {
    pub id: CampaignId,
    pub name: String,
}

/// Campaigns, their creatives, locations and the frame range `1..=frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    campaigns: Vec<Campaign>,
    creatives: BTreeMap<CampaignId, Vec<CreativeId>>,
    locations: Vec<LocationId>,
    frames: u32,
    pub clock: FrameClock,
}

impl Catalog {
    pub fn new(
        campaigns: Vec<Campaign>,
        creatives: BTreeMap<CampaignId, Vec<CreativeId>>,
        locations: Vec<LocationId>,
        frames: u32,
        clock: FrameClock,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Argument("catalog needs at least one frame".into()));
        }
        let mut seen = HashSet::new();
        for c in &campaigns {
            if !seen.insert(c.id.clone()) {
                return Err(Error::Argument(format!("duplicate campaign id {}", c.id)));
            }
        }
        for (campaign, list) in &creatives {
            if !seen.contains(campaign) {
                return Err(Error::Argument(format!(
                    "creatives listed for unknown campaign {campaign}"
                )));
            }
            let mut own = HashSet::new();
            for j in list {
                if !own.insert(j) {
                    return Err(Error::Argument(format!(
                        "duplicate creative {j} in campaign {campaign}"
                    )));
                }
            }
        }
        let mut locs = HashSet::new();
        for l in &locations {
            if !locs.insert(l) {
                return Err(Error::Argument(format!("duplicate location id {l}")));
            }
        }
        Ok(Catalog {
            campaigns,
            creatives,
            locations,
            frames,
            clock,
        })
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn creatives(&self, campaign: &CampaignId) -> &[CreativeId] {
        self.creatives.get(campaign).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn locations(&self) -> &[LocationId] {
        &self.locations
    }

    pub fn frame_count(&self) -> u32 {
        self.frames
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> {
        (1..=self.frames).map(Frame)
    }

    pub fn has_campaign(&self, id: &CampaignId) -> bool {
        self.campaigns.iter().any(|c| &c.id == id)
    }

    pub fn has_creative(&self, campaign: &CampaignId, creative: &CreativeId) -> bool {
        self.creatives(campaign).contains(creative)
    }

    pub fn has_location(&self, id: &LocationId) -> bool {
        self.locations.contains(id)
    }

    /// All `(campaign, creative)` pairs in campaign order.
    pub fn pairs(&self) -> Vec<(CampaignId, CreativeId)> {
        self.campaigns
            .iter()
            .flat_map(|c| {
                self.creatives(&c.id)
                    .iter()
                    .map(move |j| (c.id.clone(), j.clone()))
            })
            .collect()
    }
}

/// Index tuple `(i, j, k, l)`: campaign, creative, frame, location.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quad {
    pub campaign: CampaignId,
    pub creative: CreativeId,
    pub frame: Frame,
    pub location: LocationId,
}

impl Quad {
    pub fn new(
        campaign: impl Into<CampaignId>,
        creative: impl Into<CreativeId>,
        frame: u32,
        location: impl Into<LocationId>,
    ) -> Self {
        Quad {
            campaign: campaign.into(),
            creative: creative.into(),
            frame: Frame(frame),
            location: location.into(),
        }
    }

    pub fn pair(&self) -> (CampaignId, CreativeId) {
        (self.campaign.clone(), self.creative.clone())
    }

    pub fn slot(&self) -> (LocationId, Frame) {
        (self.location.clone(), self.frame)
    }

    pub fn at_frame(&self, frame: Frame) -> Quad {
        Quad {
            frame,
            ..self.clone()
        }
    }

    pub fn component(&self, position: Position) -> Component {
        match position {
            Position::Campaign => Component::Campaign(self.campaign.clone()),
            Position::Creative => Component::Creative(self.creative.clone()),
            Position::Frame => Component::Frame(self.frame),
            Position::Location => Component::Location(self.location.clone()),
        }
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.campaign, self.creative, self.frame, self.location
        )
    }
}

/// Tuple position, numbered 1..=4 in `(i, j, k, l)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Campaign = 1,
    Creative = 2,
    Frame = 3,
    Location = 4,
}

impl Position {
    pub const ALL: [Position; 4] = [
        Position::Campaign,
        Position::Creative,
        Position::Frame,
        Position::Location,
    ];

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            1 => Ok(Position::Campaign),
            2 => Ok(Position::Creative),
            3 => Ok(Position::Frame),
            4 => Ok(Position::Location),
            _ => Err(Error::Argument(format!(
                "tuple position {index} is outside 1..=4"
            ))),
        }
    }
}

/// A single component value of a quad.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Campaign(CampaignId),
    Creative(CreativeId),
    Frame(Frame),
    Location(LocationId),
}

impl Component {
    fn position(&self) -> Position {
        match self {
            Component::Campaign(_) => Position::Campaign,
            Component::Creative(_) => Position::Creative,
            Component::Frame(_) => Position::Frame,
            Component::Location(_) => Position::Location,
        }
    }
}

/// One binding of a projection: `position -> value` or `position -> *`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding {
    pub position: usize,
    pub value: Option<Component>,
}

impl Binding {
    pub fn value(position: usize, value: Component) -> Self {
        Binding {
            position,
            value: Some(value),
        }
    }

    pub fn wildcard(position: usize) -> Self {
        Binding {
            position,
            value: None,
        }
    }
}

/// The set of admissible points, with secondary indexes for the cardinalities
/// used by the feasibility bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmissibleSet {
    points: BTreeSet<Quad>,
    by_campaign: HashMap<CampaignId, Vec<Quad>>,
    by_slot: HashMap<(Frame, LocationId), Vec<Quad>>,
    by_campaign_frame: HashMap<(CampaignId, Frame), Vec<Quad>>,
    by_pair: HashMap<(CampaignId, CreativeId), Vec<Quad>>,
}

impl FromIterator<Quad> for AdmissibleSet {
    fn from_iter<T: IntoIterator<Item = Quad>>(iter: T) -> Self {
        let points: BTreeSet<Quad> = iter.into_iter().collect();
        let mut set = AdmissibleSet {
            points: BTreeSet::new(),
            ..Default::default()
        };
        for q in &points {
            set.by_campaign
                .entry(q.campaign.clone())
                .or_default()
                .push(q.clone());
            set.by_slot
                .entry((q.frame, q.location.clone()))
                .or_default()
                .push(q.clone());
            set.by_campaign_frame
                .entry((q.campaign.clone(), q.frame))
                .or_default()
                .push(q.clone());
            set.by_pair.entry(q.pair()).or_default().push(q.clone());
        }
        set.points = points;
        set
    }
}

impl AdmissibleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, quad: &Quad) -> bool {
        self.points.contains(quad)
    }

    /// Points in `(campaign, creative, frame, location)` order.
    pub fn iter(&self) -> impl Iterator<Item = &Quad> {
        self.points.iter()
    }

    pub fn campaigns(&self) -> BTreeSet<CampaignId> {
        self.by_campaign.keys().cloned().collect()
    }

    pub fn frames(&self) -> BTreeSet<Frame> {
        self.points.iter().map(|q| q.frame).collect()
    }

    /// `(location, frame)` slots carrying at least one admissible point.
    pub fn slots(&self) -> BTreeSet<(LocationId, Frame)> {
        self.by_slot
            .keys()
            .map(|(k, l)| (l.clone(), *k))
            .collect()
    }

    pub fn campaign_frames(&self) -> BTreeSet<(CampaignId, Frame)> {
        self.by_campaign_frame.keys().cloned().collect()
    }

    pub fn at_slot(&self, location: &LocationId, frame: Frame) -> &[Quad] {
        self.by_slot
            .get(&(frame, location.clone()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn of_campaign(&self, campaign: &CampaignId) -> &[Quad] {
        self.by_campaign
            .get(campaign)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn of_campaign_frame(&self, campaign: &CampaignId, frame: Frame) -> &[Quad] {
        self.by_campaign_frame
            .get(&(campaign.clone(), frame))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn of_pair(&self, campaign: &CampaignId, creative: &CreativeId) -> &[Quad] {
        self.by_pair
            .get(&(campaign.clone(), creative.clone()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// `|C[1→i]|`
    pub fn campaign_count(&self, campaign: &CampaignId) -> usize {
        self.of_campaign(campaign).len()
    }

    /// `|C[1→i, 2→*, 4→*]|`: frames in which campaign `i` is admissible.
    pub fn campaign_frame_count(&self, campaign: &CampaignId) -> usize {
        self.of_campaign(campaign)
            .iter()
            .map(|q| q.frame)
            .collect::<HashSet<_>>()
            .len()
    }

    /// `|C[3→k, 4→l]|`: `(campaign, creative)` pairs admissible at the slot.
    pub fn slot_pair_count(&self, location: &LocationId, frame: Frame) -> usize {
        self.at_slot(location, frame).len()
    }

    /// `|C[2→*, 3→k, 4→l]|`: distinct campaigns admissible at the slot.
    pub fn slot_campaign_count(&self, location: &LocationId, frame: Frame) -> usize {
        self.at_slot(location, frame)
            .iter()
            .map(|q| &q.campaign)
            .collect::<HashSet<_>>()
            .len()
    }

    /// `C[1→i, 2→*, 3→k]`: locations where campaign `i` is admissible at `k`.
    pub fn campaign_locations(&self, campaign: &CampaignId, frame: Frame) -> BTreeSet<LocationId> {
        self.of_campaign_frame(campaign, frame)
            .iter()
            .map(|q| q.location.clone())
            .collect()
    }

    /// Restriction to the points accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Quad) -> bool) -> AdmissibleSet {
        self.points.iter().filter(|q| keep(q)).cloned().collect()
    }
}

/// Every `(campaign, creative)` pair at every frame and location.
pub fn full_grid(catalog: &Catalog) -> AdmissibleSet {
    let pairs = catalog.pairs();
    let mut points = Vec::with_capacity(
        pairs.len() * catalog.frame_count() as usize * catalog.locations().len(),
    );
    for (i, j) in &pairs {
        for k in catalog.frames() {
            for l in catalog.locations() {
                points.push(Quad {
                    campaign: i.clone(),
                    creative: j.clone(),
                    frame: k,
                    location: l.clone(),
                });
            }
        }
    }
    points.into_iter().collect()
}

/// Set projection `C[p₁→α₁, p₂→α₂, …]`.
///
/// A concrete binding keeps only the points whose component equals the value;
/// a wildcard keeps every point. Bound positions are then removed from each
/// tuple and duplicates collapse. The remaining components keep their
/// `(i, j, k, l)` order.
pub fn project(set: &AdmissibleSet, bindings: &[Binding]) -> Result<BTreeSet<Vec<Component>>> {
    let mut bound = [false; 5];
    let mut filters = Vec::new();
    for b in bindings {
        let pos = Position::from_index(b.position)?;
        if bound[b.position] {
            return Err(Error::Argument(format!(
                "position {} bound more than once",
                b.position
            )));
        }
        bound[b.position] = true;
        if let Some(v) = &b.value {
            if v.position() != pos {
                return Err(Error::Argument(format!(
                    "value {v:?} does not fit position {}",
                    b.position
                )));
            }
            filters.push((pos, v.clone()));
        }
    }
    let free: Vec<Position> = Position::ALL
        .into_iter()
        .filter(|p| !bound[*p as usize])
        .collect();
    Ok(set
        .iter()
        .filter(|q| filters.iter().all(|(p, v)| &q.component(*p) == v))
        .map(|q| free.iter().map(|p| q.component(*p)).collect())
        .collect())
}

/// One catalog inconsistency found in an admissible set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub quad: Quad,
    pub reason: String,
}

/// Lists every point that references ids or frames unknown to the catalog.
pub fn validate_catalog(catalog: &Catalog, set: &AdmissibleSet) -> Vec<Violation> {
    let mut report = Vec::new();
    for q in set.iter() {
        let reason = if !catalog.has_campaign(&q.campaign) {
            format!("unknown campaign {}", q.campaign)
        } else if !catalog.has_creative(&q.campaign, &q.creative) {
            format!(
                "creative {} does not belong to campaign {}",
                q.creative, q.campaign
            )
        } else if !catalog.has_location(&q.location) {
            format!("unknown location {}", q.location)
        } else if q.frame.0 == 0 || q.frame.0 > catalog.frame_count() {
            format!(
                "frame {} outside 1..={}",
                q.frame,
                catalog.frame_count()
            )
        } else {
            continue;
        };
        report.push(Violation {
            quad: q.clone(),
            reason,
        });
    }
    report
}

/// Impressions assigned to admissible points (`x_{i,j,k,l}`), stored sparsely.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Configuration {
    values: BTreeMap<Quad, f64>,
}

impl Configuration {
    pub fn new(set: &AdmissibleSet, values: BTreeMap<Quad, f64>) -> Result<Self> {
        for (q, v) in &values {
            if !set.contains(q) {
                return Err(Error::Domain(format!("{q} is not admissible")));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Domain(format!("impressions at {q} must be >= 0, got {v}")));
            }
        }
        Ok(Configuration { values })
    }

    pub fn get(&self, quad: &Quad) -> f64 {
        self.values.get(quad).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Quad, f64)> {
        self.values.iter().map(|(q, v)| (q, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1_catalog;

    fn c(s: &str) -> Component {
        Component::Campaign(s.into())
    }
    fn j(s: &str) -> Component {
        Component::Creative(s.into())
    }
    fn k(n: u32) -> Component {
        Component::Frame(Frame(n))
    }
    fn l(s: &str) -> Component {
        Component::Location(s.into())
    }

    #[test]
    fn full_grid_counts() {
        let t1 = t1_catalog();
        assert_eq!(full_grid(&t1).len(), 4);

        let mut creatives = BTreeMap::new();
        for i in ["a", "b", "c"] {
            creatives.insert(CampaignId::new(i), vec![CreativeId::new("x")]);
        }
        let campaigns = ["a", "b", "c"]
            .iter()
            .map(|i| Campaign {
                id: (*i).into(),
                name: String::new(),
            })
            .collect();
        let cat = Catalog::new(
            campaigns,
            creatives,
            vec!["L1".into(), "L2".into()],
            3,
            FrameClock::default(),
        )
        .unwrap();
        assert_eq!(full_grid(&cat).len(), 18);

        let empty = Catalog::new(
            vec![Campaign {
                id: "a".into(),
                name: String::new(),
            }],
            BTreeMap::new(),
            vec!["L1".into()],
            2,
            FrameClock::default(),
        )
        .unwrap();
        assert!(full_grid(&empty).is_empty());
    }

    #[test]
    fn catalog_rejects_bad_input() {
        let dup = Catalog::new(
            vec![
                Campaign {
                    id: "a".into(),
                    name: String::new(),
                },
                Campaign {
                    id: "a".into(),
                    name: String::new(),
                },
            ],
            BTreeMap::new(),
            vec![],
            1,
            FrameClock::default(),
        );
        assert!(dup.is_err());
        let no_frames = Catalog::new(vec![], BTreeMap::new(), vec![], 0, FrameClock::default());
        assert!(no_frames.is_err());
    }

    #[test]
    fn projection_examples() {
        let set = full_grid(&t1_catalog());

        let got = project(&set, &[Binding::value(1, c("1"))]).unwrap();
        let want: BTreeSet<_> = [
            vec![j("1"), k(1), l("L1")],
            vec![j("1"), k(2), l("L1")],
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);

        let got = project(&set, &[Binding::value(3, k(1)), Binding::value(4, l("L1"))]).unwrap();
        let want: BTreeSet<_> = [vec![c("1"), j("1")], vec![c("2"), j("1")]]
            .into_iter()
            .collect();
        assert_eq!(got, want);

        let got = project(
            &set,
            &[
                Binding::value(1, c("1")),
                Binding::wildcard(2),
                Binding::wildcard(4),
            ],
        )
        .unwrap();
        let want: BTreeSet<_> = [vec![k(1)], vec![k(2)]].into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn projection_rejects_bad_bindings() {
        let set = full_grid(&t1_catalog());
        assert!(project(&set, &[Binding::wildcard(5)]).is_err());
        assert!(project(&set, &[Binding::wildcard(0)]).is_err());
        assert!(project(&set, &[Binding::value(1, k(1))]).is_err());
        assert!(project(&set, &[Binding::wildcard(2), Binding::wildcard(2)]).is_err());
    }

    #[test]
    fn validate_catalog_reports_defects() {
        let cat = t1_catalog();
        assert!(validate_catalog(&cat, &full_grid(&cat)).is_empty());

        let bad_loc: AdmissibleSet = [Quad::new("1", "1", 1, "L9")].into_iter().collect();
        assert_eq!(validate_catalog(&cat, &bad_loc).len(), 1);

        let wrong_owner: AdmissibleSet = [Quad::new("1", "7", 1, "L1")].into_iter().collect();
        let report = validate_catalog(&cat, &wrong_owner);
        assert_eq!(report.len(), 1);
        assert!(report[0].reason.contains("does not belong"));
    }

    #[test]
    fn configuration_enforces_keys_and_signs() {
        let set = full_grid(&t1_catalog());
        let mut ok = BTreeMap::new();
        ok.insert(Quad::new("1", "1", 1, "L1"), 2.0);
        assert!(Configuration::new(&set, ok).is_ok());

        let mut outside = BTreeMap::new();
        outside.insert(Quad::new("1", "1", 3, "L1"), 2.0);
        assert!(Configuration::new(&set, outside).is_err());

        let mut negative = BTreeMap::new();
        negative.insert(Quad::new("1", "1", 1, "L1"), -1.0);
        assert!(Configuration::new(&set, negative).is_err());
    }

    #[test]
    fn frame_clock_round_trip() {
        let clock = FrameClock::default();
        assert_eq!(clock.start(Frame(1)), clock.epoch);
        assert_eq!(clock.frame_at(clock.start(Frame(37))), Some(Frame(37)));
        assert_eq!(clock.frame_at(clock.epoch - Duration::seconds(1)), None);
    }
}
