use std::borrow::Cow;
use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};

use super::{FinalLevelOrder, HistoryLog, HistoryRecord, ProjectionParams, Similarity, SimilarityClass};
use crate::error::{Error, Result};
use crate::domain::{CampaignId, CreativeId, FrameClock, LocationId, Quad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LadderLevel {
    /// Same creative and location at similar times.
    Exact,
    /// Same location or same creative at similar times, blended.
    Neighbours,
    /// As `Neighbours` with sibling creatives of the campaign.
    Siblings,
    /// Campaign-wide or location-wide average at any time.
    Broad,
    Prior,
}

impl LadderLevel {
    pub fn number(&self) -> Option<u8> {
        match self {
            LadderLevel::Exact => Some(1),
            LadderLevel::Neighbours => Some(2),
            LadderLevel::Siblings => Some(3),
            LadderLevel::Broad => Some(4),
            LadderLevel::Prior => None,
        }
    }
}

impl fmt::Display for LadderLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("prior"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfitEstimate {
    /// Profit per impression.
    pub value: f64,
    pub level: LadderLevel,
    /// Impressions behind the estimate (0 for the prior).
    pub impressions: u64,
}

/// Record indices with their timestamps in seconds, ordered by time.
type Bucket<K> = HashMap<K, Vec<(i64, usize)>>;

fn insert_sorted(v: &mut Vec<(i64, usize)>, e: (i64, usize)) {
    if v.last().map_or(true, |l| *l <= e) {
        v.push(e);
    } else {
        let at = v.partition_point(|x| *x < e);
        v.insert(at, e);
    }
}

/// Bucket entries ordered by distance to `target`, later records first on
/// ties.
struct Nearest<'b> {
    entries: &'b [(i64, usize)],
    target: i64,
    run_start: usize,
    run_pos: usize,
    run_end: usize,
    right: usize,
}

impl<'b> Nearest<'b> {
    fn new(entries: &'b [(i64, usize)], target: i64) -> Self {
        let split = entries.partition_point(|e| e.0 < target);
        let mut it = Nearest {
            entries,
            target,
            run_start: split,
            run_pos: split,
            run_end: split,
            right: split,
        };
        it.next_run();
        it
    }

    /// Moves to the block of equal timestamps just before the current one.
    fn next_run(&mut self) {
        self.run_end = self.run_start;
        if self.run_end == 0 {
            self.run_pos = 0;
            return;
        }
        let t = self.entries[self.run_end - 1].0;
        let mut start = self.run_end - 1;
        while start > 0 && self.entries[start - 1].0 == t {
            start -= 1;
        }
        self.run_start = start;
        self.run_pos = start;
    }
}

impl Iterator for Nearest<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.run_pos == self.run_end && self.run_end > 0 {
            self.next_run();
        }
        let left = (self.run_pos < self.run_end).then(|| self.entries[self.run_pos]);
        let right = self.entries.get(self.right).copied();
        match (left, right) {
            (Some(l), Some(r)) if r.0 - self.target > self.target - l.0 => {
                self.run_pos += 1;
                Some(l.1)
            }
            (_, Some(r)) => {
                self.right += 1;
                Some(r.1)
            }
            (Some(l), None) => {
                self.run_pos += 1;
                Some(l.1)
            }
            (None, None) => None,
        }
    }
}

/// Log records bucketed by similarity class. Append-only logs can be
/// brought up to date with [`SimilarityIndex::sync`] without re-reading old
/// records.
#[derive(Clone, Debug)]
pub struct SimilarityIndex {
    similarity: Similarity,
    indexed: usize,
    last: Option<HistoryRecord>,
    latest: Option<i64>,
    stream: Bucket<(LocationId, CampaignId, CreativeId, SimilarityClass)>,
    location: Bucket<(LocationId, SimilarityClass)>,
    location_campaign: Bucket<(LocationId, CampaignId, SimilarityClass)>,
    pair: Bucket<(CampaignId, CreativeId, SimilarityClass)>,
    campaign: Bucket<(CampaignId, SimilarityClass)>,
    campaign_any: Bucket<CampaignId>,
    location_any: Bucket<LocationId>,
    memo: RefCell<Memo>,
}

type MemoKey = (CampaignId, CreativeId, LocationId, SimilarityClass);

/// Estimates for targets after the log, valid while every record precedes
/// `as_of`. Such estimates depend on neither the target nor `as_of`.
#[derive(Clone, Debug, Default)]
struct Memo {
    params: Option<ProjectionParams>,
    entries: HashMap<MemoKey, ProfitEstimate>,
}

impl SimilarityIndex {
    pub fn new(similarity: Similarity) -> Self {
        SimilarityIndex {
            similarity,
            indexed: 0,
            last: None,
            latest: None,
            stream: HashMap::new(),
            location: HashMap::new(),
            location_campaign: HashMap::new(),
            pair: HashMap::new(),
            campaign: HashMap::new(),
            campaign_any: HashMap::new(),
            location_any: HashMap::new(),
            memo: RefCell::default(),
        }
    }

    pub fn build(history: &HistoryLog, similarity: Similarity) -> Self {
        let mut index = SimilarityIndex::new(similarity);
        index.sync(history);
        index
    }

    /// Whether the index covers a prefix of `history`.
    fn is_prefix_of(&self, history: &HistoryLog) -> bool {
        match &self.last {
            None => self.indexed == 0,
            Some(r) => history.len() >= self.indexed && history.records()[self.indexed - 1] == *r,
        }
    }

    /// Indexes the records appended since the last call; rebuilds from
    /// scratch when `history` is not an extension of the indexed log.
    pub fn sync(&mut self, history: &HistoryLog) {
        if !self.is_prefix_of(history) {
            *self = SimilarityIndex::new(self.similarity);
        }
        let mut touched = HashSet::new();
        for (idx, r) in history.records().iter().enumerate().skip(self.indexed) {
            let secs = r.timestamp.timestamp();
            touched.insert(self.similarity.class_of(r.timestamp));
            self.latest = Some(self.latest.map_or(secs, |t| t.max(secs)));
            let Some((i, j)) = &r.ad else { continue };
            let c = self.similarity.class_of(r.timestamp);
            let l = &r.location;
            let e = (secs, idx);
            insert_sorted(self.stream.entry((l.clone(), i.clone(), j.clone(), c)).or_default(), e);
            insert_sorted(self.location.entry((l.clone(), c)).or_default(), e);
            insert_sorted(self.location_campaign.entry((l.clone(), i.clone(), c)).or_default(), e);
            insert_sorted(self.pair.entry((i.clone(), j.clone(), c)).or_default(), e);
            insert_sorted(self.campaign.entry((i.clone(), c)).or_default(), e);
            insert_sorted(self.campaign_any.entry(i.clone()).or_default(), e);
            insert_sorted(self.location_any.entry(l.clone()).or_default(), e);
        }
        if !touched.is_empty() {
            self.memo.get_mut().entries.retain(|k, e| {
                !touched.contains(&k.3) && !matches!(e.level, LadderLevel::Broad | LadderLevel::Prior)
            });
        }
        self.indexed = history.len();
        self.last = history.records().last().cloned();
    }
}

type CacheKey = (MemoKey, i64);

/// Profit projections against one snapshot of the log. Estimates for targets
/// after the log are kept in the index and reused by later projectors.
pub struct ProfitProjector<'a> {
    history: &'a HistoryLog,
    params: &'a ProjectionParams,
    clock: FrameClock,
    as_of: DateTime<Utc>,
    index: Cow<'a, SimilarityIndex>,
    cache: RefCell<HashMap<CacheKey, ProfitEstimate>>,
}

impl<'a> ProfitProjector<'a> {
    /// `as_of` anchors the recency weights.
    pub fn new(
        history: &'a HistoryLog,
        params: &'a ProjectionParams,
        clock: FrameClock,
        as_of: DateTime<Utc>,
    ) -> Self {
        let index = SimilarityIndex::build(history, params.similarity);
        Self::assemble(history, params, clock, as_of, Cow::Owned(index))
    }

    /// Uses an index already synced with `history`.
    pub fn with_index(
        history: &'a HistoryLog,
        params: &'a ProjectionParams,
        clock: FrameClock,
        as_of: DateTime<Utc>,
        index: &'a SimilarityIndex,
    ) -> Result<Self> {
        if index.indexed != history.len() || !index.is_prefix_of(history) {
            return Err(Error::Argument("similarity index is out of date".into()));
        }
        if index.similarity != params.similarity {
            return Err(Error::Argument("similarity index uses other calendar features".into()));
        }
        Ok(Self::assemble(history, params, clock, as_of, Cow::Borrowed(index)))
    }

    fn assemble(
        history: &'a HistoryLog,
        params: &'a ProjectionParams,
        clock: FrameClock,
        as_of: DateTime<Utc>,
        index: Cow<'a, SimilarityIndex>,
    ) -> Self {
        ProfitProjector {
            history,
            params,
            clock,
            as_of,
            index,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Recency-weighted profit per impression over the records nearest to
    /// `target`, taken until `n_min` impressions are reached.
    fn average(&self, picked: impl Iterator<Item = usize>) -> Option<(f64, u64)> {
        let mut total = 0u64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in picked {
            if total >= self.params.n_min {
                break;
            }
            let r = self.history.get(i);
            let w = self.params.recency_weight(self.as_of, r.timestamp);
            total += r.impressions;
            num += w * r.profit;
            den += w * r.impressions as f64;
        }
        (total >= self.params.n_min && den > 0.0).then(|| (num / den, total))
    }

    pub fn project(&self, quad: &Quad) -> ProfitEstimate {
        let target = self.clock.start(quad.frame);
        let class = self.params.similarity.class_of(target);
        let secs = target.timestamp();
        let key = (
            quad.campaign.clone(),
            quad.creative.clone(),
            quad.location.clone(),
            class,
        );
        let stable = self
            .index
            .latest
            .map_or(true, |t| t < secs && t <= self.as_of.timestamp());
        if !stable {
            let key = (key, secs);
            if let Some(e) = self.cache.borrow().get(&key) {
                return *e;
            }
            let e = self.ladder(quad, secs, class);
            self.cache.borrow_mut().insert(key, e);
            return e;
        }
        let mut memo = self.index.memo.borrow_mut();
        if memo.params.as_ref() != Some(self.params) {
            memo.params = Some(self.params.clone());
            memo.entries.clear();
        }
        if let Some(e) = memo.entries.get(&key) {
            return *e;
        }
        drop(memo);
        let e = self.ladder(quad, secs, class);
        self.index.memo.borrow_mut().entries.insert(key, e);
        e
    }

    fn ladder(&self, quad: &Quad, target: i64, class: SimilarityClass) -> ProfitEstimate {
        let (i, j, l) = (&quad.campaign, &quad.creative, &quad.location);
        let h = self.history;
        let params = self.params;
        let found = |value, level, impressions| ProfitEstimate {
            value,
            level,
            impressions,
        };
        fn nearest(b: Option<&Vec<(i64, usize)>>, target: i64) -> Nearest<'_> {
            Nearest::new(b.map_or(&[][..], Vec::as_slice), target)
        }
        let bucket = |b| nearest(b, target);
        let blend = |a: Option<(f64, u64)>, b: Option<(f64, u64)>| match (a, b) {
            (Some((va, na)), Some((vb, nb))) => {
                Some((params.w_loc * va + (1.0 - params.w_loc) * vb, na + nb))
            }
            _ => None,
        };

        let exact = bucket(self.index.stream.get(&(l.clone(), i.clone(), j.clone(), class)));
        if let Some((v, n)) = self.average(exact) {
            return found(v, LadderLevel::Exact, n);
        }

        let same_location = self.average(bucket(self.index.location.get(&(l.clone(), class))));
        let same_creative = self.average(bucket(self.index.pair.get(&(i.clone(), j.clone(), class))));
        if let Some((v, n)) = blend(same_location, same_creative) {
            return found(v, LadderLevel::Neighbours, n);
        }

        let sibling = |r: &usize| h.get(*r).creative().is_some_and(|c| c != j);
        let siblings_here = self.average(
            bucket(self.index.location_campaign.get(&(l.clone(), i.clone(), class))).filter(sibling)
        );
        let siblings_anywhere =
            self.average(bucket(self.index.campaign.get(&(i.clone(), class))).filter(sibling));
        if let Some((v, n)) = blend(siblings_here, siblings_anywhere) {
            return found(v, LadderLevel::Siblings, n);
        }

        let campaign = || self.average(bucket(self.index.campaign_any.get(i)));
        let location = || self.average(bucket(self.index.location_any.get(l)));
        let broad = match params.final_order {
            FinalLevelOrder::CampaignFirst => campaign().or_else(location),
            FinalLevelOrder::LocationFirst => location().or_else(campaign),
        };
        if let Some((v, n)) = broad {
            return found(v, LadderLevel::Broad, n);
        }

        found(params.prior_profit, LadderLevel::Prior, 0)
    }
}

/// Profit per impression of `quad`, falling back through progressively
/// coarser averages of the log. `as_of` anchors the recency weights.
pub fn project_profit(
    history: &HistoryLog,
    quad: &Quad,
    clock: &FrameClock,
    as_of: DateTime<Utc>,
    params: &ProjectionParams,
) -> ProfitEstimate {
    ProfitProjector::new(history, params, *clock, as_of).project(quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Frame;
    use chrono::Duration;

    fn clock() -> FrameClock {
        FrameClock::default()
    }

    fn params() -> ProjectionParams {
        ProjectionParams {
            n_min: 50,
            prior_profit: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn constant_exact_history() {
        let c = clock();
        let target = Quad::new("1", "a", 1, "L1");
        let mut recs = Vec::new();
        for w in 1..=3 {
            recs.push(HistoryRecord::delivered(
                c.epoch - Duration::weeks(w),
                "L1",
                "1",
                "a",
                40,
                40.0 * 0.002,
            ));
        }
        let log = HistoryLog::from_records(recs).unwrap();
        let e = project_profit(&log, &target, &c, c.epoch, &params());
        assert_eq!(e.level, LadderLevel::Exact);
        assert!((e.value - 0.002).abs() < 1e-15);
        assert_eq!(e.impressions, 80);
    }

    #[test]
    fn empty_history_gives_prior() {
        let c = clock();
        let e = project_profit(
            &HistoryLog::new(),
            &Quad::new("1", "a", 1, "L1"),
            &c,
            c.epoch,
            &params(),
        );
        assert_eq!(e.level, LadderLevel::Prior);
        assert_eq!(e.value, 0.01);
        assert_eq!(e.level.to_string(), "prior");
    }

    #[test]
    fn insufficient_exact_falls_to_campaign_average() {
        let c = clock();
        // 25 exact impressions at 0.004, a week back.
        let mut recs = vec![HistoryRecord::delivered(
            c.epoch - Duration::weeks(1),
            "L1",
            "1",
            "a",
            25,
            0.1,
        )];
        // Campaign-wide data for creative b elsewhere, at other hours, more recent.
        for h in 1..=3 {
            recs.push(HistoryRecord::delivered(
                c.epoch - Duration::hours(h),
                "L2",
                "1",
                "b",
                30,
                0.03,
            ));
        }
        let log = HistoryLog::from_records(recs).unwrap();
        let e = project_profit(&log, &Quad::new("1", "a", 1, "L1"), &c, c.epoch, &params());
        assert_eq!(e.level, LadderLevel::Broad);
        assert!((e.value - 0.001).abs() < 1e-15);
    }

    #[test]
    fn blended_neighbours() {
        let c = clock();
        let t = c.epoch - Duration::weeks(1);
        let log = HistoryLog::from_records(vec![
            // Other campaign at the same location: 0.002.
            HistoryRecord::delivered(t, "L1", "2", "z", 60, 0.12),
            // Same creative at another location: 0.004.
            HistoryRecord::delivered(t, "L2", "1", "a", 60, 0.24),
        ])
        .unwrap();
        let e = project_profit(&log, &Quad::new("1", "a", 1, "L1"), &c, c.epoch, &params());
        assert_eq!(e.level, LadderLevel::Neighbours);
        assert!((e.value - 0.003).abs() < 1e-15);
    }

    #[test]
    fn sibling_level() {
        let c = clock();
        let t = c.epoch - Duration::weeks(1);
        let log = HistoryLog::from_records(vec![
            HistoryRecord::delivered(t, "L1", "1", "b", 60, 0.12),
            HistoryRecord::delivered(t, "L2", "1", "b", 60, 0.24),
        ])
        .unwrap();
        let p = ProjectionParams {
            w_loc: 1.0,
            ..params()
        };
        // Level 2 has a same-location average but nothing for creative a.
        let e = project_profit(&log, &Quad::new("1", "a", 1, "L1"), &c, c.epoch, &p);
        assert_eq!(e.level, LadderLevel::Siblings);
        assert!((e.value - 0.002).abs() < 1e-15);
    }

    #[test]
    fn final_level_order_switch() {
        let c = clock();
        let t = c.epoch - Duration::hours(3);
        let log = HistoryLog::from_records(vec![
            HistoryRecord::delivered(t, "L9", "1", "b", 60, 0.06),
            HistoryRecord::delivered(t, "L1", "7", "q", 60, 0.6),
        ])
        .unwrap();
        let q = Quad::new("1", "a", 1, "L1");
        let campaign_first = project_profit(&log, &q, &c, c.epoch, &params());
        assert!((campaign_first.value - 0.001).abs() < 1e-15);
        let p = ProjectionParams {
            final_order: FinalLevelOrder::LocationFirst,
            ..params()
        };
        let location_first = project_profit(&log, &q, &c, c.epoch, &p);
        assert!((location_first.value - 0.01).abs() < 1e-15);
        assert_eq!(location_first.level, LadderLevel::Broad);
    }

    #[test]
    fn unfilled_rows_carry_no_profit_signal() {
        let c = clock();
        let log = HistoryLog::from_records(vec![HistoryRecord::unfilled(
            c.epoch - Duration::weeks(1),
            "L1",
            500,
        )])
        .unwrap();
        let e = project_profit(&log, &Quad::new("1", "a", 1, "L1"), &c, c.epoch, &params());
        assert_eq!(e.level, LadderLevel::Prior);
    }

    #[test]
    fn incremental_index_matches_fresh_build() {
        let c = clock();
        let mut log = HistoryLog::new();
        let mut index = SimilarityIndex::new(Similarity::default());
        let p = params();
        let q = Quad::new("1", "a", 1, "L1");
        for w in (1..=4).rev() {
            log.append(HistoryRecord::delivered(c.epoch - Duration::weeks(w), "L1", "1", "a", 20, 20.0 * w as f64))
                .unwrap();
            index.sync(&log);
            let a = ProfitProjector::with_index(&log, &p, c, c.epoch, &index).unwrap().project(&q);
            let b = project_profit(&log, &q, &c, c.epoch, &p);
            assert_eq!(a, b);
        }
        let other = HistoryLog::from_records(vec![HistoryRecord::delivered(c.epoch, "L1", "1", "a", 1, 1.0)]).unwrap();
        assert!(ProfitProjector::with_index(&other, &p, c, c.epoch, &index).is_err());
        index.sync(&other);
        assert!(ProfitProjector::with_index(&other, &p, c, c.epoch, &index).is_ok());
    }

    #[test]
    fn memo_tracks_a_growing_log() {
        let c = clock();
        let p = ProjectionParams {
            n_min: 30,
            ..Default::default()
        };
        let ads = [("1", "a"), ("1", "b"), ("2", "a")];
        let locations = ["L1", "L2"];
        let mut log = HistoryLog::new();
        let mut index = SimilarityIndex::new(p.similarity);
        for k in 1..=400u32 {
            let t = c.start(Frame(k));
            for (n, l) in locations.iter().enumerate() {
                let (i, j) = ads[(k as usize + n) % ads.len()];
                let imps = 5 + (k as u64 * 7 + n as u64) % 11;
                let rate = 0.001 * (1 + (k % 5) + n as u32) as f64;
                log.append(HistoryRecord::delivered(t, *l, i, j, imps, imps as f64 * rate)).unwrap();
            }
            index.sync(&log);
            if k % 37 != 0 {
                continue;
            }
            let as_of = c.start(Frame(k + 1));
            let memo = ProfitProjector::with_index(&log, &p, c, as_of, &index).unwrap();
            let fresh = ProfitProjector::new(&log, &p, c, as_of);
            for ahead in [1, 5, 30, 200] {
                for (i, j) in ads {
                    for l in locations {
                        let q = Quad::new(i, j, k + ahead, l);
                        let (a, b) = (memo.project(&q), fresh.project(&q));
                        assert_eq!((a.level, a.impressions), (b.level, b.impressions), "{q:?}");
                        assert!((a.value - b.value).abs() <= 1e-12 * b.value.abs().max(1e-9), "{q:?}");
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn nearest_orders_by_distance_then_recency(
            mut entries in proptest::collection::vec((0i64..40, 0usize..1000), 0..30),
            target in -5i64..45,
        ) {
            entries.sort();
            entries.dedup_by_key(|e| e.1);
            let got: Vec<usize> = Nearest::new(&entries, target).collect();
            let mut want = entries.clone();
            want.sort_by_key(|&(t, i)| ((t - target).abs(), std::cmp::Reverse(t), i));
            let want: Vec<usize> = want.into_iter().map(|e| e.1).collect();
            proptest::prop_assert_eq!(got, want);
        }
    }
}
