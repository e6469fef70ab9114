//! Reduced and Increased Exposure interventions over a scored feed batch.
//!
//! Both interventions draw the survey slot the same way in Treatment and
//! Control so that the two arms differ only in the reordering itself.
//! Ads are pinned: never scored, penalized, sorted, or chosen as the AAPA
//! anchor of a survey slot.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{is_aapa, AapaScore, Arm, FeedBatch, Millis, Party, Post, DAY_MS};

/// Size of the top-scored pool candidates are drawn from.
pub const UPRANK_POOL: usize = 100;
/// Recency window of the uprank inventory.
pub const UPRANK_WINDOW_MS: Millis = DAY_MS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RerankError {
    #[error("post `{0}` has no score")]
    UnscoredBatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Original,
    Upranked,
    Reemitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPost {
    pub post: Post,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demoted {
    pub post: Post,
    pub penalty_key: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankedFeed {
    pub posts: Vec<RankedPost>,
    /// 1-based index in the served feed where the survey goes. Expressed in
    /// the coordinates of the incoming batch, so it may exceed the served
    /// length by more than one when trailing posts were demoted; renderers
    /// clamp it to `len + 1`.
    pub survey_slot: Option<usize>,
    /// Posts removed from this load, with batch-relative keys.
    pub demoted: Vec<Demoted>,
}

impl RerankedFeed {
    pub fn identity(batch: &FeedBatch) -> Self {
        RerankedFeed {
            posts: batch
                .posts
                .iter()
                .map(|p| RankedPost { post: p.clone(), origin: Origin::Original })
                .collect(),
            survey_slot: None,
            demoted: Vec::new(),
        }
    }

    pub fn post_ids(&self) -> Vec<&str> {
        self.posts.iter().map(|p| p.post.post_id.as_str()).collect()
    }

    /// Survey position clamped to the served feed.
    pub fn rendered_survey_slot(&self) -> Option<usize> {
        self.survey_slot.map(|s| s.min(self.posts.len() + 1))
    }
}

/// A batch together with the scores of its non-ad posts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    pub batch: FeedBatch,
    pub scores: HashMap<String, AapaScore>,
}

impl ScoredBatch {
    pub fn new(batch: FeedBatch, scores: HashMap<String, AapaScore>) -> Result<Self, RerankError> {
        if let Some(p) = batch.posts.iter().find(|p| !p.is_ad && !scores.contains_key(&p.post_id)) {
            return Err(RerankError::UnscoredBatch(p.post_id.clone()));
        }
        Ok(ScoredBatch { batch, scores })
    }

    pub fn score(&self, post: &Post) -> Option<&AapaScore> {
        if post.is_ad {
            None
        } else {
            self.scores.get(&post.post_id)
        }
    }

    /// 1-based positions of AAPA posts.
    pub fn aapa_positions(&self) -> Vec<usize> {
        self.batch
            .positioned()
            .filter(|(_, p)| self.score(p).is_some_and(is_aapa))
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether the Reduced Exposure procedure intervenes on this batch.
    pub fn has_aapa(&self) -> bool {
        !self.aapa_positions().is_empty()
    }
}

/// Sort key of a post: AAPA posts are pushed down by
/// `position × score × 10`; every other post keeps its position.
pub fn penalty_key(position: usize, score: u8) -> u64 {
    let position = position as u64;
    if score >= crate::model::AAPA_THRESHOLD {
        position + position * score as u64 * 10
    } else {
        position
    }
}

/// Reduced Exposure. One AAPA post is drawn uniformly and the slot after it
/// is flagged for the survey (drawn in both arms). Treatment stable-sorts
/// movable posts by penalty key; posts whose key exceeds the batch length
/// leave the load and go to the demotion cache.
pub fn rerank_reduced<R: Rng + ?Sized>(
    scored: &ScoredBatch,
    arm: Arm,
    rng: &mut R,
    survey_sampled: bool,
) -> Result<RerankedFeed, RerankError> {
    let batch = &scored.batch;
    let aapa = scored.aapa_positions();
    if aapa.is_empty() {
        return Ok(RerankedFeed::identity(batch));
    }
    let anchor = aapa[rng.random_range(0..aapa.len())];
    let slot = anchor + 1;

    let mut feed = match arm {
        Arm::Control => RerankedFeed::identity(batch),
        Arm::Treatment => downrank(scored),
    };
    feed.survey_slot = survey_sampled.then_some(slot);
    Ok(feed)
}

fn downrank(scored: &ScoredBatch) -> RerankedFeed {
    let batch = &scored.batch;
    let len = batch.len() as u64;

    let mut movable: Vec<(u64, usize, &Post)> = batch
        .positioned()
        .filter(|(_, p)| !p.is_ad)
        .map(|(pos, p)| {
            let count = scored.score(p).map_or(0, |s| s.count);
            (penalty_key(pos, count), pos, p)
        })
        .collect();
    movable.sort_by(|a, b| (a.0, a.1, &a.2.post_id).cmp(&(b.0, b.1, &b.2.post_id)));

    let (stay, leave): (Vec<_>, Vec<_>) = movable.into_iter().partition(|(k, _, _)| *k <= len);
    let mut stay = stay.into_iter();

    let mut posts = Vec::with_capacity(batch.len());
    for (_, p) in batch.positioned() {
        if p.is_ad {
            posts.push(RankedPost { post: p.clone(), origin: Origin::Original });
        } else if let Some((_, _, s)) = stay.next() {
            posts.push(RankedPost { post: s.clone(), origin: Origin::Original });
        }
    }
    // Trailing ads whose free slots were vacated stay in order; no gaps.
    let demoted = leave
        .into_iter()
        .map(|(k, _, p)| Demoted { post: p.clone(), penalty_key: k })
        .collect();
    RerankedFeed { posts, survey_slot: None, demoted }
}

/// Increased Exposure. A uniform position in `1..=len` is drawn in both
/// arms; Treatment inserts the candidate there, Control does not. The
/// survey, when sampled, takes the next position.
pub fn rerank_increased<R: Rng + ?Sized>(
    batch: &FeedBatch,
    arm: Arm,
    candidate: Option<&Post>,
    rng: &mut R,
    survey_sampled: bool,
) -> RerankedFeed {
    let mut feed = RerankedFeed::identity(batch);
    if batch.is_empty() {
        return feed;
    }
    let position = rng.random_range(1..=batch.len());
    if let (Arm::Treatment, Some(c)) = (arm, candidate) {
        if batch.posts.iter().all(|p| p.post_id != c.post_id) {
            feed.posts.insert(position - 1, RankedPost { post: c.clone(), origin: Origin::Upranked });
        }
    }
    feed.survey_slot = survey_sampled.then_some(position + 1);
    feed
}

/// Per-session store of demoted posts, keyed by absolute session position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemotionCache {
    pub session_id: String,
    /// Posts served so far in this session.
    pub cursor: u64,
    pending: Vec<Demoted>,
    #[serde(default)]
    reemitted: HashSet<String>,
}

/// A batch with cached posts spliced in.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedBatch {
    pub batch: FeedBatch,
    pub reemitted: Vec<String>,
}

impl DemotionCache {
    pub fn new(session_id: impl Into<String>) -> Self {
        DemotionCache { session_id: session_id.into(), ..Default::default() }
    }

    pub fn pending(&self) -> &[Demoted] {
        &self.pending
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Start a new session: pending posts are dropped.
    pub fn reset(&mut self, session_id: impl Into<String>) {
        *self = DemotionCache::new(session_id);
    }

    /// Add this load's demoted posts. Keys are batch-relative and get
    /// offset by the current cursor.
    pub fn absorb(&mut self, demoted: &[Demoted]) {
        for d in demoted {
            if self.reemitted.contains(&d.post.post_id)
                || self.pending.iter().any(|p| p.post.post_id == d.post.post_id)
            {
                continue;
            }
            self.pending.push(Demoted { post: d.post.clone(), penalty_key: self.cursor + d.penalty_key });
        }
        self.pending.sort_by(|a, b| (a.penalty_key, &a.post.post_id).cmp(&(b.penalty_key, &b.post.post_id)));
    }

    /// Splice due posts into a served list. A post is due when its key falls
    /// within `cursor+1 ..= cursor+len`, with `len` growing as posts are
    /// spliced in; it lands at relative position `key - cursor`. Returns the
    /// ids re-emitted.
    pub fn reemit_into(&mut self, posts: &mut Vec<RankedPost>) -> Vec<String> {
        let mut ids = Vec::new();
        // Equal keys take consecutive slots in id order.
        let mut next_free = 0;
        while self.pending.first().is_some_and(|d| d.penalty_key <= self.cursor + posts.len() as u64) {
            let d = self.pending.remove(0);
            let rel = (d.penalty_key.saturating_sub(self.cursor)).max(1) as usize;
            let at = (rel - 1).max(next_free).min(posts.len());
            next_free = at + 1;
            ids.push(d.post.post_id.clone());
            self.reemitted.insert(d.post.post_id.clone());
            posts.insert(at, RankedPost { post: d.post, origin: Origin::Reemitted });
        }
        ids
    }

    /// Record that `served` posts were delivered.
    pub fn advance(&mut self, served: usize) {
        self.cursor += served as u64;
    }
}

/// Re-insert cached posts into the next batch of a continuous session.
/// Advances the cursor past the returned batch.
pub fn merge_demoted(next_batch: &FeedBatch, cache: &mut DemotionCache) -> MergedBatch {
    let mut posts: Vec<RankedPost> = next_batch
        .posts
        .iter()
        .map(|p| RankedPost { post: p.clone(), origin: Origin::Original })
        .collect();
    let reemitted = cache.reemit_into(&mut posts);
    cache.advance(posts.len());
    MergedBatch {
        batch: FeedBatch { posts: posts.into_iter().map(|r| r.post).collect(), ..next_batch.clone() },
        reemitted,
    }
}

/// One post recommended to study participants of one party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub post: Post,
    pub score: AapaScore,
    pub recipient_party: Party,
    /// Recipient id to the latest time the post was recommended to them.
    pub recipients: BTreeMap<String, Millis>,
}

impl InventoryEntry {
    /// Latest recommendation to someone other than `participant` inside
    /// `[now - window, now]`.
    fn recent_to_others(&self, participant: &str, now: Millis) -> Option<Millis> {
        self.recipients
            .iter()
            .filter(|(id, at)| id.as_str() != participant && **at <= now && now - **at <= UPRANK_WINDOW_MS)
            .map(|(_, at)| *at)
            .max()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UprankInventory {
    entries: BTreeMap<(String, Party), InventoryEntry>,
}

impl UprankInventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &InventoryEntry> {
        self.entries.values()
    }

    /// Record that `post` was recommended to `participant` at `at`.
    pub fn record(&mut self, post: &Post, score: AapaScore, participant: &str, party: Party, at: Millis) {
        if post.is_ad {
            return;
        }
        let entry = self
            .entries
            .entry((post.post_id.clone(), party))
            .or_insert_with(|| InventoryEntry {
                post: post.clone(),
                score,
                recipient_party: party,
                recipients: BTreeMap::new(),
            });
        let slot = entry.recipients.entry(participant.to_string()).or_insert(at);
        *slot = (*slot).max(at);
    }

    /// Merge another inventory (e.g. one day's additions).
    pub fn extend(&mut self, other: &UprankInventory) {
        for (key, e) in &other.entries {
            let mine = self.entries.entry(key.clone()).or_insert_with(|| InventoryEntry {
                recipients: BTreeMap::new(),
                ..e.clone()
            });
            for (who, at) in &e.recipients {
                let slot = mine.recipients.entry(who.clone()).or_insert(*at);
                *slot = (*slot).max(*at);
            }
        }
    }

    /// Forget recommendations made before `cutoff`.
    pub fn prune_before(&mut self, cutoff: Millis) {
        for e in self.entries.values_mut() {
            e.recipients.retain(|_, at| *at >= cutoff);
        }
        self.entries.retain(|_, e| !e.recipients.is_empty());
    }

    /// Entries eligible for `participant`, ordered by score, then recency,
    /// then post id, truncated to the top pool.
    pub fn eligible_pool(
        &self,
        participant: &str,
        party: Party,
        seen: &HashSet<String>,
        now: Millis,
    ) -> Vec<&InventoryEntry> {
        let mut pool: Vec<(&InventoryEntry, Millis)> = self
            .entries
            .values()
            .filter(|e| e.recipient_party == party && is_aapa(&e.score))
            .filter(|e| !seen.contains(&e.post.post_id))
            .filter_map(|e| e.recent_to_others(participant, now).map(|at| (e, at)))
            .collect();
        pool.sort_by(|(a, ra), (b, rb)| {
            b.score
                .count
                .cmp(&a.score.count)
                .then(rb.cmp(ra))
                .then(a.post.post_id.cmp(&b.post.post_id))
        });
        pool.truncate(UPRANK_POOL);
        pool.into_iter().map(|(e, _)| e).collect()
    }
}

/// Draw one post uniformly from the top-100 eligible AAPA entries.
pub fn select_uprank_candidate<R: Rng + ?Sized>(
    inventory: &UprankInventory,
    participant: &str,
    party: Party,
    seen: &HashSet<String>,
    now: Millis,
    rng: &mut R,
) -> Option<InventoryEntry> {
    let pool = inventory.eligible_pool(participant, party, seen, now);
    if pool.is_empty() {
        tracing::debug!(participant, "uprank inventory empty; intervention skipped");
        return None;
    }
    Some(pool[rng.random_range(0..pool.len())].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Post;
    use crate::seed;

    fn scored(len: usize, aapa: &[(usize, u8)]) -> ScoredBatch {
        let posts: Vec<Post> = (1..=len).map(|i| Post::new(format!("p{i}"), "t")).collect();
        let mut scores = HashMap::new();
        for (i, p) in posts.iter().enumerate() {
            let count = aapa.iter().find(|(pos, _)| *pos == i + 1).map_or(0, |(_, c)| *c);
            let bits = (1u16 << count) as u8;
            let s = if count == 0 {
                AapaScore::non_political()
            } else {
                AapaScore::from_bits(bits.wrapping_sub(1), true)
            };
            scores.insert(p.post_id.clone(), s);
        }
        let batch = FeedBatch { participant_id: "u".into(), load_seq: 1, posts, fetched_at: 0 };
        ScoredBatch::new(batch, scores).unwrap()
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty_key(3, 4), 123);
        assert_eq!(penalty_key(7, 6), 427);
        assert_eq!(penalty_key(1, 8), 81);
        assert!(penalty_key(5, 5) > penalty_key(5, 4));
        assert_eq!(penalty_key(9, 3), 9);
    }

    #[test]
    fn no_aapa_means_no_intervention() {
        let s = scored(30, &[]);
        let mut rng = seed::load_rng(1, "u", 1);
        let f = rerank_reduced(&s, Arm::Treatment, &mut rng, true).unwrap();
        assert_eq!(f, RerankedFeed::identity(&s.batch));
        assert_eq!(f.survey_slot, None);
    }

    #[test]
    fn control_keeps_order_and_flags_slot() {
        let s = scored(35, &[(3, 4), (7, 6), (20, 5)]);
        let mut rng = seed::load_rng(1, "u", 1);
        let f = rerank_reduced(&s, Arm::Control, &mut rng, true).unwrap();
        assert_eq!(f.post_ids(), s.batch.posts.iter().map(|p| p.post_id.as_str()).collect::<Vec<_>>());
        assert!([4, 8, 21].contains(&f.survey_slot.unwrap()));
    }

    #[test]
    fn treatment_demotes_both_posts() {
        let s = scored(35, &[(3, 4), (7, 6)]);
        let mut rng = seed::load_rng(1, "u", 1);
        let f = rerank_reduced(&s, Arm::Treatment, &mut rng, false).unwrap();
        assert_eq!(f.posts.len(), 33);
        let keys: Vec<(String, u64)> =
            f.demoted.iter().map(|d| (d.post.post_id.clone(), d.penalty_key)).collect();
        assert_eq!(keys, vec![("p3".into(), 123), ("p7".into(), 427)]);
        let expected: Vec<String> =
            (1..=35).filter(|i| *i != 3 && *i != 7).map(|i| format!("p{i}")).collect();
        assert_eq!(f.post_ids(), expected);
    }

    #[test]
    fn unscored_batch_rejected() {
        let batch = FeedBatch {
            participant_id: "u".into(),
            load_seq: 1,
            posts: vec![Post::new("a", "x"), Post::ad("ad", "y")],
            fetched_at: 0,
        };
        assert_eq!(
            ScoredBatch::new(batch, HashMap::new()),
            Err(RerankError::UnscoredBatch("a".into()))
        );
    }

    #[test]
    fn ads_stay_pinned() {
        let mut s = scored(6, &[(1, 4)]);
        s.batch.posts[3] = Post::ad("ad", "buy");
        s.scores.remove("p4");
        let mut rng = seed::load_rng(1, "u", 1);
        let f = rerank_reduced(&s, Arm::Treatment, &mut rng, false).unwrap();
        assert_eq!(f.post_ids(), vec!["p2", "p3", "p5", "ad", "p6"]);
    }

    #[test]
    fn increased_insertion_and_parity() {
        let batch = scored(35, &[]).batch;
        let cand = Post::new("up", "x");
        let mut rt = seed::load_rng(9, "u", 4);
        let mut rc = seed::load_rng(9, "u", 4);
        let t = rerank_increased(&batch, Arm::Treatment, Some(&cand), &mut rt, true);
        let c = rerank_increased(&batch, Arm::Control, Some(&cand), &mut rc, true);
        assert_eq!(t.posts.len(), 36);
        assert_eq!(c.posts.len(), 35);
        let at = t.posts.iter().position(|p| p.origin == Origin::Upranked).unwrap() + 1;
        assert_eq!(t.survey_slot, Some(at + 1));
        assert_eq!(c.survey_slot, t.survey_slot);
        assert_eq!(c, RerankedFeed { survey_slot: c.survey_slot, ..RerankedFeed::identity(&batch) });

        let mut rn = seed::load_rng(9, "u", 4);
        let none = rerank_increased(&batch, Arm::Treatment, None, &mut rn, true);
        assert_eq!(none.posts.len(), 35);
        assert_eq!(none.survey_slot, t.survey_slot);
    }

    #[test]
    fn reemergence_at_key_position() {
        let mut cache = DemotionCache::new("s");
        cache.pending.push(Demoted { post: Post::new("p", "x"), penalty_key: 40 });
        cache.cursor = 35;
        let next = scored(35, &[]).batch;
        let merged = merge_demoted(&next, &mut cache);
        assert_eq!(merged.reemitted, vec!["p"]);
        assert_eq!(merged.batch.posts[4].post_id, "p");
        assert!(cache.is_empty());
        assert_eq!(cache.cursor, 71);
    }

    #[test]
    fn far_keys_stay_cached() {
        let mut cache = DemotionCache::new("s");
        cache.pending.push(Demoted { post: Post::new("p", "x"), penalty_key: 427 });
        cache.cursor = 65;
        let next = scored(35, &[]).batch;
        let merged = merge_demoted(&next, &mut cache);
        assert!(merged.reemitted.is_empty());
        assert_eq!(cache.pending().len(), 1);

        let mut empty = DemotionCache::new("s");
        assert_eq!(merge_demoted(&next, &mut empty).batch, next);
    }

    #[test]
    fn reemitted_posts_are_not_cached_again() {
        let mut cache = DemotionCache::new("s");
        cache.absorb(&[Demoted { post: Post::new("p", "x"), penalty_key: 3 }]);
        let mut posts: Vec<RankedPost> = (0..5)
            .map(|i| RankedPost { post: Post::new(format!("o{i}"), "x"), origin: Origin::Original })
            .collect();
        assert_eq!(cache.reemit_into(&mut posts), vec!["p"]);
        assert_eq!(posts[2].post.post_id, "p");
        cache.absorb(&[Demoted { post: Post::new("p", "x"), penalty_key: 5 }]);
        assert!(cache.is_empty());
    }

    fn entry_post(i: usize) -> Post {
        Post::new(format!("e{i:03}"), "x")
    }

    #[test]
    fn candidate_pool_is_top_hundred() {
        let mut inv = UprankInventory::new();
        for i in 0..250 {
            let count = 4 + (i % 5) as u8;
            let s = AapaScore::from_bits(((1u16 << count) - 1) as u8, true);
            inv.record(&entry_post(i), s, "other", Party::Democrat, 1_000 + i as i64);
        }
        let pool = inv.eligible_pool("me", Party::Democrat, &HashSet::new(), 10_000);
        assert_eq!(pool.len(), 100);
        let min_in_pool = pool.iter().map(|e| e.score.count).min().unwrap();
        assert!(pool.windows(2).all(|w| w[0].score.count >= w[1].score.count));
        // 50 entries each at counts 8 and 7 fill the pool.
        assert_eq!(min_in_pool, 7);
        let mut rng = seed::load_rng(3, "me", 1);
        let c = select_uprank_candidate(&inv, "me", Party::Democrat, &HashSet::new(), 10_000, &mut rng).unwrap();
        assert!(c.score.count >= 7);
    }

    #[test]
    fn candidate_filters() {
        let s = AapaScore::from_bits(0x0f, true);
        let mut inv = UprankInventory::new();
        inv.record(&entry_post(1), s, "other", Party::Democrat, 0);
        let mut seen = HashSet::new();
        let mut rng = seed::load_rng(3, "me", 1);
        assert!(select_uprank_candidate(&inv, "me", Party::Democrat, &seen, 1, &mut rng).is_some());
        seen.insert("e001".to_string());
        assert!(select_uprank_candidate(&inv, "me", Party::Democrat, &seen, 1, &mut rng).is_none());
        // Wrong party, stale, only recommended to self, not AAPA.
        assert!(select_uprank_candidate(&inv, "me", Party::Republican, &HashSet::new(), 1, &mut rng).is_none());
        assert!(select_uprank_candidate(&inv, "me", Party::Democrat, &HashSet::new(), DAY_MS + 1, &mut rng).is_none());
        let mut own = UprankInventory::new();
        own.record(&entry_post(2), s, "me", Party::Democrat, 0);
        assert!(select_uprank_candidate(&own, "me", Party::Democrat, &HashSet::new(), 1, &mut rng).is_none());
        let mut mild = UprankInventory::new();
        mild.record(&entry_post(3), AapaScore::from_bits(0x07, true), "o", Party::Democrat, 0);
        assert!(select_uprank_candidate(&mild, "me", Party::Democrat, &HashSet::new(), 1, &mut rng).is_none());
        assert!(select_uprank_candidate(&UprankInventory::new(), "me", Party::Democrat, &HashSet::new(), 1, &mut rng).is_none());
    }
}
