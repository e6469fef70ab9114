//! Synthetic posts and feed batches. Texts are assembled from the lexicon
//! oracle's own sentences and phrases, so scoring recovers the latent
//! factors exactly unless `text_noise` drops phrases.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{FeedConfig, SimConfig};
use crate::model::{assemble_scoring_text, AapaScore, FeedBatch, Millis, Post};
use crate::rerank::ScoredBatch;
use crate::scoring::lexicon::{LexiconOracle, LexiconTables};

const AD_TEXTS: [&str; 4] = [
    "Sponsored: the comfiest running shoes you will ever own.",
    "Sponsored: learn a new language in ten minutes a day.",
    "Sponsored: fresh meal kits delivered to your door.",
    "Sponsored: upgrade your home office chair today.",
];

fn draw_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Latent factor vector of a political post.
fn draw_factors<R: Rng + ?Sized>(config: &FeedConfig, rng: &mut R) -> [bool; 8] {
    let k = draw_weighted(&config.factor_count_weights, rng);
    let mut weights = config.factor_weights;
    let mut flags = [false; 8];
    for _ in 0..k {
        let f = draw_weighted(&weights, rng);
        flags[f] = true;
        weights[f] = 0.0;
    }
    flags
}

/// One non-ad post and its latent score.
pub fn generate_post<R: Rng + ?Sized>(
    post_id: String,
    author_id: String,
    created_at: Millis,
    config: &FeedConfig,
    tables: &LexiconTables,
    rng: &mut R,
) -> (Post, AapaScore) {
    let political = rng.random_bool(config.political_fraction);
    if !political {
        let s = tables.political.neutral_sentences.choose(rng).expect("neutral sentences");
        let mut post = Post::new(post_id.clone(), format!("{s} ({post_id})"));
        post.author_id = author_id;
        post.created_at = created_at;
        return (post, AapaScore::non_political());
    }
    let flags = draw_factors(config, rng);
    let mut text = tables.political.topic_sentences.choose(rng).expect("topic sentences").clone();
    let mut expressed = [false; 8];
    for f in crate::model::Factor::ALL {
        if flags[f.index()] && !rng.random_bool(config.text_noise) {
            let phrase = tables.phrases(f).choose(rng).expect("factor phrases");
            text.push_str(&format!(" {}{}.", phrase[..1].to_uppercase(), &phrase[1..]));
            expressed[f.index()] = true;
        }
    }
    text.push_str(&format!(" ({post_id})"));
    let mut post = Post::new(post_id, text);
    post.author_id = author_id;
    post.created_at = created_at;
    let _ = expressed;
    (post, AapaScore::political(flags))
}

fn ad<R: Rng + ?Sized>(post_id: String, rng: &mut R) -> Post {
    Post::ad(post_id, *AD_TEXTS.choose(rng).expect("ad texts"))
}

/// 1-based ad slots spread evenly through the batch.
pub fn ad_positions(posts: usize, ads: usize) -> Vec<usize> {
    if ads == 0 {
        return Vec::new();
    }
    let step = posts / ads;
    (1..=ads).map(|i| i * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBatch {
    pub batch: FeedBatch,
    /// Latent scores of the non-ad posts.
    pub truth: HashMap<String, AapaScore>,
}

/// A batch of fresh posts with ads at fixed slots.
pub fn generate_feed_batch<R: Rng + ?Sized>(
    participant_id: &str,
    load_seq: u64,
    now: Millis,
    config: &SimConfig,
    rng: &mut R,
) -> GeneratedBatch {
    let f = &config.feed;
    let tables = LexiconTables::bundled();
    let ads = ad_positions(f.posts_per_batch, f.ads_per_batch);
    let mut posts = Vec::with_capacity(f.posts_per_batch);
    let mut truth = HashMap::new();
    for pos in 1..=f.posts_per_batch {
        let id = format!("{participant_id}-l{load_seq}-{pos}");
        if ads.contains(&pos) {
            posts.push(ad(id, rng));
        } else {
            let author = format!("a{}", rng.random_range(0..10_000));
            let (p, s) = generate_post(id, author, now - rng.random_range(0..crate::model::DAY_MS), f, tables, rng);
            truth.insert(p.post_id.clone(), s);
            posts.push(p);
        }
    }
    GeneratedBatch { batch: FeedBatch { participant_id: participant_id.to_string(), load_seq, posts, fetched_at: now }, truth }
}

/// The day's candidate posts for one party, scored once by the oracle.
#[derive(Debug, Clone)]
pub struct PostPool {
    pub posts: Vec<Post>,
    pub scores: Vec<AapaScore>,
}

impl PostPool {
    pub fn build<R: Rng + ?Sized>(label: &str, day_start: Millis, config: &FeedConfig, oracle: &LexiconOracle, rng: &mut R) -> Self {
        let tables = LexiconTables::bundled();
        let mut posts = Vec::with_capacity(config.pool_size);
        let mut scores = Vec::with_capacity(config.pool_size);
        for i in 0..config.pool_size {
            let id = format!("{label}-{i:05}");
            let author = format!("a{}", rng.random_range(0..5_000));
            let (p, _) = generate_post(id, author, day_start - rng.random_range(0..crate::model::DAY_MS), config, tables, rng);
            scores.push(oracle.score(&assemble_scoring_text(&p)));
            posts.push(p);
        }
        PostPool { posts, scores }
    }

    /// Draw a batch of posts this participant has not been served yet.
    /// Falls back to repeats once the pool is exhausted.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        participant_id: &str,
        load_seq: u64,
        now: Millis,
        seen: &HashSet<String>,
        config: &FeedConfig,
        rng: &mut R,
    ) -> ScoredBatch {
        let ads = ad_positions(config.posts_per_batch, config.ads_per_batch);
        let mut taken = HashSet::new();
        let mut posts = Vec::with_capacity(config.posts_per_batch);
        let mut scores = HashMap::new();
        for pos in 1..=config.posts_per_batch {
            if ads.contains(&pos) {
                posts.push(ad(format!("ad-{participant_id}-{load_seq}-{pos}"), rng));
                continue;
            }
            let mut idx = rng.random_range(0..self.posts.len());
            for _ in 0..20 {
                let id = &self.posts[idx].post_id;
                if !seen.contains(id) && !taken.contains(&idx) {
                    break;
                }
                idx = rng.random_range(0..self.posts.len());
            }
            if taken.contains(&idx) {
                idx = (0..self.posts.len()).find(|i| !taken.contains(i)).unwrap_or(idx);
            }
            taken.insert(idx);
            scores.insert(self.posts[idx].post_id.clone(), self.scores[idx]);
            posts.push(self.posts[idx].clone());
        }
        let batch = FeedBatch { participant_id: participant_id.to_string(), load_seq, posts, fetched_at: now };
        ScoredBatch::new(batch, scores).expect("pool posts are scored")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::is_aapa;
    use crate::seed;

    #[test]
    fn ads_spread() {
        assert_eq!(ad_positions(35, 5), vec![7, 14, 21, 28, 35]);
        assert!(ad_positions(35, 0).is_empty());
    }

    #[test]
    fn oracle_recovers_latent_factors() {
        let oracle = LexiconOracle::bundled();
        let c = SimConfig::default();
        let mut rng = seed::rng(3, &["feed"]);
        for load in 0..200 {
            let g = generate_feed_batch("u", load, 0, &c, &mut rng);
            assert_eq!(g.batch.posts.len(), 35);
            assert_eq!(g.batch.posts.iter().filter(|p| p.is_ad).count(), 5);
            for p in g.batch.posts.iter().filter(|p| !p.is_ad) {
                assert_eq!(oracle.score(&assemble_scoring_text(p)), g.truth[&p.post_id], "{}", p.text);
            }
        }
    }

    #[test]
    fn composition_matches_targets() {
        let c = SimConfig::default();
        let mut rng = seed::rng(4, &["feed"]);
        let (mut aapa, mut total) = (0usize, 0usize);
        for load in 0..1000 {
            let g = generate_feed_batch("u", load, 0, &c, &mut rng);
            total += g.truth.len();
            aapa += g.truth.values().filter(|s| is_aapa(s)).count();
        }
        let share = aapa as f64 / total as f64;
        assert!((share - 0.106).abs() < 0.006, "{share}");
    }

    #[test]
    fn no_politics_no_aapa() {
        let mut c = SimConfig::default();
        c.feed.political_fraction = 0.0;
        let mut rng = seed::rng(5, &["feed"]);
        for load in 0..100 {
            assert!(generate_feed_batch("u", load, 0, &c, &mut rng).truth.values().all(|s| !s.is_political));
        }
    }

    #[test]
    fn pool_batches_avoid_repeats() {
        let oracle = LexiconOracle::bundled();
        let c = SimConfig::default();
        let mut rng = seed::rng(6, &["pool"]);
        let pool = PostPool::build("d1-dem", 0, &c.feed, &oracle, &mut rng);
        let mut seen = HashSet::new();
        for load in 0..10 {
            let b = pool.sample_batch("u", load, 0, &seen, &c.feed, &mut rng);
            let ids: HashSet<_> = b.batch.posts.iter().map(|p| p.post_id.clone()).collect();
            assert_eq!(ids.len(), 35);
            assert!(ids.is_disjoint(&seen));
            seen.extend(ids);
        }
    }
}
