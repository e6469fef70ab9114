//! Sessions, scrolling, dwell times and engagement.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson};

use super::BehaviorConfig;
use crate::model::{AapaScore, EngagementEvent, EventKind, Millis, HOUR_MS, MINUTE_MS, MIN_VIEW_MS};
use crate::rerank::RerankedFeed;

/// Local start hours of the candidate session slots, two hours apart.
const SLOT_HOURS: [i64; 8] = [7, 9, 11, 13, 15, 17, 19, 21];
const MAX_DEPTH: usize = 1_000;
const SCROLL_GAP_MS: Millis = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionPlan {
    pub start: Millis,
    /// Posts the participant will scroll past, across loads.
    pub depth: usize,
    /// Activity stops here so sessions stay separable by the one-hour gap.
    pub deadline: Millis,
}

/// Sessions for one local day starting at `midnight`.
pub fn plan_day<R: Rng + ?Sized>(midnight: Millis, config: &BehaviorConfig, rng: &mut R) -> Vec<SessionPlan> {
    if config.sessions_per_day <= 0.0 {
        return Vec::new();
    }
    let drawn = Poisson::new(config.sessions_per_day).expect("positive rate").sample(rng) as usize;
    let k = drawn.min(config.max_sessions_per_day as usize).min(SLOT_HOURS.len());
    if k == 0 {
        return Vec::new();
    }
    let mut slots: Vec<usize> = sample(rng, SLOT_HOURS.len(), k).into_vec();
    slots.sort_unstable();
    let mean_depth = config.mean_views_per_day / (config.sessions_per_day * config.qualifying_view_prob.max(1e-9));
    let geo = Geometric::new((1.0 / mean_depth.max(1.0)).min(1.0)).expect("probability in (0, 1]");
    let starts: Vec<Millis> = slots
        .iter()
        .map(|&s| midnight + SLOT_HOURS[s] * HOUR_MS + rng.random_range(0..30 * MINUTE_MS))
        .collect();
    let day_end = midnight + 24 * HOUR_MS;
    starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let depth = (1 + geo.sample(rng) as usize).min(MAX_DEPTH);
            let deadline = starts.get(i + 1).map_or(day_end, |next| next - HOUR_MS).min(day_end);
            SessionPlan { start, depth, deadline }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BehaviorOutcome {
    pub events: Vec<EngagementEvent>,
    /// Posts scrolled past, qualifying or not.
    pub viewed: usize,
    pub end: Millis,
    /// When the participant scrolled onto the survey slot.
    pub prompt_reached_at: Option<Millis>,
}

fn event(participant_id: &str, post_id: Option<&str>, kind: EventKind, visible_ms: Option<u32>, at: Millis) -> EngagementEvent {
    EngagementEvent { participant_id: participant_id.to_string(), post_id: post_id.map(str::to_string), kind, visible_ms, at }
}

/// Scroll through up to `max_views` posts of a served feed, stopping at
/// `deadline`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_behavior<R: Rng + ?Sized>(
    participant_id: &str,
    feed: &RerankedFeed,
    scores: &HashMap<String, AapaScore>,
    start: Millis,
    max_views: usize,
    deadline: Millis,
    config: &BehaviorConfig,
    rng: &mut R,
) -> BehaviorOutcome {
    let mut out = BehaviorOutcome { end: start, ..Default::default() };
    if max_views == 0 || start >= deadline {
        return out;
    }
    out.events.push(event(participant_id, None, EventKind::FeedLoad, None, start));
    let slot = feed.rendered_survey_slot();
    let dwell = Exp::new(1.0 / config.mean_dwell_ms).expect("positive dwell");
    let mut now = start;
    for (i, ranked) in feed.posts.iter().enumerate() {
        if out.viewed >= max_views || now >= deadline {
            break;
        }
        if slot == Some(i + 1) {
            out.prompt_reached_at = Some(now);
        }
        let post = &ranked.post;
        let qualifying = rng.random_bool(config.qualifying_view_prob);
        let ms = if qualifying {
            MIN_VIEW_MS + (dwell.sample(rng) as u32).min(60_000)
        } else {
            rng.random_range(100..MIN_VIEW_MS)
        };
        out.events.push(event(participant_id, Some(&post.post_id), EventKind::View, Some(ms), now));
        if qualifying && !post.is_ad {
            let political = scores.get(&post.post_id).is_some_and(|s| s.is_political);
            let (fav_mult, repost_mult) = if political {
                (config.political_favorite_multiplier, config.political_repost_multiplier)
            } else {
                (1.0, 1.0)
            };
            let at = now + ms as Millis / 2;
            if rng.random_bool((config.favorite_rate * fav_mult).min(1.0)) {
                out.events.push(event(participant_id, Some(&post.post_id), EventKind::Favorite, None, at));
            }
            if rng.random_bool((config.repost_rate * repost_mult).min(1.0)) {
                out.events.push(event(participant_id, Some(&post.post_id), EventKind::Repost, None, at));
            }
            if rng.random_bool(config.reply_rate) {
                out.events.push(event(participant_id, Some(&post.post_id), EventKind::Reply, None, at));
            }
        }
        out.viewed += 1;
        now += ms as Millis + SCROLL_GAP_MS;
    }
    if slot == Some(feed.posts.len() + 1) && out.viewed == feed.posts.len() && out.viewed < max_views && now < deadline {
        out.prompt_reached_at = Some(now);
    }
    out.end = now;
    out
}
