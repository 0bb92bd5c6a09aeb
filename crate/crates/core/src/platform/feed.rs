//! Page sampling: which categories fill the slots of a page, and which
//! unseen videos fill each slot.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// One uniform offset per page, systematic over the category masses,
    /// then shuffled. Category counts per page differ from `k * p` by less
    /// than one.
    #[default]
    Stratified,
    /// Every slot drawn independently.
    Independent,
}

/// Normalizes per-topic probabilities; the off-topic category takes the
/// remaining mass (last entry of the result).
pub fn category_masses(topic_probs: &[f64]) -> Vec<f64> {
    let sum: f64 = topic_probs.iter().sum();
    let mut out: Vec<f64> =
        if sum > 1.0 { topic_probs.iter().map(|p| p / sum).collect() } else { topic_probs.to_vec() };
    out.push((1.0 - sum).max(0.0));
    out
}

fn category_of(masses: &[f64], point: f64) -> usize {
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if point < acc {
            return i;
        }
    }
    masses.len() - 1
}

/// Category index for each of `k` slots.
pub fn draw_categories<R: Rng>(masses: &[f64], k: usize, sampling: Sampling, rng: &mut R) -> Vec<usize> {
    let mut slots: Vec<usize> = match sampling {
        Sampling::Stratified => {
            let u: f64 = rng.gen();
            (0..k).map(|j| category_of(masses, (u + j as f64) / k as f64)).collect()
        }
        Sampling::Independent => (0..k).map(|_| category_of(masses, rng.gen())).collect(),
    };
    if sampling == Sampling::Stratified {
        slots.shuffle(rng);
    }
    slots
}

/// Picks an unseen, not-yet-picked video from `pool`. Random probing first,
/// then a scan so a nearly exhausted pool is still found.
fn pick_from<R: Rng>(
    corpus: &Corpus,
    pool: &[usize],
    seen: &BTreeSet<String>,
    taken: &HashSet<usize>,
    rng: &mut R,
) -> Option<usize> {
    if pool.is_empty() {
        return None;
    }
    let free = |i: usize| !taken.contains(&i) && !seen.contains(&corpus.videos()[i].video_id);
    for _ in 0..32 {
        let i = pool[rng.gen_range(0..pool.len())];
        if free(i) {
            return Some(i);
        }
    }
    let rest: Vec<usize> = pool.iter().copied().filter(|&i| free(i)).collect();
    rest.choose(rng).copied()
}

/// Fills a page of up to `k` videos. Slots whose topic pool is exhausted
/// fall back to off-topic; if the whole corpus is exhausted the page
/// shrinks. Returns corpus indices.
pub fn fill_page<R: Rng>(
    corpus: &Corpus,
    topic_probs: &[f64],
    k: usize,
    seen: &BTreeSet<String>,
    sampling: Sampling,
    rng: &mut R,
) -> Vec<usize> {
    let masses = category_masses(topic_probs);
    let off = masses.len() - 1;
    let slots = draw_categories(&masses, k, sampling, rng);
    let mut taken = HashSet::new();
    let mut page = Vec::with_capacity(k);
    for cat in slots {
        let mut choice = if cat < off {
            pick_from(corpus, corpus.topic_pool(&corpus.topics()[cat].topic_id), seen, &taken, rng)
        } else {
            None
        };
        if choice.is_none() {
            choice = pick_from(corpus, corpus.off_topic_pool(), seen, &taken, rng);
        }
        if choice.is_none() {
            // Off-topic exhausted too: take anything left.
            for t in corpus.topics() {
                choice = pick_from(corpus, corpus.topic_pool(&t.topic_id), seen, &taken, rng);
                if choice.is_some() {
                    break;
                }
            }
        }
        match choice {
            Some(i) => {
                taken.insert(i);
                page.push(i);
            }
            None => break,
        }
    }
    page
}
