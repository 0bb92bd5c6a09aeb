use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PlatformError;
use crate::classifier::{KeywordMatcher, VideoMeta};
use crate::topics::TopicProfile;
use crate::wire::PublicVideo;

pub const MIN_DURATION_MS: u64 = 1_000;
pub const MAX_DURATION_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Video {
    pub video_id: String,
    pub meta: VideoMeta,
    pub duration_ms: u64,
    /// Ground truth; never served.
    pub true_topics: BTreeSet<String>,
}

impl Video {
    pub fn public(&self) -> PublicVideo {
        PublicVideo { video_id: self.video_id.clone(), duration_ms: self.duration_ms, meta: self.meta.clone() }
    }
}

/// An immutable video collection indexed by id and by topic.
#[derive(Debug)]
pub struct Corpus {
    topics: Vec<TopicProfile>,
    videos: Vec<Video>,
    by_id: HashMap<String, usize>,
    by_topic: BTreeMap<String, Vec<usize>>,
    off_topic: Vec<usize>,
}

const FILLER: &[&str] = &[
    "travel",
    "dance",
    "music",
    "pets",
    "comedy",
    "fashion",
    "diy",
    "gaming",
    "art",
    "nature",
    "city",
    "cars",
    "prank",
    "makeup",
    "skincare",
    "movie",
    "review",
    "history",
    "science",
    "tech",
    "garden",
    "outfit",
    "vlog",
    "tour",
    "beach",
    "sunset",
    "dog",
    "cat",
    "song",
    "cover",
    "guitar",
    "story",
    "life",
    "morning",
    "routine",
    "weekend",
    "friends",
    "family",
    "school",
    "college",
    "work",
    "office",
    "unboxing",
    "haul",
    "hack",
    "trend",
    "challenge",
    "duet",
    "reaction",
    "funny",
    "cute",
    "aesthetic",
    "room",
    "decor",
    "books",
    "anime",
    "cosplay",
    "painting",
    "drawing",
    "photography",
    "camera",
    "rain",
    "snow",
    "summer",
    "winter",
    "road",
    "trip",
    "hiking",
    "ocean",
    "mountain",
    "lake",
    "coffee",
    "study",
    "piano",
    "violin",
    "drums",
    "concert",
    "festival",
    "wedding",
    "baby",
    "kids",
    "grandma",
    "magic",
    "trick",
    "puzzle",
    "chess",
    "space",
    "stars",
    "planet",
    "robot",
    "coding",
    "phone",
    "laptop",
    "sneakers",
    "jewelry",
    "nails",
    "hair",
    "tattoo",
    "lego",
    "origami",
    "knitting",
    "pottery",
];

const NAME_PARTS: &[&str] = &[
    "sunny", "pixel", "luna", "river", "maple", "echo", "nova", "ziggy", "coral", "atlas", "blue", "wild", "tiny",
    "happy", "neon", "velvet", "ember", "misty", "lucky", "daily",
];

fn keyword_tokens(profiles: &[TopicProfile]) -> HashSet<String> {
    profiles
        .iter()
        .flat_map(|p| p.keywords.iter())
        .flat_map(|k| k.split(|c: char| !c.is_alphanumeric()).map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|t| !t.is_empty())
        .collect()
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str], n: usize) -> Vec<&'a str> {
    (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect()
}

/// Generates a seeded single-topic corpus. Each topic gets
/// `round(base_prevalence * total)` videos; their description and suggested
/// words carry a topic keyword and one hashtag spells it. Filler text never
/// contains any keyword token, so off-topic videos match no topic.
pub fn generate_corpus(profiles: &[TopicProfile], total: usize, seed: u64) -> Result<Corpus, PlatformError> {
    if total == 0 {
        return Err(PlatformError::Config("corpus total must be > 0".into()));
    }
    for p in profiles {
        p.validate().map_err(PlatformError::Config)?;
    }
    let sum: f64 = profiles.iter().map(|p| p.base_prevalence).sum();
    if sum > 1.0 + 1e-12 {
        return Err(PlatformError::Config(format!("topic prevalences sum to {sum} > 1")));
    }
    let mut ids = HashSet::new();
    for p in profiles {
        if !ids.insert(&p.topic_id) {
            return Err(PlatformError::Config(format!("duplicate topic {}", p.topic_id)));
        }
    }

    let reserved = keyword_tokens(profiles);
    let filler: Vec<&str> = FILLER.iter().copied().filter(|w| !reserved.contains(*w)).collect();
    let names: Vec<&str> = NAME_PARTS.iter().copied().filter(|w| !reserved.contains(*w)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Option<usize>> = Vec::with_capacity(total);
    for (i, p) in profiles.iter().enumerate() {
        let n = (p.base_prevalence * total as f64).round() as usize;
        labels.extend(std::iter::repeat_n(Some(i), n));
    }
    labels.truncate(total);
    labels.resize(total, None);
    labels.shuffle(&mut rng);

    let mut videos = Vec::with_capacity(total);
    for (i, label) in labels.into_iter().enumerate() {
        let (n_desc, n_tags, n_words) = (rng.gen_range(3..7), rng.gen_range(1..4), rng.gen_range(1..4));
        let mut description: Vec<String> = pick(&mut rng, &filler, n_desc).into_iter().map(String::from).collect();
        let mut hashtags: Vec<String> = pick(&mut rng, &filler, n_tags).into_iter().map(String::from).collect();
        let mut suggested: Vec<String> = pick(&mut rng, &filler, n_words).into_iter().map(String::from).collect();
        let mut true_topics = BTreeSet::new();
        if let Some(t) = label {
            let p = &profiles[t];
            let kw = &p.keywords[rng.gen_range(0..p.keywords.len())];
            let pos = rng.gen_range(0..=description.len());
            description.insert(pos, kw.clone());
            let tag_kw = &p.keywords[rng.gen_range(0..p.keywords.len())];
            hashtags.insert(0, tag_kw.split_whitespace().collect::<String>());
            suggested.push(kw.clone());
            true_topics.insert(p.topic_id.clone());
        }
        let nick = pick(&mut rng, &names, 2).join("_");
        let signature = pick(&mut rng, &filler, 3).join(" ");
        videos.push(Video {
            video_id: format!("v{:08}{:04x}", i, rng.gen::<u16>()),
            meta: VideoMeta {
                description: description.join(" "),
                hashtags,
                suggested_words: suggested,
                nickname: format!("{nick}{}", rng.gen_range(1..1000)),
                signature,
            },
            duration_ms: rng.gen_range(MIN_DURATION_MS..=MAX_DURATION_MS),
            true_topics,
        });
    }
    Corpus::new(profiles.to_vec(), videos)
}

impl Corpus {
    pub fn new(topics: Vec<TopicProfile>, videos: Vec<Video>) -> Result<Self, PlatformError> {
        let mut by_id = HashMap::with_capacity(videos.len());
        let mut by_topic: BTreeMap<String, Vec<usize>> =
            topics.iter().map(|t| (t.topic_id.clone(), Vec::new())).collect();
        let mut off_topic = Vec::new();
        for (i, v) in videos.iter().enumerate() {
            if v.duration_ms == 0 {
                return Err(PlatformError::Config(format!("video {} has zero duration", v.video_id)));
            }
            if by_id.insert(v.video_id.clone(), i).is_some() {
                return Err(PlatformError::Config(format!("duplicate video id {}", v.video_id)));
            }
            let mut on_any = false;
            for t in &v.true_topics {
                if let Some(pool) = by_topic.get_mut(t) {
                    pool.push(i);
                    on_any = true;
                }
            }
            if !on_any {
                off_topic.push(i);
            }
        }
        Ok(Self { topics, videos, by_id, by_topic, off_topic })
    }

    pub fn topics(&self) -> &[TopicProfile] {
        &self.topics
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&Video> {
        self.by_id.get(video_id).map(|&i| &self.videos[i])
    }

    pub fn topic_pool(&self, topic_id: &str) -> &[usize] {
        self.by_topic.get(topic_id).map_or(&[], Vec::as_slice)
    }

    pub fn off_topic_pool(&self) -> &[usize] {
        &self.off_topic
    }

    /// Indices of videos whose metadata matches any of `keywords`, most
    /// distinct matches first, ties in corpus order.
    pub fn search(&self, keywords: &[String], count: usize) -> Vec<usize> {
        let matcher = KeywordMatcher::new(keywords);
        let mut hits: Vec<(usize, usize)> = self
            .videos
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let n = matcher.match_count(&v.meta);
                (n > 0).then_some((n, i))
            })
            .collect();
        hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        hits.into_iter().take(count).map(|(_, i)| i).collect()
    }

    /// One JSON object per line: a topics header line, then the videos.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.topics)?;
        out.write_all(b"\n")?;
        for v in &self.videos {
            serde_json::to_writer(&mut out, v)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, PlatformError> {
        let mut lines = input.lines();
        let bad = |e: String| PlatformError::Config(format!("corpus file: {e}"));
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?.map_err(|e| bad(e.to_string()))?;
        let topics: Vec<TopicProfile> = serde_json::from_str(&header).map_err(|e| bad(e.to_string()))?;
        let mut videos = Vec::new();
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            videos.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
        }
        Self::new(topics, videos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Classifier, RuleBased};
    use crate::topics::default_topics;

    #[test]
    fn prevalence_counts() {
        let c = generate_corpus(&default_topics(), 10_000, 1).unwrap();
        assert_eq!(c.topic_pool("cooking").len(), 850);
        assert_eq!(c.topic_pool("fitness").len(), 150);
        assert_eq!(c.topic_pool("sports_betting").len(), 150);
        assert_eq!(c.off_topic_pool().len(), 8850);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(generate_corpus(&default_topics(), 0, 1), Err(PlatformError::Config(_))));
        let heavy = vec![TopicProfile::new("a", "a", 0.7, &["alpha"]), TopicProfile::new("b", "b", 0.4, &["beta"])];
        assert!(matches!(generate_corpus(&heavy, 100, 1), Err(PlatformError::Config(_))));
    }

    #[test]
    fn deterministic_bytes() {
        let dump = |seed| {
            let mut buf = Vec::new();
            generate_corpus(&default_topics(), 2_000, seed).unwrap().write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(dump(9), dump(9));
        assert_ne!(dump(9), dump(10));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = generate_corpus(&default_topics(), 500, 3).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = Corpus::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.videos(), c.videos());
        assert_eq!(back.topics(), c.topics());
    }

    #[test]
    fn rule_based_recovers_ground_truth() {
        let topics = default_topics();
        let c = generate_corpus(&topics, 20_000, 5).unwrap();
        for t in &topics {
            for v in c.videos() {
                let predicted = RuleBased.classify(&v.meta, t).unwrap();
                assert_eq!(predicted, v.true_topics.contains(&t.topic_id), "{} / {}", v.video_id, t.topic_id);
            }
        }
    }

    #[test]
    fn durations_in_range() {
        let c = generate_corpus(&default_topics(), 3_000, 2).unwrap();
        assert!(c.videos().iter().all(|v| (MIN_DURATION_MS..=MAX_DURATION_MS).contains(&v.duration_ms)));
    }

    #[test]
    fn search_ranks_by_match_count() {
        let topics = default_topics();
        let c = generate_corpus(&topics, 5_000, 4).unwrap();
        let kws = &crate::topics::find(&topics, "cooking").unwrap().keywords;
        let hits: Vec<&Video> = c.search(kws, 25).into_iter().map(|i| &c.videos()[i]).collect();
        assert_eq!(hits.len(), 25);
        assert!(hits.iter().all(|v| v.true_topics.contains("cooking")));
        let matcher = KeywordMatcher::new(kws);
        let counts: Vec<usize> = hits.iter().map(|v| matcher.match_count(&v.meta)).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.search(&["zzzz".to_string()], 10).is_empty());
    }
}
