//! Sock-puppet agents: behavioral roles, the signing client session, and
//! the seeding and scrolling loops that produce a [`BehaviorLog`].

mod client;

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Classifier;
use crate::topics::TopicProfile;
use crate::wire::{AppLogEvent, FeedbackItem, FeedbackKind, WatchReport};

pub use client::{Client, Origin, HEADER_CLIENT_TS, SIM_EPOCH_MS};

pub const MIN_SKIP_DWELL_MS: u64 = 200;
pub const MAX_SKIP_DWELL_MS: u64 = 2_000;
pub const DEFAULT_PHASE_LENGTH: usize = 200;
pub const DEFAULT_SEED_COUNT: usize = 25;
pub const DEFAULT_PAGE_SIZE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    WatchTopic,
    BaselineSkip,
    GivesImplicit,
    GivesExplicit,
    CeasesImplicit,
    CeasesExplicit,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::WatchTopic,
        Role::BaselineSkip,
        Role::GivesImplicit,
        Role::GivesExplicit,
        Role::CeasesImplicit,
        Role::CeasesExplicit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::WatchTopic => "watch_topic",
            Role::BaselineSkip => "baseline_skip",
            Role::GivesImplicit => "gives_implicit",
            Role::GivesExplicit => "gives_explicit",
            Role::CeasesImplicit => "ceases_implicit",
            Role::CeasesExplicit => "ceases_explicit",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| format!("unknown role {s:?}"))
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Watch,
    Skip,
    WatchThenNotInterested,
}

pub fn decide_action(role: Role, on_topic: bool) -> ActionKind {
    match (role, on_topic) {
        (Role::BaselineSkip | Role::GivesImplicit, _) => ActionKind::Skip,
        (Role::WatchTopic | Role::CeasesImplicit | Role::CeasesExplicit, true) => ActionKind::Watch,
        (Role::GivesExplicit, true) => ActionKind::WatchThenNotInterested,
        (_, false) => ActionKind::Skip,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    WatchFull,
    Skip { dwell_ms: u64 },
    NotInterestedAfterWatch,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::WatchFull => ActionKind::Watch,
            Action::Skip { .. } => ActionKind::Skip,
            Action::NotInterestedAfterWatch => ActionKind::WatchThenNotInterested,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: usize,
    pub video_id: String,
    pub classified_on_topic: bool,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorLog {
    pub entries: Vec<LogEntry>,
}

impl BehaviorLog {
    pub fn on_topic_count(&self) -> u64 {
        self.entries.iter().filter(|e| e.classified_on_topic).count() as u64
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One JSON record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
            );
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub role: Role,
    pub topic_id: String,
    pub phase_length: usize,
    pub seed_count: usize,
    /// Videos requested per feed call.
    pub page_size: u32,
}

impl BehaviorPolicy {
    pub fn new(role: Role, topic_id: &str) -> Self {
        Self {
            role,
            topic_id: topic_id.to_string(),
            phase_length: DEFAULT_PHASE_LENGTH,
            seed_count: DEFAULT_SEED_COUNT,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }

    pub fn with_role(&self, role: Role) -> Self {
        Self { role, ..self.clone() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PuppetError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("{path} rejected with status {status}: {message}")]
    Rejected { path: String, status: u16, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("feed exhausted after {0} videos")]
    Exhausted(usize),
}

/// A failed phase with everything logged before the failure.
#[derive(Debug, Error)]
#[error("phase aborted after {} videos: {error}", partial.len())]
pub struct PhaseFailure {
    pub error: PuppetError,
    pub partial: BehaviorLog,
}

fn classify_or_off_topic(
    classifier: &dyn Classifier,
    meta: &crate::classifier::VideoMeta,
    topic: &TopicProfile,
) -> bool {
    classifier.classify(meta, topic).unwrap_or_else(|e| {
        log::warn!("classifier failed, treating video as off-topic: {e}");
        false
    })
}

/// Searches the topic keywords and fully watches the first `seed_count`
/// results. Every signal is tagged search-origin.
pub fn seed_account<T: crate::http::Transport>(
    client: &mut Client<T>,
    topic: &TopicProfile,
    seed_count: usize,
    classifier: &dyn Classifier,
) -> Result<BehaviorLog, PhaseFailure> {
    let mut log = BehaviorLog::default();
    let fail = |error, log: &BehaviorLog| PhaseFailure { error, partial: log.clone() };
    let page = client.search(&topic.keywords, seed_count as u32).map_err(|e| fail(e, &log))?;
    if page.videos.len() < seed_count {
        log::warn!("search for {} returned {} of {} seed videos", topic.topic_id, page.videos.len(), seed_count);
    }
    let mut events = Vec::new();
    for video in page.videos.iter().take(seed_count) {
        let on_topic = classify_or_off_topic(classifier, &video.meta, topic);
        watch(client, video, false, Origin::Search, &mut events).map_err(|e| fail(e, &log))?;
        log.entries.push(LogEntry {
            index: log.len() + 1,
            video_id: video.video_id.clone(),
            classified_on_topic: on_topic,
            action: Action::WatchFull,
        });
    }
    if !events.is_empty() {
        client.send_app_log(events, Origin::Search).map_err(|e| fail(e, &log))?;
    }
    Ok(log)
}

fn watch<T: crate::http::Transport>(
    client: &mut Client<T>,
    video: &crate::wire::PublicVideo,
    not_interested: bool,
    origin: Origin,
    events: &mut Vec<AppLogEvent>,
) -> Result<WatchReport, PuppetError> {
    let report = WatchReport { video_id: video.video_id.clone(), watch_duration_ms: video.duration_ms, finished: true };
    client.advance_clock(video.duration_ms);
    client.send_stats(vec![report.clone()], origin)?;
    let mut items =
        vec![FeedbackItem { video_id: video.video_id.clone(), kind: FeedbackKind::Play, dwell_ms: video.duration_ms }];
    events.push(client.event("video_play_finish", &video.video_id, video.duration_ms));
    if not_interested {
        items.push(FeedbackItem { video_id: video.video_id.clone(), kind: FeedbackKind::NotInterested, dwell_ms: 0 });
        events.push(client.event("dislike", &video.video_id, 0));
    }
    client.send_feedback(items, origin)?;
    Ok(report)
}

/// Scrolls `policy.phase_length` videos of the personalized feed, acting on
/// each according to the role.
pub fn run_phase<T: crate::http::Transport, R: Rng>(
    client: &mut Client<T>,
    policy: &BehaviorPolicy,
    topic: &TopicProfile,
    classifier: &dyn Classifier,
    rng: &mut R,
) -> Result<BehaviorLog, PhaseFailure> {
    let mut log = BehaviorLog::default();
    if policy.phase_length == 0 || policy.page_size == 0 {
        return Err(PhaseFailure {
            error: PuppetError::Policy("phase_length and page_size must be >= 1".into()),
            partial: log,
        });
    }
    if policy.topic_id != topic.topic_id {
        return Err(PhaseFailure {
            error: PuppetError::Policy(format!(
                "policy topic {} but classifier topic {}",
                policy.topic_id, topic.topic_id
            )),
            partial: log,
        });
    }
    let mut acks: Vec<WatchReport> = Vec::new();
    while log.len() < policy.phase_length {
        let want = (policy.phase_length - log.len()).min(policy.page_size as usize) as u32;
        let page = match client.scroll_page(want, std::mem::take(&mut acks)) {
            Ok(p) => p,
            Err(error) => return Err(PhaseFailure { error, partial: log }),
        };
        if page.videos.is_empty() {
            return Err(PhaseFailure { error: PuppetError::Exhausted(log.len()), partial: log });
        }
        let mut events = Vec::new();
        for video in page.videos.iter().take(want as usize) {
            let on_topic = classify_or_off_topic(classifier, &video.meta, topic);
            let step = match decide_action(policy.role, on_topic) {
                ActionKind::Watch => {
                    watch(client, video, false, Origin::Fyp, &mut events).map(|r| (r, Action::WatchFull))
                }
                ActionKind::WatchThenNotInterested => {
                    watch(client, video, true, Origin::Fyp, &mut events).map(|r| (r, Action::NotInterestedAfterWatch))
                }
                ActionKind::Skip => {
                    let dwell = rng.gen_range(MIN_SKIP_DWELL_MS..=MAX_SKIP_DWELL_MS);
                    let report =
                        WatchReport { video_id: video.video_id.clone(), watch_duration_ms: dwell, finished: false };
                    client.advance_clock(dwell);
                    events.push(client.event("video_skip", &video.video_id, dwell));
                    client
                        .send_stats(vec![report.clone()], Origin::Fyp)
                        .map(|_| (report, Action::Skip { dwell_ms: dwell }))
                }
            };
            let (report, action) = match step {
                Ok(s) => s,
                Err(error) => return Err(PhaseFailure { error, partial: log }),
            };
            acks.push(report);
            log.entries.push(LogEntry {
                index: log.len() + 1,
                video_id: video.video_id.clone(),
                classified_on_topic: on_topic,
                action,
            });
        }
        if let Err(error) = client.send_app_log(events, Origin::Fyp) {
            return Err(PhaseFailure { error, partial: log });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_of_actions() {
        use ActionKind::*;
        let expected = [
            (Role::WatchTopic, Watch, Skip),
            (Role::BaselineSkip, Skip, Skip),
            (Role::GivesImplicit, Skip, Skip),
            (Role::GivesExplicit, WatchThenNotInterested, Skip),
            (Role::CeasesImplicit, Watch, Skip),
            (Role::CeasesExplicit, Watch, Skip),
        ];
        for (role, on, off) in expected {
            assert_eq!(decide_action(role, true), on, "{role}");
            assert_eq!(decide_action(role, false), off, "{role}");
        }
    }

    #[test]
    fn role_names_round_trip() {
        for r in Role::ALL {
            assert_eq!(r.as_str().parse::<Role>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.as_str()));
        }
        assert!("nobody".parse::<Role>().is_err());
    }

    #[test]
    fn log_jsonl_round_trip() {
        let log = BehaviorLog {
            entries: vec![
                LogEntry { index: 1, video_id: "v1".into(), classified_on_topic: true, action: Action::WatchFull },
                LogEntry {
                    index: 2,
                    video_id: "v2".into(),
                    classified_on_topic: false,
                    action: Action::Skip { dwell_ms: 300 },
                },
                LogEntry {
                    index: 3,
                    video_id: "v3".into(),
                    classified_on_topic: true,
                    action: Action::NotInterestedAfterWatch,
                },
            ],
        };
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        assert_eq!(BehaviorLog::read_jsonl(buf.as_slice()).unwrap(), log);
        assert_eq!(log.on_topic_count(), 2);
    }
}
