use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibration::Calibration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    WatchFull,
    WatchPartial,
    Skip,
    NotInterested,
}

impl SignalKind {
    pub fn weight(self, c: &Calibration) -> f64 {
        match self {
            SignalKind::WatchFull => c.w_watch_full,
            SignalKind::WatchPartial => c.w_watch_partial,
            SignalKind::Skip => c.w_skip,
            SignalKind::NotInterested => c.w_not_interested,
        }
    }
}

/// Server-side personalization state of one account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub account_id: String,
    pub device_id: String,
    pub affinity: BTreeMap<String, f64>,
    pub seen_video_ids: BTreeSet<String>,
    pub signal_count: u64,
    /// Highest request nonce accepted so far.
    pub last_nonce: u64,
}

impl AccountState {
    pub fn new<'a>(account_id: &str, device_id: &str, topics: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            account_id: account_id.to_string(),
            device_id: device_id.to_string(),
            affinity: topics.into_iter().map(|t| (t.to_string(), 0.0)).collect(),
            seen_video_ids: BTreeSet::new(),
            signal_count: 0,
            last_nonce: 0,
        }
    }

    pub fn score(&self, topic: &str) -> f64 {
        self.affinity.get(topic).copied().unwrap_or(0.0)
    }

    /// Canonical bytes of the affinity map (topic, IEEE-754 bits).
    pub fn affinity_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (topic, score) in &self.affinity {
            out.extend_from_slice(&(topic.len() as u32).to_le_bytes());
            out.extend_from_slice(topic.as_bytes());
            out.extend_from_slice(&score.to_bits().to_le_bytes());
        }
        out
    }

    /// SHA-256 over every field of the state in canonical order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for id in [&self.account_id, &self.device_id] {
            h.update((id.len() as u32).to_le_bytes());
            h.update(id.as_bytes());
        }
        h.update(self.affinity_bytes());
        h.update((self.seen_video_ids.len() as u64).to_le_bytes());
        for id in &self.seen_video_ids {
            h.update((id.len() as u32).to_le_bytes());
            h.update(id.as_bytes());
        }
        h.update(self.signal_count.to_le_bytes());
        h.update(self.last_nonce.to_le_bytes());
        h.finalize().into()
    }
}

/// Additive, clamped update of every listed topic's score.
pub fn apply_signal<'a>(
    state: &mut AccountState,
    topics: impl IntoIterator<Item = &'a str>,
    kind: SignalKind,
    calibration: &Calibration,
) {
    let w = kind.weight(calibration);
    let mut touched = false;
    for topic in topics {
        let score = state.affinity.entry(topic.to_string()).or_insert(0.0);
        let mut current = *score;
        if w > 0.0 && current < 0.0 {
            current *= calibration.negative_recovery;
        }
        *score = calibration.clamp_score(current + w);
        touched = true;
    }
    if touched {
        state.signal_count += 1;
    }
}

pub fn delivery_probability(state: &AccountState, topic: &str, base_prevalence: f64, calibration: &Calibration) -> f64 {
    calibration.delivery(base_prevalence, state.score(topic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fresh() -> AccountState {
        AccountState::new("u1", "d1", ["cooking", "fitness"])
    }

    #[test]
    fn empty_topics_is_noop() {
        let mut s = fresh();
        let before = s.clone();
        apply_signal(&mut s, [], SignalKind::WatchFull, &Calibration::default());
        assert_eq!(s, before);
    }

    #[test]
    fn cap_holds() {
        let c = Calibration::default();
        let mut s = fresh();
        s.affinity.insert("cooking".into(), c.score_cap);
        apply_signal(&mut s, ["cooking"], SignalKind::WatchFull, &c);
        assert_eq!(s.score("cooking"), c.score_cap);
    }

    #[test]
    fn other_topics_untouched() {
        let c = Calibration::default();
        let mut s = fresh();
        apply_signal(&mut s, ["cooking"], SignalKind::NotInterested, &c);
        assert_eq!(s.score("fitness"), 0.0);
        assert_eq!(s.score("cooking"), c.w_not_interested);
    }

    #[test]
    fn twenty_five_watches_raise_delivery() {
        let c = Calibration::default();
        let mut s = fresh();
        for _ in 0..25 {
            apply_signal(&mut s, ["cooking"], SignalKind::WatchFull, &c);
        }
        assert!(delivery_probability(&s, "cooking", 0.085, &c) > 0.085);
    }

    #[test]
    fn floor_maps_to_p_floor() {
        let c = Calibration::default();
        let mut s = fresh();
        s.affinity.insert("cooking".into(), c.score_floor);
        assert_eq!(delivery_probability(&s, "cooking", 0.085, &c), c.p_floor(0.085));
    }

    #[test]
    fn recovery_shrinks_negative_scores() {
        let c = Calibration::profile("relapse").unwrap();
        let mut s = fresh();
        s.affinity.insert("cooking".into(), -20.0);
        apply_signal(&mut s, ["cooking"], SignalKind::WatchFull, &c);
        assert_eq!(s.score("cooking"), -10.0 + c.w_watch_full);
    }

    #[test]
    fn digest_tracks_every_field() {
        let base = fresh();
        let mut other = base.clone();
        other.seen_video_ids.insert("v1".into());
        assert_ne!(base.digest(), other.digest());
        let mut other = base.clone();
        other.last_nonce = 3;
        assert_ne!(base.digest(), other.digest());
        assert_eq!(base.digest(), fresh().digest());
    }

    fn kind() -> impl Strategy<Value = SignalKind> {
        prop_oneof![
            Just(SignalKind::WatchFull),
            Just(SignalKind::WatchPartial),
            Just(SignalKind::Skip),
            Just(SignalKind::NotInterested),
        ]
    }

    proptest! {
        #[test]
        fn scores_stay_clamped(kinds in proptest::collection::vec(kind(), 0..300), relapse in any::<bool>()) {
            let c = Calibration::profile(if relapse { "relapse" } else { "default" }).unwrap();
            let mut s = fresh();
            for k in kinds {
                apply_signal(&mut s, ["cooking"], k, &c);
                let v = s.score("cooking");
                prop_assert!(c.score_floor <= v && v <= c.score_cap);
            }
        }

        #[test]
        fn monotone_response(start in -50.0f64..50.0) {
            let c = Calibration::default();
            let mut s = fresh();
            s.affinity.insert("cooking".into(), start);
            let p0 = delivery_probability(&s, "cooking", 0.085, &c);
            let mut up = s.clone();
            apply_signal(&mut up, ["cooking"], SignalKind::WatchFull, &c);
            prop_assert!(delivery_probability(&up, "cooking", 0.085, &c) >= p0);
            let mut down = s.clone();
            apply_signal(&mut down, ["cooking"], SignalKind::NotInterested, &c);
            prop_assert!(delivery_probability(&down, "cooking", 0.085, &c) <= p0);
        }
    }
}
