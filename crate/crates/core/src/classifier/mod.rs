//! On-topic classification of video metadata, plus the validation maths
//! used to check a classifier against human raters.

mod llm;
pub mod prompt;
pub mod validation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topics::TopicProfile;

pub use llm::{parse_answer, LlmBackend, LlmConfig};
pub use prompt::build_prompt;

/// The metadata fields a classifier may look at.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub description: String,
    pub hashtags: Vec<String>,
    pub suggested_words: Vec<String>,
    pub nickname: String,
    pub signature: String,
}

impl VideoMeta {
    /// All text fields, one entry per field element.
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.description.as_str())
            .chain(self.hashtags.iter().map(String::as_str))
            .chain(self.suggested_words.iter().map(String::as_str))
            .chain([self.nickname.as_str(), self.signature.as_str()])
    }
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("classifier backend timed out: {0}")]
    Timeout(String),
    #[error("classifier backend request failed: {0}")]
    Backend(String),
    #[error("could not parse classifier answer {0:?}")]
    Parse(String),
    #[error("classifier configuration: {0}")]
    Config(String),
}

pub trait Classifier: Send + Sync {
    fn classify(&self, meta: &VideoMeta, topic: &TopicProfile) -> Result<bool, ClassifierError>;
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Case-insensitive, word-boundary phrase matching.
#[derive(Debug, Clone)]
pub struct KeywordMatcher {
    phrases: Vec<Vec<String>>,
}

impl KeywordMatcher {
    pub fn new<S: AsRef<str>>(keywords: &[S]) -> Self {
        Self { phrases: keywords.iter().map(|k| tokens(k.as_ref())).filter(|p| !p.is_empty()).collect() }
    }

    fn phrase_in(phrase: &[String], words: &[String]) -> bool {
        words.windows(phrase.len()).any(|w| w == phrase)
    }

    pub fn matches_text(&self, text: &str) -> bool {
        let words = tokens(text);
        self.phrases.iter().any(|p| Self::phrase_in(p, &words))
    }

    pub fn matches(&self, meta: &VideoMeta) -> bool {
        meta.fields().any(|f| self.matches_text(f))
    }

    /// Number of distinct phrases found anywhere in `meta`.
    pub fn match_count(&self, meta: &VideoMeta) -> usize {
        let fields: Vec<Vec<String>> = meta.fields().map(tokens).collect();
        self.phrases.iter().filter(|p| fields.iter().any(|words| Self::phrase_in(p, words))).count()
    }
}

/// True iff any topic keyword occurs in any metadata field.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleBased;

impl Classifier for RuleBased {
    fn classify(&self, meta: &VideoMeta, topic: &TopicProfile) -> Result<bool, ClassifierError> {
        Ok(KeywordMatcher::new(&topic.keywords).matches(meta))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierBackend {
    #[default]
    RuleBased,
    ExternalLlm(LlmConfig),
}

impl ClassifierBackend {
    pub fn build(&self) -> Result<Box<dyn Classifier>, ClassifierError> {
        Ok(match self {
            ClassifierBackend::RuleBased => Box::new(RuleBased),
            ClassifierBackend::ExternalLlm(cfg) => Box::new(LlmBackend::from_config(cfg.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topics::default_topics;

    fn topic(id: &str) -> TopicProfile {
        crate::topics::find(&default_topics(), id).unwrap().clone()
    }

    #[test]
    fn hashtag_match() {
        let meta = VideoMeta { hashtags: vec!["cooking".into()], ..Default::default() };
        assert!(RuleBased.classify(&meta, &topic("cooking")).unwrap());
        assert!(!RuleBased.classify(&meta, &topic("fitness")).unwrap());
    }

    #[test]
    fn empty_meta_is_off_topic_everywhere() {
        let meta = VideoMeta::default();
        for t in default_topics() {
            assert!(!RuleBased.classify(&meta, &t).unwrap());
        }
    }

    #[test]
    fn matching_respects_word_boundaries_and_case() {
        let m = KeywordMatcher::new(&["sports betting", "parlay"]);
        assert!(m.matches_text("Huge SPORTS   betting night"));
        assert!(m.matches_text("my parlay hit!"));
        assert!(!m.matches_text("parlays are fun"));
        assert!(!m.matches_text("sports: no betting here? no"));
        assert!(!m.matches_text("sportsbetting"));
        assert!(m.matches_text("sports-betting"));
    }

    #[test]
    fn match_count_counts_distinct_phrases() {
        let m = KeywordMatcher::new(&["cooking", "recipes", "baking"]);
        let meta =
            VideoMeta { description: "cooking cooking".into(), hashtags: vec!["baking".into()], ..Default::default() };
        assert_eq!(m.match_count(&meta), 2);
    }

    #[test]
    fn rule_based_is_deterministic() {
        let meta = VideoMeta { description: "Try these viral recipes".into(), ..Default::default() };
        let t = topic("cooking");
        let first = RuleBased.classify(&meta, &t).unwrap();
        assert!((0..10).all(|_| RuleBased.classify(&meta, &t).unwrap() == first));
    }
}
