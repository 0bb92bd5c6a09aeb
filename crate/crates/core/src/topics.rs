use serde::{Deserialize, Serialize};

/// A target topic: how common it is on an un-personalized feed and which
/// keywords identify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicProfile {
    pub topic_id: String,
    /// Human-readable name substituted into the classification prompt.
    pub display_name: String,
    pub base_prevalence: f64,
    pub keywords: Vec<String>,
}

impl TopicProfile {
    pub fn new(topic_id: &str, display_name: &str, base_prevalence: f64, keywords: &[&str]) -> Self {
        Self {
            topic_id: topic_id.to_string(),
            display_name: display_name.to_string(),
            base_prevalence,
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.topic_id.is_empty() {
            return Err("topic_id is empty".into());
        }
        if !(0.0..=1.0).contains(&self.base_prevalence) {
            return Err(format!("{}: base_prevalence {} not in [0, 1]", self.topic_id, self.base_prevalence));
        }
        if self.keywords.is_empty() || self.keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(format!("{}: keywords must be non-empty", self.topic_id));
        }
        Ok(())
    }
}

/// The three audited topics with their un-personalized prevalences and
/// prompt keywords.
pub fn default_topics() -> Vec<TopicProfile> {
    vec![
        TopicProfile::new(
            "cooking",
            "cooking",
            0.085,
            &["cooking", "recipes", "viral recipes", "cooking tips", "baking"],
        ),
        TopicProfile::new("fitness", "fitness", 0.015, &["fitness", "health", "exercise"]),
        TopicProfile::new(
            "sports_betting",
            "sports betting",
            0.015,
            &["sports betting", "parlay", "fantasy sports", "sports gambling"],
        ),
    ]
}

pub fn find<'a>(topics: &'a [TopicProfile], topic_id: &str) -> Option<&'a TopicProfile> {
    topics.iter().find(|t| t.topic_id == topic_id)
}
