use super::VideoMeta;
use crate::topics::TopicProfile;

/// Instantiates the classification prompt for one video.
///
/// Keywords and list fields are joined with `", "`.
pub fn build_prompt(meta: &VideoMeta, topic: &TopicProfile) -> String {
    let keywords = topic.keywords.join(", ");
    format!(
        "You are a classifier tasked with determining whether the given content has anything to do with {keywords}. \
Given a list of: the user who posted a video and a brief description of them; the video's description; \
a list of related words; and a list of hashtags, you classify whether the video is related to {topic}. \
You only respond with 'Yes' if you think it is, or 'No' if not.\n\
\n\
Description: {description}, Hashtags: {hashtags}, Suggested Words: {words}, Nickname: {nickname}, Signature: {signature}",
        topic = topic.display_name,
        description = meta.description,
        hashtags = meta.hashtags.join(", "),
        words = meta.suggested_words.join(", "),
        nickname = meta.nickname,
        signature = meta.signature,
    )
}
