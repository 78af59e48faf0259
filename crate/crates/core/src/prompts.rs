//! Versioned prompt templates and the section layout shared by every prompt.
//!
//! Prompts are plain text made of blank-line separated blocks. A block whose
//! first line is one of the `*_HEADER` constants is a named section; the
//! scripted backends read prompts back through [`sections`].

use crate::domain::{Speaker, Utterance};
use crate::gateway::ChatMessage;

pub const CRS_PROMPT_VERSION: &str = "crs-v1";
pub const USER_PROMPT_VERSION: &str = "user-v1";

const CRS_TASK: &str = include_str!("../assets/prompts/crs_task.v1.txt");
const SCORING_TASK: &str = include_str!("../assets/prompts/scoring_task.v1.txt");
const CRITIQUE_TASK: &str = include_str!("../assets/prompts/critique_task.v1.txt");

pub const CONVERSATION_HEADER: &str = "Conversation:";
pub const ITEM_HEADER: &str = "Recommendation:";
pub const LIST_HEADER: &str = "Recommendations:";
pub const PREFERENCE_HEADER: &str = "User preference:";
pub const PREVIOUS_HEADER: &str = "Your previous recommendations:";
pub const FEEDBACK_HEADER: &str = "User feedback on these recommendations:";

const HEADERS: [&str; 6] =
    [CONVERSATION_HEADER, ITEM_HEADER, LIST_HEADER, PREFERENCE_HEADER, PREVIOUS_HEADER, FEEDBACK_HEADER];

pub const REVISE_INSTRUCTION: &str = "Revise your recommendations based on the feedback.";

/// Task description for the recommender, with the list length filled in.
pub fn crs_task(list_length: usize) -> String {
    CRS_TASK.trim().replace("{l}", &list_length.to_string())
}

pub fn crs_format_instruction(list_length: usize) -> String {
    format!("Output exactly {list_length} titles, one per line, numbered 1 to {list_length}.")
}

pub fn scoring_task() -> &'static str {
    SCORING_TASK.trim()
}

pub fn critique_task() -> &'static str {
    CRITIQUE_TASK.trim()
}

/// One line per utterance, prefixed `User:` or `System:`.
pub fn render_history(history: &[Utterance]) -> String {
    history
        .iter()
        .map(|u| {
            let who = match u.speaker {
                Speaker::Seeker => "User",
                Speaker::Recommender => "System",
            };
            format!("{}: {}", who, u.text.split_whitespace().collect::<Vec<_>>().join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn numbered(lines: &[String]) -> String {
    lines.iter().enumerate().map(|(i, l)| format!("{}. {}", i + 1, l)).collect::<Vec<_>>().join("\n")
}

fn section(header: &str, body: &str) -> String {
    format!("{header}\n{body}")
}

/// Scoring instruction for one item: history, the item with attributes, task.
pub fn scoring_messages(history: &[Utterance], item_line: &str) -> Vec<ChatMessage> {
    let content = [
        section(CONVERSATION_HEADER, &render_history(history)),
        section(ITEM_HEADER, item_line),
        scoring_task().to_string(),
    ]
    .join("\n\n");
    vec![ChatMessage::user(content)]
}

/// Critiquing instruction over a whole list. With `preference`, the block of
/// ground-truth items is inserted before the task description (teacher form).
pub fn critique_messages(
    history: &[Utterance],
    item_lines: &[String],
    preference: Option<&[String]>,
) -> Vec<ChatMessage> {
    let mut blocks =
        vec![section(CONVERSATION_HEADER, &render_history(history)), section(LIST_HEADER, &numbered(item_lines))];
    if let Some(pref) = preference {
        let body = pref.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n");
        blocks.push(section(PREFERENCE_HEADER, &body));
    }
    blocks.push(critique_task().to_string());
    vec![ChatMessage::user(blocks.join("\n\n"))]
}

/// Splits prompt text into `(header, body)` sections. Blocks without a known
/// header are returned with an empty header.
pub fn sections(content: &str) -> Vec<(String, String)> {
    content
        .split("\n\n")
        .map(|block| match block.split_once('\n') {
            Some((first, rest)) if HEADERS.contains(&first.trim()) => (first.trim().to_string(), rest.to_string()),
            _ if HEADERS.contains(&block.trim()) => (block.trim().to_string(), String::new()),
            _ => (String::new(), block.to_string()),
        })
        .collect()
}

/// Body of the first section named `header` in any of the messages.
pub fn find_section(messages: &[ChatMessage], header: &str) -> Option<String> {
    messages.iter().flat_map(|m| sections(&m.content)).find(|(h, _)| h == header).map(|(_, b)| b)
}

/// Strips a leading list marker (`1.`, `2)`, `-`, `*`, `•`).
pub fn strip_list_marker(line: &str) -> Option<&str> {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix(['-', '*', '•']) {
        return Some(rest.trim());
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            return Some(rest.trim());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_texts_are_verbatim() {
        assert!(scoring_task().contains("Accept the recommendation (Yes/No)? X"));
        assert!(critique_task().ends_with("provide feedback on the recommendations given by the system."));
        assert!(crs_task(10).contains("recommend 10 items"));
    }

    #[test]
    fn section_round_trip() {
        let history = vec![
            Utterance { speaker: Speaker::Seeker, text: "I like  horror\nmovies".into(), mentioned_item_ids: vec![] },
            Utterance { speaker: Speaker::Recommender, text: "Try this".into(), mentioned_item_ids: vec![] },
        ];
        let msgs = critique_messages(&history, &["A".into(), "B".into()], Some(&["C".into()]));
        assert_eq!(find_section(&msgs, CONVERSATION_HEADER).unwrap(), "User: I like horror movies\nSystem: Try this");
        assert_eq!(find_section(&msgs, LIST_HEADER).unwrap(), "1. A\n2. B");
        assert_eq!(find_section(&msgs, PREFERENCE_HEADER).unwrap(), "- C");
        let plain = critique_messages(&history, &["A".into()], None);
        assert!(find_section(&plain, PREFERENCE_HEADER).is_none());
    }

    #[test]
    fn list_markers() {
        assert_eq!(strip_list_marker("1. Heat (1995)"), Some("Heat (1995)"));
        assert_eq!(strip_list_marker(" 10) Heat"), Some("Heat"));
        assert_eq!(strip_list_marker("- Heat"), Some("Heat"));
        assert_eq!(strip_list_marker("Heat"), None);
        assert_eq!(strip_list_marker("1995 was great"), None);
    }
}
