//! The prompted recommender: renders history (plus, when revising, the previous
//! list and feedback), calls the model and grounds the reply in the catalog.

use std::collections::HashSet;

use crate::catalog::ItemCatalog;
use crate::domain::{format_item_with_attributes, parse_item_rendering, AttributeKind, Item, ItemId, Utterance};
use crate::gateway::{self, Backend, ChatMessage, GatewayError, GenerationRequest};
use crate::prompts::{self, CONVERSATION_HEADER, FEEDBACK_HEADER, PREVIOUS_HEADER, REVISE_INSTRUCTION};

/// The list being revised and the feedback on it.
#[derive(Debug, Clone, Copy)]
pub struct Revision<'a> {
    pub previous: &'a [&'a Item],
    pub feedback: &'a str,
}

#[derive(Debug, Clone)]
pub struct RecommendationPrompt<'a> {
    pub history: &'a [Utterance],
    /// `None` is the single-shot form: history and task description only.
    pub revision: Option<Revision<'a>>,
    pub task_description: String,
    pub list_length: usize,
}

impl<'a> RecommendationPrompt<'a> {
    pub fn initial(history: &'a [Utterance], list_length: usize) -> Self {
        Self { history, revision: None, task_description: prompts::crs_task(list_length), list_length }
    }

    pub fn revise(history: &'a [Utterance], previous: &'a [&'a Item], feedback: &'a str, list_length: usize) -> Self {
        Self {
            history,
            revision: Some(Revision { previous, feedback }),
            task_description: prompts::crs_task(list_length),
            list_length,
        }
    }
}

pub fn render_recommendation_prompt(p: &RecommendationPrompt<'_>) -> Vec<ChatMessage> {
    let system = format!("{} {}", p.task_description, prompts::crs_format_instruction(p.list_length));
    let mut user = format!("{}\n{}", CONVERSATION_HEADER, prompts::render_history(p.history));
    if let Some(rev) = p.revision {
        let lines: Vec<String> =
            rev.previous.iter().map(|i| format_item_with_attributes(i, &AttributeKind::ALL)).collect();
        let feedback = rev.feedback.split_whitespace().collect::<Vec<_>>().join(" ");
        user.push_str(&format!(
            "\n\n{}\n{}\n\n{}\n{}\n\n{}",
            PREVIOUS_HEADER,
            prompts::numbered(&lines),
            FEEDBACK_HEADER,
            feedback,
            REVISE_INSTRUCTION
        ));
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Extracts numbered or bulleted lines, matches each against the catalog and
/// returns distinct matches in reply order, at most `list_length` of them.
pub fn parse_and_ground(reply: &str, catalog: &ItemCatalog, list_length: usize, threshold: f64) -> Vec<ItemId> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in reply.lines() {
        if out.len() >= list_length {
            break;
        }
        let Some(candidate) = prompts::strip_list_marker(line) else { continue };
        let candidate = candidate.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace());
        let (title, _) = parse_item_rendering(candidate);
        if let Some(id) = catalog.fuzzy_match(&title, threshold).item_id {
            if seen.insert(id) {
                out.push(id);
            }
        }
    }
    out
}

pub fn recommendation_request(p: &RecommendationPrompt<'_>, temperature: f64, seed: u64) -> GenerationRequest {
    GenerationRequest {
        temperature,
        seed: Some(seed),
        max_new_tokens: (p.list_length as u32).saturating_mul(48).max(64),
        ..GenerationRequest::new(render_recommendation_prompt(p))
    }
}

/// Render, generate and ground in one call.
pub fn recommend(
    backend: &dyn Backend,
    p: &RecommendationPrompt<'_>,
    catalog: &ItemCatalog,
    threshold: f64,
    temperature: f64,
    seed: u64,
) -> Result<Vec<ItemId>, GatewayError> {
    let result = gateway::generate(backend, &recommendation_request(p, temperature, seed))?;
    Ok(parse_and_ground(&result.text, catalog, p.list_length, threshold))
}
