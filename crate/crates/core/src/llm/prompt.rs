//! User-turn templates.

use super::{ChatMessage, LlmError};
use crate::corpus::Document;

pub fn build_demonstration_turn(demo: &Document) -> Result<ChatMessage, LlmError> {
    let summary = demo.summary.as_deref().ok_or_else(|| LlmError::MissingSummary {
        doc_id: demo.id.clone(),
    })?;
    Ok(ChatMessage::user(format!(
        "I will present you the text and its standard summary, considering it as an example. Text: {} Summary: {}",
        demo.text, summary
    )))
}

/// Demonstration turn for the "without summary" baselines: document only.
pub fn build_document_only_demonstration_turn(demo: &Document) -> ChatMessage {
    ChatMessage::user(format!(
        "I will present you the text, considering it as an example. Text: {}",
        demo.text
    ))
}

pub fn build_inference_turn(doc: &Document, k: usize, with_demo: bool) -> ChatMessage {
    let content = if with_demo {
        format!(
            "Combining the above example, generate {k} different summaries of the following text. Text: {} Summary:",
            doc.text
        )
    } else {
        format!(
            "Generate {k} different summaries of the following text. Text: {} Summary:",
            doc.text
        )
    };
    ChatMessage::user(content)
}

pub fn build_zero_shot_turn(doc: &Document) -> ChatMessage {
    ChatMessage::user(format!(
        "Generate a summary of the following text. Text: {} Summary:",
        doc.text
    ))
}

/// Sent after a reply that failed to parse into `k` enumerated items.
pub fn build_corrective_turn(k: usize) -> ChatMessage {
    ChatMessage::user(format!("Answer in this format: 1: xxx\n...{k}: xxx"))
}

/// Demonstration and inference request joined in one user turn.
pub fn build_concatenated_turn(
    demo: &ChatMessage,
    doc: &Document,
    k: usize,
) -> ChatMessage {
    let inference = build_inference_turn(doc, k, true);
    ChatMessage::user(format!("{}\n\n{}", demo.content, inference.content))
}
