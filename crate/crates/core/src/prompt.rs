//! Prompt templates.
//!
//! `qa.v1` is the single template used both to build fine-tuning payloads and
//! to query a model at inference time, so training and serving see the same
//! bytes for the same (query, task).

use crate::corpus::{McqItem, TaskLabel};

pub const QA_TEMPLATE: &str = "qa.v1";
pub const TASK_TAG: &str = "TASK:";

const SYSTEM_PREAMBLE: &str = "You are a careful, empathetic assistant supporting people with hyperhidrosis. \
Answer the user's question for the task below.";

/// Renders the shared question/answer prompt. The completion follows the
/// returned text directly.
pub fn render_qa(query: &str, task: TaskLabel) -> String {
    format!(
        "<|system|>\n{SYSTEM_PREAMBLE}\n{TASK_TAG} {task}\n<|user|>\n{}\n<|assistant|>\n",
        neutralize_tags(query.trim())
    )
}

/// Question text for an MCQ item: stem, one `X. text` line per option, and
/// the answer-format instruction. Passed through [`render_qa`] for the model.
pub fn mcq_question(item: &McqItem) -> String {
    let mut out = String::new();
    out.push_str(item.stem.trim());
    out.push('\n');
    for (letter, text) in &item.options {
        out.push_str(&format!("{letter}. {}\n", text.trim()));
    }
    out.push_str("Reply with the single best option in the form \"Answer: <letter>\".");
    out
}

pub fn render_mcq(item: &McqItem) -> String {
    render_qa(&mcq_question(item), item.task)
}

/// User text must not be able to inject a second task tag.
pub(crate) fn neutralize_tags(text: &str) -> String {
    text.replace(TASK_TAG, "TASK -")
}

/// Reads the task tag back out of a rendered prompt.
pub fn task_of_prompt(prompt: &str) -> Option<TaskLabel> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(TASK_TAG))
        .and_then(|rest| rest.trim().parse().ok())
}
