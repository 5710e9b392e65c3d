//! Chat prompt templates for the rule-induction and acronym tasks.

use serde::{Deserialize, Serialize};

use super::chat::{ChatMessage, Role};
use crate::acre::BiasLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    ImitationOnly,
    SelfRefine,
    HypoSearch,
    Acronym,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPosition {
    Before,
    After,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasSlot {
    pub sentence: String,
    pub position: BiasPosition,
}

impl BiasSlot {
    /// Prompt hint used for each named bias level.
    pub fn for_level(level: BiasLevel) -> Self {
        let (sentence, position) = match level {
            BiasLevel::VeryHigh => ("Turn off the screen after the experiment.", BiasPosition::Both),
            BiasLevel::High => ("Turn off the screen after the experiment.", BiasPosition::Before),
            BiasLevel::Medium => ("Turn off the screen of the monitor after the experiment.", BiasPosition::Before),
            BiasLevel::Mild => ("John will turn off the screen after the experiment.", BiasPosition::Before),
            BiasLevel::Low => ("Close the screen after the experiment.", BiasPosition::Before),
            BiasLevel::VeryLow => ("Close the screen after the experiment.", BiasPosition::After),
        };
        Self { sentence: sentence.into(), position }
    }
}

/// Everything a template may interpolate. Which fields are required depends
/// on the template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSlots {
    pub objects: Vec<String>,
    /// Examples, one rendered line each.
    pub examples: Vec<String>,
    pub bias: Option<BiasSlot>,
    /// The rule proposed in the previous turn.
    pub previous_rule: Option<String>,
    /// Interpreter report on `previous_rule`.
    pub feedback: Option<String>,
    /// Number of new examples to write.
    pub count: Option<usize>,
}

fn missing(slot: &str) -> Error {
    Error::Agent(format!("template slot `{slot}` is not filled"))
}

fn rule_system(objects: &[String]) -> String {
    let format: Vec<String> = objects.iter().map(|o| format!("{o}:<state>")).collect();
    format!(
        "You are running a light-detector experiment with the objects {objects}. \
Every object has a hidden state: on, off, or und. Put a group of objects on the detector and the light is \
on if any object in the group is on; otherwise it is und if any object is und; otherwise it is off.\n\
Infer one rule that explains every example. Answer with a single line in exactly this format:\n\
Rule: {{{format}}}\n\
where each <state> is one of on, off, und.",
        objects = objects.join(", "),
        format = format.join(", "),
    )
}

fn rule_user(slots: &PromptSlots) -> String {
    let mut parts: Vec<String> = Vec::new();
    let bias = slots.bias.as_ref();
    if let Some(b) = bias.filter(|b| matches!(b.position, BiasPosition::Before | BiasPosition::Both)) {
        parts.push(b.sentence.clone());
    }
    parts.push(format!("Examples:\n{}", slots.examples.join("\n")));
    if let Some(b) = bias.filter(|b| matches!(b.position, BiasPosition::After | BiasPosition::Both)) {
        parts.push(b.sentence.clone());
    }
    parts.push("What is the rule?".into());
    parts.join("\n")
}

pub fn render_prompt(template: Template, slots: &PromptSlots) -> Result<Vec<ChatMessage>> {
    if slots.examples.is_empty() {
        return Err(missing("examples"));
    }
    if template == Template::Acronym {
        let count = slots.count.ok_or_else(|| missing("count"))?;
        return Ok(vec![
            ChatMessage::new(
                Role::System,
                "You write acronym brainstorming examples. Each example is an acronym followed by a list of words \
whose initials spell it, in the form Acronym:<ACRONYM>; List:[\"word\", ...].",
            ),
            ChatMessage::new(
                Role::User,
                format!(
                    "Here are some examples:\n{}\nWrite {count} new examples in the same form, one per line.",
                    slots.examples.join("\n")
                ),
            ),
        ]);
    }

    if slots.objects.is_empty() {
        return Err(missing("objects"));
    }
    let mut messages = vec![
        ChatMessage::new(Role::System, rule_system(&slots.objects)),
        ChatMessage::new(Role::User, rule_user(slots)),
    ];
    match template {
        Template::ImitationOnly | Template::Acronym => {}
        Template::SelfRefine => {
            let prev = slots.previous_rule.as_ref().ok_or_else(|| missing("previous_rule"))?;
            messages.push(ChatMessage::new(Role::Assistant, prev.clone()));
            messages.push(ChatMessage::new(
                Role::User,
                "Check your rule against every example above. If any example is not explained, revise the rule. \
Answer in the same format.",
            ));
        }
        Template::HypoSearch => {
            let prev = slots.previous_rule.as_ref().ok_or_else(|| missing("previous_rule"))?;
            let feedback = slots.feedback.as_ref().ok_or_else(|| missing("feedback"))?;
            messages.push(ChatMessage::new(Role::Assistant, prev.clone()));
            messages.push(ChatMessage::new(
                Role::User,
                format!(
                    "An interpreter applied your rule to the examples:\n{feedback}\nRevise the rule so that it explains \
every example. Answer in the same format."
                ),
            ));
        }
    }
    Ok(messages)
}
