//! Rule posterior reconstruction from per-token candidate probabilities.
//!
//! A response of the form `Rule: {A:on, B:und, ...}` names one state per
//! object. The probability of any rule is the product, over objects, of the
//! probability the model gave that rule's state token at the object's value
//! position.

use log::warn;
use serde::{Deserialize, Serialize};

use super::chat::{ChatExchange, TokenLogprob};
use crate::acre::{AcreRule, AcreState, AcreTask};
use crate::bayes::BeliefState;
use crate::error::{Error, Result};

/// Probability given to a state that does not appear among a position's
/// candidates.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Allowed deviation of the raw rule-probability total from one.
pub const TOTAL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlooredState {
    pub object: usize,
    pub state: AcreState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulePosterior {
    pub belief: BeliefState,
    /// The rule the response spelled out.
    pub stated_rule: AcreRule,
    /// Per object, the probabilities of `on`, `off`, `und` at its value token.
    pub state_probs: Vec<[f64; 3]>,
    /// Sum over all rules of the unnormalized products.
    pub raw_total: f64,
    /// Product of the sampled probabilities of every non-value token in the
    /// rule span.
    pub format_product: f64,
    pub floored: Vec<FlooredState>,
    pub warnings: Vec<String>,
}

impl RulePosterior {
    /// Unnormalized product for rule `h`.
    pub fn raw_prob(&self, h: usize) -> f64 {
        let m = self.state_probs.len();
        let rule = AcreRule::from_index(m, h).expect("index within the rule space");
        rule.states.iter().zip(&self.state_probs).map(|(s, p)| p[s.index()]).product()
    }
}

/// A parsed rule, the byte span of each object's value and the span of the
/// whole rule.
pub type LocatedRule = (AcreRule, Vec<(usize, usize)>, (usize, usize));

/// Finds the `Rule: {..}` line in `text`.
pub fn locate_rule(text: &str, task: &AcreTask) -> Result<LocatedRule> {
    let start = text.find("Rule:").ok_or_else(|| Error::Agent("response has no `Rule:` line".into()))?;
    let open = text[start..].find('{').map(|i| start + i).ok_or_else(|| Error::Agent("rule has no `{`".into()))?;
    let close = text[open..].find('}').map(|i| open + i).ok_or_else(|| Error::Agent("rule has no `}`".into()))?;
    let body = &text[open + 1..close];

    let m = task.object_count();
    let mut states: Vec<Option<AcreState>> = vec![None; m];
    let mut spans: Vec<(usize, usize)> = vec![(0, 0); m];
    let mut offset = open + 1;
    for part in body.split(',') {
        let part_start = offset;
        offset += part.len() + 1;
        let Some(colon) = part.find(':') else {
            return Err(Error::Agent(format!("rule entry `{}` has no `:`", part.trim())));
        };
        let name = part[..colon].trim();
        let value = &part[colon + 1..];
        let lead = value.len() - value.trim_start().len();
        let value_trim = value.trim();
        let object = task.object_index(name).map_err(|_| Error::Agent(format!("unknown object `{name}` in rule")))?;
        if states[object].is_some() {
            return Err(Error::Agent(format!("object `{name}` appears twice in rule")));
        }
        let state = AcreState::parse(value_trim).map_err(|_| Error::Agent(format!("bad state `{value_trim}`")))?;
        states[object] = Some(state);
        let v0 = part_start + colon + 1 + lead;
        spans[object] = (v0, v0 + value_trim.len());
    }
    let mut out = Vec::with_capacity(m);
    for (o, s) in states.iter().enumerate() {
        out.push(s.ok_or_else(|| Error::Agent(format!("rule omits object `{}`", task.names()[o])))?);
    }
    Ok((AcreRule::new(out), spans, (start, close + 1)))
}

fn candidate_state(token: &str) -> Option<AcreState> {
    let t = token.trim().to_ascii_lowercase();
    match t.as_str() {
        "on" => Some(AcreState::On),
        "off" => Some(AcreState::Off),
        _ if !t.is_empty() && "undetermined".starts_with(&t) && t.len() >= 2 => Some(AcreState::Und),
        _ => None,
    }
}

/// Rebuilds the posterior over every rule from the exchange's logprobs.
pub fn extract_rule_posterior(exchange: &ChatExchange, task: &AcreTask) -> Result<RulePosterior> {
    extract_rule_posterior_with_floor(exchange, task, DEFAULT_FLOOR)
}

pub fn extract_rule_posterior_with_floor(
    exchange: &ChatExchange,
    task: &AcreTask,
    floor: f64,
) -> Result<RulePosterior> {
    let tokens: &[TokenLogprob] =
        exchange.logprobs.as_deref().ok_or_else(|| Error::Agent("exchange carries no logprobs".into()))?;
    let text: String = tokens.iter().map(|t| t.token.as_str()).collect();
    let (stated_rule, spans, (rule_start, rule_end)) = locate_rule(&text, task)?;

    let mut bounds = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for t in tokens {
        bounds.push((pos, pos + t.token.len()));
        pos += t.token.len();
    }
    let token_at = |byte: usize| bounds.iter().position(|&(a, b)| a <= byte && byte < b);

    let mut value_tokens = Vec::with_capacity(spans.len());
    let mut state_probs = Vec::with_capacity(spans.len());
    let mut floored = Vec::new();
    for (object, &(v0, _)) in spans.iter().enumerate() {
        let ti = token_at(v0).ok_or_else(|| Error::Agent("value position outside the token stream".into()))?;
        value_tokens.push(ti);
        let tok = &tokens[ti];
        let mut probs = [0.0f64; 3];
        let mut seen = [false; 3];
        let listed = if tok.top_logprobs.is_empty() {
            vec![(tok.token.as_str(), tok.logprob)]
        } else {
            tok.top_logprobs.iter().map(|c| (c.token.as_str(), c.logprob)).collect()
        };
        for (cand, lp) in listed {
            if let Some(s) = candidate_state(cand) {
                probs[s.index()] += lp.exp();
                seen[s.index()] = true;
            }
        }
        for s in AcreState::ALL {
            if !seen[s.index()] {
                probs[s.index()] = floor;
                floored.push(FlooredState { object, state: s });
            }
        }
        state_probs.push(probs);
    }

    let format_product: f64 = (0..tokens.len())
        .filter(|i| {
            let (a, b) = bounds[*i];
            a < rule_end && b > rule_start && !value_tokens.contains(i)
        })
        .map(|i| tokens[i].logprob.exp())
        .product();

    let raw_total: f64 = state_probs.iter().map(|p| p.iter().sum::<f64>()).product();
    let m = task.object_count();
    let log_weights: Vec<f64> = (0..task.rule_count())
        .map(|h| {
            let rule = AcreRule::from_index(m, h).unwrap();
            rule.states.iter().zip(&state_probs).map(|(s, p)| p[s.index()].ln()).sum()
        })
        .collect();
    let belief = BeliefState::from_log_weights(task.space_id(), log_weights)?;

    let mut warnings = Vec::new();
    if (raw_total - 1.0).abs() > TOTAL_TOLERANCE {
        let msg = format!("rule probabilities sum to {raw_total:.4} before normalization");
        warn!("{msg}");
        warnings.push(msg);
    }
    if !floored.is_empty() {
        let msg = format!("{} state(s) missing from candidate lists were floored at {floor}", floored.len());
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(RulePosterior { belief, stated_rule, state_probs, raw_total, format_product, floored, warnings })
}
