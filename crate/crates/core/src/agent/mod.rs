//! Agents that take part in the generation loop.
//!
//! The loop talks to an agent through three verbs: `propose` (update a
//! belief on observed data), `refine` (pick a hypothesis, optionally
//! restricted to an effective set) and `generate` (emit data). The exact
//! Bayesian [`MockAgent`] and the chat-model [`chat::ChatAgent`] both
//! implement [`Agent`].

pub mod chat;
mod mock;
pub mod posterior;
pub mod prompts;

pub use mock::MockAgent;

use rand::RngCore;

use crate::acre::{AcreExample, AcreRule, AcreTask};
use crate::bayes::{map_select, BeliefState, LikelihoodModel};
use crate::error::{Error, Result};
use crate::interaction::{filter_membership, EffectiveSet};
use crate::space::{Example, FiniteSpace};

pub trait Agent {
    fn space(&self) -> &FiniteSpace;

    fn model(&self) -> &LikelihoodModel;

    /// Belief after observing `data`, starting from `start`.
    fn propose(&mut self, start: &BeliefState, data: &[Example]) -> Result<BeliefState>;

    /// Restricted MAP choice over `belief`.
    fn refine(&mut self, belief: &BeliefState, eff: &EffectiveSet, rng: &mut dyn RngCore) -> Result<usize> {
        let mut err = None;
        let picked = map_select(belief, |h| match filter_membership(eff, h, rng) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                false
            }
        });
        match err {
            Some(e) => Err(e),
            None => picked,
        }
    }

    /// `m` examples from `p(d | h)`.
    fn generate(&mut self, h: usize, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>>;

    /// `m` examples from the posterior predictive of `belief`.
    fn generate_marginal(&mut self, belief: &BeliefState, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>>;
}

/// A rule-induction agent of either kind.
pub enum AgentHandle {
    Mock { agent: MockAgent, task: AcreTask, prior: BeliefState },
    Chat(chat::ChatAgent),
}

/// Proposed rule and, when available, the full posterior behind it. The
/// mock agent returns the exact posterior and its MAP rule.
pub fn agent_propose_rule(
    handle: &mut AgentHandle,
    examples: &[AcreExample],
) -> Result<(AcreRule, Option<BeliefState>)> {
    if examples.is_empty() {
        return Err(Error::Domain("proposing a rule needs at least one example".into()));
    }
    match handle {
        AgentHandle::Mock { agent, task, prior } => {
            let data = examples.iter().map(|e| task.to_example(e)).collect::<Result<Vec<_>>>()?;
            let post = agent.propose(prior, &data)?;
            let h = map_select(&post, |_| true)?;
            Ok((task.rule(h)?, Some(post)))
        }
        AgentHandle::Chat(agent) => agent.propose_rule(examples),
    }
}
