use std::sync::Arc;

use rand::RngCore;

use super::Agent;
use crate::bayes::{posterior_update, sample_marginal, sample_transmission, BeliefState, LikelihoodModel};
use crate::error::Result;
use crate::space::{Example, FiniteSpace};

/// Exact Bayesian agent: posterior updates, MAP selection and sampling are
/// delegated to [`crate::bayes`].
#[derive(Debug, Clone)]
pub struct MockAgent {
    space: Arc<FiniteSpace>,
    model: LikelihoodModel,
}

impl MockAgent {
    pub fn new(space: Arc<FiniteSpace>, epsilon: f64) -> Result<Self> {
        let model = LikelihoodModel::for_space(epsilon, &space)?;
        Ok(Self { space, model })
    }
}

impl Agent for MockAgent {
    fn space(&self) -> &FiniteSpace {
        &self.space
    }

    fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    fn propose(&mut self, start: &BeliefState, data: &[Example]) -> Result<BeliefState> {
        posterior_update(start, data, &self.space, &self.model)
    }

    fn generate(&mut self, h: usize, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>> {
        sample_transmission(&self.space, h, m, &self.model, rng)
    }

    fn generate_marginal(&mut self, belief: &BeliefState, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>> {
        sample_marginal(&self.space, belief, m, &self.model, rng)
    }
}
