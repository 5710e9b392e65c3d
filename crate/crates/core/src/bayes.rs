//! Belief states over finite hypothesis spaces and the operations a Bayesian
//! agent performs on them: ε-noise likelihoods, posterior updates, MAP
//! selection, sampling, entropy and temperature.
//!
//! Beliefs are held as normalized log-probabilities; products of hundreds of
//! likelihood terms underflow quickly in linear space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::space::{Example, FiniteSpace};

/// Largest tolerated deviation of a belief's total mass from one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A normalized distribution over the hypotheses of one space.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    space_id: String,
    log_probs: Vec<f64>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

impl BeliefState {
    pub fn uniform(space_id: impl Into<String>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidBelief("empty hypothesis space".into()));
        }
        let lp = -(n as f64).ln();
        Ok(Self { space_id: space_id.into(), log_probs: vec![lp; n] })
    }

    /// Wraps an already-normalized probability vector. Rejects negative or
    /// non-finite entries and totals further than [`MASS_TOLERANCE`] from one.
    pub fn from_probs(space_id: impl Into<String>, probs: &[f64]) -> Result<Self> {
        validate_weights(probs)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidBelief(format!("probabilities sum to {total}, not 1")));
        }
        Self::from_weights(space_id, probs)
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(space_id: impl Into<String>, weights: &[f64]) -> Result<Self> {
        validate_weights(weights)?;
        let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_weights(space_id, logs)
    }

    /// Normalizes unnormalized log-weights. All `-inf` means no hypothesis
    /// has mass, reported as [`Error::Contradiction`].
    pub fn from_log_weights(space_id: impl Into<String>, mut log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::InvalidBelief("empty hypothesis space".into()));
        }
        if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidBelief("log-weights must be finite or -inf".into()));
        }
        let z = log_sum_exp(&log_weights);
        if z == f64::NEG_INFINITY {
            return Err(Error::Contradiction);
        }
        for v in &mut log_weights {
            *v -= z;
        }
        Ok(Self { space_id: space_id.into(), log_probs: log_weights })
    }

    /// A point mass on `h`.
    pub fn one_hot(space_id: impl Into<String>, n: usize, h: usize) -> Result<Self> {
        if h >= n {
            return Err(Error::Domain(format!("hypothesis {h} outside space of size {n}")));
        }
        let mut logs = vec![f64::NEG_INFINITY; n];
        logs[h] = 0.0;
        Ok(Self { space_id: space_id.into(), log_probs: logs })
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn prob(&self, h: usize) -> f64 {
        self.log_probs[h].exp()
    }

    pub fn log_prob(&self, h: usize) -> f64 {
        self.log_probs[h]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|v| v.exp()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.log_probs.iter().map(|v| v.exp()).sum()
    }

    /// Highest-mass hypothesis, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.log_probs.iter().enumerate() {
            if v > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    /// Draws a hypothesis index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &v) in self.log_probs.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            acc += v.exp();
            last_positive = i;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the accumulated total
        last_positive
    }

    pub(crate) fn check_space(&self, space: &FiniteSpace) -> Result<()> {
        if self.space_id != space.id() {
            return Err(Error::SpaceMismatch { expected: space.id().to_string(), found: self.space_id.clone() });
        }
        if self.len() != space.hypothesis_count() {
            return Err(Error::InvalidBelief(format!(
                "belief has {} entries, space has {} hypotheses",
                self.len(),
                space.hypothesis_count()
            )));
        }
        Ok(())
    }
}

fn validate_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidBelief("empty hypothesis space".into()));
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidBelief(format!("invalid probability entry {bad}")));
    }
    Ok(())
}

/// The ε-noise observation model: the mapped output with probability `1-ε`,
/// every other output with `ε/(|Y|-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodModel {
    epsilon: f64,
    outputs: usize,
}

impl LikelihoodModel {
    pub fn new(epsilon: f64, outputs: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Domain(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if outputs == 0 {
            return Err(Error::Domain("output set is empty".into()));
        }
        if outputs < 2 && epsilon > 0.0 {
            return Err(Error::Domain("epsilon > 0 needs at least two outputs".into()));
        }
        Ok(Self { epsilon, outputs })
    }

    pub fn for_space(epsilon: f64, space: &FiniteSpace) -> Result<Self> {
        Self::new(epsilon, space.output_count())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn output_count(&self) -> usize {
        self.outputs
    }

    pub fn matched(&self) -> f64 {
        1.0 - self.epsilon
    }

    pub fn mismatched(&self) -> f64 {
        if self.outputs < 2 {
            0.0
        } else {
            self.epsilon / (self.outputs - 1) as f64
        }
    }

    /// Log-likelihood of `matches` agreeing and `mismatches` disagreeing
    /// examples. Zero counts contribute nothing even when their term is
    /// `log 0`.
    pub fn log_likelihood_counts(&self, matches: usize, mismatches: usize) -> f64 {
        let mut ll = 0.0;
        if matches > 0 {
            ll += matches as f64 * self.matched().ln();
        }
        if mismatches > 0 {
            ll += mismatches as f64 * self.mismatched().ln();
        }
        ll
    }
}

/// `p(y | h, x)`.
pub fn likelihood(space: &FiniteSpace, model: &LikelihoodModel, h: usize, e: &Example) -> Result<f64> {
    space.check_example(e)?;
    Ok(if space.predict(h, e.x) == e.y { model.matched() } else { model.mismatched() })
}

/// `P(h | data) ∝ P(h) ∏ p(yᵢ | h, xᵢ)`.
pub fn posterior_update(
    prior: &BeliefState,
    data: &[Example],
    space: &FiniteSpace,
    model: &LikelihoodModel,
) -> Result<BeliefState> {
    prior.check_space(space)?;
    for e in data {
        space.check_example(e)?;
    }
    if data.is_empty() {
        return Ok(prior.clone());
    }
    let logs = (0..space.hypothesis_count())
        .map(|h| {
            let lp = prior.log_prob(h);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            let matches = data.iter().filter(|e| space.predict(h, e.x) == e.y).count();
            lp + model.log_likelihood_counts(matches, data.len() - matches)
        })
        .collect();
    BeliefState::from_log_weights(prior.space_id.clone(), logs)
}

/// Restricted MAP selection: walks hypotheses in decreasing posterior order
/// (lowest index first among ties) and returns the first one `admits`
/// accepts. The walk consults `admits` lazily, so a noisy filter is queried
/// only for the candidates actually examined. Zero-mass hypotheses are never
/// selected.
pub fn map_select<F>(belief: &BeliefState, mut admits: F) -> Result<usize>
where
    F: FnMut(usize) -> bool,
{
    let mut order: Vec<usize> = (0..belief.len()).collect();
    order.sort_by(|&a, &b| belief.log_probs[b].total_cmp(&belief.log_probs[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take_while(|&h| belief.log_probs[h] > f64::NEG_INFINITY)
        .find(|&h| admits(h))
        .ok_or(Error::InfeasibleEffectiveSet)
}

fn emit<R: Rng + ?Sized>(space: &FiniteSpace, model: &LikelihoodModel, h: usize, rng: &mut R) -> Example {
    let x = rng.gen_range(0..space.input_count());
    let target = space.predict(h, x);
    let u: f64 = rng.gen();
    let y = if u < model.matched() || space.output_count() < 2 {
        target
    } else {
        // uniform over the other |Y|-1 outputs
        let k = rng.gen_range(0..space.output_count() - 1);
        if k >= target {
            k + 1
        } else {
            k
        }
    };
    Example { x, y }
}

/// `m` examples from `p(d | h)` with `x` uniform over the inputs.
pub fn sample_transmission<R: Rng + ?Sized>(
    space: &FiniteSpace,
    h: usize,
    m: usize,
    model: &LikelihoodModel,
    rng: &mut R,
) -> Result<Vec<Example>> {
    if m == 0 {
        return Err(Error::Domain("transmission size must be at least 1".into()));
    }
    if h >= space.hypothesis_count() {
        return Err(Error::Domain(format!("hypothesis {h} outside the space")));
    }
    Ok((0..m).map(|_| emit(space, model, h, rng)).collect())
}

/// Posterior-predictive sampling: a fresh `h ~ belief` for every example.
pub fn sample_marginal<R: Rng + ?Sized>(
    space: &FiniteSpace,
    belief: &BeliefState,
    m: usize,
    model: &LikelihoodModel,
    rng: &mut R,
) -> Result<Vec<Example>> {
    belief.check_space(space)?;
    if m == 0 {
        return Err(Error::Domain("transmission size must be at least 1".into()));
    }
    Ok((0..m)
        .map(|_| {
            let h = belief.sample(rng);
            emit(space, model, h, rng)
        })
        .collect())
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(belief: &BeliefState) -> f64 {
    let h: f64 = belief.log_probs.iter().filter(|v| **v > f64::NEG_INFINITY).map(|&lp| -lp.exp() * lp).sum();
    h.max(0.0)
}

/// Normalization of `p^(1/τ)`.
pub fn apply_temperature(belief: &BeliefState, tau: f64) -> Result<BeliefState> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {tau}")));
    }
    if tau == 1.0 {
        return Ok(belief.clone());
    }
    let logs = belief.log_probs.iter().map(|v| v / tau).collect();
    BeliefState::from_log_weights(belief.space_id.clone(), logs)
}
