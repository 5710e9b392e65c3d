//! Reference EM and stochastic EM over finite spaces.
//!
//! These routines share no sampling or update code with [`crate::bayes`] or
//! [`crate::engine`]; they are the second route used to cross-check
//! imitation-only iterated learning.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::MockAgent;
use crate::bayes::BeliefState;
use crate::engine::{derive_seed, run_il, GenerationConfig, IlTask, Interaction};
use crate::error::{Error, Result};
use crate::space::{Example, FiniteSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Samples per E-step.
    pub m: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Consecutive identical selections that count as convergence.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_patience() -> usize {
    10
}

impl EmConfig {
    pub fn new(m: usize, iterations: usize, epsilon: f64, seed: u64) -> Self {
        Self { m, iterations, epsilon, seed, patience: default_patience() }
    }

    fn validate(&self, space: &FiniteSpace) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Domain("EM sample count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Domain(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.epsilon > 0.0 && space.output_count() < 2 {
            return Err(Error::Domain("noise needs at least two outputs".into()));
        }
        Ok(())
    }
}

/// `ln p(y | h, x)` split into the matched and mismatched cases.
#[derive(Debug, Clone, Copy)]
struct NoiseLogs {
    hit: f64,
    miss: f64,
    hit_p: f64,
    miss_p: f64,
}

impl NoiseLogs {
    fn new(epsilon: f64, outputs: usize) -> Self {
        let miss_p = if outputs > 1 { epsilon / (outputs - 1) as f64 } else { 0.0 };
        Self { hit: (1.0 - epsilon).ln(), miss: miss_p.ln(), hit_p: 1.0 - epsilon, miss_p }
    }
}

fn admitted(mask: Option<&[bool]>, h: usize) -> bool {
    mask.is_none_or(|m| m[h])
}

fn check_inputs(space: &FiniteSpace, prior: &BeliefState, mask: Option<&[bool]>) -> Result<()> {
    if prior.len() != space.hypothesis_count() {
        return Err(Error::SpaceMismatch { expected: space.id().into(), found: prior.space_id().into() });
    }
    if let Some(m) = mask {
        if m.len() != space.hypothesis_count() {
            return Err(Error::Domain("effective-set mask must cover every hypothesis".into()));
        }
    }
    if !(0..space.hypothesis_count()).any(|h| admitted(mask, h) && prior.prob(h) > 0.0) {
        return Err(Error::InfeasibleEffectiveSet);
    }
    Ok(())
}

fn draw_from_prior(prior: &BeliefState, mask: Option<&[bool]>, rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = (0..prior.len()).map(|h| if admitted(mask, h) { prior.prob(h) } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (h, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = h;
        if u < acc {
            return h;
        }
    }
    last
}

/// The M-step objective `(1/m) ln P₀(h) + E_{x,y ~ p(·|prev)} ln p(y | h, x)`
/// with the expectation taken exactly.
pub fn em_objective(space: &FiniteSpace, prior: &BeliefState, m: usize, epsilon: f64, prev: usize, h: usize) -> f64 {
    let logs = NoiseLogs::new(epsilon, space.output_count());
    let n_x = space.input_count();
    let mut expected = 0.0;
    for x in 0..n_x {
        let target = space.predict(prev, x);
        let guess = space.predict(h, x);
        // p(y = guess | prev, x) mass lands on ln(1-ε), the rest on ln(ε/(K-1))
        let p_hit = if guess == target { logs.hit_p } else { logs.miss_p };
        let term = xlogy(p_hit, logs.hit) + xlogy(1.0 - p_hit, logs.miss);
        expected += term;
    }
    prior.log_prob(h) / m as f64 + expected / n_x as f64
}

fn xlogy(p: f64, log: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub start: usize,
    pub fixed_point: usize,
    /// Every iterate including the start.
    pub iterates: Vec<usize>,
    /// `em_objective(iterates[i-1], iterates[i])` for `i ≥ 1`.
    pub objective: Vec<f64>,
}

/// Exact-expectation EM from a start hypothesis drawn from the (restricted)
/// prior. Ties in the M-step keep the current hypothesis, then prefer the
/// lowest index.
pub fn em_reference(
    space: &FiniteSpace,
    prior: &BeliefState,
    mask: Option<&[bool]>,
    config: &EmConfig,
) -> Result<EmTrace> {
    config.validate(space)?;
    check_inputs(space, prior, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = draw_from_prior(prior, mask, &mut rng);
    em_reference_from(space, prior, mask, config, start)
}

pub fn em_reference_from(
    space: &FiniteSpace,
    prior: &BeliefState,
    mask: Option<&[bool]>,
    config: &EmConfig,
    start: usize,
) -> Result<EmTrace> {
    config.validate(space)?;
    check_inputs(space, prior, mask)?;
    let mut iterates = vec![start];
    let mut objective = Vec::new();
    let mut current = start;
    let limit = config.iterations.max(space.hypothesis_count() + 1);
    for _ in 0..limit {
        let (next, value) = em_step(space, prior, mask, config, current);
        objective.push(value);
        if next == current {
            iterates.push(next);
            return Ok(EmTrace { start, fixed_point: current, iterates, objective });
        }
        if let Some(pos) = iterates.iter().position(|&h| h == next) {
            return Err(Error::EmCycle(iterates[pos..].to_vec()));
        }
        iterates.push(next);
        current = next;
    }
    Err(Error::EmCycle(iterates))
}

fn em_step(
    space: &FiniteSpace,
    prior: &BeliefState,
    mask: Option<&[bool]>,
    config: &EmConfig,
    prev: usize,
) -> (usize, f64) {
    let mut best = prev;
    let mut best_value = if admitted(mask, prev) {
        em_objective(space, prior, config.m, config.epsilon, prev, prev)
    } else {
        f64::NEG_INFINITY
    };
    for h in 0..space.hypothesis_count() {
        if !admitted(mask, h) || prior.prob(h) == 0.0 {
            continue;
        }
        let v = em_objective(space, prior, config.m, config.epsilon, prev, h);
        if v > best_value {
            best = h;
            best_value = v;
        }
    }
    (best, best_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmChain {
    pub chain: Vec<usize>,
    /// Step at which the last `patience` selections first agreed.
    pub converged_at: Option<usize>,
}

impl EmChain {
    pub fn last(&self) -> usize {
        *self.chain.last().expect("chains hold at least the start")
    }
}

/// Stochastic EM: the E-step is replaced by `m` draws from `p(d | h_prev)`;
/// the M-step is the restricted MAP on those draws.
pub fn stochastic_em<R: Rng + ?Sized>(
    space: &FiniteSpace,
    prior: &BeliefState,
    mask: Option<&[bool]>,
    config: &EmConfig,
    start: usize,
    rng: &mut R,
) -> Result<EmChain> {
    config.validate(space)?;
    check_inputs(space, prior, mask)?;
    if start >= space.hypothesis_count() {
        return Err(Error::Domain(format!("start hypothesis {start} outside the space")));
    }
    let logs = NoiseLogs::new(config.epsilon, space.output_count());
    let mut chain = vec![start];
    let mut run = 1;
    let mut converged_at = None;
    for step in 1..=config.iterations {
        let prev = *chain.last().unwrap();
        let draws = draw_examples(space, prev, config.m, config.epsilon, rng);
        let next = m_step(space, prior, mask, &draws, &logs);
        run = if next == prev { run + 1 } else { 1 };
        chain.push(next);
        if run >= config.patience {
            converged_at = Some(step + 1 - config.patience);
            break;
        }
    }
    Ok(EmChain { chain, converged_at })
}

fn draw_examples<R: Rng + ?Sized>(space: &FiniteSpace, h: usize, m: usize, epsilon: f64, rng: &mut R) -> Vec<Example> {
    let k = space.output_count();
    (0..m)
        .map(|_| {
            let x = rng.gen_range(0..space.input_count());
            let truth = space.predict(h, x);
            let y = if k > 1 && rng.gen_bool(epsilon) {
                // one of the k-1 wrong outputs, uniformly
                (truth + rng.gen_range(1..k)) % k
            } else {
                truth
            };
            Example::new(x, y)
        })
        .collect()
}

fn m_step(
    space: &FiniteSpace,
    prior: &BeliefState,
    mask: Option<&[bool]>,
    data: &[Example],
    logs: &NoiseLogs,
) -> usize {
    let mut best = usize::MAX;
    let mut best_value = f64::NEG_INFINITY;
    for h in 0..space.hypothesis_count() {
        if !admitted(mask, h) {
            continue;
        }
        let lp = prior.log_prob(h);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let hits = data.iter().filter(|e| space.predict(h, e.x) == e.y).count();
        let misses = data.len() - hits;
        let mut v = lp + hits as f64 * logs.hit;
        if misses > 0 {
            v += misses as f64 * logs.miss;
        }
        if v > best_value || best == usize::MAX {
            best = h;
            best_value = v;
        }
    }
    best
}

/// Hypotheses attaining the largest prior mass inside the mask.
pub fn restricted_argmax_set(prior: &BeliefState, mask: Option<&[bool]>) -> Vec<usize> {
    let best =
        (0..prior.len()).filter(|&h| admitted(mask, h)).map(|h| prior.log_prob(h)).fold(f64::NEG_INFINITY, f64::max);
    (0..prior.len()).filter(|&h| admitted(mask, h) && (prior.log_prob(h) - best).abs() <= 1e-12).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub m: usize,
    pub generations: usize,
    pub seeds: usize,
    pub master_seed: u64,
    pub il_epsilon: f64,
    pub em_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRun {
    pub seed: u64,
    pub start: usize,
    pub il_final: usize,
    pub em_final: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub runs: Vec<AgreementRun>,
    pub same_hypothesis: f64,
    pub same_class: f64,
    pub il_hits_argmax: f64,
    pub em_hits_argmax: f64,
    /// False when the two routes were configured with different ε.
    pub consistent: bool,
    pub warnings: Vec<String>,
}

/// Runs imitation-only IL and stochastic EM from the same start hypothesis
/// for every seed and compares where they end up.
pub fn il_em_agreement(
    space: Arc<FiniteSpace>,
    prior: &BeliefState,
    class_of: &[usize],
    config: &AgreementConfig,
) -> Result<AgreementReport> {
    if class_of.len() != space.hypothesis_count() {
        return Err(Error::Domain("classifier must label every hypothesis".into()));
    }
    if config.seeds == 0 {
        return Err(Error::Domain("agreement needs at least one seed".into()));
    }
    let mut warnings = Vec::new();
    let consistent = config.il_epsilon == config.em_epsilon;
    if !consistent {
        warnings.push(format!(
            "epsilon differs between IL ({}) and EM ({}); results are not comparable",
            config.il_epsilon, config.em_epsilon
        ));
    }
    let argmax = restricted_argmax_set(prior, None);
    let mut runs = Vec::with_capacity(config.seeds);
    for i in 0..config.seeds {
        let seed = derive_seed(config.master_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = draw_from_prior(prior, None, &mut rng);
        let d0 = draw_examples(&space, start, config.m, config.il_epsilon, &mut rng);

        let task = IlTask::new(space.clone(), prior.clone(), d0);
        let mut gen = GenerationConfig::new(config.generations, config.m, config.il_epsilon, derive_seed(seed, 1));
        gen.record_posterior = false;
        let mut agent = MockAgent::new(space.clone(), config.il_epsilon)?;
        let traj = run_il(&task, &mut agent, &gen, &Interaction::None)?;
        let il_final = traj.final_record().selected_h.expect("MAP mode records a selection");

        let em_cfg = EmConfig {
            m: config.m,
            iterations: config.generations,
            epsilon: config.em_epsilon,
            seed,
            patience: usize::MAX,
        };
        let chain = stochastic_em(&space, prior, None, &em_cfg, start, &mut rng)?;
        runs.push(AgreementRun { seed, start, il_final, em_final: chain.last() });
    }
    let n = runs.len() as f64;
    let frac = |f: &dyn Fn(&AgreementRun) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(AgreementReport {
        same_hypothesis: frac(&|r| r.il_final == r.em_final),
        same_class: frac(&|r| class_of[r.il_final] == class_of[r.em_final]),
        il_hits_argmax: frac(&|r| argmax.contains(&r.il_final)),
        em_hits_argmax: frac(&|r| argmax.contains(&r.em_final)),
        consistent,
        warnings,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{self, MappingClass, SignalMapping};

    fn coding(c: f64) -> BeliefState {
        signal::coding_prior(&signal::enumerate_mappings(), c, &Default::default()).unwrap()
    }

    #[test]
    fn one_hot_prior_is_immediate_fixed_point() {
        let space = signal::signal_space();
        let prior = BeliefState::one_hot(signal::SPACE_ID, 256, 77).unwrap();
        let t = em_reference(&space, &prior, None, &EmConfig::new(20, 50, 0.05, 3)).unwrap();
        assert_eq!(t.start, 77);
        assert_eq!(t.fixed_point, 77);
    }

    #[test]
    fn full_set_reaches_prior_argmax_class_from_argmax_start() {
        let space = signal::signal_space();
        let prior = coding(1.0);
        let cfg = EmConfig::new(1, 50, 0.05, 0);
        let start = prior.argmax();
        let t = em_reference_from(&space, &prior, None, &cfg, start).unwrap();
        let m = SignalMapping::from_id(t.fixed_point).unwrap();
        assert_eq!(signal::classify(&m), MappingClass::Degenerate);
    }

    #[test]
    fn objective_is_monotone_and_fixed_point_is_local_max() {
        let space = signal::signal_space();
        let prior = coding(1.0);
        for seed in 0..10 {
            let cfg = EmConfig::new(2, 100, 0.2, seed);
            let t = em_reference(&space, &prior, None, &cfg).unwrap();
            // value of each iterate against its own predecessor never drops
            // below the predecessor's self-consistency value
            for w in t.iterates.windows(2) {
                let stay = em_objective(&space, &prior, cfg.m, cfg.epsilon, w[0], w[0]);
                let moved = em_objective(&space, &prior, cfg.m, cfg.epsilon, w[0], w[1]);
                assert!(moved >= stay - 1e-12);
            }
            let fp = t.fixed_point;
            let here = em_objective(&space, &prior, cfg.m, cfg.epsilon, fp, fp);
            for h in 0..256 {
                assert!(em_objective(&space, &prior, cfg.m, cfg.epsilon, fp, h) <= here + 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_epsilon_is_flagged() {
        let space = Arc::new(FiniteSpace::from_fn("one", 1, 2, 2, |_, x| x).unwrap());
        let prior = BeliefState::uniform("one", 1).unwrap();
        let cfg = AgreementConfig { m: 5, generations: 3, seeds: 3, master_seed: 1, il_epsilon: 0.05, em_epsilon: 0.1 };
        let r = il_em_agreement(space, &prior, &[0], &cfg).unwrap();
        assert!(!r.consistent);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.same_hypothesis, 1.0);
    }
}
