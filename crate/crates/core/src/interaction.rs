//! The interaction phase: effective-set filters over hypotheses, data-level
//! re-ranking over example pools, and the Lewis referential game.

use std::fmt;
use std::sync::Arc;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{posterior_update, BeliefState, LikelihoodModel};
use crate::error::{Error, Result};
use crate::space::{Example, FiniteSpace};

pub type HypothesisPredicate = Arc<dyn Fn(usize) -> bool + Send + Sync>;
pub type ExampleWeighting<E> = Arc<dyn Fn(&E) -> f64 + Send + Sync>;

/// A realization of the effective hypothesis set.
///
/// The first three kinds act on hypotheses; `DataWeighting` acts on pools of
/// examples of type `E` and only makes sense for [`weighted_pool_sample`].
pub enum EffectiveSet<E = Example> {
    Full,
    Predicate(HypothesisPredicate),
    NoisyPredicate { predicate: HypothesisPredicate, flip_prob: f64 },
    DataWeighting(ExampleWeighting<E>),
}

impl<E> Clone for EffectiveSet<E> {
    fn clone(&self) -> Self {
        match self {
            EffectiveSet::Full => EffectiveSet::Full,
            EffectiveSet::Predicate(p) => EffectiveSet::Predicate(p.clone()),
            EffectiveSet::NoisyPredicate { predicate, flip_prob } => {
                EffectiveSet::NoisyPredicate { predicate: predicate.clone(), flip_prob: *flip_prob }
            }
            EffectiveSet::DataWeighting(w) => EffectiveSet::DataWeighting(w.clone()),
        }
    }
}

impl<E> fmt::Debug for EffectiveSet<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectiveSet::Full => f.write_str("Full"),
            EffectiveSet::Predicate(_) => f.write_str("Predicate(..)"),
            EffectiveSet::NoisyPredicate { flip_prob, .. } => {
                write!(f, "NoisyPredicate {{ flip_prob: {flip_prob} }}")
            }
            EffectiveSet::DataWeighting(_) => f.write_str("DataWeighting(..)"),
        }
    }
}

impl<E> EffectiveSet<E> {
    pub fn predicate<F>(f: F) -> Self
    where
        F: Fn(usize) -> bool + Send + Sync + 'static,
    {
        EffectiveSet::Predicate(Arc::new(f))
    }

    pub fn noisy<F>(f: F, flip_prob: f64) -> Result<Self>
    where
        F: Fn(usize) -> bool + Send + Sync + 'static,
    {
        if !(0.0..0.5).contains(&flip_prob) {
            return Err(Error::Domain(format!("flip probability must lie in [0, 0.5), got {flip_prob}")));
        }
        Ok(EffectiveSet::NoisyPredicate { predicate: Arc::new(f), flip_prob })
    }

    pub fn weighting<F>(f: F) -> Self
    where
        F: Fn(&E) -> f64 + Send + Sync + 'static,
    {
        EffectiveSet::DataWeighting(Arc::new(f))
    }

    /// Admission mask computed without randomness. Noisy sets report their
    /// underlying predicate; callers that need the noise use
    /// [`filter_membership`].
    pub fn exact_mask(&self, n: usize) -> Result<Option<Vec<bool>>> {
        match self {
            EffectiveSet::Full => Ok(None),
            EffectiveSet::Predicate(p) | EffectiveSet::NoisyPredicate { predicate: p, .. } => {
                Ok(Some((0..n).map(|h| p(h)).collect()))
            }
            EffectiveSet::DataWeighting(_) => {
                Err(Error::EffectiveSetMisuse("data weighting filters examples, not hypotheses"))
            }
        }
    }
}

/// Whether `h` passes the filter. A noisy predicate reports the true
/// membership XOR a Bernoulli(`flip_prob`) flip.
pub fn filter_membership<E, R: Rng + ?Sized>(eff: &EffectiveSet<E>, h: usize, rng: &mut R) -> Result<bool> {
    match eff {
        EffectiveSet::Full => Ok(true),
        EffectiveSet::Predicate(p) => Ok(p(h)),
        EffectiveSet::NoisyPredicate { predicate, flip_prob } => {
            let truth = predicate(h);
            let flip = *flip_prob > 0.0 && rng.gen::<f64>() < *flip_prob;
            Ok(truth ^ flip)
        }
        EffectiveSet::DataWeighting(_) => {
            Err(Error::EffectiveSetMisuse("data weighting filters examples, not hypotheses"))
        }
    }
}

/// Draws `k` examples without replacement, each draw proportional to the
/// weighting among the examples still available. Returns every
/// positive-weight example when fewer than `k` exist.
pub fn weighted_pool_sample<E: Clone, R: Rng + ?Sized>(
    pool: &[E],
    eff: &EffectiveSet<E>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<E>> {
    let EffectiveSet::DataWeighting(weight) = eff else {
        return Err(Error::EffectiveSetMisuse("pool sampling needs a data weighting"));
    };
    if pool.is_empty() {
        return Err(Error::Domain("cannot sample from an empty pool".into()));
    }
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(pool.len());
    for (i, e) in pool.iter().enumerate() {
        let w = weight(e);
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Domain(format!("weighting returned {w} for pool entry {i}")));
        }
        if w > 0.0 {
            candidates.push((i, w));
        }
    }
    if candidates.is_empty() {
        return Err(Error::EmptyPoolWeighting);
    }
    if candidates.len() < k {
        warn!("filter admits {} pool examples, fewer than the {k} requested", candidates.len());
    }
    let mut picked = Vec::with_capacity(k.min(candidates.len()));
    while picked.len() < k && !candidates.is_empty() {
        let total: f64 = candidates.iter().map(|c| c.1).sum();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = candidates.len() - 1;
        for (j, c) in candidates.iter().enumerate() {
            acc += c.1;
            if u < acc {
                chosen = j;
                break;
            }
        }
        let (i, _) = candidates.swap_remove(chosen);
        picked.push(pool[i].clone());
    }
    Ok(picked)
}

/// How Bob turns a received message back into an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Draw `h_B ~ bob`, then take `argmax_x p(y | h_B, x)` with a uniform
    /// tie-break among maximizers.
    #[default]
    SampleThenArgmax,
    /// Draw `x' ~ P(x | y) ∝ Σ_h bob(h) p(y | h, x)`.
    Marginal,
}

/// Successful rounds of the referential game.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommBuffer {
    examples: Vec<Example>,
}

impl CommBuffer {
    pub fn push(&mut self, e: Example) {
        self.examples.push(e);
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// One round of the referential game: Alice names a random object, Bob
/// guesses which object was named.
pub fn lewis_round<R: Rng + ?Sized>(
    space: &FiniteSpace,
    alice: &BeliefState,
    bob: &BeliefState,
    model: &LikelihoodModel,
    decoding: Decoding,
    rng: &mut R,
) -> Result<(Example, bool)> {
    let n_x = space.input_count();
    let h_a = alice.sample(rng);
    let sent = crate::bayes::sample_transmission(space, h_a, 1, model, rng)?[0];
    let y = sent.y;
    let guess = match decoding {
        Decoding::SampleThenArgmax => {
            let h_b = bob.sample(rng);
            let score = |x: usize| if space.predict(h_b, x) == y { model.matched() } else { model.mismatched() };
            let best = (0..n_x).map(score).fold(f64::NEG_INFINITY, f64::max);
            let maximizers: Vec<usize> = (0..n_x).filter(|&x| score(x) == best).collect();
            maximizers[rng.gen_range(0..maximizers.len())]
        }
        Decoding::Marginal => {
            let probs = bob.probs();
            let weights: Vec<f64> = (0..n_x)
                .map(|x| {
                    probs
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(h, p)| p * if space.predict(h, x) == y { model.matched() } else { model.mismatched() })
                        .sum()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                rng.gen_range(0..n_x)
            } else {
                let u = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n_x - 1;
                for (x, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = x;
                        break;
                    }
                }
                pick
            }
        }
    };
    Ok((sent, guess == sent.x))
}

/// Plays `rounds` games between Alice and a copy of herself, then updates
/// Alice on the successful rounds.
pub fn run_interaction_game<R: Rng + ?Sized>(
    space: &FiniteSpace,
    alice: &BeliefState,
    rounds: usize,
    model: &LikelihoodModel,
    decoding: Decoding,
    rng: &mut R,
) -> Result<(BeliefState, CommBuffer)> {
    if rounds == 0 {
        return Err(Error::Domain("the interaction game needs at least one round".into()));
    }
    let bob = alice.clone();
    let mut buffer = CommBuffer::default();
    for _ in 0..rounds {
        let (e, ok) = lewis_round(space, alice, &bob, model, decoding, rng)?;
        if ok {
            buffer.push(e);
        }
    }
    if buffer.is_empty() {
        info!("no successful rounds in {rounds} games; belief left unchanged");
        return Ok((alice.clone(), buffer));
    }
    let updated = posterior_update(alice, buffer.examples(), space, model)?;
    Ok((updated, buffer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{self, reference};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig() -> (FiniteSpace, LikelihoodModel) {
        let s = signal::signal_space();
        let m = LikelihoodModel::new(0.0, 4).unwrap();
        (s, m)
    }

    #[test]
    fn full_and_predicate_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full: EffectiveSet = EffectiveSet::Full;
        assert!(filter_membership(&full, 17, &mut rng).unwrap());
        let even: EffectiveSet = EffectiveSet::predicate(|h| h % 2 == 0);
        assert!(filter_membership(&even, 4, &mut rng).unwrap());
        assert!(!filter_membership(&even, 5, &mut rng).unwrap());
    }

    #[test]
    fn zero_flip_noisy_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noisy: EffectiveSet = EffectiveSet::noisy(|h| h < 10, 0.0).unwrap();
        for h in 0..50 {
            assert_eq!(filter_membership(&noisy, h, &mut rng).unwrap(), h < 10);
        }
    }

    #[test]
    fn noisy_agreement_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy: EffectiveSet = EffectiveSet::noisy(|h| h % 3 == 0, 0.2).unwrap();
        let n = 10_000;
        let agree = (0..n).filter(|&i| filter_membership(&noisy, i, &mut rng).unwrap() == (i % 3 == 0)).count();
        let rate = agree as f64 / n as f64;
        let sigma = (0.8f64 * 0.2 / n as f64).sqrt();
        assert!((rate - 0.8).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn noisy_flip_bound() {
        assert!(EffectiveSet::<Example>::noisy(|_| true, 0.5).is_err());
        assert!(EffectiveSet::<Example>::noisy(|_| true, -0.1).is_err());
    }

    #[test]
    fn weighting_kind_is_misuse_for_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: EffectiveSet<u32> = EffectiveSet::weighting(|_| 1.0);
        assert!(matches!(filter_membership(&w, 0, &mut rng), Err(Error::EffectiveSetMisuse(_))));
        let full: EffectiveSet<u32> = EffectiveSet::Full;
        assert!(weighted_pool_sample(&[1u32], &full, 1, &mut rng).is_err());
    }

    #[test]
    fn pool_sample_respects_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool: Vec<u32> = (0..20).collect();
        let odd: EffectiveSet<u32> = EffectiveSet::weighting(|x| (x % 2) as f64);
        for _ in 0..50 {
            let s = weighted_pool_sample(&pool, &odd, 5, &mut rng).unwrap();
            assert_eq!(s.len(), 5);
            assert!(s.iter().all(|x| x % 2 == 1));
        }
        // shortfall: only 10 odd entries exist
        let s = weighted_pool_sample(&pool, &odd, 15, &mut rng).unwrap();
        assert_eq!(s.len(), 10);
        let none: EffectiveSet<u32> = EffectiveSet::weighting(|_| 0.0);
        assert_eq!(weighted_pool_sample(&pool, &none, 3, &mut rng), Err(Error::EmptyPoolWeighting));
    }

    #[test]
    fn same_bijection_always_succeeds() {
        let (s, m) = sig();
        let h = reference::systematic().id();
        let b = BeliefState::one_hot(signal::SPACE_ID, 256, h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            assert!(lewis_round(&s, &b, &b, &m, Decoding::SampleThenArgmax, &mut rng).unwrap().1);
        }
    }

    #[test]
    fn degenerate_pair_succeeds_a_quarter_of_the_time() {
        let (s, m) = sig();
        let b = BeliefState::one_hot(signal::SPACE_ID, 256, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let wins =
            (0..n).filter(|_| lewis_round(&s, &b, &b, &m, Decoding::SampleThenArgmax, &mut rng).unwrap().1).count();
        let rate = wins as f64 / n as f64;
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((rate - 0.25).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn one_hot_game_is_a_fixed_point() {
        let (s, _) = sig();
        let m = LikelihoodModel::new(0.05, 4).unwrap();
        let a = BeliefState::one_hot(signal::SPACE_ID, 256, reference::holistic().id()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (out, buf) = run_interaction_game(&s, &a, 50, &m, Decoding::SampleThenArgmax, &mut rng).unwrap();
        assert_eq!(out, a);
        assert!(!buf.is_empty());
        assert!(run_interaction_game(&s, &a, 0, &m, Decoding::SampleThenArgmax, &mut rng).is_err());
    }
}
