//! The generation loop: imitation, interaction and transmission, recorded
//! as a [`Trajectory`].

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use log::debug;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::bayes::{apply_temperature, entropy, BeliefState};
use crate::error::{Error, Result};
use crate::interaction::{filter_membership, run_interaction_game, Decoding, EffectiveSet};
use crate::space::{Example, FiniteSpace};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmissionMode {
    /// Select one hypothesis, then sample every example from it.
    #[default]
    MapThenSample,
    /// Sample every example from the posterior predictive.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub generations: usize,
    /// Examples emitted per generation (the bottleneck).
    pub transmit: usize,
    /// Examples the next generation observes; defaults to `transmit`.
    #[serde(default)]
    pub observe: Option<usize>,
    pub epsilon: f64,
    /// Sampling temperature used whenever the agent draws hypotheses (game
    /// rounds, marginal transmission). MAP selection is unaffected.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub mode: TransmissionMode,
    pub seed: u64,
    /// Start each generation from the previous posterior instead of the prior.
    #[serde(default)]
    pub carry_over: bool,
    #[serde(default = "default_true")]
    pub record_posterior: bool,
}

fn default_tau() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl GenerationConfig {
    pub fn new(generations: usize, transmit: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            generations,
            transmit,
            observe: None,
            epsilon,
            tau: 1.0,
            mode: TransmissionMode::MapThenSample,
            seed,
            carry_over: false,
            record_posterior: true,
        }
    }

    pub fn observe_count(&self) -> usize {
        self.observe.unwrap_or(self.transmit)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::Domain("generation count must be at least 1".into()));
        }
        if self.transmit == 0 {
            return Err(Error::Domain("transmission count must be at least 1".into()));
        }
        if self.observe_count() == 0 {
            return Err(Error::Domain("observation count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Domain(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Domain(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// What happens between imitation and transmission.
#[derive(Debug, Clone, Default)]
pub enum Interaction {
    #[default]
    None,
    Filter(EffectiveSet),
    Lewis {
        rounds: usize,
        decoding: Decoding,
    },
}

impl Interaction {
    pub fn describe(&self) -> String {
        match self {
            Interaction::None => "none".into(),
            Interaction::Filter(EffectiveSet::Full) => "filter:full".into(),
            Interaction::Filter(EffectiveSet::Predicate(_)) => "filter:predicate".into(),
            Interaction::Filter(EffectiveSet::NoisyPredicate { flip_prob, .. }) => {
                format!("filter:noisy_predicate({flip_prob})")
            }
            Interaction::Filter(EffectiveSet::DataWeighting(_)) => "filter:data_weighting".into(),
            Interaction::Lewis { rounds, decoding } => format!("lewis({rounds},{decoding:?})"),
        }
    }
}

pub type MetricsFn = Arc<dyn Fn(Option<usize>, &BeliefState) -> BTreeMap<String, f64> + Send + Sync>;

/// A task bound to one hypothesis space: prior, initial data and the
/// classification used for class-mass summaries.
#[derive(Clone)]
pub struct IlTask {
    pub space: Arc<FiniteSpace>,
    pub prior: BeliefState,
    pub initial_data: Vec<Example>,
    pub class_names: Vec<String>,
    pub class_of: Vec<usize>,
    pub metrics: Option<MetricsFn>,
}

impl IlTask {
    pub fn new(space: Arc<FiniteSpace>, prior: BeliefState, initial_data: Vec<Example>) -> Self {
        let n = space.hypothesis_count();
        Self { space, prior, initial_data, class_names: vec!["all".into()], class_of: vec![0; n], metrics: None }
    }

    pub fn with_classes(mut self, names: Vec<String>, class_of: Vec<usize>) -> Self {
        self.class_names = names;
        self.class_of = class_of;
        self
    }

    pub fn with_metrics(mut self, f: MetricsFn) -> Self {
        self.metrics = Some(f);
        self
    }

    fn validate(&self) -> Result<()> {
        self.prior.check_space(&self.space)?;
        for e in &self.initial_data {
            self.space.check_example(e)?;
        }
        if self.class_of.len() != self.space.hypothesis_count() {
            return Err(Error::Domain("classifier must label every hypothesis".into()));
        }
        if let Some(c) = self.class_of.iter().find(|&&c| c >= self.class_names.len()) {
            return Err(Error::Domain(format!("class index {c} has no name")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// `None` in marginal transmission mode.
    pub selected_h: Option<usize>,
    pub entropy: f64,
    pub class_mass: Vec<f64>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<f64>>,
    /// Successful rounds of the referential game, when one was played.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_successes: Option<usize>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub space_id: String,
    pub config: GenerationConfig,
    pub interaction: String,
    pub class_names: Vec<String>,
    pub initial_data: Vec<Example>,
    pub records: Vec<GenerationRecord>,
}

impl Trajectory {
    pub fn final_record(&self) -> &GenerationRecord {
        self.records.last().expect("a trajectory has at least one generation")
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Per-generation CSV: generation, entropy, one column per class, one per
    /// metric (sorted by name), and the selected hypothesis id (empty in
    /// marginal mode).
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let metric_names: Vec<String> =
            self.records.first().map(|r| r.metrics.keys().cloned().collect()).unwrap_or_default();
        let mut header = vec!["generation".to_string(), "entropy".to_string()];
        header.extend(self.class_names.iter().map(|c| format!("mass_{c}")));
        header.extend(metric_names.iter().cloned());
        header.push("selected_h".into());
        w.write_record(&header)?;
        for r in &self.records {
            let num = |v: &f64| format!("{v:?}");
            let mut row = vec![r.generation.to_string(), num(&r.entropy)];
            row.extend(r.class_mass.iter().map(num));
            row.extend(metric_names.iter().map(|k| r.metrics.get(k).map(num).unwrap_or_default()));
            row.push(r.selected_h.map(|h| h.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior mass per class, indexed by class.
pub fn class_mass(belief: &BeliefState, class_of: &[usize], classes: usize) -> Result<Vec<f64>> {
    if class_of.len() != belief.len() {
        return Err(Error::Domain(format!(
            "classifier covers {} hypotheses, belief has {}",
            class_of.len(),
            belief.len()
        )));
    }
    let mut mass = vec![0.0; classes];
    for (h, &c) in class_of.iter().enumerate() {
        if c >= classes {
            return Err(Error::Domain(format!("class index {c} out of range")));
        }
        mass[c] += belief.prob(h);
    }
    Ok(mass)
}

/// Zeroes every hypothesis outside the admitted mask and renormalizes.
pub fn restrict(belief: &BeliefState, mask: &[bool]) -> Result<BeliefState> {
    let logs: Vec<f64> =
        belief.log_probs().iter().zip(mask).map(|(&lp, &keep)| if keep { lp } else { f64::NEG_INFINITY }).collect();
    BeliefState::from_log_weights(belief.space_id().to_string(), logs).map_err(|e| match e {
        Error::Contradiction => Error::InfeasibleEffectiveSet,
        other => other,
    })
}

fn observed(data: &[Example], n: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    if n >= data.len() {
        return data.to_vec();
    }
    let mut picks = index::sample(rng, data.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| data[i]).collect()
}

/// Runs `config.generations` generations of iterated learning.
pub fn run_il(
    task: &IlTask,
    agent: &mut dyn Agent,
    config: &GenerationConfig,
    interaction: &Interaction,
) -> Result<Trajectory> {
    config.validate()?;
    task.validate()?;
    if agent.space().id() != task.space.id() || agent.space().hypothesis_count() != task.space.hypothesis_count() {
        return Err(Error::SpaceMismatch { expected: task.space.id().into(), found: agent.space().id().into() });
    }
    if let Interaction::Lewis { rounds: 0, .. } = interaction {
        return Err(Error::Domain("the interaction game needs at least one round".into()));
    }
    if let Interaction::Filter(EffectiveSet::DataWeighting(_)) = interaction {
        return Err(Error::EffectiveSetMisuse("data weighting filters examples, not hypotheses"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_hyp = task.space.hypothesis_count();
    let mut data = task.initial_data.clone();
    let mut carried: Option<BeliefState> = None;
    let mut records = Vec::with_capacity(config.generations);

    for t in 1..=config.generations {
        let abort = |e: Error| Error::GenerationAborted { generation: t, source: Box::new(e) };
        let start = match (&carried, config.carry_over) {
            (Some(b), true) => b.clone(),
            _ => task.prior.clone(),
        };
        let seen = observed(&data, config.observe_count(), &mut rng);
        let mut belief = agent.propose(&start, &seen).map_err(abort)?;

        let mut comm_successes = None;
        let mut selection_filter = EffectiveSet::Full;
        match interaction {
            Interaction::None => {}
            Interaction::Filter(eff @ EffectiveSet::Predicate(_)) => {
                let mask = eff.exact_mask(n_hyp)?.expect("predicate yields a mask");
                belief = restrict(&belief, &mask).map_err(abort)?;
            }
            Interaction::Filter(eff @ EffectiveSet::NoisyPredicate { .. }) => {
                if config.mode == TransmissionMode::Marginal {
                    let mut mask = Vec::with_capacity(n_hyp);
                    for h in 0..n_hyp {
                        mask.push(filter_membership(eff, h, &mut rng)?);
                    }
                    belief = restrict(&belief, &mask).map_err(abort)?;
                } else {
                    selection_filter = eff.clone();
                }
            }
            Interaction::Filter(_) => {}
            Interaction::Lewis { rounds, decoding } => {
                // Alice and Bob speak and listen at the sampling temperature;
                // the update on the game buffer is exact.
                let speaker = apply_temperature(&belief, config.tau)?;
                let (_, buf) = run_interaction_game(&task.space, &speaker, *rounds, agent.model(), *decoding, &mut rng)
                    .map_err(abort)?;
                comm_successes = Some(buf.len());
                belief = agent.propose(&belief, buf.examples()).map_err(abort)?;
            }
        }

        let (selected_h, emitted) = match config.mode {
            TransmissionMode::MapThenSample => {
                let h = agent.refine(&belief, &selection_filter, &mut rng).map_err(abort)?;
                (Some(h), agent.generate(h, config.transmit, &mut rng).map_err(abort)?)
            }
            TransmissionMode::Marginal => {
                let sampler = apply_temperature(&belief, config.tau)?;
                (None, agent.generate_marginal(&sampler, config.transmit, &mut rng).map_err(abort)?)
            }
        };

        let metrics = task.metrics.as_ref().map(|f| f(selected_h, &belief)).unwrap_or_default();
        let ent = entropy(&belief);
        debug!("generation {t}: selected {selected_h:?}, entropy {ent:.4}");
        records.push(GenerationRecord {
            generation: t,
            selected_h,
            entropy: ent,
            class_mass: class_mass(&belief, &task.class_of, task.class_names.len())?,
            metrics,
            posterior: config.record_posterior.then(|| belief.probs()),
            comm_successes,
            examples: emitted.clone(),
        });
        data = emitted;
        carried = Some(belief);
    }

    Ok(Trajectory {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        space_id: task.space.id().to_string(),
        config: config.clone(),
        interaction: interaction.describe(),
        class_names: task.class_names.clone(),
        initial_data: task.initial_data.clone(),
        records,
    })
}

/// Per-point seed derived from a master seed and a grid index (SplitMix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every grid point with a seed derived from `(master_seed, index)`.
/// Results keep grid order; a failing point does not stop its siblings.
pub fn sweep<T, F>(points: &[GenerationConfig], master_seed: u64, workers: usize, run: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize, &GenerationConfig) -> Result<T> + Sync,
{
    let job = || {
        points
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let mut cfg = cfg.clone();
                cfg.seed = derive_seed(master_seed, i as u64);
                run(i, &cfg)
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// First generation from which the selected hypothesis never changes again.
pub fn convergence_generation(traj: &Trajectory) -> Option<usize> {
    let last = traj.records.last()?.selected_h?;
    let mut gen = traj.records.last()?.generation;
    for r in traj.records.iter().rev() {
        if r.selected_h != Some(last) {
            break;
        }
        gen = r.generation;
    }
    Some(gen)
}
