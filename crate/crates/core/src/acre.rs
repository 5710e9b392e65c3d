//! The abstract causal reasoning task: a rule assigns every object one of
//! `on`, `off`, `und`, and a subset of objects lights the detector
//! according to the strongest state present.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{posterior_update, BeliefState, LikelihoodModel};
use crate::engine::IlTask;
use crate::error::{Error, Result};
use crate::interaction::EffectiveSet;
use crate::space::{Example, FiniteSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcreState {
    On,
    Off,
    #[serde(alias = "undetermined")]
    Und,
}

impl AcreState {
    pub const ALL: [AcreState; 3] = [AcreState::On, AcreState::Off, AcreState::Und];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Domain(format!("no light state with index {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            AcreState::On => "on",
            AcreState::Off => "off",
            AcreState::Und => "und",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on" => Ok(AcreState::On),
            "off" => Ok(AcreState::Off),
            "und" | "undetermined" => Ok(AcreState::Und),
            other => Err(Error::Domain(format!("unknown light state `{other}`"))),
        }
    }
}

impl fmt::Display for AcreState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One state per object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcreRule {
    pub states: Vec<AcreState>,
}

impl AcreRule {
    pub fn new(states: Vec<AcreState>) -> Self {
        Self { states }
    }

    /// Base-3 index with object 0 as the least significant digit.
    pub fn index(&self) -> usize {
        self.states.iter().rev().fold(0, |acc, s| acc * 3 + s.index())
    }

    pub fn from_index(objects: usize, mut index: usize) -> Result<Self> {
        if index >= 3usize.pow(objects as u32) {
            return Err(Error::Domain(format!("rule index {index} outside 3^{objects}")));
        }
        let mut states = Vec::with_capacity(objects);
        for _ in 0..objects {
            states.push(AcreState::ALL[index % 3]);
            index /= 3;
        }
        Ok(Self { states })
    }

    pub fn with_state(&self, object: usize, state: AcreState) -> Self {
        let mut r = self.clone();
        r.states[object] = state;
        r
    }

    /// `{A:on, B:off, ...}` with the given object names.
    pub fn render(&self, names: &[String]) -> String {
        let parts: Vec<String> = self.states.iter().zip(names).map(|(s, n)| format!("{n}:{s}")).collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// Light state for `input`: on if any object is on, else und if any is
/// und, else off.
pub fn evaluate_rule(rule: &AcreRule, input: &[usize]) -> Result<AcreState> {
    if input.is_empty() {
        return Err(Error::Domain("an input needs at least one object".into()));
    }
    let mut out = AcreState::Off;
    for &o in input {
        let s =
            *rule.states.get(o).ok_or_else(|| Error::Domain(format!("object {o} outside 0..{}", rule.states.len())))?;
        match s {
            AcreState::On => return Ok(AcreState::On),
            AcreState::Und => out = AcreState::Und,
            AcreState::Off => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcreExample {
    pub input: Vec<usize>,
    pub output: AcreState,
}

/// Object names plus the encodings between subsets and input indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcreTask {
    names: Vec<String>,
}

impl AcreTask {
    pub fn with_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > 12 {
            return Err(Error::Domain(format!("object count must lie in 1..=12, got {}", names.len())));
        }
        Ok(Self { names })
    }

    /// Objects `A, B, C, ...`.
    pub fn lettered(objects: usize) -> Result<Self> {
        Self::with_names((0..objects).map(|i| ((b'A' + i as u8) as char).to_string()).collect())
    }

    /// Lettered objects with the last one named `screen`.
    pub fn with_screen(objects: usize) -> Result<Self> {
        let mut t = Self::lettered(objects)?;
        *t.names.last_mut().unwrap() = "screen".into();
        Ok(t)
    }

    pub fn object_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Index of the last object, the one bias experiments target.
    pub fn target(&self) -> usize {
        self.names.len() - 1
    }

    pub fn rule_count(&self) -> usize {
        3usize.pow(self.names.len() as u32)
    }

    pub fn input_count(&self) -> usize {
        (1 << self.names.len()) - 1
    }

    pub fn space_id(&self) -> String {
        format!("acre-{}", self.names.len())
    }

    pub fn space(&self) -> FiniteSpace {
        let m = self.object_count();
        let rules: Vec<AcreRule> = (0..self.rule_count()).map(|i| AcreRule::from_index(m, i).unwrap()).collect();
        FiniteSpace::from_fn(self.space_id(), self.rule_count(), self.input_count(), 3, |h, x| {
            evaluate_rule(&rules[h], &self.decode_input(x)).unwrap().index()
        })
        .expect("rule space is well formed")
    }

    pub fn rule(&self, h: usize) -> Result<AcreRule> {
        AcreRule::from_index(self.object_count(), h)
    }

    pub fn encode_input(&self, objects: &[usize]) -> Result<usize> {
        if objects.is_empty() {
            return Err(Error::Domain("an input needs at least one object".into()));
        }
        let mut mask = 0usize;
        for &o in objects {
            if o >= self.object_count() {
                return Err(Error::Domain(format!("object {o} outside 0..{}", self.object_count())));
            }
            mask |= 1 << o;
        }
        Ok(mask - 1)
    }

    pub fn decode_input(&self, x: usize) -> Vec<usize> {
        let mask = x + 1;
        (0..self.object_count()).filter(|o| mask & (1 << o) != 0).collect()
    }

    pub fn object_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Domain(format!("unknown object `{name}`")))
    }

    pub fn to_example(&self, e: &AcreExample) -> Result<Example> {
        Ok(Example::new(self.encode_input(&e.input)?, e.output.index()))
    }

    pub fn from_example(&self, e: &Example) -> Result<AcreExample> {
        if e.x >= self.input_count() {
            return Err(Error::ExampleOutOfRange { x: e.x, y: e.y });
        }
        Ok(AcreExample { input: self.decode_input(e.x), output: AcreState::from_index(e.y)? })
    }

    pub fn render_example(&self, e: &AcreExample) -> String {
        let names: Vec<&str> = e.input.iter().map(|&o| self.names[o].as_str()).collect();
        format!("([{}], {})", names.join(","), e.output)
    }

    /// Reads a JSON list of `{input: [names], output: "on"|"off"|"und"}`.
    pub fn parse_examples_json(&self, text: &str) -> Result<Vec<AcreExample>> {
        let entries: Vec<ExampleEntry> =
            serde_json::from_str(text).map_err(|e| Error::Domain(format!("malformed example file: {e}")))?;
        entries
            .into_iter()
            .map(|en| {
                let input = en.input.iter().map(|n| self.object_index(n)).collect::<Result<Vec<_>>>()?;
                if input.is_empty() {
                    return Err(Error::Domain("an input needs at least one object".into()));
                }
                Ok(AcreExample { input, output: en.output })
            })
            .collect()
    }

    pub fn examples_json(&self, data: &[AcreExample]) -> String {
        let entries: Vec<ExampleEntry> = data
            .iter()
            .map(|e| ExampleEntry { input: e.input.iter().map(|&o| self.names[o].clone()).collect(), output: e.output })
            .collect();
        serde_json::to_string_pretty(&entries).expect("plain data serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleEntry {
    input: Vec<String>,
    output: AcreState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasLevel {
    VeryLow,
    Low,
    Mild,
    Medium,
    High,
    VeryHigh,
}

impl BiasLevel {
    /// Weakest to strongest.
    pub const ALL: [BiasLevel; 6] =
        [BiasLevel::VeryLow, BiasLevel::Low, BiasLevel::Mild, BiasLevel::Medium, BiasLevel::High, BiasLevel::VeryHigh];

    pub fn beta(self) -> f64 {
        match self {
            BiasLevel::VeryLow => 1.25,
            BiasLevel::Low => 1.6,
            BiasLevel::Mild => 2.5,
            BiasLevel::Medium => 4.0,
            BiasLevel::High => 8.0,
            BiasLevel::VeryHigh => 16.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasLevel::VeryLow => "very_low",
            BiasLevel::Low => "low",
            BiasLevel::Mild => "mild",
            BiasLevel::Medium => "medium",
            BiasLevel::High => "high",
            BiasLevel::VeryHigh => "very_high",
        }
    }
}

/// Multiplies the prior of every rule with `states[target_object] ==
/// target_state` by `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub target_object: usize,
    pub target_state: AcreState,
    pub level: Option<BiasLevel>,
    pub beta: f64,
}

impl BiasSpec {
    pub fn from_level(target_object: usize, level: BiasLevel) -> Self {
        Self { target_object, target_state: AcreState::Off, level: Some(level), beta: level.beta() }
    }

    pub fn with_beta(target_object: usize, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 1.0 {
            return Err(Error::Domain(format!("bias factor must be finite and above 1, got {beta}")));
        }
        Ok(Self { target_object, target_state: AcreState::Off, level: None, beta })
    }
}

pub fn acre_prior(task: &AcreTask, bias: Option<&BiasSpec>) -> Result<BeliefState> {
    let n = task.rule_count();
    let Some(b) = bias else {
        return BeliefState::uniform(task.space_id(), n);
    };
    if b.target_object >= task.object_count() {
        return Err(Error::Domain(format!("bias target {} outside the objects", b.target_object)));
    }
    if !b.beta.is_finite() || b.beta <= 0.0 {
        return Err(Error::Domain(format!("bias factor must be finite and positive, got {}", b.beta)));
    }
    let weights: Vec<f64> = (0..n)
        .map(|h| {
            let r = AcreRule::from_index(task.object_count(), h).unwrap();
            if r.states[b.target_object] == b.target_state {
                b.beta
            } else {
                1.0
            }
        })
        .collect();
    BeliefState::from_weights(task.space_id(), &weights)
}

/// Exact update with the 0/1 likelihood (or ε-noise when `epsilon > 0`).
/// A contradiction reports a minimal inconsistent subset of the data.
pub fn acre_posterior(
    task: &AcreTask,
    space: &FiniteSpace,
    prior: &BeliefState,
    data: &[AcreExample],
    epsilon: f64,
) -> Result<BeliefState> {
    let model = LikelihoodModel::new(epsilon, 3)?;
    let encoded = data.iter().map(|e| task.to_example(e)).collect::<Result<Vec<_>>>()?;
    match posterior_update(prior, &encoded, space, &model) {
        Err(Error::Contradiction) => {
            let supported = |idx: &[usize]| {
                (0..space.hypothesis_count())
                    .any(|h| prior.prob(h) > 0.0 && idx.iter().all(|&i| space.predict(h, encoded[i].x) == encoded[i].y))
            };
            let mut keep: Vec<usize> = (0..data.len()).collect();
            let mut i = 0;
            while i < keep.len() {
                let mut trial = keep.clone();
                trial.remove(i);
                if !supported(&trial) {
                    keep = trial;
                } else {
                    i += 1;
                }
            }
            let listed: Vec<String> = keep.iter().map(|&i| task.render_example(&data[i])).collect();
            Err(Error::InconsistentExamples(listed.join(" ")))
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcreMetrics {
    pub corr_d0: usize,
    pub screen_off: bool,
    pub both: bool,
}

pub fn acre_metrics(final_h: &AcreRule, d0: &[AcreExample], target: usize) -> AcreMetrics {
    let corr_d0 =
        d0.iter().filter(|e| evaluate_rule(final_h, &e.input).map(|s| s == e.output).unwrap_or(false)).count();
    let screen_off = final_h.states.get(target) == Some(&AcreState::Off);
    AcreMetrics { corr_d0, screen_off, both: corr_d0 == d0.len() && screen_off }
}

pub fn write_results_csv<W: Write>(out: W, rows: &[AcreMetrics]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "corr_d0", "screen_off", "both"])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([i.to_string(), r.corr_d0.to_string(), r.screen_off.to_string(), r.both.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcreInteraction {
    #[default]
    ImitationOnly,
    SelfRefine,
    HypoSearch,
}

/// `hypo_search` admits exactly the rules that reproduce all of `d0`;
/// `self_refine` reports the same membership through a noisy channel.
pub fn make_interaction(
    kind: AcreInteraction,
    task: &AcreTask,
    space: &FiniteSpace,
    d0: &[AcreExample],
    flip_prob: f64,
) -> Result<EffectiveSet> {
    if d0.is_empty() {
        return Err(Error::Domain("the interaction filter needs a non-empty d0".into()));
    }
    let encoded = d0.iter().map(|e| task.to_example(e)).collect::<Result<Vec<_>>>()?;
    let mask: Arc<Vec<bool>> = Arc::new((0..space.hypothesis_count()).map(|h| space.consistent(h, &encoded)).collect());
    match kind {
        AcreInteraction::ImitationOnly => Ok(EffectiveSet::Full),
        AcreInteraction::HypoSearch => Ok(EffectiveSet::predicate(move |h| mask[h])),
        AcreInteraction::SelfRefine => EffectiveSet::noisy(move |h| mask[h], flip_prob),
    }
}

/// Likelihood strength of a ground-truth rule: how many objects are `on`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodStrength {
    /// One object on.
    #[default]
    Weak,
    /// Every object except the target on.
    Strong,
}

/// Ground truth for bias experiments: the first `k` objects on, the rest
/// off, and the target undetermined.
pub fn reference_rule(task: &AcreTask, strength: LikelihoodStrength) -> AcreRule {
    let m = task.object_count();
    let target = task.target();
    let on = match strength {
        LikelihoodStrength::Weak => 1,
        LikelihoodStrength::Strong => m - 1,
    };
    let states = (0..m)
        .map(|o| {
            if o == target {
                AcreState::Und
            } else if o < on {
                AcreState::On
            } else {
                AcreState::Off
            }
        })
        .collect();
    AcreRule::new(states)
}

/// Draws `ĥ` with the target not `off`, and `h*` as `ĥ` with the target
/// switched to `off`.
pub fn sample_target_pair<R: Rng + ?Sized>(task: &AcreTask, rng: &mut R) -> (AcreRule, AcreRule) {
    let target = task.target();
    let states = (0..task.object_count())
        .map(|o| {
            if o == target {
                [AcreState::On, AcreState::Und][rng.gen_range(0..2)]
            } else {
                AcreState::ALL[rng.gen_range(0..3)]
            }
        })
        .collect();
    let hat = AcreRule::new(states);
    let star = hat.with_state(target, AcreState::Off);
    (hat, star)
}

/// Inputs on which the two rules light the detector identically.
pub fn shared_inputs(task: &AcreTask, a: &AcreRule, b: &AcreRule) -> Vec<usize> {
    (0..task.input_count())
        .filter(|&x| {
            let input = task.decode_input(x);
            evaluate_rule(a, &input).unwrap() == evaluate_rule(b, &input).unwrap()
        })
        .collect()
}

/// `k` distinct examples explained by both rules.
pub fn sample_shared_examples<R: Rng + ?Sized>(
    task: &AcreTask,
    a: &AcreRule,
    b: &AcreRule,
    k: usize,
    rng: &mut R,
) -> Result<Vec<AcreExample>> {
    let pool = shared_inputs(task, a, b);
    if pool.len() < k {
        return Err(Error::Domain(format!("only {} inputs are explained by both rules, need {k}", pool.len())));
    }
    Ok(pool
        .choose_multiple(rng, k)
        .map(|&x| {
            let input = task.decode_input(x);
            let output = evaluate_rule(a, &input).unwrap();
            AcreExample { input, output }
        })
        .collect())
}

/// An [`IlTask`] over the rule space whose classes are the states of the
/// target object, so class mass reads as `P(target = state)`. Metrics
/// score the selected rule against `d0`.
pub fn il_task(task: &AcreTask, prior: BeliefState, d0: &[AcreExample]) -> Result<IlTask> {
    let space = Arc::new(task.space());
    let initial = d0.iter().map(|e| task.to_example(e)).collect::<Result<Vec<_>>>()?;
    let target = task.target();
    let m = task.object_count();
    let class_names = AcreState::ALL.iter().map(|s| format!("{}:{}", task.names()[target], s)).collect();
    let class_of = (0..task.rule_count()).map(|h| AcreRule::from_index(m, h).unwrap().states[target].index()).collect();
    let d0 = d0.to_vec();
    let metrics = Arc::new(move |selected: Option<usize>, _: &BeliefState| {
        let mut out = BTreeMap::new();
        if let Some(h) = selected {
            let rule = AcreRule::from_index(m, h).unwrap();
            let s = acre_metrics(&rule, &d0, target);
            out.insert("corr_d0".to_string(), s.corr_d0 as f64);
            out.insert("screen_off".to_string(), f64::from(u8::from(s.screen_off)));
            out.insert("both".to_string(), f64::from(u8::from(s.both)));
        }
        out
    });
    Ok(IlTask::new(space, prior, initial).with_classes(class_names, class_of).with_metrics(metrics))
}
