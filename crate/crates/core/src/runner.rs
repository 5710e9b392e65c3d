//! Experiment configs, single runs, grid sweeps and the quick self-check
//! behind the `ilsim` command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acre::{self, AcreInteraction, AcreState, AcreTask, BiasLevel, BiasSpec, LikelihoodStrength};
use crate::acronym::{self, FrequencyTable, GeneratorParams, PoolConfig, PoolFilter};
use crate::agent::chat::{ChatAgent, ChatDecoding, ChatEndpoint, HttpTransport};
use crate::agent::prompts::BiasSlot;
use crate::agent::{Agent, MockAgent};
use crate::bayes::{sample_transmission, BeliefState, LikelihoodModel};
use crate::engine::{convergence_generation, derive_seed, run_il, GenerationConfig, IlTask, Interaction, Trajectory};
use crate::error::Error;
use crate::interaction::{Decoding, EffectiveSet};
use crate::signal::{self, reference, MappingClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Abort(#[from] Error),
    #[error("io error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Abort(_) => EXIT_ABORT,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Signal,
    Acre,
    Acronym,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Mock,
    Chat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMapping {
    #[default]
    Holistic,
    Degenerate,
    Systematic,
}

impl InitialMapping {
    fn mapping(self) -> signal::SignalMapping {
        match self {
            InitialMapping::Holistic => reference::holistic(),
            InitialMapping::Degenerate => reference::degenerate(),
            InitialMapping::Systematic => reference::systematic(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalInteraction {
    None,
    #[default]
    Lewis,
}

fn default_coding_c() -> f64 {
    2.0
}
fn default_rounds() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSettings {
    /// Divisor `c` in the coding-length prior.
    #[serde(default = "default_coding_c")]
    pub coding_c: f64,
    /// Replace the coding prior by a uniform one.
    #[serde(default)]
    pub uniform_prior: bool,
    /// Mapping that produces the first generation's data.
    #[serde(default)]
    pub initial: InitialMapping,
    #[serde(default)]
    pub interaction: SignalInteraction,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub decoding: Decoding,
}

impl Default for SignalSettings {
    fn default() -> Self {
        Self {
            coding_c: default_coding_c(),
            uniform_prior: false,
            initial: InitialMapping::default(),
            interaction: SignalInteraction::default(),
            rounds: default_rounds(),
            decoding: Decoding::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// A fixed rule with one (weak) or all but the target (strong) objects
    /// on, target undetermined.
    #[default]
    Reference,
    /// A random rule with the target not off, paired with its target-off
    /// twin; d0 holds examples both explain.
    TargetPair,
}

fn default_objects() -> usize {
    5
}
fn default_d0_size() -> usize {
    8
}
fn default_flip() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcreSettings {
    #[serde(default = "default_objects")]
    pub objects: usize,
    #[serde(default)]
    pub strength: LikelihoodStrength,
    #[serde(default)]
    pub bias: Option<BiasLevel>,
    /// Explicit bias factor; overrides the level's default.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub ground_truth: GroundTruth,
    /// JSON d0 file, relative to the config file's directory.
    #[serde(default)]
    pub d0_path: Option<PathBuf>,
    #[serde(default = "default_d0_size")]
    pub d0_size: usize,
    #[serde(default)]
    pub interaction: AcreInteraction,
    #[serde(default = "default_flip")]
    pub flip_prob: f64,
}

impl Default for AcreSettings {
    fn default() -> Self {
        Self {
            objects: default_objects(),
            strength: LikelihoodStrength::default(),
            bias: None,
            beta: None,
            ground_truth: GroundTruth::default(),
            d0_path: None,
            d0_size: default_d0_size(),
            interaction: AcreInteraction::default(),
            flip_prob: default_flip(),
        }
    }
}

fn default_batch() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcronymSettings {
    pub generations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub initial_easy: usize,
    pub filter: PoolFilter,
    #[serde(default)]
    pub generator: GeneratorParams,
    pub seed: u64,
    /// `word,rank` CSV, relative to the config file's directory; the
    /// bundled lexicon when absent.
    #[serde(default)]
    pub frequency_table: Option<PathBuf>,
    #[serde(default)]
    pub easy_threshold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatSettings {
    pub endpoint: ChatEndpoint,
    #[serde(default)]
    pub decoding: ChatDecoding,
    #[serde(default = "default_format_retries")]
    pub format_retries: usize,
}

fn default_format_retries() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub agent: AgentKind,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub generation: Option<GenerationConfig>,
    #[serde(default)]
    pub signal: Option<SignalSettings>,
    #[serde(default)]
    pub acre: Option<AcreSettings>,
    #[serde(default)]
    pub acronym: Option<AcronymSettings>,
    #[serde(default)]
    pub chat: Option<ChatSettings>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let cfg = |e: Error| RunError::Config(e.to_string());
        match self.task {
            TaskKind::Signal | TaskKind::Acre => {
                let g = self
                    .generation
                    .as_ref()
                    .ok_or_else(|| RunError::Config("the [generation] section is required".into()))?;
                g.validate().map_err(cfg)?;
            }
            TaskKind::Acronym => {
                let a = self
                    .acronym
                    .as_ref()
                    .ok_or_else(|| RunError::Config("the [acronym] section is required".into()))?;
                pool_config(a).validate().map_err(cfg)?;
            }
        }
        if let Some(s) = &self.signal {
            if !(s.coding_c > 0.0 && s.coding_c.is_finite()) {
                return Err(RunError::Config(format!("signal.coding_c must be positive, got {}", s.coding_c)));
            }
            if s.interaction == SignalInteraction::Lewis && s.rounds == 0 {
                return Err(RunError::Config("signal.rounds must be positive for the game".into()));
            }
        }
        if let Some(a) = &self.acre {
            if a.objects == 0 || a.objects > 8 {
                return Err(RunError::Config(format!("acre.objects must lie in 1..=8, got {}", a.objects)));
            }
            if a.d0_size == 0 && a.d0_path.is_none() {
                return Err(RunError::Config("acre.d0_size must be positive".into()));
            }
            if let Some(b) = a.beta {
                BiasSpec::with_beta(a.objects - 1, b).map_err(cfg)?;
            }
            if !(0.0..0.5).contains(&a.flip_prob) {
                return Err(RunError::Config(format!("acre.flip_prob must lie in [0, 0.5), got {}", a.flip_prob)));
            }
        }
        if self.agent == AgentKind::Chat {
            if self.task != TaskKind::Acre {
                return Err(RunError::Config("the chat agent is available for the acre task only".into()));
            }
            if self.chat.is_none() {
                return Err(RunError::Config("agent = \"chat\" needs a [chat] section".into()));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        match self.task {
            TaskKind::Acronym => self.acronym.as_ref().map(|a| a.seed).unwrap_or(0),
            _ => self.generation.as_ref().map(|g| g.seed).unwrap_or(0),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self.task {
            TaskKind::Acronym => {
                if let Some(a) = self.acronym.as_mut() {
                    a.seed = seed;
                }
            }
            _ => {
                if let Some(g) = self.generation.as_mut() {
                    g.seed = seed;
                }
            }
        }
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("configs serialize");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn pool_config(a: &AcronymSettings) -> PoolConfig {
    PoolConfig {
        generations: a.generations,
        batch_size: a.batch_size,
        initial_easy: a.initial_easy,
        filter: a.filter,
        generator: a.generator.clone(),
        seed: a.seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub code_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub task: TaskKind,
    pub files: Vec<String>,
    /// Final-generation summary values.
    pub summary: BTreeMap<String, f64>,
}

/// Artifacts of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: BTreeMap<String, f64>,
    pub files: Vec<(String, Vec<u8>)>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory succeeds");
    buf
}

/// Runs the experiment in memory. `base_dir` resolves relative paths.
pub fn execute(config: &ExperimentConfig, base_dir: &Path) -> Result<RunOutput, RunError> {
    config.validate()?;
    match config.task {
        TaskKind::Signal => run_signal(config),
        TaskKind::Acre => run_acre(config, base_dir),
        TaskKind::Acronym => run_acronym(config, base_dir),
    }
}

fn trajectory_files(traj: &Trajectory) -> Result<Vec<(String, Vec<u8>)>, RunError> {
    let json = traj.to_json().map_err(|e| RunError::Io(e.to_string()))?;
    Ok(vec![
        ("trajectory.json".into(), json.into_bytes()),
        ("metrics.csv".into(), csv_bytes(|b| traj.write_metrics_csv(b))),
    ])
}

fn run_signal(config: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let gen = config.generation.clone().expect("validated");
    let settings = config.signal.clone().unwrap_or_default();
    let space = Arc::new(signal::signal_space());
    let prior = if settings.uniform_prior {
        BeliefState::uniform(signal::SPACE_ID, signal::MAPPING_COUNT)?
    } else {
        signal::coding_prior(&signal::enumerate_mappings(), settings.coding_c, &Default::default())?
    };
    let model = LikelihoodModel::for_space(gen.epsilon, &space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gen.seed, u64::MAX));
    let d0 = sample_transmission(&space, settings.initial.mapping().id(), gen.observe_count(), &model, &mut rng)?;
    let classes: Vec<String> = MappingClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let labels = signal::class_labels().iter().map(|c| c.index()).collect();
    let task = IlTask::new(space.clone(), prior, d0).with_classes(classes, labels);
    let interaction = match settings.interaction {
        SignalInteraction::None => Interaction::None,
        SignalInteraction::Lewis => Interaction::Lewis { rounds: settings.rounds, decoding: settings.decoding },
    };
    let mut agent = MockAgent::new(space, gen.epsilon)?;
    let traj = run_il(&task, &mut agent, &gen, &interaction)?;
    let last = traj.final_record();
    let mut summary: BTreeMap<String, f64> =
        traj.class_names.iter().zip(&last.class_mass).map(|(n, m)| (format!("mass_{n}"), *m)).collect();
    summary.insert("entropy".into(), last.entropy);
    if let Some(g) = convergence_generation(&traj) {
        summary.insert("convergence_generation".into(), g as f64);
    }
    Ok(RunOutput { summary, files: trajectory_files(&traj)? })
}

/// The task, ground truth and d0 of an ACRE config.
pub fn acre_setup(
    settings: &AcreSettings,
    seed: u64,
    base_dir: &Path,
) -> Result<(AcreTask, Vec<acre::AcreExample>), RunError> {
    let task = AcreTask::with_screen(settings.objects)?;
    if let Some(p) = &settings.d0_path {
        let path = base_dir.join(p);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let d0 = task.parse_examples_json(&text).map_err(|e| RunError::Config(e.to_string()))?;
        if d0.is_empty() {
            return Err(RunError::Config(format!("{} holds no examples", path.display())));
        }
        return Ok((task, d0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let (a, b) = match settings.ground_truth {
        GroundTruth::Reference => {
            let truth = acre::reference_rule(&task, settings.strength);
            let twin = truth.with_state(task.target(), AcreState::Off);
            (truth, twin)
        }
        GroundTruth::TargetPair => acre::sample_target_pair(&task, &mut rng),
    };
    let d0 = acre::sample_shared_examples(&task, &a, &b, settings.d0_size, &mut rng)?;
    Ok((task, d0))
}

fn run_acre(config: &ExperimentConfig, base_dir: &Path) -> Result<RunOutput, RunError> {
    let gen = config.generation.clone().expect("validated");
    let settings = config.acre.clone().unwrap_or_default();
    let (task, d0) = acre_setup(&settings, gen.seed, base_dir)?;
    let bias = match (settings.beta, settings.bias) {
        (Some(beta), _) => Some(BiasSpec::with_beta(task.target(), beta)?),
        (None, Some(level)) => Some(BiasSpec::from_level(task.target(), level)),
        (None, None) => None,
    };
    let prior = acre::acre_prior(&task, bias.as_ref())?;
    let il = acre::il_task(&task, prior, &d0)?;
    let eff = acre::make_interaction(settings.interaction, &task, &il.space, &d0, settings.flip_prob)?;
    let interaction = match eff {
        EffectiveSet::Full => Interaction::None,
        other => Interaction::Filter(other),
    };
    let mut agent: Box<dyn Agent> = match config.agent {
        AgentKind::Mock => Box::new(MockAgent::new(il.space.clone(), gen.epsilon)?),
        AgentKind::Chat => {
            let chat = config.chat.clone().expect("validated");
            let transport = HttpTransport::new(chat.endpoint, None).map_err(|e| RunError::Config(e.to_string()))?;
            Box::new(
                ChatAgent::new(task.clone(), Box::new(transport), chat.decoding)?
                    .with_bias(settings.bias.map(BiasSlot::for_level))
                    .with_format_retries(chat.format_retries),
            )
        }
    };
    let traj = run_il(&il, agent.as_mut(), &gen, &interaction)?;
    let last = traj.final_record();
    let mut summary = last.metrics.clone();
    summary.insert("entropy".into(), last.entropy);
    summary.insert("p_target_off".into(), last.class_mass[AcreState::Off.index()]);
    let scored =
        last.selected_h.map(|h| task.rule(h).map(|r| acre::acre_metrics(&r, &d0, task.target()))).transpose()?;
    let mut files = trajectory_files(&traj)?;
    files.push(("d0.json".into(), task.examples_json(&d0).into_bytes()));
    if let Some(s) = scored {
        files.push(("results.csv".into(), csv_bytes(|b| acre::write_results_csv(b, &[s]))));
    }
    Ok(RunOutput { summary, files })
}

fn run_acronym(config: &ExperimentConfig, base_dir: &Path) -> Result<RunOutput, RunError> {
    let a = config.acronym.clone().expect("validated");
    let threshold = a.easy_threshold.unwrap_or(acronym::DEFAULT_EASY_THRESHOLD);
    let table = match &a.frequency_table {
        Some(p) => {
            let path = base_dir.join(p);
            let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
            FrequencyTable::from_csv(file, threshold).map_err(|e| RunError::Config(e.to_string()))?
        }
        None if a.easy_threshold.is_some() => {
            let t = FrequencyTable::bundled();
            let ranks: Vec<(String, u32)> = {
                let (easy, hard) = t.strata();
                easy.into_iter().chain(hard).map(|w| (w.clone(), t.rank(&w).unwrap())).collect()
            };
            FrequencyTable::new(ranks, threshold)?
        }
        None => FrequencyTable::bundled(),
    };
    let run = acronym::run_pool_experiment(&pool_config(&a), &table)?;
    let fin = run.final_metrics();
    let summary = BTreeMap::from([
        ("ratio_easy".to_string(), fin.ratio_easy),
        ("avg_rank".to_string(), fin.avg_rank),
        ("avg_length".to_string(), fin.avg_length),
    ]);
    let pool = serde_json::to_string_pretty(&run).map_err(|e| RunError::Io(e.to_string()))?;
    Ok(RunOutput {
        summary,
        files: vec![
            ("pool.json".into(), pool.into_bytes()),
            ("metrics.csv".into(), csv_bytes(|b| run.write_metrics_csv(b))),
        ],
    })
}

/// Runs and writes artifacts plus `manifest.json` under `out_dir`. Nothing
/// is written when the config is invalid.
pub fn cmd_run(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<Manifest, RunError> {
    config.validate()?;
    let output = execute(config, base_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    for (name, bytes) in &output.files {
        let p = out_dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
    }
    let manifest = Manifest {
        tool: "ilsim".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config.hash(),
        seed: config.seed(),
        task: config.task,
        files: output.files.iter().map(|f| f.0.clone()).collect(),
        summary: output.summary,
    };
    let p = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
    fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    Ok(manifest)
}

fn default_replicates() -> usize {
    1
}

/// Grid file: a base experiment plus axes of dotted-path overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Seed every point of a replicate identically, so that points differ
    /// only in their axes. Otherwise each point gets its own seed.
    #[serde(default)]
    pub shared_seeds: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub grid: BTreeMap<String, Vec<toml::Value>>,
    pub base: toml::Table,
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub axes: Vec<(String, toml::Value)>,
    pub replicate: usize,
    pub config: ExperimentConfig,
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), RunError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last =
        parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| RunError::Config(format!("bad grid key `{path}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| RunError::Config(format!("grid key `{path}` crosses a non-table value")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        if cfg.replicates == 0 {
            return Err(RunError::Config("replicates must be positive".into()));
        }
        if cfg.grid.values().any(Vec::is_empty) {
            return Err(RunError::Config("every grid axis needs at least one value".into()));
        }
        Ok(cfg)
    }

    /// Cartesian product of the axes (last axis fastest), each point
    /// repeated `replicates` times. Seeds derive from the master seed and
    /// the point index, or the replicate index with `shared_seeds`.
    pub fn points(&self) -> Result<Vec<SweepPoint>, RunError> {
        let axes: Vec<(&String, &Vec<toml::Value>)> = self.grid.iter().collect();
        let combos: usize = axes.iter().map(|a| a.1.len()).product();
        let mut out = Vec::with_capacity(combos * self.replicates);
        for c in 0..combos {
            let mut rem = c;
            let mut chosen = vec![None; axes.len()];
            for (i, (_, vals)) in axes.iter().enumerate().rev() {
                chosen[i] = Some(vals[rem % vals.len()].clone());
                rem /= vals.len();
            }
            let chosen: Vec<(String, toml::Value)> =
                axes.iter().zip(chosen).map(|((k, _), v)| ((*k).clone(), v.unwrap())).collect();
            for r in 0..self.replicates {
                let index = out.len();
                let mut table = self.base.clone();
                for (k, v) in &chosen {
                    set_path(&mut table, k, v.clone())?;
                }
                let mut config: ExperimentConfig = toml::Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
                let stream = if self.shared_seeds { r } else { index };
                config.set_seed(derive_seed(self.master_seed, stream as u64));
                config.validate()?;
                out.push(SweepPoint { index, axes: chosen.clone(), replicate: r, config });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub outcome: Result<BTreeMap<String, f64>, String>,
    pub resumed: bool,
}

pub struct SweepReport {
    pub results: Vec<PointResult>,
    /// Per group of non-bias axes: whether the final target-off mass never
    /// decreases as the bias grows. Empty when the grid has no bias axis.
    pub bias_monotone: BTreeMap<String, bool>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.outcome.is_err()).count()
    }
}

fn completed(dir: &Path, hash: &str) -> Option<BTreeMap<String, f64>> {
    let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
    let m: Manifest = serde_json::from_str(&text).ok()?;
    (m.config_sha256 == hash).then_some(m.summary)
}

fn bias_rank(axis: &str, v: &toml::Value) -> Option<f64> {
    match axis {
        "acre.bias" => {
            let level: BiasLevel = v.clone().try_into().ok()?;
            Some(level.beta())
        }
        "acre.beta" => v.as_float().or_else(|| v.as_integer().map(|i| i as f64)),
        _ => None,
    }
}

const MONOTONE_TOLERANCE: f64 = 1e-12;

fn monotone_verdicts(results: &[PointResult]) -> BTreeMap<String, bool> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in results {
        let Some((axis, v)) = r.point.axes.iter().find(|(k, _)| k == "acre.bias" || k == "acre.beta") else {
            continue;
        };
        let Some(rank) = bias_rank(axis, v) else { continue };
        let Ok(summary) = &r.outcome else { continue };
        let Some(&p) = summary.get("p_target_off") else { continue };
        let key: Vec<String> = r
            .point
            .axes
            .iter()
            .filter(|(k, _)| k != axis)
            .map(|(k, v)| format!("{k}={}", value_label(v)))
            .chain(std::iter::once(format!("replicate={}", r.point.replicate)))
            .collect();
        groups.entry(key.join(";")).or_default().push((rank, p));
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v.windows(2).all(|w| w[1].1 >= w[0].1 - MONOTONE_TOLERANCE))
        })
        .collect()
}

/// Runs every grid point under `out_dir/point-NNN`, skipping points whose
/// manifest already matches, then writes `summary.csv`.
pub fn cmd_sweep(
    sweep: &SweepConfig,
    base_dir: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<SweepReport, RunError> {
    let points = sweep.points()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let job = || -> Vec<PointResult> {
        points
            .par_iter()
            .map(|p| {
                let dir = out_dir.join(format!("point-{:03}", p.index));
                if let Some(summary) = completed(&dir, &p.config.hash()) {
                    return PointResult { point: p.clone(), outcome: Ok(summary), resumed: true };
                }
                let outcome = cmd_run(&p.config, base_dir, &dir).map(|m| m.summary).map_err(|e| {
                    warn!("point {} failed: {e}", p.index);
                    e.to_string()
                });
                PointResult { point: p.clone(), outcome, resumed: false }
            })
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    };
    let bias_monotone = monotone_verdicts(&results);
    let report = SweepReport { results, bias_monotone };
    write_summary(&report, &sweep.grid, &out_dir.join("summary.csv"))?;
    info!("sweep finished: {} points, {} failed", report.results.len(), report.failures());
    Ok(report)
}

fn write_summary(report: &SweepReport, grid: &BTreeMap<String, Vec<toml::Value>>, path: &Path) -> Result<(), RunError> {
    let mut metric_names: Vec<String> =
        report.results.iter().filter_map(|r| r.outcome.as_ref().ok()).flat_map(|s| s.keys().cloned()).collect();
    metric_names.sort();
    metric_names.dedup();
    let has_bias = grid.contains_key("acre.bias") || grid.contains_key("acre.beta");
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = vec!["point".into()];
    header.extend(grid.keys().cloned());
    header.extend(["replicate", "seed", "status"].map(String::from));
    header.extend(metric_names.iter().cloned());
    if has_bias {
        header.push("bias_monotone".into());
    }
    let csv_err = |e: csv::Error| io_err(path, e);
    w.write_record(&header).map_err(csv_err)?;
    let verdicts = monotone_verdicts(&report.results);
    for r in &report.results {
        let mut row = vec![r.point.index.to_string()];
        row.extend(r.point.axes.iter().map(|(_, v)| value_label(v)));
        row.push(r.point.replicate.to_string());
        row.push(r.point.config.seed().to_string());
        row.push(match &r.outcome {
            Ok(_) if r.resumed => "resumed".into(),
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        });
        for name in &metric_names {
            row.push(r.outcome.as_ref().ok().and_then(|s| s.get(name)).map(|v| format!("{v:?}")).unwrap_or_default());
        }
        if has_bias {
            let key: Vec<String> = r
                .point
                .axes
                .iter()
                .filter(|(k, _)| k != "acre.bias" && k != "acre.beta")
                .map(|(k, v)| format!("{k}={}", value_label(v)))
                .chain(std::iter::once(format!("replicate={}", r.point.replicate)))
                .collect();
            row.push(verdicts.get(&key.join(";")).map(|b| b.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Faults that `cmd_check` can be asked to inject into its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale the prior under test to total 0.9.
    BrokenPrior,
}

/// Fast sanity checks: normalization, entropy, and oracle equivalence on
/// small spaces.
pub fn cmd_check(fault: Option<Fault>) -> Vec<CheckResult> {
    use crate::bayes::{entropy, posterior_update};
    use crate::em::{em_reference, restricted_argmax_set, EmConfig};
    use rand::Rng;

    let mut out = Vec::new();
    let mut push = |name, passed, detail: String| out.push(CheckResult { name, passed, detail });

    let prior = signal::coding_prior(&signal::enumerate_mappings(), 1.0, &Default::default());
    match prior {
        Ok(p) => {
            let mut probs = p.probs();
            if fault == Some(Fault::BrokenPrior) {
                probs.iter_mut().for_each(|v| *v *= 0.9);
            }
            let total: f64 = probs.iter().sum();
            push("prior normalization", (total - 1.0).abs() < 1e-9, format!("coding prior total {total:.12}"));
        }
        Err(e) => push("prior normalization", false, e.to_string()),
    }

    let mut counts = [0usize; 4];
    for c in signal::class_labels() {
        counts[c.index()] += 1;
    }
    let want = [4, 16, 8, 228];
    let idx = |c: MappingClass| c.index();
    let got = [
        counts[idx(MappingClass::Degenerate)],
        counts[idx(MappingClass::Holistic)],
        counts[idx(MappingClass::Systematic)],
        counts[idx(MappingClass::Other)],
    ];
    push("mapping classes", got == want, format!("degenerate/holistic/systematic/other = {got:?}"));

    let uni = BeliefState::uniform("u", 256).expect("uniform belief");
    let h = entropy(&uni);
    let one = BeliefState::one_hot("u", 256, 3).expect("one-hot belief");
    let ok = (h - 256f64.ln()).abs() < 1e-12 && entropy(&one) == 0.0;
    push("entropy", ok, format!("uniform {h:.12} nats, one-hot {}", entropy(&one)));

    let task = AcreTask::lettered(3).expect("three objects");
    let space = task.space();
    let model = LikelihoodModel::new(0.1, 3).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let weights: Vec<f64> = (0..27).map(|_| rng.gen_range(0.01..1.0)).collect();
        let p = BeliefState::from_weights(task.space_id(), &weights).expect("weights");
        let data: Vec<_> = (0..rng.gen_range(0..6))
            .map(|_| crate::space::Example::new(rng.gen_range(0..7), rng.gen_range(0..3)))
            .collect();
        let post = match posterior_update(&p, &data, &space, &model) {
            Ok(b) => b,
            Err(_) => continue,
        };
        let joint: Vec<f64> = (0..27)
            .map(|h| {
                data.iter().fold(p.prob(h), |acc, e| {
                    acc * if space.predict(h, e.x) == e.y { model.matched() } else { model.mismatched() }
                })
            })
            .collect();
        let z: f64 = joint.iter().sum();
        for (h, j) in joint.iter().enumerate() {
            worst = worst.max((post.prob(h) - j / z).abs());
        }
    }
    push("posterior oracle (27 rules)", worst < 1e-10, format!("max deviation {worst:.2e}"));

    let sig_space = signal::signal_space();
    let mask: Vec<bool> = signal::enumerate_mappings().iter().map(|m| m.is_bijective()).collect();
    let coding = signal::coding_prior(&signal::enumerate_mappings(), 1.0, &Default::default()).expect("prior");
    match em_reference(&sig_space, &coding, Some(&mask), &EmConfig::new(1, 50, 0.05, 0)) {
        Ok(trace) => {
            let best = restricted_argmax_set(&coding, Some(&mask));
            let class = signal::classify(&signal::SignalMapping::from_id(trace.fixed_point).expect("id"));
            push(
                "EM over bijections",
                class == MappingClass::Systematic && best.contains(&trace.fixed_point),
                format!("fixed point {} ({})", trace.fixed_point, class.name()),
            );
        }
        Err(e) => push("EM over bijections", false, e.to_string()),
    }
    out
}

/// Reads a config file and returns it with its directory.
pub fn read_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), RunError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok((cfg, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}
