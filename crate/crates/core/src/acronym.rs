//! Acronym brainstorming with a growing data pool.
//!
//! Each example pairs an acronym with a word list spelling it. Acronyms are
//! easy or hard according to their frequency rank, and a small two-latent
//! Bayesian generator stands in for the model that writes new batches.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{weighted_pool_sample, EffectiveSet};

pub const DEFAULT_EASY_THRESHOLD: u32 = 60_000;

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.csv");

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcronymExample {
    pub acronym: String,
    pub words: Vec<String>,
}

impl AcronymExample {
    pub fn new(acronym: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let e = Self { acronym: acronym.into().to_ascii_uppercase(), words };
        e.check()?;
        Ok(e)
    }

    /// One word per letter, each starting with that letter.
    pub fn check(&self) -> Result<()> {
        if self.acronym.is_empty() {
            return Err(Error::Domain("empty acronym".into()));
        }
        let letters: Vec<char> = self.acronym.chars().collect();
        if letters.len() != self.words.len() {
            return Err(Error::Domain(format!(
                "acronym {} has {} letters but {} words",
                self.acronym,
                letters.len(),
                self.words.len()
            )));
        }
        for (c, w) in letters.iter().zip(&self.words) {
            let first = w.chars().next().map(|f| f.to_ascii_uppercase());
            if first != Some(c.to_ascii_uppercase()) {
                return Err(Error::Domain(format!("word `{w}` does not start with {c} in {}", self.acronym)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.acronym.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.acronym.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct RankRow {
    word: String,
    rank: u32,
}

/// Word frequency ranks; lookups ignore case.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    ranks: HashMap<String, u32>,
    easy_threshold: u32,
}

impl FrequencyTable {
    pub fn new(ranks: impl IntoIterator<Item = (String, u32)>, easy_threshold: u32) -> Result<Self> {
        let mut map = HashMap::new();
        for (w, r) in ranks {
            if r == 0 {
                return Err(Error::Domain(format!("rank of `{w}` must be at least 1")));
            }
            map.insert(w.to_lowercase(), r);
        }
        Ok(Self { ranks: map, easy_threshold })
    }

    /// Reads a `word,rank` CSV.
    pub fn from_csv<R: Read>(reader: R, easy_threshold: u32) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, row) in csv::Reader::from_reader(reader).deserialize::<RankRow>().enumerate() {
            let row = row.map_err(|e| Error::Domain(format!("frequency table row {}: {e}", i + 1)))?;
            rows.push((row.word, row.rank));
        }
        Self::new(rows, easy_threshold)
    }

    /// The small lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_LEXICON.as_bytes(), DEFAULT_EASY_THRESHOLD).expect("bundled lexicon parses")
    }

    pub fn easy_threshold(&self) -> u32 {
        self.easy_threshold
    }

    pub fn rank(&self, word: &str) -> Option<u32> {
        self.ranks.get(&word.to_lowercase()).copied()
    }

    pub fn is_easy(&self, word: &str) -> bool {
        self.rank(word).is_some_and(|r| r < self.easy_threshold)
    }

    /// Table rank for easy words; every hard or unknown word counts as
    /// `threshold + 1`.
    pub fn scored_rank(&self, word: &str) -> u32 {
        match self.rank(word) {
            Some(r) if r < self.easy_threshold => r,
            _ => self.easy_threshold + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Words sorted alphabetically, split into the easy and hard strata.
    pub fn strata(&self) -> (Vec<String>, Vec<String>) {
        let mut words: Vec<&String> = self.ranks.keys().collect();
        words.sort();
        let (easy, hard): (Vec<&String>, Vec<&String>) = words.into_iter().partition(|w| self.is_easy(w));
        (easy.into_iter().cloned().collect(), hard.into_iter().cloned().collect())
    }
}

pub fn classify_easy(acronym: &str, table: &FrequencyTable) -> bool {
    table.is_easy(acronym)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub ratio_easy: f64,
    pub avg_rank: f64,
    pub avg_length: f64,
}

pub fn pool_metrics(batch: &[AcronymExample], table: &FrequencyTable) -> Result<PoolMetrics> {
    if batch.is_empty() {
        return Err(Error::Domain("metrics need a non-empty batch".into()));
    }
    let n = batch.len() as f64;
    let easy = batch.iter().filter(|e| classify_easy(&e.acronym, table)).count() as f64;
    let rank: f64 = batch.iter().map(|e| f64::from(table.scored_rank(&e.acronym))).sum();
    let length: f64 = batch.iter().map(|e| e.len() as f64).sum();
    Ok(PoolMetrics { ratio_easy: easy / n, avg_rank: rank / n, avg_length: length / n })
}

/// Parameters of the two-latent generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    /// Prior mass of the easy latent.
    pub prior_easy: f64,
    /// Probability that a prompt example carries the label of the latent
    /// that produced it.
    pub label_fidelity: f64,
    /// Pseudo-count weight of the stratum's own length profile when mixing
    /// in the lengths seen in the prompt.
    pub length_concentration: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self { prior_easy: 0.8, label_fidelity: 0.55, length_concentration: 5.0 }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_easy > 0.0 && self.prior_easy < 1.0) {
            return Err(Error::Domain(format!("prior_easy must lie in (0, 1), got {}", self.prior_easy)));
        }
        if !(self.label_fidelity > 0.0 && self.label_fidelity < 1.0) {
            return Err(Error::Domain(format!("label_fidelity must lie in (0, 1), got {}", self.label_fidelity)));
        }
        if !(self.length_concentration > 0.0 && self.length_concentration.is_finite()) {
            return Err(Error::Domain(format!(
                "length_concentration must be positive, got {}",
                self.length_concentration
            )));
        }
        Ok(())
    }

    /// Posterior mass of the easy latent after reading the prompt labels.
    pub fn posterior_easy(&self, easy_count: usize, hard_count: usize) -> f64 {
        let q = self.label_fidelity;
        let log_odds = (self.prior_easy / (1.0 - self.prior_easy)).ln()
            + (easy_count as f64 - hard_count as f64) * (q / (1.0 - q)).ln();
        1.0 / (1.0 + (-log_odds).exp())
    }
}

/// Easy and hard strata of a table plus the word source for word lists.
#[derive(Debug, Clone)]
pub struct Lexicon {
    easy: BTreeMap<usize, Vec<String>>,
    hard: BTreeMap<usize, Vec<String>>,
    by_initial: BTreeMap<char, Vec<String>>,
}

impl Lexicon {
    pub fn from_table(table: &FrequencyTable) -> Result<Self> {
        let (easy_words, hard_words) = table.strata();
        let bucket = |words: &[String]| {
            let mut m: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for w in words {
                if w.chars().all(|c| c.is_ascii_alphabetic()) {
                    m.entry(w.len()).or_default().push(w.clone());
                }
            }
            m
        };
        let mut by_initial: BTreeMap<char, Vec<String>> = BTreeMap::new();
        for w in easy_words.iter().chain(&hard_words) {
            if let Some(c) = w.chars().next().filter(|c| c.is_ascii_alphabetic()) {
                by_initial.entry(c.to_ascii_uppercase()).or_default().push(w.clone());
            }
        }
        let lex = Self { easy: bucket(&easy_words), hard: bucket(&hard_words), by_initial };
        if lex.easy.is_empty() {
            return Err(Error::EmptyStratum("easy"));
        }
        if lex.hard.is_empty() {
            return Err(Error::EmptyStratum("hard"));
        }
        Ok(lex)
    }

    fn stratum(&self, easy: bool) -> &BTreeMap<usize, Vec<String>> {
        if easy {
            &self.easy
        } else {
            &self.hard
        }
    }

    /// Length profile of a stratum: share of its words at each length.
    pub fn length_profile(&self, easy: bool) -> BTreeMap<usize, f64> {
        let s = self.stratum(easy);
        let total: usize = s.values().map(Vec::len).sum();
        s.iter().map(|(&l, ws)| (l, ws.len() as f64 / total as f64)).collect()
    }

    /// Word list spelling `acronym`, one lexicon word per letter.
    pub fn spell<R: Rng + ?Sized>(&self, acronym: &str, rng: &mut R) -> Result<AcronymExample> {
        let words = acronym
            .chars()
            .map(|c| {
                self.by_initial
                    .get(&c.to_ascii_uppercase())
                    .and_then(|ws| ws.choose(rng))
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("no lexicon word starts with {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        AcronymExample::new(acronym, words)
    }

    fn draw<R: Rng + ?Sized>(&self, easy: bool, lengths: &BTreeMap<usize, f64>, rng: &mut R) -> Result<AcronymExample> {
        let stratum = self.stratum(easy);
        let support: Vec<(usize, f64)> =
            lengths.iter().filter(|(l, _)| stratum.contains_key(l)).map(|(&l, &w)| (l, w)).collect();
        let len = support
            .choose_weighted(rng, |s| s.1)
            .map_err(|_| Error::EmptyStratum(if easy { "easy" } else { "hard" }))?
            .0;
        let word = stratum[&len].choose(rng).expect("length buckets are non-empty");
        self.spell(&word.to_ascii_uppercase(), rng)
    }
}

/// Writes a batch the way the easy/hard latent model would: the latent
/// posterior comes from the prompt labels, every new example draws its own
/// latent from it, and lengths follow the stratum profile blended with the
/// prompt's lengths for that latent.
pub fn mock_generator<R: Rng + ?Sized>(
    prompt: &[AcronymExample],
    batch_size: usize,
    params: &GeneratorParams,
    table: &FrequencyTable,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<Vec<AcronymExample>> {
    if prompt.is_empty() {
        return Err(Error::Domain("the generator needs at least one prompt example".into()));
    }
    params.validate()?;
    let labels: Vec<bool> = prompt.iter().map(|e| classify_easy(&e.acronym, table)).collect();
    let easy_count = labels.iter().filter(|&&b| b).count();
    let p_easy = params.posterior_easy(easy_count, labels.len() - easy_count);

    let blended = |easy: bool| {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        let mut n = 0.0;
        for (e, &label) in prompt.iter().zip(&labels) {
            if label == easy {
                *counts.entry(e.len()).or_default() += 1.0;
                n += 1.0;
            }
        }
        let a = params.length_concentration;
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        for (l, p) in lexicon.length_profile(easy) {
            *out.entry(l).or_default() += a * p / (a + n);
        }
        for (l, c) in counts {
            *out.entry(l).or_default() += c / (a + n);
        }
        out
    };
    let easy_lengths = blended(true);
    let hard_lengths = blended(false);

    (0..batch_size)
        .map(|_| {
            let easy = rng.gen::<f64>() < p_easy;
            lexicon.draw(easy, if easy { &easy_lengths } else { &hard_lengths }, rng)
        })
        .collect()
}

/// Every batch ever produced, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPool {
    generations: Vec<Vec<AcronymExample>>,
}

impl DataPool {
    pub fn push(&mut self, batch: Vec<AcronymExample>) {
        self.generations.push(batch);
    }

    pub fn generations(&self) -> &[Vec<AcronymExample>] {
        &self.generations
    }

    pub fn all(&self) -> Vec<AcronymExample> {
        self.generations.iter().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.generations.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latest(&self) -> Option<&[AcronymExample]> {
        self.generations.last().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolFilter {
    /// The previous batch is the next prompt, no pool sampling.
    ImitationOnly,
    Random,
    Hard,
    Easy,
    /// Easy examples only, weighted by length.
    EasyLong,
    /// Easy examples only, weighted by inverse length.
    EasyShort,
}

impl PoolFilter {
    pub const ALL: [PoolFilter; 6] = [
        PoolFilter::ImitationOnly,
        PoolFilter::Random,
        PoolFilter::Hard,
        PoolFilter::Easy,
        PoolFilter::EasyLong,
        PoolFilter::EasyShort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolFilter::ImitationOnly => "imitation_only",
            PoolFilter::Random => "random",
            PoolFilter::Hard => "hard",
            PoolFilter::Easy => "easy",
            PoolFilter::EasyLong => "easylong",
            PoolFilter::EasyShort => "easyshort",
        }
    }

    /// Pool weighting for the sampling filters; `None` for imitation only.
    pub fn weighting(self, table: &FrequencyTable) -> Option<EffectiveSet<AcronymExample>> {
        let t = table.clone();
        let easy = move |e: &AcronymExample| classify_easy(&e.acronym, &t);
        match self {
            PoolFilter::ImitationOnly => None,
            PoolFilter::Random => Some(EffectiveSet::weighting(|_: &AcronymExample| 1.0)),
            PoolFilter::Hard => Some(EffectiveSet::weighting(move |e: &AcronymExample| f64::from(u8::from(!easy(e))))),
            PoolFilter::Easy => Some(EffectiveSet::weighting(move |e: &AcronymExample| f64::from(u8::from(easy(e))))),
            PoolFilter::EasyLong => {
                Some(EffectiveSet::weighting(move |e: &AcronymExample| if easy(e) { e.len() as f64 } else { 0.0 }))
            }
            PoolFilter::EasyShort => Some(EffectiveSet::weighting(
                move |e: &AcronymExample| {
                    if easy(e) {
                        1.0 / e.len() as f64
                    } else {
                        0.0
                    }
                },
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub generations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Easy examples in the initial batch.
    pub initial_easy: usize,
    pub filter: PoolFilter,
    #[serde(default)]
    pub generator: GeneratorParams,
    pub seed: u64,
}

fn default_batch() -> usize {
    20
}

impl PoolConfig {
    pub fn new(generations: usize, initial_easy: usize, filter: PoolFilter, seed: u64) -> Self {
        Self { generations, batch_size: 20, initial_easy, filter, generator: GeneratorParams::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be positive".into()));
        }
        if self.initial_easy > self.batch_size {
            return Err(Error::Domain(format!(
                "initial_easy {} exceeds batch_size {}",
                self.initial_easy, self.batch_size
            )));
        }
        self.generator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRun {
    pub config: PoolConfig,
    pub pool: DataPool,
    /// Metrics of each batch; entry 0 is the initial batch.
    pub metrics: Vec<PoolMetrics>,
}

impl PoolRun {
    pub fn final_metrics(&self) -> PoolMetrics {
        *self.metrics.last().expect("the initial batch is always recorded")
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "ratio_easy", "avg_rank", "avg_length"])?;
        for (t, m) in self.metrics.iter().enumerate() {
            w.write_record([
                t.to_string(),
                m.ratio_easy.to_string(),
                m.avg_rank.to_string(),
                m.avg_length.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial batch with `initial_easy` easy examples, lengths following each
/// stratum's own profile.
pub fn initial_batch<R: Rng + ?Sized>(
    batch_size: usize,
    initial_easy: usize,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<Vec<AcronymExample>> {
    let mut batch = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let easy = i < initial_easy;
        batch.push(lexicon.draw(easy, &lexicon.length_profile(easy), rng)?);
    }
    batch.shuffle(rng);
    Ok(batch)
}

pub fn run_pool_experiment(config: &PoolConfig, table: &FrequencyTable) -> Result<PoolRun> {
    config.validate()?;
    let lexicon = Lexicon::from_table(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pool = DataPool::default();
    let first = initial_batch(config.batch_size, config.initial_easy, &lexicon, &mut rng)?;
    let mut metrics = vec![pool_metrics(&first, table)?];
    pool.push(first);
    let weighting = config.filter.weighting(table);

    for _ in 0..config.generations {
        let prompt = match &weighting {
            None => pool.latest().expect("pool holds the initial batch").to_vec(),
            Some(eff) => weighted_pool_sample(&pool.all(), eff, config.batch_size, &mut rng)?,
        };
        let batch = mock_generator(&prompt, config.batch_size, &config.generator, table, &lexicon, &mut rng)?;
        metrics.push(pool_metrics(&batch, table)?);
        pool.push(batch);
    }
    Ok(PoolRun { config: config.clone(), pool, metrics })
}
