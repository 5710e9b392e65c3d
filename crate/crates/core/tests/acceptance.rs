//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL`
//! line with the numbers behind the verdict.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ilsim::acre::{self, AcreInteraction, AcreState, AcreTask, BiasLevel};
use ilsim::acronym::{run_pool_experiment, FrequencyTable, PoolConfig, PoolFilter};
use ilsim::agent::chat::{synthetic_rule_exchange, RecordedCall, ReplayTransport};
use ilsim::agent::posterior::{extract_rule_posterior, DEFAULT_FLOOR};
use ilsim::agent::MockAgent;
use ilsim::bayes::{posterior_update, BeliefState, LikelihoodModel};
use ilsim::em::{em_reference_from, il_em_agreement, restricted_argmax_set, AgreementConfig, EmConfig};
use ilsim::engine::{run_il, GenerationConfig, Interaction, Trajectory};
use ilsim::interaction::EffectiveSet;
use ilsim::runner::{cmd_run, execute, ExperimentConfig};
use ilsim::signal::{self, MappingClass, SignalMapping};
use ilsim::space::{Example, FiniteSpace};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n} ... {}  {detail}", if pass { "PASS" } else { "FAIL" });
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("valid config")
}

fn trajectory(cfg: &ExperimentConfig) -> Option<Trajectory> {
    let out = execute(cfg, Path::new(".")).ok()?;
    let (_, bytes) = out.files.iter().find(|f| f.0 == "trajectory.json")?;
    Some(Trajectory::from_json(std::str::from_utf8(bytes).unwrap()).unwrap())
}

// Signaling dynamics.

fn signal_config(seed: u64, initial: &str, interaction: &str, uniform: bool) -> ExperimentConfig {
    config(&format!(
        r#"
task = "signal"
[generation]
generations = 40
transmit = 20
epsilon = 0.05
tau = 10.0
seed = {seed}
[signal]
coding_c = 2.0
uniform_prior = {uniform}
initial = "{initial}"
interaction = "{interaction}"
rounds = 200
"#
    ))
}

/// Final class masses of every seed, indexed like `MappingClass::ALL`.
fn final_masses(seeds: u64, initial: &str, interaction: &str, uniform: bool) -> Vec<Vec<f64>> {
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            trajectory(&signal_config(s, initial, interaction, uniform))
                .expect("signal run")
                .final_record()
                .class_mass
                .clone()
        })
        .collect()
}

fn class_medians(runs: &[Vec<f64>]) -> Vec<f64> {
    (0..MappingClass::ALL.len()).map(|k| median(runs.iter().map(|m| m[k]).collect())).collect()
}

fn dominates(medians: &[f64], class: MappingClass) -> bool {
    let k = class.index();
    medians.iter().enumerate().all(|(j, &m)| j == k || medians[k] > m)
}

#[test]
fn criterion_1_signaling_dynamics() {
    const SEEDS: u64 = 15;
    let start = Instant::now();
    let sys = MappingClass::Systematic.index();
    let mut parts = Vec::new();
    let mut pass = true;

    for (label, initial) in [("a", "holistic"), ("b", "degenerate")] {
        let runs = final_masses(SEEDS, initial, "lewis", false);
        let frac = runs.iter().filter(|m| m[sys] > 0.5).count() as f64 / SEEDS as f64;
        let med = class_medians(&runs);
        let ok = frac >= 0.8 && dominates(&med, MappingClass::Systematic);
        pass &= ok;
        parts.push(format!("({label}) sys>0.5 in {:.0}% median {:?}", frac * 100.0, rounded(&med)));
    }

    let med = class_medians(&final_masses(SEEDS, "holistic", "none", false));
    let ok = dominates(&med, MappingClass::Degenerate);
    pass &= ok;
    parts.push(format!("(c) median {:?}", rounded(&med)));

    let med = class_medians(&final_masses(SEEDS, "holistic", "lewis", true));
    pass &= med[sys] < 0.5;
    parts.push(format!("(d) median sys {:.3}", med[sys]));

    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 120.0;
    report(1, pass, format!("{} in {elapsed:.1}s", parts.join("; ")));
    assert!(pass, "signaling dynamics: {}", parts.join("; "));
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

// Imitation-only IL against stochastic EM.

#[test]
fn criterion_2_il_em_agreement() {
    let start = Instant::now();
    let space = Arc::new(signal::signal_space());
    let mappings = signal::enumerate_mappings();
    let labels: Vec<usize> = signal::class_labels().iter().map(|c| c.index()).collect();
    let prior = signal::coding_prior(&mappings, 2.0, &Default::default()).unwrap();
    let cfg =
        AgreementConfig { m: 200, generations: 40, seeds: 20, master_seed: 7, il_epsilon: 0.05, em_epsilon: 0.05 };
    let agreement = il_em_agreement(space.clone(), &prior, &labels, &cfg).unwrap();

    let mask: Vec<bool> = mappings.iter().map(SignalMapping::is_bijective).collect();
    let best = restricted_argmax_set(&prior, Some(&mask));
    // Brute force over the bijections.
    let top = (0..256).filter(|&h| mask[h]).map(|h| prior.log_prob(h)).fold(f64::NEG_INFINITY, f64::max);
    let brute: Vec<usize> = (0..256).filter(|&h| mask[h] && prior.log_prob(h) == top).collect();
    let mut fixed_ok =
        best == brute && brute.iter().all(|&h| signal::classify(&mappings[h]) == MappingClass::Systematic);
    let mut fixed_points = Vec::new();
    for startpoint in (0..256).filter(|&h| mask[h]) {
        let trace = em_reference_from(&space, &prior, Some(&mask), &EmConfig::new(1, 50, 0.05, 0), startpoint).unwrap();
        fixed_ok &= brute.contains(&trace.fixed_point);
        fixed_points.push(trace.fixed_point);
    }
    fixed_points.sort_unstable();
    fixed_points.dedup();

    let elapsed = start.elapsed().as_secs_f64();
    let pass = agreement.same_class >= 0.9 && fixed_ok && elapsed < 60.0;
    report(
        2,
        pass,
        format!(
            "class agreement {:.0}%, bijective EM fixed points {fixed_points:?} (brute-force argmax {brute:?}) in {elapsed:.1}s",
            agreement.same_class * 100.0
        ),
    );
    assert!(pass);
}

// Posterior against direct summation.

fn signal_predict(h: usize, x: usize) -> usize {
    (h >> (2 * (3 - x))) & 3
}

fn acre_predict(objects: usize, h: usize, x: usize) -> usize {
    let mask = x + 1;
    let state = |o: usize| (h / 3usize.pow(o as u32)) % 3;
    let present: Vec<usize> = (0..objects).filter(|o| mask >> o & 1 == 1).map(state).collect();
    if present.contains(&0) {
        0
    } else if present.contains(&2) {
        2
    } else {
        1
    }
}

fn direct_posterior(
    prior: &[f64],
    data: &[Example],
    eps: f64,
    outputs: usize,
    predict: impl Fn(usize, usize) -> usize,
) -> Vec<f64> {
    let joint: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(h, p)| {
            data.iter()
                .fold(*p, |acc, e| acc * if predict(h, e.x) == e.y { 1.0 - eps } else { eps / (outputs - 1) as f64 })
        })
        .collect();
    let z: f64 = joint.iter().sum();
    joint.iter().map(|j| j / z).collect()
}

fn random_instance(space: &FiniteSpace, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Example>, f64) {
    let n = space.hypothesis_count();
    let sparse = rng.gen_bool(0.3);
    let mut w: Vec<f64> =
        (0..n).map(|_| if sparse && rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.01..1.0) }).collect();
    w[rng.gen_range(0..n)] = 1.0;
    let z: f64 = w.iter().sum();
    let prior: Vec<f64> = w.iter().map(|v| v / z).collect();
    let eps = [0.01, 0.05, 0.1, 0.3][rng.gen_range(0..4)];
    let k = rng.gen_range(0..12);
    let data = (0..k)
        .map(|_| Example::new(rng.gen_range(0..space.input_count()), rng.gen_range(0..space.output_count())))
        .collect();
    (prior, data, eps)
}

#[test]
fn criterion_3_posterior_exactness() {
    let signal_space = signal::signal_space();
    let acre_task = AcreTask::lettered(3).unwrap();
    let acre_space = acre_task.space();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for (space, predict) in [
        (&signal_space, Box::new(signal_predict) as Box<dyn Fn(usize, usize) -> usize>),
        (&acre_space, Box::new(|h, x| acre_predict(3, h, x))),
    ] {
        for _ in 0..100 {
            let (prior_probs, data, eps) = random_instance(space, &mut rng);
            let prior = BeliefState::from_probs(space.id(), &prior_probs).unwrap();
            let model = LikelihoodModel::for_space(eps, space).unwrap();
            let post = posterior_update(&prior, &data, space, &model).unwrap().probs();
            let oracle = direct_posterior(&prior_probs, &data, eps, space.output_count(), &predict);
            for (a, b) in post.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
            instances += 1;
        }
    }
    let pass = worst <= 1e-10;
    report(3, pass, format!("{instances} instances, max abs deviation {worst:.2e}"));
    assert!(pass);
}

// ACRE runs with the mock agent.

/// Bottleneck for the convergence runs: wide enough that a generation
/// usually sees every object alone at least once.
const CONVERGENCE_TRANSMIT: usize = 40;
/// Bottleneck for the bias and interaction runs, where prior and data
/// should still compete.
const COMPETING_TRANSMIT: usize = 20;

fn acre_config(seed: u64, transmit: usize, strength: &str, bias: Option<BiasLevel>) -> ExperimentConfig {
    let bias = bias.map(|b| format!("bias = \"{}\"\n", b.name())).unwrap_or_default();
    config(&format!(
        r#"
task = "acre"
[generation]
generations = 6
transmit = {transmit}
epsilon = 0.0
seed = {seed}
[acre]
objects = 5
strength = "{strength}"
d0_size = 8
{bias}"#
    ))
}

#[test]
fn criterion_4_entropy_convergence() {
    let runs: Vec<Option<Trajectory>> = (0..10)
        .into_par_iter()
        .map(|s| trajectory(&acre_config(s, CONVERGENCE_TRANSMIT, "weak", Some(BiasLevel::Medium))))
        .collect();
    let done: Vec<&Trajectory> = runs.iter().flatten().collect();
    let finals: Vec<f64> = done.iter().map(|t| t.final_record().entropy).collect();
    let low = finals.iter().filter(|&&e| e < 0.1).count();
    let decreasing = done.iter().filter(|t| t.final_record().entropy < t.records[0].entropy).count();
    let pass = low * 10 >= 8 * runs.len() && decreasing == done.len();
    report(
        4,
        pass,
        format!(
            "final entropy < 0.1 in {low}/{}, decreasing in {decreasing}/{} non-aborted; finals {:?}",
            runs.len(),
            done.len(),
            rounded(&finals)
        ),
    );
    assert!(pass);
}

fn p_target_off(seed: u64, strength: &str, level: BiasLevel) -> f64 {
    let out = execute(&acre_config(seed, COMPETING_TRANSMIT, strength, Some(level)), Path::new(".")).expect("acre run");
    out.summary["p_target_off"]
}

#[test]
fn criterion_5_bias_ordering() {
    let mut weak = Vec::new();
    let mut strong = Vec::new();
    for level in BiasLevel::ALL {
        let w: Vec<f64> = (0..10).into_par_iter().map(|s| p_target_off(s, "weak", level)).collect();
        let st: Vec<f64> = (0..10).into_par_iter().map(|s| p_target_off(s, "strong", level)).collect();
        weak.push(median(w));
        strong.push(median(st));
    }
    let monotone = weak.windows(2).all(|w| w[1] >= w[0]);
    let dominates = weak.iter().zip(&strong).all(|(w, s)| w >= s);
    let pass = monotone && dominates;
    report(5, pass, format!("weak {:?} strong {:?} (very_low to very_high)", rounded(&weak), rounded(&strong)));
    assert!(pass);
}

#[test]
fn criterion_6_interaction_ordering() {
    let task = AcreTask::with_screen(5).unwrap();
    let space = Arc::new(task.space());
    let kinds = [AcreInteraction::ImitationOnly, AcreInteraction::SelfRefine, AcreInteraction::HypoSearch];
    let mut corr: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut aborted = [0usize; 3];
    for r in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
        let (hat, star) = acre::sample_target_pair(&task, &mut rng);
        let d0 = acre::sample_shared_examples(&task, &hat, &star, 8, &mut rng).expect("eight shared examples");
        for (k, kind) in kinds.into_iter().enumerate() {
            for s in 0..5u64 {
                let eff = acre::make_interaction(kind, &task, &space, &d0, 0.15).unwrap();
                let interaction = match eff {
                    EffectiveSet::Full => Interaction::None,
                    other => Interaction::Filter(other),
                };
                let il = acre::il_task(&task, acre::acre_prior(&task, None).unwrap(), &d0).unwrap();
                let mut agent = MockAgent::new(il.space.clone(), 0.0).unwrap();
                let cfg = GenerationConfig::new(6, COMPETING_TRANSMIT, 0.0, s * 77 + r);
                match run_il(&il, &mut agent, &cfg, &interaction) {
                    Ok(t) => corr.entry(k).or_default().push(t.final_record().metrics["corr_d0"]),
                    Err(_) => aborted[k] += 1,
                }
            }
        }
    }
    let med: Vec<f64> = (0..3).map(|k| median(corr.get(&k).cloned().unwrap_or_default())).collect();
    let hypo = &corr[&2];
    let hypo_full = hypo.iter().filter(|&&c| c == 8.0).count();
    let pass = med[2] >= med[1] && med[1] >= med[0] && hypo_full == hypo.len();
    report(
        6,
        pass,
        format!(
            "median corr_d0 imitation {} self_refine {} hypo_search {}; hypo_search 8/8 in {hypo_full}/{}; aborted {aborted:?}",
            med[0],
            med[1],
            med[2],
            hypo.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_acronym_filters() {
    let start = Instant::now();
    let table = FrequencyTable::bundled();
    let mut pass = true;
    let mut parts = Vec::new();
    for initial_easy in [2, 10] {
        let mut med = BTreeMap::new();
        for filter in PoolFilter::ALL {
            let finals: Vec<_> = (0..4)
                .map(|s| {
                    run_pool_experiment(&PoolConfig::new(6, initial_easy, filter, s), &table).unwrap().final_metrics()
                })
                .collect();
            med.insert(
                filter.name(),
                (
                    median(finals.iter().map(|m| m.ratio_easy).collect()),
                    median(finals.iter().map(|m| m.avg_rank).collect()),
                    median(finals.iter().map(|m| m.avg_length).collect()),
                ),
            );
        }
        let (easy, random, hard) = (med["easy"], med["random"], med["hard"]);
        let ok =
            easy.0 >= random.0 && random.0 >= hard.0 && med["easylong"].2 > med["easyshort"].2 && hard.1 > random.1;
        pass &= ok;
        parts.push(format!(
            "N_e={initial_easy}: ratio easy {:.3} random {:.3} hard {:.3}, length easy_long {:.2} easy_short {:.2}, rank hard {:.0} random {:.0}",
            easy.0, random.0, hard.0, med["easylong"].2, med["easyshort"].2, hard.1, random.1
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 60.0;
    report(7, pass, format!("{} in {elapsed:.1}s", parts.join("; ")));
    assert!(pass);
}

// Chat adapter contracts.

#[derive(serde::Deserialize)]
struct Fixture {
    objects: usize,
    cases: Vec<FixtureCase>,
}

#[derive(serde::Deserialize)]
struct FixtureCase {
    call: RecordedCall,
    rule: String,
}

fn product_oracle(candidates: &[Vec<(AcreState, f64)>], h: usize) -> f64 {
    let mut p = 1.0;
    let mut rest = h;
    for cands in candidates {
        let state = AcreState::from_index(rest % 3).unwrap();
        rest /= 3;
        p *= cands.iter().find(|c| c.0 == state).map(|c| c.1).unwrap_or(DEFAULT_FLOOR);
    }
    p
}

fn synthetic_worst_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let objects = rng.gen_range(1..=5);
        let task = AcreTask::lettered(objects).unwrap();
        let candidates: Vec<Vec<(AcreState, f64)>> = (0..objects)
            .map(|_| {
                let mut states = AcreState::ALL.to_vec();
                if rng.gen_bool(0.3) {
                    states.remove(rng.gen_range(0..3));
                }
                let w: Vec<f64> = states.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
                let z: f64 = w.iter().sum::<f64>() * rng.gen_range(1.0..1.1);
                states.into_iter().zip(w).map(|(s, v)| (s, v / z)).collect()
            })
            .collect();
        let chosen: Vec<AcreState> = candidates.iter().map(|c| c[0].0).collect();
        let ex = synthetic_rule_exchange(&task, &chosen, &candidates, rng.gen_range(0.5..1.0));
        let post = extract_rule_posterior(&ex, &task).unwrap();
        let raw: Vec<f64> = (0..task.rule_count()).map(|h| product_oracle(&candidates, h)).collect();
        let total: f64 = raw.iter().sum();
        worst = worst.max((post.raw_total - total).abs());
        for (h, r) in raw.iter().enumerate() {
            worst = worst.max((post.raw_prob(h) - r).abs());
            worst = worst.max((post.belief.prob(h) - r / total).abs());
        }
    }
    worst
}

fn fixture_replays() -> (usize, bool) {
    use ilsim::agent::chat::{parse_response, ChatDecoding, ChatMessage, ChatTransport};
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/chat_replay.json")).unwrap();
    let fixture: Fixture = serde_json::from_str(&text).unwrap();
    let task = AcreTask::with_screen(fixture.objects).unwrap();
    let calls: Vec<RecordedCall> = fixture.cases.iter().map(|c| c.call.clone()).collect();
    let mut replay = ReplayTransport::new(calls);
    let mut ok = true;
    for case in &fixture.cases {
        let messages: Vec<ChatMessage> = serde_json::from_value(case.call.request["messages"].clone()).unwrap();
        let ex = replay.complete(&messages, &ChatDecoding::default()).unwrap();
        ok &= ex == parse_response(&messages, &case.call.response).unwrap();
        let wire = &case.call.response["choices"][0];
        ok &= ex.reply() == wire["message"]["content"].as_str();
        let tokens = ex.logprobs.as_ref().unwrap();
        let wire_tokens = wire["logprobs"]["content"].as_array().unwrap();
        ok &= tokens.len() == wire_tokens.len();
        for (t, w) in tokens.iter().zip(wire_tokens) {
            ok &= t.token == w["token"].as_str().unwrap();
            ok &= t.logprob.to_bits() == w["logprob"].as_f64().unwrap().to_bits();
            for (c, wc) in t.top_logprobs.iter().zip(w["top_logprobs"].as_array().unwrap()) {
                ok &= c.logprob.to_bits() == wc["logprob"].as_f64().unwrap().to_bits();
            }
        }
        let post = extract_rule_posterior(&ex, &task).unwrap();
        ok &= post.stated_rule.render(task.names()) == case.rule;
    }
    (fixture.cases.len(), ok)
}

#[path = "support/stub.rs"]
mod stub;

#[test]
fn criterion_8_adapter_contracts() {
    let worst = synthetic_worst_deviation();
    let (fixtures, replay_ok) = fixture_replays();
    let retry = stub::retry_contract();
    let pass = worst <= 1e-12 && replay_ok && retry.is_ok();
    report(
        8,
        pass,
        format!(
            "product oracle max deviation {worst:.2e}; {fixtures} fixtures replay {}; stub retries {}",
            if replay_ok { "bit-identical" } else { "DIFFER" },
            retry.as_ref().map(|_| "as specified".to_string()).unwrap_or_else(|e| e.clone())
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        ("signal", signal_config(5, "holistic", "lewis", false)),
        ("acre", acre_config(5, COMPETING_TRANSMIT, "weak", Some(BiasLevel::Medium))),
        (
            "acronym",
            config(
                "task = \"acronym\"\n[acronym]\ngenerations = 6\ninitial_easy = 2\nfilter = \"easy_long\"\nseed = 5\n",
            ),
        ),
    ];
    let mut identical = Vec::new();
    for (name, cfg) in &configs {
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        cmd_run(cfg, Path::new("."), &a).unwrap();
        cmd_run(cfg, Path::new("."), &b).unwrap();
        let same = std::fs::read(a.join("metrics.csv")).unwrap() == std::fs::read(b.join("metrics.csv")).unwrap();
        identical.push(format!("{name} {}", if same { "identical" } else { "DIFFER" }));
    }
    let pass = identical.iter().all(|s| s.ends_with("identical"));
    report(9, pass, format!("metrics.csv repeated runs: {}", identical.join(", ")));
    assert!(pass);
}
