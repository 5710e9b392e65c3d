//! Generation-level behaviour of the engine and the EM view of it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ilsim::agent::MockAgent;
use ilsim::bayes::{sample_transmission, BeliefState, LikelihoodModel};
use ilsim::em::{em_objective, stochastic_em, EmConfig};
use ilsim::engine::{convergence_generation, run_il, sweep, GenerationConfig, IlTask, Interaction};
use ilsim::interaction::EffectiveSet;
use ilsim::signal::{self, reference, MappingClass};
use ilsim::space::{Example, FiniteSpace};

fn coding_prior() -> BeliefState {
    signal::coding_prior(&signal::enumerate_mappings(), 2.0, &Default::default()).unwrap()
}

/// `argmax_h P0(h) Π p(y | h, x)` over the admitted hypotheses, lowest id
/// first among ties.
fn brute_force_map(
    space: &FiniteSpace,
    prior: &BeliefState,
    data: &[Example],
    eps: f64,
    admit: impl Fn(usize) -> bool,
) -> usize {
    let outputs = space.output_count() as f64;
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for h in (0..space.hypothesis_count()).filter(|&h| admit(h)) {
        let mut score = prior.prob(h);
        for e in data {
            score *= if space.predict(h, e.x) == e.y { 1.0 - eps } else { eps / (outputs - 1.0) };
        }
        if score > best.0 {
            best = (score, h);
        }
    }
    best.1
}

#[test]
fn single_generation_selects_the_posterior_argmax() {
    let space = Arc::new(signal::signal_space());
    let prior = coding_prior();
    let bijective: Vec<bool> = signal::enumerate_mappings().iter().map(|m| m.is_bijective()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let truth = rng.gen_range(0..256);
        let eps = if trial % 2 == 0 { 0.0 } else { 0.05 };
        let model = LikelihoodModel::new(eps, 4).unwrap();
        let d0 = sample_transmission(&space, truth, 200, &model, &mut rng).unwrap();
        let task = IlTask::new(space.clone(), prior.clone(), d0.clone());
        let cfg = GenerationConfig::new(1, 200, eps, trial);
        let mut agent = MockAgent::new(space.clone(), eps).unwrap();

        let traj = run_il(&task, &mut agent, &cfg, &Interaction::None).unwrap();
        let picked = traj.final_record().selected_h.unwrap();
        assert_eq!(picked, brute_force_map(&space, &prior, &d0, eps, |_| true));
        if eps == 0.0 {
            assert_eq!(picked, truth);
        }

        let mask = Arc::new(bijective.clone());
        let m = mask.clone();
        let restricted = Interaction::Filter(EffectiveSet::predicate(move |h| m[h]));
        if bijective[truth] || eps > 0.0 {
            let traj = run_il(&task, &mut agent, &cfg, &restricted).unwrap();
            let picked = traj.final_record().selected_h.unwrap();
            assert_eq!(picked, brute_force_map(&space, &prior, &d0, eps, |h| mask[h]));
        }
    }
}

#[test]
fn bottleneck_sweep_records_convergence() {
    let space = Arc::new(signal::signal_space());
    let model = LikelihoodModel::new(0.05, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let d0 = sample_transmission(&space, reference::holistic().id(), 20, &model, &mut rng).unwrap();
    let labels = signal::class_labels().iter().map(|c| c.index()).collect();
    let names = MappingClass::ALL.iter().map(|c| c.name().to_string()).collect();
    let task = IlTask::new(space.clone(), coding_prior(), d0).with_classes(names, labels);
    let points: Vec<GenerationConfig> = [1, 10, 200].iter().map(|&m| GenerationConfig::new(30, m, 0.05, 0)).collect();

    let run = |_: usize, cfg: &GenerationConfig| {
        let mut agent = MockAgent::new(space.clone(), cfg.epsilon)?;
        run_il(&task, &mut agent, cfg, &Interaction::None)
    };
    let first = sweep(&points, 5, 3, run);
    let again = sweep(&points, 5, 1, run);
    let mut converged: BTreeMap<usize, usize> = BTreeMap::new();
    for ((cfg, a), b) in points.iter().zip(&first).zip(&again) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.records.len(), 30);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let g = convergence_generation(a).expect("MAP runs record a selection");
        assert!((1..=30).contains(&g));
        converged.insert(cfg.transmit, g);
    }
    assert_eq!(converged.len(), 3);
}

/// One exact EM step from `prev`: keep `prev` unless something scores
/// strictly higher, then the lowest id wins.
fn exact_em_step(space: &FiniteSpace, prior: &BeliefState, m: usize, eps: f64, prev: usize) -> usize {
    let mut best = (em_objective(space, prior, m, eps, prev, prev), prev);
    for h in 0..space.hypothesis_count() {
        let v = em_objective(space, prior, m, eps, prev, h);
        if v > best.0 {
            best = (v, h);
        }
    }
    best.1
}

#[test]
fn large_sample_step_matches_the_exact_step() {
    let space = signal::signal_space();
    let prior = coding_prior();
    let eps = 0.05;
    let mut agree = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = rng.gen_range(0..256);
        let cfg = EmConfig::new(10_000, 1, eps, seed);
        let chain = stochastic_em(&space, &prior, None, &cfg, start, &mut rng).unwrap();
        if chain.chain[1] == exact_em_step(&space, &prior, 10_000, eps, start) {
            agree += 1;
        }
    }
    assert!(agree >= 95, "{agree}/100 seeds agree");
}

#[test]
fn single_sample_chain_hovers_near_the_prior_mode() {
    let space = signal::signal_space();
    let prior = coding_prior();
    let labels = signal::class_labels();
    let top = labels[prior.argmax()];
    let mut hits = 0;
    for seed in 0..15 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = prior.sample(&mut rng);
        let chain = stochastic_em(&space, &prior, None, &EmConfig::new(1, 500, 0.05, seed), start, &mut rng).unwrap();
        let mut visits = vec![0usize; 256];
        for &h in &chain.chain[1..] {
            visits[h] += 1;
        }
        let mode = (0..256).max_by_key(|&h| (visits[h], std::cmp::Reverse(h))).unwrap();
        if labels[mode] == top {
            hits += 1;
        }
    }
    assert!(hits > 7, "mode in the top prior class for {hits}/15 seeds");
}

#[test]
fn noiseless_large_samples_hold_the_start() {
    let space = signal::signal_space();
    let prior = coding_prior();
    for start in [reference::holistic().id(), reference::systematic().id(), 77] {
        let mut rng = ChaCha8Rng::seed_from_u64(start as u64);
        let chain = stochastic_em(&space, &prior, None, &EmConfig::new(2_000, 20, 0.0, 0), start, &mut rng).unwrap();
        assert!(chain.chain.iter().all(|&h| h == start), "start {start} drifted");
    }
}
