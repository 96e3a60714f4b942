use micod_core::env::{observe, run_episode, BatchDecision, BatchPolicy, Env};
use micod_core::matching::{brute_force_match, km_match};
use micod_core::policy::{FixedDelayPolicy, MatchingPolicy, PoolMatrix, Solver};
use micod_core::scenario::{delayed_dispatch_scenario, generate, load, save, CapacityBin, Level, ScenarioSpec};
use micod_core::{Dataset, Result, RewardMode};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Assigns a random one-to-one subset of the pool and holds a random part of the rest.
struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl BatchPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, env: &Env) -> Result<BatchDecision> {
        let pairs = &env.state().pairs;
        let mut rows: Vec<usize> = (0..pairs.len()).collect();
        rows.shuffle(&mut self.rng);
        let mut used_o = std::collections::HashSet::new();
        let mut used_d = std::collections::HashSet::new();
        let mut d = BatchDecision::default();
        for i in rows {
            let p = &pairs[i];
            if self.rng.random_bool(0.5) && used_o.insert(p.order_id) && used_d.insert(p.driver_id) {
                d.selected.push(i);
            } else if self.rng.random_bool(0.3) {
                d.held.push(i);
            }
        }
        d.selected.sort_unstable();
        d.held.retain(|i| !d.selected.contains(i));
        Ok(d)
    }
}

fn short_dataset(level: Level, bin: CapacityBin, seed: u64) -> Dataset {
    let mut spec = ScenarioSpec::new(level, bin, seed, 0.05);
    spec.episode.episode_length = 120.0;
    generate(&spec).unwrap()
}

fn level_of(i: u8) -> Level {
    [Level::L1, Level::L2, Level::L3, Level::L4][i as usize % 4]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partitions_conserved_under_random_play(seed in 0u64..10_000, lvl in 0u8..4, tdi in any::<bool>()) {
        let ds = short_dataset(level_of(lvl), CapacityBin::Le400, seed);
        let mode = if tdi { RewardMode::Tdi } else { RewardMode::Apd };
        let mut env = Env::reset(&ds, mode, seed).unwrap();
        let mut policy = RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut ret = 0.0;
        loop {
            let sim = env.sim();
            let (open, serving, done, cancelled) = sim.order_partition();
            prop_assert_eq!(open + serving + done + cancelled, sim.ledger().appeared_orders);
            let (idle, busy, departed) = sim.driver_partition();
            prop_assert_eq!(idle + busy + departed, sim.ledger().appeared_drivers);
            let decision = policy.decide(&env).unwrap();
            let r = env.finalize_batch(&decision).unwrap();
            ret += r.reward;
            if r.done {
                break;
            }
        }
        let ledger = env.sim().ledger();
        match mode {
            RewardMode::Tdi => prop_assert_eq!(ret, ledger.sum_income),
            RewardMode::Apd => {
                let expected = -ledger.sum_pickup_distance / 1000.0;
                prop_assert!((ret - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
        let m = env.metrics();
        prop_assert!((0.0..=1.0).contains(&m.cr));
        prop_assert!((0.0..=1.0).contains(&m.order_sr) && (0.0..=1.0).contains(&m.driver_sr));
    }
}

#[test]
fn baselines_produce_one_to_one_decisions() {
    let ds = short_dataset(Level::L3, CapacityBin::Le550, 3);
    for solver in [Solver::Greedy, Solver::Km, Solver::Gs] {
        let mut env = Env::reset(&ds, RewardMode::Apd, 1).unwrap();
        let mut policy = MatchingPolicy::new(solver);
        loop {
            let d = policy.decide(&env).unwrap();
            assert!(micod_core::env::is_one_to_one(env.state(), &d));
            if env.finalize_batch(&d).unwrap().done {
                break;
            }
        }
    }
}

#[test]
fn km_policy_beats_greedy_per_batch_distance() {
    let ds = short_dataset(Level::L2, CapacityBin::Le400, 11);
    let env = Env::reset(&ds, RewardMode::Apd, 0).unwrap();
    let pm = PoolMatrix::build(env.state(), RewardMode::Apd);
    let k = km_match(&pm.matrix);
    if pm.matrix.rows().min(pm.matrix.cols()) <= 8 {
        let b = brute_force_match(&pm.matrix).unwrap();
        assert_eq!(pm.matrix.total(&k), pm.matrix.total(&b));
    }
}

#[test]
fn crafted_scenario_km_and_hold_values() {
    let ds = delayed_dispatch_scenario(4);
    assert_eq!(ds.config.n_batches(), 20);
    let km = run_episode(&ds, RewardMode::Tdi, 0, &mut MatchingPolicy::new(Solver::Km)).unwrap();
    assert_eq!(km.episode_return, 40.0);
    assert_eq!(km.metrics.completed_orders, 4);
    // Waiting three batches per cluster before matching recovers every order.
    let mut delayed = FixedDelayPolicy::new(5).unwrap();
    let out = run_episode(&ds, RewardMode::Tdi, 0, &mut delayed).unwrap();
    assert_eq!(out.episode_return, 80.0);
    assert!(out.metrics.hold_o > 0.0);
}

#[test]
fn fixed_delay_one_is_per_batch_km() {
    let ds = short_dataset(Level::L4, CapacityBin::Le400, 5);
    let a = run_episode(&ds, RewardMode::Tdi, 2, &mut MatchingPolicy::new(Solver::Km)).unwrap();
    let b = run_episode(&ds, RewardMode::Tdi, 2, &mut FixedDelayPolicy::new(1).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn delay_beyond_horizon_matches_once_at_the_end() {
    let ds = short_dataset(Level::L1, CapacityBin::Le400, 8);
    let out = run_episode(&ds, RewardMode::Tdi, 0, &mut FixedDelayPolicy::new(10_000).unwrap()).unwrap();
    let nonzero: Vec<usize> = out.rewards.iter().enumerate().filter(|(_, r)| **r != 0.0).map(|(i, _)| i).collect();
    assert!(nonzero.iter().all(|&i| i + 1 == out.rewards.len()));
}

#[test]
fn saved_dataset_replays_identically() {
    let ds = short_dataset(Level::L2, CapacityBin::Le800, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save(&ds, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, ds);
    let a = run_episode(&ds, RewardMode::Apd, 4, &mut MatchingPolicy::new(Solver::Gs)).unwrap();
    let b = run_episode(&back, RewardMode::Apd, 4, &mut MatchingPolicy::new(Solver::Gs)).unwrap();
    assert_eq!(a, b);
    assert_eq!(observe(&Env::reset(&ds, RewardMode::Apd, 4).unwrap().sim().clone()), *Env::reset(&back, RewardMode::Apd, 4).unwrap().state());
}
