//! Two-layer decision process over the simulator.
//!
//! The outer layer steps once per batch: it observes `s = (I_g, I_p)`, the
//! global demand/supply summary and the pool of eligible pairs, and earns
//! the batch reward once the whole batch action is finished. The inner
//! layer builds that batch action one sub-action at a time: either hold
//! (end the batch, deferring everything left) or pick one pair, which
//! removes every pair sharing its driver or order.

use std::collections::HashMap;

use crate::domain::{cell_of, DriverId, EpisodeConfig, OdPair, Order, OrderId, RewardMode};
use crate::error::{Error, Result};
use crate::scenario::Dataset;
use crate::sim::{episode_metrics, IdleDriver, MetricsReport, SimState};

/// Width of a pair feature row.
pub const N_PAIR_FEATURES: usize = 12;

const PRICE_SCALE: f64 = 20.0;
const WAIT_SCALE: f64 = 60.0;
const TRIP_SCALE: f64 = 600.0;
const CELL_COUNT_SCALE: f64 = 5.0;
const TOTAL_COUNT_SCALE: f64 = 20.0;
/// APD rewards are reported in kilometers.
const APD_REWARD_SCALE: f64 = 1.0 / 1000.0;

/// Length of the global information vector for a grid.
pub fn global_dim(cfg: &EpisodeConfig) -> usize {
    4 + 2 * cfg.n_cells()
}

/// Observation at a batch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterState {
    /// Demand and supply summary: totals, ratio, batch progress, then
    /// per-cell demand and per-cell supply.
    pub global: Vec<f64>,
    /// Eligible pairs, sorted by order id then driver id.
    pub pairs: Vec<OdPair>,
    pub batch: usize,
    pub n_batches: usize,
}

impl OuterState {
    pub fn pool_size(&self) -> usize {
        self.pairs.len()
    }

    /// Starting sub-state of the inner layer.
    pub fn sub_state(&self) -> SubState<'_> {
        SubState { base: self, selected: Vec::new(), remaining: vec![true; self.pairs.len()] }
    }
}

/// Inner-layer sub-action. `choice` is absent exactly when holding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubAction {
    pub hold: bool,
    pub choice: Option<usize>,
}

impl SubAction {
    pub const HOLD: SubAction = SubAction { hold: true, choice: None };

    pub fn select(row: usize) -> Self {
        SubAction { hold: false, choice: Some(row) }
    }
}

/// Partially built batch action.
#[derive(Clone, Debug, PartialEq)]
pub struct SubState<'a> {
    pub base: &'a OuterState,
    /// Chosen pool rows, in selection order.
    pub selected: Vec<usize>,
    /// Rows still available for selection.
    pub remaining: Vec<bool>,
}

impl SubState<'_> {
    pub fn n_remaining(&self) -> usize {
        self.remaining.iter().filter(|r| **r).count()
    }

    pub fn remaining_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.remaining.iter().enumerate().filter(|(_, r)| **r).map(|(i, _)| i)
    }

    pub fn is_legal(&self, a: &SubAction) -> bool {
        match (a.hold, a.choice) {
            (true, None) => true,
            (false, Some(c)) => self.remaining.get(c).copied().unwrap_or(false),
            (false, None) => self.n_remaining() == 0,
            (true, Some(_)) => false,
        }
    }
}

/// Outcome of one inner transition.
#[derive(Clone, Debug, PartialEq)]
pub enum InnerStep<'a> {
    Continue(SubState<'a>),
    BatchEnd(BatchDecision),
}

/// Complete batch action: rows to assign and rows deferred by a hold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchDecision {
    pub selected: Vec<usize>,
    pub held: Vec<usize>,
}

pub fn apply_subaction<'a>(mut u: SubState<'a>, a: SubAction) -> Result<InnerStep<'a>> {
    if !u.is_legal(&a) {
        return Err(Error::IllegalAction(format!("{a:?} with {} rows remaining", u.n_remaining())));
    }
    if a.hold {
        let held = u.remaining_rows().collect();
        return Ok(InnerStep::BatchEnd(BatchDecision { selected: u.selected, held }));
    }
    if let Some(c) = a.choice {
        let chosen = &u.base.pairs[c];
        for (row, pair) in u.base.pairs.iter().enumerate() {
            if pair.driver_id == chosen.driver_id || pair.order_id == chosen.order_id {
                u.remaining[row] = false;
            }
        }
        u.selected.push(c);
    }
    if u.n_remaining() == 0 {
        return Ok(InnerStep::BatchEnd(BatchDecision { selected: u.selected, held: Vec::new() }));
    }
    Ok(InnerStep::Continue(u))
}

/// Per-cell counts and clocks shared by every pair feature row of a batch.
pub struct FeatureContext<'a> {
    cfg: &'a EpisodeConfig,
    clock: f64,
    batch_fraction: f64,
    demand: Vec<usize>,
    supply: Vec<usize>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(sim: &'a SimState) -> Self {
        let cfg = sim.config();
        let mut demand = vec![0; cfg.n_cells()];
        let mut supply = vec![0; cfg.n_cells()];
        for o in sim.open_orders() {
            demand[cell_index(cfg, o)] += 1;
        }
        for d in sim.idle_drivers() {
            supply[driver_cell(cfg, d)] += 1;
        }
        Self {
            cfg,
            clock: sim.clock(),
            batch_fraction: sim.batch_index() as f64 / cfg.n_batches() as f64,
            demand,
            supply,
        }
    }

    pub fn features(&self, driver: &IdleDriver, order: &Order) -> Vec<f64> {
        let pickup = driver.position.distance(&order.origin);
        let wait = (self.clock - order.appear_time).max(0.0);
        let patience_left = ((order.patience - wait) / order.patience).clamp(0.0, 1.0);
        let idle_time = (self.clock - driver.idle_since).max(0.0);
        let origin = cell_index(self.cfg, order);
        let here = driver_cell(self.cfg, driver);
        let origin_demand = self.demand[origin] as f64;
        let origin_supply = self.supply[origin] as f64;
        vec![
            pickup / self.cfg.radius,
            order.price / PRICE_SCALE,
            wait / WAIT_SCALE,
            patience_left,
            idle_time / WAIT_SCALE,
            order.trip_duration / TRIP_SCALE,
            origin_demand / CELL_COUNT_SCALE,
            origin_supply / CELL_COUNT_SCALE,
            self.supply[here] as f64 / CELL_COUNT_SCALE,
            origin_demand / (origin_supply + 1.0),
            self.batch_fraction,
            1.0,
        ]
    }

    pub fn global(&self) -> Vec<f64> {
        let demand: usize = self.demand.iter().sum();
        let supply: usize = self.supply.iter().sum();
        let mut g = Vec::with_capacity(global_dim(self.cfg));
        g.push(demand as f64 / TOTAL_COUNT_SCALE);
        g.push(supply as f64 / TOTAL_COUNT_SCALE);
        g.push(demand as f64 / supply.max(1) as f64);
        g.push(self.batch_fraction);
        g.extend(self.demand.iter().map(|&c| c as f64 / CELL_COUNT_SCALE));
        g.extend(self.supply.iter().map(|&c| c as f64 / CELL_COUNT_SCALE));
        g
    }
}

fn cell_index(cfg: &EpisodeConfig, o: &Order) -> usize {
    cfg.cell_index(cell_of(cfg.clamp(o.origin), cfg).expect("clamped into fence"))
}

fn driver_cell(cfg: &EpisodeConfig, d: &IdleDriver) -> usize {
    cfg.cell_index(cell_of(cfg.clamp(d.position), cfg).expect("clamped into fence"))
}

/// Feature row of one eligible pair.
pub fn features_of(driver: &IdleDriver, order: &Order, sim: &SimState) -> Vec<f64> {
    FeatureContext::new(sim).features(driver, order)
}

/// Builds `s = (I_g, I_p)` from the simulator.
pub fn observe(sim: &SimState) -> OuterState {
    let ctx = FeatureContext::new(sim);
    let radius = sim.config().radius;
    let pairs = sim
        .eligible_pairs(radius)
        .into_iter()
        .map(|(d, o)| {
            let driver = sim.idle_driver(d).expect("eligible driver is idle");
            let order = sim.open_order(o).expect("eligible order is open");
            OdPair {
                order_id: o,
                driver_id: d,
                pickup_distance: driver.position.distance(&order.origin),
                price: order.price,
                features: ctx.features(driver, order),
            }
        })
        .collect();
    OuterState { global: ctx.global(), pairs, batch: sim.batch_index(), n_batches: sim.config().n_batches() }
}

/// Result of closing a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub reward: f64,
    pub done: bool,
    pub assigned: usize,
    pub held: usize,
}

/// One episode of the outer process.
#[derive(Clone, Debug)]
pub struct Env {
    sim: SimState,
    reward_mode: RewardMode,
    state: OuterState,
}

impl Env {
    pub fn reset(dataset: &Dataset, reward_mode: RewardMode, seed: u64) -> Result<Self> {
        let sim = SimState::new(dataset, seed)?;
        let state = observe(&sim);
        Ok(Self { sim, reward_mode, state })
    }

    pub fn state(&self) -> &OuterState {
        &self.state
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    pub fn is_done(&self) -> bool {
        self.sim.is_done()
    }

    /// Executes a finished batch action and observes the next state.
    ///
    /// Inner transitions earn nothing; the batch reward arrives here.
    pub fn finalize_batch(&mut self, decision: &BatchDecision) -> Result<BatchResult> {
        let pairs = &self.state.pairs;
        let row = |i: usize| -> Result<&OdPair> {
            pairs.get(i).ok_or_else(|| Error::IllegalAction(format!("row {i} outside pool of {}", pairs.len())))
        };
        let assignments: Vec<(DriverId, OrderId)> =
            decision.selected.iter().map(|&i| row(i).map(|p| (p.driver_id, p.order_id))).collect::<Result<_>>()?;
        let held: Vec<(DriverId, OrderId)> =
            decision.held.iter().map(|&i| row(i).map(|p| (p.driver_id, p.order_id))).collect::<Result<_>>()?;
        let outcome = self.sim.step_batch(&assignments, &held)?;
        let reward = match self.reward_mode {
            RewardMode::Tdi => outcome.income,
            RewardMode::Apd => -outcome.pickup_distance * APD_REWARD_SCALE,
        };
        let done = self.sim.is_done();
        if done {
            self.sim.finish();
        }
        self.state = observe(&self.sim);
        Ok(BatchResult { reward, done, assigned: outcome.assigned, held: held.len() })
    }

    pub fn metrics(&self) -> MetricsReport {
        episode_metrics(self.sim.ledger())
    }
}

/// Anything that can produce a complete batch action from the current state.
pub trait BatchPolicy {
    fn name(&self) -> String;

    fn decide(&mut self, env: &Env) -> Result<BatchDecision>;

    /// Called before each episode.
    fn reset(&mut self) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub episode_return: f64,
    pub rewards: Vec<f64>,
    pub metrics: MetricsReport,
}

/// Runs `policy` for a full episode (undiscounted return).
pub fn run_episode(dataset: &Dataset, reward_mode: RewardMode, seed: u64, policy: &mut dyn BatchPolicy) -> Result<EpisodeOutcome> {
    let mut env = Env::reset(dataset, reward_mode, seed)?;
    policy.reset();
    let mut rewards = Vec::with_capacity(dataset.config.n_batches());
    let mut episode_return = 0.0;
    loop {
        let decision = policy.decide(&env)?;
        let r = env.finalize_batch(&decision)?;
        episode_return += r.reward;
        rewards.push(r.reward);
        if r.done {
            break;
        }
    }
    Ok(EpisodeOutcome { episode_return, rewards, metrics: env.metrics() })
}

/// Checks one-to-one structure of a batch action against its pool.
pub fn is_one_to_one(state: &OuterState, decision: &BatchDecision) -> bool {
    let mut drivers: HashMap<DriverId, ()> = HashMap::new();
    let mut orders: HashMap<OrderId, ()> = HashMap::new();
    decision.selected.iter().all(|&i| {
        let p = &state.pairs[i];
        drivers.insert(p.driver_id, ()).is_none() && orders.insert(p.order_id, ()).is_none()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Driver, Location};
    use crate::scenario::Event;

    fn driver(id: u32, x: f64, t: f64) -> Event {
        Event::Driver(Driver { id: DriverId(id), position: Location::new(x, 0.0), appear_time: t, offline_hazard: 0.0 })
    }

    fn order(id: u32, x: f64, t: f64, price: f64) -> Event {
        Event::Order(Order {
            id: OrderId(id),
            origin: Location::new(x, 0.0),
            destination: Location::new(x, 100.0),
            price,
            appear_time: t,
            patience: 60.0,
            trip_duration: 30.0,
        })
    }

    fn ds(events: Vec<Event>, mode: RewardMode) -> Dataset {
        let mut d = Dataset {
            config: EpisodeConfig { reward_mode: mode, ..EpisodeConfig::default() },
            scale_factor: 1.0,
            events,
        };
        d.sort_events();
        d
    }

    fn state_2x2() -> OuterState {
        let env = Env::reset(
            &ds(vec![driver(1, 0.0, 0.0), driver(2, 10.0, 0.0), order(1, 0.0, 0.0, 1.0), order(2, 10.0, 0.0, 1.0)], RewardMode::Tdi),
            RewardMode::Tdi,
            0,
        )
        .unwrap();
        env.state().clone()
    }

    #[test]
    fn reset_on_empty_dataset() {
        let env = Env::reset(&ds(vec![], RewardMode::Tdi), RewardMode::Tdi, 0).unwrap();
        assert!(env.state().pairs.is_empty());
        assert_eq!(env.state().global.len(), global_dim(&EpisodeConfig::default()));
    }

    #[test]
    fn reset_builds_cross_product_pool() {
        let env = Env::reset(
            &ds(
                vec![
                    driver(0, 0.0, 0.0),
                    driver(1, 100.0, 0.5),
                    driver(2, 200.0, 1.0),
                    order(0, 50.0, 0.0, 3.0),
                    order(1, 150.0, 1.9, 4.0),
                ],
                RewardMode::Tdi,
            ),
            RewardMode::Tdi,
            3,
        )
        .unwrap();
        assert_eq!(env.state().pairs.len(), 6);
        for p in &env.state().pairs {
            assert_eq!(p.features.len(), N_PAIR_FEATURES);
        }
        let again = Env::reset(&ds(vec![driver(0, 0.0, 0.0), order(0, 50.0, 0.0, 3.0)], RewardMode::Tdi), RewardMode::Tdi, 3).unwrap();
        let twice = Env::reset(&ds(vec![driver(0, 0.0, 0.0), order(0, 50.0, 0.0, 3.0)], RewardMode::Tdi), RewardMode::Tdi, 3).unwrap();
        assert_eq!(again.state(), twice.state());
    }

    #[test]
    fn feature_examples() {
        let env = Env::reset(
            &ds(vec![driver(0, 0.0, 0.0), driver(1, 3000.0, 0.0), order(0, 0.0, 0.0, 5.0)], RewardMode::Tdi),
            RewardMode::Tdi,
            0,
        )
        .unwrap();
        let pairs = &env.state().pairs;
        let colocated = pairs.iter().find(|p| p.driver_id == DriverId(0)).unwrap();
        assert_eq!(colocated.features[0], 0.0);
        assert_eq!(colocated.features[2], 0.0);
        assert_eq!(colocated.features[3], 1.0);
        assert_eq!(colocated.features[11], 1.0);
        let at_radius = pairs.iter().find(|p| p.driver_id == DriverId(1)).unwrap();
        assert_eq!(at_radius.features[0], 1.0);
    }

    #[test]
    fn choosing_a_pair_removes_conflicting_rows() {
        let s = state_2x2();
        let ids: Vec<_> = s.pairs.iter().map(|p| (p.driver_id.0, p.order_id.0)).collect();
        assert_eq!(ids, vec![(1, 1), (2, 1), (1, 2), (2, 2)]);
        match apply_subaction(s.sub_state(), SubAction::select(0)).unwrap() {
            InnerStep::Continue(u) => assert_eq!(u.remaining_rows().collect::<Vec<_>>(), vec![3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn immediate_hold_holds_everything() {
        let s = state_2x2();
        match apply_subaction(s.sub_state(), SubAction::HOLD).unwrap() {
            InnerStep::BatchEnd(d) => {
                assert!(d.selected.is_empty());
                assert_eq!(d.held, vec![0, 1, 2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_disjoint_choices_exhaust_the_pool() {
        let s = state_2x2();
        let u = match apply_subaction(s.sub_state(), SubAction::select(0)).unwrap() {
            InnerStep::Continue(u) => u,
            other => panic!("unexpected {other:?}"),
        };
        match apply_subaction(u, SubAction::select(3)).unwrap() {
            InnerStep::BatchEnd(d) => {
                assert_eq!(d.selected, vec![0, 3]);
                assert!(d.held.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn masked_choice_is_illegal() {
        let s = state_2x2();
        let u = match apply_subaction(s.sub_state(), SubAction::select(0)).unwrap() {
            InnerStep::Continue(u) => u,
            other => panic!("unexpected {other:?}"),
        };
        assert!(matches!(apply_subaction(u.clone(), SubAction::select(1)), Err(Error::IllegalAction(_))));
        assert!(matches!(apply_subaction(u, SubAction { hold: true, choice: Some(3) }), Err(Error::IllegalAction(_))));
    }

    #[test]
    fn rewards_per_mode() {
        let events = vec![driver(0, 0.0, 0.0), driver(1, 5000.0, 0.0), order(0, 500.0, 0.0, 10.0), order(1, 3500.0, 0.0, 15.0)];
        let mut env = Env::reset(&ds(events.clone(), RewardMode::Tdi), RewardMode::Tdi, 0).unwrap();
        let rows: Vec<usize> = env
            .state()
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| (p.driver_id.0, p.order_id.0) == (0, 0) || (p.driver_id.0, p.order_id.0) == (1, 1))
            .map(|(i, _)| i)
            .collect();
        let r = env.finalize_batch(&BatchDecision { selected: rows.clone(), held: vec![] }).unwrap();
        assert_eq!(r.reward, 25.0);

        let mut env = Env::reset(&ds(events, RewardMode::Apd), RewardMode::Apd, 0).unwrap();
        let r = env.finalize_batch(&BatchDecision { selected: rows, held: vec![] }).unwrap();
        assert_eq!(r.reward, -2.0);

        let r = env.finalize_batch(&BatchDecision::default()).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn episode_runs_300_batches() {
        struct Idle;
        impl BatchPolicy for Idle {
            fn name(&self) -> String {
                "idle".into()
            }
            fn decide(&mut self, _: &Env) -> Result<BatchDecision> {
                Ok(BatchDecision::default())
            }
        }
        let out = run_episode(&ds(vec![], RewardMode::Tdi), RewardMode::Tdi, 0, &mut Idle).unwrap();
        assert_eq!(out.rewards.len(), 300);
        assert_eq!(out.episode_return, 0.0);
    }
}
