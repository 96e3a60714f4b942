//! Batch-mode dispatch world: filtering, matching execution and serving.
//!
//! Each call to [`SimState::step_batch`] executes one batch's assignments,
//! advances the clock by one window and then resolves everything that
//! happens at the boundary: finished trips, new arrivals, cancellations
//! and drivers going offline. Behavior is only resolved at batch
//! boundaries, so nothing changes while a policy is deciding.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{distance, Driver, DriverId, EpisodeConfig, Location, Order, OrderId};
use crate::error::{Error, Result};
use crate::scenario::{Dataset, Event};

#[derive(Clone, Debug, PartialEq)]
pub struct IdleDriver {
    pub driver: Driver,
    pub position: Location,
    pub idle_since: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trip {
    pub driver: Driver,
    pub order_id: OrderId,
    pub completion_time: f64,
    pub drop_off: Location,
}

/// Running totals from which the episode metrics are computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLedger {
    pub appeared_orders: usize,
    pub completed_orders: usize,
    pub cancelled_orders: usize,
    pub appeared_drivers: usize,
    pub departed_drivers: usize,
    pub assigned_pairs: usize,
    pub sum_pickup_distance: f64,
    pub sum_income: f64,
    pub served_order_ids: BTreeSet<OrderId>,
    pub served_driver_ids: BTreeSet<DriverId>,
    /// Number of pairs filtered by a hold decision, per batch.
    pub held_per_batch: Vec<usize>,
    pub held_pairs: usize,
    pub held_sum_pickup_distance: f64,
    pub held_sum_price: f64,
    pub held_distinct_order_ids: BTreeSet<OrderId>,
    pub held_distinct_driver_ids: BTreeSet<DriverId>,
}

/// What one batch's assignments earned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchOutcome {
    pub assigned: usize,
    pub pickup_distance: f64,
    pub income: f64,
}

#[derive(Clone, Debug)]
pub struct SimState {
    config: EpisodeConfig,
    events: Arc<[Event]>,
    next_event: usize,
    clock: f64,
    batch: usize,
    idle: BTreeMap<DriverId, IdleDriver>,
    open: BTreeMap<OrderId, Order>,
    serving: Vec<Trip>,
    finished: bool,
    ledger: MetricsLedger,
    rng: ChaCha8Rng,
}

impl SimState {
    /// Starts an episode at clock 0 with the first window's arrivals spawned.
    pub fn new(dataset: &Dataset, seed: u64) -> Result<Self> {
        dataset.config.validate()?;
        let mut state = Self {
            config: dataset.config.clone(),
            events: dataset.events.clone().into(),
            next_event: 0,
            clock: 0.0,
            batch: 0,
            idle: BTreeMap::new(),
            open: BTreeMap::new(),
            serving: Vec::new(),
            finished: false,
            ledger: MetricsLedger::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        state.spawn_arrivals();
        Ok(state)
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Index of the batch about to be decided.
    pub fn batch_index(&self) -> usize {
        self.batch
    }

    pub fn is_done(&self) -> bool {
        self.clock >= self.config.episode_length - 1e-9
    }

    pub fn ledger(&self) -> &MetricsLedger {
        &self.ledger
    }

    pub fn idle_drivers(&self) -> impl Iterator<Item = &IdleDriver> {
        self.idle.values()
    }

    pub fn open_orders(&self) -> impl Iterator<Item = &Order> {
        self.open.values()
    }

    pub fn idle_driver(&self, id: DriverId) -> Option<&IdleDriver> {
        self.idle.get(&id)
    }

    pub fn open_order(&self, id: OrderId) -> Option<&Order> {
        self.open.get(&id)
    }

    pub fn serving(&self) -> &[Trip] {
        &self.serving
    }

    /// `(open, serving, completed, cancelled)` order counts.
    pub fn order_partition(&self) -> (usize, usize, usize, usize) {
        (self.open.len(), self.serving.len(), self.ledger.completed_orders, self.ledger.cancelled_orders)
    }

    /// `(idle, serving, departed)` driver counts.
    pub fn driver_partition(&self) -> (usize, usize, usize) {
        (self.idle.len(), self.serving.len(), self.ledger.departed_drivers)
    }

    /// Filtering stage: every (idle driver, open order) pair within `radius`,
    /// sorted by order id, then driver id.
    pub fn eligible_pairs(&self, radius: f64) -> Vec<(DriverId, OrderId)> {
        let mut pairs = Vec::new();
        for order in self.open.values() {
            for d in self.idle.values() {
                if distance(d.position, order.origin) <= radius {
                    pairs.push((d.driver.id, order.id));
                }
            }
        }
        pairs
    }

    pub fn pickup_distance(&self, driver: DriverId, order: OrderId) -> Option<f64> {
        Some(distance(self.idle.get(&driver)?.position, self.open.get(&order)?.origin))
    }

    /// Executes one batch and advances to the next decision point.
    pub fn step_batch(
        &mut self,
        assignments: &[(DriverId, OrderId)],
        held_pairs: &[(DriverId, OrderId)],
    ) -> Result<BatchOutcome> {
        if self.finished || self.is_done() {
            return Err(Error::Constraint("episode already terminated".into()));
        }
        self.check_assignments(assignments)?;
        for &(d, o) in held_pairs {
            if !self.idle.contains_key(&d) {
                return Err(Error::DriverNotIdle(d));
            }
            if !self.open.contains_key(&o) {
                return Err(Error::OrderNotOpen(o));
            }
        }

        for &(d, o) in held_pairs {
            let pickup = distance(self.idle[&d].position, self.open[&o].origin);
            self.ledger.held_pairs += 1;
            self.ledger.held_sum_pickup_distance += pickup;
            self.ledger.held_sum_price += self.open[&o].price;
            self.ledger.held_distinct_order_ids.insert(o);
            self.ledger.held_distinct_driver_ids.insert(d);
        }
        self.ledger.held_per_batch.push(held_pairs.len());

        let mut outcome = BatchOutcome::default();
        for &(d, o) in assignments {
            let idle = self.idle.remove(&d).expect("validated");
            let order = self.open.remove(&o).expect("validated");
            let pickup = distance(idle.position, order.origin);
            let completion = self.clock + pickup / self.config.pickup_speed + order.trip_duration;
            outcome.assigned += 1;
            outcome.pickup_distance += pickup;
            outcome.income += order.price;
            self.ledger.assigned_pairs += 1;
            self.ledger.served_order_ids.insert(o);
            self.ledger.served_driver_ids.insert(d);
            self.serving.push(Trip {
                driver: idle.driver,
                order_id: o,
                completion_time: completion,
                drop_off: order.destination,
            });
        }

        // Batch totals first, so episode sums match per-batch rewards bit for bit.
        self.ledger.sum_pickup_distance += outcome.pickup_distance;
        self.ledger.sum_income += outcome.income;

        self.batch += 1;
        self.clock = self.batch as f64 * self.config.batch_window;
        self.release_finished_trips();
        self.spawn_arrivals();
        self.cancel_impatient_orders();
        self.depart_idle_drivers();
        Ok(outcome)
    }

    fn check_assignments(&self, assignments: &[(DriverId, OrderId)]) -> Result<()> {
        let mut drivers = HashSet::new();
        let mut orders = HashSet::new();
        for &(d, o) in assignments {
            if !drivers.insert(d) {
                return Err(Error::Constraint(format!("driver {d} assigned twice")));
            }
            if !orders.insert(o) {
                return Err(Error::Constraint(format!("order {o} assigned twice")));
            }
            let idle = self.idle.get(&d).ok_or(Error::DriverNotIdle(d))?;
            let order = self.open.get(&o).ok_or(Error::OrderNotOpen(o))?;
            let dist = distance(idle.position, order.origin);
            if dist > self.config.radius {
                return Err(Error::Constraint(format!(
                    "pair ({d}, {o}) is {dist:.1} m apart, beyond the {} m radius",
                    self.config.radius
                )));
            }
        }
        Ok(())
    }

    fn release_finished_trips(&mut self) {
        let clock = self.clock;
        let (done, still): (Vec<Trip>, Vec<Trip>) =
            self.serving.drain(..).partition(|t| t.completion_time <= clock);
        self.serving = still;
        for trip in done {
            self.ledger.completed_orders += 1;
            let id = trip.driver.id;
            self.idle.insert(
                id,
                IdleDriver { driver: trip.driver, position: trip.drop_off, idle_since: trip.completion_time },
            );
        }
    }

    /// Spawns everything appearing before the end of the current window.
    fn spawn_arrivals(&mut self) {
        let horizon = self.clock + self.config.batch_window;
        while let Some(e) = self.events.get(self.next_event) {
            if e.appear_time() >= horizon {
                break;
            }
            match e.clone() {
                Event::Driver(d) => {
                    self.ledger.appeared_drivers += 1;
                    let position = d.position;
                    let since = d.appear_time;
                    self.idle.insert(d.id, IdleDriver { driver: d, position, idle_since: since });
                }
                Event::Order(o) => {
                    self.ledger.appeared_orders += 1;
                    self.open.insert(o.id, o);
                }
            }
            self.next_event += 1;
        }
    }

    fn cancel_impatient_orders(&mut self) {
        let clock = self.clock;
        let before = self.open.len();
        self.open.retain(|_, o| clock - o.appear_time < o.patience);
        self.ledger.cancelled_orders += before - self.open.len();
    }

    fn depart_idle_drivers(&mut self) {
        let mut leaving = Vec::new();
        for (id, d) in &self.idle {
            let hazard = d.driver.offline_hazard;
            if hazard > 0.0 && self.rng.random::<f64>() < hazard {
                leaving.push(*id);
            }
        }
        for id in leaving {
            self.idle.remove(&id);
            self.ledger.departed_drivers += 1;
        }
    }

    /// Ends the episode: trips still in progress are completed, since their
    /// pickups are already committed.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        for trip in std::mem::take(&mut self.serving) {
            self.ledger.completed_orders += 1;
            let id = trip.driver.id;
            self.idle.insert(
                id,
                IdleDriver { driver: trip.driver, position: trip.drop_off, idle_since: trip.completion_time },
            );
        }
        self.finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Episode-level metric suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub appeared_orders: usize,
    pub completed_orders: usize,
    pub appeared_drivers: usize,
    pub cr: f64,
    /// Mean pickup distance of finished orders; absent when none finished.
    pub apd: Option<f64>,
    pub tdi: f64,
    pub hold_apd: Option<f64>,
    pub hold_o: f64,
    pub hold_tdi: Option<f64>,
    pub hold_d: f64,
    pub order_sr: f64,
    pub driver_sr: f64,
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

pub fn episode_metrics(ledger: &MetricsLedger) -> MetricsReport {
    let completed = ledger.completed_orders;
    let apd = (completed > 0).then(|| ledger.sum_pickup_distance / completed as f64);
    let mean_price = (completed > 0).then(|| ledger.sum_income / completed as f64);
    let held = ledger.held_pairs;
    let hold_apd = if held == 0 {
        Some(0.0)
    } else {
        apd.filter(|a| *a > 0.0).map(|a| ledger.held_sum_pickup_distance / held as f64 / a)
    };
    let hold_tdi = if held == 0 {
        Some(0.0)
    } else {
        mean_price.filter(|p| *p > 0.0).map(|p| ledger.held_sum_price / held as f64 / p)
    };
    MetricsReport {
        appeared_orders: ledger.appeared_orders,
        completed_orders: completed,
        appeared_drivers: ledger.appeared_drivers,
        cr: ratio(completed as f64, ledger.appeared_orders),
        apd,
        tdi: ledger.sum_income,
        hold_apd,
        hold_o: ratio(ledger.held_distinct_order_ids.len() as f64, ledger.appeared_orders),
        hold_tdi,
        hold_d: ratio(ledger.held_distinct_driver_ids.len() as f64, ledger.appeared_drivers),
        order_sr: ratio(ledger.served_order_ids.len() as f64, ledger.appeared_orders),
        driver_sr: ratio(ledger.served_driver_ids.len() as f64, ledger.appeared_drivers),
    }
}

impl MetricsReport {
    /// Flat key/value view; absent values are empty strings.
    pub fn to_record(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            ("appeared_orders", self.appeared_orders.to_string()),
            ("completed_orders", self.completed_orders.to_string()),
            ("appeared_drivers", self.appeared_drivers.to_string()),
            ("cr", self.cr.to_string()),
            ("apd", opt(self.apd)),
            ("tdi", self.tdi.to_string()),
            ("hold_apd", opt(self.hold_apd)),
            ("hold_o", self.hold_o.to_string()),
            ("hold_tdi", opt(self.hold_tdi)),
            ("hold_d", self.hold_d.to_string()),
            ("order_sr", self.order_sr.to_string()),
            ("driver_sr", self.driver_sr.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RewardMode;

    fn driver(id: u32, x: f64, y: f64, t: f64) -> Event {
        Event::Driver(Driver { id: DriverId(id), position: Location::new(x, y), appear_time: t, offline_hazard: 0.0 })
    }

    fn order(id: u32, x: f64, y: f64, t: f64, price: f64, patience: f64) -> Event {
        Event::Order(Order {
            id: OrderId(id),
            origin: Location::new(x, y),
            destination: Location::new(x, y + 100.0),
            price,
            appear_time: t,
            patience,
            trip_duration: 60.0,
        })
    }

    fn dataset(events: Vec<Event>) -> Dataset {
        let mut ds = Dataset {
            config: EpisodeConfig { reward_mode: RewardMode::Tdi, ..EpisodeConfig::default() },
            scale_factor: 1.0,
            events,
        };
        ds.sort_events();
        ds
    }

    #[test]
    fn empty_world_only_advances_the_clock() {
        let mut s = SimState::new(&dataset(vec![]), 0).unwrap();
        let out = s.step_batch(&[], &[]).unwrap();
        assert_eq!(out, BatchOutcome::default());
        assert_eq!(s.clock(), 2.0);
        assert_eq!(s.ledger().appeared_orders, 0);
        assert_eq!(s.ledger().sum_income, 0.0);
    }

    #[test]
    fn single_assignment_accounting() {
        let mut s = SimState::new(&dataset(vec![driver(0, 0.0, 0.0, 0.0), order(0, 0.0, 500.0, 0.0, 10.0, 100.0)]), 0)
            .unwrap();
        s.step_batch(&[(DriverId(0), OrderId(0))], &[]).unwrap();
        assert_eq!(s.ledger().sum_pickup_distance, 500.0);
        assert_eq!(s.ledger().sum_income, 10.0);
        assert_eq!(s.driver_partition(), (0, 1, 0));
        assert_eq!(s.order_partition(), (0, 1, 0, 0));
        // pickup 500 / 6 m/s + 60 s trip
        let trip = &s.serving()[0];
        assert!((trip.completion_time - (500.0 / 6.0 + 60.0)).abs() < 1e-12);
    }

    #[test]
    fn patience_expires_at_clock_30() {
        let mut s = SimState::new(&dataset(vec![order(0, 0.0, 0.0, 0.0, 10.0, 30.0)]), 0).unwrap();
        for batch in 1..=15 {
            s.step_batch(&[], &[]).unwrap();
            if batch < 15 {
                assert_eq!(s.ledger().cancelled_orders, 0, "batch {batch}");
            }
        }
        assert_eq!(s.clock(), 30.0);
        assert_eq!(s.ledger().cancelled_orders, 1);
        assert_eq!(s.order_partition(), (0, 0, 0, 1));
    }

    #[test]
    fn eligible_pairs_filtering() {
        let s = SimState::new(&dataset(vec![driver(0, 0.0, 0.0, 0.0), order(0, 300.0, 0.0, 0.0, 1.0, 60.0)]), 0)
            .unwrap();
        assert_eq!(s.eligible_pairs(3000.0).len(), 1);

        let s = SimState::new(
            &dataset(vec![
                driver(0, 0.0, 0.0, 0.0),
                driver(1, 10.0, 0.0, 0.0),
                order(0, 0.0, 10.0, 0.0, 1.0, 60.0),
                order(1, 10.0, 10.0, 0.0, 1.0, 60.0),
            ]),
            0,
        )
        .unwrap();
        let pairs = s.eligible_pairs(3000.0);
        assert_eq!(
            pairs,
            vec![
                (DriverId(0), OrderId(0)),
                (DriverId(1), OrderId(0)),
                (DriverId(0), OrderId(1)),
                (DriverId(1), OrderId(1))
            ]
        );

        let s = SimState::new(&dataset(vec![driver(0, 0.0, 0.0, 0.0), order(0, 5000.0, 0.0, 0.0, 1.0, 60.0)]), 0)
            .unwrap();
        assert!(s.eligible_pairs(3000.0).is_empty());
    }

    #[test]
    fn double_assignment_is_rejected_without_side_effects() {
        let mut s = SimState::new(
            &dataset(vec![
                driver(0, 0.0, 0.0, 0.0),
                order(0, 0.0, 10.0, 0.0, 1.0, 60.0),
                order(1, 0.0, 20.0, 0.0, 1.0, 60.0),
            ]),
            0,
        )
        .unwrap();
        let err = s.step_batch(&[(DriverId(0), OrderId(0)), (DriverId(0), OrderId(1))], &[]);
        assert!(matches!(err, Err(Error::Constraint(_))));
        assert_eq!(s.clock(), 0.0);
        assert_eq!(s.ledger().assigned_pairs, 0);
        assert!(matches!(s.step_batch(&[(DriverId(7), OrderId(0))], &[]), Err(Error::DriverNotIdle(_))));
    }

    #[test]
    fn out_of_radius_assignment_is_rejected() {
        let mut s = SimState::new(&dataset(vec![driver(0, 0.0, 0.0, 0.0), order(0, 5000.0, 0.0, 0.0, 1.0, 60.0)]), 0)
            .unwrap();
        assert!(matches!(s.step_batch(&[(DriverId(0), OrderId(0))], &[]), Err(Error::Constraint(_))));
    }

    #[test]
    fn drivers_return_at_drop_off() {
        let mut s = SimState::new(&dataset(vec![driver(0, 0.0, 0.0, 0.0), order(0, 0.0, 0.0, 0.0, 5.0, 60.0)]), 0)
            .unwrap();
        s.step_batch(&[(DriverId(0), OrderId(0))], &[]).unwrap();
        while s.idle_driver(DriverId(0)).is_none() {
            s.step_batch(&[], &[]).unwrap();
        }
        assert_eq!(s.idle_driver(DriverId(0)).unwrap().position, Location::new(0.0, 100.0));
        assert_eq!(s.ledger().completed_orders, 1);
        assert_eq!(s.clock(), 60.0);
    }

    #[test]
    fn metrics_examples() {
        let ledger = MetricsLedger { appeared_orders: 100, completed_orders: 80, ..Default::default() };
        let m = episode_metrics(&ledger);
        assert_eq!(m.cr, 0.80);
        assert_eq!(m.hold_apd, Some(0.0));
        assert_eq!(m.hold_o, 0.0);
        assert_eq!(m.hold_tdi, Some(0.0));
        assert_eq!(m.hold_d, 0.0);

        let ledger = MetricsLedger {
            appeared_orders: 10,
            completed_orders: 2,
            sum_pickup_distance: 2400.0,
            held_pairs: 2,
            held_sum_pickup_distance: 3600.0,
            ..Default::default()
        };
        assert_eq!(episode_metrics(&ledger).hold_apd, Some(1.5));

        let none = episode_metrics(&MetricsLedger { appeared_orders: 3, ..Default::default() });
        assert_eq!(none.apd, None);
    }

    #[test]
    fn no_holds_means_order_sr_equals_cr() {
        let mut s = SimState::new(
            &dataset(vec![
                driver(0, 0.0, 0.0, 0.0),
                order(0, 0.0, 10.0, 0.0, 1.0, 60.0),
                order(1, 0.0, 20.0, 0.0, 1.0, 4.0),
            ]),
            0,
        )
        .unwrap();
        s.step_batch(&[(DriverId(0), OrderId(0))], &[]).unwrap();
        while !s.is_done() {
            s.step_batch(&[], &[]).unwrap();
        }
        s.finish();
        let m = episode_metrics(s.ledger());
        assert_eq!(m.cr, 0.5);
        assert_eq!(m.order_sr, m.cr);
    }
}
