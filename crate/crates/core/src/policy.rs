//! Baseline batch policies built on the one-batch solvers.

use std::collections::BTreeMap;

use crate::domain::{DriverId, OrderId, RewardMode};
use crate::env::{BatchDecision, BatchPolicy, Env, OuterState};
use crate::error::{Error, Result};
use crate::matching::{gs_match, greedy_match, km_match, preferences_from_cost, Assignment, CostMatrix, Sense};

/// Cost matrix of a pool plus the map back to pool rows.
///
/// Rows are the pool's distinct orders, columns its distinct drivers, both
/// ascending by id. APD tasks minimize pickup distance; TDI tasks maximize
/// price.
#[derive(Clone, Debug)]
pub struct PoolMatrix {
    pub matrix: CostMatrix,
    pub orders: Vec<OrderId>,
    pub drivers: Vec<DriverId>,
    row_of: BTreeMap<(usize, usize), usize>,
}

impl PoolMatrix {
    pub fn build(state: &OuterState, mode: RewardMode) -> Self {
        let mut orders: Vec<OrderId> = state.pairs.iter().map(|p| p.order_id).collect();
        let mut drivers: Vec<DriverId> = state.pairs.iter().map(|p| p.driver_id).collect();
        orders.sort_unstable();
        orders.dedup();
        drivers.sort_unstable();
        drivers.dedup();
        let sense = match mode {
            RewardMode::Apd => Sense::Minimize,
            RewardMode::Tdi => Sense::Maximize,
        };
        let mut matrix = CostMatrix::new(orders.len(), drivers.len(), sense);
        let mut row_of = BTreeMap::new();
        for (i, p) in state.pairs.iter().enumerate() {
            let r = orders.binary_search(&p.order_id).expect("order listed");
            let c = drivers.binary_search(&p.driver_id).expect("driver listed");
            let v = match mode {
                RewardMode::Apd => p.pickup_distance,
                RewardMode::Tdi => p.price,
            };
            matrix.set(r, c, Some(v));
            row_of.insert((r, c), i);
        }
        Self { matrix, orders, drivers, row_of }
    }

    /// Pool rows of an assignment, ascending.
    pub fn pool_rows(&self, a: &Assignment) -> Vec<usize> {
        let mut rows: Vec<usize> = a.iter().map(|rc| self.row_of[rc]).collect();
        rows.sort_unstable();
        rows
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Greedy,
    Km,
    Gs,
}

impl Solver {
    pub fn solve(self, m: &CostMatrix) -> Assignment {
        match self {
            Solver::Greedy => greedy_match(m),
            Solver::Km => km_match(m),
            Solver::Gs => {
                let (o, d) = preferences_from_cost(m);
                gs_match(&o, &d)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::Greedy => "greedy",
            Solver::Km => "km",
            Solver::Gs => "gs",
        }
    }
}

/// Matches every batch immediately with one solver.
#[derive(Clone, Debug)]
pub struct MatchingPolicy {
    solver: Solver,
}

impl MatchingPolicy {
    pub fn new(solver: Solver) -> Self {
        Self { solver }
    }
}

impl BatchPolicy for MatchingPolicy {
    fn name(&self) -> String {
        self.solver.name().to_string()
    }

    fn decide(&mut self, env: &Env) -> Result<BatchDecision> {
        let pm = PoolMatrix::build(env.state(), env.reward_mode());
        let a = self.solver.solve(&pm.matrix);
        Ok(BatchDecision { selected: pm.pool_rows(&a), held: Vec::new() })
    }
}

/// True when a fixed-delay policy matches at `batch` (0-indexed): at the end
/// of every group of `delay` batches and at the last batch.
pub fn is_match_batch(delay: usize, batch: usize, n_batches: usize) -> bool {
    (batch + 1).is_multiple_of(delay) || batch + 1 == n_batches
}

/// Runs KM every `delay` batches and holds the whole pool otherwise.
#[derive(Clone, Debug)]
pub struct FixedDelayPolicy {
    delay: usize,
}

impl FixedDelayPolicy {
    pub fn new(delay: usize) -> Result<Self> {
        if delay == 0 {
            return Err(Error::InvalidConfig("fixed delay must be at least 1 batch".into()));
        }
        Ok(Self { delay })
    }

    pub fn delay(&self) -> usize {
        self.delay
    }
}

impl BatchPolicy for FixedDelayPolicy {
    fn name(&self) -> String {
        format!("fixed_delay({})", self.delay)
    }

    fn decide(&mut self, env: &Env) -> Result<BatchDecision> {
        let state = env.state();
        if is_match_batch(self.delay, state.batch, state.n_batches) {
            let pm = PoolMatrix::build(state, env.reward_mode());
            let a = km_match(&pm.matrix);
            Ok(BatchDecision { selected: pm.pool_rows(&a), held: Vec::new() })
        } else {
            Ok(BatchDecision { selected: Vec::new(), held: (0..state.pool_size()).collect() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_arithmetic() {
        let hits: Vec<usize> = (0..6).filter(|&b| is_match_batch(3, b, 6)).collect();
        assert_eq!(hits, vec![2, 5]);
        assert!((0..6).all(|b| is_match_batch(1, b, 6)));
        let hits: Vec<usize> = (0..6).filter(|&b| is_match_batch(10, b, 6)).collect();
        assert_eq!(hits, vec![5]);
    }

    #[test]
    fn zero_delay_rejected() {
        assert!(FixedDelayPolicy::new(0).is_err());
    }
}
