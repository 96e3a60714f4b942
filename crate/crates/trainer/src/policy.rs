use std::sync::Arc;

use micod_core::env::{BatchDecision, BatchPolicy, Env};
use micod_d2sn::D2sn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::rollout::derive_seed;

/// A trained network as a batch policy. The sampler is reseeded from
/// `seed` at the start of every episode.
#[derive(Clone, Debug)]
pub struct D2snPolicy {
    net: Arc<D2sn>,
    seed: u64,
    rng: ChaCha8Rng,
    greedy: bool,
    exhaustive: bool,
}

impl D2snPolicy {
    pub fn new(net: Arc<D2sn>, seed: u64, greedy: bool, exhaustive: bool) -> Self {
        Self { net, seed, rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)), greedy, exhaustive }
    }
}

impl BatchPolicy for D2snPolicy {
    fn name(&self) -> String {
        if self.exhaustive { "d2sn_h-" } else { "d2sn" }.to_string()
    }

    fn decide(&mut self, env: &Env) -> micod_core::Result<BatchDecision> {
        self.net
            .sample_action(env.state(), &mut self.rng, self.greedy, self.exhaustive)
            .map(|a| a.decision)
            .map_err(|e| micod_core::Error::Constraint(format!("policy network: {e}")))
    }

    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1));
    }
}
