use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-trajectory random stream. The generator for trajectory `i` is
/// ChaCha8 keyed by the master seed on stream `i`, so a trajectory's
/// draws do not depend on which worker runs it or in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub trajectory_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        Self {
            master_seed,
            trajectory_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.trajectory_index);
        rng
    }
}
