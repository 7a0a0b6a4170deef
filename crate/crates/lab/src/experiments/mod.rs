//! Experiment runners. Each takes its typed parameters and returns tables
//! plus threshold checks; nothing here touches the filesystem.

mod coinduced;
mod convergence;
mod entropy;
mod metric;

pub use coinduced::{calibrate_ball_epsilon, indicator_of_w, Calibration};
pub use convergence::binomial_tail_outside;

use anyhow::Result;
use sofic_core::rng;

use crate::config::{Experiment, ExperimentConfig};
use crate::output::Outcome;

/// Shared run parameters.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub seed: u64,
    pub budget: u64,
}

impl Context {
    pub fn new(config: &ExperimentConfig) -> Self {
        Context {
            seed: config.seed,
            budget: config.budget,
        }
    }

    /// Seed of replicate `i`.
    pub fn seed_for(&self, i: usize) -> u64 {
        rng::derive_seed(self.seed, rng::ns::EXPERIMENT, i as u32)
    }

    pub fn stream(&self, i: usize) -> rng::Rng {
        rng::stream(self.seed, rng::ns::EXPERIMENT, i as u32)
    }
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    let ctx = Context::new(config);
    match &config.experiment {
        Experiment::E1(p) => entropy::bernoulli_entropy(&ctx, p),
        Experiment::E2(p) => metric::cover_pack(&ctx, p),
        Experiment::E3(p) => entropy::subadditivity(&ctx, p),
        Experiment::E4(p) => convergence::bernoulli_convergence(&ctx, p),
        Experiment::E5(p) => coinduced::coinduced_models(&ctx, p),
        Experiment::E6(p) => coinduced::coinduced_pairs(&ctx, p),
        Experiment::E7(p) => coinduced::expansion(&ctx, p),
        Experiment::E8(p) => convergence::quenched_not_dq(&ctx, p),
        Experiment::E9(p) => convergence::pipeline(&ctx, p),
    }
}

fn format_weights(w: &[f64]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/")
}
