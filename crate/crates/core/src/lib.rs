//! Cross-episode meta reinforcement learning for memory-conditioned agents.
//!
//! An agent attempts the same task up to `N` times in one *trial*. Between
//! attempts it reflects on its failure and carries that reflection, along
//! with what it did, into the next attempt. Training credits every action
//! with the discounted success of the whole remaining trial, so early
//! attempts are rewarded for gathering information that later attempts use.
//!
//! The crate is organized along the data flow:
//!
//! * [`env`]: Sokoban, MineSweeper and a one-step coin environment.
//! * [`memory`]: what is carried between episodes.
//! * [`policy`]: a trainable linear-softmax policy and a text-model adapter.
//! * [`rollout`]: episodes and trials.
//! * [`credit`]: cross-episode returns and advantage estimators.
//! * [`trainer`]: policy-gradient updates, checkpoints, experience export.
//! * [`eval`]: pass@k, trajectory diversity and difficulty sweeps.
//! * [`harness`]: configuration files, the CLI and the HTTP completion client.

pub mod credit;
pub mod env;
pub mod eval;
pub mod harness;
pub mod memory;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod trainer;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident) => {
            #[doc = include_str!(concat!("../../../book/src/", stringify!($name), ".md"))]
            mod $name {}
        };
    }
    chapter!(introduction);
    chapter!(environments);
    chapter!(policy);
    chapter!(trials);
    chapter!(returns);
    chapter!(advantages);
    chapter!(training);
    chapter!(evaluation);
    chapter!(cli);
}
