//! Cognitive radar network simulation.
//!
//! Ground nodes choose each step between active radar and passive spectrum
//! sensing. Targets follow class-specific Markov chains over motion states
//! and emitted signal types; the network tracks them, learns the classes
//! from its tracks, retunes its filters to the learned classes, and selects
//! node modes with a UCB bandit rewarded by residual behavioural uncertainty.
//!
//! Start from [`sim::SimConfig`] and [`sim::run_experiment`]; [`io`] reads
//! configurations and writes the CSV and JSON artifacts.

pub mod bandit;
pub mod classes;
pub mod dynamics;
pub mod io;
pub mod markov;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod sim;
pub mod tracking;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/behaviour.md")]
    mod behaviour {}
    #[doc = include_str!("../../../book/src/sensing.md")]
    mod sensing {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/classes.md")]
    mod classes {}
    #[doc = include_str!("../../../book/src/modes.md")]
    mod modes {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    mod outputs {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
