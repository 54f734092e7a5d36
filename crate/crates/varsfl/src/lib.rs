//! A seeded, deterministic federated-learning simulator.
//!
//! The crate simulates synchronous federated training (FedAvg aggregation)
//! over a population of clients holding non-IID shards of a tabular
//! classification dataset, and compares client-selection policies:
//!
//! * `fedavg-random` — uniform random selection,
//! * `power-of-choice` — highest local loss among a sampled candidate pool,
//! * `oort-simplified` — statistical-utility selection with an exploration bonus,
//! * `vars-fl` — validation-aligned reputation selection: each selected
//!   client is scored by the reduction in server-side validation loss its
//!   update produces, scores are folded into a sliding-window reputation,
//!   and selection mixes top-reputation picks with uniform exploration.
//!
//! Everything is a pure function of `(config, seed)`: two runs of the same
//! config and seed produce byte-identical round logs.
//!
//! With the default `parallel` feature, per-client work inside a round
//! (local training, validation scoring) runs on a rayon pool; results are
//! identical to the sequential fallback because every client draws from its
//! own derived rng stream and reductions happen in a fixed order.

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod seeding;
pub mod selection;

pub use error::{Error, Result};
