//! HarvestNet: a robot-to-cloud continual-learning loop.
//!
//! A fleet robot watches a sensory stream, keeps a small cache of samples its
//! on-board policy believes are task-relevant, and uploads the cache at the end
//! of each round. The cloud annotates the cache, grows its dataset, retrains
//! the perception model, and feeds adapted sampling thresholds back to the
//! robot. This crate implements that loop over synthetic embedding streams,
//! together with the benchmark samplers it is usually compared against and a
//! fleet systems-cost calculator.
//!
//! Module map:
//! - [`data`]: synthetic dataset/stream generation and dataset file formats
//! - [`perception`]: the softmax-head perception model (predict/retrain/evaluate)
//! - [`sampler`]: on-robot sampling policies and the bounded cache
//! - [`cloud`]: annotation, dataset growth, splits, and threshold adaptation
//! - [`simulate`]: the end-to-end round loop, policy comparison, replay
//! - [`costs`]: fleet storage/transfer/annotation cost model
//! - [`cli`]: command-line entry points (`gen`, `run`, `compare`, `costs`, `report`)

pub mod cli;
pub mod cloud;
pub mod config;
pub mod costs;
pub mod data;
pub mod error;
pub mod perception;
pub mod plot;
pub mod sampler;
pub mod simulate;
pub mod util;

pub use error::{Error, Result};
