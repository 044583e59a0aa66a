//! Preference optimization over tiny autoregressive token models.
//!
//! The crate builds DPO, prefix-wise ADPO and weighted cADPO losses on a
//! small reverse-mode differentiation engine, trains windowed neural or
//! tabular n-gram policies on synthetic preference data, and certifies the
//! underlying token-level Boltzmann identities by brute force on enumerable
//! sequence spaces.
//!
//! Modules, bottom up:
//!
//! - [`autodiff`]: tape-based gradients and a finite-difference checker.
//! - [`lm`]: policies, frozen references and checkpoints.
//! - [`composition`]: static and adaptive segmentations of response pairs.
//! - [`losses`]: DPO / ADPO / cADPO graphs and implicit rewards.
//! - [`oracle`]: exact enumeration checks.
//! - [`data`]: synthetic tasks, token scores and JSONL files.
//! - [`trainer`]: the optimization loop and its diagnostics.
//! - [`config`] and [`cli`]: the `adpo` command line.

pub mod autodiff;
pub mod cli;
pub mod composition;
pub mod config;
pub mod data;
pub mod lm;
pub mod losses;
pub mod oracle;
pub mod rng;
pub mod trainer;
