//! Faithfulness evaluation for importance-measure explanations.
//!
//! The crate covers dataset generation and masking ([`data`]), tiny
//! differentiable classifiers ([`model`]), importance measures ([`explain`]),
//! erasure-based faithfulness metrics ([`faith`]), nonparametric
//! in-distribution testing ([`ood`]) and a self-consistency harness for chat
//! models ([`selfcheck`]).

pub mod data;
mod error;
pub mod explain;
pub mod faith;
pub mod model;
pub mod ood;
pub mod rng;
pub mod selfcheck;

pub use error::{Error, Result};
