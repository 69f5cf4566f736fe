//! Quantile hedging of Bermudan claims in a complete one-factor market.
//!
//! The price `v(t, x, p)` of hedging with probability `p` is obtained from
//! its Fenchel transform `w = v#`, computed by a backward induction that
//! alternates a linear period propagation with two conjugations at each
//! exercise date.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod convex;
pub mod dual;
pub mod engine;
pub mod error;
pub mod market;
pub mod normal;
pub mod oracles;
pub mod output;
pub mod propagate;
pub mod verify;

pub use error::{Error, Result};
