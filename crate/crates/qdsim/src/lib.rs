//! Exact simulation of channel-encrypting quantum dialogue over collective
//! noise, built on two-photon logical qubits.
//!
//! The crate is organized bottom-up:
//!
//! - [`statevec`]: dense kets, gates, measurements, density operators;
//! - [`noise`]: collective dephasing / rotation channels with per-block
//!   parameter draws;
//! - [`logical`]: the two logical encodings, their operator algebra,
//!   resource-state preparation and key distillation;
//! - [`protocol`]: the dialogue engine (key sharing, encrypt, re-encode,
//!   announce, decode, key rotation);
//! - [`adversary`]: eavesdropping strategies plus exact detection oracles;
//! - [`analysis`]: leakage accounting, efficiency counters, invariance and
//!   mixedness suites.
//!
//! All randomness flows through caller-supplied seeded generators, so every
//! protocol run, attack estimate and report is reproducible from a seed.

pub mod adversary;
pub mod analysis;
pub mod logical;
pub mod noise;
pub mod protocol;
pub mod statevec;

pub use statevec::{TOL_ALGEBRA, TOL_EIGEN, TOL_FIDELITY};
