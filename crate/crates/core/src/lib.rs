//! janus-core: an ARM64 assembly hardening toolchain and verification
//! simulator.
//!
//! The pipeline parses a defined assembly subset, analyzes it for indirect
//! call sites, DOP-sensitive branches, and taint flow, then injects five
//! PA/BTI defense mechanisms with two cost optimizations (modifier fusion
//! and carrier reuse). A plan-driven validator checks hardened output
//! independently, and a deterministic simulator with speculative semantics
//! verifies the security claims against Spectre V1/V2/V5, PACMAN, DOP, and
//! CFI-hijack scenarios.

pub mod analysis;
pub mod asm;
pub mod corpus;
pub mod instrument;
pub mod policy;
pub mod sim;
pub mod validator;
