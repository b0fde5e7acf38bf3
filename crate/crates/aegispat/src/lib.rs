//! aegispat: a workbench for architectural safety patterns around ML components.
//!
//! The crate is organized around a small deterministic dataflow engine
//! ([`engine`]) onto which safety patterns ([`patterns`]) are composed from
//! surrogate models ([`surrogate`]). Fault injection ([`faults`]) perturbs
//! signals at port boundaries, the evaluation harness ([`harness`]) runs
//! scenarios and Monte Carlo campaigns against a safety envelope, and the
//! [`assurance`] module checks development-assurance-level allocations for
//! the composed structures. [`geometry`] provides the bounding-box
//! enlargement machinery used by the detection post-processing pattern.

pub mod assurance;
pub mod engine;
pub mod faults;
pub mod geometry;
pub mod harness;
pub mod patterns;
pub mod surrogate;

pub mod cli;
