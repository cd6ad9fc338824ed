//! Function entry/exit instrumentation over a small block-structured IR.
//!
//! The pipeline mirrors a compiler-based measurement workflow: parse a
//! module ([`ir`]), optionally inline ([`optimizer`]), insert monitored
//! enter/exit hooks with compile-time filtering ([`instrument`]), execute
//! under a deterministic tick cost model ([`vm`]) that drives the measurement
//! runtime ([`monitor`]), and aggregate the resulting trace ([`analysis`]).

pub mod analysis;
pub mod corpus;
pub mod filter;
pub mod instrument;
pub mod ir;
pub mod monitor;
pub mod optimizer;
pub mod symbols;
pub mod vm;
