//! Decompilation-based hardware/software partitioning for MIPS-subset
//! binaries targeting a microprocessor/FPGA platform.
//!
//! The pipeline runs binary parsing, CDFG construction and control structure
//! recovery ([`decompile`]), overhead-removal and optimization-undoing
//! transforms ([`passes`]), profile-driven partitioning ([`partition`]),
//! behavioral synthesis to VHDL ([`synth`]) and platform metrics
//! ([`report`]). Every stage has an executable reference so the output of one
//! stage can be checked against the machine-level simulator ([`sim`]).
#![no_std]

#[cfg(test)]
extern crate std;

extern crate alloc;

pub mod corpus;
pub mod decompile;
pub mod ir;
pub mod isa;
pub mod mem;
pub mod partition;
pub mod passes;
pub mod report;
pub mod sim;
pub mod synth;
