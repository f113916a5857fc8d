//! Binary to CDFG decompilation: binary parsing, per-procedure CFG
//! construction, dominators, control structure recovery and SSA CDFG
//! construction, plus the CDFG reference executor.
//!
//! Procedures are the image entry point and every `JAL` target. A failure in
//! one procedure (an indirect jump, say) is recorded and the others are still
//! decompiled.

mod build;
pub mod cfg;
pub mod dom;
mod exec;
mod parse;
pub mod structure;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

pub use build::{build_cdfg, liveness, remove_trivial_phis, restructure};
pub use cfg::{build_cfg, Cfg, CfgBlock, CfgEdge, EdgeKind};
pub use exec::{
    execute_cdfg, execute_program, execute_with_hook, load, store, ExecOptions, HookExit, HookIo, RegionHook,
};
pub use parse::{find_leaders, parse_binary, IrInst, LinKind, Slot, Src};

use crate::ir::{Cdfg, Program};
use crate::isa::{IsaError, Mnemonic, ProgramImage};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecompileError {
    Decode(IsaError),
    /// `JR` through a register other than `$31`.
    IndirectJump {
        address: u32,
    },
    /// A syscall whose service code is not a visible constant.
    UnresolvedSyscall {
        address: u32,
    },
    BadTarget {
        address: u32,
        target: u32,
    },
    FallsOffText {
        address: u32,
    },
}

impl fmt::Display for DecompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecompileError::Decode(e) => write!(f, "{e}"),
            DecompileError::IndirectJump { address } => write!(f, "indirect jump at {address:#010x}"),
            DecompileError::UnresolvedSyscall { address } => {
                write!(f, "syscall at {address:#010x} has no static service code")
            }
            DecompileError::BadTarget { address, target } => {
                write!(f, "transfer at {address:#010x} targets {target:#010x} outside text")
            }
            DecompileError::FallsOffText { address } => {
                write!(f, "control falls off the end of text after {address:#010x}")
            }
        }
    }
}

impl core::error::Error for DecompileError {}

/// Result of decompiling an image: the procedures that succeeded and the
/// entry addresses of those that failed.
#[derive(Clone, Debug)]
pub struct Decompilation {
    pub procs: Vec<Cdfg>,
    pub failures: Vec<(u32, DecompileError)>,
    pub main_entry: u32,
    pub data_base: u32,
    pub data: Vec<u8>,
}

impl Decompilation {
    /// The executable program, or the first procedure failure.
    pub fn into_program(self) -> Result<Program, DecompileError> {
        if let Some((_, e)) = self.failures.into_iter().next() {
            return Err(e);
        }
        let main = self.procs.iter().position(|p| p.entry_addr == self.main_entry).expect("main decompiled");
        Ok(Program { procs: self.procs, main, data_base: self.data_base, data: self.data })
    }

    pub fn has_indirect_jump(&self) -> bool {
        self.failures.iter().any(|(_, e)| matches!(e, DecompileError::IndirectJump { .. }))
    }
}

/// Procedure entry points: the image entry and every `JAL` target, sorted.
pub fn procedure_entries(image: &ProgramImage) -> Result<BTreeSet<u32>, DecompileError> {
    let mut entries = BTreeSet::new();
    entries.insert(image.entry);
    for (a, &w) in image.text_addresses().zip(&image.text) {
        let inst = crate::isa::decode(w, a).map_err(DecompileError::Decode)?;
        if inst.mnemonic == Mnemonic::Jal {
            entries.insert(inst.jump_target());
        }
    }
    Ok(entries)
}

/// Decompiles every procedure of `image`. Errors that prevent parsing the
/// image at all are returned directly; per-procedure failures are collected.
pub fn decompile(image: &ProgramImage) -> Result<Decompilation, DecompileError> {
    let leaders = find_leaders(image)?;
    let ir = parse_binary(image)?;
    let by_origin = cfg::index_by_origin(&ir);
    let mut procs = Vec::new();
    let mut failures = Vec::new();
    let entries = procedure_entries(image)?;
    // Main first, the rest by address.
    let order = core::iter::once(image.entry).chain(entries.into_iter().filter(|&e| e != image.entry));
    for entry in order {
        let name = image
            .symbols
            .iter()
            .find(|(_, &a)| a == entry)
            .map(|(n, _)| n.clone())
            .unwrap_or_else(|| format!("proc_{entry:08x}"));
        match build_cfg(&by_origin, image, &leaders, entry) {
            Ok(cfg) => procs.push(build_cdfg(&cfg, name)),
            Err(e) => failures.push((entry, e)),
        }
    }
    Ok(Decompilation { procs, failures, main_entry: image.entry, data_base: image.data_base, data: image.data.clone() })
}

/// Decompiles `image` and returns the executable program.
pub fn decompile_program(image: &ProgramImage) -> Result<Program, DecompileError> {
    decompile(image)?.into_program()
}
