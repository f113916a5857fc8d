//! Stage errors and the process exit codes they map to.

use std::path::PathBuf;

use binpart_core::decompile::DecompileError;
use binpart_core::isa::{AsmError, ImageError};
use binpart_core::partition::{PartitionError, PlatformError};
use binpart_core::passes::PassError;
use binpart_core::report::MetricsError;
use binpart_core::synth::SynthError;
use thiserror::Error;

use crate::formats::FormatError;

/// Exit codes. Stable: scripts may rely on them.
pub mod code {
    pub const OK: u8 = 0;
    /// Bad command line (reported by the argument parser).
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const ASSEMBLY: u8 = 4;
    pub const IMAGE: u8 = 5;
    /// The program faulted or ran out of steps.
    pub const EXECUTION: u8 = 6;
    pub const INDIRECT_JUMP: u8 = 7;
    pub const DECOMPILE: u8 = 8;
    pub const PASSES: u8 = 9;
    /// Malformed profile, inputs or platform file.
    pub const INPUT_FORMAT: u8 = 10;
    pub const PARTITION: u8 = 11;
    pub const SYNTHESIS: u8 = 12;
    /// Hardware co-simulation disagreed with software, or metrics failed.
    pub const VERIFY: u8 = 13;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("asm: {0}")]
    Asm(#[from] AsmError),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("run: {0}")]
    Execution(String),
    #[error("decomp: {0}")]
    Decompile(#[from] DecompileError),
    #[error("passes: {0}")]
    Passes(#[from] PassError),
    #[error("input: {file}: {source}")]
    Format { file: PathBuf, source: FormatError },
    #[error("platform: {file}: {source}")]
    Platform { file: PathBuf, source: PlatformError },
    #[error("usage: {0}")]
    BadOption(String),
    #[error("partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("synth: region {region}: {source}")]
    Synthesis { region: usize, source: SynthError },
    #[error("verify: {0}")]
    Verify(String),
    #[error("report: {0}")]
    Metrics(#[from] MetricsError),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => code::IO,
            Error::Asm(_) => code::ASSEMBLY,
            Error::Image(_) => code::IMAGE,
            Error::Execution(_) => code::EXECUTION,
            Error::Decompile(DecompileError::IndirectJump { .. }) => code::INDIRECT_JUMP,
            Error::Decompile(_) => code::DECOMPILE,
            Error::Passes(_) => code::PASSES,
            Error::Format { .. } | Error::Platform { .. } => code::INPUT_FORMAT,
            Error::BadOption(_) => code::USAGE,
            Error::Partition(_) => code::PARTITION,
            Error::Synthesis { .. } => code::SYNTHESIS,
            Error::Verify(_) | Error::Metrics(_) => code::VERIFY,
        }
    }
}

pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
