//! CDFG transformations: instruction-set overhead removal (constant
//! propagation, stack slot promotion, operator size reduction) and undoing
//! of compiler optimizations (loop rerolling, strength promotion).
//!
//! Every pass preserves the observable behaviour of the program under the
//! CDFG executor.

mod constprop;
mod promote;
mod reroll;
mod stack;
mod width;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

pub use constprop::propagate_constants;
pub use promote::{canonical_shift_add, expand_shift_add, promote_strength};
pub use reroll::reroll_loops;
pub use stack::remove_stack_ops;
pub use width::reduce_operator_sizes;

use crate::ir::{Cdfg, IrError, NodeId, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pass {
    ConstProp,
    StackRemoval,
    Reroll,
    Promote,
    SizeReduction,
}

impl Pass {
    pub const ALL: [Pass; 5] = [Pass::ConstProp, Pass::StackRemoval, Pass::Reroll, Pass::Promote, Pass::SizeReduction];

    pub fn name(self) -> &'static str {
        match self {
            Pass::ConstProp => "constprop",
            Pass::StackRemoval => "stack",
            Pass::Reroll => "reroll",
            Pass::Promote => "promote",
            Pass::SizeReduction => "size",
        }
    }

    pub fn from_name(s: &str) -> Option<Pass> {
        Pass::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassConfig {
    /// Passes in execution order.
    pub passes: Vec<Pass>,
    /// Fixpoint iteration cap of the forward width analysis.
    pub size_iter_cap: usize,
    /// Largest unroll factor the rerolling pass looks for.
    pub reroll_max_factor: usize,
    /// Largest shift/add tree (in ops) strength promotion replaces.
    pub promote_max_chain: usize,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            passes: alloc::vec![
                Pass::ConstProp,
                Pass::StackRemoval,
                Pass::ConstProp,
                Pass::Reroll,
                Pass::Promote,
                Pass::SizeReduction,
            ],
            size_iter_cap: 64,
            reroll_max_factor: 8,
            promote_max_chain: 8,
        }
    }
}

impl PassConfig {
    pub fn none() -> Self {
        PassConfig { passes: Vec::new(), ..PassConfig::default() }
    }

    pub fn validate(&self) -> Result<(), PassError> {
        if self.size_iter_cap == 0 || self.reroll_max_factor < 2 || self.promote_max_chain < 2 {
            return Err(PassError::BadConfig);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rewrite {
    pub site: NodeId,
    pub rule: &'static str,
}

/// Outcome of one pass over one procedure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassStats {
    pub pass: Option<Pass>,
    pub proc_name: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub rewrites: Vec<Rewrite>,
    /// Near-matches a pass declined, with the reason.
    pub rejected: Vec<Rewrite>,
    pub iterations: usize,
}

impl PassStats {
    pub(crate) fn rewrite(&mut self, site: NodeId, rule: &'static str) {
        self.rewrites.push(Rewrite { site, rule });
    }

    pub(crate) fn reject(&mut self, site: NodeId, rule: &'static str) {
        self.rejected.push(Rewrite { site, rule });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassReport {
    pub stages: Vec<PassStats>,
}

impl PassReport {
    /// One `rewrite <pass> <site> <rule>` line per rewrite, then one
    /// `reject` line per declined match.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let name = s.pass.map_or("?", Pass::name);
            for r in &s.rewrites {
                let _ = writeln!(out, "rewrite {name} {} {}", r.site.0, r.rule);
            }
            for r in &s.rejected {
                let _ = writeln!(out, "reject {name} {} {}", r.site.0, r.rule);
            }
        }
        out
    }

    pub fn rewrites_of(&self, pass: Pass) -> usize {
        self.stages.iter().filter(|s| s.pass == Some(pass)).map(|s| s.rewrites.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PassError {
    BadConfig,
    Malformed { pass: Pass, error: IrError },
}

impl fmt::Display for PassError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PassError::BadConfig => f.write_str("invalid pass configuration"),
            PassError::Malformed { pass, error } => write!(f, "{pass}: {error}"),
        }
    }
}

impl core::error::Error for PassError {}

/// Runs one pass over one procedure.
pub fn run_pass(g: &mut Cdfg, pass: Pass, config: &PassConfig) -> PassStats {
    let mut stats =
        PassStats { pass: Some(pass), proc_name: g.name.clone(), nodes_before: g.node_count(), ..PassStats::default() };
    match pass {
        Pass::ConstProp => propagate_constants(g, &mut stats),
        Pass::StackRemoval => remove_stack_ops(g, &mut stats),
        Pass::Reroll => reroll_loops(g, config.reroll_max_factor, &mut stats),
        Pass::Promote => promote_strength(g, config.promote_max_chain, &mut stats),
        Pass::SizeReduction => reduce_operator_sizes(g, config.size_iter_cap, &mut stats),
    }
    // Inductions name node ids; keep them in step with the graph.
    crate::decompile::restructure(g);
    stats.nodes_after = g.node_count();
    stats
}

/// Runs the configured passes over one procedure, checking well-formedness
/// after each.
pub fn run_pipeline(mut g: Cdfg, config: &PassConfig) -> Result<(Cdfg, PassReport), PassError> {
    config.validate()?;
    let mut report = PassReport::default();
    for &pass in &config.passes {
        report.stages.push(run_pass(&mut g, pass, config));
        g.validate().map_err(|error| PassError::Malformed { pass, error })?;
    }
    Ok((g, report))
}

/// Runs the configured passes over every procedure of `program`, calling
/// `observe` after each stage with the whole program.
pub fn run_program_pipeline(
    program: &mut Program,
    config: &PassConfig,
    mut observe: impl FnMut(Pass, &Program),
) -> Result<PassReport, PassError> {
    config.validate()?;
    let mut report = PassReport::default();
    for &pass in &config.passes {
        for g in &mut program.procs {
            report.stages.push(run_pass(g, pass, config));
            g.validate().map_err(|error| PassError::Malformed { pass, error })?;
        }
        observe(pass, program);
    }
    Ok(report)
}
