//! Behavioral synthesis of hardware regions.
//!
//! A region (a single-entry block set of one procedure) is turned into an
//! FSMD in four stages: the multiplier implementation decision, per-block
//! list scheduling, binding to states and registers, and VHDL emission.
//! [`simulate_rtl`] interprets the bound design cycle by cycle, and
//! [`HardwareHook`] splices it into the CDFG executor for co-simulation.

mod bind;
mod decide;
mod rtl;
pub mod schedule;
mod vhdl;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{Cdfg, NodeId, OpKind, Terminator};

pub use bind::{bind, DpOp, Edge, Next, Port, Register, RtlDesign, Src, State, Target};
pub use decide::{apply_shift_add, decide_multiplier_impl, shift_add_form, MulImpl};
pub use rtl::{simulate_rtl, HardwareHook, HwRegion, RtlError, RtlRun, HANDSHAKE_CYCLES};
pub use schedule::{check_schedule, BlockSchedule, Dag, DagOp, Schedule, Slot};
pub use vhdl::{check_vhdl, emit_vhdl, vhdl_identifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FuClass {
    Adder,
    Multiplier,
    Shifter,
    Logic,
    Comparator,
    MemoryPort,
}

impl FuClass {
    pub const ALL: [FuClass; 6] = [
        FuClass::Adder,
        FuClass::Multiplier,
        FuClass::Shifter,
        FuClass::Logic,
        FuClass::Comparator,
        FuClass::MemoryPort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuClass::Adder => "adder",
            FuClass::Multiplier => "multiplier",
            FuClass::Shifter => "shifter",
            FuClass::Logic => "logic",
            FuClass::Comparator => "comparator",
            FuClass::MemoryPort => "memory_port",
        }
    }

    pub fn from_name(s: &str) -> Option<FuClass> {
        FuClass::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Unit class executing `kind`; `None` for wiring (constants, copies,
    /// phis) and for ops hardware cannot run.
    pub fn of(kind: OpKind) -> Option<FuClass> {
        Some(match kind {
            OpKind::Add | OpKind::Sub => FuClass::Adder,
            OpKind::Mul => FuClass::Multiplier,
            OpKind::Shl | OpKind::Lshr | OpKind::Ashr => FuClass::Shifter,
            OpKind::And | OpKind::Or | OpKind::Xor | OpKind::Nor => FuClass::Logic,
            OpKind::Slt | OpKind::Sltu | OpKind::Eq | OpKind::Ne => FuClass::Comparator,
            OpKind::Load { .. } | OpKind::Store { .. } => FuClass::MemoryPort,
            _ => return None,
        })
    }
}

impl fmt::Display for FuClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unit counts and latencies (FPGA cycles) per class. Memory is a single
/// port, so its count is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResourceSet {
    counts: [u32; 6],
    latencies: [u32; 6],
}

impl Default for ResourceSet {
    fn default() -> Self {
        ResourceSet { counts: [2, 1, 1, 2, 1, 1], latencies: [1, 2, 1, 1, 1, 1] }
    }
}

impl ResourceSet {
    fn idx(c: FuClass) -> usize {
        FuClass::ALL.iter().position(|&x| x == c).unwrap()
    }

    pub fn count(&self, c: FuClass) -> u32 {
        self.counts[Self::idx(c)]
    }

    pub fn latency(&self, c: FuClass) -> u32 {
        self.latencies[Self::idx(c)]
    }

    pub fn set_count(&mut self, c: FuClass, n: u32) -> &mut Self {
        self.counts[Self::idx(c)] = n;
        self
    }

    pub fn set_latency(&mut self, c: FuClass, l: u32) -> &mut Self {
        self.latencies[Self::idx(c)] = l;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.count(FuClass::MemoryPort) > 1 {
            return Err(SynthError::BadResources(String::from("memory is single-ported")));
        }
        if let Some(c) = FuClass::ALL.into_iter().find(|&c| self.latency(c) == 0) {
            return Err(SynthError::BadResources(format!("{c} latency must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthError {
    BadResources(String),
    /// The region contains an op or terminator hardware cannot execute.
    Unsupported {
        node: Option<NodeId>,
        what: String,
    },
    /// More than one block is entered from outside the region.
    MultipleEntries(Vec<usize>),
    /// A multiplication with no multiplier and no shift/add form.
    NoFeasibleImpl(NodeId),
    /// An op class is used but has no units.
    NoUnits(FuClass),
    /// The bound design broke an internal invariant.
    Internal(String),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::BadResources(s) => write!(f, "bad resource set: {s}"),
            SynthError::Unsupported { node: Some(n), what } => write!(f, "node {} ({what}) cannot be synthesized", n.0),
            SynthError::Unsupported { node: None, what } => write!(f, "{what} cannot be synthesized"),
            SynthError::MultipleEntries(b) => write!(f, "region has several entry blocks {b:?}"),
            SynthError::NoFeasibleImpl(n) => write!(f, "node {} has no feasible multiplier implementation", n.0),
            SynthError::NoUnits(c) => write!(f, "no {c} units"),
            SynthError::Internal(s) => write!(f, "internal error: {s}"),
        }
    }
}

impl core::error::Error for SynthError {}

/// Values and control edges crossing the region boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interface {
    /// Block entered from outside.
    pub header: usize,
    /// Header first, then by address.
    pub blocks: Vec<usize>,
    /// Outside values read inside, after looking through copies.
    pub live_in: Vec<NodeId>,
    /// Header phis, loaded from the entering edge.
    pub entry_phis: Vec<NodeId>,
    /// Region values read outside.
    pub live_out: Vec<NodeId>,
    /// `(from, to)` edges leaving the region.
    pub exits: Vec<(usize, usize)>,
}

/// Follows copies to the value they forward.
pub fn canonical(g: &Cdfg, mut n: NodeId) -> NodeId {
    while g.node(n).kind == OpKind::Copy {
        n = g.node(n).operands[0];
    }
    n
}

pub fn region_interface(g: &Cdfg, blocks: &BTreeSet<usize>) -> Result<Interface, SynthError> {
    let placed = g.placement();
    let inside = |n: NodeId| placed.get(&n).is_some_and(|(b, _)| blocks.contains(&b.index()));
    let mut entries: Vec<usize> =
        blocks.iter().copied().filter(|&b| g.blocks[b].preds.iter().any(|p| !blocks.contains(&p.index()))).collect();
    if entries.len() > 1 {
        return Err(SynthError::MultipleEntries(entries));
    }
    let header = entries.pop().or_else(|| blocks.iter().copied().min_by_key(|&b| g.blocks[b].start)).unwrap_or(0);
    let mut order: Vec<usize> = blocks.iter().copied().filter(|&b| b != header).collect();
    order.sort_by_key(|&b| (g.blocks[b].start, b));
    if blocks.contains(&header) {
        order.insert(0, header);
    }

    let mut live_in = BTreeSet::new();
    let mut entry_phis = Vec::new();
    let mut exits = Vec::new();
    let note = |v: NodeId, live_in: &mut BTreeSet<NodeId>| {
        let c = canonical(g, v);
        if !inside(c) && !matches!(g.node(c).kind, OpKind::Const(_)) {
            live_in.insert(c);
        }
    };
    for &b in &order {
        let blk = &g.blocks[b];
        for &n in &blk.ops {
            let node = g.node(n);
            match node.kind {
                OpKind::Call { .. } | OpKind::Input | OpKind::Output | OpKind::Env(_) => {
                    return Err(SynthError::Unsupported { node: Some(n), what: String::from(node.kind.name()) });
                }
                OpKind::Phi => {
                    if b == header {
                        entry_phis.push(n);
                    }
                    for (k, &o) in node.operands.iter().enumerate() {
                        if blocks.contains(&blk.preds[k].index()) {
                            note(o, &mut live_in);
                        }
                    }
                }
                _ => {
                    for &o in &node.operands {
                        note(o, &mut live_in);
                    }
                }
            }
        }
        match &blk.term {
            Terminator::Halt | Terminator::Return { .. } => {
                return Err(SynthError::Unsupported { node: None, what: format!("exit terminator of block {b}") });
            }
            t => {
                for o in t.operands() {
                    note(o, &mut live_in);
                }
                let mut succ = t.successors();
                succ.dedup();
                for s in succ {
                    if !blocks.contains(&s.index()) {
                        exits.push((b, s.index()));
                    }
                }
            }
        }
    }

    let mut live_out = BTreeSet::new();
    for (bi, blk) in g.blocks.iter().enumerate() {
        if blocks.contains(&bi) {
            continue;
        }
        let uses = blk.ops.iter().flat_map(|&n| g.node(n).operands.iter().copied()).chain(blk.term.operands());
        for v in uses {
            if inside(v) {
                live_out.insert(v);
            }
        }
    }
    Ok(Interface {
        header,
        blocks: order,
        live_in: live_in.into_iter().collect(),
        entry_phis,
        live_out: live_out.into_iter().collect(),
        exits,
    })
}

/// Everything produced for one region.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub name: String,
    /// Procedure copy with the multiplier decisions applied.
    pub hw: Cdfg,
    pub interface: Interface,
    pub decisions: BTreeMap<NodeId, MulImpl>,
    pub schedule: Schedule,
    pub design: RtlDesign,
}

impl Synthesis {
    pub fn vhdl(&self) -> String {
        emit_vhdl(&self.design)
    }
}

/// Builds the dependence dag of `block`: data edges through copies plus
/// memory order between a store and any op that may touch the same bytes.
pub fn block_dag(g: &Cdfg, block: usize, res: &ResourceSet) -> Dag {
    let mut index: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut ops: Vec<DagOp> = Vec::new();
    let mut mem: Vec<usize> = Vec::new();
    for &n in &g.blocks[block].ops {
        let node = g.node(n);
        let Some(class) = FuClass::of(node.kind) else { continue };
        let mut preds: BTreeSet<usize> =
            node.operands.iter().filter_map(|&o| index.get(&canonical(g, o)).copied()).collect();
        if node.kind.is_memory() {
            let store = !node.kind.has_value();
            for &m in &mem {
                let other = g.node(ops[m].node);
                if (store || !other.kind.has_value()) && g.may_alias(ops[m].node, n) {
                    preds.insert(m);
                }
            }
            mem.push(ops.len());
        }
        index.insert(n, ops.len());
        ops.push(DagOp { node: n, class, latency: res.latency(class), preds: preds.into_iter().collect() });
    }
    Dag { ops }
}

/// Decides, schedules and binds the region `blocks` of `g`.
pub fn synthesize(g: &Cdfg, blocks: &BTreeSet<usize>, res: &ResourceSet, name: &str) -> Result<Synthesis, SynthError> {
    res.validate()?;
    let interface = region_interface(g, blocks)?;
    let mut hw = g.clone();
    let mut decisions = BTreeMap::new();
    for &b in &interface.blocks {
        decisions.extend(decide_multiplier_impl(&mut hw, b, res)?);
    }
    let mut schedule = Schedule::default();
    for &b in &interface.blocks {
        let dag = block_dag(&hw, b, res);
        if let Some(op) = dag.ops.iter().find(|o| res.count(o.class) == 0) {
            return Err(SynthError::NoUnits(op.class));
        }
        let s = schedule::schedule_block(b, dag, res);
        check_schedule(&s, res).map_err(SynthError::Internal)?;
        schedule.blocks.push(s);
    }
    let design = bind(&hw, &interface, &schedule, &vhdl_identifier(name));
    design.validate().map_err(SynthError::Internal)?;
    Ok(Synthesis { name: String::from(name), hw, interface, decisions, schedule, design })
}
