//! Instruction-set independent control/data flow graph.
//!
//! Each procedure is a [`Cdfg`]: an arena of [`Node`]s placed into basic
//! [`Block`]s, in SSA form with phi nodes at block starts. Data edges are the
//! node operands; memory-order edges are derived on demand.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::decompile::dom::{compute_dominators, BlockGraph};
use crate::decompile::structure::StructureTree;
use crate::isa::Reg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemWidth {
    Byte,
    Word,
}

impl MemWidth {
    pub fn bytes(self) -> u32 {
        match self {
            MemWidth::Byte => 1,
            MemWidth::Word => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Const(u32),
    Copy,
    /// Register value of the procedure environment: the caller's register
    /// file at entry, or the callee's after a call in the same block.
    Env(Reg),
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Nor,
    Shl,
    Lshr,
    Ashr,
    Slt,
    Sltu,
    Eq,
    Ne,
    Load {
        width: MemWidth,
        signed: bool,
        offset: i32,
    },
    Store {
        width: MemWidth,
        offset: i32,
    },
    /// Operands are the values of `$1..=$31`.
    Call {
        target: u32,
    },
    Input,
    Output,
    Phi,
}

/// Number of register operands passed to a call or returned.
pub const REG_VALUES: usize = 31;

impl OpKind {
    pub fn name(&self) -> &'static str {
        use OpKind::*;
        match self {
            Const(_) => "const",
            Copy => "copy",
            Env(_) => "env",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            And => "and",
            Or => "or",
            Xor => "xor",
            Nor => "nor",
            Shl => "shl",
            Lshr => "lshr",
            Ashr => "ashr",
            Slt => "slt",
            Sltu => "sltu",
            Eq => "eq",
            Ne => "ne",
            Load { .. } => "load",
            Store { .. } => "store",
            Call { .. } => "call",
            Input => "input",
            Output => "output",
            Phi => "phi",
        }
    }

    pub fn is_binary(&self) -> bool {
        use OpKind::*;
        matches!(self, Add | Sub | Mul | And | Or | Xor | Nor | Shl | Lshr | Ashr | Slt | Sltu | Eq | Ne)
    }

    pub fn is_compare(&self) -> bool {
        matches!(self, OpKind::Slt | OpKind::Sltu | OpKind::Eq | OpKind::Ne)
    }

    pub fn is_shift(&self) -> bool {
        matches!(self, OpKind::Shl | OpKind::Lshr | OpKind::Ashr)
    }

    pub fn is_commutative(&self) -> bool {
        use OpKind::*;
        matches!(self, Add | Mul | And | Or | Xor | Nor | Eq | Ne)
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, OpKind::Load { .. } | OpKind::Store { .. })
    }

    /// Ops that must execute even when their value is unused.
    pub fn has_side_effect(&self) -> bool {
        matches!(self, OpKind::Store { .. } | OpKind::Call { .. } | OpKind::Input | OpKind::Output)
    }

    /// Ops that produce a value.
    pub fn has_value(&self) -> bool {
        !matches!(self, OpKind::Store { .. } | OpKind::Output | OpKind::Call { .. })
    }

    /// Fixed operand count, `None` for phi (one per predecessor).
    pub fn arity(&self) -> Option<usize> {
        use OpKind::*;
        Some(match self {
            Const(_) | Env(_) | Input => 0,
            Copy | Load { .. } | Output => 1,
            Store { .. } => 2,
            Call { .. } => REG_VALUES,
            Phi => return None,
            _ => 2,
        })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = |w: &MemWidth| match w {
            MemWidth::Byte => "b",
            MemWidth::Word => "w",
        };
        match self {
            OpKind::Const(v) => write!(f, "const={:#x}", v),
            OpKind::Env(r) => write!(f, "env=r{r}"),
            OpKind::Load { width, signed, offset } => {
                write!(f, "load.{}{}{:+}", w(width), if *signed { "s" } else { "" }, offset)
            }
            OpKind::Store { width, offset } => write!(f, "store.{}{:+}", w(width), offset),
            OpKind::Call { target } => write!(f, "call={target:#x}"),
            k => f.write_str(k.name()),
        }
    }
}

/// Evaluates a pure binary op with 32-bit two's-complement semantics.
/// Variable shifts use the low five bits of the amount.
pub fn eval_binary(kind: OpKind, a: u32, b: u32) -> u32 {
    use OpKind::*;
    match kind {
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Mul => a.wrapping_mul(b),
        And => a & b,
        Or => a | b,
        Xor => a ^ b,
        Nor => !(a | b),
        Shl => a << (b & 31),
        Lshr => a >> (b & 31),
        Ashr => ((a as i32) >> (b & 31)) as u32,
        Slt => ((a as i32) < (b as i32)) as u32,
        Sltu => (a < b) as u32,
        Eq => (a == b) as u32,
        Ne => (a != b) as u32,
        _ => panic!("{kind} is not a binary op"),
    }
}

pub fn mask(value: u32, width: u8) -> u32 {
    if width >= 32 {
        value
    } else {
        value & ((1u32 << width) - 1)
    }
}

/// Reference into a [`ShiftAddAlt`] recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AltRef {
    X,
    Step(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AltStep {
    Shl(AltRef, u8),
    Add(AltRef, AltRef),
    Sub(AltRef, AltRef),
}

/// Shift/add form of a constant multiplication `x * c`; the last step is the
/// result.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ShiftAddAlt {
    pub steps: Vec<AltStep>,
}

impl ShiftAddAlt {
    pub fn eval(&self, x: u32) -> u32 {
        let mut vals: Vec<u32> = Vec::with_capacity(self.steps.len());
        let get = |vals: &Vec<u32>, r: AltRef| match r {
            AltRef::X => x,
            AltRef::Step(i) => vals[i],
        };
        for s in &self.steps {
            let v = match *s {
                AltStep::Shl(a, sh) => get(&vals, a) << sh,
                AltStep::Add(a, b) => get(&vals, a).wrapping_add(get(&vals, b)),
                AltStep::Sub(a, b) => get(&vals, a).wrapping_sub(get(&vals, b)),
            };
            vals.push(v);
        }
        vals.last().copied().unwrap_or(x)
    }

    /// The multiplier this recipe computes.
    pub fn factor(&self) -> u32 {
        self.eval(1)
    }
}

impl fmt::Display for ShiftAddAlt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |r: AltRef| match r {
            AltRef::X => String::from("x"),
            AltRef::Step(i) => format!("t{i}"),
        };
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            match *s {
                AltStep::Shl(a, sh) => write!(f, "t{i}=shl({},{sh})", r(a))?,
                AltStep::Add(a, b) => write!(f, "t{i}=add({},{})", r(a), r(b))?,
                AltStep::Sub(a, b) => write!(f, "t{i}=sub({},{})", r(a), r(b))?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: OpKind,
    pub operands: Vec<NodeId>,
    /// Bit width of the result, 1..=32.
    pub width: u8,
    /// Address of the machine instruction this node came from.
    pub origin: u32,
    /// Register merged by a phi or read by an env node.
    pub var: Option<Reg>,
    pub anno: Option<ShiftAddAlt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Terminator {
    Jump(BlockId),
    /// Goes to `taken` when `cond` is nonzero.
    Branch {
        cond: NodeId,
        taken: BlockId,
        fallthrough: BlockId,
    },
    /// Values of `$1..=$31` handed back to the caller.
    Return {
        values: Vec<NodeId>,
    },
    Halt,
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Jump(t) => vec![*t],
            Terminator::Branch { taken, fallthrough, .. } if taken == fallthrough => vec![*taken],
            Terminator::Branch { taken, fallthrough, .. } => vec![*taken, *fallthrough],
            _ => Vec::new(),
        }
    }

    pub fn operands(&self) -> Vec<NodeId> {
        match self {
            Terminator::Branch { cond, .. } => vec![*cond],
            Terminator::Return { values } => values.clone(),
            _ => Vec::new(),
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut NodeId> {
        match self {
            Terminator::Branch { cond, .. } => vec![cond],
            Terminator::Return { values } => values.iter_mut().collect(),
            _ => Vec::new(),
        }
    }

    pub fn retarget(&mut self, from: BlockId, to: BlockId) {
        match self {
            Terminator::Jump(t) if *t == from => *t = to,
            Terminator::Branch { taken, fallthrough, .. } => {
                if *taken == from {
                    *taken = to;
                }
                if *fallthrough == from {
                    *fallthrough = to;
                }
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    /// Start address of the machine block (procedure entry for the
    /// synthetic entry block).
    pub start: u32,
    /// Machine instruction addresses this block accounts for.
    pub addrs: Vec<u32>,
    /// Phis first, then the remaining ops in execution order.
    pub ops: Vec<NodeId>,
    pub term: Terminator,
    pub preds: Vec<BlockId>,
    pub live_in: BTreeSet<Reg>,
    pub live_out: BTreeSet<Reg>,
    /// Extra blocks with no machine counterpart.
    pub synthetic: bool,
}

impl Block {
    pub fn new(id: BlockId, start: u32, term: Terminator) -> Self {
        Block {
            id,
            start,
            addrs: Vec::new(),
            ops: Vec::new(),
            term,
            preds: Vec::new(),
            live_in: BTreeSet::new(),
            live_out: BTreeSet::new(),
            synthetic: false,
        }
    }
}

/// Per-procedure control/data flow graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cdfg {
    pub name: String,
    pub entry_addr: u32,
    pub entry: BlockId,
    pub nodes: Vec<Node>,
    pub blocks: Vec<Block>,
    pub structure: StructureTree,
}

/// Decompiled program: one CDFG per procedure plus initial data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub procs: Vec<Cdfg>,
    pub main: usize,
    pub data_base: u32,
    pub data: Vec<u8>,
}

impl Program {
    pub fn proc_by_entry(&self, addr: u32) -> Option<usize> {
        self.procs.iter().position(|p| p.entry_addr == addr)
    }

    pub fn node_count(&self) -> usize {
        self.procs.iter().map(Cdfg::node_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrError(pub String);

impl fmt::Display for IrError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed CDFG: {}", self.0)
    }
}

impl core::error::Error for IrError {}

impl Cdfg {
    pub fn new(name: String, entry_addr: u32) -> Self {
        Cdfg {
            name,
            entry_addr,
            entry: BlockId(0),
            nodes: Vec::new(),
            blocks: Vec::new(),
            structure: StructureTree::default(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.index()]
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut Block {
        &mut self.blocks[id.index()]
    }

    /// Allocates a node without placing it in a block.
    pub fn alloc(&mut self, kind: OpKind, operands: Vec<NodeId>, origin: u32) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, kind, operands, width: 32, origin, var: None, anno: None });
        id
    }

    /// Allocates a node and appends it to `block`.
    pub fn push(&mut self, block: BlockId, kind: OpKind, operands: Vec<NodeId>, origin: u32) -> NodeId {
        let id = self.alloc(kind, operands, origin);
        self.blocks[block.index()].ops.push(id);
        id
    }

    pub fn add_block(&mut self, start: u32, term: Terminator) -> BlockId {
        let id = BlockId(self.blocks.len() as u32);
        self.blocks.push(Block::new(id, start, term));
        id
    }

    /// Number of placed nodes.
    pub fn node_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }

    pub fn const_value(&self, id: NodeId) -> Option<u32> {
        match self.node(id).kind {
            OpKind::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Block containing each placed node.
    pub fn placement(&self) -> BTreeMap<NodeId, (BlockId, usize)> {
        let mut at = BTreeMap::new();
        for b in &self.blocks {
            for (i, &n) in b.ops.iter().enumerate() {
                at.insert(n, (b.id, i));
            }
        }
        at
    }

    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        self.block(b).term.successors()
    }

    /// Recomputes predecessor lists from terminators. Phi operands are
    /// permuted to follow; a phi operand for a dropped predecessor is removed.
    pub fn rebuild_preds(&mut self) {
        let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); self.blocks.len()];
        for b in &self.blocks {
            for s in b.term.successors() {
                if !preds[s.index()].contains(&b.id) {
                    preds[s.index()].push(b.id);
                }
            }
        }
        for (bi, new_preds) in preds.into_iter().enumerate() {
            let old = core::mem::take(&mut self.blocks[bi].preds);
            if old != new_preds {
                let phis: Vec<NodeId> =
                    self.blocks[bi].ops.iter().copied().filter(|&n| self.node(n).kind == OpKind::Phi).collect();
                for phi in phis {
                    let ops = &self.nodes[phi.index()].operands;
                    let remapped: Vec<NodeId> = new_preds
                        .iter()
                        .map(|p| {
                            let i = old.iter().position(|o| o == p).expect("phi operand for new predecessor");
                            ops[i]
                        })
                        .collect();
                    self.nodes[phi.index()].operands = remapped;
                }
            }
            self.blocks[bi].preds = new_preds;
        }
    }

    pub fn graph(&self) -> BlockGraph {
        BlockGraph {
            succs: self.blocks.iter().map(|b| b.term.successors().iter().map(|s| s.index()).collect()).collect(),
            entry: self.entry.index(),
        }
    }

    /// Use counts over placed nodes and terminators.
    pub fn use_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut uses: BTreeMap<NodeId, usize> = BTreeMap::new();
        for b in &self.blocks {
            for &n in &b.ops {
                for &o in &self.node(n).operands {
                    *uses.entry(o).or_default() += 1;
                }
            }
            for o in b.term.operands() {
                *uses.entry(o).or_default() += 1;
            }
        }
        uses
    }

    /// Users of each node (placed nodes only; terminators are not listed).
    pub fn users(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut users: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for b in &self.blocks {
            for &n in &b.ops {
                for &o in &self.node(n).operands {
                    users.entry(o).or_default().push(n);
                }
            }
        }
        users
    }

    /// Rewrites every use according to `map`, following chains.
    pub fn replace_uses(&mut self, map: &BTreeMap<NodeId, NodeId>) {
        if map.is_empty() {
            return;
        }
        let resolve = |mut id: NodeId| {
            let mut hops = 0;
            while let Some(&next) = map.get(&id) {
                if next == id || hops > map.len() {
                    break;
                }
                id = next;
                hops += 1;
            }
            id
        };
        for node in &mut self.nodes {
            for o in &mut node.operands {
                *o = resolve(*o);
            }
        }
        for b in &mut self.blocks {
            for o in b.term.operands_mut() {
                *o = resolve(*o);
            }
        }
    }

    /// Removes ops whose values are unused and that have no side effects.
    /// Returns the number of ops removed.
    pub fn remove_dead(&mut self) -> usize {
        let mut live: BTreeSet<NodeId> = BTreeSet::new();
        let mut work: Vec<NodeId> = Vec::new();
        for b in &self.blocks {
            for &n in &b.ops {
                if self.node(n).kind.has_side_effect() {
                    work.push(n);
                }
            }
            work.extend(b.term.operands());
        }
        while let Some(n) = work.pop() {
            if live.insert(n) {
                work.extend(self.node(n).operands.iter().copied());
            }
        }
        let mut removed = 0;
        for b in &mut self.blocks {
            let before = b.ops.len();
            b.ops.retain(|n| live.contains(n));
            removed += before - b.ops.len();
        }
        removed
    }

    /// Follows `add(x, const)` / `sub(x, const)` chains to a root and a
    /// constant displacement.
    pub fn affine_base(&self, mut id: NodeId) -> (NodeId, i64) {
        let mut off: i64 = 0;
        for _ in 0..64 {
            let n = self.node(id);
            match n.kind {
                OpKind::Add | OpKind::Sub => {
                    let (a, b) = (n.operands[0], n.operands[1]);
                    if let Some(c) = self.const_value(b) {
                        off += if n.kind == OpKind::Add { c as i32 as i64 } else { -(c as i32 as i64) };
                        id = a;
                    } else if let (OpKind::Add, Some(c)) = (n.kind, self.const_value(a)) {
                        off += c as i32 as i64;
                        id = b;
                    } else {
                        break;
                    }
                }
                OpKind::Copy => id = n.operands[0],
                _ => break,
            }
        }
        (id, off)
    }

    /// Whether two memory ops may touch overlapping bytes.
    pub fn may_alias(&self, a: NodeId, b: NodeId) -> bool {
        let footprint = |id: NodeId| -> Option<(Option<NodeId>, i64, i64)> {
            let n = self.node(id);
            let (width, offset) = match n.kind {
                OpKind::Load { width, offset, .. } | OpKind::Store { width, offset } => (width, offset),
                _ => return None,
            };
            let (root, disp) = self.affine_base(n.operands[0]);
            let start = disp + offset as i64;
            match self.const_value(root) {
                Some(c) => Some((None, start + c as i64, width.bytes() as i64)),
                None => Some((Some(root), start, width.bytes() as i64)),
            }
        };
        match (footprint(a), footprint(b)) {
            (Some((ra, sa, la)), Some((rb, sb, lb))) if ra == rb => {
                let (sa, sb) = if ra.is_none() { (sa & 0xffff_ffff, sb & 0xffff_ffff) } else { (sa, sb) };
                sa < sb + lb && sb < sa + la
            }
            _ => true,
        }
    }

    /// Memory-order edges inside each block: loads and stores that may
    /// alias (at least one a store), plus the program order of calls and
    /// I/O with every memory or I/O op.
    pub fn memory_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges = Vec::new();
        for b in &self.blocks {
            let ordered: Vec<NodeId> = b
                .ops
                .iter()
                .copied()
                .filter(|&n| {
                    let k = self.node(n).kind;
                    k.is_memory() || k.has_side_effect() || k == OpKind::Input
                })
                .collect();
            for (i, &x) in ordered.iter().enumerate() {
                for &y in &ordered[i + 1..] {
                    let (kx, ky) = (self.node(x).kind, self.node(y).kind);
                    let need = match (kx.is_memory(), ky.is_memory()) {
                        (true, true) => {
                            (matches!(kx, OpKind::Store { .. }) || matches!(ky, OpKind::Store { .. }))
                                && self.may_alias(x, y)
                        }
                        (true, false) | (false, true) => {
                            matches!(kx, OpKind::Call { .. }) || matches!(ky, OpKind::Call { .. })
                        }
                        (false, false) => true,
                    };
                    if need {
                        edges.push((x, y));
                    }
                }
            }
        }
        edges
    }

    /// Def-use edges between placed nodes (terminator uses excluded).
    pub fn data_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges = Vec::new();
        for b in &self.blocks {
            for &n in &b.ops {
                for &o in &self.node(n).operands {
                    edges.push((o, n));
                }
            }
        }
        edges
    }

    /// Checks arity, widths, placement, predecessor consistency and
    /// dominance of definitions over uses.
    pub fn validate(&self) -> Result<(), IrError> {
        let err = |s: String| Err(IrError(s));
        let at = self.placement();
        let mut seen = BTreeSet::new();
        let mut expect_preds: Vec<Vec<BlockId>> = vec![Vec::new(); self.blocks.len()];
        for b in &self.blocks {
            for s in b.term.successors() {
                if s.index() >= self.blocks.len() {
                    return err(format!("{} jumps to missing {}", b.id, s));
                }
                if !expect_preds[s.index()].contains(&b.id) {
                    expect_preds[s.index()].push(b.id);
                }
            }
        }
        let graph = self.graph();
        let (dom, _) = compute_dominators(&graph);
        let reachable = |b: BlockId| dom.is_reachable(b.index());
        let dominates = |d: BlockId, b: BlockId| dom.dominates(d.index(), b.index());
        for b in &self.blocks {
            let mut sorted_p = b.preds.clone();
            sorted_p.sort();
            let mut sorted_e = expect_preds[b.id.index()].clone();
            sorted_e.sort();
            if sorted_p != sorted_e {
                return err(format!("{} predecessor list out of date", b.id));
            }
            let mut in_phis = true;
            for (i, &n) in b.ops.iter().enumerate() {
                if !seen.insert(n) {
                    return err(format!("{n} placed twice"));
                }
                let node = self.node(n);
                if node.width == 0 || node.width > 32 {
                    return err(format!("{n} width {}", node.width));
                }
                if node.kind == OpKind::Phi {
                    if !in_phis {
                        return err(format!("{n} phi after non-phi in {}", b.id));
                    }
                    if node.operands.len() != b.preds.len() {
                        return err(format!("{n} phi arity {} vs {} preds", node.operands.len(), b.preds.len()));
                    }
                } else {
                    in_phis = false;
                    if node.kind.arity() != Some(node.operands.len()) {
                        return err(format!("{n} {} has {} operands", node.kind, node.operands.len()));
                    }
                }
                if !reachable(b.id) {
                    continue;
                }
                for (k, &o) in node.operands.iter().enumerate() {
                    let Some(&(db, di)) = at.get(&o) else {
                        return err(format!("{n} uses unplaced {o}"));
                    };
                    if !self.node(o).kind.has_value() {
                        return err(format!("{n} uses valueless {o}"));
                    }
                    if node.kind == OpKind::Phi {
                        let p = b.preds[k];
                        if reachable(p) && !dominates(db, p) {
                            return err(format!("phi {n} operand {o} does not dominate {p}"));
                        }
                    } else if db == b.id {
                        if di >= i {
                            return err(format!("{n} uses {o} before its definition"));
                        }
                    } else if !dominates(db, b.id) {
                        return err(format!("{o} does not dominate its use {n}"));
                    }
                }
            }
            if reachable(b.id) {
                for o in b.term.operands() {
                    let Some(&(db, _)) = at.get(&o) else {
                        return err(format!("terminator of {} uses unplaced {o}", b.id));
                    };
                    if !dominates(db, b.id) {
                        return err(format!("terminator of {} uses non-dominating {o}", b.id));
                    }
                }
            }
            if let Terminator::Return { values } = &b.term {
                if values.len() != REG_VALUES {
                    return err(format!("{} returns {} values", b.id, values.len()));
                }
            }
        }
        Ok(())
    }

    /// Deterministic text dump used by golden tests and the CLI.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "proc {} entry {} @{:#010x}", self.name, self.entry, self.entry_addr);
        for b in &self.blocks {
            let preds: Vec<String> = b.preds.iter().map(|p| format!("{p}")).collect();
            let _ = writeln!(out, "block {} @{:#010x} preds [{}]", b.id, b.start, preds.join(" "));
            for &n in &b.ops {
                let node = self.node(n);
                let _ = write!(out, "node {} {} {}", node.id.0, node.kind, node.width);
                for o in &node.operands {
                    let _ = write!(out, " {o}");
                }
                let _ = write!(out, " @{:#010x}", node.origin);
                if let Some(alt) = &node.anno {
                    let _ = write!(out, " alt[{alt}]");
                }
                out.push('\n');
            }
            match &b.term {
                Terminator::Jump(t) => {
                    let _ = writeln!(out, "term jump {t}");
                }
                Terminator::Branch { cond, taken, fallthrough } => {
                    let _ = writeln!(out, "term branch_cond {cond} {taken} {fallthrough}");
                }
                Terminator::Return { .. } => out.push_str("term return\n"),
                Terminator::Halt => out.push_str("term halt\n"),
            }
        }
        for (a, b) in self.data_edges() {
            let _ = writeln!(out, "dedge {} {}", a.0, b.0);
        }
        for (a, b) in self.memory_edges() {
            let _ = writeln!(out, "medge {} {}", a.0, b.0);
        }
        for b in &self.blocks {
            match &b.term {
                Terminator::Jump(t) => {
                    let _ = writeln!(out, "cedge {} {} jump", b.id, t);
                }
                Terminator::Branch { taken, fallthrough, .. } => {
                    let _ = writeln!(out, "cedge {} {} taken", b.id, taken);
                    let _ = writeln!(out, "cedge {} {} fallthrough", b.id, fallthrough);
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_semantics() {
        assert_eq!(eval_binary(OpKind::Sub, 0, 1), u32::MAX);
        assert_eq!(eval_binary(OpKind::Ashr, 0x8000_0000, 31), u32::MAX);
        assert_eq!(eval_binary(OpKind::Lshr, 0x8000_0000, 33), 0x4000_0000);
        assert_eq!(eval_binary(OpKind::Slt, u32::MAX, 0), 1);
        assert_eq!(eval_binary(OpKind::Sltu, u32::MAX, 0), 0);
        assert_eq!(eval_binary(OpKind::Nor, 0, 0), u32::MAX);
    }

    #[test]
    fn shift_add_recipe_evaluates() {
        // x*10 = (x<<3) + (x<<1)
        let alt = ShiftAddAlt {
            steps: vec![
                AltStep::Shl(AltRef::X, 3),
                AltStep::Shl(AltRef::X, 1),
                AltStep::Add(AltRef::Step(0), AltRef::Step(1)),
            ],
        };
        assert_eq!(alt.factor(), 10);
        assert_eq!(alt.eval(7), 70);
    }

    #[test]
    fn disjoint_offsets_do_not_alias() {
        let mut g = Cdfg::new("t".into(), 0);
        let b = g.add_block(0, Terminator::Halt);
        let base = g.push(b, OpKind::Env(8), vec![], 0);
        let v = g.push(b, OpKind::Const(1), vec![], 0);
        let st = g.push(b, OpKind::Store { width: MemWidth::Word, offset: 0 }, vec![base, v], 0);
        let ld = g.push(b, OpKind::Load { width: MemWidth::Word, signed: false, offset: 4 }, vec![base], 0);
        let ld0 = g.push(b, OpKind::Load { width: MemWidth::Word, signed: false, offset: 0 }, vec![base], 0);
        let edges = g.memory_edges();
        assert!(!edges.contains(&(st, ld)));
        assert!(edges.contains(&(st, ld0)));
    }
}
