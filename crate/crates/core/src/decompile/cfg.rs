//! Per-procedure control flow graphs over the linear IR.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::dom::BlockGraph;
use super::parse::{IrInst, LinKind};
use super::DecompileError;
use crate::ir::OpKind;
use crate::isa::ProgramImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Call,
    Return,
}

/// Edge of a procedure CFG. Call and return edges leave the procedure and
/// have no block target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CfgEdge {
    pub from: usize,
    pub to: Option<usize>,
    pub kind: EdgeKind,
    /// Callee entry for call edges.
    pub callee: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfgBlock {
    pub start: u32,
    pub addrs: Vec<u32>,
    pub insts: Vec<IrInst>,
    /// Intra-procedure successors: `[taken, fallthrough]` for a branch,
    /// otherwise at most one.
    pub succs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub entry_addr: u32,
    pub entry: usize,
    /// Ordered by start address.
    pub blocks: Vec<CfgBlock>,
    pub edges: Vec<CfgEdge>,
}

impl Cfg {
    pub fn graph(&self) -> BlockGraph {
        BlockGraph { succs: self.blocks.iter().map(|b| b.succs.clone()).collect(), entry: self.entry }
    }

    pub fn block_at(&self, addr: u32) -> Option<usize> {
        self.blocks.iter().position(|b| b.start == addr)
    }

    pub fn callees(&self) -> BTreeSet<u32> {
        self.edges.iter().filter_map(|e| e.callee).collect()
    }
}

/// IR instructions grouped by origin address.
pub(crate) fn index_by_origin(ir: &[IrInst]) -> BTreeMap<u32, Vec<IrInst>> {
    let mut by = BTreeMap::new();
    for i in ir {
        by.entry(i.origin).or_insert_with(Vec::new).push(i.clone());
    }
    by
}

/// Builds the CFG of the procedure entered at `entry`, following intra-
/// procedure edges only. `JR $31` closes the procedure; any other `JR` fails.
pub fn build_cfg(
    ir: &BTreeMap<u32, Vec<IrInst>>,
    image: &ProgramImage,
    leaders: &BTreeSet<u32>,
    entry: u32,
) -> Result<Cfg, DecompileError> {
    struct Raw {
        addrs: Vec<u32>,
        insts: Vec<IrInst>,
        next: Vec<(u32, EdgeKind)>,
        call: Option<u32>,
        ret: bool,
    }
    let mut raw: BTreeMap<u32, Raw> = BTreeMap::new();
    let mut work = alloc::vec![entry];
    while let Some(start) = work.pop() {
        if raw.contains_key(&start) {
            continue;
        }
        let mut a = start;
        let mut r = Raw { addrs: Vec::new(), insts: Vec::new(), next: Vec::new(), call: None, ret: false };
        loop {
            if !image.contains_text(a) {
                return Err(DecompileError::FallsOffText { address: a.wrapping_sub(4) });
            }
            r.addrs.push(a);
            let here = ir.get(&a).cloned().unwrap_or_default();
            let last = here.last().map(|i| i.kind.clone());
            r.insts.extend(here);
            match last {
                Some(LinKind::Branch { target }) => {
                    r.next.push((target, EdgeKind::Taken));
                    r.next.push((a + 4, EdgeKind::Fallthrough));
                    break;
                }
                Some(LinKind::Jump { target }) => {
                    r.next.push((target, EdgeKind::Taken));
                    break;
                }
                Some(LinKind::Op(OpKind::Call { target })) => {
                    r.call = Some(target);
                    r.next.push((a + 4, EdgeKind::Fallthrough));
                    break;
                }
                Some(LinKind::Return) => {
                    r.ret = true;
                    break;
                }
                Some(LinKind::Halt) => break,
                Some(LinKind::IndirectJump { .. }) => return Err(DecompileError::IndirectJump { address: a }),
                Some(LinKind::UnresolvedSyscall) => return Err(DecompileError::UnresolvedSyscall { address: a }),
                _ => {}
            }
            a += 4;
            if leaders.contains(&a) {
                r.next.push((a, EdgeKind::Fallthrough));
                break;
            }
        }
        for &(t, _) in &r.next {
            if !image.contains_text(t) {
                return Err(DecompileError::FallsOffText { address: a });
            }
            work.push(t);
        }
        raw.insert(start, r);
    }
    let index: BTreeMap<u32, usize> = raw.keys().enumerate().map(|(i, &a)| (a, i)).collect();
    let mut blocks = Vec::with_capacity(raw.len());
    let mut edges = Vec::new();
    for (i, (start, r)) in raw.into_iter().enumerate() {
        for &(t, kind) in &r.next {
            edges.push(CfgEdge { from: i, to: Some(index[&t]), kind, callee: None });
        }
        if let Some(c) = r.call {
            edges.push(CfgEdge { from: i, to: None, kind: EdgeKind::Call, callee: Some(c) });
        }
        if r.ret {
            edges.push(CfgEdge { from: i, to: None, kind: EdgeKind::Return, callee: None });
        }
        let succs = r.next.iter().map(|(t, _)| index[t]).collect();
        blocks.push(CfgBlock { start, addrs: r.addrs, insts: r.insts, succs });
    }
    edges.sort();
    Ok(Cfg { entry_addr: entry, entry: index[&entry], blocks, edges })
}
