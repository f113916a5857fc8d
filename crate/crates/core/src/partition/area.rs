//! Gate-count estimation and hardware suitability.

use alloc::collections::BTreeSet;

use crate::decompile::structure::RegionKind;
use crate::ir::{Cdfg, NodeId, OpKind};

/// Gates per operation as a function of bit width. Every entry is positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AreaTable {
    /// Adder/subtractor gates per bit.
    pub add: u64,
    /// Multiplier gates are `mul * w^2 / mul_div`.
    pub mul: u64,
    pub mul_div: u64,
    /// Barrel shifter gates per bit per stage (`ceil(log2 w)` stages).
    pub shift: u64,
    pub logic: u64,
    pub compare: u64,
    pub register: u64,
    /// Multiplexer gates per bit per extra phi input.
    pub mux: u64,
    /// Constant drivers and pass-through wiring, per bit.
    pub wire: u64,
    /// Memory port (address register plus data register) per bit.
    pub memory: u64,
}

impl Default for AreaTable {
    fn default() -> Self {
        AreaTable {
            add: 12,
            mul: 20,
            mul_div: 2,
            shift: 8,
            logic: 4,
            compare: 8,
            register: 8,
            mux: 4,
            wire: 1,
            memory: 8,
        }
    }
}

fn log2_ceil(w: u64) -> u64 {
    (64 - (w.max(2) - 1).leading_zeros()) as u64
}

impl AreaTable {
    /// Gates of one op; positive for every kind.
    pub fn op_gates(&self, g: &Cdfg, n: NodeId) -> u64 {
        let node = g.node(n);
        let w = node.width as u64;
        let operand_w = || node.operands.iter().map(|&o| g.node(o).width as u64).max().unwrap_or(32);
        match node.kind {
            OpKind::Add | OpKind::Sub => self.add * w,
            OpKind::Mul => (self.mul * w * w).div_ceil(self.mul_div).max(1),
            OpKind::Shl | OpKind::Lshr | OpKind::Ashr => self.shift * w * log2_ceil(w),
            OpKind::And | OpKind::Or | OpKind::Xor | OpKind::Nor => self.logic * w,
            OpKind::Slt | OpKind::Sltu | OpKind::Eq | OpKind::Ne => self.compare * operand_w(),
            OpKind::Phi => self.register * w + self.mux * w * (node.operands.len().max(1) as u64 - 1),
            OpKind::Load { .. } => self.memory * (32 + w),
            OpKind::Store { .. } => self.memory * (32 + operand_w()),
            OpKind::Env(_) | OpKind::Input => self.register * w,
            OpKind::Output | OpKind::Call { .. } => self.register * 32,
            OpKind::Const(_) | OpKind::Copy => self.wire * w,
        }
    }

    pub fn estimate(&self, g: &Cdfg, blocks: &BTreeSet<usize>) -> u64 {
        blocks.iter().flat_map(|&b| &g.blocks[b].ops).map(|&n| self.op_gates(g, n)).sum()
    }
}

/// Estimated gates of the ops in `blocks` under the default table.
pub fn estimate_area(g: &Cdfg, blocks: &BTreeSet<usize>) -> u64 {
    AreaTable::default().estimate(g, blocks)
}

/// `(arithmetic and logic fraction) * (1 or 0.5 when control is
/// unstructured) * (0 when the region calls a procedure or does I/O)`.
/// Phis, constants, copies and environment reads are not counted.
pub fn hardware_suitability(g: &Cdfg, blocks: &BTreeSet<usize>) -> f64 {
    let mut compute = 0usize;
    let mut other = 0usize;
    for &n in blocks.iter().flat_map(|&b| &g.blocks[b].ops) {
        match g.node(n).kind {
            OpKind::Call { .. } | OpKind::Input | OpKind::Output => return 0.0,
            k if k.is_binary() => compute += 1,
            OpKind::Load { .. } | OpKind::Store { .. } => other += 1,
            _ => {}
        }
    }
    if compute + other == 0 {
        return 0.0;
    }
    let unstructured = g
        .structure
        .regions()
        .iter()
        .any(|r| r.kind == RegionKind::Unstructured && r.blocks.iter().any(|b| blocks.contains(b)));
    let control = if unstructured { 0.5 } else { 1.0 };
    compute as f64 / (compute + other) as f64 * control
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BlockId, Terminator};
    use alloc::vec;
    use alloc::vec::Vec;

    fn one_block() -> (Cdfg, BlockId) {
        let mut g = Cdfg::new("t".into(), 0);
        let b = g.add_block(0, Terminator::Halt);
        (g, b)
    }

    #[test]
    fn single_add_is_384_gates() {
        let (mut g, b) = one_block();
        let x = g.alloc(OpKind::Env(4), Vec::new(), 0);
        let a = g.push(b, OpKind::Add, vec![x, x], 0);
        assert_eq!(AreaTable::default().op_gates(&g, a), 384);
        let only: BTreeSet<usize> = [b.index()].into();
        g.blocks[0].ops = vec![a];
        assert_eq!(estimate_area(&g, &only), 384);
    }

    #[test]
    fn empty_region_is_zero() {
        let (g, _) = one_block();
        assert_eq!(estimate_area(&g, &BTreeSet::new()), 0);
        assert_eq!(estimate_area(&g, &[0].into()), 0);
    }

    #[test]
    fn every_kind_costs_something() {
        let (mut g, b) = one_block();
        let x = g.push(b, OpKind::Env(4), Vec::new(), 0);
        let kinds = [
            OpKind::Const(1),
            OpKind::Copy,
            OpKind::Add,
            OpKind::Mul,
            OpKind::Shl,
            OpKind::Ashr,
            OpKind::Nor,
            OpKind::Sltu,
            OpKind::Load { width: crate::ir::MemWidth::Byte, signed: false, offset: 0 },
            OpKind::Store { width: crate::ir::MemWidth::Word, offset: 0 },
            OpKind::Input,
            OpKind::Output,
            OpKind::Phi,
        ];
        for k in kinds {
            let ops = match k.arity() {
                Some(n) => vec![x; n],
                None => vec![x, x],
            };
            for w in [1u8, 7, 32] {
                let n = g.alloc(k, ops.clone(), 0);
                g.node_mut(n).width = w;
                assert!(AreaTable::default().op_gates(&g, n) > 0, "{k} at {w}");
            }
        }
    }

    #[test]
    fn suitability_follows_the_formula() {
        let (mut g, b) = one_block();
        let x = g.push(b, OpKind::Env(4), Vec::new(), 0);
        let l = g.push(b, OpKind::Load { width: crate::ir::MemWidth::Word, signed: false, offset: 0 }, vec![x], 0);
        g.push(b, OpKind::Add, vec![l, x], 0);
        crate::decompile::restructure(&mut g);
        let only: BTreeSet<usize> = [0].into();
        assert_eq!(hardware_suitability(&g, &only), 0.5);
        g.push(b, OpKind::Output, vec![x], 0);
        assert_eq!(hardware_suitability(&g, &only), 0.0);
    }
}
