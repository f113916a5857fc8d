//! Operator size reduction.
//!
//! A forward pass bounds each value as unsigned `< 2^fwd`; a backward pass
//! computes how many low bits any user can observe. The annotated width is
//! `max(1, min(fwd, demanded))`, so truncating every value to its width
//! leaves every observable result unchanged.
//!
//! Forward widths start at the bottom and grow to the least fixpoint; if the
//! iteration cap is hit every phi falls back to 32 bits.

use alloc::vec;
use alloc::vec::Vec;

use super::PassStats;
use crate::ir::{Cdfg, MemWidth, NodeId, OpKind, Terminator};

fn bits(v: u32) -> u8 {
    (32 - v.leading_zeros()).max(1) as u8
}

pub fn reduce_operator_sizes(g: &mut Cdfg, iter_cap: usize, stats: &mut PassStats) {
    let order: Vec<NodeId> = g.blocks.iter().flat_map(|b| b.ops.iter().copied()).collect();
    let (fwd, iters) = forward(g, &order, iter_cap);
    let dem = demanded(g, &order);
    stats.iterations = iters;
    for &n in &order {
        let node = g.node(n);
        let w = if node.kind.has_value() { fwd[n.index()].min(dem[n.index()]).max(1) } else { 32 };
        if w != node.width {
            if w < node.width {
                stats.rewrite(n, "narrow");
            }
            g.node_mut(n).width = w;
        }
    }
}

fn forward(g: &Cdfg, order: &[NodeId], cap: usize) -> (Vec<u8>, usize) {
    // Bottom everywhere: the least fixpoint is the tightest sound bound.
    let mut w = vec![0u8; g.nodes.len()];
    let mut iters = 0;
    loop {
        iters += 1;
        let mut changed = false;
        for &n in order {
            let v = transfer(g, n, &w);
            if v != w[n.index()] {
                w[n.index()] = v;
                changed = true;
            }
        }
        if !changed {
            return (w, iters);
        }
        if iters >= cap {
            break;
        }
    }
    // Not converged: restart with phis pinned at full width.
    for &n in order {
        w[n.index()] = if g.node(n).kind == OpKind::Phi { 32 } else { 0 };
    }
    let mut pinned = iters;
    loop {
        pinned += 1;
        let mut changed = false;
        for &n in order {
            if g.node(n).kind == OpKind::Phi {
                continue;
            }
            let v = transfer(g, n, &w);
            if v != w[n.index()] {
                w[n.index()] = v;
                changed = true;
            }
        }
        if !changed {
            return (w, pinned);
        }
    }
}

fn transfer(g: &Cdfg, n: NodeId, w: &[u8]) -> u8 {
    let node = g.node(n);
    let a = |i: usize| w[node.operands[i].index()];
    let c = |i: usize| g.const_value(node.operands[i]);
    let v: u32 = match node.kind {
        OpKind::Const(v) => bits(v) as u32,
        OpKind::Copy => a(0) as u32,
        OpKind::Phi => node.operands.iter().map(|o| w[o.index()]).max().unwrap_or(32) as u32,
        OpKind::Add => a(0).max(a(1)) as u32 + 1,
        OpKind::Mul => a(0) as u32 + a(1) as u32,
        OpKind::And => a(0).min(a(1)) as u32,
        OpKind::Or | OpKind::Xor => a(0).max(a(1)) as u32,
        OpKind::Shl => match c(1) {
            Some(s) => a(0) as u32 + (s & 31),
            None => 32,
        },
        OpKind::Lshr => match c(1) {
            Some(s) => (a(0) as u32).saturating_sub(s & 31),
            None => a(0) as u32,
        },
        // Below 32 bits the sign bit is clear, so this is a logical shift.
        OpKind::Ashr if a(0) < 32 => match c(1) {
            Some(s) => (a(0) as u32).saturating_sub(s & 31),
            None => a(0) as u32,
        },
        k if k.is_compare() => 1,
        OpKind::Load { width: MemWidth::Byte, signed: false, .. } => 8,
        _ => 32,
    };
    v.clamp(1, 32) as u8
}

fn demanded(g: &Cdfg, order: &[NodeId]) -> Vec<u8> {
    let mut d = vec![0u8; g.nodes.len()];
    let raise = |d: &mut Vec<u8>, o: NodeId, bits: u32| {
        let b = bits.min(32) as u8;
        if b > d[o.index()] {
            d[o.index()] = b;
            true
        } else {
            false
        }
    };
    for b in &g.blocks {
        let ops: Vec<NodeId> = match &b.term {
            Terminator::Branch { cond, .. } => vec![*cond],
            Terminator::Return { values } => values.clone(),
            _ => Vec::new(),
        };
        for o in ops {
            raise(&mut d, o, 32);
        }
    }
    loop {
        let mut changed = false;
        for &n in order.iter().rev() {
            let node = g.node(n);
            let du = d[n.index()] as u32;
            let c1 = node.operands.get(1).and_then(|&o| g.const_value(o));
            let c0 = node.operands.first().and_then(|&o| g.const_value(o));
            let per: Vec<u32> = match node.kind {
                OpKind::Copy
                | OpKind::Phi
                | OpKind::Add
                | OpKind::Sub
                | OpKind::Mul
                | OpKind::Or
                | OpKind::Xor
                | OpKind::Nor => {
                    vec![du; node.operands.len()]
                }
                OpKind::And => {
                    let m = |c: Option<u32>| c.map_or(du, |c| du.min(bits(c) as u32));
                    vec![m(c1), m(c0)]
                }
                OpKind::Shl => match c1 {
                    Some(s) => vec![du.saturating_sub(s & 31), 5],
                    None => vec![du, 5],
                },
                OpKind::Lshr => match c1 {
                    Some(s) if du > 0 => vec![du + (s & 31), 5],
                    Some(_) => vec![0, 5],
                    None => vec![32, 5],
                },
                OpKind::Ashr => vec![32, 5],
                k if k.is_compare() => vec![32, 32],
                OpKind::Load { .. } => vec![32],
                OpKind::Store { width, .. } => vec![32, if width == MemWidth::Byte { 8 } else { 32 }],
                OpKind::Output | OpKind::Call { .. } => vec![32; node.operands.len()],
                _ => Vec::new(),
            };
            for (&o, bits) in node.operands.iter().zip(per) {
                changed |= raise(&mut d, o, bits);
            }
        }
        if !changed {
            return d;
        }
    }
}
