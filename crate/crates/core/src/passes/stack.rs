//! Stack slot promotion.
//!
//! A slot is a word at a constant negative offset from the procedure's entry
//! `$29`. Slots are promoted to SSA values when the stack pointer never
//! escapes: every value derived from it is used only as a load/store base,
//! as further constant adjustments, or as the returned `$29`. Procedures
//! that call others are skipped, since a callee may read the frame.
//!
//! Memory below the entry stack pointer is treated as dead once the
//! procedure returns, so promoted stores are not replayed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::PassStats;
use crate::ir::{Cdfg, NodeId, OpKind, Terminator};

const UNDEF: NodeId = NodeId(u32::MAX);
const SP: u8 = 29;

struct Access {
    node: NodeId,
    start: i64,
    word: bool,
    store: bool,
}

pub fn remove_stack_ops(g: &mut Cdfg, stats: &mut PassStats) {
    stats.iterations = 1;
    let placed = g.placement();
    let Some(sp0) = g.block(g.entry).ops.iter().copied().find(|&n| g.node(n).kind == OpKind::Env(SP)) else {
        return;
    };
    if let Some(&call) = placed.keys().find(|&&n| matches!(g.node(n).kind, OpKind::Call { .. })) {
        stats.reject(call, "has-call");
        return;
    }
    let mut derived: BTreeMap<NodeId, i64> = BTreeMap::new();
    for &n in placed.keys() {
        if g.node(n).kind.has_value() {
            let (root, d) = g.affine_base(n);
            if root == sp0 {
                derived.insert(n, d);
            }
        }
    }
    if let Some(site) = escape(g, &derived) {
        stats.reject(site, "escape");
        return;
    }
    let mut accesses = Vec::new();
    for &n in placed.keys() {
        let node = g.node(n);
        let (offset, word, store) = match node.kind {
            OpKind::Load { width, offset, .. } => (offset, width.bytes() == 4, false),
            OpKind::Store { width, offset } => (offset, width.bytes() == 4, true),
            _ => continue,
        };
        if let Some(&d) = derived.get(&node.operands[0]) {
            accesses.push(Access { node: n, start: d + offset as i64, word, store });
        }
    }
    let starts: BTreeSet<i64> =
        accesses.iter().filter(|a| a.word && a.start < 0 && a.start % 4 == 0).map(|a| a.start).collect();
    for slot in starts {
        let overlapping: Vec<&Access> =
            accesses.iter().filter(|a| a.start < slot + 4 && slot < a.start + if a.word { 4 } else { 1 }).collect();
        if overlapping.iter().any(|a| a.start != slot || !a.word) {
            stats.reject(overlapping[0].node, "partial-overlap");
            continue;
        }
        let members: BTreeSet<NodeId> = overlapping.iter().map(|a| a.node).collect();
        let site = overlapping.iter().find(|a| a.store).map_or(overlapping[0].node, |a| a.node);
        if promote_slot(g, &members) {
            stats.rewrite(site, "promote-slot");
        } else {
            stats.reject(site, "undefined-read");
        }
    }
    g.remove_dead();
}

/// First use of a stack-derived value that lets the address escape.
fn escape(g: &Cdfg, derived: &BTreeMap<NodeId, i64>) -> Option<NodeId> {
    for b in &g.blocks {
        for &u in &b.ops {
            let node = g.node(u);
            for (i, o) in node.operands.iter().enumerate() {
                if !derived.contains_key(o) {
                    continue;
                }
                let ok = match node.kind {
                    OpKind::Load { .. } | OpKind::Store { .. } => i == 0,
                    OpKind::Add | OpKind::Sub | OpKind::Copy => derived.contains_key(&u),
                    _ => false,
                };
                if !ok {
                    return Some(u);
                }
            }
        }
        let bad = match &b.term {
            Terminator::Return { values } => values
                .iter()
                .enumerate()
                .find(|(i, v)| *i + 1 != SP as usize && derived.contains_key(v))
                .map(|(_, &v)| v),
            t => t.operands().into_iter().find(|v| derived.contains_key(v)),
        };
        if bad.is_some() {
            return bad;
        }
    }
    None
}

/// SSA-renames the loads and stores in `members` (all exact accesses to one
/// slot). Returns false, leaving `g` untouched, when some load may read
/// the slot before any store.
fn promote_slot(g: &mut Cdfg, members: &BTreeSet<NodeId>) -> bool {
    let graph = g.graph();
    let rpo = graph.reverse_postorder();
    let nb = g.blocks.len();
    let mut out_val = vec![UNDEF; nb];
    let mut block_phi: BTreeMap<usize, (NodeId, Vec<NodeId>)> = BTreeMap::new();
    let mut repl: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut next_phi = g.nodes.len() as u32;
    for &b in &rpo {
        let blk = &g.blocks[b];
        let mut cur = match blk.preds.len() {
            0 => UNDEF,
            1 => out_val[blk.preds[0].index()],
            _ => {
                let phi = NodeId(next_phi);
                next_phi += 1;
                block_phi.insert(b, (phi, Vec::new()));
                phi
            }
        };
        for &n in &blk.ops {
            if !members.contains(&n) {
                continue;
            }
            let node = g.node(n);
            if matches!(node.kind, OpKind::Store { .. }) {
                cur = node.operands[1];
            } else {
                repl.insert(n, cur);
            }
        }
        out_val[b] = cur;
    }
    for (&b, (_, ops)) in block_phi.iter_mut() {
        *ops = g.blocks[b].preds.iter().map(|p| out_val[p.index()]).collect();
    }
    // Trivial phis collapse to their single other operand.
    let phi_block: BTreeMap<NodeId, usize> = block_phi.iter().map(|(&b, (p, _))| (*p, b)).collect();
    let mut alias: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let resolve = |alias: &BTreeMap<NodeId, NodeId>, mut v: NodeId| {
        while let Some(&n) = alias.get(&v) {
            v = n;
        }
        v
    };
    loop {
        let mut changed = false;
        for (p, ops) in block_phi.values() {
            if alias.contains_key(p) {
                continue;
            }
            let others: BTreeSet<NodeId> = ops.iter().map(|&o| resolve(&alias, o)).filter(|o| o != p).collect();
            if others.len() == 1 {
                alias.insert(*p, *others.iter().next().unwrap());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Phis reachable from the loads' replacements must be fully defined.
    let mut needed: BTreeSet<NodeId> = BTreeSet::new();
    let mut work: Vec<NodeId> = repl.values().map(|&v| resolve(&alias, v)).collect();
    while let Some(v) = work.pop() {
        if v == UNDEF {
            return false;
        }
        if let Some(&b) = phi_block.get(&v) {
            if needed.insert(v) {
                work.extend(block_phi[&b].1.iter().map(|&o| resolve(&alias, o)));
            }
        }
    }
    // Commit: allocate needed phis in id order so ids match the placeholders.
    let mut real: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for &p in &needed {
        let b = phi_block[&p];
        let origin = g.blocks[b].start;
        let id = g.alloc(OpKind::Phi, Vec::new(), origin);
        g.blocks[b].ops.insert(0, id);
        real.insert(p, id);
    }
    let fix = |v: NodeId| {
        let v = resolve(&alias, v);
        real.get(&v).copied().unwrap_or(v)
    };
    for &p in &needed {
        let ops: Vec<NodeId> = block_phi[&phi_block[&p]].1.iter().map(|&o| fix(o)).collect();
        g.node_mut(real[&p]).operands = ops;
    }
    let map: BTreeMap<NodeId, NodeId> = repl.iter().map(|(&l, &v)| (l, fix(v))).collect();
    for b in &mut g.blocks {
        b.ops.retain(|n| !members.contains(n));
    }
    g.replace_uses(&map);
    true
}
