//! Loop rerolling.
//!
//! Inside one block, `k` consecutive op groups are rerolled when they are
//! structurally isomorphic: the same op kinds in the same order, and every
//! operand either internal to its group, the previous group's value (a
//! reduction chain), the same outside value in every group, or an add/sub
//! constant stepping by a common stride `s`. Memory offsets may step by `s` as well.
//! No value of an earlier group may be used except by the next group.
//!
//! When the block is a single-block loop whose induction variable steps by
//! `k * s` and is the base of every stepping access, the groups fuse into
//! that loop: one group remains and the step becomes `s`. Otherwise the
//! block is split around a new loop of `k` iterations with its own counter.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::PassStats;
use crate::decompile::restructure;
use crate::decompile::structure::Induction;
use crate::ir::{BlockId, Cdfg, NodeId, OpKind, Terminator};

/// Maximum rerolls per procedure; each one shrinks the graph.
const MAX_ROUNDS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Operand {
    /// Value of position `q` in the same group.
    Internal(usize),
    /// Value of position `q` in the previous group; group 0 reads the
    /// outside initial value.
    Chain(usize),
    Invariant,
    /// Constant advancing by the given amount per group.
    Stepped(i64),
}

struct Match {
    block: usize,
    groups: Vec<Vec<NodeId>>,
    operands: Vec<Vec<Operand>>,
    /// Per-group memory offset step at each position.
    offset_step: Vec<i64>,
    stride: i64,
}

impl Match {
    fn k(&self) -> usize {
        self.groups.len()
    }

    fn coverage(&self) -> usize {
        self.groups.len() * self.groups[0].len()
    }

    fn chains(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.operands.iter().enumerate().flat_map(|(q, ops)| {
            ops.iter().enumerate().filter_map(move |(o, c)| match c {
                Operand::Chain(from) => Some((q, o, *from)),
                _ => None,
            })
        })
    }
}

fn kind_key(k: OpKind) -> OpKind {
    match k {
        OpKind::Load { width, signed, .. } => OpKind::Load { width, signed, offset: 0 },
        OpKind::Store { width, .. } => OpKind::Store { width, offset: 0 },
        k => k,
    }
}

fn mem_offset(k: OpKind) -> Option<i64> {
    match k {
        OpKind::Load { offset, .. } | OpKind::Store { offset, .. } => Some(offset as i64),
        _ => None,
    }
}

pub fn reroll_loops(g: &mut Cdfg, max_factor: usize, stats: &mut PassStats) {
    let mut changed = false;
    for _ in 0..MAX_ROUNDS {
        stats.iterations += 1;
        let Some(m) = best_match(g, max_factor, stats) else { break };
        let site = m.groups[0][0];
        if try_fuse(g, &m) {
            stats.rewrite(site, "reroll-fuse");
        } else {
            split(g, &m);
            stats.rewrite(site, "reroll");
        }
        restructure(g);
        changed = true;
    }
    if changed {
        g.remove_dead();
        restructure(g);
    }
}

fn best_match(g: &Cdfg, max_factor: usize, stats: &mut PassStats) -> Option<Match> {
    let users = g.users();
    let mut term_uses: BTreeSet<NodeId> = BTreeSet::new();
    for b in &g.blocks {
        term_uses.extend(b.term.operands());
    }
    let mut best: Option<Match> = None;
    for b in 0..g.blocks.len() {
        let seq: Vec<NodeId> = g.blocks[b]
            .ops
            .iter()
            .copied()
            .filter(|&n| !matches!(g.node(n).kind, OpKind::Phi | OpKind::Const(_)))
            .collect();
        let mut near: Option<(NodeId, &'static str)> = None;
        for m in 2..=seq.len() / 2 {
            for st in 0..=seq.len() - 2 * m {
                let same = |i: usize| {
                    (0..m).all(|q| kind_key(g.node(seq[st + q]).kind) == kind_key(g.node(seq[st + i * m + q]).kind))
                };
                let mut kmax = 1;
                while kmax < max_factor && st + (kmax + 1) * m <= seq.len() && same(kmax) {
                    kmax += 1;
                }
                for k in (2..=kmax).rev() {
                    if best.as_ref().is_some_and(|bm| bm.coverage() >= k * m) {
                        break;
                    }
                    let groups: Vec<Vec<NodeId>> = (0..k).map(|i| seq[st + i * m..st + (i + 1) * m].to_vec()).collect();
                    match check(g, b, groups, &users, &term_uses) {
                        Ok(found) => {
                            best = Some(found);
                            break;
                        }
                        Err(reason) if k == 2 && near.is_none() => near = Some((seq[st + m], reason)),
                        Err(_) => {}
                    }
                }
            }
        }
        if let Some((site, reason)) = near {
            if !best.as_ref().is_some_and(|bm| bm.block == b) && !stats.rejected.iter().any(|r| r.site == site) {
                stats.reject(site, reason);
            }
        }
    }
    best
}

fn check(
    g: &Cdfg,
    block: usize,
    groups: Vec<Vec<NodeId>>,
    users: &BTreeMap<NodeId, Vec<NodeId>>,
    term_uses: &BTreeSet<NodeId>,
) -> Result<Match, &'static str> {
    let k = groups.len();
    let m = groups[0].len();
    let mut pos: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
    for (i, grp) in groups.iter().enumerate() {
        for (q, &n) in grp.iter().enumerate() {
            pos.insert(n, (i, q));
        }
    }
    let mut steps: Vec<i64> = Vec::new();
    let mut operands = Vec::with_capacity(m);
    let mut offset_step = vec![0i64; m];
    for q in 0..m {
        let n0 = g.node(groups[0][q]);
        if matches!(n0.kind, OpKind::Call { .. } | OpKind::Env(_)) {
            return Err("call");
        }
        if groups.iter().any(|grp| g.node(grp[q]).operands.len() != n0.operands.len()) {
            return Err("arity-mismatch");
        }
        if let Some(o0) = mem_offset(n0.kind) {
            let d = mem_offset(g.node(groups[1][q]).kind).unwrap() - o0;
            if (2..k).any(|i| mem_offset(g.node(groups[i][q]).kind) != Some(o0 + i as i64 * d)) {
                return Err("non-constant-stride");
            }
            offset_step[q] = d;
            if d != 0 {
                steps.push(d);
            }
        }
        let mut classes = Vec::with_capacity(n0.operands.len());
        for (o, &x0) in n0.operands.iter().enumerate() {
            let x1 = g.node(groups[1][q]).operands[o];
            let class = match (pos.get(&x0), pos.get(&x1)) {
                (Some(&(0, a)), Some(&(1, b))) if a == b => Operand::Internal(a),
                (None, Some(&(0, b))) => Operand::Chain(b),
                (None, None) if x0 == x1 => Operand::Invariant,
                (None, None) => match (g.const_value(x0), g.const_value(x1)) {
                    (Some(v0), Some(v1)) => Operand::Stepped(v1.wrapping_sub(v0) as i32 as i64),
                    _ => return Err("operand-mismatch"),
                },
                _ => return Err("operand-mismatch"),
            };
            for (i, group) in groups.iter().enumerate().take(k).skip(2) {
                let xi = g.node(group[q]).operands[o];
                let ok = match class {
                    Operand::Internal(a) => pos.get(&xi) == Some(&(i, a)),
                    Operand::Chain(b) => pos.get(&xi) == Some(&(i - 1, b)),
                    Operand::Invariant => xi == x0,
                    Operand::Stepped(d) => {
                        !pos.contains_key(&xi)
                            && g.const_value(xi) == Some(g.const_value(x0).unwrap().wrapping_add((d * i as i64) as u32))
                    }
                };
                if !ok {
                    return Err(if matches!(class, Operand::Stepped(_)) {
                        "non-constant-stride"
                    } else {
                        "operand-mismatch"
                    });
                }
            }
            if let Operand::Stepped(d) = class {
                if d != 0 {
                    // Only address and induction arithmetic may step.
                    if !matches!(n0.kind, OpKind::Add | OpKind::Sub) {
                        return Err("non-address-step");
                    }
                    steps.push(d);
                }
            }
            classes.push(class);
        }
        if offset_step[q] != 0 && classes[0] != Operand::Invariant {
            return Err("non-constant-stride");
        }
        operands.push(classes);
    }
    let stride = match steps.first() {
        Some(&s) if steps.iter().all(|&d| d == s) => s,
        Some(_) => return Err("non-constant-stride"),
        None if operands.iter().flatten().any(|c| matches!(c, Operand::Chain(_))) => 1,
        None => return Err("no-progression"),
    };
    for (i, grp) in groups.iter().enumerate().take(k - 1) {
        for &n in grp {
            if term_uses.contains(&n) {
                return Err("side-exit");
            }
            for u in users.get(&n).into_iter().flatten() {
                match pos.get(u) {
                    Some(&(j, _)) if j == i || j == i + 1 => {}
                    _ => return Err("side-exit"),
                }
            }
        }
    }
    Ok(Match { block, groups, operands, offset_step, stride })
}

/// Absorbs the groups into the enclosing single-block loop. Returns false,
/// leaving `g` untouched, when the loop does not qualify.
fn try_fuse(g: &mut Cdfg, m: &Match) -> bool {
    let b = m.block;
    let bid = BlockId(b as u32);
    let Some(region) = g.structure.loops().into_iter().find(|r| r.header == b && r.blocks.len() == 1).cloned() else {
        return false;
    };
    if m.operands.iter().flatten().any(|c| matches!(c, Operand::Stepped(d) if *d != 0)) {
        return false;
    }
    let k = m.k();
    let stepping: Vec<NodeId> =
        (0..m.groups[0].len()).filter(|&q| m.offset_step[q] != 0).map(|q| g.node(m.groups[0][q]).operands[0]).collect();
    let Some(base) = stepping.first().copied() else { return false };
    if stepping.iter().any(|&x| x != base) {
        return false;
    }
    let Some(iv): Option<&Induction> = region.inductions.iter().find(|iv| iv.phi == base) else { return false };
    if iv.step as i64 != k as i64 * m.stride {
        return false;
    }
    let Some(bound) = &iv.bound else { return false };
    if !bound.on_update || !matches!(bound.compare, OpKind::Ne | OpKind::Eq) {
        return false;
    }
    let at = g.placement();
    let in_b = |n: NodeId| at.get(&n).is_some_and(|p| p.0 == bid);
    let cmp = g.node(bound.node);
    let limit = if cmp.operands[0] == iv.update { cmp.operands[1] } else { cmp.operands[0] };
    if in_b(limit) {
        return false;
    }
    let upd = g.node(iv.update);
    if upd.kind != OpKind::Add
        || upd.operands[0] != iv.phi
        || g.const_value(upd.operands[1]).is_none()
        || !in_b(iv.update)
    {
        return false;
    }
    let Terminator::Branch { cond, .. } = g.block(bid).term else { return false };
    let window: BTreeSet<NodeId> = m.groups.iter().flatten().copied().collect();
    let control = [iv.update, bound.node, cond];
    let latch = g.block(bid).preds.iter().position(|&p| p == bid).unwrap();
    let users = g.users();
    let mut chain_phis = BTreeSet::new();
    for (q, o, from) in m.chains() {
        let init = g.node(m.groups[0][q]).operands[o];
        let phi = g.node(init);
        if phi.kind != OpKind::Phi || !in_b(init) || phi.operands[latch] != m.groups[k - 1][from] {
            return false;
        }
        chain_phis.insert(init);
    }
    for &n in &g.block(bid).ops {
        let kind = g.node(n).kind;
        let ok = match kind {
            OpKind::Phi => n == iv.phi || chain_phis.contains(&n),
            OpKind::Const(_) => true,
            _ => window.contains(&n) || control.contains(&n),
        };
        if !ok {
            return false;
        }
    }
    // The phi's intermediate values are only meaningful to the groups.
    let only = |n: NodeId, allowed: &dyn Fn(NodeId) -> bool| {
        users.get(&n).into_iter().flatten().all(|&u| allowed(u))
            && !g.blocks.iter().any(|blk| blk.term.operands().contains(&n))
    };
    if !only(iv.phi, &|u| window.contains(&u) || u == iv.update) {
        return false;
    }
    let first: BTreeSet<NodeId> = m.groups[0].iter().copied().collect();
    if chain_phis.iter().any(|&p| !only(p, &|u| first.contains(&u))) {
        return false;
    }

    let map: BTreeMap<NodeId, NodeId> =
        m.groups[k - 1].iter().zip(&m.groups[0]).map(|(&last, &first)| (last, first)).collect();
    let dropped: BTreeSet<NodeId> = m.groups[1..].iter().flatten().copied().collect();
    let origin = g.node(iv.update).origin;
    let s = g.alloc(OpKind::Const(m.stride as i32 as u32), Vec::new(), origin);
    let update = iv.update;
    let ops = &mut g.block_mut(bid).ops;
    ops.retain(|n| !dropped.contains(n));
    let at = ops.iter().position(|&n| n == update).unwrap();
    ops.insert(at, s);
    g.node_mut(update).operands[1] = s;
    g.replace_uses(&map);
    true
}

/// Splits the block around a new loop running group 0 `k` times.
fn split(g: &mut Cdfg, m: &Match) {
    let b = m.block;
    let bid = BlockId(b as u32);
    let k = m.k();
    let window: BTreeSet<NodeId> = m.groups.iter().flatten().copied().collect();
    let ops = g.block(bid).ops.clone();
    let first_at = ops.iter().position(|n| window.contains(n)).unwrap();
    let last_at = ops.iter().rposition(|n| window.contains(n)).unwrap();
    let mut head = Vec::new();
    let mut tail = Vec::new();
    for (i, &n) in ops.iter().enumerate() {
        if i < first_at || (i <= last_at && !window.contains(&n)) {
            head.push(n);
        } else if i > last_at {
            tail.push(n);
        }
    }
    let first_origin = g.node(m.groups[0][0]).origin;
    let last_origin = g.node(*m.groups[k - 1].last().unwrap()).origin;
    let origin = first_origin;
    let zero = g.alloc(OpKind::Const(0), Vec::new(), origin);
    let step = g.alloc(OpKind::Const(m.stride as i32 as u32), Vec::new(), origin);
    let end = g.alloc(OpKind::Const((m.stride * k as i64) as i32 as u32), Vec::new(), origin);
    head.extend([zero, step, end]);

    let old_term = core::mem::replace(&mut g.block_mut(bid).term, Terminator::Halt);
    let addrs = g.block(bid).addrs.clone();
    let live_out = g.block(bid).live_out.clone();
    let e_start = addrs.iter().copied().find(|&a| a > last_origin).unwrap_or(last_origin + 4);
    let l = g.add_block(first_origin, Terminator::Halt);
    let e = g.add_block(e_start, old_term.clone());
    {
        let blk = g.block_mut(bid);
        blk.term = Terminator::Jump(l);
        blk.addrs = addrs.iter().copied().filter(|&a| a < first_origin).collect();
        blk.live_out = live_out.clone();
    }
    g.block_mut(l).addrs = addrs.iter().copied().filter(|&a| a >= first_origin && a <= last_origin).collect();
    g.block_mut(e).addrs = addrs.iter().copied().filter(|&a| a > last_origin).collect();
    for blk in [l, e] {
        g.block_mut(blk).live_in = live_out.clone();
        g.block_mut(blk).live_out = live_out.clone();
    }
    // The old successors now come from the tail block.
    for s in old_term.successors() {
        for p in &mut g.block_mut(s).preds {
            if *p == bid {
                *p = e;
            }
        }
    }
    g.block_mut(l).preds = vec![bid, l];
    g.block_mut(e).preds = vec![l];

    let j = g.alloc(OpKind::Phi, Vec::new(), origin);
    let mut body = vec![j];
    let mut chain_phi: BTreeMap<(usize, NodeId), NodeId> = BTreeMap::new();
    for (q, o, from) in m.chains() {
        let init = g.node(m.groups[0][q]).operands[o];
        let key = (from, init);
        if let alloc::collections::btree_map::Entry::Vacant(e) = chain_phi.entry(key) {
            let p = g.alloc(OpKind::Phi, vec![init, m.groups[0][from]], origin);
            e.insert(p);
            body.push(p);
        }
    }
    for (q, &n) in m.groups[0].iter().enumerate() {
        let node_origin = g.node(n).origin;
        for (o, class) in m.operands[q].iter().enumerate() {
            let x = g.node(n).operands[o];
            let v = match *class {
                Operand::Chain(from) => chain_phi[&(from, x)],
                Operand::Stepped(d) if d != 0 => {
                    let add = g.alloc(OpKind::Add, vec![j, x], node_origin);
                    body.push(add);
                    add
                }
                _ => continue,
            };
            g.node_mut(n).operands[o] = v;
        }
        if m.offset_step[q] != 0 {
            let base = g.node(n).operands[0];
            let addr = g.alloc(OpKind::Add, vec![base, j], node_origin);
            body.push(addr);
            g.node_mut(n).operands[0] = addr;
        }
        body.push(n);
    }
    let next = g.alloc(OpKind::Add, vec![j, step], origin);
    let more = g.alloc(OpKind::Ne, vec![next, end], origin);
    body.extend([next, more]);
    g.node_mut(j).operands = vec![zero, next];
    g.block_mut(l).term = Terminator::Branch { cond: more, taken: l, fallthrough: e };
    g.block_mut(l).ops = body;
    g.block_mut(e).ops = tail;
    g.block_mut(bid).ops = head;

    let map: BTreeMap<NodeId, NodeId> =
        m.groups[k - 1].iter().zip(&m.groups[0]).map(|(&last, &first)| (last, first)).collect();
    g.replace_uses(&map);
    // Chain phis must keep reading the loop's own values.
    for (&(from, init), &p) in &chain_phi {
        g.node_mut(p).operands = vec![init, m.groups[0][from]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompile::{decompile_program, execute_program, ExecOptions};
    use crate::ir::Program;
    use crate::isa::assemble;
    use crate::passes::{run_pass, Pass, PassConfig};

    fn prepared(src: &str) -> Program {
        let mut prog = decompile_program(&assemble(src).unwrap()).unwrap();
        let cfg = PassConfig::default();
        for g in &mut prog.procs {
            run_pass(g, Pass::ConstProp, &cfg);
            run_pass(g, Pass::StackRemoval, &cfg);
            run_pass(g, Pass::ConstProp, &cfg);
        }
        prog
    }

    fn rerolled(prog: &Program, samples: &[&[u32]]) -> (Program, PassStats) {
        let mut out = prog.clone();
        let stats = run_pass(&mut out.procs[0], Pass::Reroll, &PassConfig::default());
        out.procs[0].validate().unwrap();
        for s in samples {
            let a = execute_program(prog, s, ExecOptions::new(1_000_000));
            let b = execute_program(&out, s, ExecOptions::new(1_000_000));
            assert_eq!(a.outputs, b.outputs);
            assert_eq!(a.exit_reason, b.exit_reason);
        }
        (out, stats)
    }

    fn loop_body_ops(g: &Cdfg) -> Vec<usize> {
        g.structure.loops().iter().map(|r| r.blocks.iter().map(|&b| g.blocks[b].ops.len()).sum()).collect()
    }

    #[test]
    fn unrolled_sum_fuses_into_its_loop() {
        let p = crate::corpus::by_name("unrolled_sum").unwrap();
        let prog = prepared(p.source);
        let before = loop_body_ops(&prog.procs[0]);
        let (out, stats) = rerolled(&prog, p.samples);
        assert_eq!(stats.rewrites.len(), 1);
        assert_eq!(stats.rewrites[0].rule, "reroll-fuse");
        let g = &out.procs[0];
        let after = loop_body_ops(g);
        assert_eq!((before.len(), after.len()), (1, 1));
        assert!(after[0] <= before[0].div_ceil(4) + 3, "{before:?} -> {after:?}");
        let iv = &g.structure.loops()[0].inductions[0];
        assert_eq!(iv.step, 4);
        assert_eq!(iv.trip_count(), Some(16));
        let old = &prog.procs[0].structure.loops()[0].inductions[0];
        assert_eq!(old.trip_count(), Some(4));
    }

    #[test]
    fn fir_taps_split_into_an_inner_loop() {
        let p = crate::corpus::by_name("fir_filter").unwrap();
        let prog = prepared(p.source);
        let (out, stats) = rerolled(&prog, p.samples);
        assert_eq!(stats.rewrites.len(), 1);
        assert_eq!(stats.rewrites[0].rule, "reroll");
        let g = &out.procs[0];
        assert_eq!(g.structure.loops().len(), 2);
        let muls = g.blocks.iter().flat_map(|b| &b.ops).filter(|&&n| g.node(n).kind == OpKind::Mul).count();
        assert_eq!(muls, 1);
    }

    #[test]
    fn different_kinds_are_not_rerolled() {
        let src = "main: lui $8, 0x1000\naddi $9, $0, 0\nlw $10, 0($8)\nadd $9, $9, $10\nlw $10, 4($8)\nsub $9, $9, $10\nor $4, $9, $0\naddi $2, $0, 1\nsyscall\naddi $2, $0, 10\nsyscall\n";
        let prog = prepared(src);
        let (_, stats) = rerolled(&prog, &[&[]]);
        assert!(stats.rewrites.is_empty());
    }

    #[test]
    fn straight_line_groups_roll_into_a_loop() {
        let src = "
            .data 0x10000000
v:          .word 4, 9, 16, 25, 36, 49
            .text
main:       lui $8, 0x1000
            addi $9, $0, 1
            lw $10, 0($8)
            xor $9, $9, $10
            lw $10, 4($8)
            xor $9, $9, $10
            lw $10, 8($8)
            xor $9, $9, $10
            or $4, $9, $0
            addi $2, $0, 1
            syscall
            addi $2, $0, 10
            syscall
";
        let prog = prepared(src);
        let (out, stats) = rerolled(&prog, &[&[]]);
        assert_eq!(stats.rewrites.len(), 1);
        assert_eq!(out.procs[0].structure.loops().len(), 1);
    }

    #[test]
    fn side_exit_is_rejected() {
        // The first partial sum is printed, so the groups cannot merge.
        let src = "main: addi $2, $0, 5\nsyscall\nor $9, $2, $0\nlui $8, 0x1000\nlw $10, 0($8)\nadd $9, $9, $10\nor $4, $9, $0\nlw $10, 4($8)\nadd $9, $9, $10\naddi $2, $0, 1\nsyscall\nor $4, $9, $0\nsyscall\naddi $2, $0, 10\nsyscall\n";
        let prog = prepared(src);
        let (_, stats) = rerolled(&prog, &[&[6]]);
        assert!(stats.rewrites.is_empty());
        assert!(stats.rejected.iter().any(|r| r.rule == "side-exit"), "{:?}", stats.rejected);
    }

    #[test]
    fn whole_corpus_survives_rerolling() {
        for p in crate::corpus::ALL.iter().filter(|p| !p.indirect) {
            let prog = prepared(p.source);
            let mut out = prog.clone();
            for g in &mut out.procs {
                run_pass(g, Pass::Reroll, &PassConfig::default());
                g.validate().unwrap();
            }
            for s in p.samples {
                let a = execute_program(&prog, s, ExecOptions::new(1_000_000));
                let b = execute_program(&out, s, ExecOptions::new(1_000_000));
                assert_eq!(a.outputs, b.outputs, "{}", p.name);
            }
        }
    }
}
