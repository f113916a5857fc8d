//! CDFG construction: SSA renaming of register slots, register liveness and
//! loop induction annotation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::cfg::Cfg;
use super::dom::compute_dominators;
use super::parse::{LinKind, Slot, Src};
use super::structure::{recover_structures, Bound, Induction, Region};
use crate::ir::{BlockId, Cdfg, NodeId, OpKind, Terminator};
use crate::isa::Reg;

const REGS: core::ops::RangeInclusive<Reg> = 1..=31;

/// Builds the SSA-form CDFG of one procedure. Machine blocks keep their CFG
/// indices; a synthetic entry block holding the register environment is
/// appended last.
pub fn build_cdfg(cfg: &Cfg, name: String) -> Cdfg {
    let n = cfg.blocks.len();
    let mut g = Cdfg::new(name, cfg.entry_addr);
    for b in &cfg.blocks {
        let id = g.add_block(b.start, Terminator::Halt);
        g.block_mut(id).addrs = b.addrs.clone();
    }
    let entry = g.add_block(cfg.entry_addr, Terminator::Jump(BlockId(cfg.entry as u32)));
    g.block_mut(entry).synthetic = true;
    g.entry = entry;

    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n + 1];
    preds[cfg.entry].push(entry);
    for (i, b) in cfg.blocks.iter().enumerate() {
        for &s in &b.succs {
            if !preds[s].contains(&BlockId(i as u32)) {
                preds[s].push(BlockId(i as u32));
            }
        }
    }
    for (i, p) in preds.iter().enumerate() {
        g.blocks[i].preds = p.clone();
    }

    // Register values at block entry: placeholder phis at merges, env at
    // the synthetic entry.
    let mut incoming: Vec<Option<[NodeId; 32]>> = vec![None; n + 1];
    let zero = NodeId(u32::MAX);
    let mut env = [zero; 32];
    for r in REGS {
        let id = g.push(entry, OpKind::Env(r), Vec::new(), cfg.entry_addr);
        g.node_mut(id).var = Some(r);
        env[r as usize] = id;
    }
    incoming[n] = Some(env);
    for i in 0..n {
        if preds[i].len() != 1 {
            let mut vals = [zero; 32];
            for r in REGS {
                let id = g.push(BlockId(i as u32), OpKind::Phi, Vec::new(), cfg.blocks[i].start);
                g.node_mut(id).var = Some(r);
                vals[r as usize] = id;
            }
            incoming[i] = Some(vals);
        }
    }

    let mut succs: Vec<Vec<usize>> = cfg.blocks.iter().map(|b| b.succs.clone()).collect();
    succs.push(vec![cfg.entry]);
    let order = super::dom::BlockGraph { succs, entry: n }.reverse_postorder();
    let mut outgoing: Vec<Option<[NodeId; 32]>> = vec![None; n + 1];
    outgoing[n] = incoming[n];
    for &bi in &order {
        if bi == n {
            continue;
        }
        let mut cur = match incoming[bi] {
            Some(v) => v,
            None => outgoing[preds[bi][0].index()].expect("single predecessor precedes in reverse postorder"),
        };
        let bid = BlockId(bi as u32);
        let block = &cfg.blocks[bi];
        let mut tmps: BTreeMap<u32, NodeId> = BTreeMap::new();
        let mut term = None;
        for inst in &block.insts {
            let operand = |g: &mut Cdfg, s: &Src, cur: &[NodeId; 32]| match *s {
                Src::Slot(Slot::Reg(r)) => cur[r as usize],
                Src::Slot(Slot::Tmp(t)) => tmps[&t],
                Src::Imm(v) => g.push(bid, OpKind::Const(v), Vec::new(), inst.origin),
            };
            match &inst.kind {
                LinKind::Op(kind @ OpKind::Call { .. }) => {
                    let ops: Vec<NodeId> = REGS.map(|r| cur[r as usize]).collect();
                    g.push(bid, *kind, ops, inst.origin);
                    for r in REGS {
                        let id = g.push(bid, OpKind::Env(r), Vec::new(), inst.origin);
                        g.node_mut(id).var = Some(r);
                        cur[r as usize] = id;
                    }
                }
                LinKind::Op(kind) => {
                    let ops: Vec<NodeId> = inst.srcs.iter().map(|s| operand(&mut g, s, &cur)).collect();
                    let id = g.push(bid, *kind, ops, inst.origin);
                    match inst.dst {
                        Some(Slot::Reg(r)) => {
                            g.node_mut(id).var = Some(r);
                            cur[r as usize] = id;
                        }
                        Some(Slot::Tmp(t)) => {
                            tmps.insert(t, id);
                        }
                        None => {}
                    }
                }
                LinKind::Branch { .. } => {
                    let cond = operand(&mut g, &inst.srcs[0], &cur);
                    term = Some(Terminator::Branch {
                        cond,
                        taken: BlockId(block.succs[0] as u32),
                        fallthrough: BlockId(block.succs[1] as u32),
                    });
                }
                LinKind::Return => {
                    term = Some(Terminator::Return { values: REGS.map(|r| cur[r as usize]).collect() });
                }
                LinKind::Halt => term = Some(Terminator::Halt),
                LinKind::Jump { .. } => {}
                LinKind::IndirectJump { .. } | LinKind::UnresolvedSyscall => {
                    unreachable!("rejected by CFG construction")
                }
            }
        }
        g.block_mut(bid).term = term.unwrap_or_else(|| Terminator::Jump(BlockId(block.succs[0] as u32)));
        outgoing[bi] = Some(cur);
    }

    for i in 0..n {
        let Some(vals) = incoming[i] else { continue };
        if preds[i].len() == 1 {
            continue;
        }
        for r in REGS {
            let ops: Vec<NodeId> = preds[i].iter().map(|p| outgoing[p.index()].unwrap()[r as usize]).collect();
            g.node_mut(vals[r as usize]).operands = ops;
        }
    }
    remove_trivial_phis(&mut g);
    g.remove_dead();

    let live = liveness(cfg);
    for (i, (li, lo)) in live.into_iter().enumerate() {
        g.blocks[i].live_in = li;
        g.blocks[i].live_out = lo;
    }
    g.blocks[n].live_out = g.blocks[cfg.entry].live_in.clone();
    restructure(&mut g);
    g
}

/// Replaces phis whose operands are all one value (or the phi itself) by
/// that value, to a fixpoint.
pub fn remove_trivial_phis(g: &mut Cdfg) -> usize {
    let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let resolve = |map: &BTreeMap<NodeId, NodeId>, mut id: NodeId| {
        while let Some(&n) = map.get(&id) {
            id = n;
        }
        id
    };
    loop {
        let mut changed = false;
        for b in 0..g.blocks.len() {
            for &p in &g.blocks[b].ops {
                if g.node(p).kind != OpKind::Phi || map.contains_key(&p) {
                    continue;
                }
                let mut unique = None;
                let mut trivial = true;
                for &o in &g.node(p).operands {
                    let o = resolve(&map, o);
                    if o == p || Some(o) == unique {
                        continue;
                    }
                    if unique.is_some() {
                        trivial = false;
                        break;
                    }
                    unique = Some(o);
                }
                if let (true, Some(v)) = (trivial, unique) {
                    map.insert(p, v);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let removed = map.len();
    for b in &mut g.blocks {
        b.ops.retain(|n| !map.contains_key(n));
    }
    g.replace_uses(&map);
    removed
}

/// Register liveness over the machine-level IR: `(live_in, live_out)` per
/// CFG block.
pub fn liveness(cfg: &Cfg) -> Vec<(BTreeSet<Reg>, BTreeSet<Reg>)> {
    let n = cfg.blocks.len();
    let mut gen = vec![BTreeSet::new(); n];
    let mut kill = vec![BTreeSet::new(); n];
    for (i, b) in cfg.blocks.iter().enumerate() {
        for inst in &b.insts {
            for r in inst.reg_uses() {
                if !kill[i].contains(&r) {
                    gen[i].insert(r);
                }
            }
            for r in inst.reg_defs() {
                kill[i].insert(r);
            }
        }
    }
    let mut live_in: Vec<BTreeSet<Reg>> = gen.clone();
    let mut live_out: Vec<BTreeSet<Reg>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            let out: BTreeSet<Reg> = cfg.blocks[i].succs.iter().flat_map(|&s| live_in[s].iter().copied()).collect();
            let inn: BTreeSet<Reg> = gen[i].iter().copied().chain(out.difference(&kill[i]).copied()).collect();
            if out != live_out[i] || inn != live_in[i] {
                live_out[i] = out;
                live_in[i] = inn;
                changed = true;
            }
        }
    }
    live_in.into_iter().zip(live_out).collect()
}

/// Recomputes the structure tree of `g` from its current control flow and
/// annotates loop induction variables.
pub fn restructure(g: &mut Cdfg) {
    let graph = g.graph();
    let (dom, pdom) = compute_dominators(&graph);
    let mut tree = recover_structures(&graph, &dom, &pdom);
    tree.root.walk_mut(&mut |r| {
        if r.is_loop() {
            r.inductions = inductions(g, r);
        }
    });
    g.structure = tree;
}

fn inductions(g: &Cdfg, region: &Region) -> Vec<Induction> {
    let h = &g.blocks[region.header];
    let latch_idx: Vec<usize> =
        h.preds.iter().enumerate().filter(|(_, p)| region.blocks.contains(&p.index())).map(|(i, _)| i).collect();
    let entry_idx: Vec<usize> = (0..h.preds.len()).filter(|i| !latch_idx.contains(i)).collect();
    let mut out = Vec::new();
    for &p in &h.ops {
        let phi = g.node(p);
        if phi.kind != OpKind::Phi || latch_idx.is_empty() {
            continue;
        }
        let update = phi.operands[latch_idx[0]];
        if latch_idx.iter().any(|&i| phi.operands[i] != update) {
            continue;
        }
        let (root, step) = g.affine_base(update);
        if root != p || step == 0 || step < i32::MIN as i64 || step > i32::MAX as i64 {
            continue;
        }
        let inits: BTreeSet<Option<u32>> = entry_idx.iter().map(|&i| g.const_value(phi.operands[i])).collect();
        let init = if inits.len() == 1 { inits.into_iter().next().unwrap() } else { None };
        let bound = region.blocks.iter().find_map(|&b| {
            let Terminator::Branch { cond, taken, fallthrough } = g.blocks[b].term else { return None };
            if region.blocks.contains(&taken.index()) && region.blocks.contains(&fallthrough.index()) {
                return None;
            }
            let mut c = g.node(cond);
            // `beq/bne (slt ..), $0` tests an earlier comparison.
            if matches!(c.kind, OpKind::Eq | OpKind::Ne) && g.const_value(c.operands[1]) == Some(0) {
                let inner = g.node(c.operands[0]);
                if inner.kind.is_compare() {
                    c = inner;
                }
            }
            if !c.kind.is_compare() {
                return None;
            }
            let (x, y) = (c.operands[0], c.operands[1]);
            let on = |v: NodeId| v == p || v == update;
            let other = if on(x) {
                y
            } else if on(y) {
                x
            } else {
                return None;
            };
            Some(Bound {
                compare: c.kind,
                node: c.id,
                value: g.const_value(other),
                on_update: x == update || y == update,
            })
        });
        out.push(Induction { reg: phi.var, phi: p, update, init, step: step as i32, bound });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompile::decompile;
    use crate::decompile::structure::{LoopShape, RegionKind};
    use crate::isa::assemble;

    fn build(src: &str) -> Cdfg {
        let img = assemble(src).unwrap();
        let d = decompile(&img).unwrap();
        d.into_program().unwrap().procs.remove(0)
    }

    #[test]
    fn counted_loop_has_induction() {
        let g = build(
            "main: addi $8, $0, 0\naddi $9, $0, 0\nloop: slti $1, $8, 10\nbeq $1, $0, done\nadd $9, $9, $8\naddi $8, $8, 1\nj loop\ndone: addi $2, $0, 1\nor $4, $9, $0\nsyscall\naddi $2, $0, 10\nsyscall\n",
        );
        g.validate().unwrap();
        let loops = g.structure.loops();
        assert_eq!(loops.len(), 1);
        let l = loops[0];
        assert_eq!(l.kind, RegionKind::Loop(LoopShape::PreTested));
        let iv = l.inductions.iter().find(|i| i.reg == Some(8)).unwrap();
        assert_eq!(iv.init, Some(0));
        assert_eq!(iv.step, 1);
        let bound = iv.bound.as_ref().unwrap();
        assert_eq!(bound.compare, OpKind::Slt);
        assert_eq!(bound.value, Some(10));
    }

    #[test]
    fn data_edges_follow_def_use() {
        // x = a + b; y = x + x
        let g = build("main: addi $2, $0, 5\nadd $3, $4, $5\nadd $6, $3, $3\nor $4, $6, $0\naddi $2, $0, 1\nsyscall\naddi $2, $0, 10\nsyscall\n");
        let x = g.nodes.iter().find(|n| n.kind == OpKind::Add && n.var == Some(3)).unwrap().id;
        let y = g.nodes.iter().find(|n| n.kind == OpKind::Add && n.var == Some(6)).unwrap().id;
        let edges = g.data_edges();
        assert_eq!(edges.iter().filter(|&&e| e == (x, y)).count(), 2);
    }

    #[test]
    fn diamond_merges_through_phi() {
        let g = build(
            "main: addi $2, $0, 5\nsyscall\nbeq $2, $0, else\naddi $4, $0, 1\nj join\nelse: addi $4, $0, 2\njoin: addi $2, $0, 1\nsyscall\naddi $2, $0, 10\nsyscall\n",
        );
        g.validate().unwrap();
        let phis: Vec<_> =
            g.nodes.iter().filter(|n| n.kind == OpKind::Phi && g.placement().contains_key(&n.id)).collect();
        assert_eq!(phis.len(), 1);
        assert_eq!(phis[0].var, Some(4));
        assert!(g.structure.regions().iter().any(|r| r.kind == RegionKind::IfThenElse));
    }

    #[test]
    fn liveness_of_loop_counter() {
        let img = assemble("main: addi $8, $0, 3\nloop: addi $8, $8, -1\nbne $8, $0, loop\naddi $2, $0, 10\nsyscall\n")
            .unwrap();
        let d = decompile(&img).unwrap();
        let g = &d.procs[0];
        let lp = g.blocks.iter().find(|b| b.start == img.text_base + 4).unwrap();
        assert!(lp.live_in.contains(&8));
        assert!(lp.live_out.contains(&8));
    }
}
