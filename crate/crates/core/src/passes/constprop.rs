//! Constant folding, algebraic identities and copy elimination, run to a
//! fixpoint.
//!
//! Rewrites never allocate unless a pattern actually fires, and every
//! pattern removes its own trigger, so a second run is a no-op.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::PassStats;
use crate::decompile::remove_trivial_phis;
use crate::ir::{eval_binary, Cdfg, NodeId, OpKind};

enum Action {
    /// Uses of the node become uses of another node.
    Forward(NodeId),
    /// The node itself changes.
    Mutate(OpKind, Vec<NodeId>),
    /// The node becomes `op(x, new const)`.
    WithConst(OpKind, NodeId, u32),
}

pub fn propagate_constants(g: &mut Cdfg, stats: &mut PassStats) {
    loop {
        stats.iterations += 1;
        let mut changed = sweep(g, stats);
        let trivial = remove_trivial_phis(g);
        changed |= trivial > 0;
        changed |= g.remove_dead() > 0;
        if !changed {
            break;
        }
    }
}

fn sweep(g: &mut Cdfg, stats: &mut PassStats) -> bool {
    let mut forward: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut changed = false;
    for b in 0..g.blocks.len() {
        let ops = g.blocks[b].ops.clone();
        let mut const_phis = Vec::new();
        for id in ops {
            let Some((rule, action)) = rewrite(g, id) else { continue };
            stats.rewrite(id, rule);
            changed = true;
            match action {
                Action::Forward(to) => {
                    forward.insert(id, to);
                }
                Action::Mutate(kind, operands) => {
                    if g.node(id).kind == OpKind::Phi {
                        const_phis.push(id);
                    }
                    let n = g.node_mut(id);
                    n.kind = kind;
                    n.operands = operands;
                }
                Action::WithConst(kind, x, c) => {
                    let origin = g.node(id).origin;
                    let k = g.alloc(OpKind::Const(c), Vec::new(), origin);
                    let at = g.blocks[b].ops.iter().position(|&n| n == id).unwrap();
                    g.blocks[b].ops.insert(at, k);
                    let n = g.node_mut(id);
                    n.kind = kind;
                    n.operands = alloc::vec![x, k];
                }
            }
        }
        // A folded phi is an ordinary op now and must follow the phis.
        if !const_phis.is_empty() {
            let ops = &mut g.blocks[b].ops;
            ops.retain(|n| !const_phis.contains(n));
            let at = ops.iter().position(|&n| g.nodes[n.index()].kind != OpKind::Phi).unwrap_or(ops.len());
            for (i, &p) in const_phis.iter().enumerate() {
                ops.insert(at + i, p);
            }
        }
    }
    if !forward.is_empty() {
        g.replace_uses(&forward);
        for b in &mut g.blocks {
            b.ops.retain(|n| !forward.contains_key(n));
        }
    }
    changed
}

fn rewrite(g: &Cdfg, id: NodeId) -> Option<(&'static str, Action)> {
    use OpKind::*;
    let n = g.node(id);
    let c = |i: usize| g.const_value(n.operands[i]);
    match n.kind {
        Copy => return Some(("copy", Action::Forward(n.operands[0]))),
        Phi => {
            let first = g.const_value(*n.operands.first()?)?;
            if n.operands.iter().all(|&o| g.const_value(o) == Some(first)) {
                return Some(("phi-const", Action::Mutate(Const(first), Vec::new())));
            }
            return None;
        }
        Load { width, signed, offset } => {
            let (x, d) = add_const(g, n.operands[0])?;
            let offset = offset.checked_add(d)?;
            return Some(("mem-base", Action::Mutate(Load { width, signed, offset }, alloc::vec![x])));
        }
        Store { width, offset } => {
            let (x, d) = add_const(g, n.operands[0])?;
            let offset = offset.checked_add(d)?;
            return Some(("mem-base", Action::Mutate(Store { width, offset }, alloc::vec![x, n.operands[1]])));
        }
        k if !k.is_binary() => return None,
        _ => {}
    }
    let (a, b) = (n.operands[0], n.operands[1]);
    let k = n.kind;
    if let (Some(x), Some(y)) = (c(0), c(1)) {
        return Some(("fold", Action::Mutate(Const(eval_binary(k, x, y)), Vec::new())));
    }
    // Constants go on the right of commutative ops.
    if k.is_commutative() && c(0).is_some() {
        return Some(("commute", Action::Mutate(k, alloc::vec![b, a])));
    }
    let rc = c(1);
    match (k, rc) {
        (Add | Sub | Or | Xor | Shl | Lshr | Ashr, Some(0)) => return Some(("identity", Action::Forward(a))),
        (And, Some(u32::MAX)) | (Mul, Some(1)) => return Some(("identity", Action::Forward(a))),
        (Mul | And, Some(0)) => return Some(("absorb", Action::Mutate(Const(0), Vec::new()))),
        (Sub, Some(v)) => return Some(("sub-const", Action::WithConst(Add, a, v.wrapping_neg()))),
        (Add, Some(v2)) => {
            if let Some((x, v1)) = add_const(g, a) {
                return Some(("reassociate", Action::WithConst(Add, x, (v1 as u32).wrapping_add(v2))));
            }
        }
        _ => {}
    }
    if a == b {
        match k {
            Sub | Xor => return Some(("self-cancel", Action::Mutate(Const(0), Vec::new()))),
            And | Or => return Some(("self-idempotent", Action::Forward(a))),
            _ => {}
        }
    }
    None
}

/// `x + c` with the constant on the right, as `(x, c)`.
fn add_const(g: &Cdfg, id: NodeId) -> Option<(NodeId, i32)> {
    let n = g.node(id);
    if n.kind != OpKind::Add {
        return None;
    }
    Some((n.operands[0], g.const_value(n.operands[1])? as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompile::{decompile_program, execute_program, ExecOptions};
    use crate::isa::assemble;
    use crate::passes::{run_pass, Pass, PassConfig};

    fn run(g: &mut Cdfg) -> PassStats {
        run_pass(g, Pass::ConstProp, &PassConfig::default())
    }

    fn main_of(src: &str) -> Cdfg {
        decompile_program(&assemble(src).unwrap()).unwrap().procs.remove(0)
    }

    #[test]
    fn zero_immediate_move_becomes_a_direct_edge() {
        let mut g = Cdfg::new("t".into(), 0);
        let b = g.add_block(0, crate::ir::Terminator::Halt);
        let x = g.push(b, OpKind::Input, Vec::new(), 0);
        let z = g.push(b, OpKind::Const(0), Vec::new(), 0);
        let s = g.push(b, OpKind::Add, alloc::vec![x, z], 0);
        let o = g.push(b, OpKind::Output, alloc::vec![s], 0);
        run(&mut g);
        assert_eq!(g.node(o).operands, [x]);
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn folds_constant_arithmetic() {
        let mut g = Cdfg::new("t".into(), 0);
        let b = g.add_block(0, crate::ir::Terminator::Halt);
        let two = g.push(b, OpKind::Const(2), Vec::new(), 0);
        let three = g.push(b, OpKind::Const(3), Vec::new(), 0);
        let s = g.push(b, OpKind::Add, alloc::vec![two, three], 0);
        g.push(b, OpKind::Output, alloc::vec![s], 0);
        run(&mut g);
        assert_eq!(g.node(s).kind, OpKind::Const(5));
        g.validate().unwrap();
    }

    #[test]
    fn corpus_is_preserved_and_shrinks() {
        for p in crate::corpus::ALL.iter().filter(|p| !p.indirect) {
            let img = assemble(p.source).unwrap();
            let prog = decompile_program(&img).unwrap();
            let mut opt = prog.clone();
            for g in &mut opt.procs {
                run(g);
                g.validate().unwrap();
            }
            assert!(opt.node_count() <= prog.node_count(), "{}", p.name);
            for s in p.samples {
                let a = execute_program(&prog, s, ExecOptions::new(1_000_000));
                let b = execute_program(&opt, s, ExecOptions::new(1_000_000));
                assert_eq!(a.outputs, b.outputs, "{}", p.name);
                assert_eq!(a.exit_reason, b.exit_reason, "{}", p.name);
            }
        }
    }

    #[test]
    fn idempotent_on_corpus() {
        for p in crate::corpus::ALL.iter().filter(|p| !p.indirect) {
            let mut prog = decompile_program(&assemble(p.source).unwrap()).unwrap();
            for g in &mut prog.procs {
                run(g);
                let once = g.clone();
                let again = run(g);
                assert_eq!(*g, once, "{}", p.name);
                assert!(again.rewrites.is_empty(), "{}", p.name);
            }
        }
    }

    #[test]
    fn constant_memory_bases_fold_into_offsets() {
        let g = {
            let mut g =
                main_of("main: lui $8, 0x1000\nlw $4, 8($8)\naddi $2, $0, 1\nsyscall\naddi $2, $0, 10\nsyscall\n");
            run(&mut g);
            g
        };
        let load = g.nodes.iter().find(|n| matches!(n.kind, OpKind::Load { .. }) && g.placement().contains_key(&n.id));
        let load = load.unwrap();
        assert!(g.const_value(load.operands[0]).is_some());
    }
}
