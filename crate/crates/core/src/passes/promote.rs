//! Strength promotion: shift/add trees computing `x * c` become a single
//! multiplication, with the original tree kept as the node's alternative.
//!
//! A tree is rooted at a shl-by-constant, add or sub node; interior nodes
//! are such ops in the same block with exactly one use. Each node is
//! evaluated symbolically as `k * x`. Trees whose leaves are all the same
//! `x`, with at least two ops and a factor that is neither 0, 1 nor a power
//! of two, are replaced. A bare shift is cheaper than any multiplier.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::PassStats;
use crate::ir::{AltRef, AltStep, BlockId, Cdfg, NodeId, OpKind, ShiftAddAlt};

/// Binary expansion of `x * c`: one shift per set bit, summed from the
/// highest. `c` must be nonzero.
pub fn canonical_shift_add(c: u32) -> ShiftAddAlt {
    assert!(c != 0, "no shift/add form for zero");
    let mut steps = Vec::new();
    let mut acc: Option<AltRef> = None;
    for bit in (0..32u8).rev().filter(|&b| c >> b & 1 == 1) {
        let term = if bit == 0 {
            AltRef::X
        } else {
            steps.push(AltStep::Shl(AltRef::X, bit));
            AltRef::Step(steps.len() - 1)
        };
        acc = Some(match acc {
            None => term,
            Some(a) => {
                steps.push(AltStep::Add(a, term));
                AltRef::Step(steps.len() - 1)
            }
        });
    }
    ShiftAddAlt { steps }
}

/// Appends the ops of `alt` applied to `x` to `block` and returns the result.
pub fn expand_shift_add(g: &mut Cdfg, block: BlockId, x: NodeId, alt: &ShiftAddAlt, origin: u32) -> NodeId {
    let mut vals: Vec<NodeId> = Vec::new();
    let get = |vals: &Vec<NodeId>, r: AltRef| match r {
        AltRef::X => x,
        AltRef::Step(i) => vals[i],
    };
    for s in &alt.steps {
        let v = match *s {
            AltStep::Shl(a, sh) => {
                let k = g.push(block, OpKind::Const(sh as u32), Vec::new(), origin);
                let a = get(&vals, a);
                g.push(block, OpKind::Shl, alloc::vec![a, k], origin)
            }
            AltStep::Add(a, b) => {
                let (a, b) = (get(&vals, a), get(&vals, b));
                g.push(block, OpKind::Add, alloc::vec![a, b], origin)
            }
            AltStep::Sub(a, b) => {
                let (a, b) = (get(&vals, a), get(&vals, b));
                g.push(block, OpKind::Sub, alloc::vec![a, b], origin)
            }
        };
        vals.push(v);
    }
    vals.last().copied().unwrap_or(x)
}

struct Tree<'a> {
    g: &'a Cdfg,
    uses: &'a BTreeMap<NodeId, usize>,
    block: BlockId,
    at: &'a BTreeMap<NodeId, (BlockId, usize)>,
}

impl Tree<'_> {
    fn is_op(&self, n: NodeId) -> bool {
        let node = self.g.node(n);
        match node.kind {
            OpKind::Add | OpKind::Sub => true,
            OpKind::Shl => self.g.const_value(node.operands[1]).is_some_and(|c| c < 32),
            _ => false,
        }
    }

    fn interior(&self, n: NodeId) -> bool {
        self.is_op(n) && self.uses.get(&n) == Some(&1) && self.at.get(&n).map(|p| p.0) == Some(self.block)
    }

    /// Operands of a tree op that belong to the tree or are leaves.
    fn children(&self, n: NodeId) -> Vec<NodeId> {
        let node = self.g.node(n);
        match node.kind {
            OpKind::Shl => alloc::vec![node.operands[0]],
            _ => node.operands.clone(),
        }
    }

    /// `(x, k, ops)` with the subtree computing `k * x` in `ops` ops.
    fn linear(&self, n: NodeId, root: bool) -> Option<(NodeId, u32, usize)> {
        if !root && !self.interior(n) {
            return Some((n, 1, 0));
        }
        let node = self.g.node(n);
        let kids: Vec<(NodeId, u32, usize)> =
            self.children(n).into_iter().map(|c| self.linear(c, false)).collect::<Option<_>>()?;
        let (x, k0, c0) = kids[0];
        match node.kind {
            OpKind::Shl => Some((x, k0 << self.g.const_value(node.operands[1])?, c0 + 1)),
            _ => {
                let (y, k1, c1) = kids[1];
                if x != y {
                    return None;
                }
                let k = if node.kind == OpKind::Add { k0.wrapping_add(k1) } else { k0.wrapping_sub(k1) };
                Some((x, k, c0 + c1 + 1))
            }
        }
    }

    fn emit(&self, n: NodeId, root: bool, steps: &mut Vec<AltStep>) -> AltRef {
        if !root && !self.interior(n) {
            return AltRef::X;
        }
        let node = self.g.node(n);
        let step = match node.kind {
            OpKind::Shl => {
                let a = self.emit(node.operands[0], false, steps);
                AltStep::Shl(a, self.g.const_value(node.operands[1]).unwrap() as u8)
            }
            k => {
                let a = self.emit(node.operands[0], false, steps);
                let b = self.emit(node.operands[1], false, steps);
                if k == OpKind::Add {
                    AltStep::Add(a, b)
                } else {
                    AltStep::Sub(a, b)
                }
            }
        };
        steps.push(step);
        AltRef::Step(steps.len() - 1)
    }
}

pub fn promote_strength(g: &mut Cdfg, max_chain: usize, stats: &mut PassStats) {
    stats.iterations = 1;
    let uses = g.use_counts();
    let at = g.placement();
    let users = g.users();
    let mut found: Vec<(NodeId, NodeId, u32, ShiftAddAlt)> = Vec::new();
    for b in 0..g.blocks.len() {
        let tree = Tree { g, uses: &uses, block: BlockId(b as u32), at: &at };
        // Roots: tree ops that are not interior to a tree op in this block.
        let roots: Vec<NodeId> = g.blocks[b]
            .ops
            .iter()
            .copied()
            .filter(|&n| tree.is_op(n))
            .filter(|&n| {
                !(tree.interior(n)
                    && users
                        .get(&n)
                        .is_some_and(|us| us.iter().all(|&u| tree.is_op(u) && tree.children(u).contains(&n))))
            })
            .collect();
        let mut work: Vec<NodeId> = roots.into_iter().rev().collect();
        while let Some(r) = work.pop() {
            match tree.linear(r, true) {
                Some((x, c, ops)) if ops >= 2 && ops <= max_chain && c > 1 && !c.is_power_of_two() => {
                    let mut steps = Vec::new();
                    tree.emit(r, true, &mut steps);
                    found.push((r, x, c, ShiftAddAlt { steps }));
                }
                Some((_, _, ops)) if ops > max_chain => stats.reject(r, "chain-too-long"),
                _ => {
                    // Try the largest subtrees instead.
                    for c in tree.children(r).into_iter().rev() {
                        if tree.interior(c) {
                            work.push(c);
                        }
                    }
                }
            }
        }
    }
    for (r, x, c, alt) in found {
        let (b, _) = at[&r];
        let origin = g.node(r).origin;
        let k = g.alloc(OpKind::Const(c), Vec::new(), origin);
        let ops = &mut g.blocks[b.index()].ops;
        let pos = ops.iter().position(|&n| n == r).unwrap();
        ops.insert(pos, k);
        let node = g.node_mut(r);
        node.kind = OpKind::Mul;
        node.operands = alloc::vec![x, k];
        node.anno = Some(alt);
        stats.rewrite(r, "shift-add-to-mul");
    }
    g.remove_dead();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Terminator;
    use crate::passes::{run_pass, Pass, PassConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(build: impl FnOnce(&mut Cdfg, BlockId, NodeId) -> NodeId) -> (Cdfg, NodeId) {
        let mut g = Cdfg::new("t".into(), 0);
        let b = g.add_block(0, Terminator::Halt);
        let x = g.push(b, OpKind::Input, Vec::new(), 0);
        let r = build(&mut g, b, x);
        g.push(b, OpKind::Output, alloc::vec![r], 0);
        (g, r)
    }

    fn shl(g: &mut Cdfg, b: BlockId, x: NodeId, s: u32) -> NodeId {
        let k = g.push(b, OpKind::Const(s), Vec::new(), 0);
        g.push(b, OpKind::Shl, alloc::vec![x, k], 0)
    }

    fn promoted(mut g: Cdfg, r: NodeId, c: u32) {
        let before = g.clone();
        run_pass(&mut g, Pass::Promote, &PassConfig::default());
        g.validate().unwrap();
        let node = g.node(r);
        assert_eq!(node.kind, OpKind::Mul);
        assert_eq!(g.const_value(node.operands[1]), Some(c));
        let alt = node.anno.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
        for i in 0..1 << 16 {
            let x: u32 = rng.gen();
            assert_eq!(alt.eval(x), x.wrapping_mul(c));
            if i % 64 == 0 {
                let a = crate::decompile::execute_cdfg(&before, &[x], 0, &[], 100);
                let b = crate::decompile::execute_cdfg(&g, &[x], 0, &[], 100);
                assert_eq!(a.outputs, [x.wrapping_mul(c)]);
                assert_eq!(b.outputs, a.outputs);
            }
        }
    }

    #[test]
    fn times_ten() {
        let (g, r) = single(|g, b, x| {
            let a = shl(g, b, x, 3);
            let c = shl(g, b, x, 1);
            g.push(b, OpKind::Add, alloc::vec![a, c], 0)
        });
        promoted(g, r, 10);
    }

    #[test]
    fn times_seven() {
        let (g, r) = single(|g, b, x| {
            let a = shl(g, b, x, 3);
            g.push(b, OpKind::Sub, alloc::vec![a, x], 0)
        });
        promoted(g, r, 7);
    }

    #[test]
    fn bare_shift_is_untouched() {
        let (mut g, r) = single(|g, b, x| shl(g, b, x, 2));
        let stats = run_pass(&mut g, Pass::Promote, &PassConfig::default());
        assert!(stats.rewrites.is_empty());
        assert_eq!(g.node(r).kind, OpKind::Shl);
    }

    #[test]
    fn mixed_leaves_are_untouched() {
        let (mut g, _) = single(|g, b, x| {
            let y = g.push(b, OpKind::Input, Vec::new(), 0);
            let a = shl(g, b, x, 3);
            g.push(b, OpKind::Add, alloc::vec![a, y], 0)
        });
        let stats = run_pass(&mut g, Pass::Promote, &PassConfig::default());
        assert!(stats.rewrites.is_empty());
    }

    #[test]
    fn canonical_forms_recover_their_factor() {
        for c in [3u32, 5, 6, 7, 9, 10, 12, 100] {
            let alt = canonical_shift_add(c);
            assert_eq!(alt.factor(), c);
            let (g, r) = single(|g, b, x| expand_shift_add(g, b, x, &alt, 0));
            promoted(g, r, c);
        }
    }

    #[test]
    fn subtree_inside_an_accumulation_is_found() {
        // out = y + 5x, where y is unrelated: only the 5x subtree promotes.
        let (mut g, _) = single(|g, b, x| {
            let y = g.push(b, OpKind::Input, Vec::new(), 0);
            let a = shl(g, b, x, 2);
            let five = g.push(b, OpKind::Add, alloc::vec![a, x], 0);
            g.push(b, OpKind::Add, alloc::vec![y, five], 0)
        });
        let stats = run_pass(&mut g, Pass::Promote, &PassConfig::default());
        assert_eq!(stats.rewrites.len(), 1);
        g.validate().unwrap();
        let r = crate::decompile::execute_cdfg(&g, &[3, 100], 0, &[], 100);
        assert_eq!(r.outputs, [115]);
    }
}
