//! Multiplier versus shift/add implementation of constant multiplications.
//!
//! Per block, every combination of forms is scheduled when there are at
//! most [`EXHAUSTIVE_MULS`] candidates; otherwise candidates are decided
//! one at a time in node order. The shortest block wins; ties go to the
//! multiplier, which needs fewer ops.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::schedule::schedule_block;
use super::{block_dag, canonical, FuClass, ResourceSet, SynthError};
use crate::ir::{AltRef, AltStep, Cdfg, NodeId, OpKind, ShiftAddAlt};
use crate::passes::canonical_shift_add;

const EXHAUSTIVE_MULS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MulImpl {
    UseMultiplier,
    UseShiftAdd,
}

/// The operand multiplied and its shift/add recipe: the promotion
/// annotation, or the standard recoding of a constant operand.
pub fn shift_add_form(g: &Cdfg, n: NodeId) -> Option<(NodeId, ShiftAddAlt)> {
    let node = g.node(n);
    if node.kind != OpKind::Mul {
        return None;
    }
    if let Some(alt) = &node.anno {
        return Some((node.operands[0], alt.clone()));
    }
    let c = |i: usize| g.const_value(canonical(g, node.operands[i])).filter(|&c| c != 0);
    match (c(0), c(1)) {
        (_, Some(k)) => Some((node.operands[0], canonical_shift_add(k))),
        (Some(k), None) => Some((node.operands[1], canonical_shift_add(k))),
        (None, None) => None,
    }
}

/// Replaces the multiplication `n` by its shift/add ops, placed where `n`
/// was; `n` becomes a copy of the result so outside users are unaffected.
pub fn apply_shift_add(g: &mut Cdfg, block: usize, n: NodeId, x: NodeId, alt: &ShiftAddAlt) {
    let origin = g.node(n).origin;
    let mut fresh: Vec<NodeId> = Vec::new();
    let mut vals: Vec<NodeId> = Vec::new();
    let get = |vals: &Vec<NodeId>, r: AltRef| match r {
        AltRef::X => x,
        AltRef::Step(i) => vals[i],
    };
    for s in &alt.steps {
        let v = match *s {
            AltStep::Shl(a, sh) => {
                let k = g.alloc(OpKind::Const(sh as u32), Vec::new(), origin);
                fresh.push(k);
                g.alloc(OpKind::Shl, alloc::vec![get(&vals, a), k], origin)
            }
            AltStep::Add(a, b) => g.alloc(OpKind::Add, alloc::vec![get(&vals, a), get(&vals, b)], origin),
            AltStep::Sub(a, b) => g.alloc(OpKind::Sub, alloc::vec![get(&vals, a), get(&vals, b)], origin),
        };
        fresh.push(v);
        vals.push(v);
    }
    let result = vals.last().copied().unwrap_or(x);
    let ops = &mut g.blocks[block].ops;
    let at = ops.iter().position(|&o| o == n).expect("node placed in block");
    ops.splice(at..at, fresh);
    let node = g.node_mut(n);
    node.kind = OpKind::Copy;
    node.operands = alloc::vec![result];
    node.anno = None;
}

/// Schedule length, or `u32::MAX` when some op has no unit.
fn block_length(g: &Cdfg, block: usize, res: &ResourceSet) -> u32 {
    let dag = block_dag(g, block, res);
    if dag.ops.iter().any(|o| res.count(o.class) == 0) {
        return u32::MAX;
    }
    schedule_block(block, dag, res).length
}

fn with_choice(g: &Cdfg, block: usize, forms: &[(NodeId, NodeId, ShiftAddAlt)], shift_add: &[bool]) -> Cdfg {
    let mut t = g.clone();
    for (i, (n, x, alt)) in forms.iter().enumerate() {
        if shift_add[i] {
            apply_shift_add(&mut t, block, *n, *x, alt);
        }
    }
    t
}

/// Decides every multiplication in `block` and rewrites `g` accordingly.
pub fn decide_multiplier_impl(
    g: &mut Cdfg,
    block: usize,
    res: &ResourceSet,
) -> Result<BTreeMap<NodeId, MulImpl>, SynthError> {
    let muls: Vec<NodeId> = g.blocks[block].ops.iter().copied().filter(|&n| g.node(n).kind == OpKind::Mul).collect();
    let mut decisions = BTreeMap::new();
    let mut forms = Vec::new();
    let has_mul = res.count(FuClass::Multiplier) > 0;
    for n in muls {
        match shift_add_form(g, n) {
            Some((x, alt)) => forms.push((n, x, alt)),
            None if has_mul => {
                decisions.insert(n, MulImpl::UseMultiplier);
            }
            None => return Err(SynthError::NoFeasibleImpl(n)),
        }
    }
    let k = forms.len();
    let choice: Vec<bool> = if !has_mul {
        alloc::vec![true; k]
    } else if k <= EXHAUSTIVE_MULS {
        // Shortest, then fewest expansions, then multipliers on the earliest
        // nodes (bit i of the mask expands node i).
        let mut best: Option<(u32, u32, u32)> = None;
        for mask in 0u32..(1 << k) {
            let sa: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
            let len = block_length(&with_choice(g, block, &forms, &sa), block, res);
            let key = (len, mask.count_ones(), mask.reverse_bits());
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let mask = best.map_or(0, |b| b.2.reverse_bits());
        (0..k).map(|i| mask >> i & 1 == 1).collect()
    } else {
        let mut sa = alloc::vec![false; k];
        for i in 0..k {
            let as_mul = block_length(&with_choice(g, block, &forms, &sa), block, res);
            sa[i] = true;
            let as_sa = block_length(&with_choice(g, block, &forms, &sa), block, res);
            sa[i] = as_sa < as_mul;
        }
        sa
    };
    for (i, (n, x, alt)) in forms.iter().enumerate() {
        if choice[i] {
            apply_shift_add(g, block, *n, *x, alt);
            decisions.insert(*n, MulImpl::UseShiftAdd);
        } else {
            decisions.insert(*n, MulImpl::UseMultiplier);
        }
    }
    Ok(decisions)
}
