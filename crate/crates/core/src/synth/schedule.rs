//! Resource-constrained scheduling of one block.
//!
//! List scheduling places ready ops in critical-path order. Blocks of up to
//! [`EXACT_LIMIT`] ops are then searched exhaustively (iterative deepening
//! on the length) so that small blocks get optimal schedules.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{FuClass, ResourceSet};
use crate::ir::NodeId;

/// Largest block searched exhaustively.
pub const EXACT_LIMIT: usize = 16;
/// Search nodes allowed per block before falling back to the list result.
const SEARCH_BUDGET: u64 = 400_000;

/// One schedulable op. `preds` index earlier ops in the same dag, with the
/// minimum distance in steps from the predecessor's start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DagOp {
    pub node: NodeId,
    pub class: FuClass,
    pub latency: u32,
    pub preds: Vec<usize>,
}

/// Topologically ordered ops of one block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dag {
    pub ops: Vec<DagOp>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub step: u32,
    pub instance: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSchedule {
    pub block: usize,
    /// Control steps; at least 1 so the terminator has a state.
    pub length: u32,
    /// Parallel to the dag's ops.
    pub slots: Vec<Slot>,
    pub dag: Dag,
    /// Whether the exhaustive search proved the length optimal.
    pub optimal: bool,
}

impl BlockSchedule {
    pub fn finish(&self, i: usize) -> u32 {
        self.slots[i].step + self.dag.ops[i].latency
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schedule {
    pub blocks: Vec<BlockSchedule>,
}

impl Schedule {
    /// Steps of one pass through every block.
    pub fn total_steps(&self) -> u32 {
        self.blocks.iter().map(|b| b.length).sum()
    }

    pub fn block(&self, b: usize) -> Option<&BlockSchedule> {
        self.blocks.iter().find(|s| s.block == b)
    }

    /// `step <n>: <node>@<class>#<instance>` lines; steps are numbered
    /// across blocks in schedule order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut base = 0;
        for b in &self.blocks {
            let mut order: Vec<usize> = (0..b.slots.len()).collect();
            order.sort_by_key(|&i| (b.slots[i].step, b.dag.ops[i].class, b.slots[i].instance, b.dag.ops[i].node));
            for i in order {
                let op = &b.dag.ops[i];
                out +=
                    &format!("step {}: {}@{}#{}\n", base + b.slots[i].step, op.node.0, op.class, b.slots[i].instance);
            }
            base += b.length;
        }
        out
    }
}

/// Longest latency path from each op to the end of the block, inclusive.
fn priorities(dag: &Dag) -> Vec<u32> {
    let mut p: Vec<u32> = dag.ops.iter().map(|o| o.latency).collect();
    for i in (0..dag.ops.len()).rev() {
        for &q in &dag.ops[i].preds {
            p[q] = p[q].max(dag.ops[q].latency + p[i]);
        }
    }
    p
}

/// Occupancy of unit instances over time.
struct Units<'a> {
    res: &'a ResourceSet,
    busy: BTreeMap<(FuClass, u32), Vec<u32>>,
}

impl<'a> Units<'a> {
    fn new(res: &'a ResourceSet) -> Self {
        Units { res, busy: BTreeMap::new() }
    }

    fn free_instance(&self, class: FuClass, step: u32, lat: u32) -> Option<u32> {
        (0..self.res.count(class)).find(|&k| {
            let b = self.busy.get(&(class, k));
            (step..step + lat).all(|t| b.is_none_or(|v| !v.contains(&t)))
        })
    }

    fn occupy(&mut self, class: FuClass, instance: u32, step: u32, lat: u32) {
        self.busy.entry((class, instance)).or_default().extend(step..step + lat);
    }
}

pub fn list_schedule(dag: &Dag, res: &ResourceSet) -> Vec<Slot> {
    let n = dag.ops.len();
    let prio = priorities(dag);
    let mut slots: Vec<Option<Slot>> = vec![None; n];
    let mut units = Units::new(res);
    let mut done = 0;
    let mut t = 0u32;
    while done < n {
        let mut ready: Vec<usize> = (0..n)
            .filter(|&i| {
                slots[i].is_none()
                    && dag.ops[i].preds.iter().all(|&p| slots[p].is_some_and(|s| s.step + dag.ops[p].latency <= t))
            })
            .collect();
        ready.sort_by_key(|&i| (core::cmp::Reverse(prio[i]), dag.ops[i].node));
        for i in ready {
            let op = &dag.ops[i];
            if let Some(k) = units.free_instance(op.class, t, op.latency) {
                units.occupy(op.class, k, t, op.latency);
                slots[i] = Some(Slot { step: t, instance: k });
                done += 1;
            }
        }
        t += 1;
    }
    slots.into_iter().map(|s| s.unwrap()).collect()
}

pub fn length_of(dag: &Dag, slots: &[Slot]) -> u32 {
    dag.ops.iter().zip(slots).map(|(o, s)| s.step + o.latency).max().unwrap_or(0).max(1)
}

/// Shortest schedule found by exhaustive search below `upper`, if any.
fn exact_schedule(dag: &Dag, res: &ResourceSet, upper: u32) -> Option<(Vec<u32>, bool)> {
    let n = dag.ops.len();
    let tail = priorities(dag);
    let mut lower = tail.iter().copied().max().unwrap_or(0).max(1);
    for class in FuClass::ALL {
        let work: u32 = dag.ops.iter().filter(|o| o.class == class).map(|o| o.latency).sum();
        let count = res.count(class).max(1);
        lower = lower.max(work.div_ceil(count));
    }
    let mut budget = SEARCH_BUDGET;
    for target in lower..upper {
        let mut starts = vec![0u32; n];
        let mut usage: BTreeMap<(FuClass, u32), u32> = BTreeMap::new();
        match search(dag, res, &tail, target, 0, &mut starts, &mut usage, &mut budget) {
            Some(true) => return Some((starts, true)),
            Some(false) => {}
            None => return None,
        }
    }
    // Nothing shorter than the list schedule exists.
    Some((Vec::new(), true))
}

/// `Some(found)`, or `None` when the budget ran out.
#[allow(clippy::too_many_arguments)]
fn search(
    dag: &Dag,
    res: &ResourceSet,
    tail: &[u32],
    target: u32,
    i: usize,
    starts: &mut Vec<u32>,
    usage: &mut BTreeMap<(FuClass, u32), u32>,
    budget: &mut u64,
) -> Option<bool> {
    if i == dag.ops.len() {
        return Some(true);
    }
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let op = &dag.ops[i];
    let est = op.preds.iter().map(|&p| starts[p] + dag.ops[p].latency).max().unwrap_or(0);
    if est + tail[i] > target {
        return Some(false);
    }
    for s in est..=target - tail[i] {
        let cap = res.count(op.class);
        if (s..s + op.latency).any(|t| usage.get(&(op.class, t)).copied().unwrap_or(0) >= cap) {
            continue;
        }
        for t in s..s + op.latency {
            *usage.entry((op.class, t)).or_default() += 1;
        }
        starts[i] = s;
        let r = search(dag, res, tail, target, i + 1, starts, usage, budget);
        for t in s..s + op.latency {
            *usage.get_mut(&(op.class, t)).unwrap() -= 1;
        }
        match r {
            Some(false) => {}
            other => return other,
        }
    }
    Some(false)
}

/// Unit instances for given start times: per class, interval colouring in
/// start order.
fn assign_instances(dag: &Dag, starts: &[u32]) -> Vec<Slot> {
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by_key(|&i| (starts[i], dag.ops[i].node));
    let mut free_at: BTreeMap<FuClass, Vec<u32>> = BTreeMap::new();
    let mut slots = vec![Slot { step: 0, instance: 0 }; starts.len()];
    for i in order {
        let op = &dag.ops[i];
        let units = free_at.entry(op.class).or_default();
        let k = match units.iter().position(|&f| f <= starts[i]) {
            Some(k) => k,
            None => {
                units.push(0);
                units.len() - 1
            }
        };
        units[k] = starts[i] + op.latency;
        slots[i] = Slot { step: starts[i], instance: k as u32 };
    }
    slots
}

/// Schedules `dag`; every class it uses must have at least one unit.
pub fn schedule_block(block: usize, dag: Dag, res: &ResourceSet) -> BlockSchedule {
    let mut slots = list_schedule(&dag, res);
    let mut length = length_of(&dag, &slots);
    let mut optimal = false;
    if dag.ops.len() <= EXACT_LIMIT {
        if let Some((starts, proven)) = exact_schedule(&dag, res, length) {
            optimal = proven;
            if !starts.is_empty() {
                slots = assign_instances(&dag, &starts);
                length = length_of(&dag, &slots);
            }
        }
    }
    BlockSchedule { block, length, slots, dag, optimal }
}

/// Independent legality check: dependences, unit counts per step and
/// instance exclusivity.
pub fn check_schedule(s: &BlockSchedule, res: &ResourceSet) -> Result<(), String> {
    let mut per_step: BTreeMap<(FuClass, u32), u32> = BTreeMap::new();
    let mut owner: BTreeMap<(FuClass, u32, u32), NodeId> = BTreeMap::new();
    for (i, op) in s.dag.ops.iter().enumerate() {
        let slot = s.slots[i];
        for &p in &op.preds {
            if slot.step < s.slots[p].step + s.dag.ops[p].latency {
                return Err(format!("node {} starts before node {} finishes", op.node.0, s.dag.ops[p].node.0));
            }
        }
        if slot.instance >= res.count(op.class) {
            return Err(format!("node {} uses {}#{} beyond the unit count", op.node.0, op.class, slot.instance));
        }
        for t in slot.step..slot.step + op.latency {
            *per_step.entry((op.class, t)).or_default() += 1;
            if let Some(other) = owner.insert((op.class, slot.instance, t), op.node) {
                return Err(format!(
                    "nodes {} and {} share {}#{} at step {t}",
                    other.0, op.node.0, op.class, slot.instance
                ));
            }
        }
        if slot.step + op.latency > s.length {
            return Err(format!("node {} finishes after the block ends", op.node.0));
        }
    }
    for (&(class, t), &n) in &per_step {
        if n > res.count(class) {
            return Err(format!("{n} {class} ops at step {t}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(id: u32, class: FuClass, latency: u32, preds: &[usize]) -> DagOp {
        DagOp { node: NodeId(id), class, latency, preds: preds.to_vec() }
    }

    fn adders(n: u32) -> ResourceSet {
        let mut r = ResourceSet::default();
        r.set_count(FuClass::Adder, n);
        r
    }

    #[test]
    fn chain_of_three_adds_takes_three_steps() {
        let dag = Dag {
            ops: vec![op(1, FuClass::Adder, 1, &[]), op(2, FuClass::Adder, 1, &[0]), op(3, FuClass::Adder, 1, &[1])],
        };
        let s = schedule_block(0, dag, &adders(1));
        assert_eq!(s.length, 3);
        check_schedule(&s, &adders(1)).unwrap();
    }

    #[test]
    fn four_independent_adds_on_two_adders_take_two_steps() {
        let dag = Dag { ops: (1..=4).map(|i| op(i, FuClass::Adder, 1, &[])).collect() };
        let res = adders(2);
        assert_eq!(length_of(&dag, &list_schedule(&dag, &res)), 2);
        let s = schedule_block(0, dag, &res);
        assert_eq!(s.length, 2);
        assert!(s.optimal);
        check_schedule(&s, &res).unwrap();
        assert_eq!(
            Schedule { blocks: vec![s.clone()] }.dump(),
            "step 0: 1@adder#0\nstep 0: 2@adder#1\nstep 1: 3@adder#0\nstep 1: 4@adder#1\n"
        );
    }

    #[test]
    fn multicycle_multiplier_is_not_shared() {
        let dag = Dag { ops: vec![op(1, FuClass::Multiplier, 2, &[]), op(2, FuClass::Multiplier, 2, &[])] };
        let s = schedule_block(0, dag, &ResourceSet::default());
        assert_eq!(s.length, 4);
        assert_eq!(s.slots[1].step, 2);
    }

    #[test]
    fn empty_block_has_one_step() {
        let s = schedule_block(0, Dag::default(), &ResourceSet::default());
        assert_eq!(s.length, 1);
        assert!(Schedule { blocks: vec![s] }.dump().is_empty());
    }

    #[test]
    fn checker_rejects_broken_schedules() {
        let dag = Dag { ops: vec![op(1, FuClass::Adder, 1, &[]), op(2, FuClass::Adder, 1, &[0])] };
        let res = adders(1);
        let mut s = schedule_block(0, dag, &res);
        s.slots[1].step = 0;
        assert!(check_schedule(&s, &res).is_err());
        s.slots[1] = Slot { step: 1, instance: 1 };
        assert!(check_schedule(&s, &res).is_err());
    }
}
