//! Binding a schedule to an FSMD.
//!
//! States: `S_IDLE`, one state per control step of each block, `S_DONE`.
//! An op is evaluated in the state where it completes, reading operands
//! that were registered earlier, and its result is a temporary of that
//! state. Results read in a later state get a register: phis, values read
//! outside their block and live-outs get dedicated registers, block-local
//! values share registers by left-edge allocation over their lifetimes.
//! Phi registers are loaded on the control edge into their block.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{canonical, Interface, Schedule};
use crate::ir::{Cdfg, NodeId, OpKind, Terminator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Src {
    Reg(usize),
    /// Live-in port, indexed into [`RtlDesign::inputs`].
    Port(usize),
    /// Entry port of a header phi, indexed into [`RtlDesign::entries`].
    Entry(usize),
    Const(u32),
    /// Result computed in the current state.
    Temp(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpOp {
    pub node: NodeId,
    pub kind: OpKind,
    pub srcs: Vec<Src>,
    pub dst: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    State(usize),
    /// Leave through exit `k` of the interface.
    Exit(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub target: Target,
    /// Register loads performed on the transition, in parallel.
    pub copies: Vec<(usize, Src)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Next {
    /// `S_IDLE`: wait for `start`. With no target the region is empty and
    /// `done` answers `start` directly.
    Start(Option<Edge>),
    Goto(Edge),
    Branch {
        cond: Src,
        taken: Edge,
        fallthrough: Edge,
    },
    /// `S_DONE`: assert `done` and return to idle.
    Finish,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    pub name: String,
    /// `(block, step)` for datapath states.
    pub at: Option<(usize, u32)>,
    pub ops: Vec<DpOp>,
    pub next: Next,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub width: u8,
    /// Values stored over the register's life, in allocation order.
    pub holds: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub node: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RtlDesign {
    pub name: String,
    pub inputs: Vec<Port>,
    pub entries: Vec<Port>,
    /// Live-out ports and where their value sits once `done` is raised.
    pub outputs: Vec<(Port, Src)>,
    /// Register recording the exit taken; absent without exits.
    pub exit_reg: Option<usize>,
    pub exits: usize,
    pub registers: Vec<Register>,
    /// `S_IDLE` first; `S_DONE` last unless the region is empty.
    pub states: Vec<State>,
    pub uses_memory: bool,
}

impl RtlDesign {
    pub fn idle(&self) -> usize {
        0
    }

    pub fn done(&self) -> usize {
        self.states.len() - 1
    }

    /// Structural invariants: indices in range, temporaries read only in
    /// the state computing them, and at most one write per register along
    /// every transition out of a state.
    pub fn validate(&self) -> Result<(), String> {
        let nregs = self.registers.len();
        for (si, s) in self.states.iter().enumerate() {
            let temps: BTreeSet<NodeId> = s.ops.iter().map(|o| o.node).collect();
            let src_ok = |src: &Src| match *src {
                Src::Reg(r) => r < nregs,
                Src::Port(p) => p < self.inputs.len(),
                Src::Entry(p) => p < self.entries.len(),
                Src::Const(_) => true,
                Src::Temp(n) => temps.contains(&n),
            };
            let mut written: BTreeMap<usize, usize> = BTreeMap::new();
            for op in &s.ops {
                if let Some(bad) = op.srcs.iter().find(|x| !src_ok(x) || matches!(x, Src::Temp(_))) {
                    return Err(format!("state {}: node {} reads {:?}", s.name, op.node.0, bad));
                }
                if let Some(d) = op.dst {
                    if d >= nregs {
                        return Err(format!("state {}: register {d} out of range", s.name));
                    }
                    *written.entry(d).or_default() += 1;
                }
            }
            let edges: Vec<&Edge> = match &s.next {
                Next::Start(e) => e.iter().collect(),
                Next::Goto(e) => alloc::vec![e],
                Next::Branch { cond, taken, fallthrough } => {
                    if !src_ok(cond) {
                        return Err(format!("state {}: bad condition", s.name));
                    }
                    alloc::vec![taken, fallthrough]
                }
                Next::Finish => Vec::new(),
            };
            for e in edges {
                let mut w = written.clone();
                for (r, src) in &e.copies {
                    if *r >= nregs || !src_ok(src) {
                        return Err(format!("state {}: bad copy into {r}", s.name));
                    }
                    *w.entry(*r).or_default() += 1;
                }
                if let Some((r, _)) = w.iter().find(|(_, &n)| n > 1) {
                    return Err(format!("state {}: register {} written twice", s.name, self.registers[*r].name));
                }
                match e.target {
                    Target::State(t) if t >= self.states.len() || t == si && s.at.is_none() => {
                        return Err(format!("state {}: bad target", s.name));
                    }
                    Target::Exit(k) if k >= self.exits => return Err(format!("state {}: bad exit", s.name)),
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

fn bits(v: usize) -> u8 {
    (usize::BITS - v.leading_zeros()).max(1) as u8
}

pub fn bind(g: &Cdfg, iface: &Interface, sched: &Schedule, name: &str) -> RtlDesign {
    let inputs: Vec<Port> = iface.live_in.iter().map(|&n| Port { name: format!("in_n{}", n.0), node: n }).collect();
    let entries: Vec<Port> =
        iface.entry_phis.iter().map(|&n| Port { name: format!("entry_n{}", n.0), node: n }).collect();
    let port_of: BTreeMap<NodeId, usize> = iface.live_in.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    if iface.blocks.is_empty() {
        return RtlDesign {
            name: String::from(name),
            inputs,
            entries,
            outputs: Vec::new(),
            exit_reg: None,
            exits: 0,
            registers: Vec::new(),
            states: alloc::vec![State {
                name: String::from("S_IDLE"),
                at: None,
                ops: Vec::new(),
                next: Next::Start(None)
            }],
            uses_memory: false,
        };
    }

    // State numbering and completion states.
    let mut base: BTreeMap<usize, usize> = BTreeMap::new();
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    let mut next_state = 1;
    for b in &sched.blocks {
        base.insert(b.block, next_state);
        next_state += b.length as usize;
        last.insert(b.block, next_state - 1);
    }
    let done_state = next_state;
    let mut comp: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut home: BTreeMap<NodeId, usize> = BTreeMap::new();
    for b in &sched.blocks {
        for (i, op) in b.dag.ops.iter().enumerate() {
            comp.insert(op.node, base[&b.block] + b.finish(i) as usize - 1);
            home.insert(op.node, b.block);
        }
    }
    let phis: Vec<NodeId> = iface
        .blocks
        .iter()
        .flat_map(|&b| g.blocks[b].ops.iter().copied())
        .filter(|&n| g.node(n).kind == OpKind::Phi)
        .collect();
    let phi_set: BTreeSet<NodeId> = phis.iter().copied().collect();

    // Reads of op results: (value, state, reading block).
    let mut reads: Vec<(NodeId, usize, usize)> = Vec::new();
    let mut global: BTreeSet<NodeId> = BTreeSet::new();
    for b in &sched.blocks {
        for op in &b.dag.ops {
            for &o in &g.node(op.node).operands {
                reads.push((canonical(g, o), comp[&op.node], b.block));
            }
        }
        let blk = &g.blocks[b.block];
        let end = last[&b.block];
        for o in blk.term.operands() {
            reads.push((canonical(g, o), end, b.block));
        }
        for s in blk.term.successors() {
            let t = &g.blocks[s.index()];
            if !iface.blocks.contains(&s.index()) {
                continue;
            }
            let k = t.preds.iter().position(|p| p.index() == b.block).unwrap();
            for &n in t.ops.iter().filter(|&&n| phi_set.contains(&n)) {
                reads.push((canonical(g, g.node(n).operands[k]), end, b.block));
            }
        }
    }
    for &n in &iface.live_out {
        global.insert(canonical(g, n));
    }
    let mut last_read: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &(v, state, block) in &reads {
        if let Some(&h) = home.get(&v) {
            if h != block {
                global.insert(v);
            }
            let e = last_read.entry(v).or_insert(0);
            *e = (*e).max(state);
        }
    }

    // Registers: phis, then dedicated values, then shared locals, then exit.
    let mut registers: Vec<Register> = Vec::new();
    let mut reg_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    let dedicated = |n: NodeId, registers: &mut Vec<Register>, reg_of: &mut BTreeMap<NodeId, usize>| {
        reg_of.insert(n, registers.len());
        registers.push(Register {
            name: format!("r{}", registers.len()),
            width: g.node(n).width,
            holds: alloc::vec![n],
        });
    };
    for &p in &phis {
        dedicated(p, &mut registers, &mut reg_of);
    }
    for &v in &global {
        if home.contains_key(&v) {
            dedicated(v, &mut registers, &mut reg_of);
        }
    }
    let mut intervals: Vec<(usize, usize, NodeId)> = last_read
        .iter()
        .filter(|(v, _)| !global.contains(v))
        .filter_map(|(&v, &end)| (end > comp[&v]).then_some((comp[&v] + 1, end, v)))
        .collect();
    intervals.sort();
    let mut busy_until: Vec<(usize, usize)> = Vec::new();
    for (start, end, v) in intervals {
        match busy_until.iter_mut().find(|(_, e)| *e < start) {
            Some(slot) => {
                slot.1 = end;
                let r = &mut registers[slot.0];
                r.width = r.width.max(g.node(v).width);
                r.holds.push(v);
                reg_of.insert(v, slot.0);
            }
            None => {
                busy_until.push((registers.len(), end));
                dedicated(v, &mut registers, &mut reg_of);
            }
        }
    }
    let exit_reg = (!iface.exits.is_empty()).then(|| {
        registers.push(Register {
            name: String::from("r_exit"),
            width: bits(iface.exits.len() - 1),
            holds: Vec::new(),
        });
        registers.len() - 1
    });

    let src_at = |v: NodeId, state: usize| -> Src {
        let c = canonical(g, v);
        if let OpKind::Const(k) = g.node(c).kind {
            return Src::Const(k);
        }
        if let Some(&p) = port_of.get(&c) {
            return Src::Port(p);
        }
        if comp.get(&c) == Some(&state) {
            return Src::Temp(c);
        }
        Src::Reg(reg_of[&c])
    };

    let edge = |from: usize, to: usize, state: usize| -> Edge {
        if !iface.blocks.contains(&to) {
            let k = iface.exits.iter().position(|&e| e == (from, to)).unwrap();
            return Edge { target: Target::Exit(k), copies: alloc::vec![(exit_reg.unwrap(), Src::Const(k as u32))] };
        }
        let t = &g.blocks[to];
        let k = t.preds.iter().position(|p| p.index() == from).unwrap();
        let copies = t
            .ops
            .iter()
            .filter(|n| phi_set.contains(n))
            .map(|&n| (reg_of[&n], src_at(g.node(n).operands[k], state)))
            .collect();
        Edge { target: Target::State(base[&to]), copies }
    };

    let header_copies = iface.entry_phis.iter().enumerate().map(|(i, n)| (reg_of[n], Src::Entry(i))).collect();
    let mut states = alloc::vec![State {
        name: String::from("S_IDLE"),
        at: None,
        ops: Vec::new(),
        next: Next::Start(Some(Edge { target: Target::State(base[&iface.header]), copies: header_copies })),
    }];
    let mut uses_memory = false;
    for b in &sched.blocks {
        let mut by_state: BTreeMap<usize, Vec<DpOp>> = BTreeMap::new();
        for op in &b.dag.ops {
            let node = g.node(op.node);
            uses_memory |= node.kind.is_memory();
            let at = comp[&op.node];
            let kept = global.contains(&op.node) || last_read.get(&op.node).is_some_and(|&e| e > at);
            let dst = if node.kind.has_value() && kept { Some(reg_of[&op.node]) } else { None };
            let srcs = node.operands.iter().map(|&o| src_at(o, at)).collect();
            by_state.entry(at).or_default().push(DpOp { node: op.node, kind: node.kind, srcs, dst });
        }
        for step in 0..b.length {
            let id = base[&b.block] + step as usize;
            let next = if id < last[&b.block] {
                Next::Goto(Edge { target: Target::State(id + 1), copies: Vec::new() })
            } else {
                match &g.blocks[b.block].term {
                    Terminator::Jump(t) => Next::Goto(edge(b.block, t.index(), id)),
                    Terminator::Branch { cond, taken, fallthrough } => Next::Branch {
                        cond: src_at(*cond, id),
                        taken: edge(b.block, taken.index(), id),
                        fallthrough: edge(b.block, fallthrough.index(), id),
                    },
                    _ => unreachable!("exit terminators are rejected by the interface"),
                }
            };
            states.push(State {
                name: format!("S_B{}_{}", b.block, step),
                at: Some((b.block, step)),
                ops: by_state.remove(&id).unwrap_or_default(),
                next,
            });
        }
    }
    states.push(State { name: String::from("S_DONE"), at: None, ops: Vec::new(), next: Next::Finish });
    debug_assert_eq!(states.len(), done_state + 1);

    let outputs = iface
        .live_out
        .iter()
        .map(|&n| {
            let c = canonical(g, n);
            let src = match g.node(c).kind {
                OpKind::Const(k) => Src::Const(k),
                _ => port_of.get(&c).map_or_else(|| Src::Reg(reg_of[&c]), |&p| Src::Port(p)),
            };
            (Port { name: format!("out_n{}", n.0), node: n }, src)
        })
        .collect();
    RtlDesign {
        name: String::from(name),
        inputs,
        entries,
        outputs,
        exit_reg,
        exits: iface.exits.len(),
        registers,
        states,
        uses_memory,
    }
}
