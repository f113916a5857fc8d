//! Cycle-accurate interpretation of a bound design, and co-simulation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::bind::{Edge, Next, RtlDesign, Src, Target};
use super::Synthesis;
use crate::decompile::{load, store, HookExit, HookIo, RegionHook};
use crate::ir::{eval_binary, mask, BlockId, MemWidth, NodeId, OpKind};
use crate::mem::Memory;

/// Cycles spent outside datapath states: one in `S_IDLE` accepting
/// `start`, one in `S_DONE` raising `done`.
pub const HANDSHAKE_CYCLES: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RtlError {
    MaxCyclesExceeded(u64),
    Fault(String),
}

impl fmt::Display for RtlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RtlError::MaxCyclesExceeded(n) => write!(f, "no done after {n} cycles"),
            RtlError::Fault(s) => f.write_str(s),
        }
    }
}

impl core::error::Error for RtlError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RtlRun {
    /// Live-out port values, in port order.
    pub outputs: Vec<u32>,
    /// Exit taken, when the region has exits.
    pub exit: Option<usize>,
    /// Cycles from accepting `start` to raising `done`, inclusive.
    pub hw_cycles: u64,
    /// Blocks entered, in order.
    pub trace: Vec<usize>,
}

/// Runs the design once from `S_IDLE` with `start` held high. `inputs` and
/// `entries` drive the live-in and entry ports.
pub fn simulate_rtl(
    d: &RtlDesign,
    inputs: &[u32],
    entries: &[u32],
    mem: &mut Memory,
    max_cycles: u64,
) -> Result<RtlRun, RtlError> {
    if inputs.len() != d.inputs.len() || entries.len() != d.entries.len() {
        return Err(RtlError::Fault(format!("{}: port count mismatch", d.name)));
    }
    let mut regs = vec![0u32; d.registers.len()];
    let mut state = d.idle();
    let mut cycles = 0u64;
    let mut trace = Vec::new();
    loop {
        if cycles >= max_cycles {
            return Err(RtlError::MaxCyclesExceeded(max_cycles));
        }
        cycles += 1;
        let s = &d.states[state];
        let mut temps: BTreeMap<NodeId, u32> = BTreeMap::new();
        let mut writes: Vec<(usize, u32)> = Vec::new();
        let mut pending_store: Option<(u32, MemWidth, u32)> = None;
        let read = |src: Src, temps: &BTreeMap<NodeId, u32>| -> u32 {
            match src {
                Src::Reg(r) => regs[r],
                Src::Port(p) => inputs[p],
                Src::Entry(p) => entries[p],
                Src::Const(c) => c,
                Src::Temp(n) => temps[&n],
            }
        };
        for op in &s.ops {
            let a = |i: usize| read(op.srcs[i], &temps);
            let v = match op.kind {
                k if k.is_binary() => eval_binary(k, a(0), a(1)),
                OpKind::Load { width, signed, offset } => {
                    load(mem, a(0).wrapping_add(offset as u32), width, signed, 0).map_err(RtlError::Fault)?
                }
                OpKind::Store { width, offset } => {
                    if pending_store.is_some() {
                        return Err(RtlError::Fault(format!("{}: two stores in {}", d.name, s.name)));
                    }
                    pending_store = Some((a(0).wrapping_add(offset as u32), width, a(1)));
                    0
                }
                k => return Err(RtlError::Fault(format!("{}: no datapath for {k}", d.name))),
            };
            temps.insert(op.node, v);
            if let Some(r) = op.dst {
                writes.push((r, v));
            }
        }
        let take = |e: &Edge, writes: &mut Vec<(usize, u32)>| {
            for &(r, src) in &e.copies {
                writes.push((r, read(src, &temps)));
            }
            e.target
        };
        let target = match &s.next {
            Next::Start(None) => {
                return Ok(RtlRun { outputs: Vec::new(), exit: None, hw_cycles: cycles, trace });
            }
            Next::Start(Some(e)) | Next::Goto(e) => take(e, &mut writes),
            Next::Branch { cond, taken, fallthrough } => {
                let e = if read(*cond, &temps) != 0 { taken } else { fallthrough };
                take(e, &mut writes)
            }
            Next::Finish => {
                let outputs = d.outputs.iter().map(|(_, src)| read(*src, &temps)).collect();
                let exit = d.exit_reg.map(|r| regs[r] as usize);
                return Ok(RtlRun { outputs, exit, hw_cycles: cycles, trace });
            }
        };
        for (r, v) in writes {
            regs[r] = mask(v, d.registers[r].width);
        }
        if let Some((addr, width, v)) = pending_store {
            store(mem, addr, width, v, 0).map_err(RtlError::Fault)?;
        }
        state = match target {
            Target::State(t) => t,
            Target::Exit(_) => d.done(),
        };
        if let Some((b, 0)) = d.states[state].at {
            trace.push(b);
        }
    }
}

/// A synthesized region attached to a procedure, with run counters.
#[derive(Clone, Debug)]
pub struct HwRegion {
    pub proc: usize,
    pub synthesis: Synthesis,
    pub invocations: u64,
    pub hw_cycles: u64,
    /// Schedule lengths of the blocks entered plus the handshake, summed
    /// over invocations; equals `hw_cycles` for a correct simulator.
    pub traced_cycles: u64,
}

impl HwRegion {
    pub fn new(proc: usize, synthesis: Synthesis) -> Self {
        HwRegion { proc, synthesis, invocations: 0, hw_cycles: 0, traced_cycles: 0 }
    }
}

/// Runs hardware regions in place of their blocks whenever control enters
/// a region header from outside.
pub struct HardwareHook {
    pub regions: Vec<HwRegion>,
    pub max_cycles: u64,
}

impl HardwareHook {
    pub fn new(regions: Vec<HwRegion>) -> Self {
        HardwareHook { regions, max_cycles: 10_000_000 }
    }
}

impl RegionHook for HardwareHook {
    fn enter(
        &mut self,
        proc: usize,
        from: BlockId,
        to: BlockId,
        io: &mut HookIo<'_>,
    ) -> Option<Result<HookExit, String>> {
        let max_cycles = self.max_cycles;
        let r = self.regions.iter_mut().find(|r| {
            let i = &r.synthesis.interface;
            r.proc == proc && i.header == to.index() && !i.blocks.contains(&from.index()) && !i.blocks.is_empty()
        })?;
        let s = &r.synthesis;
        let hw = &s.hw;
        let header = &hw.blocks[to.index()];
        let Some(k) = header.preds.iter().position(|&p| p == from) else {
            return Some(Err(format!("{}: entered from a non-predecessor", s.name)));
        };
        let inputs: Vec<u32> = s.design.inputs.iter().map(|p| io.values[p.node.index()]).collect();
        let entries: Vec<u32> =
            s.design.entries.iter().map(|p| io.values[hw.node(p.node).operands[k].index()]).collect();
        let run = match simulate_rtl(&s.design, &inputs, &entries, io.mem, max_cycles) {
            Ok(run) => run,
            Err(e) => return Some(Err(format!("{}: {e}", s.name))),
        };
        for ((port, _), v) in s.design.outputs.iter().zip(&run.outputs) {
            io.values[port.node.index()] = *v;
        }
        r.invocations += 1;
        r.hw_cycles += run.hw_cycles;
        let sched = &s.schedule;
        r.traced_cycles +=
            HANDSHAKE_CYCLES + run.trace.iter().map(|&b| sched.block(b).map_or(0, |x| x.length as u64)).sum::<u64>();
        let Some(exit) = run.exit else {
            return Some(Err(format!("{}: finished without an exit", s.name)));
        };
        let (a, b) = s.interface.exits[exit];
        Some(Ok(HookExit { from: BlockId(a as u32), to: BlockId(b as u32), steps: run.hw_cycles }))
    }
}
