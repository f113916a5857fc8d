//! Reference interpreter for decompiled programs.
//!
//! Blocks execute one at a time; on each control edge the target's phis are
//! resolved together from the predecessor's values. Semantics match the
//! machine simulator for programs produced by the decompiler, which makes
//! this the oracle for every transformation stage.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::ir::{eval_binary, mask, BlockId, Cdfg, MemWidth, NodeId, OpKind, Program, Terminator};
use crate::mem::Memory;
use crate::sim::{initial_registers, ExecutionResult, ExitReason};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecOptions {
    pub max_steps: u64,
    /// Truncate every value to its node's annotated width.
    pub mask_widths: bool,
}

impl ExecOptions {
    pub fn new(max_steps: u64) -> Self {
        ExecOptions { max_steps, mask_widths: false }
    }
}

/// Mutable machine state visible to a [`RegionHook`].
pub struct HookIo<'a> {
    /// Values of the current procedure activation, indexed by node id.
    pub values: &'a mut [u32],
    pub mem: &'a mut Memory,
    pub inputs: &'a mut VecDeque<u32>,
    pub outputs: &'a mut Vec<u32>,
}

/// Where control leaves a region executed by a hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HookExit {
    /// Last block executed inside the region.
    pub from: BlockId,
    /// First block after the region.
    pub to: BlockId,
    /// Steps to charge against the step budget.
    pub steps: u64,
}

/// Intercepts control entering a block, e.g. to run it on simulated
/// hardware. Values produced inside the region must be written to
/// `io.values`.
pub trait RegionHook {
    fn enter(
        &mut self,
        proc: usize,
        from: BlockId,
        to: BlockId,
        io: &mut HookIo<'_>,
    ) -> Option<Result<HookExit, String>>;
}

struct NoHook;

impl RegionHook for NoHook {
    fn enter(&mut self, _: usize, _: BlockId, _: BlockId, _: &mut HookIo<'_>) -> Option<Result<HookExit, String>> {
        None
    }
}

struct Frame {
    proc: usize,
    values: Vec<u32>,
    env: [u32; 32],
    block: BlockId,
    /// Index into the block's op list of the next op to run.
    pos: usize,
}

impl Frame {
    fn new(program: &Program, proc: usize, env: [u32; 32]) -> Frame {
        let g = &program.procs[proc];
        Frame { proc, values: vec![0; g.nodes.len()], env, block: g.entry, pos: 0 }
    }
}

/// Runs `program` from its main procedure.
pub fn execute_program(program: &Program, inputs: &[u32], opts: ExecOptions) -> ExecutionResult {
    execute_with_hook(program, inputs, opts, &mut NoHook)
}

/// Runs a single procedure as a whole program over the given initial data.
pub fn execute_cdfg(cdfg: &Cdfg, inputs: &[u32], data_base: u32, data: &[u8], max_steps: u64) -> ExecutionResult {
    let program = Program { procs: vec![cdfg.clone()], main: 0, data_base, data: data.to_vec() };
    execute_program(&program, inputs, ExecOptions::new(max_steps))
}

pub fn execute_with_hook(
    program: &Program,
    inputs: &[u32],
    opts: ExecOptions,
    hook: &mut dyn RegionHook,
) -> ExecutionResult {
    let mut mem = Memory::with_bytes(program.data_base, &program.data);
    let mut inputs: VecDeque<u32> = inputs.iter().copied().collect();
    let mut outputs = Vec::new();
    let mut steps: u64 = 0;
    let mut stack: Vec<Frame> = vec![Frame::new(program, program.main, initial_registers())];

    let exit_reason = 'run: loop {
        let frame = stack.last_mut().unwrap();
        let g = &program.procs[frame.proc];
        let block = g.block(frame.block);
        while frame.pos < block.ops.len() {
            if steps >= opts.max_steps {
                break 'run ExitReason::MaxStepsExceeded;
            }
            let id = block.ops[frame.pos];
            frame.pos += 1;
            steps += 1;
            let node = g.node(id);
            if node.kind == OpKind::Phi {
                // Resolved on edge traversal.
                continue;
            }
            if let OpKind::Call { target } = node.kind {
                let Some(callee) = program.proc_by_entry(target) else {
                    break 'run ExitReason::Fault(format!("call to unknown procedure {target:#010x}"));
                };
                let mut env = [0u32; 32];
                for (i, &o) in node.operands.iter().enumerate() {
                    env[i + 1] = frame.values[o.index()];
                }
                stack.push(Frame::new(program, callee, env));
                continue 'run;
            }
            match eval(g, id, frame, &mut mem, &mut inputs, &mut outputs) {
                Ok(v) => {
                    frame.values[id.index()] = if opts.mask_widths { mask(v, node.width) } else { v };
                }
                Err(e) => break 'run ExitReason::Fault(e),
            }
        }
        if steps >= opts.max_steps {
            break 'run ExitReason::MaxStepsExceeded;
        }
        steps += 1;
        let mut next = match &block.term {
            Terminator::Jump(t) => *t,
            Terminator::Branch { cond, taken, fallthrough } => {
                if frame.values[cond.index()] != 0 {
                    *taken
                } else {
                    *fallthrough
                }
            }
            Terminator::Halt => break 'run ExitReason::Halted,
            Terminator::Return { values } => {
                let ret: Vec<u32> = values.iter().map(|v| frame.values[v.index()]).collect();
                stack.pop();
                let Some(caller) = stack.last_mut() else {
                    break 'run ExitReason::Fault(String::from("return from the entry procedure"));
                };
                caller.env[1..].copy_from_slice(&ret);
                continue 'run;
            }
        };
        let mut from = frame.block;
        loop {
            let mut io =
                HookIo { values: &mut frame.values, mem: &mut mem, inputs: &mut inputs, outputs: &mut outputs };
            match hook.enter(frame.proc, from, next, &mut io) {
                None => break,
                Some(Ok(exit)) => {
                    steps += exit.steps;
                    from = exit.from;
                    next = exit.to;
                }
                Some(Err(e)) => break 'run ExitReason::Fault(e),
            }
        }
        enter_block(g, frame, from, next, opts);
    };
    ExecutionResult { outputs, total_cycles: steps, steps, exit_reason }
}

fn enter_block(g: &Cdfg, frame: &mut Frame, from: BlockId, to: BlockId, opts: ExecOptions) {
    let target = g.block(to);
    if let Some(k) = target.preds.iter().position(|&p| p == from) {
        let updates: Vec<(NodeId, u32)> = target
            .ops
            .iter()
            .take_while(|&&n| g.node(n).kind == OpKind::Phi)
            .map(|&n| {
                let node = g.node(n);
                let v = frame.values[node.operands[k].index()];
                (n, if opts.mask_widths { mask(v, node.width) } else { v })
            })
            .collect();
        for (n, v) in updates {
            frame.values[n.index()] = v;
        }
    }
    frame.block = to;
    frame.pos = 0;
}

fn eval(
    g: &Cdfg,
    id: NodeId,
    frame: &Frame,
    mem: &mut Memory,
    inputs: &mut VecDeque<u32>,
    outputs: &mut Vec<u32>,
) -> Result<u32, String> {
    let node = g.node(id);
    let arg = |i: usize| frame.values[node.operands[i].index()];
    Ok(match node.kind {
        OpKind::Const(v) => v,
        OpKind::Copy => arg(0),
        OpKind::Env(r) => frame.env[r as usize],
        k if k.is_binary() => eval_binary(k, arg(0), arg(1)),
        OpKind::Load { width, signed, offset } => {
            let addr = arg(0).wrapping_add(offset as u32);
            load(mem, addr, width, signed, node.origin)?
        }
        OpKind::Store { width, offset } => {
            let addr = arg(0).wrapping_add(offset as u32);
            store(mem, addr, width, arg(1), node.origin)?;
            0
        }
        OpKind::Input => inputs.pop_front().ok_or_else(|| format!("input exhausted at {:#010x}", node.origin))?,
        OpKind::Output => {
            outputs.push(arg(0));
            0
        }
        k => return Err(format!("cannot evaluate {k}")),
    })
}

pub fn load(mem: &Memory, addr: u32, width: MemWidth, signed: bool, pc: u32) -> Result<u32, String> {
    Ok(match width {
        MemWidth::Word => {
            if !addr.is_multiple_of(4) {
                return Err(format!("unaligned access to {addr:#010x} at {pc:#010x}"));
            }
            mem.read_u32(addr)
        }
        MemWidth::Byte if signed => mem.read_u8(addr) as i8 as i32 as u32,
        MemWidth::Byte => mem.read_u8(addr) as u32,
    })
}

pub fn store(mem: &mut Memory, addr: u32, width: MemWidth, value: u32, pc: u32) -> Result<(), String> {
    match width {
        MemWidth::Word => {
            if !addr.is_multiple_of(4) {
                return Err(format!("unaligned access to {addr:#010x} at {pc:#010x}"));
            }
            mem.write_u32(addr, value);
        }
        MemWidth::Byte => mem.write_u8(addr, value as u8),
    }
    Ok(())
}
