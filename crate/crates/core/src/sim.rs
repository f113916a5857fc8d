//! Reference interpreter and profiler for program images.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::decompile::find_leaders;
use crate::isa::{
    decode, Instruction, IsaError, Mnemonic, ProgramImage, REG_SP, SYSCALL_EXIT, SYSCALL_PRINT, SYSCALL_READ,
};
use crate::mem::Memory;

/// Initial stack pointer for every execution.
pub const STACK_TOP: u32 = 0x7fff_f000;

/// Cycles charged per executed instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostTable {
    pub default: u64,
    pub mul: u64,
    pub memory: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable { default: 1, mul: 3, memory: 2 }
    }
}

impl CostTable {
    pub fn cost(&self, m: Mnemonic) -> u64 {
        match m {
            Mnemonic::Mul => self.mul,
            Mnemonic::Lw | Mnemonic::Sw | Mnemonic::Lb | Mnemonic::Lbu | Mnemonic::Sb => self.memory,
            _ => self.default,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MachineState {
    pub regs: [u32; 32],
    pub pc: u32,
    pub mem: Memory,
    pub halted: bool,
    pub output_log: Vec<u32>,
    pub input_queue: VecDeque<u32>,
}

/// Register file at program start: all zero except the stack pointer.
pub fn initial_registers() -> [u32; 32] {
    let mut regs = [0; 32];
    regs[REG_SP as usize] = STACK_TOP;
    regs
}

impl MachineState {
    pub fn new(image: &ProgramImage, inputs: &[u32]) -> Self {
        MachineState {
            regs: initial_registers(),
            pc: image.entry,
            mem: Memory::with_bytes(image.data_base, &image.data),
            halted: false,
            output_log: Vec::new(),
            input_queue: inputs.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimError {
    UnalignedAccess { addr: u32, pc: u32 },
    PcOutOfRange(u32),
    InputExhausted(u32),
    UnknownSyscall { code: u32, pc: u32 },
    Decode(IsaError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::UnalignedAccess { addr, pc } => write!(f, "unaligned access to {addr:#010x} at {pc:#010x}"),
            SimError::PcOutOfRange(pc) => write!(f, "pc {pc:#010x} outside text"),
            SimError::InputExhausted(pc) => write!(f, "input exhausted at {pc:#010x}"),
            SimError::UnknownSyscall { code, pc } => write!(f, "unknown syscall {code} at {pc:#010x}"),
            SimError::Decode(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SimError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitReason {
    Halted,
    MaxStepsExceeded,
    Fault(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionResult {
    pub outputs: Vec<u32>,
    pub total_cycles: u64,
    pub steps: u64,
    pub exit_reason: ExitReason,
}

/// Execution counts gathered by [`profile_run`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Profile {
    pub block_counts: BTreeMap<u32, u64>,
    pub edge_counts: BTreeMap<(u32, u32), u64>,
    pub instr_cycles: BTreeMap<u32, u64>,
    pub total_cycles: u64,
}

impl Profile {
    /// Cycles spent in the instructions at `addrs`.
    pub fn cycles_of<'a>(&self, addrs: impl IntoIterator<Item = &'a u32>) -> u64 {
        addrs.into_iter().filter_map(|a| self.instr_cycles.get(a)).sum()
    }

    /// Blocks whose inflow differs from their execution count, excluding
    /// `entry` (which is entered once without an edge).
    pub fn flow_violations(&self, entry: u32) -> Vec<u32> {
        let mut inflow: BTreeMap<u32, u64> = BTreeMap::new();
        for (&(_, to), &n) in &self.edge_counts {
            *inflow.entry(to).or_default() += n;
        }
        self.block_counts
            .iter()
            .filter(|(&b, &count)| {
                let inn = inflow.get(&b).copied().unwrap_or(0);
                if b == entry {
                    inn + 1 != count
                } else {
                    inn != count
                }
            })
            .map(|(&b, _)| b)
            .collect()
    }
}

fn exec(inst: &Instruction, state: &mut MachineState) -> Result<(), SimError> {
    use Mnemonic::*;
    let pc = state.pc;
    let rs = state.regs[inst.rs as usize];
    let rt = state.regs[inst.rt as usize];
    let mut next = pc.wrapping_add(4);
    let write = |state: &mut MachineState, r: u8, v: u32| {
        if r != 0 {
            state.regs[r as usize] = v;
        }
    };
    let addr = rs.wrapping_add(inst.simm());
    let check_word = |addr: u32| {
        if !addr.is_multiple_of(4) {
            Err(SimError::UnalignedAccess { addr, pc })
        } else {
            Ok(())
        }
    };
    match inst.mnemonic {
        Add | Addu => write(state, inst.rd, rs.wrapping_add(rt)),
        Sub | Subu => write(state, inst.rd, rs.wrapping_sub(rt)),
        And => write(state, inst.rd, rs & rt),
        Or => write(state, inst.rd, rs | rt),
        Xor => write(state, inst.rd, rs ^ rt),
        Nor => write(state, inst.rd, !(rs | rt)),
        Slt => write(state, inst.rd, ((rs as i32) < (rt as i32)) as u32),
        Sltu => write(state, inst.rd, (rs < rt) as u32),
        Sll => write(state, inst.rd, rt << inst.shamt),
        Srl => write(state, inst.rd, rt >> inst.shamt),
        Sra => write(state, inst.rd, ((rt as i32) >> inst.shamt) as u32),
        Sllv => write(state, inst.rd, rt << (rs & 31)),
        Srlv => write(state, inst.rd, rt >> (rs & 31)),
        Srav => write(state, inst.rd, ((rt as i32) >> (rs & 31)) as u32),
        Mul => write(state, inst.rd, rs.wrapping_mul(rt)),
        Addi | Addiu => write(state, inst.rt, rs.wrapping_add(inst.simm())),
        Slti => write(state, inst.rt, ((rs as i32) < (inst.simm() as i32)) as u32),
        Andi => write(state, inst.rt, rs & inst.uimm()),
        Ori => write(state, inst.rt, rs | inst.uimm()),
        Xori => write(state, inst.rt, rs ^ inst.uimm()),
        Lui => write(state, inst.rt, inst.uimm() << 16),
        Lw => {
            check_word(addr)?;
            let v = state.mem.read_u32(addr);
            write(state, inst.rt, v);
        }
        Lb => {
            let v = state.mem.read_u8(addr) as i8 as i32 as u32;
            write(state, inst.rt, v);
        }
        Lbu => {
            let v = state.mem.read_u8(addr) as u32;
            write(state, inst.rt, v);
        }
        Sw => {
            check_word(addr)?;
            state.mem.write_u32(addr, rt);
        }
        Sb => state.mem.write_u8(addr, rt as u8),
        Beq | Bne | Blez | Bgtz => {
            let taken = match inst.mnemonic {
                Beq => rs == rt,
                Bne => rs != rt,
                Blez => (rs as i32) <= 0,
                _ => (rs as i32) > 0,
            };
            if taken {
                next = inst.branch_target();
            }
        }
        J => next = inst.jump_target(),
        Jal => {
            write(state, 31, next);
            next = inst.jump_target();
        }
        Jr => next = rs,
        Syscall => match state.regs[2] {
            SYSCALL_PRINT => state.output_log.push(state.regs[4]),
            SYSCALL_READ => {
                let v = state.input_queue.pop_front().ok_or(SimError::InputExhausted(pc))?;
                write(state, 2, v);
            }
            SYSCALL_EXIT => state.halted = true,
            code => return Err(SimError::UnknownSyscall { code, pc }),
        },
        Nop => {}
    }
    state.pc = next;
    Ok(())
}

/// Executes one instruction in place.
pub fn step(state: &mut MachineState, image: &ProgramImage) -> Result<(), SimError> {
    let word = image.word_at(state.pc).ok_or(SimError::PcOutOfRange(state.pc))?;
    let inst = decode(word, state.pc).map_err(SimError::Decode)?;
    exec(&inst, state)
}

struct Decoded {
    base: u32,
    insts: Vec<Result<Instruction, IsaError>>,
}

impl Decoded {
    fn new(image: &ProgramImage) -> Self {
        Decoded {
            base: image.text_base,
            insts: image.text_addresses().zip(&image.text).map(|(a, &w)| decode(w, a)).collect(),
        }
    }

    fn get(&self, pc: u32) -> Result<&Instruction, SimError> {
        if !pc.is_multiple_of(4) || pc < self.base {
            return Err(SimError::PcOutOfRange(pc));
        }
        match self.insts.get(((pc - self.base) / 4) as usize) {
            Some(Ok(i)) => Ok(i),
            Some(Err(e)) => Err(SimError::Decode(e.clone())),
            None => Err(SimError::PcOutOfRange(pc)),
        }
    }
}

fn drive(
    image: &ProgramImage,
    inputs: &[u32],
    max_steps: u64,
    costs: &CostTable,
    mut observe: impl FnMut(u32, u64),
) -> ExecutionResult {
    let decoded = Decoded::new(image);
    let mut state = MachineState::new(image, inputs);
    let mut steps = 0;
    let mut cycles = 0;
    let exit_reason = loop {
        if state.halted {
            break ExitReason::Halted;
        }
        if steps >= max_steps {
            break ExitReason::MaxStepsExceeded;
        }
        let pc = state.pc;
        let inst = match decoded.get(pc) {
            Ok(i) => i,
            Err(e) => break ExitReason::Fault(e.to_string()),
        };
        if let Err(e) = exec(inst, &mut state) {
            break ExitReason::Fault(e.to_string());
        }
        let c = costs.cost(inst.mnemonic);
        observe(pc, c);
        steps += 1;
        cycles += c;
    };
    ExecutionResult { outputs: state.output_log, total_cycles: cycles, steps, exit_reason }
}

/// Runs from the entry point with the default cost table.
pub fn run(image: &ProgramImage, inputs: &[u32], max_steps: u64) -> ExecutionResult {
    run_with_costs(image, inputs, max_steps, &CostTable::default())
}

pub fn run_with_costs(image: &ProgramImage, inputs: &[u32], max_steps: u64, costs: &CostTable) -> ExecutionResult {
    drive(image, inputs, max_steps, costs, |_, _| {})
}

/// Runs like [`run`] while recording block, edge and cycle counts. Block
/// boundaries are the decompiler's leaders.
pub fn profile_run(
    image: &ProgramImage,
    inputs: &[u32],
    max_steps: u64,
    costs: &CostTable,
) -> (ExecutionResult, Profile) {
    let leaders: BTreeSet<u32> = find_leaders(image).unwrap_or_else(|_| image.text_addresses().collect());
    let mut profile = Profile::default();
    let mut current: Option<u32> = None;
    let result = drive(image, inputs, max_steps, costs, |pc, c| {
        if leaders.contains(&pc) || current.is_none() {
            *profile.block_counts.entry(pc).or_default() += 1;
            if let Some(prev) = current {
                *profile.edge_counts.entry((prev, pc)).or_default() += 1;
            }
            current = Some(pc);
        }
        *profile.instr_cycles.entry(pc).or_default() += c;
        profile.total_cycles += c;
    });
    (result, profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;
    use alloc::vec;

    const PRINT7: &str = "addi $4, $0, 7\naddi $2, $0, 1\nsyscall\naddi $2, $0, 10\nsyscall\n";

    #[test]
    fn step_addi() {
        let img = assemble("addi $2, $0, 5\n").unwrap();
        let mut st = MachineState::new(&img, &[]);
        step(&mut st, &img).unwrap();
        assert_eq!(st.regs[2], 5);
        assert_eq!(st.pc, img.entry + 4);
    }

    #[test]
    fn store_then_load_round_trips() {
        let img =
            assemble("lui $8, 0x1000\naddi $9, $0, -77\nsw $9, 8($8)\nlw $10, 8($8)\nlb $11, 8($8)\nlbu $12, 8($8)\n")
                .unwrap();
        let mut st = MachineState::new(&img, &[]);
        for _ in 0..6 {
            step(&mut st, &img).unwrap();
        }
        assert_eq!(st.regs[10], (-77i32) as u32);
        assert_eq!(st.regs[11], (-77i32) as u32);
        assert_eq!(st.regs[12], 0xb3);
    }

    #[test]
    fn addu_wraps() {
        let img = assemble("lui $8, 0x7fff\nori $8, $8, 0xffff\naddi $9, $0, 1\naddu $10, $8, $9\n").unwrap();
        let mut st = MachineState::new(&img, &[]);
        for _ in 0..4 {
            step(&mut st, &img).unwrap();
        }
        assert_eq!(st.regs[10], 0x8000_0000);
    }

    #[test]
    fn register_zero_ignores_writes() {
        let img = assemble("addi $0, $0, 9\n").unwrap();
        let mut st = MachineState::new(&img, &[]);
        step(&mut st, &img).unwrap();
        assert_eq!(st.regs[0], 0);
    }

    #[test]
    fn faults() {
        let img = assemble("addi $8, $0, 2\nlw $9, 0($8)\n").unwrap();
        let mut st = MachineState::new(&img, &[]);
        step(&mut st, &img).unwrap();
        assert!(matches!(step(&mut st, &img), Err(SimError::UnalignedAccess { addr: 2, .. })));
        let img = assemble("addi $2, $0, 5\nsyscall\n").unwrap();
        let r = run(&img, &[], 100);
        assert!(matches!(r.exit_reason, ExitReason::Fault(_)));
    }

    #[test]
    fn run_print_constant() {
        let img = assemble(PRINT7).unwrap();
        let r = run(&img, &[], 100);
        assert_eq!(r.outputs, vec![7]);
        assert_eq!(r.exit_reason, ExitReason::Halted);
        assert_eq!(r.steps, 5);
    }

    #[test]
    fn infinite_loop_hits_step_limit() {
        let img = assemble("top: j top\n").unwrap();
        let r = run(&img, &[], 1000);
        assert_eq!(r.exit_reason, ExitReason::MaxStepsExceeded);
        assert_eq!(r.steps, 1000);
    }

    #[test]
    fn straight_line_profile() {
        let img =
            assemble("addi $8, $0, 3\nmul $9, $8, $8\nlui $10, 0x1000\nsw $9, 0($10)\naddi $2, $0, 10\nsyscall\n")
                .unwrap();
        let (r, p) = profile_run(&img, &[], 100, &CostTable::default());
        assert_eq!(r, run(&img, &[], 100));
        assert_eq!(p.block_counts.len(), 1);
        assert_eq!(p.block_counts[&img.entry], 1);
        // 1 + 3 + 1 + 2 + 1 + 1
        assert_eq!(p.total_cycles, 9);
        assert_eq!(p.total_cycles, p.instr_cycles.values().sum::<u64>());
    }

    #[test]
    fn bottom_tested_loop_profile() {
        // The body block tests its exit at the bottom: 10 executions, the
        // self edge is taken after each of the first 9.
        let src = "\
main: addi $8, $0, 0
      addi $9, $0, 10
body: addi $8, $8, 1
      bne $8, $9, body
      addi $2, $0, 10
      syscall
";
        let img = assemble(src).unwrap();
        let (_, p) = profile_run(&img, &[], 1000, &CostTable::default());
        let body = img.symbols["body"];
        assert_eq!(p.block_counts[&body], 10);
        assert_eq!(p.edge_counts[&(body, body)], 9);
        assert_eq!(p.edge_counts[&(img.entry, body)], 1);
        assert!(p.flow_violations(img.entry).is_empty());
    }
}
