//! Binary parsing: machine instructions to a linear, register-symbolic IR.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::DecompileError;
use crate::ir::{eval_binary, MemWidth, OpKind};
use crate::isa::{Instruction, Mnemonic, ProgramImage, Reg, REG_RA, REG_V0, SYSCALL_EXIT, SYSCALL_PRINT, SYSCALL_READ};

/// A value slot of the linear IR: an architectural register or a
/// block-local temporary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Reg(Reg),
    Tmp(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Src {
    Slot(Slot),
    Imm(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinKind {
    /// A value operation. `Call` implicitly reads and redefines `$1..=$31`.
    Op(OpKind),
    /// Conditional transfer on `srcs[0] != 0`.
    Branch {
        target: u32,
    },
    Jump {
        target: u32,
    },
    Return,
    Halt,
    IndirectJump {
        reg: Reg,
    },
    UnresolvedSyscall,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrInst {
    pub origin: u32,
    pub kind: LinKind,
    pub dst: Option<Slot>,
    pub srcs: Vec<Src>,
}

impl IrInst {
    pub fn ends_block(&self) -> bool {
        !matches!(self.kind, LinKind::Op(k) if !matches!(k, OpKind::Call { .. }))
    }

    /// Registers read, with a call reading every register.
    pub fn reg_uses(&self) -> Vec<Reg> {
        match self.kind {
            LinKind::Op(OpKind::Call { .. }) | LinKind::Return => (1..32).collect(),
            _ => self
                .srcs
                .iter()
                .filter_map(|s| match s {
                    Src::Slot(Slot::Reg(r)) => Some(*r),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Registers written, with a call writing every register.
    pub fn reg_defs(&self) -> Vec<Reg> {
        match (&self.kind, self.dst) {
            (LinKind::Op(OpKind::Call { .. }), _) => (1..32).collect(),
            (_, Some(Slot::Reg(r))) => vec![r],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Reg(r) => write!(f, "r{r}"),
            Slot::Tmp(t) => write!(f, "t{t}"),
        }
    }
}

impl fmt::Display for IrInst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}: ", self.origin)?;
        if let Some(d) = self.dst {
            write!(f, "{d} = ")?;
        }
        match &self.kind {
            LinKind::Op(k) => write!(f, "{k}")?,
            LinKind::Branch { target } => write!(f, "branch_cond {target:#x}")?,
            LinKind::Jump { target } => write!(f, "jump {target:#x}")?,
            LinKind::Return => f.write_str("return")?,
            LinKind::Halt => f.write_str("halt")?,
            LinKind::IndirectJump { reg } => write!(f, "jr r{reg}")?,
            LinKind::UnresolvedSyscall => f.write_str("syscall ?")?,
        }
        for s in &self.srcs {
            match s {
                Src::Slot(x) => write!(f, " {x}")?,
                Src::Imm(v) => write!(f, " #{v:#x}")?,
            }
        }
        Ok(())
    }
}

fn decode_all(image: &ProgramImage) -> Result<Vec<Instruction>, DecompileError> {
    image
        .text_addresses()
        .zip(&image.text)
        .map(|(a, &w)| crate::isa::decode(w, a).map_err(DecompileError::Decode))
        .collect()
}

/// Static code of the syscall at index `i`: the nearest preceding write to
/// `$2` in the same block must be `addi`/`addiu`/`ori $2, $0, imm`, or a
/// syscall other than a read, whose code carries over.
fn syscall_code(insts: &[Instruction], i: usize, leaders: &BTreeSet<u32>) -> Option<u32> {
    let mut j = i;
    while j > 0 && !leaders.contains(&insts[j].address) {
        j -= 1;
        let inst = &insts[j];
        if inst.mnemonic == Mnemonic::Jal {
            return None;
        }
        if inst.mnemonic == Mnemonic::Syscall {
            // Only the read service changes `$2`.
            return syscall_code(insts, j, leaders).filter(|&c| c != SYSCALL_READ);
        }
        if inst.def_reg() == Some(REG_V0) {
            return match inst.mnemonic {
                Mnemonic::Addi | Mnemonic::Addiu if inst.rs == 0 => Some(inst.simm()),
                Mnemonic::Ori if inst.rs == 0 => Some(inst.uimm()),
                _ => None,
            };
        }
    }
    None
}

fn base_leaders(image: &ProgramImage, insts: &[Instruction]) -> Result<BTreeSet<u32>, DecompileError> {
    let mut leaders = BTreeSet::new();
    if !image.contains_text(image.entry) {
        return Err(DecompileError::BadTarget { address: image.entry, target: image.entry });
    }
    leaders.insert(image.entry);
    for inst in insts {
        let target = match inst.mnemonic {
            m if m.is_branch() => Some(inst.branch_target()),
            Mnemonic::J | Mnemonic::Jal => Some(inst.jump_target()),
            _ => None,
        };
        if let Some(t) = target {
            if !image.contains_text(t) {
                return Err(DecompileError::BadTarget { address: inst.address, target: t });
            }
            leaders.insert(t);
        }
        if inst.is_control_transfer() && image.contains_text(inst.address + 4) {
            leaders.insert(inst.address + 4);
        }
    }
    Ok(leaders)
}

/// Basic-block leaders: the entry point, branch and jump targets, and every
/// instruction following a control transfer or a halting syscall.
pub fn find_leaders(image: &ProgramImage) -> Result<BTreeSet<u32>, DecompileError> {
    let insts = decode_all(image)?;
    let mut leaders = base_leaders(image, &insts)?;
    let halts: Vec<u32> = insts
        .iter()
        .enumerate()
        .filter(|(i, inst)| {
            inst.mnemonic == Mnemonic::Syscall && syscall_code(&insts, *i, &leaders) == Some(SYSCALL_EXIT)
        })
        .map(|(_, inst)| inst.address + 4)
        .filter(|&a| image.contains_text(a))
        .collect();
    leaders.extend(halts);
    Ok(leaders)
}

struct Lowering {
    out: Vec<IrInst>,
    next_tmp: u32,
}

impl Lowering {
    fn src(r: Reg) -> Src {
        if r == 0 {
            Src::Imm(0)
        } else {
            Src::Slot(Slot::Reg(r))
        }
    }

    fn tmp(&mut self) -> Slot {
        self.next_tmp += 1;
        Slot::Tmp(self.next_tmp - 1)
    }

    fn emit(&mut self, origin: u32, kind: LinKind, dst: Option<Slot>, srcs: Vec<Src>) {
        self.out.push(IrInst { origin, kind, dst, srcs });
    }

    /// Emits a value op, folding all-immediate operands to a constant and
    /// dropping pure writes to `$0`.
    fn op(&mut self, origin: u32, kind: OpKind, dst: Slot, srcs: Vec<Src>) {
        if dst == Slot::Reg(0) && !kind.has_side_effect() {
            return;
        }
        if kind.is_binary() {
            if let [Src::Imm(a), Src::Imm(b)] = srcs[..] {
                return self.emit(origin, LinKind::Op(OpKind::Const(eval_binary(kind, a, b))), Some(dst), Vec::new());
            }
        }
        self.emit(origin, LinKind::Op(kind), Some(dst), srcs);
    }

    fn lower(&mut self, inst: &Instruction, code: Option<u32>) {
        use Mnemonic::*;
        let a = inst.address;
        let (rs, rt) = (Self::src(inst.rs), Self::src(inst.rt));
        let rd = Slot::Reg(inst.rd);
        let rt_dst = Slot::Reg(inst.rt);
        let sh = Src::Imm(inst.shamt as u32);
        match inst.mnemonic {
            Add | Addu => self.op(a, OpKind::Add, rd, vec![rs, rt]),
            Sub | Subu => self.op(a, OpKind::Sub, rd, vec![rs, rt]),
            And => self.op(a, OpKind::And, rd, vec![rs, rt]),
            Or => self.op(a, OpKind::Or, rd, vec![rs, rt]),
            Xor => self.op(a, OpKind::Xor, rd, vec![rs, rt]),
            Nor => self.op(a, OpKind::Nor, rd, vec![rs, rt]),
            Slt => self.op(a, OpKind::Slt, rd, vec![rs, rt]),
            Sltu => self.op(a, OpKind::Sltu, rd, vec![rs, rt]),
            Mul => self.op(a, OpKind::Mul, rd, vec![rs, rt]),
            Sll => self.op(a, OpKind::Shl, rd, vec![rt, sh]),
            Srl => self.op(a, OpKind::Lshr, rd, vec![rt, sh]),
            Sra => self.op(a, OpKind::Ashr, rd, vec![rt, sh]),
            Sllv => self.op(a, OpKind::Shl, rd, vec![rt, rs]),
            Srlv => self.op(a, OpKind::Lshr, rd, vec![rt, rs]),
            Srav => self.op(a, OpKind::Ashr, rd, vec![rt, rs]),
            Addi | Addiu => self.op(a, OpKind::Add, rt_dst, vec![rs, Src::Imm(inst.simm())]),
            Slti => self.op(a, OpKind::Slt, rt_dst, vec![rs, Src::Imm(inst.simm())]),
            Andi => self.op(a, OpKind::And, rt_dst, vec![rs, Src::Imm(inst.uimm())]),
            Ori => self.op(a, OpKind::Or, rt_dst, vec![rs, Src::Imm(inst.uimm())]),
            Xori => self.op(a, OpKind::Xor, rt_dst, vec![rs, Src::Imm(inst.uimm())]),
            Lui => self.op(a, OpKind::Const(inst.uimm() << 16), rt_dst, Vec::new()),
            Lw | Lb | Lbu => {
                let (width, signed) = match inst.mnemonic {
                    Lw => (MemWidth::Word, false),
                    Lb => (MemWidth::Byte, true),
                    _ => (MemWidth::Byte, false),
                };
                let kind = OpKind::Load { width, signed, offset: inst.imm as i32 };
                self.op(a, kind, rt_dst, vec![rs]);
            }
            Sw | Sb => {
                let width = if inst.mnemonic == Sw { MemWidth::Word } else { MemWidth::Byte };
                self.emit(a, LinKind::Op(OpKind::Store { width, offset: inst.imm as i32 }), None, vec![rs, rt]);
            }
            Beq | Bne | Blez | Bgtz => {
                let (kind, srcs) = match inst.mnemonic {
                    Beq => (OpKind::Eq, vec![rs, rt]),
                    Bne => (OpKind::Ne, vec![rs, rt]),
                    Blez => (OpKind::Slt, vec![rs, Src::Imm(1)]),
                    _ => (OpKind::Slt, vec![Src::Imm(0), rs]),
                };
                let t = self.tmp();
                self.op(a, kind, t, srcs);
                self.emit(a, LinKind::Branch { target: inst.branch_target() }, None, vec![Src::Slot(t)]);
            }
            J => self.emit(a, LinKind::Jump { target: inst.jump_target() }, None, Vec::new()),
            Jal => {
                self.op(a, OpKind::Const(a.wrapping_add(4)), Slot::Reg(REG_RA), Vec::new());
                self.emit(a, LinKind::Op(OpKind::Call { target: inst.jump_target() }), None, Vec::new());
            }
            Jr if inst.rs == REG_RA => self.emit(a, LinKind::Return, None, Vec::new()),
            Jr => self.emit(a, LinKind::IndirectJump { reg: inst.rs }, None, vec![rs]),
            Syscall => match code {
                Some(SYSCALL_PRINT) => self.emit(a, LinKind::Op(OpKind::Output), None, vec![Self::src(4)]),
                Some(SYSCALL_READ) => self.emit(a, LinKind::Op(OpKind::Input), Some(Slot::Reg(REG_V0)), Vec::new()),
                Some(SYSCALL_EXIT) => self.emit(a, LinKind::Halt, None, Vec::new()),
                _ => self.emit(a, LinKind::UnresolvedSyscall, None, Vec::new()),
            },
            Nop => {}
        }
    }
}

/// Lowers every text word to linear IR, in address order. Each instruction
/// yields at most two IR instructions (none for `nop` and pure writes to
/// `$0`); reads of `$0` become immediate zeros and all-immediate arithmetic
/// is folded.
pub fn parse_binary(image: &ProgramImage) -> Result<Vec<IrInst>, DecompileError> {
    let insts = decode_all(image)?;
    let leaders = find_leaders(image)?;
    let mut lw = Lowering { out: Vec::with_capacity(insts.len()), next_tmp: 0 };
    for (i, inst) in insts.iter().enumerate() {
        let code = (inst.mnemonic == Mnemonic::Syscall).then(|| syscall_code(&insts, i, &leaders)).flatten();
        lw.lower(inst, code);
    }
    Ok(lw.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    fn parse(src: &str) -> Vec<IrInst> {
        parse_binary(&assemble(src).unwrap()).unwrap()
    }

    #[test]
    fn addi_from_zero_is_a_constant() {
        let ir = parse("addi $2, $0, 5\n");
        assert_eq!(ir.len(), 1);
        assert_eq!(ir[0].kind, LinKind::Op(OpKind::Const(5)));
        assert_eq!(ir[0].dst, Some(Slot::Reg(2)));
    }

    #[test]
    fn beq_lowers_to_compare_and_branch() {
        let ir = parse("start: beq $1, $2, start\n");
        assert_eq!(ir.len(), 2);
        assert_eq!(ir[0].kind, LinKind::Op(OpKind::Eq));
        assert_eq!(ir[0].srcs, [Src::Slot(Slot::Reg(1)), Src::Slot(Slot::Reg(2))]);
        assert_eq!(ir[1].srcs, [Src::Slot(ir[0].dst.unwrap())]);
        assert!(matches!(ir[1].kind, LinKind::Branch { .. }));
    }

    #[test]
    fn syscalls_resolve_statically() {
        let ir = parse("addi $2, $0, 1\naddi $4, $0, 7\nsyscall\naddi $2, $0, 10\nsyscall\n");
        let kinds: Vec<&LinKind> = ir.iter().map(|i| &i.kind).collect();
        assert!(kinds.contains(&&LinKind::Op(OpKind::Output)));
        assert_eq!(ir.last().unwrap().kind, LinKind::Halt);
    }

    #[test]
    fn syscall_without_visible_code_is_unresolved() {
        let ir = parse("addi $2, $3, 1\nsyscall\n");
        assert_eq!(ir.last().unwrap().kind, LinKind::UnresolvedSyscall);
    }

    #[test]
    fn leaders_follow_transfers_and_halts() {
        let img = assemble(
            "main: addi $2, $0, 10\nsyscall\nloop: addi $3, $3, 1\nbne $3, $0, loop\naddi $2, $0, 10\nsyscall\n",
        )
        .unwrap();
        let l = find_leaders(&img).unwrap();
        let b = img.text_base;
        assert_eq!(l.into_iter().collect::<Vec<_>>(), [b, b + 8, b + 16]);
    }

    #[test]
    fn jr_other_than_ra_is_flagged() {
        let ir = parse("jr $8\n");
        assert_eq!(ir[0].kind, LinKind::IndirectJump { reg: 8 });
    }
}
