//! MIPS-I subset: instruction model and bit-exact encoding.
//!
//! Standard MIPS-I encodings, no branch delay slots, `$0` hardwired to zero.
//! `MUL` uses the MIPS32 SPECIAL2 encoding and writes a general register
//! directly (no HI/LO pair).

mod asm;
mod image;

use core::fmt;

pub use asm::{assemble, AsmError};
pub use image::{load_image, save_image, ImageError, ProgramImage, CONTAINER_MAGIC, CONTAINER_VERSION};

/// Register index in `[0, 31]`.
pub type Reg = u8;

pub const REG_ZERO: Reg = 0;
pub const REG_V0: Reg = 2;
pub const REG_A0: Reg = 4;
pub const REG_SP: Reg = 29;
pub const REG_RA: Reg = 31;

/// Syscall codes held in `$2`.
pub const SYSCALL_PRINT: u32 = 1;
pub const SYSCALL_READ: u32 = 5;
pub const SYSCALL_EXIT: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mnemonic {
    Add,
    Addu,
    Sub,
    Subu,
    And,
    Or,
    Xor,
    Nor,
    Slt,
    Sltu,
    Sll,
    Srl,
    Sra,
    Sllv,
    Srlv,
    Srav,
    Mul,
    Addi,
    Addiu,
    Slti,
    Andi,
    Ori,
    Xori,
    Lui,
    Lw,
    Sw,
    Lb,
    Lbu,
    Sb,
    Beq,
    Bne,
    Blez,
    Bgtz,
    J,
    Jal,
    Jr,
    Syscall,
    Nop,
}

/// Operand layout of a mnemonic; drives encoding, decoding and the assembler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `op rd, rs, rt`
    RegRegReg,
    /// `op rd, rt, shamt`
    Shift,
    /// `op rd, rt, rs`
    ShiftVar,
    /// `op rt, rs, imm`
    RegRegImm,
    /// `op rt, imm`
    Lui,
    /// `op rt, imm(rs)`
    Mem,
    /// `op rs, rt, label`
    Branch2,
    /// `op rs, label`
    Branch1,
    /// `op label`
    Jump,
    /// `op rs`
    JumpReg,
    /// no operands
    None,
}

impl Mnemonic {
    pub const ALL: [Mnemonic; 38] = [
        Mnemonic::Add,
        Mnemonic::Addu,
        Mnemonic::Sub,
        Mnemonic::Subu,
        Mnemonic::And,
        Mnemonic::Or,
        Mnemonic::Xor,
        Mnemonic::Nor,
        Mnemonic::Slt,
        Mnemonic::Sltu,
        Mnemonic::Sll,
        Mnemonic::Srl,
        Mnemonic::Sra,
        Mnemonic::Sllv,
        Mnemonic::Srlv,
        Mnemonic::Srav,
        Mnemonic::Mul,
        Mnemonic::Addi,
        Mnemonic::Addiu,
        Mnemonic::Slti,
        Mnemonic::Andi,
        Mnemonic::Ori,
        Mnemonic::Xori,
        Mnemonic::Lui,
        Mnemonic::Lw,
        Mnemonic::Sw,
        Mnemonic::Lb,
        Mnemonic::Lbu,
        Mnemonic::Sb,
        Mnemonic::Beq,
        Mnemonic::Bne,
        Mnemonic::Blez,
        Mnemonic::Bgtz,
        Mnemonic::J,
        Mnemonic::Jal,
        Mnemonic::Jr,
        Mnemonic::Syscall,
        Mnemonic::Nop,
    ];

    pub fn name(self) -> &'static str {
        use Mnemonic::*;
        match self {
            Add => "add",
            Addu => "addu",
            Sub => "sub",
            Subu => "subu",
            And => "and",
            Or => "or",
            Xor => "xor",
            Nor => "nor",
            Slt => "slt",
            Sltu => "sltu",
            Sll => "sll",
            Srl => "srl",
            Sra => "sra",
            Sllv => "sllv",
            Srlv => "srlv",
            Srav => "srav",
            Mul => "mul",
            Addi => "addi",
            Addiu => "addiu",
            Slti => "slti",
            Andi => "andi",
            Ori => "ori",
            Xori => "xori",
            Lui => "lui",
            Lw => "lw",
            Sw => "sw",
            Lb => "lb",
            Lbu => "lbu",
            Sb => "sb",
            Beq => "beq",
            Bne => "bne",
            Blez => "blez",
            Bgtz => "bgtz",
            J => "j",
            Jal => "jal",
            Jr => "jr",
            Syscall => "syscall",
            Nop => "nop",
        }
    }

    pub fn from_name(name: &str) -> Option<Mnemonic> {
        Mnemonic::ALL.iter().copied().find(|m| m.name() == name)
    }

    pub fn format(self) -> Format {
        use Mnemonic::*;
        match self {
            Add | Addu | Sub | Subu | And | Or | Xor | Nor | Slt | Sltu | Mul => Format::RegRegReg,
            Sll | Srl | Sra => Format::Shift,
            Sllv | Srlv | Srav => Format::ShiftVar,
            Addi | Addiu | Slti | Andi | Ori | Xori => Format::RegRegImm,
            Lui => Format::Lui,
            Lw | Sw | Lb | Lbu | Sb => Format::Mem,
            Beq | Bne => Format::Branch2,
            Blez | Bgtz => Format::Branch1,
            J | Jal => Format::Jump,
            Jr => Format::JumpReg,
            Syscall | Nop => Format::None,
        }
    }

    /// `funct` field for SPECIAL (opcode 0) instructions.
    fn special_funct(self) -> Option<u32> {
        use Mnemonic::*;
        Some(match self {
            Sll => 0x00,
            Srl => 0x02,
            Sra => 0x03,
            Sllv => 0x04,
            Srlv => 0x06,
            Srav => 0x07,
            Jr => 0x08,
            Syscall => 0x0c,
            Add => 0x20,
            Addu => 0x21,
            Sub => 0x22,
            Subu => 0x23,
            And => 0x24,
            Or => 0x25,
            Xor => 0x26,
            Nor => 0x27,
            Slt => 0x2a,
            Sltu => 0x2b,
            _ => return None,
        })
    }

    fn primary_opcode(self) -> Option<u32> {
        use Mnemonic::*;
        Some(match self {
            J => 0x02,
            Jal => 0x03,
            Beq => 0x04,
            Bne => 0x05,
            Blez => 0x06,
            Bgtz => 0x07,
            Addi => 0x08,
            Addiu => 0x09,
            Slti => 0x0a,
            Andi => 0x0c,
            Ori => 0x0d,
            Xori => 0x0e,
            Lui => 0x0f,
            Lb => 0x20,
            Lw => 0x23,
            Lbu => 0x24,
            Sb => 0x28,
            Sw => 0x2b,
            _ => return None,
        })
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Mnemonic::Beq | Mnemonic::Bne | Mnemonic::Blez | Mnemonic::Bgtz)
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A decoded instruction. Fields not meaningful for the mnemonic are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    pub rd: Reg,
    pub rs: Reg,
    pub rt: Reg,
    pub imm: i16,
    pub shamt: u8,
    /// 26-bit word index for `J`/`JAL`.
    pub target: u32,
    pub address: u32,
}

impl Instruction {
    pub fn new(mnemonic: Mnemonic) -> Self {
        Instruction { mnemonic, rd: 0, rs: 0, rt: 0, imm: 0, shamt: 0, target: 0, address: 0 }
    }

    pub fn nop() -> Self {
        Instruction::new(Mnemonic::Nop)
    }

    pub fn rrr(mnemonic: Mnemonic, rd: Reg, rs: Reg, rt: Reg) -> Self {
        Instruction { rd, rs, rt, ..Instruction::new(mnemonic) }
    }

    pub fn rri(mnemonic: Mnemonic, rt: Reg, rs: Reg, imm: i16) -> Self {
        Instruction { rt, rs, imm, ..Instruction::new(mnemonic) }
    }

    pub fn shift(mnemonic: Mnemonic, rd: Reg, rt: Reg, shamt: u8) -> Self {
        Instruction { rd, rt, shamt, ..Instruction::new(mnemonic) }
    }

    pub fn at(mut self, address: u32) -> Self {
        self.address = address;
        self
    }

    /// Immediate zero-extended (logical immediates).
    pub fn uimm(&self) -> u32 {
        self.imm as u16 as u32
    }

    /// Immediate sign-extended.
    pub fn simm(&self) -> u32 {
        self.imm as i32 as u32
    }

    /// Branch target of a conditional branch.
    pub fn branch_target(&self) -> u32 {
        self.address.wrapping_add(4).wrapping_add((self.imm as i32 as u32) << 2)
    }

    /// Absolute target of `J`/`JAL`.
    pub fn jump_target(&self) -> u32 {
        (self.address.wrapping_add(4) & 0xf000_0000) | (self.target << 2)
    }

    /// True for instructions that end a basic block (`SYSCALL` is decided by
    /// the caller since only the exit call transfers control).
    pub fn is_control_transfer(&self) -> bool {
        self.mnemonic.is_branch() || matches!(self.mnemonic, Mnemonic::J | Mnemonic::Jal | Mnemonic::Jr)
    }

    /// Registers written by the instruction (`$0` excluded).
    pub fn def_reg(&self) -> Option<Reg> {
        let r = match self.mnemonic.format() {
            Format::RegRegReg | Format::Shift | Format::ShiftVar => self.rd,
            Format::RegRegImm | Format::Lui => self.rt,
            Format::Mem => match self.mnemonic {
                Mnemonic::Lw | Mnemonic::Lb | Mnemonic::Lbu => self.rt,
                _ => return None,
            },
            Format::Jump if self.mnemonic == Mnemonic::Jal => REG_RA,
            _ => return None,
        };
        (r != 0).then_some(r)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic;
        match m.format() {
            Format::RegRegReg => write!(f, "{m} ${}, ${}, ${}", self.rd, self.rs, self.rt),
            Format::Shift => write!(f, "{m} ${}, ${}, {}", self.rd, self.rt, self.shamt),
            Format::ShiftVar => write!(f, "{m} ${}, ${}, ${}", self.rd, self.rt, self.rs),
            Format::RegRegImm => write!(f, "{m} ${}, ${}, {}", self.rt, self.rs, self.imm),
            Format::Lui => write!(f, "{m} ${}, {}", self.rt, self.uimm()),
            Format::Mem => write!(f, "{m} ${}, {}(${})", self.rt, self.imm, self.rs),
            Format::Branch2 => write!(f, "{m} ${}, ${}, {:#x}", self.rs, self.rt, self.branch_target()),
            Format::Branch1 => write!(f, "{m} ${}, {:#x}", self.rs, self.branch_target()),
            Format::Jump => write!(f, "{m} {:#x}", self.jump_target()),
            Format::JumpReg => write!(f, "{m} ${}", self.rs),
            Format::None => write!(f, "{m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IsaError {
    UnknownOpcode { word: u32, address: u32 },
    FieldOutOfRange { mnemonic: Mnemonic, field: &'static str },
}

impl fmt::Display for IsaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IsaError::UnknownOpcode { word, address } => {
                write!(f, "unknown opcode {word:#010x} at {address:#010x}")
            }
            IsaError::FieldOutOfRange { mnemonic, field } => {
                write!(f, "field `{field}` out of range for {mnemonic}")
            }
        }
    }
}

impl core::error::Error for IsaError {}

fn field(word: u32, shift: u32, bits: u32) -> u32 {
    (word >> shift) & ((1 << bits) - 1)
}

/// Decodes one word at `address`.
pub fn decode(word: u32, address: u32) -> Result<Instruction, IsaError> {
    use Mnemonic::*;
    let unknown = || IsaError::UnknownOpcode { word, address };
    if word == 0 {
        return Ok(Instruction::nop().at(address));
    }
    let op = field(word, 26, 6);
    let rs = field(word, 21, 5) as Reg;
    let rt = field(word, 16, 5) as Reg;
    let rd = field(word, 11, 5) as Reg;
    let shamt = field(word, 6, 5) as u8;
    let funct = field(word, 0, 6);
    let imm = word as u16 as i16;

    let inst = match op {
        0x00 => {
            let m = Mnemonic::ALL.iter().copied().find(|m| m.special_funct() == Some(funct)).ok_or_else(unknown)?;

            match m.format() {
                Format::RegRegReg if shamt == 0 => Instruction::rrr(m, rd, rs, rt),
                Format::Shift if rs == 0 => Instruction::shift(m, rd, rt, shamt),
                Format::ShiftVar if shamt == 0 => Instruction { rd, rt, rs, ..Instruction::new(m) },
                Format::JumpReg if rt == 0 && rd == 0 && shamt == 0 => Instruction { rs, ..Instruction::new(m) },
                Format::None if word >> 6 == 0 => Instruction::new(m),
                _ => return Err(unknown()),
            }
        }
        0x1c => {
            if funct != 0x02 || shamt != 0 {
                return Err(unknown());
            }
            Instruction::rrr(Mul, rd, rs, rt)
        }
        0x02 | 0x03 => {
            let m = if op == 0x02 { J } else { Jal };
            Instruction { target: field(word, 0, 26), ..Instruction::new(m) }
        }
        _ => {
            let m = Mnemonic::ALL.iter().copied().find(|m| m.primary_opcode() == Some(op)).ok_or_else(unknown)?;
            match m.format() {
                Format::Branch1 if rt != 0 => return Err(unknown()),
                Format::Lui if rs != 0 => return Err(unknown()),
                Format::Branch1 | Format::Lui => Instruction { rs, imm, ..Instruction::new(m) }.with_rt(rt),
                _ => Instruction { rs, rt, imm, ..Instruction::new(m) },
            }
        }
    };
    Ok(inst.at(address))
}

impl Instruction {
    fn with_rt(mut self, rt: Reg) -> Self {
        self.rt = rt;
        self
    }
}

/// Encodes an instruction; the exact inverse of [`decode`].
pub fn encode(inst: &Instruction) -> Result<u32, IsaError> {
    use Mnemonic::*;
    let m = inst.mnemonic;
    let out_of_range = |field| IsaError::FieldOutOfRange { mnemonic: m, field };
    for (name, r) in [("rd", inst.rd), ("rs", inst.rs), ("rt", inst.rt)] {
        if r > 31 {
            return Err(out_of_range(name));
        }
    }
    if inst.shamt > 31 {
        return Err(out_of_range("shamt"));
    }
    if inst.target >= 1 << 26 {
        return Err(out_of_range("target"));
    }
    let (rs, rt, rd, sh) = (inst.rs as u32, inst.rt as u32, inst.rd as u32, inst.shamt as u32);
    let imm = inst.imm as u16 as u32;
    let word = match m {
        Nop => 0,
        Mul => (0x1c << 26) | (rs << 21) | (rt << 16) | (rd << 11) | 0x02,
        J | Jal => (m.primary_opcode().unwrap() << 26) | inst.target,
        _ => match m.format() {
            Format::RegRegReg => (rs << 21) | (rt << 16) | (rd << 11) | m.special_funct().unwrap(),
            Format::Shift => (rt << 16) | (rd << 11) | (sh << 6) | m.special_funct().unwrap(),
            Format::ShiftVar => (rs << 21) | (rt << 16) | (rd << 11) | m.special_funct().unwrap(),
            Format::JumpReg => (rs << 21) | m.special_funct().unwrap(),
            Format::None => m.special_funct().unwrap(),
            Format::Lui => (m.primary_opcode().unwrap() << 26) | (rt << 16) | imm,
            Format::Branch1 => (m.primary_opcode().unwrap() << 26) | (rs << 21) | imm,
            Format::RegRegImm | Format::Mem | Format::Branch2 => {
                (m.primary_opcode().unwrap() << 26) | (rs << 21) | (rt << 16) | imm
            }
            Format::Jump => unreachable!(),
        },
    };
    Ok(word)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_known_words() {
        assert_eq!(decode(0, 0).unwrap().mnemonic, Mnemonic::Nop);
        let addi = decode(0x2002_0005, 0x400).unwrap();
        assert_eq!(addi, Instruction::rri(Mnemonic::Addi, 2, 0, 5).at(0x400));
        let add = decode(0x0022_1820, 0).unwrap();
        assert_eq!(add, Instruction::rrr(Mnemonic::Add, 3, 1, 2));
    }

    #[test]
    fn encode_known_instructions() {
        assert_eq!(encode(&Instruction::nop()).unwrap(), 0);
        assert_eq!(encode(&Instruction::rri(Mnemonic::Addi, 2, 0, 5)).unwrap(), 0x2002_0005);
        // mul $3, $4, $5 in the SPECIAL2 encoding
        assert_eq!(encode(&Instruction::rrr(Mnemonic::Mul, 3, 4, 5)).unwrap(), 0x7085_1802);
        // jr $31
        assert_eq!(encode(&Instruction { rs: 31, ..Instruction::new(Mnemonic::Jr) }).unwrap(), 0x03e0_0008);
        // syscall
        assert_eq!(encode(&Instruction::new(Mnemonic::Syscall)).unwrap(), 0x0000_000c);
    }

    #[test]
    fn unknown_words_are_rejected() {
        // COP1 (floating point) is outside the subset.
        assert!(matches!(decode(0x4600_0000, 8), Err(IsaError::UnknownOpcode { word: 0x4600_0000, address: 8 })));
        // add with a nonzero shamt field is not a canonical encoding.
        assert!(decode(0x0022_1860, 0).is_err());
        // blez with rt != 0
        assert!(decode(0x1821_0001, 0).is_err());
    }

    #[test]
    fn out_of_range_fields_fail_to_encode() {
        let bad = Instruction::rrr(Mnemonic::Add, 32, 0, 0);
        assert!(matches!(encode(&bad), Err(IsaError::FieldOutOfRange { field: "rd", .. })));
        let bad = Instruction::shift(Mnemonic::Sll, 1, 1, 40);
        assert!(encode(&bad).is_err());
    }

    #[test]
    fn branch_and_jump_targets() {
        let beq = Instruction::rri(Mnemonic::Beq, 2, 1, 2).at(0x0040_0000);
        assert_eq!(beq.branch_target(), 0x0040_000c);
        let back = Instruction::rri(Mnemonic::Bne, 2, 1, -1).at(0x0040_0010);
        assert_eq!(back.branch_target(), 0x0040_0010);
        let j = Instruction { target: 0x0010_0004, ..Instruction::new(Mnemonic::J) }.at(0x0040_0000);
        assert_eq!(j.jump_target(), 0x0040_0010);
    }

    pub(crate) fn arb_instruction() -> impl Strategy<Value = Instruction> {
        (0..Mnemonic::ALL.len(), 0u8..32, 0u8..32, 0u8..32, any::<i16>(), 0u8..32, 0u32..(1 << 26)).prop_map(
            |(mi, rd, rs, rt, imm, shamt, target)| {
                let m = Mnemonic::ALL[mi];
                let base = Instruction::new(m);
                let inst = match m.format() {
                    Format::RegRegReg => Instruction::rrr(m, rd, rs, rt),
                    Format::Shift => Instruction::shift(m, rd, rt, shamt),
                    Format::ShiftVar => Instruction { rd, rs, rt, ..base },
                    Format::RegRegImm | Format::Mem | Format::Branch2 => Instruction::rri(m, rt, rs, imm),
                    Format::Lui => Instruction { rt, imm, ..base },
                    Format::Branch1 => Instruction { rs, imm, ..base },
                    Format::Jump => Instruction { target, ..base },
                    Format::JumpReg => Instruction { rs, ..base },
                    Format::None => base,
                };
                // `sll $0, $0, 0` is the canonical nop
                if inst.mnemonic == Mnemonic::Sll && inst.rd == 0 && inst.rt == 0 && inst.shamt == 0 {
                    Instruction::nop()
                } else {
                    inst
                }
            },
        )
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(inst in arb_instruction()) {
            let word = encode(&inst).unwrap();
            prop_assert_eq!(decode(word, 0).unwrap(), inst);
            prop_assert_eq!(encode(&decode(word, 0).unwrap()).unwrap(), word);
        }

        #[test]
        fn decoded_words_reencode(word in any::<u32>()) {
            if let Ok(inst) = decode(word, 0) {
                prop_assert_eq!(encode(&inst).unwrap(), word);
            }
        }
    }
}
