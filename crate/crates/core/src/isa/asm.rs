//! Two-pass assembler for the instruction subset.
//!
//! Pass one lays out both sections and records label addresses; pass two
//! encodes. Every instruction is one word, so layout never depends on label
//! values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{encode, Format, Instruction, Mnemonic, ProgramImage, Reg};

pub const DEFAULT_TEXT_BASE: u32 = 0x0040_0000;
pub const DEFAULT_DATA_BASE: u32 = 0x1000_0000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AsmError {
    UndefinedLabel { line: usize, label: String },
    DuplicateLabel { line: usize, label: String },
    BranchOutOfRange { line: usize, label: String },
    SyntaxError { line: usize, message: String },
    UndefinedEntry,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AsmError::UndefinedLabel { line, label } => write!(f, "line {line}: undefined label `{label}`"),
            AsmError::DuplicateLabel { line, label } => write!(f, "line {line}: duplicate label `{label}`"),
            AsmError::BranchOutOfRange { line, label } => {
                write!(f, "line {line}: branch to `{label}` out of range")
            }
            AsmError::SyntaxError { line, message } => write!(f, "line {line}: {message}"),
            AsmError::UndefinedEntry => f.write_str("no instruction at program entry"),
        }
    }
}

impl core::error::Error for AsmError {}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

struct Line<'a> {
    number: usize,
    label: Option<&'a str>,
    body: Option<&'a str>,
}

fn split_line(number: usize, raw: &str) -> Result<Line<'_>, AsmError> {
    let text = raw.split('#').next().unwrap_or("").trim();
    let (label, body) = match text.find(':') {
        Some(pos) => {
            let name = text[..pos].trim();
            if !is_ident(name) {
                return Err(syntax(number, format!("bad label `{name}`")));
            }
            (Some(name), text[pos + 1..].trim())
        }
        None => (None, text),
    };
    Ok(Line { number, label, body: (!body.is_empty()).then_some(body) })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn syntax(line: usize, message: String) -> AsmError {
    AsmError::SyntaxError { line, message }
}

fn parse_int(line: usize, s: &str) -> Result<i64, AsmError> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let value = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16)
    } else {
        digits.parse::<i64>()
    }
    .map_err(|_| syntax(line, format!("bad number `{s}`")))?;
    Ok(if neg { -value } else { value })
}

fn parse_reg(line: usize, s: &str) -> Result<Reg, AsmError> {
    let s = s.trim();
    let n = s
        .strip_prefix('$')
        .and_then(|d| d.parse::<u8>().ok())
        .filter(|&n| n < 32)
        .ok_or_else(|| syntax(line, format!("bad register `{s}`")))?;
    Ok(n)
}

fn split_operands(body: &str) -> (&str, Vec<&str>) {
    let body = body.trim();
    let (head, rest) = match body.find(char::is_whitespace) {
        Some(p) => (&body[..p], body[p..].trim()),
        None => (body, ""),
    };
    let ops = if rest.is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
    (head, ops)
}

struct Layout<'a> {
    labels: BTreeMap<String, u32>,
    text_base: u32,
    data_base: u32,
    text_lines: Vec<(u32, &'a Line<'a>)>,
    data_items: Vec<(u32, &'a Line<'a>)>,
    data_len: u32,
    entry_label: Option<(usize, &'a str)>,
}

fn layout<'a>(lines: &'a [Line<'a>]) -> Result<Layout<'a>, AsmError> {
    let mut out = Layout {
        labels: BTreeMap::new(),
        text_base: DEFAULT_TEXT_BASE,
        data_base: DEFAULT_DATA_BASE,
        text_lines: Vec::new(),
        data_items: Vec::new(),
        data_len: 0,
        entry_label: None,
    };
    let mut section = Section::Text;
    let mut text_pc = DEFAULT_TEXT_BASE;
    let mut data_set = false;

    for line in lines {
        let mut directive = None;
        if let Some(body) = line.body {
            let (head, ops) = split_operands(body);
            if head.starts_with('.') {
                directive = Some((head, ops));
            }
        }
        // Section switches take effect before the label on the same line.
        if let Some((head, ops)) = &directive {
            match *head {
                ".text" | ".data" => {
                    let want = if *head == ".text" { Section::Text } else { Section::Data };
                    if let Some(arg) = ops.first() {
                        let addr = parse_int(line.number, arg)? as u32;
                        match want {
                            Section::Text if out.text_lines.is_empty() => {
                                out.text_base = addr;
                                text_pc = addr;
                            }
                            Section::Text if addr != text_pc => {
                                return Err(syntax(line.number, "text section must be contiguous".to_string()))
                            }
                            Section::Data if !data_set && out.data_items.is_empty() => {
                                out.data_base = addr;
                                data_set = true;
                            }
                            Section::Data => {
                                let cur = out.data_base + out.data_len;
                                if addr < cur {
                                    return Err(syntax(line.number, "data section cannot move backwards".to_string()));
                                }
                                out.data_len = addr - out.data_base;
                            }
                            Section::Text => {}
                        }
                    }
                    section = want;
                }
                _ => {}
            }
        }
        // .word aligns before its label is bound.
        if section == Section::Data {
            if let Some((".word", _)) = directive.as_ref().map(|(h, o)| (*h, o)) {
                out.data_len = (out.data_len + 3) & !3;
            }
        }
        if let Some(label) = line.label {
            let addr = match section {
                Section::Text => text_pc,
                Section::Data => out.data_base + out.data_len,
            };
            if out.labels.insert(label.to_string(), addr).is_some() {
                return Err(AsmError::DuplicateLabel { line: line.number, label: label.to_string() });
            }
        }
        let Some(body) = line.body else { continue };
        match directive {
            Some((".text" | ".data", _)) => {}
            Some((".entry", ops)) => {
                let name = ops
                    .first()
                    .filter(|n| is_ident(n))
                    .ok_or_else(|| syntax(line.number, ".entry expects a label".to_string()))?;
                out.entry_label = Some((line.number, name));
            }
            Some((".word" | ".byte" | ".space", ops)) => {
                if section != Section::Data {
                    return Err(syntax(line.number, "data directive outside .data".to_string()));
                }
                let head = split_operands(body).0;
                let size = match head {
                    ".word" => 4 * ops.len() as u32,
                    ".byte" => ops.len() as u32,
                    _ => {
                        let n = ops.first().ok_or_else(|| syntax(line.number, ".space expects a size".to_string()))?;
                        parse_int(line.number, n)? as u32
                    }
                };
                out.data_items.push((out.data_base + out.data_len, line));
                out.data_len += size;
            }
            Some((other, _)) => return Err(syntax(line.number, format!("unknown directive `{other}`"))),
            None => {
                if section != Section::Text {
                    return Err(syntax(line.number, "instruction outside .text".to_string()));
                }
                out.text_lines.push((text_pc, line));
                text_pc = text_pc.wrapping_add(4);
            }
        }
    }
    Ok(out)
}

fn resolve(labels: &BTreeMap<String, u32>, line: usize, name: &str) -> Result<u32, AsmError> {
    labels.get(name).copied().ok_or_else(|| AsmError::UndefinedLabel { line, label: name.to_string() })
}

/// Immediate operand: number, `%hi(label)`, `%lo(label)` or a bare label
/// (its low 16 bits).
fn parse_imm(labels: &BTreeMap<String, u32>, line: usize, s: &str) -> Result<i64, AsmError> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix("%hi(").and_then(|r| r.strip_suffix(')')) {
        return Ok((resolve(labels, line, inner.trim())? >> 16) as i64);
    }
    if let Some(inner) = s.strip_prefix("%lo(").and_then(|r| r.strip_suffix(')')) {
        return Ok((resolve(labels, line, inner.trim())? & 0xffff) as i64);
    }
    if is_ident(s) {
        return Ok((resolve(labels, line, s)? & 0xffff) as i64);
    }
    parse_int(line, s)
}

fn imm16(line: usize, v: i64, signed: bool) -> Result<i16, AsmError> {
    let ok = if signed { (-32768..=32767).contains(&v) } else { (-32768..=65535).contains(&v) };
    if !ok {
        return Err(syntax(line, format!("immediate {v} does not fit in 16 bits")));
    }
    Ok(v as u16 as i16)
}

fn encode_line(labels: &BTreeMap<String, u32>, addr: u32, line: &Line<'_>) -> Result<u32, AsmError> {
    let n = line.number;
    let (head, ops) = split_operands(line.body.unwrap_or(""));
    let m = Mnemonic::from_name(&head.to_ascii_lowercase())
        .ok_or_else(|| syntax(n, format!("unknown instruction `{head}`")))?;
    let want = match m.format() {
        Format::RegRegReg | Format::Shift | Format::ShiftVar | Format::RegRegImm | Format::Branch2 => 3,
        Format::Lui | Format::Mem | Format::Branch1 => 2,
        Format::Jump | Format::JumpReg => 1,
        Format::None => 0,
    };
    if ops.len() != want {
        return Err(syntax(n, format!("`{head}` expects {want} operands")));
    }
    let base = Instruction::new(m).at(addr);
    let branch_imm = |label: &str| -> Result<i16, AsmError> {
        let target = resolve(labels, n, label)?;
        let delta = (target as i64 - (addr as i64 + 4)) / 4;
        if target % 4 != 0 || !(-32768..=32767).contains(&delta) {
            return Err(AsmError::BranchOutOfRange { line: n, label: label.to_string() });
        }
        Ok(delta as i16)
    };
    let inst = match m.format() {
        Format::RegRegReg => {
            Instruction { rd: parse_reg(n, ops[0])?, rs: parse_reg(n, ops[1])?, rt: parse_reg(n, ops[2])?, ..base }
        }
        Format::Shift => {
            let sh = parse_int(n, ops[2])?;
            if !(0..32).contains(&sh) {
                return Err(syntax(n, format!("shift amount {sh} out of range")));
            }
            Instruction { rd: parse_reg(n, ops[0])?, rt: parse_reg(n, ops[1])?, shamt: sh as u8, ..base }
        }
        Format::ShiftVar => {
            Instruction { rd: parse_reg(n, ops[0])?, rt: parse_reg(n, ops[1])?, rs: parse_reg(n, ops[2])?, ..base }
        }
        Format::RegRegImm => {
            let signed = matches!(m, Mnemonic::Addi | Mnemonic::Addiu | Mnemonic::Slti);
            Instruction {
                rt: parse_reg(n, ops[0])?,
                rs: parse_reg(n, ops[1])?,
                imm: imm16(n, parse_imm(labels, n, ops[2])?, signed)?,
                ..base
            }
        }
        Format::Lui => {
            Instruction { rt: parse_reg(n, ops[0])?, imm: imm16(n, parse_imm(labels, n, ops[1])?, false)?, ..base }
        }
        Format::Mem => {
            let arg = ops[1];
            let open = arg.find('(').ok_or_else(|| syntax(n, format!("bad memory operand `{arg}`")))?;
            let close =
                arg.rfind(')').filter(|&c| c > open).ok_or_else(|| syntax(n, format!("bad memory operand `{arg}`")))?;
            let off_text = arg[..open].trim();
            let off = if off_text.is_empty() { 0 } else { parse_imm(labels, n, off_text)? };
            Instruction {
                rt: parse_reg(n, ops[0])?,
                rs: parse_reg(n, &arg[open + 1..close])?,
                imm: imm16(n, off, true)?,
                ..base
            }
        }
        Format::Branch2 => {
            Instruction { rs: parse_reg(n, ops[0])?, rt: parse_reg(n, ops[1])?, imm: branch_imm(ops[2])?, ..base }
        }
        Format::Branch1 => Instruction { rs: parse_reg(n, ops[0])?, imm: branch_imm(ops[1])?, ..base },
        Format::Jump => {
            let target = resolve(labels, n, ops[0])?;
            if (target & 0xf000_0000) != (addr.wrapping_add(4) & 0xf000_0000) || target % 4 != 0 {
                return Err(AsmError::BranchOutOfRange { line: n, label: ops[0].to_string() });
            }
            Instruction { target: (target >> 2) & 0x03ff_ffff, ..base }
        }
        Format::JumpReg => Instruction { rs: parse_reg(n, ops[0])?, ..base },
        Format::None => base,
    };
    encode(&inst).map_err(|e| syntax(n, e.to_string()))
}

/// Assembles `source` into a program image.
pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    let lines = source.lines().enumerate().map(|(i, l)| split_line(i + 1, l)).collect::<Result<Vec<_>, _>>()?;
    let layout = layout(&lines)?;

    let mut text = Vec::with_capacity(layout.text_lines.len());
    for (addr, line) in &layout.text_lines {
        text.push(encode_line(&layout.labels, *addr, line)?);
    }

    let mut data = alloc::vec![0u8; layout.data_len as usize];
    for (addr, line) in &layout.data_items {
        let (head, ops) = split_operands(line.body.unwrap_or(""));
        let mut at = (addr - layout.data_base) as usize;
        match head {
            ".word" => {
                for op in ops {
                    let v = if is_ident(op) {
                        resolve(&layout.labels, line.number, op)?
                    } else {
                        parse_int(line.number, op)? as u32
                    };
                    data[at..at + 4].copy_from_slice(&v.to_le_bytes());
                    at += 4;
                }
            }
            ".byte" => {
                for op in ops {
                    let v = parse_int(line.number, op)?;
                    if !(-128..=255).contains(&v) {
                        return Err(syntax(line.number, format!("byte value {v} out of range")));
                    }
                    data[at] = v as u8;
                    at += 1;
                }
            }
            _ => {}
        }
    }

    let entry = match layout.entry_label {
        Some((n, name)) => resolve(&layout.labels, n, name)?,
        None => layout.text_base,
    };
    let image = ProgramImage {
        entry,
        text_base: layout.text_base,
        data_base: layout.data_base,
        text,
        data,
        symbols: layout.labels,
    };
    if !image.contains_text(image.entry) {
        return Err(AsmError::UndefinedEntry);
    }
    image.validate().map_err(|e| syntax(0, e.to_string()))?;
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn single_addi() {
        let img = assemble("addi $2,$0,5").unwrap();
        assert_eq!(img.text, [0x2002_0005]);
        assert_eq!(img.text_base, DEFAULT_TEXT_BASE);
        assert_eq!(img.entry, DEFAULT_TEXT_BASE);
    }

    #[test]
    fn empty_text_with_label_has_no_entry() {
        assert_eq!(assemble(".text\nmain:\n"), Err(AsmError::UndefinedEntry));
    }

    #[test]
    fn forward_branch_displacement() {
        let src = "beq $1, $2, skip\naddi $3, $0, 1\naddi $3, $0, 2\nskip: nop\n";
        let img = assemble(src).unwrap();
        let beq = decode(img.text[0], img.text_base).unwrap();
        assert_eq!(beq.imm, 2);
        assert_eq!(beq.branch_target(), img.text_base + 12);
    }

    #[test]
    fn label_errors_carry_line_numbers() {
        assert_eq!(assemble("nop\nj nowhere\n"), Err(AsmError::UndefinedLabel { line: 2, label: "nowhere".into() }));
        assert_eq!(assemble("a: nop\na: nop\n"), Err(AsmError::DuplicateLabel { line: 2, label: "a".into() }));
        assert!(matches!(assemble("nop\nfoo $1\n"), Err(AsmError::SyntaxError { line: 2, .. })));
        assert!(matches!(assemble("addi $40, $0, 1"), Err(AsmError::SyntaxError { line: 1, .. })));
    }

    #[test]
    fn far_branch_is_out_of_range() {
        let src = ".text 0x00400000\nbeq $0, $0, far\n.data 0x10000000\nfar: .word 0\n";
        assert!(matches!(assemble(src), Err(AsmError::BranchOutOfRange { .. })));
    }

    #[test]
    fn data_directives_and_symbols() {
        let src = "\
.data 0x10000000
bytes: .byte 1, 2, 255
vals: .word 7, -1, vals
buf: .space 8
.text 0x00400000
.entry main
helper: nop
main: lui $8, %hi(vals)
      ori $8, $8, %lo(vals)
      lw $9, 4($8)
";
        let img = assemble(src).unwrap();
        assert_eq!(img.symbols["vals"], 0x1000_0004);
        assert_eq!(img.entry, 0x0040_0004);
        assert_eq!(&img.data[..3], &[1, 2, 255]);
        assert_eq!(&img.data[4..8], &7u32.to_le_bytes());
        assert_eq!(&img.data[8..12], &u32::MAX.to_le_bytes());
        assert_eq!(&img.data[12..16], &0x1000_0004u32.to_le_bytes());
        assert_eq!(img.data.len(), 24);
        let lui = decode(img.text[1], 0).unwrap();
        assert_eq!(lui.uimm(), 0x1000);
    }

    #[test]
    fn assembly_is_deterministic() {
        let src = "main: addi $2, $0, 10\nsyscall\n";
        assert_eq!(assemble(src).unwrap(), assemble(src).unwrap());
    }
}
