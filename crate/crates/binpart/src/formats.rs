//! Line-oriented text files: profiles and input vectors.
//!
//! Profile records are `block <hex-addr> <count>`, `edge <hex-from>
//! <hex-to> <count>`, `instr <hex-addr> <cycles>` and `cycles <decimal>`.
//! `instr` records are optional on input; without them per-instruction
//! cycles are rebuilt from block counts, the image and the cost table.

use std::collections::BTreeSet;
use std::fmt::Write;

use binpart_core::decompile::find_leaders;
use binpart_core::isa::ProgramImage;
use binpart_core::sim::{CostTable, Profile};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {line}: {what}")]
    Syntax { line: usize, what: String },
    #[error("profile has no `cycles` record")]
    MissingCycles,
    #[error("profile cycles {stated} disagree with the per-instruction sum {summed}")]
    CycleMismatch { stated: u64, summed: u64 },
}

fn syntax(line: usize, what: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, what: what.into() }
}

fn hex(line: usize, s: &str) -> Result<u32, FormatError> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(digits, 16).map_err(|_| syntax(line, format!("bad address `{s}`")))
}

fn dec(line: usize, s: &str) -> Result<u64, FormatError> {
    s.parse().map_err(|_| syntax(line, format!("bad count `{s}`")))
}

pub fn write_profile(p: &Profile) -> String {
    let mut out = String::new();
    for (a, n) in &p.block_counts {
        let _ = writeln!(out, "block {a:#010x} {n}");
    }
    for ((a, b), n) in &p.edge_counts {
        let _ = writeln!(out, "edge {a:#010x} {b:#010x} {n}");
    }
    for (a, n) in &p.instr_cycles {
        let _ = writeln!(out, "instr {a:#010x} {n}");
    }
    let _ = writeln!(out, "cycles {}", p.total_cycles);
    out
}

/// Parses a profile; `#` starts a comment.
pub fn parse_profile(text: &str, image: &ProgramImage, costs: &CostTable) -> Result<Profile, FormatError> {
    let mut p = Profile::default();
    let mut cycles = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
        match f.as_slice() {
            [] => {}
            ["block", a, n] => {
                p.block_counts.insert(hex(line, a)?, dec(line, n)?);
            }
            ["edge", a, b, n] => {
                p.edge_counts.insert((hex(line, a)?, hex(line, b)?), dec(line, n)?);
            }
            ["instr", a, n] => {
                p.instr_cycles.insert(hex(line, a)?, dec(line, n)?);
            }
            ["cycles", n] => cycles = Some(dec(line, n)?),
            _ => return Err(syntax(line, format!("unrecognized record `{}`", raw.trim()))),
        }
    }
    p.total_cycles = cycles.ok_or(FormatError::MissingCycles)?;
    if p.instr_cycles.is_empty() {
        p.instr_cycles = rebuild_instr_cycles(&p, image, costs);
    }
    let summed: u64 = p.instr_cycles.values().sum();
    if summed != p.total_cycles {
        return Err(FormatError::CycleMismatch { stated: p.total_cycles, summed });
    }
    Ok(p)
}

/// Every entry of a block runs it to the next leader.
fn rebuild_instr_cycles(p: &Profile, image: &ProgramImage, costs: &CostTable) -> std::collections::BTreeMap<u32, u64> {
    let leaders: BTreeSet<u32> = find_leaders(image).unwrap_or_default();
    let mut out = std::collections::BTreeMap::new();
    for (&start, &count) in &p.block_counts {
        let mut a = start;
        while let Some(Ok(ins)) = image.instruction_at(a) {
            *out.entry(a).or_default() += count * costs.cost(ins.mnemonic);
            a += 4;
            if leaders.contains(&a) {
                break;
            }
        }
    }
    out
}

/// One word per line, decimal, optionally negative; `#` starts a comment.
pub fn parse_inputs(text: &str) -> Result<Vec<u32>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let v = match s.parse::<i64>() {
            Ok(v) if (i32::MIN as i64..=u32::MAX as i64).contains(&v) => v as u32,
            _ => return Err(syntax(i + 1, format!("bad input word `{s}`"))),
        };
        out.push(v);
    }
    Ok(out)
}

pub fn write_inputs(words: &[u32]) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use binpart_core::corpus;
    use binpart_core::isa::assemble;
    use binpart_core::sim::profile_run;

    #[test]
    fn profiles_round_trip() {
        for p in corpus::ALL.iter().filter(|p| !p.indirect) {
            let image = assemble(p.source).unwrap();
            let (_, prof) = profile_run(&image, p.samples[0], 1_000_000, &CostTable::default());
            let text = write_profile(&prof);
            assert_eq!(parse_profile(&text, &image, &CostTable::default()).unwrap(), prof, "{}", p.name);
        }
    }

    #[test]
    fn instruction_cycles_rebuild_from_blocks() {
        for p in corpus::ALL.iter().filter(|p| !p.indirect) {
            let image = assemble(p.source).unwrap();
            let (_, prof) = profile_run(&image, p.samples[0], 1_000_000, &CostTable::default());
            let text: String =
                write_profile(&prof).lines().filter(|l| !l.starts_with("instr")).map(|l| format!("{l}\n")).collect();
            assert_eq!(parse_profile(&text, &image, &CostTable::default()).unwrap(), prof, "{}", p.name);
        }
    }

    #[test]
    fn profile_errors() {
        let image = ProgramImage::default();
        let c = CostTable::default();
        assert_eq!(parse_profile("block 0x10\n", &image, &c), Err(syntax(1, "unrecognized record `block 0x10`")));
        assert_eq!(parse_profile("block zz 1\n", &image, &c), Err(syntax(1, "bad address `zz`")));
        assert_eq!(parse_profile("# nothing\n", &image, &c), Err(FormatError::MissingCycles));
        assert_eq!(
            parse_profile("instr 0x0 3\ncycles 4\n", &image, &c),
            Err(FormatError::CycleMismatch { stated: 4, summed: 3 })
        );
    }

    #[test]
    fn inputs_parse() {
        assert_eq!(parse_inputs("3\n\n-1 # minus one\n4294967295\n").unwrap(), vec![3, u32::MAX, u32::MAX]);
        assert!(parse_inputs("4294967296\n").is_err());
        assert!(parse_inputs("x\n").is_err());
        assert_eq!(parse_inputs(&write_inputs(&[1, 2, 3])).unwrap(), vec![1, 2, 3]);
    }
}
