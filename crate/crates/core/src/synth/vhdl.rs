//! VHDL emission in two-process FSMD style, and a well-formedness checker
//! for the emitted subset.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::bind::{Edge, Next, RtlDesign, Src, Target};
use crate::ir::{MemWidth, OpKind};

fn src(d: &RtlDesign, s: Src) -> String {
    match s {
        Src::Reg(r) => format!("resize({}, 32)", d.registers[r].name),
        Src::Port(p) => d.inputs[p].name.clone(),
        Src::Entry(p) => d.entries[p].name.clone(),
        Src::Const(c) => format!("unsigned'(x\"{c:08X}\")"),
        Src::Temp(n) => format!("t_n{}", n.0),
    }
}

fn amount(d: &RtlDesign, s: Src) -> String {
    match s {
        Src::Const(c) => (c & 31).to_string(),
        s => format!("to_integer({}(4 downto 0))", src(d, s)),
    }
}

fn offset(base: String, off: i32) -> String {
    match off {
        0 => base,
        o if o > 0 => format!("{base} + to_unsigned({o}, 32)"),
        o => format!("{base} - to_unsigned({}, 32)", o.unsigned_abs()),
    }
}

struct Out {
    text: String,
    depth: usize,
}

impl Out {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.text.push_str("  ");
        }
        self.text.push_str(s);
        self.text.push('\n');
    }
}

fn edge(d: &RtlDesign, e: &Edge, o: &mut Out) {
    for &(r, s) in &e.copies {
        let reg = &d.registers[r];
        o.line(&format!("{}_next <= resize({}, {});", reg.name, src(d, s), reg.width));
    }
    let target = match e.target {
        Target::State(t) => &d.states[t].name,
        Target::Exit(_) => &d.states[d.done()].name,
    };
    o.line(&format!("state_next <= {target};"));
}

/// Emits one entity/architecture pair. Output depends only on the design.
pub fn emit_vhdl(d: &RtlDesign) -> String {
    let mut o = Out { text: String::new(), depth: 0 };
    o.line(&format!("-- {}: FSMD with {} states and {} registers", d.name, d.states.len(), d.registers.len()));
    o.line("library ieee;");
    o.line("use ieee.std_logic_1164.all;");
    o.line("use ieee.numeric_std.all;");
    o.line("");
    o.line(&format!("entity {} is", d.name));
    o.depth = 1;
    o.line("port (");
    o.depth = 2;
    let mut ports: Vec<String> =
        ["clk : in std_logic", "rst : in std_logic", "start : in std_logic", "done : out std_logic"]
            .map(String::from)
            .to_vec();
    for p in d.inputs.iter().chain(&d.entries) {
        ports.push(format!("{} : in unsigned(31 downto 0)", p.name));
    }
    for (p, _) in &d.outputs {
        ports.push(format!("{} : out unsigned(31 downto 0)", p.name));
    }
    if d.exit_reg.is_some() {
        ports.push(String::from("exit_sel : out unsigned(7 downto 0)"));
    }
    if d.uses_memory {
        ports.push(String::from("mem_addr : out unsigned(31 downto 0)"));
        ports.push(String::from("mem_wdata : out unsigned(31 downto 0)"));
        ports.push(String::from("mem_rdata : in unsigned(31 downto 0)"));
        ports.push(String::from("mem_we : out std_logic"));
        ports.push(String::from("mem_byte : out std_logic"));
    }
    let n = ports.len();
    for (i, p) in ports.iter().enumerate() {
        o.line(&format!("{p}{}", if i + 1 < n { ";" } else { "" }));
    }
    o.depth = 1;
    o.line(");");
    o.depth = 0;
    o.line(&format!("end entity {};", d.name));
    o.line("");
    o.line(&format!("architecture rtl of {} is", d.name));
    o.depth = 1;
    let names: Vec<&str> = d.states.iter().map(|s| s.name.as_str()).collect();
    o.line(&format!("type state_t is ({});", names.join(", ")));
    o.line("signal state, state_next : state_t;");
    for r in &d.registers {
        o.line(&format!("signal {0}, {0}_next : unsigned({1} downto 0);", r.name, r.width - 1));
    }
    let temps: BTreeSet<u32> = d.states.iter().flat_map(|s| s.ops.iter().map(|op| op.node.0)).collect();
    if !temps.is_empty() {
        o.line("function b2u(c : boolean) return unsigned is");
        o.line("begin");
        o.depth = 2;
        o.line("if c then");
        o.line("  return to_unsigned(1, 32);");
        o.line("end if;");
        o.line("return to_unsigned(0, 32);");
        o.depth = 1;
        o.line("end function;");
    }
    o.depth = 0;
    o.line("begin");
    o.depth = 1;
    o.line("seq : process (clk)");
    o.line("begin");
    o.depth = 2;
    o.line("if rising_edge(clk) then");
    o.depth = 3;
    o.line("if rst = '1' then");
    o.line("  state <= S_IDLE;");
    o.line("else");
    o.depth = 4;
    o.line("state <= state_next;");
    for r in &d.registers {
        o.line(&format!("{0} <= {0}_next;", r.name));
    }
    o.depth = 3;
    o.line("end if;");
    o.depth = 2;
    o.line("end if;");
    o.depth = 1;
    o.line("end process;");
    o.line("");
    o.line("comb : process (all)");
    o.depth = 2;
    for t in &temps {
        o.line(&format!("variable t_n{t} : unsigned(31 downto 0);"));
    }
    o.depth = 1;
    o.line("begin");
    o.depth = 2;
    o.line("state_next <= state;");
    for r in &d.registers {
        o.line(&format!("{0}_next <= {0};", r.name));
    }
    o.line("done <= '0';");
    if d.uses_memory {
        o.line("mem_addr <= (others => '0');");
        o.line("mem_wdata <= (others => '0');");
        o.line("mem_we <= '0';");
        o.line("mem_byte <= '0';");
    }
    for t in &temps {
        o.line(&format!("t_n{t} := (others => '0');"));
    }
    o.line("case state is");
    for s in &d.states {
        o.depth = 3;
        o.line(&format!("when {} =>", s.name));
        o.depth = 4;
        for op in &s.ops {
            let a = |i: usize| src(d, op.srcs[i]);
            let t = format!("t_n{}", op.node.0);
            let expr = match op.kind {
                OpKind::Add => format!("{} + {}", a(0), a(1)),
                OpKind::Sub => format!("{} - {}", a(0), a(1)),
                OpKind::Mul => format!("resize({} * {}, 32)", a(0), a(1)),
                OpKind::And => format!("{} and {}", a(0), a(1)),
                OpKind::Or => format!("{} or {}", a(0), a(1)),
                OpKind::Xor => format!("{} xor {}", a(0), a(1)),
                OpKind::Nor => format!("not ({} or {})", a(0), a(1)),
                OpKind::Shl => format!("shift_left({}, {})", a(0), amount(d, op.srcs[1])),
                OpKind::Lshr => format!("shift_right({}, {})", a(0), amount(d, op.srcs[1])),
                OpKind::Ashr => format!("unsigned(shift_right(signed({}), {}))", a(0), amount(d, op.srcs[1])),
                OpKind::Slt => format!("b2u(signed({}) < signed({}))", a(0), a(1)),
                OpKind::Sltu => format!("b2u({} < {})", a(0), a(1)),
                OpKind::Eq => format!("b2u({} = {})", a(0), a(1)),
                OpKind::Ne => format!("b2u({} /= {})", a(0), a(1)),
                OpKind::Load { width, signed, offset: off } => {
                    o.line(&format!("mem_addr <= {};", offset(a(0), off)));
                    match (width, signed) {
                        (MemWidth::Word, _) => String::from("mem_rdata"),
                        (MemWidth::Byte, false) => {
                            o.line("mem_byte <= '1';");
                            String::from("resize(mem_rdata(7 downto 0), 32)")
                        }
                        (MemWidth::Byte, true) => {
                            o.line("mem_byte <= '1';");
                            String::from("unsigned(resize(signed(mem_rdata(7 downto 0)), 32))")
                        }
                    }
                }
                OpKind::Store { width, offset: off } => {
                    o.line(&format!("mem_addr <= {};", offset(a(0), off)));
                    o.line(&format!("mem_wdata <= {};", a(1)));
                    o.line("mem_we <= '1';");
                    if width == MemWidth::Byte {
                        o.line("mem_byte <= '1';");
                    }
                    String::from("(others => '0')")
                }
                k => format!("(others => '0') -- {k}"),
            };
            o.line(&format!("{t} := {expr};"));
            if let Some(r) = op.dst {
                let reg = &d.registers[r];
                o.line(&format!("{}_next <= resize({t}, {});", reg.name, reg.width));
            }
        }
        match &s.next {
            Next::Start(e) => {
                o.line("if start = '1' then");
                o.depth = 5;
                match e {
                    Some(e) => edge(d, e, &mut o),
                    None => o.line("done <= '1';"),
                }
                o.depth = 4;
                o.line("end if;");
            }
            Next::Goto(e) => edge(d, e, &mut o),
            Next::Branch { cond, taken, fallthrough } => {
                o.line(&format!("if {} /= 0 then", src(d, *cond)));
                o.depth = 5;
                edge(d, taken, &mut o);
                o.depth = 4;
                o.line("else");
                o.depth = 5;
                edge(d, fallthrough, &mut o);
                o.depth = 4;
                o.line("end if;");
            }
            Next::Finish => {
                o.line("done <= '1';");
                o.line("state_next <= S_IDLE;");
            }
        }
    }
    o.depth = 2;
    o.line("end case;");
    o.depth = 1;
    o.line("end process;");
    o.line("");
    for (p, s) in &d.outputs {
        o.line(&format!("{} <= {};", p.name, src(d, *s)));
    }
    if let Some(r) = d.exit_reg {
        o.line(&format!("exit_sel <= resize({}, 8);", d.registers[r].name));
    }
    o.depth = 0;
    o.line("end architecture rtl;");
    o.text
}

const KEYWORDS: &[&str] = &[
    "library",
    "use",
    "all",
    "entity",
    "is",
    "port",
    "in",
    "out",
    "end",
    "architecture",
    "of",
    "type",
    "signal",
    "variable",
    "function",
    "return",
    "begin",
    "process",
    "if",
    "then",
    "else",
    "elsif",
    "case",
    "when",
    "others",
    "and",
    "or",
    "xor",
    "not",
    "downto",
    "to",
];

const BUILTINS: &[&str] = &[
    "ieee",
    "std_logic_1164",
    "numeric_std",
    "std_logic",
    "unsigned",
    "signed",
    "boolean",
    "resize",
    "shift_left",
    "shift_right",
    "to_integer",
    "to_unsigned",
    "rising_edge",
];

/// A basic VHDL identifier derived from `name`: letters, digits and single
/// underscores, starting with a letter and not ending in an underscore.
pub fn vhdl_identifier(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    if !out.starts_with(|c: char| c.is_ascii_alphabetic()) {
        out.insert_str(0, "r_");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    /// Lowercased, as VHDL identifiers are case-insensitive, and as written.
    Ident(String, String),
    Sym(String),
    Lit,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, String> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let code = line.split("--").next().unwrap_or("");
        let cs: Vec<char> = code.chars().collect();
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            if c.is_whitespace() {
                i += 1;
            } else if (c == 'x' || c == 'X') && cs.get(i + 1) == Some(&'"') {
                let end =
                    cs[i + 2..].iter().position(|&ch| ch == '"').ok_or(format!("line {line_no}: open literal"))?;
                i += end + 3;
                out.push((line_no, Tok::Lit));
            } else if c.is_ascii_alphabetic() {
                let s = i;
                while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                    i += 1;
                }
                let word: String = cs[s..i].iter().collect();
                out.push((line_no, Tok::Ident(word.to_ascii_lowercase(), word)));
            } else if c.is_ascii_digit() {
                while i < cs.len() && cs[i].is_ascii_digit() {
                    i += 1;
                }
                out.push((line_no, Tok::Lit));
            } else if c == '\'' && cs.get(i + 2) == Some(&'\'') && i > 0 && !cs[i - 1].is_ascii_alphanumeric() {
                i += 3;
                out.push((line_no, Tok::Lit));
            } else if c == '"' {
                let end = cs[i + 1..].iter().position(|&ch| ch == '"').ok_or(format!("line {line_no}: open string"))?;
                i += end + 2;
                out.push((line_no, Tok::Lit));
            } else {
                let two: String = cs[i..(i + 2).min(cs.len())].iter().collect();
                if ["<=", ":=", "=>", "/="].contains(&two.as_str()) {
                    out.push((line_no, Tok::Sym(two)));
                    i += 2;
                } else {
                    out.push((line_no, Tok::Sym(c.to_string())));
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Checks the emitted subset: balanced block constructs and parentheses,
/// every referenced identifier declared, and every FSM state reachable from
/// the reset state. Returns every problem found.
pub fn check_vhdl(text: &str) -> Result<(), Vec<String>> {
    let toks = match lex(text) {
        Ok(t) => t,
        Err(e) => return Err(alloc::vec![e]),
    };
    let mut errors = Vec::new();
    let ident = |i: usize| match toks.get(i) {
        Some((_, Tok::Ident(s, _))) => Some(s.as_str()),
        _ => None,
    };
    let sym = |i: usize, s: &str| matches!(toks.get(i), Some((_, Tok::Sym(x))) if x == s);

    // Declarations.
    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut states: Vec<String> = Vec::new();
    let mut spelled: BTreeMap<String, String> = BTreeMap::new();
    for i in 0..toks.len() {
        let Some(id) = ident(i) else { continue };
        let prev = if i > 0 { ident(i - 1) } else { None };
        if sym(i + 1, ":") || matches!(prev, Some("entity" | "architecture" | "function")) && prev != Some("end") {
            declared.insert(id.into());
        }
        if id == "type" {
            if let Some(name) = ident(i + 1) {
                declared.insert(name.into());
            }
            let mut j = i + 3;
            if sym(j, "(") {
                j += 1;
                while let Some(lit) = ident(j) {
                    declared.insert(lit.into());
                    states.push(lit.into());
                    if let Some((_, Tok::Ident(_, orig))) = toks.get(j) {
                        spelled.insert(String::from(lit), orig.clone());
                    }
                    j += 1;
                    if sym(j, ",") {
                        j += 1;
                    }
                }
            }
        }
        // `signal a, b : t` declares every listed name.
        if matches!(id, "signal" | "variable") {
            let mut j = i + 1;
            while let Some(n) = ident(j) {
                declared.insert(n.into());
                if !sym(j + 1, ",") {
                    break;
                }
                j += 2;
            }
        }
    }

    // Nesting and references.
    let mut stack: Vec<(String, usize)> = Vec::new();
    let mut parens: i64 = 0;
    let mut i = 0;
    while i < toks.len() {
        let (line, t) = &toks[i];
        match t {
            Tok::Sym(s) if s == "(" => parens += 1,
            Tok::Sym(s) if s == ")" => {
                parens -= 1;
                if parens < 0 {
                    errors.push(format!("line {line}: unbalanced ')'"));
                    parens = 0;
                }
            }
            Tok::Ident(id, orig) => {
                let id = id.as_str();
                let prev = if i > 0 { ident(i - 1) } else { None };
                match id {
                    "end" => {
                        let what = ident(i + 1).filter(|w| {
                            matches!(*w, "if" | "case" | "process" | "entity" | "architecture" | "function")
                        });
                        match (stack.pop(), what) {
                            (Some((open, _)), Some(w)) if open == w => {}
                            (Some((open, l)), w) => errors
                                .push(format!("line {line}: `end {}` closes `{open}` from line {l}", w.unwrap_or(""))),
                            (None, _) => errors.push(format!("line {line}: `end` without an open construct")),
                        }
                        if what.is_some() {
                            i += 1;
                        }
                    }
                    "if" | "case" | "process" | "entity" | "architecture" | "function" if prev != Some("end") => {
                        // `entity` inside `end entity` is consumed above.
                        stack.push((id.into(), *line));
                    }
                    _ if KEYWORDS.contains(&id) || BUILTINS.contains(&id) => {}
                    _ if declared.contains(id) => {}
                    _ => errors.push(format!("line {line}: `{orig}` is not declared")),
                }
            }
            _ => {}
        }
        i += 1;
    }
    if parens != 0 {
        errors.push(String::from("unbalanced parentheses"));
    }
    for (open, l) in &stack {
        errors.push(format!("`{open}` from line {l} is never closed"));
    }

    // State graph: `when S =>` arms and `state_next <= T` assignments.
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut reset: Option<String> = None;
    let mut arm: Option<String> = None;
    for i in 0..toks.len() {
        match ident(i) {
            Some("when") if ident(i + 1).is_some_and(|s| states.iter().any(|x| x == s)) && sym(i + 2, "=>") => {
                arm = ident(i + 1).map(String::from);
            }
            Some("state_next") if sym(i + 1, "<=") => {
                if let (Some(a), Some(t)) = (&arm, ident(i + 2)) {
                    edges.entry(a.clone()).or_default().insert(t.into());
                }
            }
            Some("state") if sym(i + 1, "<=") && ident(i + 2).is_some_and(|s| states.iter().any(|x| x == s)) => {
                reset = ident(i + 2).map(String::from);
            }
            _ => {}
        }
    }
    match reset {
        None if !states.is_empty() => errors.push(String::from("no reset state")),
        None => {}
        Some(r) => {
            let mut seen: BTreeSet<String> = BTreeSet::new();
            let mut work: VecDeque<String> = VecDeque::from([r]);
            while let Some(s) = work.pop_front() {
                if seen.insert(s.clone()) {
                    work.extend(edges.get(&s).into_iter().flatten().filter(|&t| t != "state").cloned());
                }
            }
            for s in &states {
                if !seen.contains(s) {
                    errors.push(format!("state {} is unreachable", spelled.get(s).unwrap_or(s)));
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
