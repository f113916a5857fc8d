//! Candidate regions, their profile weights and memory footprints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::area::{hardware_suitability, AreaTable};
use crate::decompile::structure::Region as Structure;
use crate::ir::{Cdfg, NodeId, OpKind, Program};
use crate::isa::ProgramImage;
use crate::sim::Profile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegionKind {
    Loop,
    ProcedureBody,
    Block,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Loop => "loop",
            RegionKind::ProcedureBody => "body",
            RegionKind::Block => "block",
        })
    }
}

/// Named data object an access is attributed to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AddrBase {
    Symbol(String),
    /// Unknown address: aliases everything.
    Top,
}

/// Accesses of `width` bytes starting at offsets `lo..=hi` of `base`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Footprint {
    pub base: AddrBase,
    pub lo: i64,
    pub hi: i64,
    pub width: i64,
}

impl Footprint {
    pub fn top() -> Self {
        Footprint { base: AddrBase::Top, lo: 0, hi: 0, width: 0 }
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        match (&self.base, &other.base) {
            (AddrBase::Top, _) | (_, AddrBase::Top) => true,
            (AddrBase::Symbol(a), AddrBase::Symbol(b)) => {
                a == b && self.lo < other.hi + other.width && other.lo < self.hi + self.width
            }
        }
    }
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.base {
            AddrBase::Top => f.write_str("(T)"),
            AddrBase::Symbol(s) => write!(f, "({s},[{},{}])", self.lo, self.hi),
        }
    }
}

/// Data section objects: labels in the data section, or the whole section
/// as one object when there are none.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DataLayout {
    /// `(start, end, name)`, sorted and disjoint.
    pub objects: Vec<(u32, u32, String)>,
}

impl DataLayout {
    pub fn from_image(image: &ProgramImage) -> Self {
        let start = image.data_base;
        let end = start.wrapping_add(image.data.len() as u32);
        let mut labels: Vec<(u32, String)> =
            image.symbols.iter().filter(|(_, &a)| a >= start && a < end).map(|(n, &a)| (a, n.clone())).collect();
        labels.sort();
        labels.dedup_by_key(|l| l.0);
        if labels.first().map(|l| l.0) != Some(start) {
            labels.insert(0, (start, String::from("data")));
        }
        let mut objects = Vec::new();
        for (i, (a, n)) in labels.iter().enumerate() {
            let e = labels.get(i + 1).map_or(end, |l| l.0);
            if e > *a {
                objects.push((*a, e, n.clone()));
            }
        }
        DataLayout { objects }
    }

    fn object_at(&self, addr: i64) -> Option<&(u32, u32, String)> {
        self.objects.iter().find(|(s, e, _)| (*s as i64) <= addr && addr < *e as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: usize,
    pub kind: RegionKind,
    /// Index of the procedure in the program.
    pub proc: usize,
    pub blocks: BTreeSet<usize>,
    /// Header block for loops, first block otherwise.
    pub header: usize,
    /// Lowest instruction address in the region.
    pub address: u32,
    pub cycles: u64,
    /// Times control enters the region.
    pub invocations: u64,
    pub est_area: u64,
    pub addr_set: Vec<Footprint>,
    pub suitability: f64,
    /// Enclosing region, when nested.
    pub parent: Option<usize>,
    pub name: String,
}

impl Region {
    /// A detached region over the single block `id`, fully suitable and
    /// with no memory accesses. Used for planning what-ifs and tests.
    pub fn new(id: usize, kind: RegionKind, cycles: u64, est_area: u64) -> Self {
        Region {
            id,
            kind,
            proc: 0,
            blocks: [id].into(),
            header: id,
            address: id as u32 * 4,
            cycles,
            invocations: 1,
            est_area,
            addr_set: Vec::new(),
            suitability: 1.0,
            parent: None,
            name: format!("R{id}"),
        }
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.proc == other.proc && self.blocks.iter().any(|b| other.blocks.contains(b))
    }

    pub fn aliases(&self, other: &Region) -> bool {
        self.addr_set.iter().any(|a| other.addr_set.iter().any(|b| a.overlaps(b)))
    }
}

/// One region per loop (innermost first within each nest) and one per
/// procedure body outside its loops, numbered in that order.
pub fn enumerate_regions(program: &Program, profile: &Profile, layout: &DataLayout, table: &AreaTable) -> Vec<Region> {
    let mut out: Vec<Region> = Vec::new();
    for (pi, g) in program.procs.iter().enumerate() {
        let ranges = value_ranges(g);
        let mut loop_ids: BTreeMap<usize, usize> = BTreeMap::new();
        let mut nests: Vec<(usize, &Structure, Option<usize>)> = Vec::new();
        walk(&g.structure.root, None, 0, &mut nests);
        // Post-order: children before their enclosing loop.
        nests.sort_by_key(|&(depth, r, _)| (core::cmp::Reverse(depth), r.header));
        let mut in_loops: BTreeSet<usize> = BTreeSet::new();
        for &(_, r, _) in &nests {
            let blocks: BTreeSet<usize> = r.blocks.iter().copied().filter(|&b| !g.blocks[b].synthetic).collect();
            in_loops.extend(&blocks);
            let id = out.len();
            loop_ids.insert(r.header, id);
            out.push(make_region(id, RegionKind::Loop, pi, g, blocks, r.header, profile, layout, table, &ranges));
        }
        for &(_, r, parent) in &nests {
            if let Some(p) = parent {
                out[loop_ids[&r.header]].parent = Some(loop_ids[&p]);
            }
        }
        let rest: BTreeSet<usize> =
            (0..g.blocks.len()).filter(|b| !g.blocks[*b].synthetic && !in_loops.contains(b)).collect();
        if let Some(&first) = rest.iter().min_by_key(|&&b| g.blocks[b].start) {
            let id = out.len();
            out.push(make_region(id, RegionKind::ProcedureBody, pi, g, rest, first, profile, layout, table, &ranges));
        }
    }
    out
}

fn walk<'a>(
    r: &'a Structure,
    parent: Option<usize>,
    depth: usize,
    out: &mut Vec<(usize, &'a Structure, Option<usize>)>,
) {
    let (next_parent, next_depth) = if r.is_loop() {
        out.push((depth, r, parent));
        (Some(r.header), depth + 1)
    } else {
        (parent, depth)
    };
    for c in &r.children {
        walk(c, next_parent, next_depth, out);
    }
}

#[allow(clippy::too_many_arguments)]
fn make_region(
    id: usize,
    kind: RegionKind,
    proc: usize,
    g: &Cdfg,
    blocks: BTreeSet<usize>,
    header: usize,
    profile: &Profile,
    layout: &DataLayout,
    table: &AreaTable,
    ranges: &BTreeMap<NodeId, (i64, i64)>,
) -> Region {
    let addrs: BTreeSet<u32> = blocks.iter().flat_map(|&b| g.blocks[b].addrs.iter().copied()).collect();
    let cycles = profile.cycles_of(&addrs);
    let address = addrs.iter().next().copied().unwrap_or(g.blocks[header].start);
    let invocations = invocations(profile, &addrs, g.blocks[header].start);
    let mut addr_set: Vec<Footprint> = Vec::new();
    for &n in blocks.iter().flat_map(|&b| &g.blocks[b].ops) {
        let node = g.node(n);
        let (offset, width) = match node.kind {
            OpKind::Load { offset, width, .. } | OpKind::Store { offset, width } => {
                (offset as i64, width.bytes() as i64)
            }
            _ => continue,
        };
        let fp = footprint(g, node.operands[0], offset, width, layout, ranges);
        if !addr_set.contains(&fp) {
            addr_set.push(fp);
        }
    }
    addr_set.sort();
    let name = match kind {
        RegionKind::Loop => format!("{}:loop@{:#010x}", g.name, g.blocks[header].start),
        _ => format!("{}:{}", g.name, kind),
    };
    Region {
        id,
        kind,
        proc,
        est_area: table.estimate(g, &blocks),
        suitability: hardware_suitability(g, &blocks),
        blocks,
        header,
        address,
        cycles,
        invocations,
        addr_set,
        parent: None,
        name,
    }
}

/// Profile edges entering the region's instructions from outside, plus the
/// executions of the machine block containing the header when the header
/// does not start one.
fn invocations(profile: &Profile, addrs: &BTreeSet<u32>, header: u32) -> u64 {
    let mut n: u64 = profile
        .edge_counts
        .iter()
        .filter(|((from, to), _)| addrs.contains(to) && !addrs.contains(from))
        .map(|(_, &c)| c)
        .sum();
    if !profile.block_counts.contains_key(&header) {
        if let Some((&leader, &count)) = profile.block_counts.range(..=header).next_back() {
            if !addrs.contains(&leader) {
                n += count;
            }
        }
    }
    n
}

fn footprint(
    g: &Cdfg,
    base: NodeId,
    offset: i64,
    width: i64,
    layout: &DataLayout,
    ranges: &BTreeMap<NodeId, (i64, i64)>,
) -> Footprint {
    if let Some(&(lo, hi)) = ranges.get(&base) {
        let (lo, hi) = (lo + offset, hi + offset);
        if let Some((s, e, name)) = layout.object_at(lo) {
            if hi + width <= *e as i64 {
                let s = *s as i64;
                return Footprint { base: AddrBase::Symbol(name.clone()), lo: lo - s, hi: hi - s, width };
            }
        }
    }
    // Unbounded index: assume it stays inside the object its constant
    // part points into.
    let mut terms = Vec::new();
    add_terms(g, base, &mut terms, 0);
    let objects: BTreeSet<&(u32, u32, String)> =
        terms.iter().filter_map(|&c| layout.object_at(c as i64 + offset)).collect();
    if objects.len() == 1 {
        let (s, e, name) = objects.into_iter().next().unwrap();
        return Footprint { base: AddrBase::Symbol(name.clone()), lo: 0, hi: (*e - *s) as i64 - width, width };
    }
    Footprint::top()
}

/// Constant terms of an add tree.
fn add_terms(g: &Cdfg, n: NodeId, out: &mut Vec<u32>, depth: usize) {
    let node = g.node(n);
    match node.kind {
        OpKind::Const(c) => out.push(c),
        OpKind::Add | OpKind::Copy if depth < 16 => {
            for &o in &node.operands {
                add_terms(g, o, out, depth + 1);
            }
        }
        _ => {}
    }
}

/// Inclusive unsigned value ranges of address arithmetic over constants and
/// bounded induction variables.
fn value_ranges(g: &Cdfg) -> BTreeMap<NodeId, (i64, i64)> {
    let mut iv: BTreeMap<NodeId, (i64, i64)> = BTreeMap::new();
    for r in g.structure.loops() {
        for ind in &r.inductions {
            let (Some(init), Some(b)) = (ind.init, ind.bound.as_ref()) else { continue };
            let init = init as i64;
            let step = ind.step as i64;
            if let Some(trips) = ind.trip_count() {
                let last = init + (trips as i64 - 1) * step;
                iv.insert(ind.phi, (init.min(last), init.max(last)));
            } else if let (Some(v), OpKind::Slt | OpKind::Sltu) = (b.value, b.compare) {
                // The phi stays below the bound inside the body; allow one
                // step of slack for the exiting evaluation.
                let v = if b.compare == OpKind::Slt { v as i32 as i64 } else { v as i64 };
                if step > 0 && v >= init {
                    iv.insert(ind.phi, (init, v + step));
                }
            }
        }
    }
    let mut out: BTreeMap<NodeId, (i64, i64)> = BTreeMap::new();
    for b in &g.blocks {
        for &n in &b.ops {
            if let Some(r) = range_of(g, n, &iv, &out) {
                out.insert(n, r);
            }
        }
    }
    out
}

fn range_of(
    g: &Cdfg,
    n: NodeId,
    iv: &BTreeMap<NodeId, (i64, i64)>,
    known: &BTreeMap<NodeId, (i64, i64)>,
) -> Option<(i64, i64)> {
    let node = g.node(n);
    let r = |i: usize| known.get(&node.operands[i]).copied();
    let c = |i: usize| g.const_value(node.operands[i]).map(|v| v as i64);
    let res = match node.kind {
        OpKind::Const(v) => (v as i64, v as i64),
        OpKind::Phi => *iv.get(&n)?,
        OpKind::Copy => r(0)?,
        OpKind::Add => {
            let (a, b) = (r(0)?, r(1)?);
            (a.0 + b.0, a.1 + b.1)
        }
        OpKind::Sub => {
            let (a, k) = (r(0)?, c(1)?);
            (a.0 - k, a.1 - k)
        }
        OpKind::Or | OpKind::Xor => {
            let (a, b) = (r(0)?, r(1)?);
            if a.0 != a.1 || b.0 != b.1 {
                return None;
            }
            let v = crate::ir::eval_binary(node.kind, a.0 as u32, b.0 as u32) as i64;
            (v, v)
        }
        OpKind::Shl => {
            let (a, k) = (r(0)?, c(1)?);
            if k > 20 {
                return None;
            }
            (a.0 << k, a.1 << k)
        }
        OpKind::Mul => {
            let (a, k) = (r(0)?, c(1)?);
            if k > 1 << 20 {
                return None;
            }
            (a.0 * k, a.1 * k)
        }
        _ => return None,
    };
    (res.0 >= 0 && res.1 <= u32::MAX as i64).then_some(res)
}

/// Symmetric alias relation and its transitive closure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AliasSets {
    pub pairs: BTreeSet<(usize, usize)>,
    /// Connected components, by region id.
    pub groups: Vec<BTreeSet<usize>>,
}

impl AliasSets {
    pub fn alias(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn group_of(&self, r: usize) -> Option<&BTreeSet<usize>> {
        self.groups.iter().find(|g| g.contains(&r))
    }
}

pub fn compute_alias_sets(regions: &[Region]) -> AliasSets {
    let mut pairs = BTreeSet::new();
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.aliases(b) {
                pairs.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    let mut parent: BTreeMap<usize, usize> = regions.iter().map(|r| (r.id, r.id)).collect();
    fn find(p: &mut BTreeMap<usize, usize>, x: usize) -> usize {
        let mut r = x;
        while p[&r] != r {
            r = p[&r];
        }
        p.insert(x, r);
        r
    }
    for &(a, b) in &pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in regions {
        let root = find(&mut parent, r.id);
        groups.entry(root).or_default().insert(r.id);
    }
    AliasSets { pairs, groups: groups.into_values().collect() }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fps: Vec<String> = self.addr_set.iter().map(|a| a.to_string()).collect();
        write!(
            f,
            "region {} {} {} cycles {} gates {} suit {:.3} mem {}",
            self.id,
            self.kind,
            self.name,
            self.cycles,
            self.est_area,
            self.suitability,
            if fps.is_empty() { String::from("-") } else { fps.join(" ") }
        )
    }
}
