//! Hardware/software partitioning.
//!
//! Selection runs in three steps over a flattened, block-disjoint view of
//! the candidate regions:
//!
//! 1. Loops by descending cycles while the selected cycles stay below 90% of
//!    the total, skipping loops that do not fit.
//! 2. Alias-group partners of each selected region, hottest first, when they
//!    fit.
//! 3. Everything else by descending `cycles * suitability`, stopping at the
//!    first region that does not fit (or skipping it, when configured).
//!
//! Regions with suitability 0 are never selected, and a region that shares
//! blocks with an already selected one is passed over in every step.

mod area;
mod regions;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

pub use area::{estimate_area, hardware_suitability, AreaTable};
pub use regions::{
    compute_alias_sets, enumerate_regions, AddrBase, AliasSets, DataLayout, Footprint, Region, RegionKind,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PowerModel {
    pub cpu_active_w: f64,
    pub fpga_active_w: f64,
    pub idle_w: f64,
}

/// Target platform. Clocks and power figures are positive; a capacity of 0
/// forces an all-software partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatformModel {
    pub cpu_clock_hz: u64,
    pub fpga_clock_hz: u64,
    pub area_capacity_gates: u64,
    /// CPU cycles spent per hardware region invocation.
    pub comm_cycles_per_invocation: u64,
    pub power: PowerModel,
}

impl Default for PlatformModel {
    fn default() -> Self {
        PlatformModel {
            cpu_clock_hz: 200_000_000,
            fpga_clock_hz: 100_000_000,
            area_capacity_gates: 30_000,
            comm_cycles_per_invocation: 100,
            power: PowerModel { cpu_active_w: 0.5, fpga_active_w: 0.3, idle_w: 0.05 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlatformError {
    Syntax { line: usize },
    UnknownKey { line: usize, key: String },
    BadValue { line: usize, key: String },
    NotPositive(&'static str),
}

impl fmt::Display for PlatformError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlatformError::Syntax { line } => write!(f, "line {line}: expected `key = value`"),
            PlatformError::UnknownKey { line, key } => write!(f, "line {line}: unknown key `{key}`"),
            PlatformError::BadValue { line, key } => write!(f, "line {line}: bad value for `{key}`"),
            PlatformError::NotPositive(k) => write!(f, "`{k}` must be positive"),
        }
    }
}

impl core::error::Error for PlatformError {}

impl PlatformModel {
    pub const KEYS: [&'static str; 7] = [
        "cpu_clock_hz",
        "fpga_clock_hz",
        "area_capacity_gates",
        "comm_cycles_per_invocation",
        "cpu_active_w",
        "fpga_active_w",
        "idle_w",
    ];

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PlatformError> {
        let mut p = PlatformModel::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or(PlatformError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            p.set(k, v).map_err(|unknown| {
                if unknown {
                    PlatformError::UnknownKey { line, key: k.into() }
                } else {
                    PlatformError::BadValue { line, key: k.into() }
                }
            })?;
        }
        p.validate()?;
        Ok(p)
    }

    /// `Err(true)` for an unknown key, `Err(false)` for a malformed value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), bool> {
        let int = || value.replace('_', "").parse::<u64>().map_err(|_| false);
        let real = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(false);
        match key {
            "cpu_clock_hz" => self.cpu_clock_hz = int()?,
            "fpga_clock_hz" => self.fpga_clock_hz = int()?,
            "area_capacity_gates" => self.area_capacity_gates = int()?,
            "comm_cycles_per_invocation" => self.comm_cycles_per_invocation = int()?,
            "cpu_active_w" => self.power.cpu_active_w = real()?,
            "fpga_active_w" => self.power.fpga_active_w = real()?,
            "idle_w" => self.power.idle_w = real()?,
            _ => return Err(true),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let checks = [
            ("cpu_clock_hz", self.cpu_clock_hz > 0),
            ("fpga_clock_hz", self.fpga_clock_hz > 0),
            ("cpu_active_w", self.power.cpu_active_w > 0.0),
            ("fpga_active_w", self.power.fpga_active_w > 0.0),
            ("idle_w", self.power.idle_w > 0.0),
        ];
        match checks.iter().find(|c| !c.1) {
            Some((k, _)) => Err(PlatformError::NotPositive(k)),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "cpu_clock_hz = {}\nfpga_clock_hz = {}\narea_capacity_gates = {}\ncomm_cycles_per_invocation = {}\ncpu_active_w = {}\nfpga_active_w = {}\nidle_w = {}\n",
            self.cpu_clock_hz,
            self.fpga_clock_hz,
            self.area_capacity_gates,
            self.comm_cycles_per_invocation,
            self.power.cpu_active_w,
            self.power.fpga_active_w,
            self.power.idle_w
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tag {
    Step1Hot,
    Step2Alias,
    Step3Greedy,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionConfig {
    /// Skip regions that do not fit in step 3 instead of stopping there.
    pub skip_and_continue: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selected {
    pub region: Region,
    pub tag: Tag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionResult {
    /// In selection order.
    pub hw_regions: Vec<Selected>,
    /// `(proc, block)` pairs left in software.
    pub sw_blocks: BTreeSet<(usize, usize)>,
    pub total_area: u64,
    pub total_cycles: u64,
    /// Broken result invariants; empty on success.
    pub violations: Vec<String>,
}

impl PartitionResult {
    pub fn hw_cycles(&self) -> u64 {
        self.hw_regions.iter().map(|s| s.region.cycles).sum()
    }

    pub fn sw_cycles(&self) -> u64 {
        self.total_cycles - self.hw_cycles()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.hw_regions.iter().map(|s| s.region.id).collect()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for h in &self.hw_regions {
            s += &format!("hw {} {} {} {}\n", h.region.id, h.tag, h.region.cycles, h.region.est_area);
        }
        s += &format!("sw-cycles {}\ntotal-gates {}\n", self.sw_cycles(), self.total_area);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartitionError {
    /// The profile recorded no cycles.
    EmptyProfile,
}

impl fmt::Display for PartitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionError::EmptyProfile => f.write_str("profile is empty"),
        }
    }
}

impl core::error::Error for PartitionError {}

/// Hotter first; ties go to the smaller region, then the lower address.
fn hotter(a: &Region, b: &Region) -> Ordering {
    b.cycles.cmp(&a.cycles).then(a.est_area.cmp(&b.est_area)).then(a.address.cmp(&b.address)).then(a.id.cmp(&b.id))
}

struct Selection<'a> {
    capacity: u64,
    area: u64,
    cycles: u64,
    chosen: Vec<(&'a Region, Tag)>,
}

impl<'a> Selection<'a> {
    fn has(&self, r: &Region) -> bool {
        self.chosen.iter().any(|(c, _)| c.id == r.id)
    }

    /// Already chosen, overlapping a chosen region, or unsynthesizable.
    fn ineligible(&self, r: &Region) -> bool {
        r.suitability <= 0.0 || self.chosen.iter().any(|(c, _)| c.id == r.id || c.overlaps(r))
    }

    fn fits(&self, r: &Region) -> bool {
        self.area + r.est_area <= self.capacity
    }

    fn take(&mut self, r: &'a Region, tag: Tag) {
        self.area += r.est_area;
        self.cycles += r.cycles;
        self.chosen.push((r, tag));
    }
}

/// Selects hardware regions. `total_cycles` is the whole program's profile
/// weight, which the 90% cutoff in step 1 refers to.
pub fn partition(
    regions: &[Region],
    total_cycles: u64,
    platform: &PlatformModel,
    config: &PartitionConfig,
) -> Result<PartitionResult, PartitionError> {
    if total_cycles == 0 {
        return Err(PartitionError::EmptyProfile);
    }
    let alias = compute_alias_sets(regions);
    let mut sel = Selection { capacity: platform.area_capacity_gates, area: 0, cycles: 0, chosen: Vec::new() };

    let mut loops: Vec<&Region> = regions.iter().filter(|r| r.kind == RegionKind::Loop).collect();
    loops.sort_by(|a, b| hotter(a, b));
    for r in loops {
        // cycles < 0.9 * total, in integers.
        if sel.cycles * 10 >= total_cycles * 9 {
            break;
        }
        if !sel.ineligible(r) && sel.fits(r) {
            sel.take(r, Tag::Step1Hot);
        }
    }

    let seeds: Vec<usize> = sel.chosen.iter().map(|(r, _)| r.id).collect();
    for seed in seeds {
        let mut partners: Vec<&Region> = regions
            .iter()
            .filter(|r| r.id != seed && alias.group_of(seed).is_some_and(|g| g.contains(&r.id)))
            .collect();
        partners.sort_by(|a, b| hotter(a, b));
        for r in partners {
            if !sel.ineligible(r) && sel.fits(r) {
                sel.take(r, Tag::Step2Alias);
            }
        }
    }

    let mut rest: Vec<&Region> = regions.iter().filter(|r| !sel.has(r)).collect();
    let score = |r: &Region| r.cycles as f64 * r.suitability;
    rest.sort_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| hotter(a, b)));
    for r in rest {
        if sel.ineligible(r) {
            continue;
        }
        if !sel.fits(r) {
            if config.skip_and_continue {
                continue;
            }
            break;
        }
        sel.take(r, Tag::Step3Greedy);
    }

    let hw: BTreeSet<(usize, usize)> =
        sel.chosen.iter().flat_map(|(r, _)| r.blocks.iter().map(move |&b| (r.proc, b))).collect();
    let sw_blocks =
        regions.iter().flat_map(|r| r.blocks.iter().map(move |&b| (r.proc, b))).filter(|k| !hw.contains(k)).collect();
    let mut result = PartitionResult {
        hw_regions: sel.chosen.iter().map(|&(r, tag)| Selected { region: r.clone(), tag }).collect(),
        sw_blocks,
        total_area: sel.area,
        total_cycles,
        violations: Vec::new(),
    };
    result.violations = check(&result, platform);
    Ok(result)
}

/// Result invariants: area within capacity, matching totals, and block
/// disjointness between and within the partitions.
pub fn check(result: &PartitionResult, platform: &PlatformModel) -> Vec<String> {
    let mut v = Vec::new();
    let sum: u64 = result.hw_regions.iter().map(|s| s.region.est_area).sum();
    if sum != result.total_area {
        v.push(format!("total area {} differs from the sum {}", result.total_area, sum));
    }
    if result.total_area > platform.area_capacity_gates {
        v.push(format!("area {} exceeds capacity {}", result.total_area, platform.area_capacity_gates));
    }
    let mut seen = BTreeSet::new();
    for s in &result.hw_regions {
        for &b in &s.region.blocks {
            if !seen.insert((s.region.proc, b)) {
                v.push(format!("block {b} selected twice"));
            }
            if result.sw_blocks.contains(&(s.region.proc, b)) {
                v.push(format!("block {b} in both partitions"));
            }
        }
    }
    v
}

#[cfg(test)]
mod tests;
