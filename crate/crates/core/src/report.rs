//! Platform metrics: application and kernel speedup, energy, area.
//!
//! Execution is sequential: while a hardware region runs the processor
//! waits, so no time is overlapped and the idle-power slack term is zero.
//! Communication is charged to the processor, per invocation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::partition::{PartitionResult, PlatformModel, Tag};
use crate::passes::PassReport;

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMetrics {
    pub id: usize,
    pub name: String,
    pub tag: Tag,
    /// Profiled processor cycles the region accounted for.
    pub sw_cycles: u64,
    /// Measured FPGA cycles over the whole run.
    pub hw_cycles: u64,
    pub invocations: u64,
    pub gates: u64,
    pub sw_time_s: f64,
    pub hw_time_s: f64,
    pub comm_time_s: f64,
    /// `sw_time_s / (hw_time_s + comm_time_s)`; `None` when both are zero.
    pub kernel_speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub total_cycles: u64,
    /// Fraction of profiled cycles moved to hardware.
    pub hw_fraction: f64,
    pub sw_only_time_s: f64,
    pub partitioned_time_s: f64,
    pub app_speedup: f64,
    pub regions: Vec<RegionMetrics>,
    pub energy_sw_j: f64,
    pub energy_partitioned_j: f64,
    pub energy_savings_fraction: f64,
    pub area_gates: u64,
    pub platform: PlatformModel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    /// A hardware region has no measured cycle count.
    MissingHwCycles(usize),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::MissingHwCycles(id) => write!(f, "no hardware cycle count for region {id}"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// `hw_cycles` maps region ids to FPGA cycles measured over the profiled
/// run; invocation counts come from the profile via the regions.
pub fn compute_metrics(
    partition: &PartitionResult,
    hw_cycles: &BTreeMap<usize, u64>,
    platform: &PlatformModel,
) -> Result<MetricsReport, MetricsError> {
    let cpu = platform.cpu_clock_hz as f64;
    let fpga = platform.fpga_clock_hz as f64;
    let total = partition.total_cycles;
    let mut regions = Vec::new();
    let mut moved = 0u64;
    let mut hw_time = 0.0;
    let mut comm_time = 0.0;
    for sel in &partition.hw_regions {
        let r = &sel.region;
        let cycles = *hw_cycles.get(&r.id).ok_or(MetricsError::MissingHwCycles(r.id))?;
        let sw_time_s = r.cycles as f64 / cpu;
        let hw_time_s = cycles as f64 / fpga;
        let comm_time_s = (r.invocations * platform.comm_cycles_per_invocation) as f64 / cpu;
        let denom = hw_time_s + comm_time_s;
        regions.push(RegionMetrics {
            id: r.id,
            name: r.name.clone(),
            tag: sel.tag,
            sw_cycles: r.cycles,
            hw_cycles: cycles,
            invocations: r.invocations,
            gates: r.est_area,
            sw_time_s,
            hw_time_s,
            comm_time_s,
            kernel_speedup: (denom > 0.0).then(|| sw_time_s / denom),
        });
        moved += r.cycles;
        hw_time += hw_time_s;
        comm_time += comm_time_s;
    }
    let sw_only = total as f64 / cpu;
    let cpu_time = total.saturating_sub(moved) as f64 / cpu + comm_time;
    let partitioned = cpu_time + hw_time;
    let power = &platform.power;
    let energy_sw = power.cpu_active_w * sw_only;
    let energy_part = power.cpu_active_w * cpu_time + power.fpga_active_w * hw_time;
    Ok(MetricsReport {
        total_cycles: total,
        hw_fraction: if total == 0 { 0.0 } else { moved as f64 / total as f64 },
        sw_only_time_s: sw_only,
        partitioned_time_s: partitioned,
        app_speedup: if partitioned > 0.0 { sw_only / partitioned } else { 1.0 },
        regions,
        energy_sw_j: energy_sw,
        energy_partitioned_j: energy_part,
        energy_savings_fraction: if energy_sw > 0.0 { 1.0 - energy_part / energy_sw } else { 0.0 },
        area_gates: partition.total_area,
        platform: platform.clone(),
    })
}

fn us(s: f64) -> String {
    format!("{:.3}", s * 1e6)
}

/// Plain-text report: platform, pass summary, one row per hardware region,
/// then totals. Times are microseconds, energies microjoules.
pub fn render_report(m: &MetricsReport, passes: Option<&PassReport>) -> String {
    let mut o = String::new();
    let p = &m.platform;
    let _ = writeln!(o, "== binpart report ==");
    let _ = writeln!(
        o,
        "platform: cpu {} Hz, fpga {} Hz, capacity {} gates, comm {} cycles/invocation",
        p.cpu_clock_hz, p.fpga_clock_hz, p.area_capacity_gates, p.comm_cycles_per_invocation
    );
    let _ = writeln!(
        o,
        "power: cpu {} W, fpga {} W, idle {} W",
        p.power.cpu_active_w, p.power.fpga_active_w, p.power.idle_w
    );
    if let Some(r) = passes {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &r.stages {
            if let Some(pass) = s.pass {
                *counts.entry(pass.name()).or_default() += s.rewrites.len();
            }
        }
        let list: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(o, "passes: {}", list.join(" "));
    }
    let _ = writeln!(o);
    if m.regions.is_empty() {
        let _ = writeln!(o, "software-only: no region was moved to hardware");
    } else {
        let _ = writeln!(
            o,
            "{:>4} {:<12} {:>10} {:>10} {:>6} {:>7} {:>12} {:>12} {:>12} {:>9}  name",
            "id", "tag", "sw-cycles", "hw-cycles", "inv", "gates", "sw-us", "hw-us", "comm-us", "kernel-x"
        );
        for r in &m.regions {
            let kx = r.kernel_speedup.map_or(String::from("-"), |k| format!("{k:.2}"));
            let _ = writeln!(
                o,
                "{:>4} {:<12} {:>10} {:>10} {:>6} {:>7} {:>12} {:>12} {:>12} {:>9}  {}",
                r.id,
                format!("{}", r.tag),
                r.sw_cycles,
                r.hw_cycles,
                r.invocations,
                r.gates,
                us(r.sw_time_s),
                us(r.hw_time_s),
                us(r.comm_time_s),
                kx,
                r.name
            );
        }
    }
    let _ = writeln!(o);
    let _ = writeln!(o, "total-cycles        {}", m.total_cycles);
    let _ = writeln!(o, "hw-fraction         {:.4}", m.hw_fraction);
    let _ = writeln!(o, "area-gates          {}", m.area_gates);
    let _ = writeln!(o, "sw-only-us          {}", us(m.sw_only_time_s));
    let _ = writeln!(o, "partitioned-us      {}", us(m.partitioned_time_s));
    let _ = writeln!(o, "app-speedup         {:.3}", m.app_speedup);
    let _ = writeln!(o, "energy-sw-uj        {}", us(m.energy_sw_j));
    let _ = writeln!(o, "energy-part-uj      {}", us(m.energy_partitioned_j));
    let _ = writeln!(o, "energy-savings      {:.1}%", m.energy_savings_fraction * 100.0);
    o
}
