//! The end-to-end flow shared by the subcommands: decompile and optimize,
//! enumerate and partition regions, synthesize, co-simulate, report.

use std::collections::BTreeMap;

use binpart_core::decompile::{decompile_program, execute_program, execute_with_hook, ExecOptions};
use binpart_core::ir::Program;
use binpart_core::isa::ProgramImage;
use binpart_core::partition::{
    enumerate_regions, partition, AreaTable, DataLayout, PartitionConfig, PartitionResult, PlatformModel, Region,
    Selected,
};
use binpart_core::passes::{run_program_pipeline, Pass, PassConfig, PassReport};
use binpart_core::report::{compute_metrics, render_report, MetricsReport};
use binpart_core::sim::Profile;
use binpart_core::synth::{synthesize, HardwareHook, HwRegion, ResourceSet, SynthError, Synthesis};

use crate::error::Error;

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub passes: PassConfig,
    pub partition: PartitionConfig,
    pub resources: ResourceSet,
    pub area: AreaTable,
    pub max_steps: u64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            passes: PassConfig::default(),
            partition: PartitionConfig::default(),
            resources: ResourceSet::default(),
            area: AreaTable::default(),
            max_steps: 10_000_000,
        }
    }
}

/// Parses a comma-separated pass list; empty means no passes.
pub fn parse_pass_list(list: &str) -> Result<Vec<Pass>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Pass::from_name(s).ok_or_else(|| Error::BadOption(format!("unknown pass `{s}`"))))
        .collect()
}

/// A decompiled program after the pass pipeline.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub program: Program,
    pub passes: PassReport,
    pub layout: DataLayout,
}

pub fn analyse(image: &ProgramImage, passes: &PassConfig) -> Result<Analysis, Error> {
    let mut program = decompile_program(image)?;
    let report = run_program_pipeline(&mut program, passes, |_, _| {})?;
    Ok(Analysis { program, passes: report, layout: DataLayout::from_image(image) })
}

/// Regions of the program. Regions the synthesizer cannot implement with
/// `resources` are marked unsuitable so the partitioner passes over them.
pub fn candidate_regions(a: &Analysis, profile: &Profile, opts: &FlowOptions) -> Vec<Region> {
    let mut regions = enumerate_regions(&a.program, profile, &a.layout, &opts.area);
    for r in &mut regions {
        if r.suitability > 0.0 && synthesize(&a.program.procs[r.proc], &r.blocks, &opts.resources, &r.name).is_err() {
            r.suitability = 0.0;
        }
    }
    regions
}

pub fn partition_program(
    a: &Analysis,
    profile: &Profile,
    platform: &PlatformModel,
    opts: &FlowOptions,
) -> Result<PartitionResult, Error> {
    let regions = candidate_regions(a, profile, opts);
    Ok(partition(&regions, profile.total_cycles, platform, &opts.partition)?)
}

/// Hardware name of a region: `<image>_<region-id>`.
pub fn region_file_stem(image_stem: &str, id: usize) -> String {
    format!("{image_stem}_{id}")
}

pub struct HwPlan {
    pub selected: Selected,
    pub synthesis: Synthesis,
}

pub fn synthesize_partition(
    a: &Analysis,
    part: &PartitionResult,
    resources: &ResourceSet,
    image_stem: &str,
) -> Result<Vec<HwPlan>, Error> {
    part.hw_regions
        .iter()
        .map(|sel| {
            let r = &sel.region;
            let name = region_file_stem(image_stem, r.id);
            synthesize(&a.program.procs[r.proc], &r.blocks, resources, &name)
                .map(|synthesis| HwPlan { selected: sel.clone(), synthesis })
                .map_err(|source: SynthError| Error::Synthesis { region: r.id, source })
        })
        .collect()
}

/// Runs the program with every planned region on simulated hardware, checks
/// the outputs against the software-only run, and returns the FPGA cycles
/// spent per region id.
pub fn measure(a: &Analysis, plans: &[HwPlan], inputs: &[u32], max_steps: u64) -> Result<BTreeMap<usize, u64>, Error> {
    let opts = ExecOptions::new(max_steps);
    let sw = execute_program(&a.program, inputs, opts);
    let regions = plans.iter().map(|p| HwRegion::new(p.selected.region.proc, p.synthesis.clone())).collect();
    let mut hook = HardwareHook::new(regions);
    let hw = execute_with_hook(&a.program, inputs, opts, &mut hook);
    if hw.outputs != sw.outputs || hw.exit_reason != sw.exit_reason {
        return Err(Error::Verify(format!(
            "hardware run gave {:?} ({:?}), software gave {:?} ({:?})",
            hw.outputs, hw.exit_reason, sw.outputs, sw.exit_reason
        )));
    }
    Ok(plans.iter().zip(&hook.regions).map(|(p, h)| (p.selected.region.id, h.hw_cycles)).collect())
}

/// Everything the `report` command produces for one platform.
pub struct ReportRun {
    pub partition: PartitionResult,
    pub plans: Vec<HwPlan>,
    pub hw_cycles: BTreeMap<usize, u64>,
    pub metrics: MetricsReport,
    pub text: String,
}

pub fn report(
    a: &Analysis,
    profile: &Profile,
    platform: &PlatformModel,
    inputs: &[u32],
    image_stem: &str,
    opts: &FlowOptions,
) -> Result<ReportRun, Error> {
    let part = partition_program(a, profile, platform, opts)?;
    let plans = synthesize_partition(a, &part, &opts.resources, image_stem)?;
    let hw_cycles = measure(a, &plans, inputs, opts.max_steps)?;
    let metrics = compute_metrics(&part, &hw_cycles, platform)?;
    let text = render_report(&metrics, Some(&a.passes));
    Ok(ReportRun { partition: part, plans, hw_cycles, metrics, text })
}

/// Sets `key` to `raw`, accepting `40e6`-style values for integer keys.
pub fn set_platform_value(p: &mut PlatformModel, key: &str, raw: &str) -> Result<(), Error> {
    let bad = || Error::BadOption(format!("bad platform value `{key}={raw}`"));
    match p.set(key, raw) {
        Ok(()) => {}
        Err(true) => return Err(bad()),
        Err(false) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            if !(v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64) {
                return Err(bad());
            }
            p.set(key, &format!("{}", v as u64)).map_err(|_| bad())?;
        }
    }
    p.validate().map_err(|e| Error::BadOption(e.to_string()))
}

/// The value of `key` as the platform file would spell it.
pub fn platform_value(p: &PlatformModel, key: &str) -> String {
    let text = p.to_text();
    let line = text.lines().find(|l| l.split(" = ").next() == Some(key));
    line.and_then(|l| l.split(" = ").nth(1)).unwrap_or_default().to_string()
}

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), Error> {
    let (k, vs) =
        spec.split_once('=').ok_or_else(|| Error::BadOption(format!("bad sweep `{spec}`: expected key=v1,v2")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() || !PlatformModel::KEYS.contains(&k.trim()) {
        return Err(Error::BadOption(format!("bad sweep `{spec}`")));
    }
    Ok((k.trim().to_string(), values))
}

/// One report per value of `key`, plus a summary table.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    a: &Analysis,
    profile: &Profile,
    base: &PlatformModel,
    key: &str,
    values: &[String],
    inputs: &[u32],
    image_stem: &str,
    opts: &FlowOptions,
) -> Result<(Vec<ReportRun>, String), Error> {
    let mut runs = Vec::new();
    let mut table =
        format!("sweep {key}\n{:>14} {:>12} {:>15} {:>11}\n", "value", "app-speedup", "energy-savings", "hw-regions");
    for v in values {
        let mut p = base.clone();
        set_platform_value(&mut p, key, v)?;
        let run = report(a, profile, &p, inputs, image_stem, opts)?;
        let shown = platform_value(&p, key);
        table += &format!(
            "{:>14} {:>12.3} {:>14.1}% {:>11}\n",
            shown,
            run.metrics.app_speedup,
            run.metrics.energy_savings_fraction * 100.0,
            run.partition.hw_regions.len()
        );
        runs.push(run);
    }
    Ok((runs, table))
}
