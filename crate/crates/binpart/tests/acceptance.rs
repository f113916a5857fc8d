//! The ten acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line on stderr, which the harness does not
//! capture, so `cargo test --test acceptance` shows the full scorecard.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use binpart::code;
use binpart::flow::{self, FlowOptions};
use binpart_core::corpus::by_name;
use binpart_core::decompile::dom::{compute_dominators, BlockGraph};
use binpart_core::decompile::{
    decompile_program, execute_cdfg, execute_program, execute_with_hook, DecompileError, ExecOptions,
};
use binpart_core::ir::{BlockId, Cdfg, NodeId, OpKind, Terminator};
use binpart_core::partition::{
    check, partition, AddrBase, Footprint, PartitionConfig, PartitionResult, PlatformModel, Region, RegionKind, Tag,
};
use binpart_core::passes::{canonical_shift_add, expand_shift_add, run_pass, run_program_pipeline, Pass, PassConfig};
use binpart_core::report::compute_metrics;
use binpart_core::sim;
use binpart_core::synth::{
    apply_shift_add, block_dag, check_vhdl, shift_add_form, synthesize, Dag, FuClass, HardwareHook, HwRegion,
    ResourceSet, SynthError,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs `body`, reports the outcome, and re-raises a failure.
fn criterion(n: u8, title: &str, body: impl FnOnce() -> String) {
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let line = match &outcome {
        Ok(detail) => format!("criterion {n:>2}: PASS  {title} ({detail})\n"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| e.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            format!("criterion {n:>2}: FAIL  {title}: {}\n", msg.lines().next().unwrap_or(""))
        }
    };
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    if let Err(e) = outcome {
        resume_unwind(e);
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, p: &binpart_core::corpus::CorpusProgram) -> Vec<u32> {
    (0..p.arity).map(|_| rng.gen_range(p.range.0..=p.range.1) as u32).collect()
}

#[test]
fn c01_end_to_end_equivalence() {
    criterion(1, "simulator == CDFG after every pass == RTL co-simulation", || {
        let start = Instant::now();
        let (mut programs, mut runs, mut regions) = (0, 0, 0);
        for p in decompilable() {
            let img = image(p);
            let expect: Vec<_> = p.samples.iter().map(|s| sim::run(&img, s, MAX_STEPS)).collect();
            let mut prog = decompile_program(&img).unwrap();
            let check_all = |stage: &str, prog: &binpart_core::ir::Program, runs: &mut usize| {
                for (s, e) in p.samples.iter().zip(&expect) {
                    let got = execute_program(prog, s, ExecOptions::new(MAX_STEPS));
                    assert_eq!(got.outputs, e.outputs, "{} after {stage}", p.name);
                    assert_eq!(got.exit_reason, e.exit_reason, "{} after {stage}", p.name);
                    *runs += 1;
                }
            };
            check_all("decompilation", &prog, &mut runs);
            run_program_pipeline(&mut prog, &PassConfig::default(), |pass, prog| {
                check_all(pass.name(), prog, &mut runs)
            })
            .unwrap();

            // Every region the synthesizer accepts, one at a time.
            let a = analysis(p);
            let prof = profile(p);
            for r in flow::candidate_regions(&a, &prof, &FlowOptions::default()) {
                let s = match synthesize(&a.program.procs[r.proc], &r.blocks, &ResourceSet::default(), &r.name) {
                    Ok(s) => s,
                    Err(SynthError::Unsupported { .. } | SynthError::MultipleEntries(_)) => continue,
                    Err(e) => panic!("{} {}: {e}", p.name, r.name),
                };
                for (s_in, e) in p.samples.iter().zip(&expect) {
                    let mut hook = HardwareHook::new(vec![HwRegion::new(r.proc, s.clone())]);
                    let hw = execute_with_hook(&a.program, s_in, ExecOptions::new(MAX_STEPS), &mut hook);
                    assert_eq!(hw.outputs, e.outputs, "{} region {} in hardware", p.name, r.name);
                    assert_eq!(hw.exit_reason, e.exit_reason, "{} region {} in hardware", p.name, r.name);
                }
                regions += 1;
            }

            // The partition the default flow picks, all regions at once.
            let opts = FlowOptions::default();
            let part = flow::partition_program(&a, &prof, &PlatformModel::default(), &opts).unwrap();
            let plans = flow::synthesize_partition(&a, &part, &opts.resources, p.name).unwrap();
            for s in p.samples {
                flow::measure(&a, &plans, s, MAX_STEPS).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            }
            programs += 1;
        }
        let elapsed = start.elapsed();
        assert!(programs >= 10, "only {programs} programs");
        assert!(regions > 0);
        assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
        format!("{programs} programs, {runs} staged runs, {regions} hardware regions, {:.1}s", elapsed.as_secs_f64())
    });
}

fn single_input(build: impl FnOnce(&mut Cdfg, BlockId, NodeId) -> NodeId) -> (Cdfg, NodeId) {
    let mut g = Cdfg::new("t".into(), 0);
    let b = g.add_block(0, Terminator::Halt);
    let x = g.push(b, OpKind::Input, vec![], 0);
    let r = build(&mut g, b, x);
    g.push(b, OpKind::Output, vec![r], 0);
    (g, r)
}

#[test]
fn c02_strength_promotion() {
    criterion(2, "shift/add expansions promote back to mul(x, c)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let consts = [3u32, 5, 6, 7, 9, 10, 12, 100];
        for c in consts {
            let alt = canonical_shift_add(c);
            let (before, r) = single_input(|g, b, x| expand_shift_add(g, b, x, &alt, 0));
            let mut after = before.clone();
            run_pass(&mut after, Pass::Promote, &PassConfig::default());
            after.validate().unwrap();
            let node = after.node(r);
            assert_eq!(node.kind, OpKind::Mul, "x*{c} not promoted");
            assert_eq!(after.const_value(node.operands[1]), Some(c));
            for _ in 0..10_000 {
                let x: u32 = rng.gen();
                let want = x.wrapping_mul(c);
                assert_eq!(execute_cdfg(&before, &[x], 0, &[], 100).outputs, [want], "expansion of {c}");
                assert_eq!(execute_cdfg(&after, &[x], 0, &[], 100).outputs, [want], "promoted {c}");
            }
        }
        format!("{} constants x 10^4 inputs", consts.len())
    });
}

/// Entry block reading one input, a single region block, and an exit block
/// writing the region's result. Returns the graph and the region block.
fn one_block_region(build: impl FnOnce(&mut Cdfg, BlockId, NodeId) -> NodeId) -> (Cdfg, usize) {
    let mut g = Cdfg::new("t".into(), 0);
    let entry = g.add_block(0, Terminator::Halt);
    let x = g.push(entry, OpKind::Input, vec![], 0);
    let exit = g.add_block(0x1000, Terminator::Halt);
    let body = g.add_block(0x100, Terminator::Jump(exit));
    g.blocks[entry.index()].term = Terminator::Jump(body);
    let r = build(&mut g, body, x);
    g.push(exit, OpKind::Output, vec![r], 0);
    g.rebuild_preds();
    g.validate().unwrap();
    (g, body.index())
}

/// Minimum schedule length over every start-time assignment of `dag`.
fn brute_length(dag: &Dag, res: &ResourceSet) -> u32 {
    fn go(dag: &Dag, res: &ResourceSet, i: usize, starts: &mut Vec<u32>, best: &mut u32) {
        let cur = (0..i).map(|j| starts[j] + dag.ops[j].latency).max().unwrap_or(0);
        if cur >= *best {
            return;
        }
        if i == dag.ops.len() {
            *best = cur.max(1);
            return;
        }
        let op = &dag.ops[i];
        let est = op.preds.iter().map(|&p| starts[p] + dag.ops[p].latency).max().unwrap_or(0);
        for s in est..*best {
            let fits = (s..s + op.latency).all(|t| {
                let busy = (0..i)
                    .filter(|&j| dag.ops[j].class == op.class && starts[j] <= t && t < starts[j] + dag.ops[j].latency)
                    .count();
                (busy as u32) < res.count(op.class)
            });
            if fits {
                starts[i] = s;
                go(dag, res, i + 1, starts, best);
            }
        }
    }
    let serial: u32 = dag.ops.iter().map(|o| o.latency).sum::<u32>().max(1);
    let mut best = serial + 1;
    go(dag, res, 0, &mut vec![0; dag.ops.len()], &mut best);
    assert!(best <= serial, "no feasible schedule");
    best
}

#[test]
fn c03_strength_decision() {
    criterion(3, "multiplier vs shift/add choice is schedule-optimal", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cases = 0;
        for _ in 0..150 {
            let nmul = rng.gen_range(1..=3);
            let consts: Vec<u32> = (0..nmul).map(|_| [3u32, 5, 6, 7, 9, 10, 12][rng.gen_range(0..7)]).collect();
            let extra = rng.gen_range(0..=8 - 2 * nmul);
            let (g, b) = one_block_region(|g, b, x| {
                let mut vals = vec![x];
                for &c in &consts {
                    let src = vals[rng.gen_range(0..vals.len())];
                    let k = g.push(b, OpKind::Const(c), vec![], 0);
                    vals.push(g.push(b, OpKind::Mul, vec![src, k], 0));
                }
                for _ in 0..extra {
                    let a = vals[rng.gen_range(0..vals.len())];
                    let c = vals[rng.gen_range(0..vals.len())];
                    vals.push(g.push(b, OpKind::Add, vec![a, c], 0));
                }
                *vals.last().unwrap()
            });
            assert!(g.blocks[b].ops.len() <= 8);
            let mut r = ResourceSet::default();
            r.set_count(FuClass::Adder, rng.gen_range(1..4));
            r.set_count(FuClass::Shifter, rng.gen_range(1..3));
            r.set_latency(FuClass::Multiplier, rng.gen_range(1..4));
            let muls: Vec<NodeId> =
                g.blocks[b].ops.iter().copied().filter(|&n| g.node(n).kind == OpKind::Mul).collect();
            let mut best = u32::MAX;
            for mask in 0..1u32 << muls.len() {
                let mut t = g.clone();
                for (i, &n) in muls.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        let (x, alt) = shift_add_form(&t, n).unwrap();
                        apply_shift_add(&mut t, b, n, x, &alt);
                    }
                }
                best = best.min(brute_length(&block_dag(&t, b, &r), &r));
            }
            let blocks = BTreeSet::from([b]);
            let s = synthesize(&g, &blocks, &r, "small").unwrap();
            assert_eq!(s.schedule.total_steps(), best, "consts {consts:?}");
            cases += 1;
        }
        format!("{cases} random regions of at most 8 ops")
    });
}

fn loop_body_ops(g: &Cdfg) -> Vec<usize> {
    g.structure.loops().iter().map(|r| r.blocks.iter().map(|&b| g.blocks[b].ops.len()).sum()).collect()
}

fn trip_counts(g: &Cdfg) -> Vec<Option<u64>> {
    g.structure.loops().iter().map(|r| r.inductions.first().and_then(|iv| iv.trip_count())).collect()
}

#[test]
fn c04_loop_rerolling() {
    criterion(4, "unrolled_sum rerolls to one body, trip count x4", || {
        let p = by_name("unrolled_sum").unwrap();
        let img = image(p);
        let mut prog = decompile_program(&img).unwrap();
        let mut seen: Vec<(Pass, Vec<usize>, Vec<Option<u64>>)> = Vec::new();
        run_program_pipeline(&mut prog, &PassConfig::default(), |pass, prog| {
            seen.push((pass, loop_body_ops(&prog.procs[0]), trip_counts(&prog.procs[0])));
        })
        .unwrap();
        let at = seen.iter().position(|s| s.0 == Pass::Reroll).unwrap();
        let (before, after) = (&seen[at - 1], &seen[at]);
        assert_eq!((before.1.len(), after.1.len()), (1, 1), "loops {before:?} -> {after:?}");
        let (orig, body) = (before.1[0], after.1[0]);
        let (t0, t1) = (before.2[0].expect("trip count before"), after.2[0].expect("trip count after"));
        assert_eq!(t1, 4 * t0, "trip count {t0} -> {t1}");
        assert!(body <= orig.div_ceil(4) + 3, "body {orig} -> {body} ops");
        for s in p.samples {
            let want = sim::run(&img, s, MAX_STEPS);
            let got = execute_program(&prog, s, ExecOptions::new(MAX_STEPS));
            assert_eq!((got.outputs, got.exit_reason), (want.outputs, want.exit_reason));
        }
        format!("trip {t0} -> {t1}, body {orig} -> {body} ops")
    });
}

fn random_others(rng: &mut ChaCha8Rng, first_id: usize) -> Vec<Region> {
    (0..rng.gen_range(0..12))
        .map(|i| {
            let kind = if rng.gen_bool(0.3) { RegionKind::ProcedureBody } else { RegionKind::Loop };
            let mut r = Region::new(first_id + i, kind, rng.gen_range(0..10_000), rng.gen_range(1..40_000));
            r.suitability = rng.gen_range(0..=4) as f64 / 4.0;
            if rng.gen_bool(0.5) {
                let base = ["A", "B", "C"][rng.gen_range(0..3)];
                let lo = rng.gen_range(0..64) * 4;
                r.addr_set = vec![Footprint { base: AddrBase::Symbol(base.into()), lo, hi: lo + 64, width: 4 }];
            }
            r
        })
        .collect()
}

#[test]
fn c05_ninety_ten_selection() {
    criterion(5, "the 90% loop is picked first with Step1Hot", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let platform = PlatformModel::default();
        for trial in 0..100 {
            let mut regions = random_others(&mut rng, 1);
            let rest: u64 = regions.iter().map(|r| r.cycles).sum();
            let mut hot =
                Region::new(0, RegionKind::Loop, (rest * 9).max(1) + rng.gen_range(0..1000), rng.gen_range(1..=30_000));
            hot.suitability = 1.0;
            regions.insert(rng.gen_range(0..=regions.len()), hot);
            let total: u64 = regions.iter().map(|r| r.cycles).sum();
            let r = partition(&regions, total, &platform, &PartitionConfig::default()).unwrap();
            let first = r.hw_regions.first().unwrap_or_else(|| panic!("trial {trial}: nothing selected"));
            assert_eq!((first.region.id, first.tag), (0, Tag::Step1Hot), "trial {trial}");
        }

        // And on a real profile: hot_loop's kernel carries at least 90%.
        let p = by_name("hot_loop").unwrap();
        let a = analysis(p);
        let prof = profile(p);
        let r = flow::partition_program(&a, &prof, &platform, &FlowOptions::default()).unwrap();
        let first = &r.hw_regions[0];
        assert_eq!(first.tag, Tag::Step1Hot);
        assert!(first.region.cycles * 10 >= prof.total_cycles * 9, "{} of {}", first.region.cycles, prof.total_cycles);
        "100 perturbations plus hot_loop".into()
    });
}

fn loop_region(id: usize, cycles: u64, area: u64) -> Region {
    Region::new(id, RegionKind::Loop, cycles, area)
}

fn select(regions: &[Region], gates: u64) -> PartitionResult {
    let total = regions.iter().map(|r| r.cycles).sum();
    let p = PlatformModel { area_capacity_gates: gates, ..PlatformModel::default() };
    partition(regions, total, &p, &PartitionConfig::default()).unwrap()
}

#[test]
fn c06_area_safety_and_stop_rule() {
    criterion(6, "capacity is never exceeded; hand traces reproduce", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..1000 {
            let regions = random_others(&mut rng, 0);
            let total = regions.iter().map(|r| r.cycles).sum::<u64>().max(1);
            let gates = rng.gen_range(0..60_000);
            let platform = PlatformModel { area_capacity_gates: gates, ..PlatformModel::default() };
            let cfg = PartitionConfig { skip_and_continue: rng.gen_bool(0.5) };
            let r = partition(&regions, total, &platform, &cfg).unwrap();
            assert!(r.total_area <= gates, "trial {trial}: {} > {gates}", r.total_area);
            assert_eq!(r.total_area, r.hw_regions.iter().map(|s| s.region.est_area).sum::<u64>());
            assert!(check(&r, &platform).is_empty(), "trial {trial}: {:?}", check(&r, &platform));
        }

        let three = [loop_region(1, 90, 5000), loop_region(2, 8, 4000), loop_region(3, 2, 3000)];
        let r = select(&three, 8000);
        assert_eq!(r.ids(), [1], "capacity 8000");
        assert_eq!(r.hw_regions[0].tag, Tag::Step1Hot);
        assert!(select(&three, 0).hw_regions.is_empty(), "capacity 0");
        // The 16000-gate variant the 13000 trace adds up to: L3 = 7000.
        let variant = [loop_region(1, 90, 5000), loop_region(2, 8, 4000), loop_region(3, 2, 7000)];
        assert_eq!(select(&variant, 13000).ids(), [1, 2], "capacity 13000, L3 = 7000");
        // The trace as written: L1, L2, then L3 is said not to fit.
        let r = select(&three, 13000);
        assert_eq!(
            r.ids(),
            [1, 2],
            "capacity 13000 hand trace expects {{L1, L2}}; 5000 + 4000 + 3000 = 12000 fits, so the rule selects {:?}",
            r.ids()
        );
        "1000 random sets, 3 hand traces".into()
    });
}

#[test]
fn c07_indirect_jump_failure() {
    criterion(7, "jump_table fails with IndirectJump and exit code 7", || {
        let p = by_name("jump_table").unwrap();
        let err = decompile_program(&image(p)).unwrap_err();
        assert!(matches!(err, DecompileError::IndirectJump { .. }), "{err:?}");
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = stage(dir.path(), p);
        let out = binpart(&["decomp".as_ref(), img.as_os_str()]);
        assert_eq!(out.status.code(), Some(code::INDIRECT_JUMP as i32));
        format!("exit code {}", code::INDIRECT_JUMP)
    });
}

#[test]
fn c08_metrics_trends() {
    criterion(8, "speedup falls with cpu clock; Amdahl gives 8.33", || {
        // Fixed hardware results from the default flow on hot_loop.
        let p = by_name("hot_loop").unwrap();
        let a = analysis(p);
        let opts = FlowOptions::default();
        let base = PlatformModel::default();
        let part = flow::partition_program(&a, &profile(p), &base, &opts).unwrap();
        assert!(!part.hw_regions.is_empty());
        let plans = flow::synthesize_partition(&a, &part, &opts.resources, p.name).unwrap();
        let hw = flow::measure(&a, &plans, p.samples[0], MAX_STEPS).unwrap();
        let speedups: Vec<f64> = [40_000_000u64, 200_000_000, 400_000_000]
            .iter()
            .map(|&hz| {
                compute_metrics(&part, &hw, &PlatformModel { cpu_clock_hz: hz, ..base.clone() }).unwrap().app_speedup
            })
            .collect();
        assert!(speedups[0] > speedups[1] && speedups[1] > speedups[2], "{speedups:?}");

        // f = 0.9 in one kernel 44.8x faster in hardware, no communication.
        let mut kernel = loop_region(1, 4032, 1000);
        kernel.suitability = 1.0;
        let filler = Region::new(2, RegionKind::ProcedureBody, 448, 1);
        let clocks = PlatformModel {
            cpu_clock_hz: 100_000_000,
            fpga_clock_hz: 100_000_000,
            comm_cycles_per_invocation: 0,
            ..base
        };
        let part = partition(
            &[kernel, filler],
            4480,
            &PlatformModel { area_capacity_gates: 1000, ..clocks.clone() },
            &PartitionConfig::default(),
        )
        .unwrap();
        assert_eq!(part.ids(), [1]);
        let m = compute_metrics(&part, &BTreeMap::from([(1, 90)]), &clocks).unwrap();
        assert!((m.regions[0].kernel_speedup.unwrap() - 44.8).abs() < 1e-9);
        assert!((m.app_speedup - 8.33).abs() <= 0.01, "{}", m.app_speedup);
        format!("{:.3} > {:.3} > {:.3}; Amdahl {:.3}", speedups[0], speedups[1], speedups[2], m.app_speedup)
    });
}

/// For each reachable block, the blocks on every simple path from the entry
/// to it, found by enumerating all such paths.
fn path_dominators(g: &BlockGraph) -> BTreeMap<usize, BTreeSet<usize>> {
    fn walk(g: &BlockGraph, path: &mut Vec<usize>, out: &mut BTreeMap<usize, BTreeSet<usize>>) {
        let b = *path.last().unwrap();
        let on_path: BTreeSet<usize> = path.iter().copied().collect();
        out.entry(b).and_modify(|s| s.retain(|x| on_path.contains(x))).or_insert(on_path);
        for &s in &g.succs[b] {
            if !path.contains(&s) {
                path.push(s);
                walk(g, path, out);
                path.pop();
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(g, &mut vec![g.entry], &mut out);
    out
}

#[test]
fn c09_dominators_and_widths() {
    criterion(9, "dominators match path enumeration; widths are sound", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let n = rng.gen_range(1..=12);
            let succs = (0..n).map(|_| (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..n)).collect()).collect();
            let g = BlockGraph { succs, entry: 0 };
            let (dom, _) = compute_dominators(&g);
            let oracle = path_dominators(&g);
            for b in 0..n {
                assert_eq!(dom.is_reachable(b), oracle.contains_key(&b), "trial {trial} block {b}");
                let Some(set) = oracle.get(&b) else { continue };
                for a in 0..n {
                    assert_eq!(dom.dominates(a, b), set.contains(&a), "trial {trial}: {a} dom {b}");
                }
            }
        }

        let mut runs = 0;
        for p in decompilable() {
            let a = analysis(p);
            let img = image(p);
            let masked = ExecOptions { max_steps: MAX_STEPS, mask_widths: true };
            for i in 0..10_000 {
                let inputs = random_inputs(&mut rng, p);
                let full = execute_program(&a.program, &inputs, ExecOptions::new(MAX_STEPS));
                let narrow = execute_program(&a.program, &inputs, masked);
                assert_eq!(
                    (&narrow.outputs, &narrow.exit_reason),
                    (&full.outputs, &full.exit_reason),
                    "{} {inputs:?}",
                    p.name
                );
                if i % 100 == 0 {
                    assert_eq!(full.outputs, sim::run(&img, &inputs, MAX_STEPS).outputs, "{} {inputs:?}", p.name);
                }
                runs += 1;
            }
        }
        format!("100 graphs, {runs} masked runs")
    });
}

#[test]
fn c10_vhdl_artifacts() {
    criterion(10, "emitted VHDL is well formed and matches the goldens", || {
        let mut files = 0;
        let mut problems = Vec::new();
        let mut expected: BTreeSet<String> = BTreeSet::new();
        for p in decompilable() {
            for (name, text) in emitted_vhdl(p) {
                if let Err(e) = check_vhdl(&text) {
                    problems.push(format!("{name}: {e:?}"));
                }
                if let Err(e) = golden(&name, &text) {
                    problems.push(e);
                }
                expected.insert(name);
                files += 1;
            }
        }
        let on_disk: BTreeSet<String> = std::fs::read_dir(golden_dir())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".vhd"))
            .collect();
        for stale in on_disk.difference(&expected) {
            problems.push(format!("{stale}: golden file without an emitted design"));
        }
        assert!(files > 0);
        assert!(problems.is_empty(), "{}", problems.join("; "));
        format!("{files} files")
    });
}
