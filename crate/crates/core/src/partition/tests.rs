use super::*;
use crate::decompile::decompile_program;
use crate::ir::Program;
use crate::isa::assemble;
use crate::passes::{run_pipeline, PassConfig};
use crate::sim::{profile_run, CostTable, Profile};
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;

fn lp(id: usize, cycles: u64, area: u64) -> Region {
    Region::new(id, RegionKind::Loop, cycles, area)
}

fn cap(gates: u64) -> PlatformModel {
    PlatformModel { area_capacity_gates: gates, ..PlatformModel::default() }
}

fn select(regions: &[Region], gates: u64) -> PartitionResult {
    let total = regions.iter().map(|r| r.cycles).sum();
    partition(regions, total, &cap(gates), &PartitionConfig::default()).unwrap()
}

fn fp(base: &str, lo: i64, hi: i64) -> Footprint {
    Footprint { base: AddrBase::Symbol(base.into()), lo, hi, width: 4 }
}

fn three() -> Vec<Region> {
    vec![lp(1, 90, 5000), lp(2, 8, 4000), lp(3, 2, 3000)]
}

#[test]
fn hand_trace_capacity_8000() {
    let r = select(&three(), 8000);
    assert_eq!(r.ids(), vec![1]);
    assert_eq!(r.hw_regions[0].tag, Tag::Step1Hot);
    assert_eq!(r.total_area, 5000);
    assert!(r.violations.is_empty());
}

#[test]
fn hand_trace_capacity_13000() {
    // 5000 + 4000 + 3000 = 12000 fits, so the greedy step takes all three.
    let r = select(&three(), 13000);
    assert_eq!(r.ids(), vec![1, 2, 3]);
    let tags: Vec<Tag> = r.hw_regions.iter().map(|s| s.tag).collect();
    assert_eq!(tags, vec![Tag::Step1Hot, Tag::Step3Greedy, Tag::Step3Greedy]);
    assert_eq!(r.total_area, 12000);
}

#[test]
fn greedy_step_stops_at_first_misfit() {
    let mut regions = three();
    regions[2].est_area = 7000;
    let r = select(&regions, 13000);
    assert_eq!(r.ids(), vec![1, 2]);
    assert_eq!(r.total_area, 9000);
}

#[test]
fn skip_and_continue_passes_over_misfits() {
    let regions = vec![lp(1, 90, 5000), lp(2, 8, 9000), lp(3, 2, 3000)];
    assert_eq!(select(&regions, 13000).ids(), vec![1]);
    let total = 100;
    let cfg = PartitionConfig { skip_and_continue: true };
    assert_eq!(partition(&regions, total, &cap(13000), &cfg).unwrap().ids(), vec![1, 3]);
}

#[test]
fn zero_capacity_is_all_software() {
    let r = select(&three(), 0);
    assert!(r.hw_regions.is_empty());
    assert_eq!(r.sw_blocks.len(), 3);
    assert_eq!(r.report(), "sw-cycles 100\ntotal-gates 0\n");
}

#[test]
fn empty_profile_is_an_error() {
    let e = partition(&three(), 0, &cap(8000), &PartitionConfig::default());
    assert_eq!(e, Err(PartitionError::EmptyProfile));
}

#[test]
fn report_lines() {
    let r = select(&three(), 8000);
    assert_eq!(r.report(), "hw 1 Step1Hot 90 5000\nsw-cycles 10\ntotal-gates 5000\n");
}

#[test]
fn alias_partner_joins_in_step_two() {
    let mut regions = vec![lp(1, 80, 1000), lp(2, 15, 1000), lp(3, 1, 1000), lp(4, 4, 1000)];
    regions[0].addr_set = vec![fp("A", 0, 96)];
    regions[2].addr_set = vec![fp("A", 48, 200)];
    // Region 3 is colder than 2 and 4 but shares A with the hot loop.
    let r = select(&regions, 3000);
    assert_eq!(r.ids(), vec![1, 2, 3]);
    assert_eq!(r.hw_regions[2].tag, Tag::Step2Alias);
}

#[test]
fn step_one_stops_at_ninety_percent() {
    let regions = vec![lp(1, 60, 10), lp(2, 35, 10), lp(3, 5, 10)];
    let r = select(&regions, 25);
    assert_eq!(r.ids(), vec![1, 2]);
    assert!(r.hw_regions.iter().all(|s| s.tag == Tag::Step1Hot));
}

#[test]
fn ties_prefer_smaller_then_lower_address() {
    let regions = vec![lp(3, 50, 100), lp(2, 50, 100), lp(1, 50, 200)];
    assert_eq!(select(&regions, 100).ids(), vec![2]);
}

#[test]
fn unsuitable_and_overlapping_regions_are_passed_over() {
    let mut inner = lp(1, 80, 100);
    let mut outer = lp(2, 90, 300);
    outer.blocks = [1, 2].into();
    outer.cycles = 90;
    inner.parent = Some(2);
    let mut io = lp(3, 10, 10);
    io.suitability = 0.0;
    let regions = vec![inner, outer, io];
    let r = partition(&regions, 100, &cap(1000), &PartitionConfig::default()).unwrap();
    assert_eq!(r.ids(), vec![2]);
    assert!(r.violations.is_empty());
    let r = partition(&regions, 100, &cap(200), &PartitionConfig::default()).unwrap();
    assert_eq!(r.ids(), vec![1]);
}

#[test]
fn footprints_alias_on_bytes() {
    assert!(fp("A", 0, 96).overlaps(&fp("A", 48, 200)));
    assert!(!fp("A", 0, 96).overlaps(&fp("B", 0, 96)));
    assert!(!fp("A", 0, 96).overlaps(&fp("A", 100, 200)));
    assert!(fp("A", 0, 96).overlaps(&fp("A", 99, 200)));
    assert!(Footprint::top().overlaps(&fp("B", 0, 0)));
}

#[test]
fn alias_groups_are_transitive() {
    let mut regions = vec![lp(0, 1, 1), lp(1, 1, 1), lp(2, 1, 1), lp(3, 1, 1)];
    regions[0].addr_set = vec![fp("A", 0, 8)];
    regions[1].addr_set = vec![fp("A", 8, 8), fp("B", 0, 0)];
    regions[2].addr_set = vec![fp("B", 0, 16)];
    regions[3].addr_set = vec![fp("C", 0, 0)];
    let a = compute_alias_sets(&regions);
    assert!(a.alias(0, 1) && a.alias(2, 1) && !a.alias(0, 2));
    assert_eq!(a.group_of(0), a.group_of(2));
    assert_eq!(a.group_of(3).unwrap().len(), 1);
    regions[3].addr_set.push(Footprint::top());
    let a = compute_alias_sets(&regions);
    assert_eq!(a.pairs.len(), 5);
    assert_eq!(a.groups.len(), 1);
}

#[test]
fn platform_file_round_trips() {
    let p = PlatformModel::parse("# desk\ncpu_clock_hz = 40_000_000\nidle_w=0.1\n\n").unwrap();
    assert_eq!(p.cpu_clock_hz, 40_000_000);
    assert_eq!(p.power.idle_w, 0.1);
    assert_eq!(p.area_capacity_gates, 30_000);
    assert_eq!(PlatformModel::parse(&p.to_text()).unwrap(), p);
    assert_eq!(PlatformModel::parse("").unwrap(), PlatformModel::default());
}

#[test]
fn platform_file_errors() {
    assert_eq!(PlatformModel::parse("cpu_clock_hz 5"), Err(PlatformError::Syntax { line: 1 }));
    assert_eq!(PlatformModel::parse("\nspeed = 5"), Err(PlatformError::UnknownKey { line: 2, key: "speed".into() }));
    assert_eq!(PlatformModel::parse("idle_w = fast"), Err(PlatformError::BadValue { line: 1, key: "idle_w".into() }));
    assert_eq!(PlatformModel::parse("fpga_clock_hz = 0"), Err(PlatformError::NotPositive("fpga_clock_hz")));
    assert!(PlatformModel::parse("area_capacity_gates = 0").is_ok());
}

fn analyse(src: &str, inputs: &[u32]) -> (Program, Profile, Vec<Region>) {
    let image = assemble(src).unwrap();
    let (_, profile) = profile_run(&image, inputs, 1_000_000, &CostTable::default());
    let mut prog = decompile_program(&image).unwrap();
    for g in &mut prog.procs {
        let (out, _) = run_pipeline(g.clone(), &PassConfig::default()).unwrap();
        *g = out;
    }
    let regions = enumerate_regions(&prog, &profile, &DataLayout::from_image(&image), &AreaTable::default());
    (prog, profile, regions)
}

#[test]
fn straight_line_is_one_body() {
    let p = crate::corpus::by_name("straight_line").unwrap();
    let (_, profile, regions) = analyse(p.source, p.samples[0]);
    assert_eq!(regions.len(), 1);
    assert_eq!(regions[0].kind, RegionKind::ProcedureBody);
    assert_eq!(regions[0].cycles, profile.total_cycles);
}

#[test]
fn hot_loop_carries_ninety_percent() {
    let p = crate::corpus::by_name("hot_loop").unwrap();
    let (_, profile, regions) = analyse(p.source, p.samples[0]);
    let hot = regions.iter().filter(|r| r.kind == RegionKind::Loop).max_by_key(|r| r.cycles).unwrap();
    // 100 iterations of 7 one-cycle instructions.
    assert_eq!(hot.cycles, 700);
    assert_eq!(hot.invocations, 1);
    assert!(hot.cycles * 10 >= profile.total_cycles * 9, "{} of {}", hot.cycles, profile.total_cycles);
    let total: u64 = regions.iter().map(|r| r.cycles).sum();
    assert_eq!(total, profile.total_cycles);
    let r = partition(&regions, profile.total_cycles, &PlatformModel::default(), &PartitionConfig::default()).unwrap();
    assert_eq!(r.hw_regions[0].region.id, hot.id);
    assert_eq!(r.hw_regions[0].tag, Tag::Step1Hot);
}

#[test]
fn constant_stride_footprint() {
    let src = "
        .data 0x10000000
arr:    .space 400
        .text
main:   lui  $8, %hi(arr)
        ori  $8, $8, %lo(arr)
        addi $9, $0, 0
        addi $10, $0, 400
        addi $11, $0, 0
loop:   add  $12, $8, $9
        lw   $13, 0($12)
        add  $11, $11, $13
        addi $9, $9, 4
        bne  $9, $10, loop
        or   $4, $11, $0
        addi $2, $0, 1
        syscall
        addi $2, $0, 10
        syscall
";
    let (_, _, regions) = analyse(src, &[]);
    let l = regions.iter().find(|r| r.kind == RegionKind::Loop).unwrap();
    assert_eq!(l.addr_set, vec![fp("arr", 0, 396)]);
    assert_eq!(l.addr_set[0].to_string(), "(arr,[0,396])");
    assert_eq!(l.invocations, 1);
}

#[test]
fn corpus_alias_pair_groups_producer_and_consumer() {
    let p = crate::corpus::by_name("alias_pair").unwrap();
    let (_, _, regions) = analyse(p.source, p.samples[1]);
    let loops: Vec<&Region> = regions.iter().filter(|r| r.kind == RegionKind::Loop).collect();
    assert_eq!(loops.len(), 3);
    let (fill, sum, mix) = (loops[0], loops[1], loops[2]);
    assert_eq!(fill.addr_set, vec![fp("buf", 0, 60)]);
    assert_eq!(mix.addr_set, vec![fp("other", 0, 28)]);
    assert!(fill.aliases(sum));
    assert!(!fill.aliases(mix) && !sum.aliases(mix));
}

#[test]
fn regions_partition_each_procedure() {
    for p in crate::corpus::ALL.iter().filter(|p| !p.indirect) {
        let (prog, profile, regions) = analyse(p.source, p.samples[0]);
        for (pi, g) in prog.procs.iter().enumerate() {
            let real: BTreeSet<usize> = (0..g.blocks.len()).filter(|&b| !g.blocks[b].synthetic).collect();
            let mut covered = BTreeSet::new();
            for r in regions.iter().filter(|r| r.proc == pi) {
                assert!(r.est_area > 0 || r.blocks.iter().all(|&b| g.blocks[b].ops.is_empty()), "{}", p.name);
                covered.extend(r.blocks.iter().copied());
                if let Some(parent) = r.parent {
                    assert!(r.blocks.is_subset(&regions[parent].blocks));
                }
            }
            assert_eq!(covered, real, "{}", p.name);
        }
        let top: u64 = regions.iter().filter(|r| r.parent.is_none()).map(|r| r.cycles).sum();
        assert_eq!(top, profile.total_cycles, "{}", p.name);
    }
}

#[test]
fn full_capacity_monotonicity_fails_under_the_ninety_percent_cutoff() {
    // A big hot loop displaces two small ones once it fits; the second
    // small loop then no longer fits behind it.
    let regions = vec![lp(1, 50, 10), lp(2, 45, 1), lp(3, 5, 1)];
    assert_eq!(select(&regions, 5).ids(), vec![2, 3]);
    assert_eq!(select(&regions, 11).ids(), vec![1, 2]);
}

fn arb_regions() -> impl Strategy<Value = Vec<Region>> {
    prop::collection::vec((0u64..10_000, 1u64..20_000, 0u8..4, 0u8..5, 0u8..3), 1..12).prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (cycles, area, kind, suit, base))| {
                let mut r =
                    Region::new(i, if kind == 0 { RegionKind::ProcedureBody } else { RegionKind::Loop }, cycles, area);
                r.suitability = suit as f64 / 4.0;
                if base > 0 {
                    let b = ["A", "B"][base as usize - 1];
                    r.addr_set = vec![fp(b, 0, 16)];
                }
                r
            })
            .collect()
    })
}

fn total(regions: &[Region]) -> u64 {
    regions.iter().map(|r| r.cycles).sum::<u64>().max(1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn area_never_exceeds_capacity(regions in arb_regions(), gates in 0u64..60_000, skip in any::<bool>()) {
        let cfg = PartitionConfig { skip_and_continue: skip };
        let r = partition(&regions, total(&regions), &cap(gates), &cfg).unwrap();
        prop_assert!(r.total_area <= gates);
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
        prop_assert_eq!(r.hw_regions.len() + r.sw_blocks.len(), regions.len());
    }

    #[test]
    fn dominant_loop_is_selected_first(regions in arb_regions(), hot_area in 1u64..30_000) {
        let rest: u64 = regions.iter().map(|r| r.cycles).sum();
        let mut all = regions.clone();
        let mut hot = lp(regions.len(), rest * 9 + 1, hot_area);
        hot.suitability = 0.5;
        all.push(hot);
        let r = partition(&all, total(&all), &PlatformModel::default(), &PartitionConfig::default()).unwrap();
        prop_assert_eq!(r.hw_regions[0].region.id, regions.len());
        prop_assert_eq!(r.hw_regions[0].tag, Tag::Step1Hot);
    }

    #[test]
    fn first_pick_survives_more_capacity(regions in arb_regions(), gates in 0u64..30_000, extra in 0u64..30_000) {
        let small = partition(&regions, total(&regions), &cap(gates), &PartitionConfig::default()).unwrap();
        let big = partition(&regions, total(&regions), &cap(gates + extra), &PartitionConfig::default()).unwrap();
        if let Some(first) = small.hw_regions.first().filter(|s| s.tag == Tag::Step1Hot) {
            // The hottest fitting loop is chosen either way, unless a hotter
            // loop now fits in front of it.
            let ids = big.ids();
            prop_assert!(ids.contains(&first.region.id) || big.hw_regions[0].region.cycles >= first.region.cycles);
        }
        if gates >= regions.iter().map(|r| r.est_area).sum::<u64>() {
            prop_assert_eq!(small.ids(), big.ids());
        }
    }

    #[test]
    fn partitioning_is_deterministic(regions in arb_regions(), gates in 0u64..60_000) {
        let a = partition(&regions, total(&regions), &cap(gates), &PartitionConfig::default()).unwrap();
        let b = partition(&regions, total(&regions), &cap(gates), &PartitionConfig::default()).unwrap();
        prop_assert_eq!(a.report(), b.report());
        prop_assert_eq!(a, b);
    }
}
