#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};

use binpart::flow::{self, Analysis, FlowOptions};
use binpart_core::corpus::{self, CorpusProgram};
use binpart_core::isa::{assemble, ProgramImage};
use binpart_core::partition::PlatformModel;
use binpart_core::sim::{profile_run, CostTable, Profile};

pub const MAX_STEPS: u64 = 1_000_000;

/// Corpus programs the decompiler accepts.
pub fn decompilable() -> impl Iterator<Item = &'static CorpusProgram> {
    corpus::ALL.iter().filter(|p| !p.indirect)
}

pub fn image(p: &CorpusProgram) -> ProgramImage {
    assemble(p.source).unwrap_or_else(|e| panic!("{}: {e}", p.name))
}

/// Profile of the first sample input, as the `profile` command records it.
pub fn profile(p: &CorpusProgram) -> Profile {
    profile_run(&image(p), p.samples[0], MAX_STEPS, &CostTable::default()).1
}

pub fn analysis(p: &CorpusProgram) -> Analysis {
    flow::analyse(&image(p), &FlowOptions::default().passes).unwrap_or_else(|e| panic!("{}: {e}", p.name))
}

/// `(file name, VHDL)` for every region the default flow moves to hardware.
pub fn emitted_vhdl(p: &CorpusProgram) -> Vec<(String, String)> {
    let a = analysis(p);
    let opts = FlowOptions::default();
    let part = flow::partition_program(&a, &profile(p), &PlatformModel::default(), &opts).unwrap();
    let plans = flow::synthesize_partition(&a, &part, &opts.resources, p.name).unwrap();
    plans
        .iter()
        .map(|h| (format!("{}.vhd", flow::region_file_stem(p.name, h.selected.region.id)), h.synthesis.vhdl()))
        .collect()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `text` with the golden file `name`; with `BLESS` set, rewrites
/// the file instead.
pub fn golden(name: &str, text: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, text).unwrap();
        return Ok(());
    }
    match std::fs::read_to_string(&path) {
        Ok(want) if want == text => Ok(()),
        Ok(_) => Err(format!("{name} differs from its golden file")),
        Err(e) => Err(format!("{name}: {e} (run with BLESS=1 to create)")),
    }
}

pub fn binpart(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binpart")).args(args).output().expect("spawn binpart")
}

/// Writes the corpus program's source and first sample to `dir` and
/// assembles it with the CLI. Returns `(image, inputs)` paths.
pub fn stage(dir: &std::path::Path, p: &CorpusProgram) -> (PathBuf, PathBuf) {
    let src = dir.join(format!("{}.s", p.name));
    let img = dir.join(format!("{}.img", p.name));
    let inp = dir.join(format!("{}.inputs", p.name));
    std::fs::write(&src, p.source).unwrap();
    std::fs::write(&inp, binpart::formats::write_inputs(p.samples[0])).unwrap();
    let out = binpart(&["asm".as_ref(), src.as_os_str(), "-o".as_ref(), img.as_os_str()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (img, inp)
}
