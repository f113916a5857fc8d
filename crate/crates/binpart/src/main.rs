use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use binpart::error::io;
use binpart::flow::{self, FlowOptions};
use binpart::formats::{parse_inputs, parse_profile, write_inputs, write_profile};
use binpart::{code, Error};
use binpart_core::corpus;
use binpart_core::isa::{assemble, load_image, save_image, ProgramImage};
use binpart_core::partition::{PartitionConfig, PlatformModel};
use binpart_core::passes::PassConfig;
use binpart_core::sim::{profile_run, run_with_costs, CostTable, ExitReason, Profile};
use binpart_core::synth::{FuClass, ResourceSet};
use clap::{Args, Parser, Subcommand};

/// Decompile MIPS-subset binaries, partition hot regions onto an FPGA and
/// synthesize them to VHDL.
#[derive(Parser)]
#[command(name = "binpart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PassArgs {
    /// Skip the pass pipeline.
    #[arg(long, conflicts_with = "passes")]
    no_passes: bool,
    /// Comma-separated passes to run in order (constprop, stack, reroll,
    /// promote, size).
    #[arg(long, value_name = "LIST")]
    passes: Option<String>,
}

impl PassArgs {
    fn config(&self) -> Result<PassConfig, Error> {
        let mut c = PassConfig::default();
        if self.no_passes {
            c.passes.clear();
        } else if let Some(list) = &self.passes {
            c.passes = flow::parse_pass_list(list)?;
        }
        Ok(c)
    }
}

#[derive(Args, Clone)]
struct FlowArgs {
    /// Profile file written by `profile`.
    #[arg(long, value_name = "FILE")]
    profile: PathBuf,
    /// Platform `key = value` file; defaults apply to missing keys.
    #[arg(long, value_name = "FILE")]
    platform: Option<PathBuf>,
    /// Keep adding regions past the first one that does not fit.
    #[arg(long)]
    skip_and_continue: bool,
    /// Functional units, e.g. `adder=2,multiplier=0`.
    #[arg(long, value_name = "LIST")]
    units: Option<String>,
    #[command(flatten)]
    passes: PassArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a source file into an image.
    Asm {
        source: PathBuf,
        #[arg(short, long, value_name = "IMG")]
        out: PathBuf,
    },
    /// Run an image and print its outputs, one per line.
    Run {
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
    },
    /// Run an image and write its profile.
    Profile {
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
        /// Profile file; standard output when absent.
        #[arg(short, long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Decompile and optimize; print the pass report.
    Decomp {
        image: PathBuf,
        /// Write the CDFG dump here instead of standard output.
        #[arg(long, value_name = "FILE")]
        dump_cdfg: Option<PathBuf>,
        #[command(flatten)]
        passes: PassArgs,
    },
    /// Select hardware regions and print the partition report.
    Partition {
        image: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Partition and synthesize; write one VHDL file and schedule per region.
    Synth {
        image: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Full flow with co-simulation and platform metrics.
    Report {
        image: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        /// Inputs the profile was taken with.
        #[arg(long, value_name = "FILE")]
        inputs: Option<PathBuf>,
        /// Repeat for several values of one platform key, e.g.
        /// `cpu_clock_hz=40e6,200e6,400e6`.
        #[arg(long, value_name = "KEY=V1,V2,...")]
        sweep: Option<String>,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write the bundled benchmark sources and sample inputs.
    Corpus {
        /// Only this program.
        name: Option<String>,
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(io(path))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(io(path))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, data).map_err(io(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => write(p, text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io("<stdout>")),
    }
}

fn load(path: &Path) -> Result<ProgramImage, Error> {
    Ok(load_image(&read(path)?)?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn inputs(path: Option<&Path>) -> Result<Vec<u32>, Error> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => parse_inputs(&read_text(p)?).map_err(|source| Error::Format { file: p.into(), source }),
    }
}

fn platform(path: Option<&Path>) -> Result<PlatformModel, Error> {
    match path {
        None => Ok(PlatformModel::default()),
        Some(p) => PlatformModel::parse(&read_text(p)?).map_err(|source| Error::Platform { file: p.into(), source }),
    }
}

fn units(list: Option<&str>) -> Result<ResourceSet, Error> {
    let mut r = ResourceSet::default();
    for item in list.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::BadOption(format!("bad --units entry `{item}`"));
        let (k, v) = item.split_once('=').ok_or_else(bad)?;
        let class = FuClass::from_name(k.trim()).ok_or_else(bad)?;
        r.set_count(class, v.trim().parse().map_err(|_| bad())?);
    }
    Ok(r)
}

struct Loaded {
    image: ProgramImage,
    profile: Profile,
    platform: PlatformModel,
    opts: FlowOptions,
}

fn load_flow(image: &Path, f: &FlowArgs) -> Result<Loaded, Error> {
    let img = load(image)?;
    let text = read_text(&f.profile)?;
    let profile = parse_profile(&text, &img, &CostTable::default())
        .map_err(|source| Error::Format { file: f.profile.clone(), source })?;
    let opts = FlowOptions {
        passes: f.passes.config()?,
        partition: PartitionConfig { skip_and_continue: f.skip_and_continue },
        resources: units(f.units.as_deref())?,
        ..FlowOptions::default()
    };
    Ok(Loaded { image: img, profile, platform: platform(f.platform.as_deref())?, opts })
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Asm { source, out } => {
            let image = assemble(&read_text(&source)?)?;
            write(&out, save_image(&image))
        }
        Command::Run { image, inputs: inp, max_steps } => {
            let img = load(&image)?;
            let r = run_with_costs(&img, &inputs(inp.as_deref())?, max_steps, &CostTable::default());
            let text: String = r.outputs.iter().map(|v| format!("{v}\n")).collect();
            emit(None, &text)?;
            eprintln!("cycles {} steps {}", r.total_cycles, r.steps);
            match r.exit_reason {
                ExitReason::Halted => Ok(()),
                ExitReason::MaxStepsExceeded => Err(Error::Execution(format!("no halt within {max_steps} steps"))),
                ExitReason::Fault(f) => Err(Error::Execution(f)),
            }
        }
        Command::Profile { image, inputs: inp, max_steps, out } => {
            let img = load(&image)?;
            let (r, profile) = profile_run(&img, &inputs(inp.as_deref())?, max_steps, &CostTable::default());
            if let ExitReason::Fault(f) = r.exit_reason {
                return Err(Error::Execution(f));
            }
            emit(out.as_deref(), &write_profile(&profile))
        }
        Command::Decomp { image, dump_cdfg, passes } => {
            let img = load(&image)?;
            let a = flow::analyse(&img, &passes.config()?)?;
            let dump: String = a.program.procs.iter().map(|g| g.dump()).collect();
            match dump_cdfg {
                Some(p) => write(&p, dump)?,
                None => emit(None, &dump)?,
            }
            emit(None, &a.passes.dump())
        }
        Command::Partition { image, flow: f, out } => {
            let l = load_flow(&image, &f)?;
            let a = flow::analyse(&l.image, &l.opts.passes)?;
            let part = flow::partition_program(&a, &l.profile, &l.platform, &l.opts)?;
            emit(out.as_deref(), &part.report())
        }
        Command::Synth { image, flow: f, out } => {
            let l = load_flow(&image, &f)?;
            let a = flow::analyse(&l.image, &l.opts.passes)?;
            let part = flow::partition_program(&a, &l.profile, &l.platform, &l.opts)?;
            let plans = flow::synthesize_partition(&a, &part, &l.opts.resources, &stem(&image))?;
            fs::create_dir_all(&out).map_err(io(&out))?;
            for p in &plans {
                let name = flow::region_file_stem(&stem(&image), p.selected.region.id);
                write(&out.join(format!("{name}.vhd")), p.synthesis.vhdl())?;
                write(&out.join(format!("{name}.sched")), p.synthesis.schedule.dump())?;
                println!("{name}.vhd");
            }
            Ok(())
        }
        Command::Report { image, flow: f, inputs: inp, sweep, max_steps, out } => {
            let mut l = load_flow(&image, &f)?;
            l.opts.max_steps = max_steps;
            let words = inputs(inp.as_deref())?;
            let a = flow::analyse(&l.image, &l.opts.passes)?;
            let text = match sweep {
                None => flow::report(&a, &l.profile, &l.platform, &words, &stem(&image), &l.opts)?.text,
                Some(spec) => {
                    let (key, values) = flow::parse_sweep(&spec)?;
                    flow::sweep(&a, &l.profile, &l.platform, &key, &values, &words, &stem(&image), &l.opts)?.1
                }
            };
            emit(out.as_deref(), &text)
        }
        Command::Corpus { name, out } => {
            fs::create_dir_all(&out).map_err(io(&out))?;
            let chosen: Vec<_> = corpus::ALL.iter().filter(|p| name.as_deref().is_none_or(|n| n == p.name)).collect();
            if chosen.is_empty() {
                return Err(Error::BadOption(format!("no corpus program `{}`", name.unwrap_or_default())));
            }
            for p in chosen {
                write(&out.join(format!("{}.s", p.name)), p.source)?;
                write(&out.join(format!("{}.inputs", p.name)), write_inputs(p.samples[0]))?;
                println!("{}: {}", p.name, p.about);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::from(code::OK),
        Err(e) => {
            eprintln!("binpart: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
