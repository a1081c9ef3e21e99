//! The `tileforge` command line: one subcommand per stage plus `optimize`.
//!
//! Stages talk through JSON files (IR, design space, solution), and every
//! file `optimize` writes is produced by the same functions the stages use,
//! so a chained run reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::codegen;
use crate::deps;
use crate::error::SolveError;
use crate::frontend::{kernel_from_json, parse_kernel};
use crate::ir::KernelIr;
use crate::model;
use crate::platform::{load_config, Config, PlatformConfig};
use crate::report;
use crate::solution::Solution;
use crate::solver::{parse_pins, solve_with_retry, SolveOptions, Status, TraceEvent};
use crate::space::{build_space, DesignSpace};
use crate::verify;

/// Exit status for usage errors, as in sysexits.
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

/// Kernels above this many statement instances are audited structurally only.
const EXECUTE_LIMIT: u64 = 2_000_000;

#[derive(Parser, Debug)]
#[command(name = "tileforge", version, about = "Tile, pipeline and unroll affine loop kernels for HLS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct KernelInput {
    /// Kernel source in the supported C subset.
    kernel: Option<PathBuf>,
    /// Read the kernel from IR JSON instead of C.
    #[arg(long, value_name = "FILE", conflicts_with = "kernel")]
    ir_json: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SolveFlags {
    /// Fix a variable: `path=value`, repeatable. Overrides `[pins]` in the config.
    #[arg(long = "pin", value_name = "PATH=VALUE")]
    pins: Vec<String>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
    /// Solver threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Stream solver events as JSON lines to this file.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a kernel and print its IR as JSON.
    Parse {
        #[command(flatten)]
        input: KernelInput,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print dependences and the distributed loop structure as JSON.
    Deps {
        #[command(flatten)]
        input: KernelInput,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the design space as JSON.
    Space {
        #[command(flatten)]
        input: KernelInput,
        /// Supplies the burst cap; 512 bits without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve a design space and write solution.json.
    Solve {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the design, harness and report for a solution.
    Emit {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Re-check a solution, and optionally an emitted design, independently.
    Verify {
        /// Kernel source; alternatively pass --space or --ir-json.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long, conflicts_with = "kernel")]
        ir_json: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["kernel", "ir_json"])]
        space: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Emitted `<kernel>_opt.c` to audit.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Run every stage and write all outputs.
    Optimize {
        #[command(flatten)]
        input: KernelInput,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        flags: SolveFlags,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write deps.json.
        #[arg(long)]
        dump_deps: bool,
        /// Also write space.json.
        #[arg(long)]
        dump_space: bool,
    },
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<SolveError>() {
            Some(SolveError::Infeasible(_)) => EXIT_INFEASIBLE,
            _ => EXIT_FAILURE,
        };
        Failure { code, error }
    }
}

fn infeasible(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_INFEASIBLE, error: anyhow!("infeasible: {}", msg.into()) }
}

fn to_json<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("serializable");
    s.push('\n');
    s
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn std::io::Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => stdout.write_all(text.as_bytes()).context("cannot write to stdout"),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_kernel(input: &KernelInput) -> Result<KernelIr> {
    match (&input.kernel, &input.ir_json) {
        (_, Some(j)) => Ok(kernel_from_json(&read(j)?)?),
        (Some(k), None) => Ok(parse_kernel(&read(k)?).with_context(|| format!("in {}", k.display()))?),
        (None, None) => Err(anyhow!("no kernel given: pass a C file or --ir-json")),
    }
}

fn load_space(path: &Path) -> Result<DesignSpace> {
    serde_json::from_str(&read(path)?).with_context(|| format!("{} is not a design space", path.display()))
}

/// Dependences of the distributed kernel plus its bodies.
#[derive(Serialize)]
struct DepsDump<'a> {
    kernel: &'a str,
    bodies: Vec<Vec<&'a str>>,
    dependences: &'a [deps::Dependence],
}

fn deps_json(space: &DesignSpace) -> String {
    to_json(&DepsDump {
        kernel: &space.kernel.name,
        bodies: space.bodies.iter().map(|b| b.statements.iter().map(|s| s.id.as_str()).collect()).collect(),
        dependences: &space.dependences,
    })
}

fn space_json(space: &DesignSpace) -> String {
    to_json(space)
}

/// Solves with config and CLI settings merged; CLI flags win.
fn run_solver(space: &DesignSpace, cfg: &Config, flags: &SolveFlags) -> Result<Solution, Failure> {
    let mut raw: BTreeMap<String, String> = cfg.pins.clone();
    for p in &flags.pins {
        let (k, v) = p.split_once('=').ok_or_else(|| anyhow!("--pin `{p}` is not path=value"))?;
        raw.insert(k.trim().to_string(), v.trim().to_string());
    }
    let pins = parse_pins(space, &raw)?;
    let budget = flags.budget.or(cfg.solver.budget_seconds);
    let threads = flags.threads.or(cfg.solver.threads).unwrap_or(1);
    let sink = match &flags.trace {
        Some(p) => Some(Mutex::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => None,
    };
    let trace = |e: &TraceEvent| {
        if let Some(f) = &sink {
            let line = serde_json::to_string(e).expect("trace event serializes");
            let _ = writeln!(f.lock().unwrap(), "{line}");
        }
    };
    let opts = SolveOptions {
        budget: budget.map(Duration::from_secs_f64),
        threads,
        trace: if sink.is_some() { Some(&trace) } else { None },
    };
    log::info!("solving {} ({} bodies, budget {:?}, {} threads)", space.kernel.name, space.bodies.len(), opts.budget, threads);
    let (out, used) = solve_with_retry(space, &cfg.platform, &pins, &opts)?;
    if out.status == Status::Infeasible {
        return Err(infeasible("no assignment satisfies the constraints"));
    }
    let best = out.best.ok_or_else(|| anyhow!("solver returned no assignment"))?;
    log::info!("{} after {} nodes", out.status.as_str(), out.nodes);
    Ok(Solution::new(space, &used, out.status.as_str(), &best.assignment, &best.evaluation))
}

/// Platform settings a solution was produced under.
fn effective(cfg: &PlatformConfig, sol: &Solution) -> PlatformConfig {
    let mut c = cfg.clone();
    c.reuse_opt = sol.reuse != "pessimistic";
    c
}

/// Files written for a solution, in write order.
struct Outputs {
    files: Vec<(String, String)>,
    report: report::Report,
}

fn emit_outputs(space: &DesignSpace, cfg: &PlatformConfig, sol: &Solution) -> Result<Outputs> {
    let cfg = effective(cfg, sol);
    let a = sol.to_assignment(space)?;
    let ev = model::evaluate(space, &cfg, &a);
    let emitted = codegen::emit(space, &cfg, &a)?;
    let rep = report::build(space, &cfg, &sol.status, &a, &ev);
    let k = &space.kernel.name;
    Ok(Outputs {
        files: vec![
            (format!("{k}_opt.c"), emitted.design),
            (format!("{k}_harness.c"), emitted.harness),
            ("report.json".to_string(), rep.to_json()),
        ],
        report: rep,
    })
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

/// Verdict plus optional design audit, as printed by `verify`.
#[derive(Serialize)]
struct VerifyOutput {
    pass: bool,
    solution: verify::Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<Vec<model::Violation>>,
}

fn check(space: &DesignSpace, cfg: &PlatformConfig, sol: &Solution, design: Option<&str>) -> Result<VerifyOutput> {
    let cfg = effective(cfg, sol);
    let verdict = verify::verify_solution(space, &cfg, sol)?;
    let audit = match design {
        Some(d) => {
            let a = sol.to_assignment(space)?;
            let execute = space.kernel.total_iterations() <= EXECUTE_LIMIT;
            Some(verify::audit_design(space, &cfg, &a, d, execute)?)
        }
        None => None,
    };
    let pass = verdict.pass && audit.as_ref().is_none_or(|x| x.is_empty());
    Ok(VerifyOutput { pass, solution: verdict, audit })
}

fn summary(sol: &Solution, rep: &report::Report, clean: bool, dir: &Path) -> String {
    let mut s = String::new();
    let push = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    push(&mut s, format!("kernel      {}", sol.kernel));
    push(&mut s, format!("status      {}", sol.status));
    push(&mut s, format!("latency     {} cycles at {} MHz", rep.latency_cycles, rep.clock_mhz));
    push(&mut s, format!("throughput  {:.2} GF/s (modeled)", rep.modeled_gflops));
    push(&mut s, format!("dsp         {} / {} ({} reuse, margin {})", rep.dsp_used, rep.dsp_available, rep.reuse, rep.margins.dsp));
    push(&mut s, format!("memory      {} / {} bytes (margin {})", rep.memory_bytes, rep.memory_available, rep.margins.memory_bytes));
    push(&mut s, format!("partition   margin {}", rep.margins.partition));
    for b in &rep.bodies {
        push(&mut s, format!("  {:<12} ii {:<3} lat {} (compute {}, memory {})", b.id, b.ii, b.lat_total, b.lat0, b.lat_mem));
    }
    push(&mut s, format!("verifier    {}", if clean { "clean" } else { "FINDINGS, see verify subcommand" }));
    push(&mut s, format!("outputs     {}", dir.display()));
    s
}

fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Parse { input, output } => {
            let ir = load_kernel(&input)?;
            write_out(output.as_deref(), &to_json(&ir), stdout)?;
        }
        Command::Deps { input, output } => {
            let space = build_space(&load_kernel(&input)?, PlatformConfig::default().burst_cap_bits)?;
            write_out(output.as_deref(), &deps_json(&space), stdout)?;
        }
        Command::Space { input, config, output } => {
            let cap = match &config {
                Some(c) => load_config(c)?.platform.burst_cap_bits,
                None => PlatformConfig::default().burst_cap_bits,
            };
            let space = build_space(&load_kernel(&input)?, cap)?;
            write_out(output.as_deref(), &space_json(&space), stdout)?;
        }
        Command::Solve { space, config, flags, output } => {
            let cfg = load_config(&config)?;
            let space = load_space(&space)?;
            let sol = run_solver(&space, &cfg, &flags)?;
            write_out(output.as_deref(), &sol.to_json(), stdout)?;
        }
        Command::Emit { space, config, solution, out_dir } => {
            let cfg = load_config(&config)?;
            let space = load_space(&space)?;
            let sol = Solution::parse(&read(&solution)?)?;
            write_files(&out_dir, &emit_outputs(&space, &cfg.platform, &sol)?.files)?;
        }
        Command::Verify { kernel, ir_json, space, config, solution, design } => {
            let cfg = load_config(&config)?;
            let space = match space {
                Some(s) => load_space(&s)?,
                None => build_space(&load_kernel(&KernelInput { kernel, ir_json })?, cfg.platform.burst_cap_bits)?,
            };
            let sol = Solution::parse(&read(&solution)?)?;
            let design = design.map(|d| read(&d)).transpose()?;
            let out = check(&space, &cfg.platform, &sol, design.as_deref())?;
            write_out(None, &to_json(&out), stdout)?;
            return Ok(if out.pass { 0 } else { EXIT_FAILURE });
        }
        Command::Optimize { input, config, flags, out_dir, dump_deps, dump_space } => {
            let cfg = load_config(&config)?;
            let ir = load_kernel(&input)?;
            let space = build_space(&ir, cfg.platform.burst_cap_bits)?;
            let mut files = Vec::new();
            if dump_deps {
                files.push(("deps.json".to_string(), deps_json(&space)));
            }
            if dump_space {
                files.push(("space.json".to_string(), space_json(&space)));
            }
            let sol = run_solver(&space, &cfg, &flags)?;
            let out = emit_outputs(&space, &cfg.platform, &sol)?;
            files.push(("solution.json".to_string(), sol.to_json()));
            files.extend(out.files.iter().cloned());
            write_files(&out_dir, &files)?;
            let design = &out.files[0].1;
            let verdict = check(&space, &cfg.platform, &sol, Some(design))?;
            if !verdict.pass {
                log::warn!("verifier findings: {}", serde_json::to_string(&verdict.solution.violations).unwrap_or_default());
            }
            write_out(None, &summary(&sol, &out.report, verdict.pass, &out_dir), stdout)?;
        }
    }
    Ok(0)
}

/// Runs the command line and returns the process exit status.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {:#}", f.error);
            f.code
        }
    }
}
