//! Solves a kernel and writes the optimized design and its harness.
//!
//! cargo run --release --example emit_design -- kernels/gemm_small.c [configs/u200.toml] [out_dir] [--tree]

use std::path::PathBuf;
use std::time::Duration;

use tileforge::codegen::emit;
use tileforge::frontend::parse_kernel;
use tileforge::platform::load_config;
use tileforge::solver::{parse_pins, solve_with_retry, SolveOptions};
use tileforge::space::build_space;

fn main() -> anyhow::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let tree = args.iter().any(|a| a == "--tree");
    args.retain(|a| a != "--tree");
    let kernel = args.first().map(String::as_str).unwrap_or("kernels/gemm_small.c");
    let config = args.get(1).map(String::as_str).unwrap_or("configs/u200.toml");
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("."));
    let mut cfg = load_config(config.as_ref())?;
    cfg.platform.tree_reduction |= tree;
    let ir = parse_kernel(&std::fs::read_to_string(kernel)?)?;
    let space = build_space(&ir, cfg.platform.burst_cap_bits)?;
    let pins = parse_pins(&space, &cfg.pins)?;
    let opts = SolveOptions { budget: Some(Duration::from_secs(30)), threads: 1, trace: None };
    let (solved, used) = solve_with_retry(&space, &cfg.platform, &pins, &opts)?;
    let best = solved.best.expect("solver returned no design");
    let files = emit(&space, &used, &best.assignment)?;
    std::fs::create_dir_all(&out)?;
    let design = out.join(format!("{}_opt.c", ir.name));
    let harness = out.join(format!("{}_harness.c", ir.name));
    std::fs::write(&design, &files.design)?;
    std::fs::write(&harness, &files.harness)?;
    println!("{}\n{}", design.display(), harness.display());
    Ok(())
}
