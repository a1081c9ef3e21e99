//! Compares branch and bound against exhaustive enumeration on a small kernel.
//!
//! cargo run --release --example brute_force -- kernels/gemm_tiny.c

use tileforge::frontend::parse_kernel;
use tileforge::platform::PlatformConfig;
use tileforge::solver::{brute_force, solve, Pins, SolveOptions};
use tileforge::space::build_space;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/gemm_tiny.c".into());
    let space = build_space(&parse_kernel(&std::fs::read_to_string(&path)?)?, 512)?;
    let cfg = PlatformConfig { dsp_available: 120, mem_bytes: 512, ..PlatformConfig::default() };
    let pins = Pins::none(&space);
    let bb = solve(&space, &cfg, &pins, &SolveOptions::default())?;
    let bf = brute_force(&space, &cfg, &pins)?;
    let obj = |o: &tileforge::solver::SolveOutcome| o.best.as_ref().map(|b| b.evaluation.objective);
    println!("branch and bound: {} {:?} ({} nodes, {:.2?})", bb.status.as_str(), obj(&bb), bb.nodes, bb.wall_time);
    println!("enumeration:      {} {:?} ({} points, {:.2?})", bf.status.as_str(), obj(&bf), bf.nodes, bf.wall_time);
    anyhow::ensure!(obj(&bb) == obj(&bf), "optima differ");
    Ok(())
}
