//! Solves one kernel under a platform config and prints the modeled latency.
//!
//! cargo run --release --example solve_kernel -- kernels/gemm.c [configs/u200.toml] [budget_s]

use std::time::Duration;

use tileforge::frontend::parse_kernel;
use tileforge::model::modeled_gflops;
use tileforge::platform::load_config;
use tileforge::solver::{parse_pins, solve_with_retry, SolveOptions};
use tileforge::space::build_space;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kernel = args.get(1).map(String::as_str).unwrap_or("kernels/gemm.c");
    let config = args.get(2).map(String::as_str).unwrap_or("configs/u200.toml");
    let budget: f64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(60.0);
    let cfg = load_config(config.as_ref())?;
    let ir = parse_kernel(&std::fs::read_to_string(kernel)?)?;
    let space = build_space(&ir, cfg.platform.burst_cap_bits)?;
    let pins = parse_pins(&space, &cfg.pins)?;
    let opts = SolveOptions { budget: Some(Duration::from_secs_f64(budget)), threads: 1, trace: None };
    let (out, used) = solve_with_retry(&space, &cfg.platform, &pins, &opts)?;
    println!("status {} after {} nodes in {:.2?}", out.status.as_str(), out.nodes, out.wall_time);
    if let Some(best) = out.best {
        let ev = &best.evaluation;
        println!("latency {} cycles, {:.2} GF/s modeled", ev.objective, modeled_gflops(&space, &used, ev.objective));
        println!("dsp {} / {}, memory {} bytes", ev.dsp_used(&used), used.dsp_available, ev.memory_bytes);
        for (body, (ba, be)) in space.bodies.iter().zip(best.assignment.bodies.iter().zip(&ev.bodies)) {
            let loops: Vec<String> = body
                .loops
                .iter()
                .enumerate()
                .map(|(l, lp)| format!("{}{:?}{}{}", lp.iterator, ba.tc[l], if ba.pip[l] { " pip" } else { "" }, if ba.uf[l] > 1 { format!(" uf{}", ba.uf[l]) } else { String::new() }))
                .collect();
            let perm: Vec<&str> = ba.perm.iter().map(|l| body.loops[*l].iterator.as_str()).collect();
            let cache: Vec<String> = body.arrays.iter().enumerate().map(|(k, a)| format!("{}@{}", a.name, ba.cache_pos(k))).collect();
            println!("  {}: {} perm {:?} cache {:?} ii {} lat {}", body.id, loops.join(" "), perm, cache, be.ii, be.lat_total);
        }
    }
    Ok(())
}
