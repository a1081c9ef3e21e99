//! Scores random assignments with the cost model and lists any violated
//! constraints, to show how latency and resources move together.
//!
//! cargo run --example evaluate_point -- kernels/gemm_small.c 5

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tileforge::frontend::parse_kernel;
use tileforge::model::{evaluate, random_assignment};
use tileforge::platform::PlatformConfig;
use tileforge::space::build_space;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(String::as_str).unwrap_or("kernels/gemm_small.c");
    let n: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let space = build_space(&parse_kernel(&std::fs::read_to_string(path)?)?, 512)?;
    let cfg = PlatformConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..n {
        let a = random_assignment(&space, &mut |k| rng.gen_range(0..k));
        let ev = evaluate(&space, &cfg, &a);
        println!(
            "#{i}: latency {} dsp {}/{} memory {} B, {} violations",
            ev.objective, ev.dsp_optimistic, ev.dsp_pessimistic, ev.memory_bytes, ev.violations.len()
        );
        for v in &ev.violations {
            println!("    {} {}: {}", v.constraint, v.context, v.message);
        }
    }
    Ok(())
}
