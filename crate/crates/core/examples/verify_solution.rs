//! Solves a kernel, then tampers with the solution to show what the
//! independent checker reports.
//!
//! cargo run --release --example verify_solution -- kernels/gemm_small.c

use tileforge::frontend::parse_kernel;
use tileforge::platform::PlatformConfig;
use tileforge::solution::Solution;
use tileforge::solver::{solve, Pins, SolveOptions};
use tileforge::space::build_space;
use tileforge::verify::verify_solution;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/gemm_small.c".into());
    let space = build_space(&parse_kernel(&std::fs::read_to_string(&path)?)?, 512)?;
    let cfg = PlatformConfig::default();
    let out = solve(&space, &cfg, &Pins::none(&space), &SolveOptions::default())?;
    let best = out.best.ok_or_else(|| anyhow::anyhow!("no solution"))?;
    let sol = Solution::new(&space, &cfg, out.status.as_str(), &best.assignment, &best.evaluation);
    let show = |label: &str, s: &Solution| -> anyhow::Result<()> {
        let v = verify_solution(&space, &cfg, s)?;
        println!("{label}: {}", if v.pass { "pass" } else { "fail" });
        for x in &v.violations {
            println!("    {} {}: {} (observed {:?}, bound {:?})", x.constraint, x.context, x.message, x.observed, x.bound);
        }
        Ok(())
    };
    show("as solved", &sol)?;
    let mut claim = sol.clone();
    claim.objective -= 1;
    show("objective understated", &claim)?;
    let mut split = sol.clone();
    split.bodies[0].loops[0].tc[0] += 1;
    show("bad loop split", &split)?;
    Ok(())
}
