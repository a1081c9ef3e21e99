//! Prints every dependence of a kernel and the bodies left after distribution.
//!
//! cargo run --example dependences -- kernels/recurrence.c

use tileforge::deps::{analyze, maximal_distribution};
use tileforge::frontend::parse_kernel;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/recurrence.c".into());
    let ir = parse_kernel(&std::fs::read_to_string(&path)?)?;
    for d in analyze(&ir).iter().filter(|d| d.constrains()) {
        let level = d.carried_level.map_or("independent".to_string(), |l| format!("carried at {l}"));
        let red = if d.reduction { ", reduction" } else { "" };
        println!("{:?} {} -> {} on {} {} {}{}", d.kind, d.source, d.sink, d.array, d.vector_string(), level, red);
    }
    let dist = maximal_distribution(&ir);
    println!("{} loops after distribution (from {})", dist.ir.loops.len(), ir.loops.len());
    for s in &dist.ir.statements {
        let nest: Vec<String> = s.enclosing_loops.iter().map(|l| format!("{}#{}", dist.ir.loop_(*l).iterator, l.0)).collect();
        println!("  {} under {}", s.id, nest.join(" > "));
    }
    Ok(())
}
