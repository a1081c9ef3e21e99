//! Shows the tiling template of each body: loop domains, legal orders and
//! the footprint of every array at each cache point.
//!
//! cargo run --example design_space -- kernels/gemm.c

use tileforge::frontend::parse_kernel;
use tileforge::space::{build_space, divisors, factor_triples};

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/gemm.c".into());
    let space = build_space(&parse_kernel(&std::fs::read_to_string(&path)?)?, 512)?;
    println!("{} bodies, raw domain {} points", space.bodies.len(), space.domain_size());
    for b in &space.bodies {
        println!("body {} (fully permutable: {})", b.id, b.fully_permutable);
        for l in &b.loops {
            let ufs = if l.uf_fixed { 1 } else { divisors(l.trip).len() };
            println!("  {} trip {}: {} splits, {} unroll factors{}", l.iterator, l.trip, factor_triples(l.trip).len(), ufs, if l.reduction { ", reduction" } else { "" });
        }
        println!("  {} legal orders", b.perms.len());
        for a in &b.arrays {
            println!("  {}: {}", a.name, a.footprints.join(" | "));
        }
    }
    for a in &space.arrays {
        println!("array {} burst {} bits", a.name, a.burst);
    }
    Ok(())
}
