//! Runs a kernel in the reference interpreter and checks that a legal loop
//! interchange leaves every output bit-identical.
//!
//! cargo run --release --example interpret_kernel -- kernels/gemm_tiny.c

use tileforge::frontend::parse_kernel;
use tileforge::interp::{compare, permute_band, run_ir, seeded_memory};
use tileforge::ir::Item;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/gemm_tiny.c".into());
    let ir = parse_kernel(&std::fs::read_to_string(&path)?)?;
    let mut reference = seeded_memory(&ir, 1);
    run_ir(&ir, &mut reference).map_err(|e| anyhow::anyhow!(e.0))?;
    println!("ran {} statement instances", ir.total_iterations());
    let Some(Item::Loop(outer)) = ir.top.first() else { return Ok(()) };
    let swapped = permute_band(&ir, *outer, &[1, 0]).map_err(|e| anyhow::anyhow!(e.0))?;
    let mut mem = seeded_memory(&ir, 1);
    run_ir(&swapped, &mut mem).map_err(|e| anyhow::anyhow!(e.0))?;
    match compare(&ir, &reference, &mem, None) {
        Ok(()) => println!("outer two loops swapped: identical results"),
        Err(e) => println!("outer two loops swapped: {e}"),
    }
    Ok(())
}
