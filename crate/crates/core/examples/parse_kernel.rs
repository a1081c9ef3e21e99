//! Parses a kernel and prints its loops, statements and per-statement op counts.
//!
//! cargo run --example parse_kernel -- kernels/two_mm.c

use tileforge::frontend::parse_kernel;
use tileforge::ir::op_census;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "kernels/two_mm.c".into());
    let ir = parse_kernel(&std::fs::read_to_string(&path)?)?;
    println!("kernel {}", ir.name);
    for a in &ir.arrays {
        println!("  array {} {:?} ({} bytes)", a.name, a.dims, a.bytes());
    }
    for l in &ir.loops {
        println!("  loop {} trip {}", l.iterator, l.trip_count);
    }
    for s in &ir.statements {
        let ops: Vec<String> = op_census(s).iter().map(|(k, n)| format!("{}x{}", k.name(), n)).collect();
        let acc = if s.is_accumulation() { " accumulates" } else { "" };
        println!("  {}: {}  [{}] x{}{}", s.id, s.text(), ops.join(" "), ir.instances(s), acc);
    }
    Ok(())
}
