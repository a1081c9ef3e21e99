#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use tileforge::frontend::parse_kernel;
use tileforge::ir::KernelIr;
use tileforge::space::{build_space, DesignSpace};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn kernel_path(name: &str) -> PathBuf {
    root().join("kernels").join(format!("{name}.c"))
}

pub fn kernel(name: &str) -> KernelIr {
    parse_kernel(&std::fs::read_to_string(kernel_path(name)).unwrap()).unwrap()
}

pub fn space(name: &str) -> DesignSpace {
    build_space(&kernel(name), 512).unwrap()
}

pub const CORPUS: [&str; 10] = ["gemm", "gemm_small", "gemm_tiny", "two_mm", "bicg", "doitgen", "cnn_small", "cnn", "recurrence", "coupled"];

/// Random kernel built from a pool of iterators with fixed trips: every
/// array is named after the iterators indexing it, so statements in
/// different nests touch the same data and create dependences between nests.
pub fn random_kernel(rng: &mut impl Rng, max_trip: u64) -> String {
    let iters = ["i", "j", "k"];
    let trips: Vec<u64> = (0..3).map(|_| rng.gen_range(1..=max_trip)).collect();
    let array = |set: &[usize]| -> String { format!("a{}", set.iter().map(|x| iters[*x]).collect::<String>()) };
    let subset = |rng: &mut dyn rand::RngCore, of: &[usize]| -> Vec<usize> {
        loop {
            let mut s: Vec<usize> = of.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
            s.sort();
            if !s.is_empty() {
                return s;
            }
        }
    };
    let access = |set: &[usize]| format!("{}{}", array(set), set.iter().map(|x| format!("[{}]", iters[*x])).collect::<String>());
    let mut used: Vec<Vec<usize>> = Vec::new();
    // nests of (loops, statements); a statement joins the previous nest 40% of the time
    let mut nests: Vec<(Vec<usize>, Vec<String>)> = Vec::new();
    let n_stmts = rng.gen_range(1..=3);
    for _ in 0..n_stmts {
        if nests.is_empty() || !rng.gen_bool(0.4) {
            let n_loops = rng.gen_range(1..=3);
            let mut loops: Vec<usize> = vec![0, 1, 2];
            for x in (1..3).rev() {
                loops.swap(x, rng.gen_range(0..=x));
            }
            loops.truncate(n_loops);
            nests.push((loops, Vec::new()));
        }
        let loops = nests.last().unwrap().0.clone();
        let lhs = subset(rng, &loops);
        let accumulate = lhs.len() < loops.len() || rng.gen_bool(0.3);
        let mut rhs = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let r = subset(rng, &loops);
            rhs.push(access(&r));
            used.push(r);
        }
        let op = if rng.gen_bool(0.5) { " * " } else { " + " };
        let stmt = format!("{} {} {};", access(&lhs), if accumulate { "+=" } else { "=" }, rhs.join(op));
        nests.last_mut().unwrap().1.push(stmt);
        used.push(lhs);
    }
    let mut body = String::new();
    for (loops, stmts) in &nests {
        for (d, l) in loops.iter().enumerate() {
            body.push_str(&format!("{}for (int {i} = 0; {i} < {t}; {i}++)\n", "  ".repeat(d + 1), i = iters[*l], t = trips[*l]));
        }
        let pad = "  ".repeat(loops.len() + 1);
        body.push_str(&format!("{pad}{{\n"));
        for st in stmts {
            body.push_str(&format!("{pad}  {st}\n"));
        }
        body.push_str(&format!("{pad}}}\n"));
    }
    used.sort();
    used.dedup();
    let params: Vec<String> = used
        .iter()
        .map(|set| format!("float {}{}", array(set), set.iter().map(|x| format!("[{}]", trips[*x])).collect::<String>()))
        .collect();
    format!("void rk({}) {{\n{}}}\n", params.join(", "), body)
}

pub fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

/// Compiles a harness and runs it once per seed; returns the first failure.
pub fn run_harness(dir: &Path, harness: &str, seeds: std::ops::Range<u64>) -> Result<(), String> {
    let exe = dir.join(harness.trim_end_matches(".c"));
    let out = Command::new("cc")
        .current_dir(dir)
        .args(["-O1", "-std=c99", "-o"])
        .arg(&exe)
        .arg(harness)
        .arg("-lm")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("cc failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    for seed in seeds {
        let run = Command::new(&exe).arg(seed.to_string()).output().map_err(|e| e.to_string())?;
        let text = String::from_utf8_lossy(&run.stdout);
        if !run.status.success() || !text.contains("PASS") {
            return Err(format!("seed {seed}: {}{}", text, String::from_utf8_lossy(&run.stderr)));
        }
    }
    Ok(())
}
