//! Emits the optimized HLS design and a self-checking C harness.
//!
//! Each body becomes one nest: level-0 loops in the chosen order with
//! tile transfers at their cache positions, the pipelined level-1 loop,
//! then fully unrolled level-2 loops. Coarse-grained replicas are written
//! out as repeated statements in the innermost body.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::CodegenError;
use crate::ir::{AffineExpr, ArrayRef, KernelIr, OpKind};
use crate::model::{self, Assignment, Evaluation, Transfer};
use crate::platform::PlatformConfig;
use crate::space::{Body, DesignSpace, DimMap};

/// Generated files for one solution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emitted {
    pub design: String,
    pub harness: String,
}

/// Name of level `lvl` of the loop with iterator `it`.
pub fn level_name(it: &str, lvl: usize) -> String {
    format!("{it}{lvl}")
}

/// Local buffer holding an array's tiles for one body.
pub fn buffer_name(array: &str, body: usize) -> String {
    format!("{array}_b{body}")
}

/// Partial-result array of a tree-reduced statement.
pub fn partial_name(stmt: &str) -> String {
    format!("{stmt}_part")
}

fn substitute(e: &AffineExpr, map: &BTreeMap<String, AffineExpr>) -> AffineExpr {
    let mut out = AffineExpr::constant(e.constant);
    for (name, c) in &e.terms {
        let term = match map.get(name) {
            Some(x) => x.scale(*c),
            None => AffineExpr::iterator(name).scale(*c),
        };
        out = out.add(&term);
    }
    out
}

fn term(name: &str, coef: i64) -> AffineExpr {
    AffineExpr::iterator(name).scale(coef)
}

/// Whether statements of this body are emitted with a balanced reduction tree.
pub fn uses_tree(cfg: &PlatformConfig, body: &Body, tc: &[[u64; 3]]) -> bool {
    cfg.tree_reduction
        && body.singleton
        && body.fully_permutable
        && body.statements[0].red_op.is_some()
        && model::u_red(&body.statements[0], tc) > 1
}

struct Layout {
    /// Per body array: buffer name, buffer dims, per-dim offset loop.
    buffers: Vec<(String, Vec<u64>, Vec<Option<usize>>)>,
}

fn layout(space: &DesignSpace, b: usize, a: &Assignment, ts: &[Transfer]) -> Layout {
    let body = &space.bodies[b];
    let ba = &a.bodies[b];
    let mut buffers = Vec::new();
    for (k, arr) in body.arrays.iter().enumerate() {
        let t = &ts[k];
        let owner = t.shares_buffer_of.unwrap_or(b);
        let enclosing = &ba.perm[..t.pos];
        let extents = &space.arrays[arr.array].dims;
        let mut dims = Vec::new();
        let mut offs = Vec::new();
        for (d, m) in arr.dims.iter().enumerate() {
            match m {
                DimMap::Tiled(l) if enclosing.contains(l) => {
                    dims.push(extents[d] / ba.tc[*l][0] * ba.uf[*l]);
                    offs.push(Some(*l));
                }
                _ => {
                    dims.push(extents[d]);
                    offs.push(None);
                }
            }
        }
        buffers.push((buffer_name(&arr.name, owner), dims, offs));
    }
    Layout { buffers }
}

struct Writer {
    out: String,
    depth: usize,
}

impl Writer {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn open_for(&mut self, it: &str, trip: u64, pragmas: &[String]) {
        self.line(&format!("for (int {it} = 0; {it} < {trip}; {it}++) {{"));
        self.depth += 1;
        for p in pragmas {
            self.line(p);
        }
    }

    fn close(&mut self) {
        self.depth -= 1;
        self.line("}");
    }
}

struct BodyGen<'a> {
    space: &'a DesignSpace,
    cfg: &'a PlatformConfig,
    a: &'a Assignment,
    ev: &'a Evaluation,
    b: usize,
    lay: Layout,
}

impl BodyGen<'_> {
    fn body(&self) -> &Body {
        &self.space.bodies[self.b]
    }

    /// Affine value of original loop `l` for one replica choice.
    fn recovered(&self, l: usize, replica: &BTreeMap<usize, u64>) -> AffineExpr {
        let body = self.body();
        let ba = &self.a.bodies[self.b];
        let it = &body.loops[l].iterator;
        let [t0, t1, t2] = ba.tc[l];
        let uf = ba.uf[l];
        let mut e = AffineExpr::constant(replica.get(&l).copied().unwrap_or(0) as i64 * (t1 * t2) as i64);
        if t0 / uf > 1 {
            e = e.add(&term(&level_name(it, 0), (uf * t1 * t2) as i64));
        }
        if t1 > 1 || ba.pipelined() == Some(l) {
            e = e.add(&term(&level_name(it, 1), t2 as i64));
        }
        if t2 > 1 {
            e = e.add(&term(&level_name(it, 2), 1));
        }
        e
    }

    fn env(&self, replica: &BTreeMap<usize, u64>) -> BTreeMap<String, AffineExpr> {
        (0..self.body().loops.len()).map(|l| (self.body().loops[l].iterator.clone(), self.recovered(l, replica))).collect()
    }

    fn map_ref(&self, r: &ArrayRef, env: &BTreeMap<String, AffineExpr>) -> ArrayRef {
        let body = self.body();
        let ba = &self.a.bodies[self.b];
        let k = body.array_pos(&r.array).expect("reference to an array outside the body");
        let (name, dims, offs) = &self.lay.buffers[k];
        let subscripts = r
            .subscripts
            .iter()
            .enumerate()
            .map(|(d, s)| {
                let v = substitute(s, env);
                match offs[d] {
                    // tile offset is l0 * uf * width
                    Some(l) if ba.tc[l][0] / ba.uf[l] > 1 => v.add(&term(&level_name(&body.loops[l].iterator, 0), -(dims[d] as i64))),
                    _ => v,
                }
            })
            .collect();
        ArrayRef { array: name.clone(), subscripts }
    }

    fn replicas(&self) -> Vec<BTreeMap<usize, u64>> {
        let ba = &self.a.bodies[self.b];
        let mut out = vec![BTreeMap::new()];
        for &l in &ba.perm {
            if ba.uf[l] > 1 {
                out = out
                    .into_iter()
                    .flat_map(|m| {
                        (0..ba.uf[l]).map(move |r| {
                            let mut m = m.clone();
                            m.insert(l, r);
                            m
                        })
                    })
                    .collect();
            }
        }
        out
    }

    fn transfer(&self, w: &mut Writer, k: usize, load: bool) {
        let body = self.body();
        let ba = &self.a.bodies[self.b];
        let arr = &body.arrays[k];
        let (buf, dims, offs) = &self.lay.buffers[k];
        let its: Vec<String> = (0..dims.len()).map(|d| format!("t{d}_")).collect();
        w.line(&format!("// {} {} tile", if load { "load" } else { "store" }, arr.name));
        for (d, it) in its.iter().enumerate() {
            w.open_for(it, dims[d], &[]);
        }
        let local: String = its.iter().map(|i| format!("[{i}]")).collect();
        let global: String = its
            .iter()
            .enumerate()
            .map(|(d, it)| match offs[d] {
                Some(l) => {
                    let l0 = level_name(&body.loops[l].iterator, 0);
                    if ba.tc[l][0] / ba.uf[l] > 1 {
                        format!("[{l0} * {} + {it}]", dims[d])
                    } else {
                        format!("[{it}]")
                    }
                }
                None => format!("[{it}]"),
            })
            .collect();
        if load {
            w.line(&format!("{buf}{local} = {}{global};", arr.name));
        } else {
            w.line(&format!("{}{global} = {buf}{local};", arr.name));
        }
        for _ in &its {
            w.close();
        }
    }

    fn statements(&self, w: &mut Writer, tree: bool) {
        let body = self.body();
        let ir = &self.space.distributed;
        for replica in self.replicas() {
            let env = self.env(&replica);
            for st in &body.statements {
                let s = &ir.statements[st.stmt];
                let lhs = self.map_ref(&s.lhs, &env);
                w.line(&format!("#pragma tileforge stmt {}", s.id));
                if tree {
                    let acc = s.accumulation.as_ref().expect("tree rewrite needs an accumulation");
                    let flat = self.partial_index(st);
                    let operand = acc.operand.map_refs(&|r| self.map_ref(r, &env));
                    w.line(&format!("{}[{}] = {};", partial_name(&s.id), flat, operand.render(&|r| r.to_string())));
                } else {
                    let rhs = s.rhs.map_refs(&|r| self.map_ref(r, &env));
                    w.line(&format!("{} {} {};", lhs, s.op.symbol(), rhs.render(&|r| r.to_string())));
                }
            }
        }
    }

    /// Flattened level-2 index over the reduction loops, row-major in loop order.
    fn partial_index(&self, st: &crate::space::StmtInfo) -> AffineExpr {
        let body = self.body();
        let ba = &self.a.bodies[self.b];
        let mut e = AffineExpr::constant(0);
        let mut stride = 1i64;
        for &l in st.red_loops.iter().rev() {
            let t2 = ba.tc[l][2];
            if t2 > 1 {
                e = e.add(&term(&level_name(&body.loops[l].iterator, 2), stride));
            }
            stride *= t2 as i64;
        }
        e
    }

    fn tree(&self, w: &mut Writer) {
        let body = self.body();
        let st = &body.statements[0];
        let ir = &self.space.distributed;
        let s = &ir.statements[st.stmt];
        let u = model::u_red(st, &self.a.bodies[self.b].tc);
        let name = partial_name(&s.id);
        let acc = s.accumulation.as_ref().expect("tree rewrite needs an accumulation");
        let (op, sym) = match acc.op {
            OpKind::Mul => (OpKind::Mul, "*="),
            OpKind::Sub => (OpKind::Add, "-="),
            _ => (OpKind::Add, "+="),
        };
        // balanced tree, written out so no loop needs an unroll pragma
        let mut step = 1u64;
        while step < u {
            let mut i = 0;
            while i + step < u {
                w.line(&format!("{name}[{i}] = {name}[{i}] {} {name}[{}];", op.symbol(), i + step));
                i += 2 * step;
            }
            step *= 2;
        }
        let env = self.env(&BTreeMap::new());
        let lhs = self.map_ref(&s.lhs, &env);
        w.line(&format!("{lhs} {sym} {name}[0];"));
    }

    fn emit(&self, w: &mut Writer) {
        let body = self.body();
        let ba = &self.a.bodies[self.b];
        let be = &self.ev.bodies[self.b];
        let ts = &self.ev.transfers[self.b];
        let n = body.loops.len();
        let pip = ba.pipelined();
        let tree = uses_tree(self.cfg, body, &ba.tc);
        w.line(&format!("#pragma tileforge body {}", self.b));
        w.line("{");
        w.depth += 1;
        w.line(&format!("// body {}: {}", body.id, body.statements.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(", ")));
        for (l, lp) in body.loops.iter().enumerate() {
            w.line(&format!("// {} = {}", lp.iterator, self.recovered(l, &BTreeMap::new())));
        }
        let transfers_at = |w: &mut Writer, pos: usize, load: bool| {
            for t in ts.iter().filter(|t| t.pos == pos && if load { t.load } else { t.store }) {
                self.transfer(w, t.array, load);
            }
        };
        let mut opened = Vec::new();
        transfers_at(w, 0, true);
        for (p, &l) in ba.perm.iter().enumerate() {
            let trips = ba.tc[l][0] / ba.uf[l];
            if trips > 1 {
                let mut pragmas = Vec::new();
                if pip.is_some() && body.loops[l].reduction {
                    pragmas.push("#pragma HLS loop_flatten off".to_string());
                }
                w.open_for(&level_name(&body.loops[l].iterator, 0), trips, &pragmas);
                opened.push(true);
            } else {
                opened.push(false);
            }
            transfers_at(w, p + 1, true);
        }
        let mut inner = 0;
        if let Some(p) = pip {
            w.open_for(&level_name(&body.loops[p].iterator, 1), ba.tc[p][1], &[format!("#pragma HLS pipeline II={}", be.ii)]);
            inner += 1;
        }
        let mut level2: Vec<usize> = (0..n).filter(|l| ba.tc[*l][2] > 1).collect();
        if tree {
            level2.sort_by_key(|l| body.loops[*l].reduction);
        }
        let mut red_open = false;
        for &l in &level2 {
            if tree && body.loops[l].reduction && !red_open {
                red_open = true;
                // one partial array per unrolled instance of the outer loops
                let st = &body.statements[0];
                let s = &self.space.distributed.statements[st.stmt];
                let ty = self.space.distributed.array(&s.lhs.array).unwrap().ty;
                w.line("{");
                w.depth += 1;
                w.line(&format!("{} {}[{}];", ty.c_name(), partial_name(&s.id), model::u_red(st, &ba.tc)));
                inner += 1;
            }
            w.open_for(&level_name(&body.loops[l].iterator, 2), ba.tc[l][2], &["#pragma HLS unroll".to_string()]);
            inner += 1;
        }
        self.statements(w, tree);
        if tree {
            // close the reduction loops, then combine
            let red_loops = level2.iter().filter(|l| body.loops[**l].reduction).count();
            for _ in 0..red_loops {
                w.close();
                inner -= 1;
            }
            self.tree(w);
            w.close();
            inner -= 1;
        }
        for _ in 0..inner {
            w.close();
        }
        for p in (0..ba.perm.len()).rev() {
            transfers_at(w, p + 1, false);
            if opened[p] {
                w.close();
            }
        }
        transfers_at(w, 0, false);
        w.depth -= 1;
        w.line("}");
    }
}

/// Emits the design for a feasible assignment.
pub fn emit_design(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment) -> Result<String, CodegenError> {
    let ev = model::evaluate(space, cfg, a);
    if !ev.feasible() {
        let msgs: Vec<String> = ev.violations.iter().map(|v| v.to_string()).collect();
        return Err(CodegenError::InternalInvariant(msgs.join("; ")));
    }
    let ir = &space.kernel;
    let mut w = Writer { out: String::new(), depth: 0 };
    w.line(&format!("// {}: modeled latency {} cycles", ir.name, ev.objective));
    w.line(&format!("void {}({})", ir.name, ir.c_params("")));
    w.line("{");
    w.depth += 1;
    let mut declared = std::collections::BTreeSet::new();
    let mut gens = Vec::new();
    for b in 0..space.bodies.len() {
        let lay = layout(space, b, a, &ev.transfers[b]);
        let body = &space.bodies[b];
        for (k, (name, dims, _)) in lay.buffers.iter().enumerate() {
            if !declared.insert(name.clone()) {
                continue;
            }
            let info = &space.arrays[body.arrays[k].array];
            let ty = ir.array(&info.name).unwrap().ty;
            let ds: String = dims.iter().map(|d| format!("[{d}]")).collect();
            w.line(&format!("{} {}{};", ty.c_name(), name, ds));
            for (d, f) in ev.partition[body.arrays[k].array].iter().enumerate() {
                if *f > 1 {
                    w.line(&format!("#pragma HLS array_partition variable={name} cyclic factor={f} dim={}", d + 1));
                }
            }
        }
        gens.push(lay);
    }
    for (b, lay) in gens.into_iter().enumerate() {
        let g = BodyGen { space, cfg, a, ev: &ev, b, lay };
        g.emit(&mut w);
    }
    w.depth -= 1;
    w.line("}");
    Ok(w.out)
}

/// A C program that runs the original and the optimized kernel on seeded
/// inputs and compares every array. Exit status 0 means equal.
pub fn emit_harness(ir: &KernelIr, design_file: &str, rel_tol: Option<f64>) -> String {
    let mut s = String::new();
    let name = &ir.name;
    s.push_str("#include <math.h>\n#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n\n");
    let _ = writeln!(s, "#include \"{design_file}\"\n");
    s.push_str("static ");
    s.push_str(&ir.to_c_named(&format!("{name}_ref")));
    s.push_str("\nstatic unsigned long long lcg_state;\n\n");
    s.push_str("static long long lcg_next(void)\n{\n  lcg_state = lcg_state * 6364136223846793005ULL + 1442695040888963407ULL;\n  return (long long)((lcg_state >> 33) % 17) - 8;\n}\n\n");
    for a in &ir.arrays {
        let dims: String = a.dims.iter().map(|d| format!("[{d}]")).collect();
        let _ = writeln!(s, "static {} {}_ref{};", a.ty.c_name(), a.name, dims);
        let _ = writeln!(s, "static {} {}_opt{};", a.ty.c_name(), a.name, dims);
    }
    s.push_str("\nint main(int argc, char **argv)\n{\n");
    s.push_str("  lcg_state = argc > 1 ? strtoull(argv[1], 0, 10) : 1;\n");
    for sc in &ir.scalars {
        let v = if sc.ty.is_floating() { "lcg_next() * 0.25" } else { "lcg_next()" };
        let _ = writeln!(s, "  {} {} = ({}){};", sc.ty.c_name(), sc.name, sc.ty.c_name(), v);
    }
    for a in &ir.arrays {
        let v = if a.ty.is_floating() { "lcg_next() * 0.25" } else { "lcg_next()" };
        let _ = writeln!(s, "  for (long n = 0; n < {}; n++)", a.elements());
        let _ = writeln!(s, "    (({} *){}_ref)[n] = ({}){};", a.ty.c_name(), a.name, a.ty.c_name(), v);
        let _ = writeln!(s, "  memcpy({0}_opt, {0}_ref, sizeof {0}_ref);", a.name);
    }
    let args = |suffix: &str| -> String {
        let mut v: Vec<String> = ir.scalars.iter().map(|x| x.name.clone()).collect();
        v.extend(ir.arrays.iter().map(|a| format!("{}{}", a.name, suffix)));
        v.join(", ")
    };
    let _ = writeln!(s, "  {name}_ref({});", args("_ref"));
    let _ = writeln!(s, "  {name}({});", args("_opt"));
    s.push_str("  int bad = 0;\n");
    for a in &ir.arrays {
        match rel_tol {
            Some(tol) if a.ty.is_floating() => {
                let _ = writeln!(s, "  for (long n = 0; n < {} && !bad; n++) {{", a.elements());
                let _ = writeln!(s, "    double x = (({} *){}_ref)[n], y = (({} *){}_opt)[n];", a.ty.c_name(), a.name, a.ty.c_name(), a.name);
                let _ = writeln!(s, "    if (x != y && !(isnan(x) && isnan(y)) && !(isfinite(x) && isfinite(y) && fabs(x - y) <= {tol:e} * fmax(fmax(fabs(x), fabs(y)), 1.0))) {{");
                let _ = writeln!(s, "      printf(\"FAIL {} element %ld: %g vs %g\\n\", n, x, y);", a.name);
                s.push_str("      bad = 1;\n    }\n  }\n");
            }
            _ => {
                let _ = writeln!(s, "  if (memcmp({0}_ref, {0}_opt, sizeof {0}_ref) != 0) {{", a.name);
                let _ = writeln!(s, "    printf(\"FAIL {} differs\\n\");", a.name);
                s.push_str("    bad = 1;\n  }\n");
            }
        }
    }
    s.push_str("  if (!bad)\n    printf(\"PASS\\n\");\n  return bad;\n}\n");
    s
}

/// Design plus harness; the harness tolerance follows the reduction mode.
pub fn emit(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment) -> Result<Emitted, CodegenError> {
    let design = emit_design(space, cfg, a)?;
    let tol = if cfg.tree_reduction { Some(1e-4) } else { None };
    let harness = emit_harness(&space.kernel, &format!("{}_opt.c", space.kernel.name), tol);
    Ok(Emitted { design, harness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_generated_function, parse_kernel};
    use crate::interp::{compare, run_function, run_ir, seeded_memory};
    use crate::solver::{solve, Pins, SolveOptions};
    use crate::space::build_space;
    use rand::{Rng, SeedableRng};

    const SMALL: [&str; 6] = ["gemm_small", "gemm_tiny", "bicg", "doitgen", "cnn_small", "recurrence"];

    fn space(name: &str) -> DesignSpace {
        let path = format!("{}/kernels/{name}.c", env!("CARGO_MANIFEST_DIR"));
        let src = std::fs::read_to_string(path).unwrap();
        build_space(&parse_kernel(&src).unwrap(), 512).unwrap()
    }

    fn check(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment) {
        let design = emit_design(space, cfg, a).unwrap();
        let f = parse_generated_function(&design, &space.kernel.name).unwrap_or_else(|e| panic!("{e:?}\n{design}"));
        let tol = if cfg.tree_reduction { Some(1e-4) } else { None };
        for seed in [1, 7] {
            let mut want = seeded_memory(&space.kernel, seed);
            run_ir(&space.kernel, &mut want).unwrap();
            let mut got = seeded_memory(&space.kernel, seed);
            run_function(&f, &mut got).unwrap();
            if let Err(e) = compare(&space.kernel, &want, &got, tol) {
                panic!("{e}\n{design}");
            }
        }
    }

    #[test]
    fn solved_designs_match_the_original() {
        for tree in [false, true] {
            for cfg in [
                PlatformConfig { tree_reduction: tree, ..PlatformConfig::default() },
                PlatformConfig { dsp_available: 24, mem_bytes: 1500, tree_reduction: tree, ..PlatformConfig::default() },
            ] {
                for k in SMALL {
                    let sp = space(k);
                    // tight budgets prune poorly, so any incumbent will do
                    let opts = SolveOptions { budget: Some(std::time::Duration::from_secs(3)), ..SolveOptions::default() };
                    let out = solve(&sp, &cfg, &Pins::none(&sp), &opts).unwrap();
                    check(&sp, &cfg, &out.best.unwrap().assignment);
                }
            }
        }
    }

    #[test]
    fn random_designs_match_the_original() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for k in SMALL {
            let sp = space(k);
            for tree in [false, true] {
                let cfg = PlatformConfig { tree_reduction: tree, ..PlatformConfig::default() };
                let mut hits = 0;
                for _ in 0..4000 {
                    let a = model::random_assignment(&sp, &mut |n| rng.gen_range(0..n));
                    if model::evaluate(&sp, &cfg, &a).feasible() {
                        check(&sp, &cfg, &a);
                        hits += 1;
                        if hits == 12 {
                            break;
                        }
                    }
                }
                assert!(hits > 0, "{k}: no feasible draw");
            }
        }
    }

    #[test]
    fn pragmas_follow_the_assignment() {
        let sp = space("gemm_small");
        let cfg = PlatformConfig::default();
        let out = solve(&sp, &cfg, &Pins::none(&sp), &SolveOptions::default()).unwrap();
        let a = out.best.unwrap().assignment;
        let ev = model::evaluate(&sp, &cfg, &a);
        let d = emit_design(&sp, &cfg, &a).unwrap();
        let pipelined = a.bodies.iter().filter(|b| b.pipelined().is_some()).count();
        assert_eq!(d.matches("#pragma HLS pipeline").count(), pipelined);
        let unrolled: usize = a.bodies.iter().map(|b| b.tc.iter().filter(|t| t[2] > 1).count()).sum();
        assert_eq!(d.matches("#pragma HLS unroll").count(), unrolled);
        assert_eq!(d.matches("#pragma tileforge body").count(), sp.bodies.len());
        for (b, be) in ev.bodies.iter().enumerate() {
            if a.bodies[b].pipelined().is_some() {
                assert!(d.contains(&format!("II={}", be.ii)));
            }
        }
    }

    #[test]
    fn infeasible_assignment_is_refused() {
        let sp = space("gemm_small");
        let cfg = PlatformConfig { mem_bytes: 0, ..PlatformConfig::default() };
        assert!(emit(&sp, &cfg, &Assignment::identity(&sp)).is_err());
    }

    #[test]
    fn harness_seeds_scalars_first() {
        let sp = space("gemm_small");
        let h = emit_harness(&sp.kernel, "gemm_small_opt.c", None);
        let alpha = h.find("float alpha =").unwrap();
        let c = h.find("C_ref)[n]").unwrap();
        assert!(alpha < c);
        assert!(h.contains("#include \"gemm_small_opt.c\""));
        assert!(h.contains("memcmp(C_ref, C_opt"));
    }
}
