//! Second, independent check of solutions and emitted designs.
//!
//! Nothing here calls into the cost model: footprints come straight from
//! the kernel's subscripts, and latency, DSP and memory are recomputed
//! with their own arithmetic. The design space only supplies structure
//! (bodies, loop order, legal permutations, dependence facts).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::deps::Dist;
use crate::error::{FrontendError, SchemaError};
use crate::frontend::{parse_generated_function, CStmt};
use crate::interp::{compare, run_function_counted, run_ir, seeded_memory};
use crate::ir::OpKind;
use crate::model::{Assignment, BodyAssign, Tag, Violation};
use crate::platform::PlatformConfig;
use crate::solution::Solution;
use crate::space::{Body, DesignSpace};

/// Outcome of re-checking one solution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// Recomputed latency; absent when the assignment is malformed.
    pub objective: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claimed: Option<u128>,
    pub violations: Vec<Violation>,
}

/// Recomputed quantities for a well-formed assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Recomputed {
    pub objective: u128,
    pub dsp_optimistic: u64,
    pub dsp_pessimistic: u64,
    pub memory_bytes: u128,
    pub ii: Vec<u64>,
    pub partition: Vec<Vec<u64>>,
}

fn v(tag: Tag, ctx: impl Into<String>, msg: impl Into<String>) -> Violation {
    Violation::new(tag, ctx, msg)
}

fn lp(body: &Body, l: usize) -> String {
    format!("{}.{}", body.id, body.loops[l].iterator)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest power of two up to `cap` that divides a row of the array.
pub fn max_burst(last_dim: u64, element_bits: u32, cap: u32) -> u32 {
    let row = last_dim as u128 * element_bits as u128;
    let mut best = 1u32;
    let mut b = 1u32;
    while b <= cap {
        if row % b as u128 == 0 {
            best = b;
        }
        match b.checked_mul(2) {
            Some(x) => b = x,
            None => break,
        }
    }
    best
}

/// Per body array, per dimension: the loop whose level-0 tiling shrinks the tile.
fn tiling_loops(space: &DesignSpace, b: usize) -> Vec<Vec<Option<usize>>> {
    let body = &space.bodies[b];
    let ir = &space.kernel;
    body.arrays
        .iter()
        .map(|arr| {
            let extents = &ir.array(&arr.name).unwrap().dims;
            let subs: Vec<&Vec<crate::ir::AffineExpr>> = body
                .statements
                .iter()
                .flat_map(|s| ir.statements[s.stmt].accesses.iter())
                .filter(|acc| acc.array == arr.name)
                .map(|acc| &acc.subscripts)
                .collect();
            let mut per_dim: Vec<Option<usize>> = (0..extents.len())
                .map(|d| {
                    let first = &subs[0][d];
                    if first.constant != 0 || first.terms.len() != 1 || subs.iter().any(|s| s[d] != *first) {
                        return None;
                    }
                    let (it, c) = first.terms.iter().next().unwrap();
                    let l = body.loops.iter().position(|x| x.iterator == *it)?;
                    (*c == 1 && body.loops[l].trip == extents[d]).then_some(l)
                })
                .collect();
            for d in 0..per_dim.len() {
                if let Some(l) = per_dim[d] {
                    if per_dim.iter().filter(|x| **x == Some(l)).count() > 1 {
                        for x in per_dim.iter_mut() {
                            if *x == Some(l) {
                                *x = None;
                            }
                        }
                    }
                }
            }
            per_dim
        })
        .collect()
}

/// Elements of a tile whose enclosing level-0 loops are `outer`.
fn tile_elements(extents: &[u64], tiling: &[Option<usize>], outer: &[usize], tc: &[[u64; 3]]) -> u64 {
    let mut n = 1u64;
    for (d, e) in extents.iter().enumerate() {
        n *= match tiling[d] {
            Some(l) if outer.contains(&l) => e / tc[l][0],
            _ => *e,
        };
    }
    n
}

fn shape_problems(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut out = Vec::new();
    if a.bodies.len() != space.bodies.len() {
        out.push(v(Tag::Domain, "kernel", format!("{} bodies assigned, {} expected", a.bodies.len(), space.bodies.len())));
        return out;
    }
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        let n = body.loops.len();
        let lens = [ba.tc.len(), ba.pip.len(), ba.uf.len(), ba.perm.len()];
        if lens.iter().any(|x| *x != n) {
            out.push(v(Tag::Domain, &body.id, "per-loop vectors do not match the loop count"));
            continue;
        }
        let mut sorted = ba.perm.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() || !body.perms.iter().any(|p| *p == ba.perm) {
            out.push(v(Tag::Domain, &body.id, "level-0 order is not a legal permutation"));
        }
        if ba.cache.len() != body.arrays.len() || ba.cache.iter().any(|c| c.len() != n + 1) {
            out.push(v(Tag::E10, &body.id, "cache selection vectors are malformed"));
        }
        if ba.tc.iter().flatten().any(|x| *x == 0) || ba.uf.iter().any(|x| *x == 0) {
            out.push(v(Tag::Domain, &body.id, "zero trip or unroll factor"));
        }
    }
    if let Some(p) = &a.partition {
        let ok = p.len() == space.arrays.len()
            && p.iter().zip(&space.arrays).all(|(f, info)| f.len() == info.dims.len() && f.iter().all(|x| *x > 0));
        if !ok {
            out.push(v(Tag::Domain, "partition", "partition factors do not match the arrays"));
        }
    }
    out
}

/// Loops in execution order across all three levels, skipping trip-1 levels.
fn order_problem(body: &Body, ba: &BodyAssign) -> Option<String> {
    let n = body.loops.len();
    let mut runs: Vec<usize> = Vec::new();
    let slots = ba.perm.iter().map(|&l| (l, 0)).chain((0..n).map(|l| (l, 1))).chain((0..n).map(|l| (l, 2)));
    for (l, lvl) in slots {
        if ba.tc[l][lvl] > 1 && runs.last() != Some(&l) {
            runs.push(l);
        }
    }
    let mut count = vec![0; n];
    for l in &runs {
        count[*l] += 1;
    }
    if let Some(l) = (0..n).find(|l| count[*l] > 1) {
        return Some(format!("loop {} is interleaved with others", body.loops[l].iterator));
    }
    if runs.windows(2).all(|w| w[0] < w[1]) {
        return None;
    }
    for dep in &body.dep_vectors {
        if runs.iter().any(|l| dep[*l] == Dist::Star) {
            return Some("unknown dependence distance under reordering".into());
        }
        for &l in &runs {
            match dep[l] {
                Dist::Star | Dist::Const(0) => continue,
                Dist::Const(x) if x < 0 => return Some("dependence reversed by the tiled order".into()),
                Dist::Const(_) => break,
            }
        }
    }
    None
}

/// Statement timing facts recomputed from op counts.
struct Timing {
    ii: u64,
    lat2: u64,
}

fn stmt_timing(cfg: &PlatformConfig, body: &Body, s: usize, ba: &BodyAssign) -> Timing {
    let st = &body.statements[s];
    let pip = ba.pip.iter().position(|p| *p);
    let u: u64 = st.red_loops.iter().map(|l| ba.tc[*l][2]).product();
    let mut il = 0;
    for (op, n) in &st.ops {
        let parallel = if Some(*op) == st.red_op { *n > 1 } else { *n > 0 };
        if parallel {
            il = il.max(cfg.il_par.get(*op));
        }
    }
    let il = il.max(1);
    let log2 = |x: u64| {
        let mut k = 0;
        while (1u64 << k) < x {
            k += 1;
        }
        k.max(1)
    };
    let depth = match st.red_op {
        Some(op) if u > 1 => cfg.il_red.get(op) * if cfg.tree_reduction { log2(u) } else { u - 1 },
        _ => 0,
    };
    let lat2 = il + depth;
    let ii = match pip {
        None => 0,
        Some(p) if st.red_loops.contains(&p) => {
            let op = st.red_op.unwrap_or(OpKind::Add);
            cfg.il_red.get(op) * if cfg.tree_reduction { log2(u) } else { u }
        }
        Some(p) if st.carried.contains(&p) => lat2,
        Some(_) => 1,
    };
    Timing { ii, lat2 }
}

/// Every constraint and the objective, recomputed.
pub fn check_assignment(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment) -> (Vec<Violation>, Option<Recomputed>) {
    let mut out = shape_problems(space, a);
    if !out.is_empty() {
        return (out, None);
    }
    let ir = &space.kernel;
    let nb = space.bodies.len();

    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        for (l, lo) in body.loops.iter().enumerate() {
            let [x, y, z] = ba.tc[l];
            let prod = x as u128 * y as u128 * z as u128;
            if prod != lo.trip as u128 {
                out.push(v(Tag::E1, lp(body, l), format!("{x} x {y} x {z} = {prod}, not {}", lo.trip)).values(prod, lo.trip as u128));
            }
            if !ba.pip[l] && y > 1 {
                out.push(v(Tag::E3, lp(body, l), "level-1 factor above 1 on a loop that is not pipelined").values(y as u128, 1));
            }
            let u = ba.uf[l];
            if u > 1 {
                if body.singleton {
                    out.push(v(Tag::E9, lp(body, l), "single-statement bodies are not coarsely unrolled").values(u as u128, 1));
                } else if lo.reduction || body.statements.iter().any(|s| s.carried.contains(&l)) {
                    out.push(v(Tag::E6, lp(body, l), "reduction or carried loop coarsely unrolled").values(u as u128, 1));
                }
                if u > x {
                    out.push(v(Tag::E8, lp(body, l), "unroll factor above the level-0 factor").values(u as u128, x as u128));
                } else if x % u != 0 {
                    out.push(v(Tag::E7, lp(body, l), "unroll factor does not divide the level-0 factor").values(u as u128, x as u128));
                }
            }
        }
        let pipelined = ba.pip.iter().filter(|p| **p).count();
        if pipelined > 1 {
            out.push(v(Tag::E4, &body.id, "several loops pipelined").values(pipelined as u128, 1));
        }
        if !body.fully_permutable {
            if let Some(m) = order_problem(body, ba) {
                out.push(v(Tag::Order, &body.id, m));
            }
        }
        for (k, arr) in body.arrays.iter().enumerate() {
            let set = ba.cache[k].iter().filter(|c| **c).count();
            if set != 1 {
                out.push(v(Tag::E11, format!("{}.{}", body.id, arr.name), "needs exactly one cache point").values(set as u128, 1));
            }
        }
    }

    // tiles and transfers
    let pos_of = |b: usize, k: usize| a.bodies[b].cache[k].iter().position(|c| *c).unwrap_or(0);
    let tilings: Vec<_> = (0..nb).map(|b| tiling_loops(space, b)).collect();
    // (elements, load, store, owns buffer) per body array
    let mut xfer: Vec<Vec<(u64, bool, bool, bool)>> = space
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            body.arrays
                .iter()
                .enumerate()
                .map(|(k, arr)| {
                    let ext = &ir.array(&arr.name).unwrap().dims;
                    let ba = &a.bodies[b];
                    let e = tile_elements(ext, &tilings[b][k], &ba.perm[..pos_of(b, k)], &ba.tc);
                    (e, true, arr.written, true)
                })
                .collect()
        })
        .collect();
    for decl in &ir.arrays {
        // users in body order; runs of whole-array users share one buffer
        let users: Vec<(usize, usize)> =
            (0..nb).filter_map(|b| space.bodies[b].arrays.iter().position(|x| x.name == decl.name).map(|k| (b, k))).collect();
        let mut run: Vec<(usize, usize)> = Vec::new();
        let flush = |run: &mut Vec<(usize, usize)>, xfer: &mut Vec<Vec<(u64, bool, bool, bool)>>| {
            if run.len() > 1 {
                let writes = run.iter().any(|(b, k)| space.bodies[*b].arrays[*k].written);
                let last = run.len() - 1;
                for (i, (b, k)) in run.iter().enumerate() {
                    let t = &mut xfer[*b][*k];
                    t.1 = i == 0;
                    t.2 = writes && i == last;
                    t.3 = i == 0;
                }
            }
            run.clear();
        };
        for &(b, k) in &users {
            if pos_of(b, k) == 0 {
                run.push((b, k));
            } else {
                flush(&mut run, &mut xfer);
            }
        }
        flush(&mut run, &mut xfer);
    }
    let mut memory: u128 = 0;
    for (b, body) in space.bodies.iter().enumerate() {
        for (k, arr) in body.arrays.iter().enumerate() {
            if xfer[b][k].3 {
                let bytes = (ir.array(&arr.name).unwrap().ty.bits() as u128).div_ceil(8).max(1);
                memory += xfer[b][k].0 as u128 * bytes;
            }
        }
    }
    if memory > cfg.mem_bytes as u128 {
        out.push(v(Tag::E12, "kernel", "buffers do not fit on chip").values(memory, cfg.mem_bytes as u128));
    }

    // partitioning
    let partition: Vec<Vec<u64>> = match &a.partition {
        Some(p) => p.clone(),
        None => ir
            .arrays
            .iter()
            .map(|decl| {
                (0..decl.dims.len())
                    .map(|d| {
                        let mut f = 1u64;
                        for b in 0..nb {
                            for l in indexing_loops(space, b, &decl.name, d) {
                                let t = a.bodies[b].tc[l][2];
                                f = f / gcd(f, t) * t;
                            }
                        }
                        f
                    })
                    .collect()
            })
            .collect(),
    };
    for (ai, decl) in ir.arrays.iter().enumerate() {
        for d in 0..decl.dims.len() {
            let f = partition[ai][d];
            for (b, body) in space.bodies.iter().enumerate() {
                for l in indexing_loops(space, b, &decl.name, d) {
                    let t = a.bodies[b].tc[l][2];
                    let c = format!("{}[{}] via {}", decl.name, d, lp(body, l));
                    if f < t {
                        out.push(v(Tag::E13, c, "fewer banks than unrolled accesses").values(f as u128, t as u128));
                    } else if f % t != 0 {
                        out.push(v(Tag::E14, c, "bank count not a multiple of the unroll factor").values(f as u128, t as u128));
                    }
                }
            }
        }
        let banks = partition[ai].iter().fold(1u128, |acc, x| acc * *x as u128);
        if banks > cfg.max_part as u128 {
            out.push(v(Tag::E15, &decl.name, "too many banks").values(banks, cfg.max_part as u128));
        }
    }

    // latency and DSP
    let mut objective: u128 = 0;
    let mut shares: Vec<BTreeMap<OpKind, u64>> = Vec::new();
    let mut iis = Vec::new();
    for (b, body) in space.bodies.iter().enumerate() {
        let ba = &a.bodies[b];
        let timings: Vec<Timing> = (0..body.statements.len()).map(|s| stmt_timing(cfg, body, s, ba)).collect();
        let ii = timings.iter().map(|t| t.ii).max().unwrap_or(0);
        let lat2 = timings.iter().map(|t| t.lat2).max().unwrap_or(1) as u128;
        let lat1 = match ba.pip.iter().position(|p| *p) {
            Some(p) => lat2 + (ba.tc[p][1] as u128 - 1) * ii as u128,
            None => ba.tc.iter().fold(lat2, |acc, t| acc * t[1] as u128),
        };
        let mut lat0 = lat1;
        for l in 0..body.loops.len() {
            let (t0, u) = (ba.tc[l][0], ba.uf[l]);
            lat0 = lat0.saturating_mul(t0.div_ceil(u) as u128);
        }
        let mut mem_lat: u128 = 0;
        for pos in 0..=body.loops.len() {
            let reps = ba.perm[..pos].iter().fold(1u128, |acc, l| acc * ba.tc[*l][0] as u128);
            let (mut ld, mut stv) = (0u128, 0u128);
            for (k, arr) in body.arrays.iter().enumerate() {
                if pos_of(b, k) != pos {
                    continue;
                }
                let decl = ir.array(&arr.name).unwrap();
                let burst = max_burst(*decl.dims.last().unwrap_or(&1), decl.ty.bits(), cfg.burst_cap_bits);
                let (e, load, store, _) = xfer[b][k];
                let beats = (e as u128 * decl.ty.bits() as u128).div_ceil(burst as u128).saturating_mul(reps);
                if load {
                    ld = ld.max(beats);
                }
                if store {
                    stv = stv.max(beats);
                }
            }
            mem_lat = mem_lat.saturating_add(ld + stv);
        }
        objective = objective.saturating_add(lat0.saturating_add(mem_lat));
        let width: u64 = ba.tc.iter().map(|t| t[2]).product::<u64>() * ba.uf.iter().product::<u64>();
        let mut share = BTreeMap::new();
        for st in &body.statements {
            for (op, n) in &st.ops {
                *share.entry(*op).or_insert(0) += cfg.dsp_cost.get(*op) * *n as u64 * width;
            }
        }
        for x in share.values_mut() {
            *x = x.div_ceil(ii.max(1));
        }
        shares.push(share);
        iis.push(ii);
    }
    let mut optimistic = 0;
    let mut pessimistic = 0;
    for op in [OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div] {
        let each = shares.iter().map(|s| s.get(&op).copied().unwrap_or(0));
        optimistic += each.clone().max().unwrap_or(0);
        pessimistic += each.sum::<u64>();
    }
    if cfg.reuse_opt && optimistic > cfg.dsp_available {
        out.push(v(Tag::E18, "kernel", "DSP budget exceeded with sharing across bodies").values(optimistic as u128, cfg.dsp_available as u128));
    }
    if !cfg.reuse_opt && pessimistic > cfg.dsp_available {
        out.push(v(Tag::E19, "kernel", "DSP budget exceeded").values(pessimistic as u128, cfg.dsp_available as u128));
    }
    let re = Recomputed { objective, dsp_optimistic: optimistic, dsp_pessimistic: pessimistic, memory_bytes: memory, ii: iis, partition };
    (out, Some(re))
}

/// Body loops whose iterator appears in dimension `d` of any access to `array`.
fn indexing_loops(space: &DesignSpace, b: usize, array: &str, d: usize) -> Vec<usize> {
    let body = &space.bodies[b];
    let ir = &space.kernel;
    (0..body.loops.len())
        .filter(|l| {
            body.statements.iter().any(|s| {
                ir.statements[s.stmt]
                    .accesses
                    .iter()
                    .any(|acc| acc.array == array && acc.subscripts[d].terms.contains_key(&body.loops[*l].iterator))
            })
        })
        .collect()
}

/// Re-checks a solution file: constraints, burst widths and the claimed objective.
pub fn verify_solution(space: &DesignSpace, cfg: &PlatformConfig, sol: &Solution) -> Result<Verdict, SchemaError> {
    let a = sol.to_assignment(space)?;
    let (mut violations, re) = check_assignment(space, cfg, &a);
    for sa in &sol.arrays {
        if let Some(decl) = space.kernel.array(&sa.name) {
            let want = max_burst(*decl.dims.last().unwrap_or(&1), decl.ty.bits(), cfg.burst_cap_bits);
            if sa.burst != want {
                violations.push(v(Tag::Burst, &sa.name, "burst width is not the widest legal one").values(sa.burst as u128, want as u128));
            }
        }
    }
    let objective = re.map(|r| r.objective);
    if let Some(o) = objective {
        if o != sol.objective {
            violations.push(v(Tag::Objective, "kernel", "claimed objective differs from the recomputed one").values(sol.objective, o));
        }
    }
    Ok(Verdict { pass: violations.is_empty(), objective, claimed: Some(sol.objective), violations })
}

fn static_counts(stmts: &[CStmt], reps: u128, out: &mut BTreeMap<String, u128>) {
    for st in stmts {
        match st {
            CStmt::For { trip, body, .. } => static_counts(body, reps * *trip as u128, out),
            CStmt::Block(body) => static_counts(body, reps, out),
            CStmt::Assign { tag: Some(t), .. } => *out.entry(t.clone()).or_insert(0) += reps,
            _ => {}
        }
    }
}

/// Level suffix of each pragma-carrying loop: pipeline on level 1, unroll on level 2.
fn pragma_levels(stmts: &[CStmt], out: &mut Vec<Violation>) {
    for st in stmts {
        match st {
            CStmt::For { iterator, pragmas, body, .. } => {
                for p in pragmas {
                    let want = if p.contains("HLS pipeline") {
                        Some('1')
                    } else if p.contains("HLS unroll") {
                        Some('2')
                    } else if p.contains("loop_flatten") {
                        Some('0')
                    } else {
                        None
                    };
                    if let Some(c) = want {
                        if !iterator.ends_with(c) {
                            out.push(v(Tag::Pragma, iterator, format!("`{p}` on a loop that is not level {c}")));
                        }
                    }
                }
                pragma_levels(body, out);
            }
            CStmt::Block(body) => pragma_levels(body, out),
            _ => {}
        }
    }
}

/// Structural audit of an emitted design: statement instances counted from
/// loop trips, pragma placement and, when `execute` is set, results on
/// seeded inputs compared against the original kernel.
pub fn audit_design(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment, design: &str, execute: bool) -> Result<Vec<Violation>, FrontendError> {
    let ir = &space.kernel;
    let f = parse_generated_function(design, &ir.name)?;
    let mut out = Vec::new();

    let mut counts = BTreeMap::new();
    static_counts(&f.body, 1, &mut counts);
    for s in &ir.statements {
        let n = counts.get(&s.id).copied().unwrap_or(0);
        let expect = ir.instances(s) as u128;
        if n != expect {
            out.push(v(Tag::Coverage, &s.id, "statement instances in the design").values(n, expect));
        }
    }
    if let Some(extra) = counts.keys().find(|k| ir.statement(k).is_none()) {
        out.push(v(Tag::Coverage, extra, "tagged statement not in the kernel"));
    }
    pragma_levels(&f.body, &mut out);

    if execute {
        let mut want = seeded_memory(ir, 1);
        let mut got = want.clone();
        run_ir(ir, &mut want).map_err(|e| FrontendError::Invalid(e.0))?;
        match run_function_counted(&f, &mut got) {
            Err(e) => out.push(v(Tag::Coverage, &ir.name, format!("design does not execute: {}", e.0))),
            Ok(ran) => {
                for s in &ir.statements {
                    let n = ran.get(&s.id).copied().unwrap_or(0) as u128;
                    if n != counts.get(&s.id).copied().unwrap_or(0) {
                        out.push(v(Tag::Coverage, &s.id, "executed instances differ from the loop structure"));
                    }
                }
                let tol = cfg.tree_reduction.then_some(1e-4);
                if let Err(m) = compare(ir, &want, &got, tol) {
                    out.push(v(Tag::Coverage, &ir.name, format!("results differ from the original: {m}")));
                }
            }
        }
    }

    let (_, re) = check_assignment(space, cfg, a);
    let lines: Vec<&str> = design.lines().map(str::trim).collect();
    let pipelines: Vec<u64> = lines
        .iter()
        .filter_map(|l| l.strip_prefix("#pragma HLS pipeline II="))
        .filter_map(|x| x.trim().parse().ok())
        .collect();
    let mut expect_ii: Vec<u64> = Vec::new();
    let mut unrolls = 0;
    for (b, ba) in a.bodies.iter().enumerate() {
        if ba.pip.iter().any(|p| *p) {
            expect_ii.push(re.as_ref().map(|r| r.ii[b]).unwrap_or(0));
        }
        unrolls += ba.tc.iter().filter(|t| t[2] > 1).count();
    }
    if pipelines != expect_ii {
        out.push(v(Tag::Pragma, &ir.name, format!("pipeline pragmas {pipelines:?}, expected {expect_ii:?}")));
    }
    let found = lines.iter().filter(|l| **l == "#pragma HLS unroll").count();
    if found != unrolls {
        out.push(v(Tag::Pragma, &ir.name, "unroll pragmas").values(found as u128, unrolls as u128));
    }
    // every partitioned dimension shows up on each buffer of that array
    let mut buffers: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for l in &lines {
        if let Some(rest) = l.strip_prefix("#pragma HLS array_partition variable=") {
            let var = rest.split_whitespace().next().unwrap_or("");
            buffers.entry(var.to_string()).or_default().push(rest.to_string());
        }
    }
    if let Some(re) = &re {
        for (ai, decl) in ir.arrays.iter().enumerate() {
            {
                let prefix = format!("{} {}_b", decl.ty.c_name(), decl.name);
                for line in lines.iter().filter(|l| l.starts_with(&prefix)) {
                    let name = line.split_whitespace().nth(1).unwrap_or("").split('[').next().unwrap_or("");
                    for (d, fct) in re.partition[ai].iter().enumerate() {
                        if *fct > 1 {
                            let want = format!("{name} cyclic factor={fct} dim={}", d + 1);
                            if !buffers.get(name).is_some_and(|ps| ps.contains(&want)) {
                                out.push(v(Tag::Pragma, name, format!("missing `{want}`")));
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|x, y| (x.constraint, &x.context, &x.message).cmp(&(y.constraint, &y.context, &y.message)));
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::emit_design;
    use crate::frontend::parse_kernel;
    use crate::model::{evaluate, random_assignment};
    use crate::solver::{solve, Pins, SolveOptions};
    use crate::space::build_space;
    use rand::{Rng, SeedableRng};

    fn space(name: &str) -> DesignSpace {
        let src = std::fs::read_to_string(format!("{}/kernels/{name}.c", env!("CARGO_MANIFEST_DIR"))).unwrap();
        build_space(&parse_kernel(&src).unwrap(), 512).unwrap()
    }

    fn solved(name: &str, cfg: &PlatformConfig) -> (DesignSpace, Solution, Assignment) {
        let sp = space(name);
        // two_mm does not prove optimality quickly; any incumbent is fine here
        let opts = SolveOptions { budget: Some(std::time::Duration::from_secs(2)), ..SolveOptions::default() };
        let out = solve(&sp, cfg, &Pins::none(&sp), &opts).unwrap();
        let best = out.best.unwrap();
        let sol = Solution::new(&sp, cfg, out.status.as_str(), &best.assignment, &best.evaluation);
        (sp, sol, best.assignment)
    }

    #[test]
    fn agrees_with_the_model_on_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in ["gemm_small", "bicg", "doitgen", "recurrence", "two_mm"] {
            let sp = space(k);
            for reuse in [true, false] {
                let cfg = PlatformConfig { reuse_opt: reuse, dsp_available: 400, mem_bytes: 4000, ..PlatformConfig::default() };
                for _ in 0..300 {
                    let a = random_assignment(&sp, &mut |n| rng.gen_range(0..n));
                    let ev = evaluate(&sp, &cfg, &a);
                    let (vs, re) = check_assignment(&sp, &cfg, &a);
                    assert_eq!(vs.is_empty(), ev.feasible(), "{k}: {vs:?} vs {:?}", ev.violations);
                    let re = re.unwrap();
                    assert_eq!(re.objective, ev.objective, "{k}");
                    assert_eq!((re.dsp_optimistic, re.dsp_pessimistic), (ev.dsp_optimistic, ev.dsp_pessimistic));
                    assert_eq!(re.memory_bytes, ev.memory_bytes);
                }
            }
        }
    }

    #[test]
    fn solver_output_passes() {
        let cfg = PlatformConfig::default();
        for k in ["gemm_small", "bicg", "doitgen", "cnn_small", "two_mm", "recurrence"] {
            let (sp, sol, _) = solved(k, &cfg);
            let verdict = verify_solution(&sp, &cfg, &sol).unwrap();
            assert!(verdict.pass, "{k}: {:?}", verdict.violations);
        }
    }

    #[test]
    fn bad_trip_product_is_reported() {
        let cfg = PlatformConfig::default();
        let (sp, mut sol, _) = solved("gemm_small", &cfg);
        let lc = sol.bodies[1].loops.iter_mut().find(|l| l.iterator == "i").unwrap();
        lc.tc = [3, 1, 3];
        let verdict = verify_solution(&sp, &cfg, &sol).unwrap();
        assert!(!verdict.pass);
        let e1 = verdict.violations.iter().find(|x| x.constraint == Tag::E1).unwrap();
        assert_eq!(e1.context, "S1.i");
        assert_eq!(e1.observed, Some(9));
    }

    #[test]
    fn objective_off_by_one_fails() {
        let cfg = PlatformConfig::default();
        let (sp, mut sol, _) = solved("gemm_small", &cfg);
        sol.objective += 1;
        let verdict = verify_solution(&sp, &cfg, &sol).unwrap();
        assert_eq!(verdict.violations.len(), 1);
        assert_eq!(verdict.violations[0].constraint, Tag::Objective);
    }

    #[test]
    fn narrow_burst_is_reported() {
        let cfg = PlatformConfig::default();
        let (sp, mut sol, _) = solved("gemm_small", &cfg);
        sol.arrays[0].burst /= 2;
        let verdict = verify_solution(&sp, &cfg, &sol).unwrap();
        assert!(verdict.violations.iter().any(|x| x.constraint == Tag::Burst));
    }

    #[test]
    fn burst_widths() {
        assert_eq!(max_burst(220, 32, 512), 128);
        assert_eq!(max_burst(240, 32, 512), 512);
        assert_eq!(max_burst(7, 32, 512), 32);
        assert_eq!(max_burst(16, 32, 300), 256);
    }

    #[test]
    fn emitted_designs_audit_clean() {
        for tree in [false, true] {
            let cfg = PlatformConfig { tree_reduction: tree, ..PlatformConfig::default() };
            for k in ["gemm_small", "bicg", "doitgen", "cnn_small", "recurrence"] {
                let (sp, _, a) = solved(k, &cfg);
                let d = emit_design(&sp, &cfg, &a).unwrap();
                assert_eq!(audit_design(&sp, &cfg, &a, &d, true).unwrap(), vec![], "{k}\n{d}");
            }
        }
    }

    #[test]
    fn duplicated_statement_is_a_coverage_finding() {
        let cfg = PlatformConfig::default();
        let (sp, _, a) = solved("gemm_small", &cfg);
        let d = emit_design(&sp, &cfg, &a).unwrap();
        let line = d.lines().position(|l| l.trim() == "#pragma tileforge stmt S1").unwrap();
        let mut lines: Vec<&str> = d.lines().collect();
        let dup = [lines[line], lines[line + 1]];
        lines.insert(line + 2, dup[1]);
        lines.insert(line + 2, dup[0]);
        let found = audit_design(&sp, &cfg, &a, &lines.join("\n"), false).unwrap();
        assert!(found.iter().any(|x| x.constraint == Tag::Coverage && x.context == "S1"), "{found:?}");
    }

    #[test]
    fn missing_pipeline_pragma_is_reported() {
        let cfg = PlatformConfig::default();
        let (sp, _, a) = solved("gemm_small", &cfg);
        let d = emit_design(&sp, &cfg, &a).unwrap();
        let stripped: String = d.lines().filter(|l| !l.contains("HLS pipeline")).map(|l| format!("{l}\n")).collect();
        let found = audit_design(&sp, &cfg, &a, &stripped, false).unwrap();
        assert!(found.iter().any(|x| x.constraint == Tag::Pragma));
    }
}
