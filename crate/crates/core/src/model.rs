//! Constraints and latency objective over assignments of the design space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::deps::Dist;
use crate::platform::PlatformConfig;
use crate::space::{divisors, factor_triples, Body, DesignSpace, DimMap, StmtInfo};

/// One body's variables. Loop vectors are indexed like `Body::loops`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BodyAssign {
    /// `(tc0, tc1, tc2)` per loop.
    pub tc: Vec<[u64; 3]>,
    pub pip: Vec<bool>,
    pub uf: Vec<u64>,
    /// Level-0 order, positions into the body loops, outermost first.
    pub perm: Vec<usize>,
    /// Per body array, one flag per cache position.
    pub cache: Vec<Vec<bool>>,
}

impl BodyAssign {
    /// Every loop untouched: `(TC, 1, 1)`, nothing pipelined, arrays cached before the nest.
    pub fn identity(body: &Body) -> Self {
        let n = body.loops.len();
        BodyAssign {
            tc: body.loops.iter().map(|l| [l.trip, 1, 1]).collect(),
            pip: vec![false; n],
            uf: vec![1; n],
            perm: (0..n).collect(),
            cache: body.arrays.iter().map(|_| one_hot(n + 1, 0)).collect(),
        }
    }

    pub fn pipelined(&self) -> Option<usize> {
        self.pip.iter().position(|p| *p)
    }

    /// Selected cache position of a body array (first flag set, else before-nest).
    pub fn cache_pos(&self, k: usize) -> usize {
        self.cache[k].iter().position(|c| *c).unwrap_or(0)
    }
}

pub fn one_hot(n: usize, k: usize) -> Vec<bool> {
    (0..n).map(|i| i == k).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub bodies: Vec<BodyAssign>,
    /// Partition factors per array and dimension; derived minimal values when absent.
    pub partition: Option<Vec<Vec<u64>>>,
}

impl Assignment {
    pub fn identity(space: &DesignSpace) -> Self {
        Assignment { bodies: space.bodies.iter().map(BodyAssign::identity).collect(), partition: None }
    }
}

/// Draws a structurally valid assignment: tc1 = 1 off the pipelined loop,
/// UF dividing tc0 and 1 where fixed. Constraints are not checked.
/// `pick(n)` must return a value below `n`.
pub fn random_assignment(space: &DesignSpace, pick: &mut dyn FnMut(u64) -> u64) -> Assignment {
    let bodies = space
        .bodies
        .iter()
        .map(|body| {
            let n = body.loops.len();
            let pip_at = pick(n as u64 + 1) as usize;
            let pip: Vec<bool> = (0..n).map(|l| l == pip_at).collect();
            let tc: Vec<[u64; 3]> = body
                .loops
                .iter()
                .enumerate()
                .map(|(l, lp)| {
                    let opts: Vec<[u64; 3]> =
                        factor_triples(lp.trip).into_iter().filter(|t| pip[l] || t[1] == 1).collect();
                    opts[pick(opts.len() as u64) as usize]
                })
                .collect();
            let uf = body
                .loops
                .iter()
                .enumerate()
                .map(|(l, lp)| {
                    if lp.uf_fixed || body.singleton {
                        1
                    } else {
                        let d = divisors(tc[l][0]);
                        d[pick(d.len() as u64) as usize]
                    }
                })
                .collect();
            let perm = body.perms[pick(body.perms.len() as u64) as usize].clone();
            let cache = body.arrays.iter().map(|_| one_hot(n + 1, pick(n as u64 + 1) as usize)).collect();
            BodyAssign { tc, pip, uf, perm, cache }
        })
        .collect();
    Assignment { bodies, partition: None }
}

/// Closed set of finding tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
    E9,
    E10,
    E11,
    E12,
    E13,
    E14,
    E15,
    E16,
    E17,
    E18,
    E19,
    #[serde(rename = "DOMAIN")]
    Domain,
    #[serde(rename = "BURST")]
    Burst,
    #[serde(rename = "ORDER")]
    Order,
    #[serde(rename = "OBJECTIVE")]
    Objective,
    #[serde(rename = "COVERAGE")]
    Coverage,
    #[serde(rename = "PRAGMA")]
    Pragma,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        write!(f, "{}", s.as_str().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Tag,
    pub context: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<u128>,
}

impl Violation {
    pub fn new(constraint: Tag, context: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { constraint, context: context.into(), message: message.into(), observed: None, bound: None }
    }

    pub fn values(mut self, observed: u128, bound: u128) -> Self {
        self.observed = Some(observed);
        self.bound = Some(bound);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.constraint, self.context, self.message)?;
        if let (Some(o), Some(b)) = (self.observed, self.bound) {
            write!(f, " (observed {o}, bound {b})")?;
        }
        Ok(())
    }
}

pub fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Fine-grained unroll of the statement's reduction loops.
pub fn u_red(st: &StmtInfo, tc: &[[u64; 3]]) -> u64 {
    st.red_loops.iter().map(|l| tc[*l][2]).product()
}

pub fn il_par(cfg: &PlatformConfig, st: &StmtInfo) -> u64 {
    st.par_ops.iter().map(|op| cfg.il_par.get(*op)).max().unwrap_or(1).max(1)
}

/// Extra depth from combining `U_red` partial results.
pub fn d_red(cfg: &PlatformConfig, st: &StmtInfo, tc: &[[u64; 3]]) -> u64 {
    let u = u_red(st, tc);
    match st.red_op {
        Some(op) if u > 1 => {
            let steps = if cfg.tree_reduction { ceil_log2(u.max(2)) } else { u - 1 };
            cfg.il_red.get(op) * steps
        }
        _ => 0,
    }
}

pub fn stmt_lat2(cfg: &PlatformConfig, st: &StmtInfo, tc: &[[u64; 3]]) -> u64 {
    il_par(cfg, st) + d_red(cfg, st, tc)
}

/// Initiation interval of one statement; 0 when nothing is pipelined.
pub fn stmt_ii(cfg: &PlatformConfig, st: &StmtInfo, tc: &[[u64; 3]], pip: Option<usize>) -> u64 {
    let Some(p) = pip else { return 0 };
    if st.red_loops.contains(&p) {
        let u = u_red(st, tc);
        let op = st.red_op.expect("reduction loop without reduction op");
        let factor = if cfg.tree_reduction { ceil_log2(u.max(2)) } else { u };
        cfg.il_red.get(op) * factor
    } else if st.carried.contains(&p) {
        stmt_lat2(cfg, st, tc)
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compute {
    pub ii: u64,
    pub lat2: u128,
    pub lat1: u128,
    pub lat0: u128,
}

/// Compute latency of a body (levels 2, 1, 0).
pub fn body_compute(cfg: &PlatformConfig, body: &Body, tc: &[[u64; 3]], pip: Option<usize>, uf: &[u64]) -> Compute {
    let ii = body.statements.iter().map(|s| stmt_ii(cfg, s, tc, pip)).max().unwrap_or(0);
    let lat2 = body.statements.iter().map(|s| stmt_lat2(cfg, s, tc)).max().unwrap_or(1) as u128;
    let lat1 = match pip {
        Some(p) => lat2 + ii as u128 * (tc[p][1] as u128 - 1),
        None => lat2 * tc.iter().map(|t| t[1] as u128).product::<u128>(),
    };
    let outer: u128 = tc.iter().zip(uf).map(|(t, u)| t[0].div_ceil((*u).max(1)) as u128).product();
    Compute { ii, lat2, lat1, lat0: outer.saturating_mul(lat1) }
}

/// Raw DSP demand per op kind (indexed by `OpKind::index`), before dividing by II.
pub fn body_dsp(cfg: &PlatformConfig, body: &Body, tc: &[[u64; 3]], uf: &[u64]) -> [u64; 4] {
    let par: u64 = tc.iter().map(|t| t[2]).product::<u64>() * uf.iter().product::<u64>();
    let mut out = [0u64; 4];
    for st in &body.statements {
        for (op, n) in &st.ops {
            out[op.index()] += cfg.dsp_cost.get(*op) * *n as u64 * par;
        }
    }
    out
}

/// DSPs a body occupies per op kind once its II is known.
pub fn dsp_share(raw: &[u64; 4], ii: u64) -> [u64; 4] {
    let d = ii.max(1);
    raw.map(|x| x.div_ceil(d))
}

/// Elements of a body array's tile when cached at `pos`.
pub fn footprint(space: &DesignSpace, b: usize, k: usize, tc: &[[u64; 3]], perm: &[usize], pos: usize) -> u64 {
    let body = &space.bodies[b];
    let ba = &body.arrays[k];
    let dims = &space.arrays[ba.array].dims;
    let enclosing = &perm[..pos.min(perm.len())];
    dims.iter()
        .zip(&ba.dims)
        .map(|(extent, m)| match m {
            DimMap::Tiled(l) if enclosing.contains(l) => extent / tc[*l][0],
            _ => *extent,
        })
        .product()
}

/// How many times a transfer at `pos` executes.
pub fn multiplier(tc: &[[u64; 3]], perm: &[usize], pos: usize) -> u128 {
    perm[..pos.min(perm.len())].iter().map(|l| tc[*l][0] as u128).product()
}

/// Cycles of one transfer at one beat per cycle.
pub fn transfer_cycles(elements: u64, element_bits: u32, burst: u32) -> u128 {
    (elements as u128 * element_bits as u128).div_ceil(burst as u128)
}

/// A load or store of one body array at one cache position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    /// Index into `Body::arrays`.
    pub array: usize,
    pub pos: usize,
    pub elements: u64,
    pub load: bool,
    pub store: bool,
    /// Buffer shared with an earlier body of the same resident run.
    pub shares_buffer_of: Option<usize>,
}

/// Per body, the transfers actually performed after resident reuse.
pub fn transfers(space: &DesignSpace, a: &Assignment) -> Vec<Vec<Transfer>> {
    let mut out: Vec<Vec<Transfer>> = space
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let ba = &a.bodies[b];
            body.arrays
                .iter()
                .enumerate()
                .map(|(k, arr)| {
                    let pos = ba.cache_pos(k);
                    Transfer {
                        array: k,
                        pos,
                        elements: footprint(space, b, k, &ba.tc, &ba.perm, pos),
                        load: true,
                        store: arr.written,
                        shares_buffer_of: None,
                    }
                })
                .collect()
        })
        .collect();
    for info in &space.arrays {
        let users = &info.users;
        let mut i = 0;
        while i < users.len() {
            let at_top = |u: &(usize, usize)| a.bodies[u.0].cache_pos(u.1) == 0;
            if !at_top(&users[i]) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < users.len() && at_top(&users[j + 1]) {
                j += 1;
            }
            if j > i {
                let run = &users[i..=j];
                let writes = run.iter().any(|(b, k)| space.bodies[*b].arrays[*k].written);
                for (n, (b, k)) in run.iter().enumerate() {
                    let t = &mut out[*b][*k];
                    t.load = n == 0;
                    t.store = writes && n == run.len() - 1;
                    if n > 0 {
                        t.shares_buffer_of = Some(run[0].0);
                    }
                }
            }
            i = j + 1;
        }
    }
    out
}

/// Memory latency of one body from its transfers.
pub fn body_mem(space: &DesignSpace, b: usize, ba: &BodyAssign, ts: &[Transfer]) -> u128 {
    let body = &space.bodies[b];
    let mut total = 0u128;
    for pos in 0..body.positions() {
        let mult = multiplier(&ba.tc, &ba.perm, pos);
        let mut ld = 0u128;
        let mut st = 0u128;
        for t in ts.iter().filter(|t| t.pos == pos) {
            let info = &space.arrays[body.arrays[t.array].array];
            let c = transfer_cycles(t.elements, info.element_bits, info.burst).saturating_mul(mult);
            if t.load {
                ld = ld.max(c);
            }
            if t.store {
                st = st.max(c);
            }
        }
        total = total.saturating_add(ld).saturating_add(st);
    }
    total
}

/// Minimal partition factors: per array and dimension, the lcm of the
/// level-2 trip factors of every loop indexing that dimension.
pub fn min_partition(space: &DesignSpace, a: &Assignment) -> Vec<Vec<u64>> {
    space
        .arrays
        .iter()
        .map(|info| {
            (0..info.dims.len())
                .map(|d| {
                    info.users.iter().fold(1u64, |acc, (b, k)| {
                        space.bodies[*b].arrays[*k].dim_loops[d].iter().fold(acc, |acc, l| lcm(acc, a.bodies[*b].tc[*l][2]))
                    })
                })
                .collect()
        })
        .collect()
}

/// On-chip bytes of all buffers, counting shared resident buffers once.
pub fn memory_bytes(space: &DesignSpace, ts: &[Vec<Transfer>]) -> u128 {
    let mut total = 0u128;
    for (b, body) in space.bodies.iter().enumerate() {
        for t in &ts[b] {
            if t.shares_buffer_of.is_none() {
                let info = &space.arrays[body.arrays[t.array].array];
                total += t.elements as u128 * (info.element_bits as u128 / 8).max(1);
            }
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyEval {
    pub ii: u64,
    pub lat2: u128,
    pub lat1: u128,
    pub lat0: u128,
    pub lat_mem: u128,
    pub lat_total: u128,
    /// DSPs per op kind after dividing by II.
    pub dsp: [u64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bodies: Vec<BodyEval>,
    pub objective: u128,
    pub dsp_optimistic: u64,
    pub dsp_pessimistic: u64,
    pub memory_bytes: u128,
    pub partition: Vec<Vec<u64>>,
    pub transfers: Vec<Vec<Transfer>>,
    pub violations: Vec<Violation>,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn dsp_used(&self, cfg: &PlatformConfig) -> u64 {
        if cfg.reuse_opt {
            self.dsp_optimistic
        } else {
            self.dsp_pessimistic
        }
    }
}

fn ctx(body: &Body, l: usize) -> String {
    format!("{}.{}", body.id, body.loops[l].iterator)
}

/// Shapes and domains: vector lengths, permutation membership.
pub fn check_domain(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut v = Vec::new();
    if a.bodies.len() != space.bodies.len() {
        v.push(Violation::new(Tag::Domain, "kernel", "number of bodies differs from the design space"));
        return v;
    }
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        let n = body.loops.len();
        if ba.tc.len() != n || ba.pip.len() != n || ba.uf.len() != n || ba.perm.len() != n {
            v.push(Violation::new(Tag::Domain, &body.id, "loop vectors have the wrong length"));
            continue;
        }
        if !body.perms.contains(&ba.perm) {
            v.push(Violation::new(Tag::Domain, &body.id, "level-0 order is not in the legal permutation domain"));
        }
        if ba.cache.len() != body.arrays.len() || ba.cache.iter().any(|c| c.len() != n + 1) {
            v.push(Violation::new(Tag::E10, &body.id, "cache flags do not cover every array and position"));
        }
        if ba.uf.contains(&0) || ba.tc.iter().any(|t| t.contains(&0)) {
            v.push(Violation::new(Tag::Domain, &body.id, "trip factors and unroll factors must be positive"));
        }
    }
    if let Some(p) = &a.partition {
        if p.len() != space.arrays.len() || p.iter().zip(&space.arrays).any(|(f, i)| f.len() != i.dims.len() || f.contains(&0)) {
            v.push(Violation::new(Tag::Domain, "partition", "partition factors do not match the arrays"));
        }
    }
    v
}

pub fn check_trip_counts(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut v = Vec::new();
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        for (l, lp) in body.loops.iter().enumerate() {
            let p = ba.tc[l].iter().map(|x| *x as u128).product::<u128>();
            if p != lp.trip as u128 {
                v.push(Violation::new(Tag::E1, ctx(body, l), "trip factors do not multiply to the trip count").values(p, lp.trip as u128));
            }
        }
    }
    v
}

pub fn check_pipeline(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut v = Vec::new();
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        for l in 0..body.loops.len() {
            if !ba.pip[l] && ba.tc[l][1] != 1 {
                v.push(
                    Violation::new(Tag::E3, ctx(body, l), "non-pipelined loop has a level-1 trip factor above 1")
                        .values(ba.tc[l][1] as u128, 1),
                );
            }
        }
        let flags = ba.pip.iter().filter(|p| **p).count();
        if flags > 1 {
            v.push(Violation::new(Tag::E4, &body.id, "more than one loop pipelined").values(flags as u128, 1));
        }
    }
    v
}

pub fn check_coarse_unroll(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut v = Vec::new();
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        for (l, lp) in body.loops.iter().enumerate() {
            let (uf, t0) = (ba.uf[l], ba.tc[l][0]);
            if uf == 1 {
                continue;
            }
            if body.singleton {
                v.push(Violation::new(Tag::E9, ctx(body, l), "coarse unrolling in a single-statement body").values(uf as u128, 1));
            } else if lp.uf_fixed {
                v.push(
                    Violation::new(Tag::E6, ctx(body, l), "coarse unrolling of a reduction or dependence-carrying loop")
                        .values(uf as u128, 1),
                );
            }
            if uf > t0 {
                v.push(Violation::new(Tag::E8, ctx(body, l), "unroll factor exceeds the level-0 trip factor").values(uf as u128, t0 as u128));
            } else if t0 % uf != 0 {
                v.push(Violation::new(Tag::E7, ctx(body, l), "unroll factor does not divide the level-0 trip factor").values(uf as u128, t0 as u128));
            }
        }
    }
    v
}

/// Tiling order for bodies that are not fully permutable: once the trip-1
/// loops are dropped, each original loop must occupy one contiguous run,
/// and the resulting order must keep every dependence lexicographically positive.
pub fn check_order(space: &DesignSpace, a: &Assignment) -> Vec<Violation> {
    let mut v = Vec::new();
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        if body.fully_permutable {
            continue;
        }
        if let Some(msg) = order_problem(body, ba) {
            v.push(Violation::new(Tag::Order, &body.id, msg));
        }
    }
    v
}

pub fn order_problem(body: &Body, ba: &BodyAssign) -> Option<String> {
    let n = body.loops.len();
    let mut seq: Vec<usize> = Vec::new();
    let levels = [ba.perm.clone(), (0..n).collect(), (0..n).collect()];
    for (lvl, order) in levels.iter().enumerate() {
        for &l in order {
            if ba.tc[l][lvl] > 1 && seq.last() != Some(&l) {
                seq.push(l);
            }
        }
    }
    let mut seen = vec![false; n];
    for &l in &seq {
        if seen[l] {
            return Some(format!("loop {} is split around another loop", body.loops[l].iterator));
        }
        seen[l] = true;
    }
    if seq.windows(2).all(|w| w[0] < w[1]) {
        return None;
    }
    for d in &body.dep_vectors {
        let comps: Vec<Dist> = seq.iter().map(|l| d[*l]).collect();
        if comps.contains(&Dist::Star) {
            return Some("reordering loops with an unknown dependence distance".into());
        }
        let first = comps.iter().find_map(|c| match c {
            Dist::Const(0) => None,
            Dist::Const(x) => Some(*x),
            Dist::Star => None,
        });
        if first.is_some_and(|x| x < 0) {
            return Some("tiled order reverses a dependence".into());
        }
    }
    None
}

pub fn check_caching(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment, ts: &[Vec<Transfer>]) -> Vec<Violation> {
    let mut v = Vec::new();
    for (body, ba) in space.bodies.iter().zip(&a.bodies) {
        for (k, arr) in body.arrays.iter().enumerate() {
            let n = ba.cache[k].iter().filter(|c| **c).count();
            if n != 1 {
                v.push(
                    Violation::new(Tag::E11, format!("{}.{}", body.id, arr.name), "array must be cached at exactly one point")
                        .values(n as u128, 1),
                );
            }
        }
    }
    let used = memory_bytes(space, ts);
    if used > cfg.mem_bytes as u128 {
        v.push(Violation::new(Tag::E12, "kernel", "on-chip buffers exceed memory capacity").values(used, cfg.mem_bytes as u128));
    }
    v
}

pub fn check_partitioning(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment, ap: &[Vec<u64>]) -> Vec<Violation> {
    let mut v = Vec::new();
    for (ai, info) in space.arrays.iter().enumerate() {
        for d in 0..info.dims.len() {
            for (b, k) in &info.users {
                let body = &space.bodies[*b];
                for &l in &body.arrays[*k].dim_loops[d] {
                    let t2 = a.bodies[*b].tc[l][2];
                    let f = ap[ai][d];
                    let c = format!("{}[{}] via {}", info.name, d, ctx(body, l));
                    if f < t2 {
                        v.push(Violation::new(Tag::E13, c, "partition factor below the unroll factor").values(f as u128, t2 as u128));
                    } else if f % t2 != 0 {
                        v.push(Violation::new(Tag::E14, c, "partition factor not a multiple of the unroll factor").values(f as u128, t2 as u128));
                    }
                }
            }
        }
        let prod: u128 = ap[ai].iter().map(|x| *x as u128).product();
        if prod > cfg.max_part as u128 {
            v.push(Violation::new(Tag::E15, &info.name, "total partitioning exceeds max_part").values(prod, cfg.max_part as u128));
        }
    }
    v
}

/// Optimistic and pessimistic DSP totals.
pub fn dsp_usage(shares: &[[u64; 4]]) -> (u64, u64) {
    let mut opt = 0;
    let mut pes = 0;
    for op in 0..4 {
        opt += shares.iter().map(|s| s[op]).max().unwrap_or(0);
        pes += shares.iter().map(|s| s[op]).sum::<u64>();
    }
    (opt, pes)
}

pub fn check_dsp(cfg: &PlatformConfig, opt: u64, pes: u64) -> Vec<Violation> {
    let mut v = Vec::new();
    if cfg.reuse_opt && opt > cfg.dsp_available {
        v.push(Violation::new(Tag::E18, "kernel", "optimistic DSP usage exceeds the budget").values(opt as u128, cfg.dsp_available as u128));
    }
    if !cfg.reuse_opt && pes > cfg.dsp_available {
        v.push(Violation::new(Tag::E19, "kernel", "pessimistic DSP usage exceeds the budget").values(pes as u128, cfg.dsp_available as u128));
    }
    v
}

/// Full evaluation: every constraint plus the latency breakdown.
pub fn evaluate(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment) -> Evaluation {
    let mut violations = check_domain(space, a);
    if !violations.is_empty() {
        return Evaluation {
            bodies: Vec::new(),
            objective: u128::MAX,
            dsp_optimistic: 0,
            dsp_pessimistic: 0,
            memory_bytes: 0,
            partition: Vec::new(),
            transfers: Vec::new(),
            violations,
        };
    }
    violations.extend(check_trip_counts(space, a));
    violations.extend(check_pipeline(space, a));
    violations.extend(check_coarse_unroll(space, a));
    violations.extend(check_order(space, a));
    let ts = transfers(space, a);
    violations.extend(check_caching(space, cfg, a, &ts));
    let partition = a.partition.clone().unwrap_or_else(|| min_partition(space, a));
    violations.extend(check_partitioning(space, cfg, a, &partition));
    let mut bodies = Vec::new();
    for (b, (body, ba)) in space.bodies.iter().zip(&a.bodies).enumerate() {
        let c = body_compute(cfg, body, &ba.tc, ba.pipelined(), &ba.uf);
        let lat_mem = body_mem(space, b, ba, &ts[b]);
        let dsp = dsp_share(&body_dsp(cfg, body, &ba.tc, &ba.uf), c.ii);
        bodies.push(BodyEval { ii: c.ii, lat2: c.lat2, lat1: c.lat1, lat0: c.lat0, lat_mem, lat_total: c.lat0.saturating_add(lat_mem), dsp });
    }
    let shares: Vec<[u64; 4]> = bodies.iter().map(|b| b.dsp).collect();
    let (dsp_optimistic, dsp_pessimistic) = dsp_usage(&shares);
    violations.extend(check_dsp(cfg, dsp_optimistic, dsp_pessimistic));
    let objective = bodies.iter().fold(0u128, |acc, b| acc.saturating_add(b.lat_total));
    Evaluation {
        memory_bytes: memory_bytes(space, &ts),
        bodies,
        objective,
        dsp_optimistic,
        dsp_pessimistic,
        partition,
        transfers: ts,
        violations,
    }
}

/// Total arithmetic operations executed by the kernel.
pub fn total_ops(space: &DesignSpace) -> u128 {
    let ir = &space.kernel;
    ir.statements
        .iter()
        .map(|s| ir.instances(s) as u128 * s.ops.values().map(|n| *n as u128).sum::<u128>())
        .sum()
}

/// Modeled throughput in GF/s at the configured clock.
pub fn modeled_gflops(space: &DesignSpace, cfg: &PlatformConfig, cycles: u128) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    let seconds = cycles as f64 / (cfg.clock_mhz * 1e6);
    total_ops(space) as f64 / seconds / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;
    use crate::space::build_space;

    const GEMM: &str = "void gemm(float alpha, float beta, float C[200][220], float A[200][240], float B[240][220]) {
      for (int i = 0; i < 200; i++) {
        for (int j = 0; j < 220; j++) C[i][j] *= beta;
        for (int k = 0; k < 240; k++)
          for (int j = 0; j < 220; j++) C[i][j] += alpha * A[i][k] * B[k][j];
      }
    }";

    fn gemm() -> DesignSpace {
        build_space(&parse_kernel(GEMM).unwrap(), 512).unwrap()
    }

    /// The big-memory design: S0 unrolls i by 200 and j by 4, S1 unrolls i by 200 and k by 4.
    fn big_mem(space: &DesignSpace) -> Assignment {
        let mut a = Assignment::identity(space);
        a.bodies[0].tc = vec![[1, 1, 200], [55, 1, 4]];
        a.bodies[0].pip = vec![false, true];
        a.bodies[1].tc = vec![[1, 1, 200], [60, 1, 4], [1, 220, 1]];
        a.bodies[1].pip = vec![false, false, true];
        a
    }

    #[test]
    fn dsp_worked_example() {
        let sp = gemm();
        let mut cfg = PlatformConfig::default();
        let e = evaluate(&sp, &cfg, &big_mem(&sp));
        assert_eq!(e.dsp_optimistic, 6400);
        assert_eq!(e.dsp_pessimistic, 8800);
        assert_eq!(e.partition[sp.arrays.iter().position(|a| a.name == "C").unwrap()], vec![200, 4]);
        cfg.dsp_available = 2000;
        let e = evaluate(&sp, &cfg, &big_mem(&sp));
        assert!(e.violations.iter().any(|v| v.constraint == Tag::E18));
    }

    #[test]
    fn latency_formulas() {
        let sp = gemm();
        let cfg = PlatformConfig::default();
        let a = big_mem(&sp);
        let e = evaluate(&sp, &cfg, &a);
        // S1: lat2 = IL(mul) + 4 * (4 - 1), II = 1 on j
        assert_eq!(e.bodies[1].lat2, 3 + 12);
        assert_eq!(e.bodies[1].lat1, 15 + 219);
        assert_eq!(e.bodies[1].lat0, 60 * 234);
        assert_eq!(e.bodies[1].ii, 1);
        assert_eq!(e.objective, e.bodies.iter().map(|b| b.lat_total).sum::<u128>());
    }

    #[test]
    fn reduction_pipeline_ii() {
        let sp = gemm();
        let mut cfg = PlatformConfig::default();
        let mut a = Assignment::identity(&sp);
        a.bodies[1].tc = vec![[200, 1, 1], [1, 60, 4], [220, 1, 1]];
        a.bodies[1].pip = vec![false, true, false];
        let c = |cfg: &PlatformConfig, a: &Assignment| body_compute(cfg, &sp.bodies[1], &a.bodies[1].tc, a.bodies[1].pipelined(), &a.bodies[1].uf);
        assert_eq!(c(&cfg, &a).ii, 16);
        cfg.tree_reduction = true;
        assert_eq!(c(&cfg, &a).ii, 8);
        a.bodies[1].tc[1] = [1, 240, 1];
        assert_eq!(c(&cfg, &a).ii, 4);
    }

    #[test]
    fn footprint_example() {
        let sp = gemm();
        let mut a = Assignment::identity(&sp);
        a.bodies[1].tc = vec![[1, 200, 1], [48, 1, 5], [1, 1, 220]];
        a.bodies[1].perm = vec![1, 0, 2];
        let k = sp.bodies[1].array_pos("A").unwrap();
        assert_eq!(footprint(&sp, 1, k, &a.bodies[1].tc, &a.bodies[1].perm, 1), 1000);
        assert_eq!(footprint(&sp, 1, k, &a.bodies[1].tc, &a.bodies[1].perm, 0), 48000);
    }

    #[test]
    fn resident_run_loads_once() {
        let sp = gemm();
        let cfg = PlatformConfig::default();
        let a = Assignment::identity(&sp);
        let e = evaluate(&sp, &cfg, &a);
        let c0 = &e.transfers[0][0];
        let c1 = &e.transfers[1][sp.bodies[1].array_pos("C").unwrap()];
        assert!(c0.load && !c0.store);
        assert!(!c1.load && c1.store);
        assert_eq!(c1.shares_buffer_of, Some(0));
        // C load: 200 * 220 * 32 / 128
        assert_eq!(e.bodies[0].lat_mem, 11000);
        assert_eq!(e.memory_bytes, (200 * 220 + 200 * 240 + 240 * 220) * 4);
    }

    #[test]
    fn violation_examples() {
        let sp = gemm();
        let cfg = PlatformConfig::default();
        let mut a = Assignment::identity(&sp);
        a.bodies[1].tc[0] = [3, 7, 10];
        a.bodies[1].pip = vec![true, true, false];
        let tags: Vec<Tag> = evaluate(&sp, &cfg, &a).violations.iter().map(|v| v.constraint).collect();
        assert!(tags.contains(&Tag::E1));
        assert!(tags.contains(&Tag::E4));
        let mut a = Assignment::identity(&sp);
        a.bodies[0].tc[0] = [1, 2, 100];
        assert!(evaluate(&sp, &cfg, &a).violations.iter().any(|v| v.constraint == Tag::E3));
        let mut a = Assignment::identity(&sp);
        a.partition = Some(vec![vec![128, 16], vec![1, 1], vec![1, 1]]);
        assert!(evaluate(&sp, &cfg, &a).violations.iter().any(|v| v.constraint == Tag::E15));
        let mut a = Assignment::identity(&sp);
        a.bodies[1].cache[0] = vec![true, true, false, false];
        assert!(evaluate(&sp, &cfg, &a).violations.iter().any(|v| v.constraint == Tag::E11));
    }

    #[test]
    fn log2_helper() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
    }
}
