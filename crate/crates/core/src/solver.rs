//! Exact branch-and-bound over the design space, plus a brute-force oracle.
//!
//! Variables are visited body by body: pipeline choice, trip factors,
//! coarse unroll, level-0 order, cache positions. Every node is pruned
//! against partition, DSP, memory and ordering limits and against a
//! lower bound that never exceeds the latency of any completion.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::SolveError;
use crate::model::{self, one_hot, Assignment, BodyAssign, Evaluation};
use crate::platform::PlatformConfig;
pub use crate::space::factor_triples;
use crate::space::{divisors, DesignSpace, DimMap};

/// Largest raw domain the brute-force oracle agrees to enumerate.
pub const BRUTE_FORCE_GUARD: u128 = 100_000_000;

/// Where a pinned array is cached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CachePin {
    Pos(usize),
    /// Right after the level-0 loop with this body index.
    After(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BodyPins {
    pub perm: Option<Vec<usize>>,
    pub tc: Vec<[Option<u64>; 3]>,
    pub pip: Vec<Option<bool>>,
    pub uf: Vec<Option<u64>>,
    pub cache: Vec<Option<CachePin>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pins {
    pub bodies: Vec<BodyPins>,
    /// Fixed partition factor per array and dimension.
    pub partition: Vec<Vec<Option<u64>>>,
}

impl Pins {
    pub fn none(space: &DesignSpace) -> Self {
        Pins {
            bodies: space
                .bodies
                .iter()
                .map(|b| BodyPins {
                    perm: None,
                    tc: vec![[None; 3]; b.loops.len()],
                    pip: vec![None; b.loops.len()],
                    uf: vec![None; b.loops.len()],
                    cache: vec![None; b.arrays.len()],
                })
                .collect(),
            partition: space.arrays.iter().map(|a| vec![None; a.dims.len()]).collect(),
        }
    }

    fn any_partition(&self) -> bool {
        self.partition.iter().flatten().any(|p| p.is_some())
    }

    fn triple_ok(&self, b: usize, l: usize, t: &[u64; 3]) -> bool {
        self.bodies[b].tc[l].iter().zip(t).all(|(p, v)| p.is_none_or(|p| p == *v))
    }

    fn cache_ok(&self, b: usize, k: usize, perm: &[usize], pos: usize) -> bool {
        match &self.bodies[b].cache[k] {
            None => true,
            Some(CachePin::Pos(p)) => *p == pos,
            Some(CachePin::After(l)) => perm.iter().position(|x| x == l).map(|i| i + 1) == Some(pos),
        }
    }
}

fn numbers(path: &str, value: &str) -> Result<Vec<u64>, SolveError> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse::<u64>().ok().filter(|v| *v > 0).ok_or_else(|| SolveError::InvalidPin {
                path: path.into(),
                reason: format!("`{}` is not a positive integer", s.trim()),
            })
        })
        .collect()
}

/// Parses `path = value` pins against the design space.
///
/// Paths: `<body>.perm`, `<body>.<it>.tc`, `<body>.<it>.tc0|tc1|tc2`,
/// `<body>.<it>.pip`, `<body>.<it>.uf`, `<body>.cache.<array>`,
/// `<array>.partition`, `<array>.ap<d>`. A body is named by its id or by
/// any of its statement ids; iterators may carry a `0` level suffix.
pub fn parse_pins(space: &DesignSpace, raw: &BTreeMap<String, String>) -> Result<Pins, SolveError> {
    let mut pins = Pins::none(space);
    for (path, value) in raw {
        let err = |reason: String| SolveError::InvalidPin { path: path.clone(), reason };
        let parts: Vec<&str> = path.split('.').collect();
        if let Some(b) = space.body(parts[0]) {
            let body = &space.bodies[b];
            let find_loop = |name: &str| -> Result<usize, SolveError> {
                body.loop_pos(name)
                    .or_else(|| name.strip_suffix('0').and_then(|n| body.loop_pos(n)))
                    .ok_or_else(|| err(format!("no loop `{name}` in body {}", body.id)))
            };
            let bp = &mut pins.bodies[b];
            match parts[1..] {
                ["perm"] => {
                    let perm = value.split(',').map(|s| find_loop(s.trim())).collect::<Result<Vec<_>, _>>()?;
                    if !body.perms.contains(&perm) {
                        return Err(err("order is not a legal permutation of this body".into()));
                    }
                    bp.perm = Some(perm);
                }
                ["cache", array] => {
                    let k = body.array_pos(array).ok_or_else(|| err(format!("body {} does not access `{array}`", body.id)))?;
                    let v = value.trim();
                    let pin = if v == "before-nest" {
                        CachePin::Pos(0)
                    } else if let Ok(p) = v.parse::<usize>() {
                        if p > body.loops.len() {
                            return Err(err(format!("position {p} is past the innermost level-0 loop")));
                        }
                        CachePin::Pos(p)
                    } else {
                        CachePin::After(find_loop(v.strip_prefix("after-").unwrap_or(v))?)
                    };
                    bp.cache[k] = Some(pin);
                }
                [it, field] => {
                    let l = find_loop(it)?;
                    let trip = body.loops[l].trip;
                    match field {
                        "tc" => {
                            let v = numbers(path, value)?;
                            if v.len() != 3 || v.iter().product::<u64>() != trip {
                                return Err(err(format!("expected three factors multiplying to {trip}")));
                            }
                            bp.tc[l] = [Some(v[0]), Some(v[1]), Some(v[2])];
                        }
                        "tc0" | "tc1" | "tc2" => {
                            let v = numbers(path, value)?;
                            if v.len() != 1 || trip % v[0] != 0 {
                                return Err(err(format!("factor must divide {trip}")));
                            }
                            bp.tc[l][(field.as_bytes()[2] - b'0') as usize] = Some(v[0]);
                        }
                        "pip" => {
                            bp.pip[l] = Some(match value.trim() {
                                "true" | "1" => true,
                                "false" | "0" => false,
                                o => return Err(err(format!("`{o}` is not a boolean"))),
                            });
                        }
                        "uf" => {
                            let v = numbers(path, value)?;
                            if v.len() != 1 || trip % v[0] != 0 {
                                return Err(err(format!("unroll factor must divide {trip}")));
                            }
                            if v[0] > 1 && body.loops[l].uf_fixed {
                                return Err(err("this loop cannot be coarse-unrolled".into()));
                            }
                            bp.uf[l] = Some(v[0]);
                        }
                        _ => return Err(err(format!("unknown field `{field}`"))),
                    }
                }
                _ => return Err(err("unrecognized variable path".into())),
            }
        } else if let Some(ai) = space.arrays.iter().position(|a| a.name == parts[0]) {
            let dims = space.arrays[ai].dims.clone();
            match parts[1..] {
                ["partition"] => {
                    let v = numbers(path, value)?;
                    if v.len() != dims.len() {
                        return Err(err(format!("expected {} factors", dims.len())));
                    }
                    pins.partition[ai] = v.into_iter().map(Some).collect();
                }
                [f] if f.starts_with("ap") => {
                    let d: usize = f[2..].parse().ok().filter(|d| *d < dims.len()).ok_or_else(|| err("no such dimension".into()))?;
                    let v = numbers(path, value)?;
                    if v.len() != 1 {
                        return Err(err("expected one factor".into()));
                    }
                    pins.partition[ai][d] = Some(v[0]);
                }
                _ => return Err(err("unrecognized variable path".into())),
            }
        } else {
            return Err(err(format!("`{}` names no body, statement or array", parts[0])));
        }
    }
    for (b, bp) in pins.bodies.iter().enumerate() {
        if bp.pip.iter().filter(|p| **p == Some(true)).count() > 1 {
            return Err(SolveError::InvalidPin {
                path: format!("{}.pip", space.bodies[b].id),
                reason: "more than one loop pinned as pipelined".into(),
            });
        }
    }
    Ok(pins)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    FeasibleTimeout,
    Infeasible,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::FeasibleTimeout => "feasible-timeout",
            Status::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub assignment: Assignment,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: Status,
    pub best: Option<Solved>,
    pub nodes: u64,
    pub wall_time: Duration,
}

/// Progress record written as one JSON line per event.
#[derive(Clone, Debug, Serialize)]
pub struct TraceEvent {
    pub event: &'static str,
    pub nodes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<&'static str>,
    pub elapsed_ms: u128,
}

pub type TraceFn<'a> = dyn Fn(&TraceEvent) + Sync + 'a;

#[derive(Clone, Copy, Default)]
pub struct SolveOptions<'a> {
    pub budget: Option<Duration>,
    pub threads: usize,
    pub trace: Option<&'a TraceFn<'a>>,
}

/// Per-body data fixed before search starts.
struct Statics {
    /// Compute plus memory lower bound of each body in isolation.
    body_lb: Vec<u128>,
    compute_lb: Vec<u128>,
    mem_floor: Vec<u128>,
    /// `suffix[b]` = sum of `body_lb` from body `b` on.
    suffix: Vec<u128>,
    /// DSPs per unit of parallelism.
    dsp_weight: Vec<u64>,
    /// Candidate triples per body and loop, best-first, pins applied.
    triples: Vec<Vec<Vec<[u64; 3]>>>,
    /// Previous and next user of each body array.
    prev: Vec<Vec<Option<(usize, usize)>>>,
    next: Vec<Vec<bool>>,
}

fn triple_order(a: &[u64; 3], b: &[u64; 3]) -> std::cmp::Ordering {
    b[2].cmp(&a[2]).then(b[1].cmp(&a[1])).then(b[0].cmp(&a[0]))
}

fn pip_choices(space: &DesignSpace, pins: &Pins, b: usize) -> Vec<Option<usize>> {
    let body = &space.bodies[b];
    let bp = &pins.bodies[b];
    let mut out: Vec<Option<usize>> = Vec::new();
    let ok = |l: usize| bp.pip[l] != Some(false);
    for l in (0..body.loops.len()).filter(|l| !body.loops[*l].reduction) {
        if ok(l) {
            out.push(Some(l));
        }
    }
    for l in (0..body.loops.len()).filter(|l| body.loops[*l].reduction) {
        if ok(l) {
            out.push(Some(l));
        }
    }
    out.push(None);
    if let Some(l) = bp.pip.iter().position(|p| *p == Some(true)) {
        out.retain(|c| *c == Some(l));
    }
    // a pinned level-1 factor above one forces that loop to be pipelined
    for (l, t) in bp.tc.iter().enumerate() {
        if t[1].is_some_and(|v| v > 1) {
            out.retain(|c| *c == Some(l));
        }
    }
    out
}

/// Loops whose triples must be known before `lat1` is: reduction loops, then the pipelined loop.
fn triple_sequence(space: &DesignSpace, b: usize, pip: Option<usize>) -> (Vec<usize>, usize) {
    let body = &space.bodies[b];
    let n = body.loops.len();
    let mut seq: Vec<usize> = (0..n).filter(|l| body.loops[*l].reduction).collect();
    if let Some(p) = pip {
        if !seq.contains(&p) {
            seq.push(p);
        }
    }
    let known = seq.len();
    seq.extend((0..n).filter(|l| !body.loops[*l].reduction && Some(*l) != pip));
    (seq, known)
}

fn dsp_cap(cfg: &PlatformConfig, weight: u64, ii: u64) -> Option<u128> {
    if weight == 0 {
        None
    } else {
        Some(cfg.dsp_available as u128 * ii.max(1) as u128 / weight as u128)
    }
}

/// Lower bound on `lat0` once every loop of `known` has its triple.
/// Returns `None` when no completion can fit the DSP budget.
fn compute_bound(
    cfg: &PlatformConfig,
    space: &DesignSpace,
    b: usize,
    weight: u64,
    tc: &[[u64; 3]],
    assigned: &[bool],
    uf: &[Option<u64>],
    pip: Option<usize>,
) -> Option<u128> {
    let body = &space.bodies[b];
    let c = model::body_compute(cfg, body, tc, pip, &vec![1; tc.len()]);
    let mut x: u128 = 1;
    let mut rest: u128 = 1;
    let mut fixed_par: u128 = 1;
    for (l, lp) in body.loops.iter().enumerate() {
        if assigned[l] {
            let t0 = tc[l][0] as u128;
            x *= match uf[l] {
                Some(u) => t0 / u as u128,
                None if lp.uf_fixed => t0,
                None => 1,
            };
            fixed_par *= tc[l][2] as u128;
        } else {
            rest *= lp.trip as u128;
        }
    }
    let y = match dsp_cap(cfg, weight, c.ii) {
        None => 1,
        Some(0) => return None,
        Some(cap) => {
            if fixed_par > cap {
                return None;
            }
            (rest * fixed_par).div_ceil(cap).max(1)
        }
    };
    Some(c.lat1.saturating_mul(x).saturating_mul(y))
}

/// Cheapest compute latency a body could reach, from its pipeline choice and
/// the triples of the loops that decide `lat1`.
fn static_compute_bound(cfg: &PlatformConfig, space: &DesignSpace, pins: &Pins, triples: &[Vec<[u64; 3]>], b: usize, weight: u64) -> u128 {
    const CAP: u64 = 200_000;
    let body = &space.bodies[b];
    let n = body.loops.len();
    let mut best = u128::MAX;
    let mut visited = 0u64;
    for pip in pip_choices(space, pins, b) {
        let (seq, known) = triple_sequence(space, b, pip);
        let head = &seq[..known];
        let mut tc: Vec<[u64; 3]> = body.loops.iter().map(|l| [l.trip, 1, 1]).collect();
        let mut assigned = vec![false; n];
        for l in head {
            assigned[*l] = true;
        }
        let uf = vec![None; n];
        let cands: Vec<Vec<[u64; 3]>> =
            head.iter().map(|l| triples[*l].iter().filter(|t| Some(*l) == pip || t[1] == 1).copied().collect()).collect();
        let mut idx = vec![0usize; known];
        if cands.iter().any(|c| c.is_empty()) {
            continue;
        }
        loop {
            visited += 1;
            if visited > CAP {
                return 1;
            }
            for (i, l) in head.iter().enumerate() {
                tc[*l] = cands[i][idx[i]];
            }
            if let Some(v) = compute_bound(cfg, space, b, weight, &tc, &assigned, &uf, pip) {
                best = best.min(v);
            }
            let mut i = 0;
            while i < known {
                idx[i] += 1;
                if idx[i] < cands[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == known {
                break;
            }
        }
    }
    best
}

fn full_cost(space: &DesignSpace, a: usize) -> u128 {
    let info = &space.arrays[a];
    model::transfer_cycles(info.dims.iter().product(), info.element_bits, info.burst)
}

fn statics(space: &DesignSpace, cfg: &PlatformConfig, pins: &Pins) -> Statics {
    let nb = space.bodies.len();
    let mut prev: Vec<Vec<Option<(usize, usize)>>> = space.bodies.iter().map(|b| vec![None; b.arrays.len()]).collect();
    let mut next: Vec<Vec<bool>> = space.bodies.iter().map(|b| vec![false; b.arrays.len()]).collect();
    let mut mem_floor = vec![0u128; nb];
    let mut load_floor = vec![0u128; nb];
    let mut store_floor = vec![0u128; nb];
    for (ai, info) in space.arrays.iter().enumerate() {
        for (i, (b, k)) in info.users.iter().enumerate() {
            if i > 0 {
                prev[*b][*k] = Some(info.users[i - 1]);
            }
            next[*b][*k] = i + 1 < info.users.len();
        }
        let cost = full_cost(space, ai);
        if let Some((b, _)) = info.users.first() {
            load_floor[*b] = load_floor[*b].max(cost);
        }
        if let Some((b, k)) = info.users.last() {
            if space.bodies[*b].arrays[*k].written {
                store_floor[*b] = store_floor[*b].max(cost);
            }
        }
    }
    for b in 0..nb {
        mem_floor[b] = load_floor[b] + store_floor[b];
    }
    let dsp_weight: Vec<u64> = space
        .bodies
        .iter()
        .map(|body| body.statements.iter().flat_map(|s| s.ops.iter()).map(|(op, n)| cfg.dsp_cost.get(*op) * *n as u64).sum())
        .collect();
    let triples: Vec<Vec<Vec<[u64; 3]>>> = space
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            body.loops
                .iter()
                .enumerate()
                .map(|(l, lp)| {
                    let mut ts: Vec<[u64; 3]> = factor_triples(lp.trip).into_iter().filter(|t| pins.triple_ok(b, l, t)).collect();
                    ts.sort_by(triple_order);
                    ts
                })
                .collect()
        })
        .collect();
    let compute_lb: Vec<u128> = (0..nb).map(|b| static_compute_bound(cfg, space, pins, &triples[b], b, dsp_weight[b])).collect();
    let body_lb: Vec<u128> = (0..nb).map(|b| compute_lb[b].saturating_add(mem_floor[b])).collect();
    let mut suffix = vec![0u128; nb + 1];
    for b in (0..nb).rev() {
        suffix[b] = suffix[b + 1].saturating_add(body_lb[b]);
    }
    Statics { body_lb, compute_lb, mem_floor, suffix, dsp_weight, triples, prev, next }
}

/// A constraint relaxation that no assignment can satisfy.
fn relaxed_infeasibility(space: &DesignSpace, cfg: &PlatformConfig, st: &Statics) -> Option<String> {
    // every array needs at least one buffer of its smallest tile
    let mut bytes: u128 = 0;
    for info in &space.arrays {
        let min_tile: u128 = info
            .users
            .iter()
            .map(|(b, k)| {
                let body = &space.bodies[*b];
                body.arrays[*k]
                    .dims
                    .iter()
                    .zip(&info.dims)
                    .map(|(m, e)| match m {
                        DimMap::Tiled(l) => (*e / body.loops[*l].trip).max(1) as u128,
                        DimMap::Full => *e as u128,
                    })
                    .product::<u128>()
            })
            .min()
            .unwrap_or(0);
        bytes += min_tile * (info.element_bits as u128 / 8).max(1);
    }
    if bytes > cfg.mem_bytes as u128 {
        return Some(format!("smallest buffers need {bytes} bytes, {} available", cfg.mem_bytes));
    }
    if cfg.dsp_available == 0 && st.dsp_weight.iter().any(|w| *w > 0) {
        return Some("kernel needs DSPs and none are available".into());
    }
    if st.body_lb.contains(&u128::MAX) {
        return Some("some body cannot meet the DSP budget at any pipeline setting".into());
    }
    None
}

struct Shared {
    /// Objective, task index, assignment.
    best: Option<(u128, usize, Assignment)>,
}

struct Ctx<'a> {
    space: &'a DesignSpace,
    cfg: &'a PlatformConfig,
    pins: &'a Pins,
    st: Statics,
    deadline: Option<Instant>,
    stop: AtomicBool,
    nodes: AtomicU64,
    shared: Mutex<Shared>,
    trace: Option<&'a TraceFn<'a>>,
    start: Instant,
}

impl Ctx<'_> {
    fn emit(&self, event: &'static str, objective: Option<u128>, lower_bound: Option<u128>, status: Option<&'static str>) {
        if let Some(t) = self.trace {
            t(&TraceEvent {
                event,
                nodes: self.nodes.load(Ordering::Relaxed),
                objective,
                lower_bound,
                status,
                elapsed_ms: self.start.elapsed().as_millis(),
            });
        }
    }
}

/// One unit of parallel work: a fixed pipeline choice and first triple of body 0.
#[derive(Clone, Copy, Debug)]
struct Task {
    pip: Option<usize>,
    first: Option<[u64; 3]>,
}

struct Worker<'c, 'a> {
    ctx: &'c Ctx<'a>,
    task_index: usize,
    task: Option<Task>,
    a: Assignment,
    pip: Vec<Option<usize>>,
    /// Per body: loops whose triple is decided, and decided unroll factors.
    assigned: Vec<Vec<bool>>,
    uf_set: Vec<Vec<Option<u64>>>,
    /// Provisional latency of completed bodies.
    done: u128,
    shares: Vec<[u64; 4]>,
    /// Buffer bytes of completed bodies.
    mem_used: u128,
    /// Running lcm of level-2 factors per array and dimension.
    ap: Vec<Vec<u64>>,
    best_obj: u128,
    best_task: usize,
    local_nodes: u64,
    /// Searching one body alone under optimistic cross-body assumptions.
    isolated: Option<usize>,
    node_limit: Option<u64>,
    aborted: bool,
}

impl<'c, 'a> Worker<'c, 'a> {
    fn new(ctx: &'c Ctx<'a>, task_index: usize, task: Option<Task>) -> Self {
        let space = ctx.space;
        Worker {
            ctx,
            task_index,
            task,
            a: Assignment::identity(space),
            pip: vec![None; space.bodies.len()],
            assigned: space.bodies.iter().map(|b| vec![false; b.loops.len()]).collect(),
            uf_set: space.bodies.iter().map(|b| vec![None; b.loops.len()]).collect(),
            done: 0,
            shares: Vec::new(),
            mem_used: 0,
            ap: space.arrays.iter().map(|a| vec![1; a.dims.len()]).collect(),
            best_obj: u128::MAX,
            best_task: usize::MAX,
            local_nodes: 0,
            isolated: None,
            node_limit: None,
            aborted: false,
        }
    }

    /// True when a subtree whose bound is `lb` cannot beat the incumbent.
    fn pruned(&self, lb: u128) -> bool {
        lb > self.best_obj || (lb == self.best_obj && self.best_task <= self.task_index)
    }

    fn halted(&self) -> bool {
        self.aborted || self.ctx.stop.load(Ordering::Relaxed)
    }

    fn tick(&mut self) -> bool {
        self.local_nodes += 1;
        if self.node_limit.is_some_and(|n| self.local_nodes > n) {
            self.aborted = true;
        }
        if self.local_nodes % 1024 == 0 {
            self.ctx.nodes.fetch_add(1024, Ordering::Relaxed);
            if self.ctx.deadline.is_some_and(|d| Instant::now() >= d) {
                self.ctx.stop.store(true, Ordering::Relaxed);
            }
            if self.isolated.is_none() {
                let shared = self.ctx.shared.lock().unwrap();
                if let Some((o, t, _)) = &shared.best {
                    self.best_obj = *o;
                    self.best_task = *t;
                }
            }
        }
        !self.halted()
    }

    fn flush_nodes(&mut self) {
        self.ctx.nodes.fetch_add(self.local_nodes % 1024, Ordering::Relaxed);
    }

    fn suffix(&self, b: usize) -> u128 {
        if self.isolated.is_some() {
            return 0;
        }
        self.ctx.st.suffix[b + 1]
    }

    fn body(&mut self, b: usize) {
        if self.isolated.is_some_and(|x| x + 1 == b) {
            if self.done < self.best_obj {
                self.best_obj = self.done;
                self.best_task = 0;
            }
            return;
        }
        if b == self.ctx.space.bodies.len() {
            self.leaf();
            return;
        }
        let space = self.ctx.space;
        let n = space.bodies[b].loops.len();
        let mut choices = pip_choices(space, self.ctx.pins, b);
        if b == 0 {
            if let Some(t) = self.task {
                choices.retain(|c| *c == t.pip);
            }
        }
        for pip in choices {
            if !self.tick() {
                return;
            }
            self.pip[b] = pip;
            self.a.bodies[b].pip = (0..n).map(|l| Some(l) == pip).collect();
            self.assigned[b] = vec![false; n];
            self.uf_set[b] = vec![None; n];
            let (seq, known) = triple_sequence(space, b, pip);
            self.triples(b, &seq, known, 0);
        }
        self.a.bodies[b] = BodyAssign::identity(&space.bodies[b]);
        self.pip[b] = None;
    }

    fn body_dsp_ok(&self, b: usize, ii: u64) -> bool {
        let cfg = self.ctx.cfg;
        let body = &self.ctx.space.bodies[b];
        let ba = &self.a.bodies[b];
        let uf: Vec<u64> = self.uf_set[b].iter().map(|u| u.unwrap_or(1)).collect();
        let share = model::dsp_share(&model::body_dsp(cfg, body, &ba.tc, &uf), ii);
        let mut all = self.shares.clone();
        all.push(share);
        let (opt, pes) = model::dsp_usage(&all);
        let used = if cfg.reuse_opt { opt } else { pes };
        used <= cfg.dsp_available
    }

    fn current_bound(&self, b: usize, known_done: bool) -> Option<u128> {
        let st = &self.ctx.st;
        let compute = if known_done {
            compute_bound(
                self.ctx.cfg,
                self.ctx.space,
                b,
                st.dsp_weight[b],
                &self.a.bodies[b].tc,
                &self.assigned[b],
                &self.uf_set[b],
                self.pip[b],
            )?
        } else {
            st.compute_lb[b]
        };
        Some(self.done.saturating_add(compute).saturating_add(st.mem_floor[b]).saturating_add(self.suffix(b)))
    }

    fn triples(&mut self, b: usize, seq: &[usize], known: usize, i: usize) {
        if i == seq.len() {
            self.ufs(b, 0);
            return;
        }
        let l = seq[i];
        let pip = self.pip[b];
        let cands: Vec<[u64; 3]> = self.ctx.st.triples[b][l].iter().filter(|t| Some(l) == pip || t[1] == 1).copied().collect();
        let space = self.ctx.space;
        let body = &space.bodies[b];
        for t in cands {
            if b == 0 && i == 0 {
                if let Some(first) = self.task.and_then(|t| t.first) {
                    if first != t {
                        continue;
                    }
                }
            }
            if !self.tick() {
                return;
            }
            // partition factors
            let mut saved: Vec<(usize, usize, u64)> = Vec::new();
            let mut ok = true;
            for arr in &body.arrays {
                for (d, ls) in arr.dim_loops.iter().enumerate() {
                    if ls.contains(&l) {
                        let old = self.ap[arr.array][d];
                        let new = model::lcm(old, t[2]);
                        if let Some(p) = self.ctx.pins.partition[arr.array][d] {
                            if p % t[2] != 0 {
                                ok = false;
                            }
                        }
                        saved.push((arr.array, d, old));
                        self.ap[arr.array][d] = new;
                    }
                }
            }
            if ok {
                for arr in &body.arrays {
                    let prod: u128 = (0..self.ap[arr.array].len())
                        .map(|d| self.ctx.pins.partition[arr.array][d].unwrap_or(self.ap[arr.array][d]) as u128)
                        .product();
                    if prod > self.ctx.cfg.max_part as u128 {
                        ok = false;
                    }
                }
            }
            if ok {
                self.a.bodies[b].tc[l] = t;
                self.assigned[b][l] = true;
                let known_done = i + 1 >= known;
                let keep = match self.current_bound(b, known_done) {
                    None => false,
                    Some(lb) => !self.pruned(lb),
                };
                let keep = keep && {
                    if known_done {
                        let ii = model::body_compute(self.ctx.cfg, body, &self.a.bodies[b].tc, pip, &vec![1; body.loops.len()]).ii;
                        self.body_dsp_ok(b, ii)
                    } else {
                        true
                    }
                };
                if keep {
                    self.triples(b, seq, known, i + 1);
                }
                self.assigned[b][l] = false;
                self.a.bodies[b].tc[l] = [body.loops[l].trip, 1, 1];
            }
            for (ai, d, old) in saved.into_iter().rev() {
                self.ap[ai][d] = old;
            }
            if self.halted() {
                return;
            }
        }
    }

    fn ufs(&mut self, b: usize, l: usize) {
        let space = self.ctx.space;
        let body = &space.bodies[b];
        if l == body.loops.len() {
            self.a.bodies[b].uf = self.uf_set[b].iter().map(|u| u.unwrap_or(1)).collect();
            self.perms(b);
            return;
        }
        let t0 = self.a.bodies[b].tc[l][0];
        let mut vals: Vec<u64> = if body.loops[l].uf_fixed { vec![1] } else { divisors(t0).into_iter().rev().collect() };
        if let Some(p) = self.ctx.pins.bodies[b].uf[l] {
            vals.retain(|v| *v == p);
        }
        for u in vals {
            if !self.tick() {
                return;
            }
            self.uf_set[b][l] = Some(u);
            let ii = model::body_compute(self.ctx.cfg, body, &self.a.bodies[b].tc, self.pip[b], &vec![1; body.loops.len()]).ii;
            let keep = self.body_dsp_ok(b, ii) && self.current_bound(b, true).is_some_and(|lb| !self.pruned(lb));
            if keep {
                self.ufs(b, l + 1);
            }
            self.uf_set[b][l] = None;
            if self.halted() {
                return;
            }
        }
    }

    /// Bytes a body array needs at `pos`, zero when it joins a resident buffer.
    fn buffer_bytes(&self, b: usize, k: usize, pos: usize, prev_top: bool) -> u128 {
        if pos == 0 && prev_top {
            return 0;
        }
        let space = self.ctx.space;
        let ba = &self.a.bodies[b];
        let info = &space.arrays[space.bodies[b].arrays[k].array];
        model::footprint(space, b, k, &ba.tc, &ba.perm, pos) as u128 * (info.element_bits as u128 / 8).max(1)
    }

    fn prev_top(&self, b: usize, k: usize) -> bool {
        if self.isolated.is_some() {
            return self.ctx.st.prev[b][k].is_some();
        }
        self.ctx.st.prev[b][k].is_some_and(|(pb, pk)| pb < b && self.a.bodies[pb].cache_pos(pk) == 0)
    }

    fn perms(&mut self, b: usize) {
        let space = self.ctx.space;
        let body = &space.bodies[b];
        let n = body.loops.len();
        // smallest possible buffers: every loop enclosing, or shared
        let min_bytes: u128 = (0..body.arrays.len())
            .map(|k| {
                let full: Vec<usize> = (0..n).collect();
                let ba = &self.a.bodies[b];
                if self.prev_top(b, k) {
                    0
                } else {
                    let info = &space.arrays[body.arrays[k].array];
                    model::footprint(space, b, k, &ba.tc, &full, n) as u128 * (info.element_bits as u128 / 8).max(1)
                }
            })
            .sum();
        if self.mem_used + min_bytes > self.ctx.cfg.mem_bytes as u128 {
            return;
        }
        let mut perms: Vec<Vec<usize>> = body.perms.clone();
        if let Some(p) = &self.ctx.pins.bodies[b].perm {
            perms.retain(|q| q == p);
        }
        for perm in perms {
            if !self.tick() {
                return;
            }
            self.a.bodies[b].perm = perm;
            if body.fully_permutable || model::order_problem(body, &self.a.bodies[b]).is_none() {
                self.caches(b, 0, 0);
            }
            if self.halted() {
                return;
            }
        }
        self.a.bodies[b].perm = (0..n).collect();
    }

    /// Transfer cycles of one body array at `pos` as far as they are known:
    /// a store a later body might take over is left out.
    fn provisional(&self, b: usize, k: usize, pos: usize) -> (u128, u128) {
        let space = self.ctx.space;
        let body = &space.bodies[b];
        let ba = &self.a.bodies[b];
        let arr = &body.arrays[k];
        let info = &space.arrays[arr.array];
        let cost = model::transfer_cycles(model::footprint(space, b, k, &ba.tc, &ba.perm, pos), info.element_bits, info.burst)
            .saturating_mul(model::multiplier(&ba.tc, &ba.perm, pos));
        let joins = pos == 0 && self.prev_top(b, k);
        let load = if joins { 0 } else { cost };
        let mut writes = arr.written;
        if joins && self.isolated.is_none() {
            let mut cur = self.ctx.st.prev[b][k];
            while let Some((pb, pk)) = cur {
                if self.a.bodies[pb].cache_pos(pk) != 0 {
                    break;
                }
                writes |= space.bodies[pb].arrays[pk].written;
                cur = self.ctx.st.prev[pb][pk];
            }
        }
        let deferred = pos == 0 && self.ctx.st.next[b][k];
        let store = if writes && !deferred { cost } else { 0 };
        (load, store)
    }

    fn partial_mem(&self, b: usize, upto: usize) -> u128 {
        let n = self.ctx.space.bodies[b].loops.len();
        let mut ld = vec![0u128; n + 1];
        let mut st = vec![0u128; n + 1];
        for k in 0..upto {
            let pos = self.a.bodies[b].cache_pos(k);
            let (l, s) = self.provisional(b, k, pos);
            ld[pos] = ld[pos].max(l);
            st[pos] = st[pos].max(s);
        }
        ld.iter().chain(&st).fold(0u128, |a, x| a.saturating_add(*x))
    }

    fn caches(&mut self, b: usize, k: usize, bytes: u128) {
        let space = self.ctx.space;
        let body = &space.bodies[b];
        let n = body.loops.len();
        let cfg = self.ctx.cfg;
        let ba = &self.a.bodies[b];
        let c = model::body_compute(cfg, body, &ba.tc, self.pip[b], &ba.uf);
        if k == body.arrays.len() {
            let mem = self.partial_mem(b, k);
            let share = model::dsp_share(&model::body_dsp(cfg, body, &ba.tc, &ba.uf), c.ii);
            let saved = (self.done, self.mem_used);
            self.done = self.done.saturating_add(c.lat0).saturating_add(mem);
            self.mem_used += bytes;
            self.shares.push(share);
            if !self.pruned(self.done.saturating_add(self.suffix(b))) {
                self.body(b + 1);
            }
            self.shares.pop();
            (self.done, self.mem_used) = saved;
            return;
        }
        let prev_top = self.prev_top(b, k);
        for pos in 0..=n {
            if !self.ctx.pins.cache_ok(b, k, &self.a.bodies[b].perm, pos) {
                continue;
            }
            if !self.tick() {
                return;
            }
            let add = self.buffer_bytes(b, k, pos, prev_top);
            if self.mem_used + bytes + add > cfg.mem_bytes as u128 {
                continue;
            }
            self.a.bodies[b].cache[k] = one_hot(n + 1, pos);
            let mem = self.partial_mem(b, k + 1).max(self.ctx.st.mem_floor[b]);
            let lb = self.done.saturating_add(c.lat0).saturating_add(mem).saturating_add(self.suffix(b));
            if !self.pruned(lb) {
                self.caches(b, k + 1, bytes + add);
            }
            if self.halted() {
                break;
            }
        }
        self.a.bodies[b].cache[k] = one_hot(n + 1, 0);
    }

    fn leaf(&mut self) {
        let mut a = self.a.clone();
        if self.ctx.pins.any_partition() {
            let min = model::min_partition(self.ctx.space, &a);
            a.partition = Some(
                min.iter()
                    .zip(&self.ctx.pins.partition)
                    .map(|(m, p)| m.iter().zip(p).map(|(m, p)| p.unwrap_or(*m)).collect())
                    .collect(),
            );
        }
        let ev = model::evaluate(self.ctx.space, self.ctx.cfg, &a);
        if !ev.feasible() || self.pruned(ev.objective) {
            return;
        }
        let mut shared = self.ctx.shared.lock().unwrap();
        let better = match &shared.best {
            None => true,
            Some((o, t, _)) => ev.objective < *o || (ev.objective == *o && self.task_index < *t),
        };
        if better {
            shared.best = Some((ev.objective, self.task_index, a));
            drop(shared);
            self.ctx.emit("incumbent", Some(ev.objective), None, None);
        }
        let shared = self.ctx.shared.lock().unwrap();
        if let Some((o, t, _)) = &shared.best {
            self.best_obj = *o;
            self.best_task = *t;
        }
    }
}

/// Nodes an isolated body search may spend before its bound is discarded.
const ISOLATED_NODE_LIMIT: u64 = 2_000_000;

/// Replaces each body's static bound by its optimum in isolation, where
/// every cross-body reuse is assumed to succeed and budgets are per body.
fn tighten(ctx: &mut Ctx) -> Result<(), SolveError> {
    let nb = ctx.space.bodies.len();
    if nb < 2 {
        return Ok(());
    }
    let mut improved = ctx.st.body_lb.clone();
    for (b, slot) in improved.iter_mut().enumerate() {
        let mut w = Worker::new(ctx, 0, None);
        w.isolated = Some(b);
        w.node_limit = Some(ISOLATED_NODE_LIMIT);
        w.body(b);
        if ctx.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        if !w.aborted {
            if w.best_obj == u128::MAX {
                return Err(SolveError::Infeasible(format!("body {} has no feasible setting on its own", ctx.space.bodies[b].id)));
            }
            *slot = (*slot).max(w.best_obj);
        }
    }
    let st = &mut ctx.st;
    st.body_lb = improved;
    for b in (0..nb).rev() {
        st.suffix[b] = st.suffix[b + 1].saturating_add(st.body_lb[b]);
    }
    Ok(())
}

fn make_tasks(space: &DesignSpace, pins: &Pins, st: &Statics) -> Vec<Task> {
    if space.bodies.is_empty() {
        return vec![Task { pip: None, first: None }];
    }
    let mut tasks = Vec::new();
    for pip in pip_choices(space, pins, 0) {
        let (seq, _) = triple_sequence(space, 0, pip);
        match seq.first() {
            None => tasks.push(Task { pip, first: None }),
            Some(l) => {
                for t in st.triples[0][*l].iter().filter(|t| Some(*l) == pip || t[1] == 1) {
                    tasks.push(Task { pip, first: Some(*t) });
                }
            }
        }
    }
    tasks
}

/// Cheap starting incumbents: unit tiles at the smallest or largest cache
/// footprint, with and without pipelining. Tight memory budgets otherwise
/// leave the search without any feasible point for a long time.
fn seed(space: &DesignSpace, cfg: &PlatformConfig, pins: &Pins) -> Option<(u128, Assignment)> {
    let mut best: Option<(u128, Assignment)> = None;
    for deep in [true, false] {
        for pipelined in [true, false] {
            let mut bodies = Vec::new();
            for (b, body) in space.bodies.iter().enumerate() {
                let n = body.loops.len();
                let bp = &pins.bodies[b];
                let choices = pip_choices(space, pins, b);
                let pip = if pipelined { choices[0] } else { *choices.last()? };
                let mut tc = Vec::new();
                for l in 0..n {
                    let trip = body.loops[l].trip;
                    let mut opts: Vec<[u64; 3]> =
                        factor_triples(trip).into_iter().filter(|t| pins.triple_ok(b, l, t) && (pip == Some(l) || t[1] == 1)).collect();
                    // deepest level first for the pipelined loop, outermost otherwise
                    opts.sort_by_key(|t| if pip == Some(l) { (u64::MAX - t[1], t[2]) } else { (u64::MAX - t[0], t[2]) });
                    tc.push(*opts.first()?);
                }
                let uf: Vec<u64> = (0..n).map(|l| bp.uf[l].unwrap_or(1)).collect();
                if (0..n).any(|l| tc[l][0] % uf[l] != 0) {
                    return best;
                }
                let perm = body.perms.iter().find(|p| bp.perm.as_ref().is_none_or(|q| q == *p))?.clone();
                let mut cache = Vec::new();
                for k in 0..body.arrays.len() {
                    let ok: Vec<usize> = (0..=n).filter(|p| pins.cache_ok(b, k, &perm, *p)).collect();
                    let pos = if deep { *ok.last()? } else { *ok.first()? };
                    cache.push(one_hot(n + 1, pos));
                }
                let pipv = (0..n).map(|l| pip == Some(l)).collect();
                bodies.push(BodyAssign { tc, pip: pipv, uf, perm, cache });
            }
            let mut a = Assignment { bodies, partition: None };
            if pins.any_partition() {
                let min = model::min_partition(space, &a);
                a.partition = Some(min.iter().zip(&pins.partition).map(|(m, p)| m.iter().zip(p).map(|(m, p)| p.unwrap_or(*m)).collect()).collect());
            }
            let ev = model::evaluate(space, cfg, &a);
            if ev.feasible() && best.as_ref().is_none_or(|(o, _)| ev.objective < *o) {
                best = Some((ev.objective, a));
            }
        }
    }
    best
}

/// Finds the latency-minimal feasible assignment.
///
/// Ties between equal objectives go to the first assignment in search
/// order, so the result does not depend on the thread count.
pub fn solve(space: &DesignSpace, cfg: &PlatformConfig, pins: &Pins, opts: &SolveOptions) -> Result<SolveOutcome, SolveError> {
    let start = Instant::now();
    let st = statics(space, cfg, pins);
    if let Some(why) = relaxed_infeasibility(space, cfg, &st) {
        return Err(SolveError::Infeasible(why));
    }
    let tasks = make_tasks(space, pins, &st);
    let mut ctx = Ctx {
        space,
        cfg,
        pins,
        st,
        deadline: opts.budget.map(|d| start + d),
        stop: AtomicBool::new(false),
        nodes: AtomicU64::new(0),
        shared: Mutex::new(Shared { best: None }),
        trace: opts.trace,
        start,
    };
    tighten(&mut ctx)?;
    ctx.emit("start", None, Some(ctx.st.suffix[0]), None);
    // the seed loses ties to any searched point
    if let Some((o, a)) = seed(space, cfg, pins) {
        ctx.shared.lock().unwrap().best = Some((o, usize::MAX, a));
        ctx.emit("incumbent", Some(o), None, None);
    }
    let threads = opts.threads.max(1);
    if threads == 1 {
        let mut w = Worker::new(&ctx, 0, None);
        if let Some((o, _, _)) = &ctx.shared.lock().unwrap().best {
            w.best_obj = *o;
        }
        w.body(0);
        w.flush_nodes();
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..threads.min(tasks.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() || ctx.stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let mut w = Worker::new(&ctx, i, Some(tasks[i]));
                    {
                        let shared = ctx.shared.lock().unwrap();
                        if let Some((o, t, _)) = &shared.best {
                            w.best_obj = *o;
                            w.best_task = *t;
                        }
                    }
                    w.body(0);
                    w.flush_nodes();
                });
            }
        });
    }
    let stopped = ctx.stop.load(Ordering::Relaxed);
    let best = ctx.shared.into_inner().unwrap().best;
    let nodes = ctx.nodes.load(Ordering::Relaxed);
    let status = match (&best, stopped) {
        (Some(_), false) => Status::Optimal,
        (Some(_), true) => Status::FeasibleTimeout,
        (None, false) => Status::Infeasible,
        (None, true) => return Err(SolveError::NoIncumbent),
    };
    if let Some(t) = opts.trace {
        t(&TraceEvent {
            event: "done",
            nodes,
            objective: best.as_ref().map(|b| b.0),
            lower_bound: None,
            status: Some(status.as_str()),
            elapsed_ms: start.elapsed().as_millis(),
        });
    }
    let best = best.map(|(_, _, assignment)| Solved { evaluation: model::evaluate(space, cfg, &assignment), assignment });
    Ok(SolveOutcome { status, best, nodes, wall_time: start.elapsed() })
}

/// Solves once, then again with pessimistic DSP accounting if the
/// optimistic problem is infeasible. Returns the config actually used.
pub fn solve_with_retry(
    space: &DesignSpace,
    cfg: &PlatformConfig,
    pins: &Pins,
    opts: &SolveOptions,
) -> Result<(SolveOutcome, PlatformConfig), SolveError> {
    let first = solve(space, cfg, pins, opts);
    let retry = match &first {
        Ok(o) => o.status == Status::Infeasible && cfg.reuse_opt,
        Err(SolveError::Infeasible(_)) => cfg.reuse_opt,
        Err(_) => false,
    };
    if retry {
        let mut pes = cfg.clone();
        pes.reuse_opt = false;
        if let Ok(o) = solve(space, &pes, pins, opts) {
            if o.best.is_some() {
                return Ok((o, pes));
            }
        }
    }
    first.map(|o| (o, cfg.clone()))
}

/// Lower bound of every completion of a partial assignment: bodies
/// `0..bodies_done` are fully assigned in `a`, the rest are free.
pub fn lower_bound(space: &DesignSpace, cfg: &PlatformConfig, a: &Assignment, bodies_done: usize) -> u128 {
    if bodies_done >= space.bodies.len() {
        let ev = model::evaluate(space, cfg, a);
        return if ev.feasible() { ev.objective } else { u128::MAX };
    }
    let pins = Pins::none(space);
    let st = statics(space, cfg, &pins);
    let ctx = Ctx {
        space,
        cfg,
        pins: &pins,
        st,
        deadline: None,
        stop: AtomicBool::new(false),
        nodes: AtomicU64::new(0),
        shared: Mutex::new(Shared { best: None }),
        trace: None,
        start: Instant::now(),
    };
    let mut w = Worker::new(&ctx, 0, None);
    w.a = a.clone();
    let mut bytes = 0u128;
    for b in 0..bodies_done {
        let body = &space.bodies[b];
        let ba = &a.bodies[b];
        let c = model::body_compute(cfg, body, &ba.tc, ba.pipelined(), &ba.uf);
        let mem = w.partial_mem(b, body.arrays.len());
        w.done = w.done.saturating_add(c.lat0).saturating_add(mem);
        for k in 0..body.arrays.len() {
            bytes += w.buffer_bytes(b, k, ba.cache_pos(k), w.prev_top(b, k));
        }
    }
    if bytes > cfg.mem_bytes as u128 {
        return u128::MAX;
    }
    w.done.saturating_add(ctx.st.suffix[bodies_done])
}

/// Exhaustive oracle over the raw variable domains.
pub fn brute_force(space: &DesignSpace, cfg: &PlatformConfig, pins: &Pins) -> Result<SolveOutcome, SolveError> {
    let size = space.domain_size();
    if size > BRUTE_FORCE_GUARD {
        return Err(SolveError::SpaceTooLarge { size, guard: BRUTE_FORCE_GUARD });
    }
    let start = Instant::now();
    // per body, every raw combination that passes the cheap local checks
    let mut per_body: Vec<Vec<BodyAssign>> = Vec::new();
    for (b, body) in space.bodies.iter().enumerate() {
        let n = body.loops.len();
        let bp = &pins.bodies[b];
        let mut out = Vec::new();
        let trips: Vec<Vec<[u64; 3]>> =
            (0..n).map(|l| factor_triples(body.loops[l].trip).into_iter().filter(|t| pins.triple_ok(b, l, t)).collect()).collect();
        let ufs: Vec<Vec<u64>> = (0..n)
            .map(|l| {
                let mut v = if body.loops[l].uf_fixed { vec![1] } else { divisors(body.loops[l].trip) };
                if let Some(p) = bp.uf[l] {
                    v.retain(|x| *x == p);
                }
                v
            })
            .collect();
        for mask in 0u64..(1u64 << n) {
            let pip: Vec<bool> = (0..n).map(|l| mask >> l & 1 == 1).collect();
            if pip.iter().filter(|p| **p).count() > 1 || (0..n).any(|l| bp.pip[l].is_some_and(|p| p != pip[l])) {
                continue;
            }
            let mut tc_idx = vec![0usize; n];
            loop {
                let tc: Vec<[u64; 3]> = (0..n).map(|l| trips[l][tc_idx[l]]).collect();
                if (0..n).all(|l| pip[l] || tc[l][1] == 1) {
                    let mut uf_idx = vec![0usize; n];
                    loop {
                        let uf: Vec<u64> = (0..n).map(|l| ufs[l][uf_idx[l]]).collect();
                        if (0..n).all(|l| tc[l][0] % uf[l] == 0) {
                            for perm in body.perms.iter().filter(|p| bp.perm.as_ref().is_none_or(|q| q == *p)) {
                                let mut pos = vec![0usize; body.arrays.len()];
                                loop {
                                    if (0..body.arrays.len()).all(|k| pins.cache_ok(b, k, perm, pos[k])) {
                                        out.push(BodyAssign {
                                            tc: tc.clone(),
                                            pip: pip.clone(),
                                            uf: uf.clone(),
                                            perm: perm.clone(),
                                            cache: pos.iter().map(|p| one_hot(n + 1, *p)).collect(),
                                        });
                                    }
                                    if !odometer(&mut pos, |_| n + 1) {
                                        break;
                                    }
                                }
                            }
                        }
                        if !odometer(&mut uf_idx, |l| ufs[l].len()) {
                            break;
                        }
                    }
                }
                if !odometer(&mut tc_idx, |l| trips[l].len()) {
                    break;
                }
            }
        }
        per_body.push(out);
    }
    let mut best: Option<(u128, Assignment)> = None;
    let mut nodes = 0u64;
    if per_body.iter().all(|v| !v.is_empty()) {
        let mut idx = vec![0usize; per_body.len()];
        loop {
            nodes += 1;
            let mut a = Assignment { bodies: idx.iter().enumerate().map(|(b, i)| per_body[b][*i].clone()).collect(), partition: None };
            if pins.any_partition() {
                let min = model::min_partition(space, &a);
                a.partition =
                    Some(min.iter().zip(&pins.partition).map(|(m, p)| m.iter().zip(p).map(|(m, p)| p.unwrap_or(*m)).collect()).collect());
            }
            let ev = model::evaluate(space, cfg, &a);
            if ev.feasible() && best.as_ref().is_none_or(|(o, _)| ev.objective < *o) {
                best = Some((ev.objective, a));
            }
            if !odometer(&mut idx, |b| per_body[b].len()) {
                break;
            }
        }
    }
    let status = if best.is_some() { Status::Optimal } else { Status::Infeasible };
    let best = best.map(|(_, assignment)| Solved { evaluation: model::evaluate(space, cfg, &assignment), assignment });
    Ok(SolveOutcome { status, best, nodes, wall_time: start.elapsed() })
}

/// Advances a mixed-radix counter; false once it wraps.
fn odometer(idx: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for i in 0..idx.len() {
        idx[i] += 1;
        if idx[i] < radix(i) {
            return true;
        }
        idx[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;
    use crate::space::build_space;

    fn gemm(n: u64) -> DesignSpace {
        let src = format!(
            "void gemm(float A[{n}][{n}], float B[{n}][{n}], float C[{n}][{n}]) {{\n  for (int i = 0; i < {n}; i++)\n    for (int j = 0; j < {n}; j++) {{\n      C[i][j] = 0;\n      for (int k = 0; k < {n}; k++)\n        C[i][j] += A[i][k] * B[k][j];\n    }}\n}}\n"
        );
        build_space(&parse_kernel(&src).unwrap(), 512).unwrap()
    }

    fn small_cfg() -> PlatformConfig {
        PlatformConfig { dsp_available: 64, mem_bytes: 4096, ..PlatformConfig::default() }
    }

    #[test]
    fn triples_of_eight() {
        assert_eq!(factor_triples(8).len(), 10);
    }

    /// Accumulation only, so the raw domain stays within the oracle guard.
    fn gemm_acc(n: u64) -> DesignSpace {
        let src = format!(
            "void gemm(float A[{n}][{n}], float B[{n}][{n}], float C[{n}][{n}]) {{\n  for (int i = 0; i < {n}; i++)\n    for (int k = 0; k < {n}; k++)\n      for (int j = 0; j < {n}; j++)\n        C[i][j] += A[i][k] * B[k][j];\n}}\n"
        );
        build_space(&parse_kernel(&src).unwrap(), 512).unwrap()
    }

    #[test]
    fn matches_brute_force_on_tiny_gemm() {
        let space = gemm_acc(8);
        assert!(space.domain_size() <= BRUTE_FORCE_GUARD);
        let cfg = small_cfg();
        let pins = Pins::none(&space);
        let bb = solve(&space, &cfg, &pins, &SolveOptions::default()).unwrap();
        let bf = brute_force(&space, &cfg, &pins).unwrap();
        assert_eq!(bb.status, Status::Optimal);
        assert_eq!(bb.best.unwrap().evaluation.objective, bf.best.unwrap().evaluation.objective);
    }

    #[test]
    fn threads_agree_with_single_thread() {
        let space = gemm(8);
        let cfg = small_cfg();
        let pins = Pins::none(&space);
        let one = solve(&space, &cfg, &pins, &SolveOptions::default()).unwrap();
        let four = solve(&space, &cfg, &pins, &SolveOptions { threads: 4, ..Default::default() }).unwrap();
        assert_eq!(one.best.unwrap().assignment, four.best.unwrap().assignment);
    }

    #[test]
    fn pins_are_honored() {
        let space = gemm(8);
        let mut raw = BTreeMap::new();
        let id = space.bodies[1].id.clone();
        raw.insert(format!("{id}.perm"), "k0,j0,i0".to_string());
        raw.insert(format!("{id}.i.tc"), "2,1,4".to_string());
        let pins = parse_pins(&space, &raw).unwrap();
        let out = solve(&space, &small_cfg(), &pins, &SolveOptions::default()).unwrap();
        let best = out.best.unwrap().assignment;
        let body = &space.bodies[1];
        let perm: Vec<&str> = best.bodies[1].perm.iter().map(|l| body.loops[*l].iterator.as_str()).collect();
        assert_eq!(perm, ["k", "j", "i"]);
        assert_eq!(best.bodies[1].tc[body.loop_pos("i").unwrap()], [2, 1, 4]);
    }

    #[test]
    fn bad_pins_are_rejected() {
        let space = gemm(8);
        for (k, v) in [("S9.perm", "i"), ("S1.q.tc", "1,1,8"), ("S1.i.tc", "3,1,1"), ("S1.k.uf", "2"), ("S1.cache.Z", "0")] {
            let raw = BTreeMap::from([(k.to_string(), v.to_string())]);
            assert!(matches!(parse_pins(&space, &raw), Err(SolveError::InvalidPin { .. })), "{k}");
        }
    }

    #[test]
    fn zero_memory_is_infeasible() {
        let space = gemm(8);
        let cfg = PlatformConfig { mem_bytes: 0, ..PlatformConfig::default() };
        assert!(matches!(solve(&space, &cfg, &Pins::none(&space), &SolveOptions::default()), Err(SolveError::Infeasible(_))));
    }

    #[test]
    fn guard_refuses_large_spaces() {
        let space = gemm(200);
        assert!(matches!(brute_force(&space, &PlatformConfig::default(), &Pins::none(&space)), Err(SolveError::SpaceTooLarge { .. })));
    }

    #[test]
    fn bound_never_exceeds_optimum() {
        let space = gemm(8);
        let cfg = small_cfg();
        let out = solve(&space, &cfg, &Pins::none(&space), &SolveOptions::default()).unwrap().best.unwrap();
        for done in 0..=space.bodies.len() {
            assert!(lower_bound(&space, &cfg, &out.assignment, done) <= out.evaluation.objective);
        }
    }
}
