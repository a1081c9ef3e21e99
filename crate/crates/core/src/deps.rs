//! Dependence analysis, maximal loop distribution and permutation legality.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{AffineAccess, Item, KernelIr, Loop, LoopId, Statement};

/// One component of a distance vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Const(i64),
    /// Unknown or any distance.
    Star,
}

impl Dist {
    fn neg(self) -> Dist {
        match self {
            Dist::Const(c) => Dist::Const(-c),
            Dist::Star => Dist::Star,
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Const(c) => write!(f, "{c}"),
            Dist::Star => write!(f, "*"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepKind {
    Flow,
    Anti,
    Output,
    Input,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dependence {
    pub source: String,
    pub sink: String,
    pub array: String,
    pub kind: DepKind,
    /// Loops shared by source and sink, outermost first.
    pub loops: Vec<LoopId>,
    pub distance: Vec<Dist>,
    /// Position in `loops` of the first non-zero component; `None` when loop-independent.
    pub carried_level: Option<usize>,
    /// Self-dependence of an accumulation on its accumulated element.
    pub reduction: bool,
}

impl Dependence {
    pub fn constrains(&self) -> bool {
        self.kind != DepKind::Input
    }

    pub fn vector_string(&self) -> String {
        let parts: Vec<String> = self.distance.iter().map(|d| d.to_string()).collect();
        format!("({})", parts.join(", "))
    }
}

/// Loops of an accumulating statement whose iterator does not index the
/// accumulated element.
pub fn reduction_loops(ir: &KernelIr, stmt: &Statement) -> Vec<LoopId> {
    if !stmt.is_accumulation() {
        return Vec::new();
    }
    stmt.enclosing_loops
        .iter()
        .copied()
        .filter(|l| {
            let it = &ir.loop_(*l).iterator;
            !stmt.lhs.subscripts.iter().any(|s| s.mentions(it))
        })
        .collect()
}

fn common_loops(a: &Statement, b: &Statement) -> Vec<LoopId> {
    a.enclosing_loops
        .iter()
        .zip(&b.enclosing_loops)
        .take_while(|(x, y)| x == y)
        .map(|(x, _)| *x)
        .collect()
}

/// Distance of `b`'s instance minus `a`'s over the common loops, or `None`
/// when the two accesses can never touch the same element.
fn distance(ir: &KernelIr, sa: &Statement, xa: &AffineAccess, sb: &Statement, xb: &AffineAccess, common: &[LoopId]) -> Option<Vec<Option<Dist>>> {
    let resolve = |s: &Statement, it: &str| s.enclosing_loops.iter().copied().find(|l| ir.loop_(*l).iterator == it);
    let trip_a = |it: &str| ir.trip_of(sa, it);
    let trip_b = |it: &str| ir.trip_of(sb, it);
    let mut comps: Vec<Option<Dist>> = vec![None; common.len()];
    let mut star = vec![false; common.len()];
    for (ea, eb) in xa.subscripts.iter().zip(&xb.subscripts) {
        let (lo_a, hi_a) = ea.range(&trip_a)?;
        let (lo_b, hi_b) = eb.range(&trip_b)?;
        if hi_a < lo_b || hi_b < lo_a {
            return None;
        }
        if ea.is_constant() && eb.is_constant() {
            if ea.constant != eb.constant {
                return None;
            }
            continue;
        }
        let la = ea.simple_iterator().and_then(|it| resolve(sa, it));
        let lb = eb.simple_iterator().and_then(|it| resolve(sb, it));
        if let (Some(la), Some(lb)) = (la, lb) {
            if la == lb {
                if let Some(pos) = common.iter().position(|c| *c == la) {
                    let d = ea.constant - eb.constant;
                    if d.unsigned_abs() >= ir.loop_(la).trip_count {
                        return None;
                    }
                    match comps[pos] {
                        Some(Dist::Const(prev)) if prev != d => return None,
                        _ => comps[pos] = Some(Dist::Const(d)),
                    }
                    continue;
                }
            }
        }
        for (pos, l) in common.iter().enumerate() {
            let it = &ir.loop_(*l).iterator;
            if ea.mentions(it) || eb.mentions(it) {
                star[pos] = true;
            }
        }
    }
    for pos in 0..common.len() {
        if comps[pos].is_none() && star[pos] {
            comps[pos] = Some(Dist::Star);
        }
    }
    Some(comps)
}

fn kind_of(src: &AffineAccess, sink: &AffineAccess) -> DepKind {
    match (src.is_write(), sink.is_write()) {
        (true, false) => DepKind::Flow,
        (false, true) => DepKind::Anti,
        (true, true) => DepKind::Output,
        (false, false) => DepKind::Input,
    }
}

fn first_nonzero(v: &[Dist]) -> Option<usize> {
    v.iter().position(|d| *d != Dist::Const(0))
}

/// All dependences between statement instances, including input dependences.
pub fn analyze(ir: &KernelIr) -> Vec<Dependence> {
    let mut out = Vec::new();
    for (ia, sa) in ir.statements.iter().enumerate() {
        for (ib, sb) in ir.statements.iter().enumerate().skip(ia) {
            let common = common_loops(sa, sb);
            for (pa, xa) in sa.accesses.iter().enumerate() {
                for (pb, xb) in sb.accesses.iter().enumerate() {
                    if xa.array != xb.array || (ia == ib && pb < pa) {
                        continue;
                    }
                    if ia == ib && pa == pb && !xa.is_write() {
                        continue;
                    }
                    let Some(comps) = distance(ir, sa, xa, sb, xb, &common) else { continue };
                    let reduction = ia == ib
                        && sa.is_accumulation()
                        && xa.subscripts == sa.lhs.subscripts
                        && xb.subscripts == sa.lhs.subscripts
                        && xa.array == sa.lhs.array;
                    let red_loops = if reduction { reduction_loops(ir, sa) } else { Vec::new() };
                    let vec: Vec<Dist> = comps
                        .iter()
                        .zip(&common)
                        .map(|(c, l)| match c {
                            Some(d) => *d,
                            None if red_loops.contains(l) => Dist::Const(1),
                            None => Dist::Star,
                        })
                        .collect();
                    let mut push = |src_first: bool, v: Vec<Dist>| {
                        let (s, t, xs, xt) = if src_first { (sa, sb, xa, xb) } else { (sb, sa, xb, xa) };
                        out.push(Dependence {
                            source: s.id.clone(),
                            sink: t.id.clone(),
                            array: xa.array.clone(),
                            kind: kind_of(xs, xt),
                            loops: common.clone(),
                            carried_level: first_nonzero(&v),
                            distance: v,
                            reduction,
                        });
                    };
                    match first_nonzero(&vec).map(|k| vec[k]) {
                        None => {
                            if ia != ib {
                                push(true, vec);
                            }
                        }
                        Some(Dist::Const(c)) if c > 0 => push(true, vec),
                        Some(Dist::Const(_)) => push(false, vec.iter().map(|d| d.neg()).collect()),
                        Some(Dist::Star) => {
                            let neg: Vec<Dist> = vec.iter().map(|d| d.neg()).collect();
                            push(true, vec);
                            if !(ia == ib && pa == pb) {
                                push(false, neg);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// True when a dependence between `a` and `b` forbids placing them in separate
/// loops at `level` (a position into their common loops) with `a` first.
fn blocks_split(dep: &Dependence, later: &str, earlier: &str, level: usize) -> bool {
    dep.constrains()
        && dep.source == later
        && dep.sink == earlier
        && dep.distance.len() > level
        && dep.distance[..level].iter().all(|d| *d == Dist::Const(0) || *d == Dist::Star)
}

/// Distributing a loop at `level` so that `a`'s statements run before `b`'s is legal.
pub fn distribution_legal(deps: &[Dependence], a: &[&str], b: &[&str], level: usize) -> bool {
    !deps.iter().any(|d| b.iter().any(|sb| a.iter().any(|sa| blocks_split(d, sb, sa, level))))
}

#[derive(Clone, Debug)]
enum Node {
    Loop { orig: LoopId, children: Vec<Node> },
    Stmt(usize),
}

impl Node {
    fn stmts(&self, out: &mut Vec<usize>) {
        match self {
            Node::Stmt(s) => out.push(*s),
            Node::Loop { children, .. } => children.iter().for_each(|c| c.stmts(out)),
        }
    }
}

fn build(ir: &KernelIr, item: Item) -> Node {
    match item {
        Item::Stmt(s) => Node::Stmt(s),
        Item::Loop(l) => Node::Loop {
            orig: l,
            children: ir.loop_(l).body.iter().map(|c| build(ir, *c)).collect(),
        },
    }
}

fn distribute(ir: &KernelIr, deps: &[Dependence], node: Node) -> Vec<Node> {
    let Node::Loop { orig, children } = node else { return vec![node] };
    let level = ir.loop_(orig).depth;
    let units: Vec<Node> = children.into_iter().flat_map(|c| distribute(ir, deps, c)).collect();
    if units.is_empty() {
        return vec![Node::Loop { orig, children: units }];
    }
    let ids: Vec<Vec<&str>> = units
        .iter()
        .map(|u| {
            let mut v = Vec::new();
            u.stmts(&mut v);
            v.into_iter().map(|s| ir.statements[s].id.as_str()).collect()
        })
        .collect();
    // labels stay non-decreasing, so each group is a contiguous run of units
    let mut start: Vec<usize> = (0..units.len()).collect();
    loop {
        let mut changed = false;
        for j in 0..units.len() {
            for i in 0..j {
                if start[i] != start[j] && !distribution_legal(deps, &ids[i], &ids[j], level) {
                    let (lo, hi) = (start[i], start[j]);
                    for s in start.iter_mut().filter(|s| **s > lo && **s <= hi) {
                        *s = lo;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: Vec<Vec<Node>> = Vec::new();
    for (k, u) in units.into_iter().enumerate() {
        if k == 0 || start[k] != start[k - 1] {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(u);
    }
    groups.into_iter().map(|children| Node::Loop { orig, children }).collect()
}

/// A kernel after maximal distribution, with each new loop's origin.
#[derive(Clone, Debug)]
pub struct Distributed {
    pub ir: KernelIr,
    /// `origin[new.0]` is the input loop the new loop was copied from.
    pub origin: Vec<LoopId>,
}

/// Splits every loop as finely as its dependences allow and renumbers loops
/// in textual order. Statement order and ids are preserved.
pub fn maximal_distribution(ir: &KernelIr) -> Distributed {
    let deps = analyze(ir);
    let roots: Vec<Node> = ir.top.iter().flat_map(|i| distribute(ir, &deps, build(ir, *i))).collect();
    let mut out = KernelIr { loops: Vec::new(), top: Vec::new(), ..ir.clone() };
    let mut origin = Vec::new();
    fn emit(ir: &KernelIr, n: &Node, parent: Option<LoopId>, stack: &mut Vec<LoopId>, out: &mut KernelIr, origin: &mut Vec<LoopId>) -> Item {
        match n {
            Node::Stmt(s) => {
                out.statements[*s].enclosing_loops = stack.clone();
                Item::Stmt(*s)
            }
            Node::Loop { orig, children } => {
                let id = LoopId(out.loops.len());
                let src: &Loop = ir.loop_(*orig);
                out.loops.push(Loop {
                    id,
                    iterator: src.iterator.clone(),
                    trip_count: src.trip_count,
                    parent,
                    depth: stack.len(),
                    body: Vec::new(),
                });
                origin.push(*orig);
                stack.push(id);
                let body = children.iter().map(|c| emit(ir, c, Some(id), stack, out, origin)).collect();
                stack.pop();
                out.loops[id.0].body = body;
                Item::Loop(id)
            }
        }
    }
    let mut stack = Vec::new();
    out.top = roots.iter().map(|n| emit(ir, n, None, &mut stack, &mut out, &mut origin)).collect();
    Distributed { ir: out, origin }
}

/// Whether executing the loops of a perfect nest in `perm` order (positions
/// into `loops`, outermost first) preserves every dependence among `deps`.
pub fn permutation_legal(deps: &[Dependence], loops: &[LoopId], perm: &[usize]) -> bool {
    if perm.iter().enumerate().all(|(k, p)| k == *p) {
        return true;
    }
    for d in deps.iter().filter(|d| d.constrains()) {
        if d.loops.len() < loops.len() || d.loops[..loops.len()] != *loops {
            continue;
        }
        if d.distance.iter().any(|c| *c == Dist::Star) {
            return false;
        }
        let permuted: Vec<i64> = perm
            .iter()
            .map(|p| match d.distance[*p] {
                Dist::Const(c) => c,
                Dist::Star => unreachable!(),
            })
            .collect();
        if let Some(first) = permuted.iter().find(|c| **c != 0) {
            if *first < 0 {
                return false;
            }
        }
    }
    true
}

/// Every component non-negative and known: any loop order is legal.
pub fn fully_permutable(deps: &[Dependence]) -> bool {
    deps.iter()
        .filter(|d| d.constrains())
        .all(|d| d.distance.iter().all(|c| matches!(c, Dist::Const(x) if *x >= 0)))
}

/// Dependences grouped by (source, sink) for display.
pub fn summarize(deps: &[Dependence]) -> BTreeMap<(String, String), Vec<&Dependence>> {
    let mut m: BTreeMap<(String, String), Vec<&Dependence>> = BTreeMap::new();
    for d in deps {
        m.entry((d.source.clone(), d.sink.clone())).or_default().push(d);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;

    const GEMM: &str = "void gemm(float alpha, float beta, float C[20][22], float A[20][24], float B[24][22]) {
      for (int i = 0; i < 20; i++) {
        for (int j = 0; j < 22; j++) C[i][j] *= beta;
        for (int k = 0; k < 24; k++)
          for (int j = 0; j < 22; j++) C[i][j] += alpha * A[i][k] * B[k][j];
      }
    }";

    #[test]
    fn gemm_distributes_into_two_nests() {
        let ir = parse_kernel(GEMM).unwrap();
        let d = maximal_distribution(&ir);
        assert_eq!(d.ir.top.len(), 2);
        assert_eq!(d.ir.statements[0].enclosing_loops.len(), 2);
        assert_eq!(d.ir.statements[1].enclosing_loops.len(), 3);
        assert!(d.ir.validate().is_ok());
        assert_eq!(d.origin, vec![LoopId(0), LoopId(1), LoopId(0), LoopId(2), LoopId(3)]);
    }

    #[test]
    fn gemm_update_is_fully_permutable() {
        let ir = parse_kernel(GEMM).unwrap();
        let d = maximal_distribution(&ir);
        let deps = analyze(&d.ir);
        let own: Vec<_> = deps.iter().filter(|x| x.source == "S1" && x.sink == "S1").cloned().collect();
        assert!(own.iter().any(|x| x.reduction));
        assert!(fully_permutable(&own));
        let loops = d.ir.statements[1].enclosing_loops.clone();
        assert!(permutation_legal(&own, &loops, &[2, 1, 0]));
    }

    #[test]
    fn recurrence_blocks_distribution_and_interchange() {
        let src = "void k(float A[10][10], float B[10][10]) {
          for (int i = 1 - 1; i < 9; i++)
            for (int j = 0; j < 9; j++) {
              A[i + 1][j] = B[i][j] + 1;
              B[i + 1][j + 1] = A[i][j + 1];
            }
        }";
        // the `1 - 1` lower bound is not a literal zero
        assert!(parse_kernel(src).is_err());
        let src = src.replace("1 - 1", "0");
        let ir = parse_kernel(&src).unwrap();
        let d = maximal_distribution(&ir);
        assert_eq!(d.ir.top.len(), 1);
        // both dependences are carried by i, so only the j loop splits
        let outer = d.ir.loop_(LoopId(0));
        assert_eq!(outer.body.len(), 2);
        let deps = analyze(&ir);
        // A: S0 writes (i+1, j), S1 reads (i, j+1): distance (1, -1)
        assert!(deps
            .iter()
            .any(|x| x.source == "S0" && x.sink == "S1" && x.distance == vec![Dist::Const(1), Dist::Const(-1)]));
        let loops = ir.statements[0].enclosing_loops.clone();
        assert!(!permutation_legal(&deps, &loops, &[1, 0]));
    }

    #[test]
    fn forward_dependence_allows_split() {
        let src = "void k(float A[8], float B[8], float C[8]) {
          for (int i = 0; i < 8; i++) { A[i] = B[i]; C[i] = A[i] * 2; }
        }";
        let d = maximal_distribution(&parse_kernel(src).unwrap());
        assert_eq!(d.ir.top.len(), 2);
    }

    #[test]
    fn backward_carried_dependence_keeps_loop_fused() {
        let src = "void k(float A[8], float C[8]) {
          for (int i = 1; i < 8; i++) { C[i] = A[i - 1]; A[i] = C[i] * 2; }
        }";
        assert!(parse_kernel(src).is_err());
        let src = "void k(float A[9], float C[8]) {
          for (int i = 0; i < 8; i++) { C[i] = A[i]; A[i + 1] = C[i] * 2; }
        }";
        let d = maximal_distribution(&parse_kernel(src).unwrap());
        assert_eq!(d.ir.top.len(), 1);
    }
}
