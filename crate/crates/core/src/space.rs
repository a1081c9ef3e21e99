//! The design space: distributed loop bodies, each loop strip-mined into
//! three levels, with permutation domains, cache points and footprint tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::deps::{self, Dependence, Dist};
use crate::error::TemplateError;
use crate::ir::{Item, KernelIr, LoopId, OpKind};

/// All ordered triples `(t0, t1, t2)` with `t0 * t1 * t2 == tc`, sorted lexicographically.
pub fn factor_triples(tc: u64) -> Vec<[u64; 3]> {
    let divs = divisors(tc);
    let mut out = Vec::new();
    for &a in &divs {
        for &b in divisors(tc / a).iter() {
            out.push([a, b, tc / a / b]);
        }
    }
    out
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Largest power-of-two bit width up to `cap` dividing one row of the array.
pub fn burst_width(last_dim: u64, element_bits: u32, cap: u32) -> u32 {
    let row = last_dim * element_bits as u64;
    let mut b = cap.max(1).next_power_of_two();
    if b > cap {
        b /= 2;
    }
    while b > 1 && row % b as u64 != 0 {
        b /= 2;
    }
    b
}

/// How one array dimension relates to the body's loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimMap {
    /// Indexed exactly by this loop (by position) over its full range: tiles shrink with it.
    Tiled(usize),
    /// Always transferred whole.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyLoop {
    pub id: LoopId,
    pub iterator: String,
    pub trip: u64,
    /// Reduction loop of some statement in the body.
    pub reduction: bool,
    /// Coarse unrolling not allowed (singleton body, reduction loop or carried dependence).
    pub uf_fixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyArray {
    /// Index into the kernel's arrays.
    pub array: usize,
    pub name: String,
    pub dims: Vec<DimMap>,
    /// Per dimension, the body loops (positions) whose iterator appears in it.
    pub dim_loops: Vec<Vec<usize>>,
    pub read: bool,
    pub written: bool,
    /// Symbolic footprint per cache position, for display.
    pub footprints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StmtInfo {
    pub stmt: usize,
    pub id: String,
    pub ops: BTreeMap<OpKind, u32>,
    /// Op kinds charged to the parallel latency.
    pub par_ops: Vec<OpKind>,
    /// Accumulation op when the statement has reduction loops.
    pub red_op: Option<OpKind>,
    pub red_loops: Vec<usize>,
    /// Loops carrying a non-reduction dependence among the body's statements.
    pub carried: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: String,
    pub statements: Vec<StmtInfo>,
    pub loops: Vec<BodyLoop>,
    pub singleton: bool,
    /// Legal level-0 orders, positions into `loops`, outermost first. The identity comes first.
    pub perms: Vec<Vec<usize>>,
    pub fully_permutable: bool,
    /// Constraining dependence vectors over the body loops.
    pub dep_vectors: Vec<Vec<Dist>>,
    pub arrays: Vec<BodyArray>,
}

impl Body {
    pub fn loop_pos(&self, iterator: &str) -> Option<usize> {
        self.loops.iter().position(|l| l.iterator == iterator)
    }

    pub fn array_pos(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    /// Cache positions: 0 is before the nest, k is after the k-th level-0 loop.
    pub fn positions(&self) -> usize {
        self.loops.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub dims: Vec<u64>,
    pub element_bits: u32,
    pub burst: u32,
    /// `(body, index into body.arrays)` in body order.
    pub users: Vec<(usize, usize)>,
    pub written: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub kernel: KernelIr,
    pub distributed: KernelIr,
    pub origin: Vec<LoopId>,
    pub dependences: Vec<Dependence>,
    pub bodies: Vec<Body>,
    pub arrays: Vec<ArrayInfo>,
}

impl DesignSpace {
    pub fn body(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id || b.statements.iter().any(|s| s.id == id))
    }

    /// Number of points in the raw product of all variable domains.
    pub fn domain_size(&self) -> u128 {
        let mut n: u128 = 1;
        for b in &self.bodies {
            for l in &b.loops {
                n = n.saturating_mul(factor_triples(l.trip).len() as u128);
                if !l.uf_fixed {
                    n = n.saturating_mul(divisors(l.trip).len() as u128);
                }
            }
            n = n.saturating_mul(1u128 << b.loops.len().min(100));
            n = n.saturating_mul(b.perms.len() as u128);
            for _ in &b.arrays {
                n = n.saturating_mul(b.positions() as u128);
            }
        }
        n
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Collects perfect nests. Returns `(loop path, statements)` per body in textual order.
fn collect_bodies(ir: &KernelIr) -> Result<Vec<(Vec<LoopId>, Vec<usize>)>, TemplateError> {
    fn walk(ir: &KernelIr, items: &[Item], path: &mut Vec<LoopId>, out: &mut Vec<(Vec<LoopId>, Vec<usize>)>) -> Result<(), TemplateError> {
        let stmts: Vec<usize> = items.iter().filter_map(|i| if let Item::Stmt(s) = i { Some(*s) } else { None }).collect();
        let loops: Vec<LoopId> = items.iter().filter_map(|i| if let Item::Loop(l) = i { Some(*l) } else { None }).collect();
        if !stmts.is_empty() && !loops.is_empty() {
            let ids: Vec<&str> = stmts.iter().map(|s| ir.statements[*s].id.as_str()).collect();
            return Err(TemplateError::ImperfectBody(format!(
                "statements {} share a loop with inner loops that cannot be distributed",
                ids.join(", ")
            )));
        }
        if !stmts.is_empty() {
            out.push((path.clone(), stmts));
            return Ok(());
        }
        if loops.len() > 1 && !path.is_empty() {
            // several loops under one loop only survive distribution when dependences tie them
            let mut all = Vec::new();
            for l in &loops {
                let mut sub = Vec::new();
                path.push(*l);
                walk(ir, &ir.loop_(*l).body, path, &mut sub)?;
                path.pop();
                all.extend(sub);
            }
            let ids: Vec<String> = all.iter().flat_map(|(_, s)| s.iter().map(|x| ir.statements[*x].id.clone())).collect();
            if all.len() > 1 {
                return Err(TemplateError::ImperfectBody(format!(
                    "statements {} stay in one imperfect nest under {}",
                    ids.join(", "),
                    ir.loop_(*path.last().unwrap()).iterator
                )));
            }
            out.extend(all);
            return Ok(());
        }
        for l in loops {
            path.push(l);
            walk(ir, &ir.loop_(l).body, path, out)?;
            path.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    for item in &ir.top {
        match item {
            Item::Stmt(s) => out.push((Vec::new(), vec![*s])),
            Item::Loop(l) => walk(ir, &ir.loop_(*l).body, &mut vec![*l], &mut out)?,
        }
    }
    Ok(out)
}

fn build_body(ir: &KernelIr, all_deps: &[Dependence], path: &[LoopId], stmts: &[usize]) -> Body {
    let singleton = stmts.len() == 1;
    let ids: Vec<&str> = stmts.iter().map(|s| ir.statements[*s].id.as_str()).collect();
    let in_body = |id: &str| ids.contains(&id);
    let body_deps: Vec<&Dependence> = all_deps
        .iter()
        .filter(|d| d.constrains() && in_body(&d.source) && in_body(&d.sink) && d.loops.as_slice() == path)
        .collect();
    let statements: Vec<StmtInfo> = stmts
        .iter()
        .map(|&s| {
            let st = &ir.statements[s];
            let red: Vec<usize> = deps::reduction_loops(ir, st).iter().map(|l| path.iter().position(|p| p == l).unwrap()).collect();
            let red_op = if red.is_empty() { None } else { st.accumulation.as_ref().map(|a| a.op) };
            let mut par_ops: Vec<OpKind> = Vec::new();
            for (op, n) in &st.ops {
                let left = if Some(*op) == red_op { n - 1 } else { *n };
                if left > 0 {
                    par_ops.push(*op);
                }
            }
            let mut carried = BTreeSet::new();
            for d in &body_deps {
                if d.reduction || (d.source != st.id && d.sink != st.id) {
                    continue;
                }
                for (k, c) in d.distance.iter().enumerate() {
                    if *c != Dist::Const(0) {
                        carried.insert(k);
                    }
                }
            }
            StmtInfo {
                stmt: s,
                id: st.id.clone(),
                ops: st.ops.clone(),
                par_ops,
                red_op,
                red_loops: red,
                carried: carried.into_iter().collect(),
            }
        })
        .collect();
    let loops: Vec<BodyLoop> = path
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let lp = ir.loop_(*l);
            let reduction = statements.iter().any(|s| s.red_loops.contains(&k));
            let carries = statements.iter().any(|s| s.carried.contains(&k));
            BodyLoop {
                id: *l,
                iterator: lp.iterator.clone(),
                trip: lp.trip_count,
                reduction,
                uf_fixed: singleton || reduction || carries,
            }
        })
        .collect();
    let owned: Vec<Dependence> = body_deps.iter().map(|d| (*d).clone()).collect();
    let fully_permutable = deps::fully_permutable(&owned);
    let perms: Vec<Vec<usize>> = permutations(path.len())
        .into_iter()
        .filter(|p| fully_permutable || deps::permutation_legal(&owned, path, p))
        .collect();
    let mut dep_vectors: Vec<Vec<Dist>> = owned.iter().map(|d| d.distance.clone()).collect();
    dep_vectors.sort_by_key(|v| format!("{v:?}"));
    dep_vectors.dedup();

    let mut names: Vec<&str> = Vec::new();
    for &s in stmts {
        for a in &ir.statements[s].accesses {
            if !names.contains(&a.array.as_str()) {
                names.push(&a.array);
            }
        }
    }
    let arrays = names
        .iter()
        .map(|name| {
            let ai = ir.array_index(name).unwrap();
            let decl = &ir.arrays[ai];
            let accesses: Vec<_> = stmts.iter().flat_map(|s| ir.statements[*s].accesses.iter().filter(|a| a.array == *name)).collect();
            let dims: Vec<DimMap> = (0..decl.dims.len())
                .map(|d| {
                    let first = &accesses[0].subscripts[d];
                    let Some(it) = first.simple_iterator() else { return DimMap::Full };
                    let Some(pos) = loops.iter().position(|l| l.iterator == it) else { return DimMap::Full };
                    let exact = accesses.iter().all(|a| a.subscripts[d] == *first) && first.constant == 0;
                    if exact && loops[pos].trip == decl.dims[d] {
                        DimMap::Tiled(pos)
                    } else {
                        DimMap::Full
                    }
                })
                .collect();
            // a loop tiling two dimensions would shrink the tile faster than it repeats
            let mut dims = dims;
            for d in 0..dims.len() {
                if let DimMap::Tiled(l) = dims[d] {
                    if dims.iter().filter(|m| **m == DimMap::Tiled(l)).count() > 1 {
                        for m in dims.iter_mut().filter(|m| **m == DimMap::Tiled(l)) {
                            *m = DimMap::Full;
                        }
                    }
                }
            }
            let dim_loops: Vec<Vec<usize>> = (0..decl.dims.len())
                .map(|d| {
                    (0..loops.len())
                        .filter(|&k| accesses.iter().any(|a| a.subscripts[d].mentions(&loops[k].iterator)))
                        .collect()
                })
                .collect();
            let mut footprints = vec!["full".to_string()];
            footprints[0] = decl.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" x ");
            BodyArray {
                array: ai,
                name: name.to_string(),
                dims,
                dim_loops,
                read: accesses.iter().any(|a| !a.is_write()),
                written: accesses.iter().any(|a| a.is_write()),
                footprints,
            }
        })
        .collect();
    let mut body = Body {
        id: ids.join("+"),
        statements,
        loops,
        singleton,
        perms,
        fully_permutable,
        dep_vectors,
        arrays,
    };
    fill_footprint_strings(ir, &mut body);
    body
}

/// Footprint expressions per position, written against the identity order
/// (`i0` denotes the level-0 trip factor of `i`).
fn fill_footprint_strings(ir: &KernelIr, body: &mut Body) {
    let n = body.loops.len();
    for ba in &mut body.arrays {
        let decl = &ir.arrays[ba.array];
        ba.footprints = (0..=n)
            .map(|k| {
                decl.dims
                    .iter()
                    .zip(&ba.dims)
                    .map(|(extent, m)| match m {
                        DimMap::Tiled(l) if *l < k => format!("{extent}/{}0", body.loops[*l].iterator),
                        _ => extent.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(" x ")
            })
            .collect();
    }
}

/// Builds the full design space for a kernel.
pub fn build_space(kernel: &KernelIr, burst_cap_bits: u32) -> Result<DesignSpace, TemplateError> {
    let dist = deps::maximal_distribution(kernel);
    let ir = dist.ir;
    let dependences = deps::analyze(&ir);
    let bodies: Vec<Body> = collect_bodies(&ir)?
        .iter()
        .map(|(path, stmts)| build_body(&ir, &dependences, path, stmts))
        .collect();
    let mut arrays: Vec<ArrayInfo> = Vec::new();
    for decl in &ir.arrays {
        let users: Vec<(usize, usize)> = bodies
            .iter()
            .enumerate()
            .filter_map(|(b, body)| body.array_pos(&decl.name).map(|k| (b, k)))
            .collect();
        let written = users.iter().any(|(b, k)| bodies[*b].arrays[*k].written);
        arrays.push(ArrayInfo {
            name: decl.name.clone(),
            dims: decl.dims.clone(),
            element_bits: decl.element_bits(),
            burst: burst_width(*decl.dims.last().unwrap(), decl.element_bits(), burst_cap_bits),
            users,
            written,
        });
    }
    Ok(DesignSpace { kernel: kernel.clone(), distributed: ir, origin: dist.origin, dependences, bodies, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;

    #[test]
    fn factor_triple_counts_match_brute_force() {
        for tc in 1..=240u64 {
            let mut brute = Vec::new();
            for a in 1..=tc {
                for b in 1..=tc {
                    for c in 1..=tc {
                        if a * b * c == tc {
                            brute.push([a, b, c]);
                        }
                    }
                }
                if tc > 60 {
                    break;
                }
            }
            let got = factor_triples(tc);
            assert!(got.windows(2).all(|w| w[0] < w[1]));
            assert!(got.iter().all(|t| t[0] * t[1] * t[2] == tc));
            if tc <= 60 {
                assert_eq!(got, brute, "tc={tc}");
            }
        }
        assert_eq!(factor_triples(4).len(), 6);
        assert_eq!(factor_triples(200).len(), 60);
        assert_eq!(factor_triples(1), vec![[1, 1, 1]]);
    }

    #[test]
    fn burst_examples() {
        assert_eq!(burst_width(20, 32, 512), 128);
        assert_eq!(burst_width(220, 32, 512), 128);
        assert_eq!(burst_width(16, 64, 512), 512);
        assert_eq!(burst_width(3, 8, 512), 8);
    }

    const GEMM: &str = "void gemm(float alpha, float beta, float C[200][220], float A[200][240], float B[240][220]) {
      for (int i = 0; i < 200; i++) {
        for (int j = 0; j < 220; j++) C[i][j] *= beta;
        for (int k = 0; k < 240; k++)
          for (int j = 0; j < 220; j++) C[i][j] += alpha * A[i][k] * B[k][j];
      }
    }";

    #[test]
    fn gemm_space_shape() {
        let sp = build_space(&parse_kernel(GEMM).unwrap(), 512).unwrap();
        assert_eq!(sp.bodies.len(), 2);
        let s1 = &sp.bodies[1];
        assert_eq!(s1.id, "S1");
        assert_eq!(s1.perms.len(), 6);
        assert_eq!(s1.perms[0], vec![0, 1, 2]);
        assert!(s1.loops[1].reduction);
        assert!(s1.loops.iter().all(|l| l.uf_fixed));
        assert_eq!(s1.statements[0].red_op, Some(OpKind::Add));
        assert_eq!(s1.statements[0].par_ops, vec![OpKind::Mul]);
        let a = &s1.arrays[s1.array_pos("A").unwrap()];
        assert_eq!(a.dims, vec![DimMap::Tiled(0), DimMap::Tiled(1)]);
        assert_eq!(a.footprints[2], "200/i0 x 240/k0");
        assert_eq!(sp.arrays.iter().find(|a| a.name == "C").unwrap().users, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn cnn_band_has_720_orders() {
        let src = "void cnn(float out[8][12][12], float W[8][8][3][3], float in[8][14][14]) {
          for (int i = 0; i < 8; i++) for (int j = 0; j < 8; j++) for (int h = 0; h < 12; h++)
          for (int w = 0; w < 12; w++) for (int p = 0; p < 3; p++) for (int q = 0; q < 3; q++)
            out[i][h][w] += W[i][j][p][q] * in[j][h + p][w + q];
        }";
        let sp = build_space(&parse_kernel(src).unwrap(), 512).unwrap();
        assert_eq!(sp.bodies[0].perms.len(), 720);
        let inb = &sp.bodies[0].arrays[sp.bodies[0].array_pos("in").unwrap()];
        assert_eq!(inb.dims, vec![DimMap::Tiled(1), DimMap::Full, DimMap::Full]);
        assert_eq!(inb.dim_loops[1], vec![2, 4]);
    }

    #[test]
    fn star_dependence_keeps_identity_only() {
        let src = "void k(float A[8][8]) {
          for (int i = 0; i < 8; i++) for (int j = 0; j < 8; j++) A[i][0] = A[j][0] + 1;
        }";
        let sp = build_space(&parse_kernel(src).unwrap(), 512).unwrap();
        assert_eq!(sp.bodies[0].perms, vec![vec![0, 1]]);
        assert!(!sp.bodies[0].fully_permutable);
    }
}
