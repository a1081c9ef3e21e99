//! Reference execution of kernels and of generated code, with C arithmetic
//! rules for `float`, `double` and the integer types.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::{CExpr, CFunction, CStmt};
use crate::ir::{AssignOp, Expr, Item, KernelIr, LoopId, OpKind, ScalarType};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct InterpError(pub String);

fn fail<T>(msg: impl Into<String>) -> Result<T, InterpError> {
    Err(InterpError(msg.into()))
}

/// One C value after the usual arithmetic conversions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Val {
    I(i64),
    F(f32),
    D(f64),
}

impl Val {
    fn as_f64(self) -> f64 {
        match self {
            Val::I(x) => x as f64,
            Val::F(x) => x as f64,
            Val::D(x) => x,
        }
    }

    fn as_i64(self) -> i64 {
        match self {
            Val::I(x) => x,
            Val::F(x) => x as i64,
            Val::D(x) => x as i64,
        }
    }

    fn rank(self) -> u8 {
        match self {
            Val::I(_) => 0,
            Val::F(_) => 1,
            Val::D(_) => 2,
        }
    }

    fn to_rank(self, r: u8) -> Val {
        match r {
            0 => Val::I(self.as_i64()),
            1 => Val::F(match self {
                Val::F(x) => x,
                other => other.as_f64() as f32,
            }),
            _ => Val::D(self.as_f64()),
        }
    }

    /// Converts to the element type of a store.
    pub fn cast(self, ty: ScalarType) -> Val {
        match ty {
            ScalarType::Float => self.to_rank(1),
            ScalarType::Double => self.to_rank(2),
            ScalarType::Char => Val::I(self.as_i64() as i8 as i64),
            ScalarType::Short => Val::I(self.as_i64() as i16 as i64),
            ScalarType::Int => Val::I(self.as_i64() as i32 as i64),
            ScalarType::Long => Val::I(self.as_i64()),
        }
    }

    fn literal(text: &str) -> Result<Val, InterpError> {
        let t = text.trim_end_matches(['l', 'L', 'u', 'U']);
        if let Some(f) = t.strip_suffix(['f', 'F']) {
            return f.parse::<f32>().map(Val::F).map_err(|_| InterpError(format!("bad literal `{text}`")));
        }
        if t.contains(['.', 'e', 'E']) {
            return t.parse::<f64>().map(Val::D).map_err(|_| InterpError(format!("bad literal `{text}`")));
        }
        t.parse::<i64>().map(Val::I).map_err(|_| InterpError(format!("bad literal `{text}`")))
    }
}

fn arith(op: char, a: Val, b: Val) -> Result<Val, InterpError> {
    let r = a.rank().max(b.rank());
    Ok(match (a.to_rank(r), b.to_rank(r)) {
        (Val::I(x), Val::I(y)) => Val::I(match op {
            '+' => x.wrapping_add(y),
            '-' => x.wrapping_sub(y),
            '*' => x.wrapping_mul(y),
            '/' | '%' if y == 0 => return fail("integer division by zero"),
            '/' => x.wrapping_div(y),
            '%' => x.wrapping_rem(y),
            _ => return fail(format!("unsupported operator `{op}`")),
        }),
        (Val::F(x), Val::F(y)) => Val::F(match op {
            '+' => x + y,
            '-' => x - y,
            '*' => x * y,
            '/' => x / y,
            _ => return fail(format!("unsupported operator `{op}` on float")),
        }),
        (Val::D(x), Val::D(y)) => Val::D(match op {
            '+' => x + y,
            '-' => x - y,
            '*' => x * y,
            '/' => x / y,
            _ => return fail(format!("unsupported operator `{op}` on double")),
        }),
        _ => unreachable!(),
    })
}

fn neg(v: Val) -> Val {
    match v {
        Val::I(x) => Val::I(x.wrapping_neg()),
        Val::F(x) => Val::F(-x),
        Val::D(x) => Val::D(-x),
    }
}

fn op_char(op: OpKind) -> char {
    op.symbol().chars().next().unwrap()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub ty: ScalarType,
    pub dims: Vec<u64>,
    pub data: Vec<Val>,
}

impl Buffer {
    pub fn zeroed(ty: ScalarType, dims: &[u64]) -> Self {
        let n: u64 = dims.iter().product();
        Buffer { ty, dims: dims.to_vec(), data: vec![Val::I(0).cast(ty); n as usize] }
    }

    fn offset(&self, idx: &[i64], name: &str) -> Result<usize, InterpError> {
        if idx.len() != self.dims.len() {
            return fail(format!("`{name}` indexed with {} subscripts, has {} dimensions", idx.len(), self.dims.len()));
        }
        let mut off = 0usize;
        for (i, (x, d)) in idx.iter().zip(&self.dims).enumerate() {
            if *x < 0 || *x as u64 >= *d {
                return fail(format!("`{name}` subscript {i} out of bounds: {x} not in [0, {d})"));
            }
            off = off * *d as usize + *x as usize;
        }
        Ok(off)
    }
}

/// Arrays and scalars visible to a kernel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Memory {
    pub arrays: BTreeMap<String, Buffer>,
    pub scalars: BTreeMap<String, Val>,
}

/// Deterministic generator shared with the emitted harness.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    /// Small dyadic value: a multiple of 0.25 in [-2, 2], or an integer in [-8, 8].
    pub fn value(&mut self, ty: ScalarType) -> Val {
        let k = (self.next() % 17) as i64 - 8;
        if ty.is_floating() {
            Val::D(k as f64 * 0.25).cast(ty)
        } else {
            Val::I(k).cast(ty)
        }
    }
}

/// Inputs for one seed, filled scalars first, then arrays in declaration order.
pub fn seeded_memory(ir: &KernelIr, seed: u64) -> Memory {
    let mut rng = Lcg(seed);
    let mut mem = Memory::default();
    for s in &ir.scalars {
        mem.scalars.insert(s.name.clone(), rng.value(s.ty));
    }
    for a in &ir.arrays {
        let mut buf = Buffer::zeroed(a.ty, &a.dims);
        for v in buf.data.iter_mut() {
            *v = rng.value(a.ty);
        }
        mem.arrays.insert(a.name.clone(), buf);
    }
    mem
}

fn assign(op: AssignOp, old: Val, rhs: Val) -> Result<Val, InterpError> {
    match op.compound_op() {
        None => Ok(rhs),
        Some(k) => arith(op_char(k), old, rhs),
    }
}

struct IrRun<'a> {
    ir: &'a KernelIr,
    env: BTreeMap<String, i64>,
}

impl IrRun<'_> {
    fn eval(&self, e: &Expr, mem: &Memory) -> Result<Val, InterpError> {
        Ok(match e {
            Expr::Ref(r) => {
                let buf = mem.arrays.get(&r.array).ok_or_else(|| InterpError(format!("unknown array `{}`", r.array)))?;
                let idx: Vec<i64> = r.subscripts.iter().map(|s| s.eval(&|n| self.env.get(n).copied().unwrap_or(0))).collect();
                buf.data[buf.offset(&idx, &r.array)?]
            }
            Expr::Scalar(s) => *mem.scalars.get(s).ok_or_else(|| InterpError(format!("unknown scalar `{s}`")))?,
            Expr::Literal(l) => Val::literal(l)?,
            Expr::Neg(x) => neg(self.eval(x, mem)?),
            Expr::Bin(op, a, b) => arith(op_char(*op), self.eval(a, mem)?, self.eval(b, mem)?)?,
        })
    }

    fn item(&mut self, item: Item, mem: &mut Memory) -> Result<(), InterpError> {
        match item {
            Item::Stmt(s) => {
                let st = &self.ir.statements[s];
                let rhs = self.eval(&st.rhs, mem)?;
                let idx: Vec<i64> = st.lhs.subscripts.iter().map(|s| s.eval(&|n| self.env.get(n).copied().unwrap_or(0))).collect();
                let buf = mem.arrays.get_mut(&st.lhs.array).ok_or_else(|| InterpError(format!("unknown array `{}`", st.lhs.array)))?;
                let off = buf.offset(&idx, &st.lhs.array)?;
                buf.data[off] = assign(st.op, buf.data[off], rhs)?.cast(buf.ty);
            }
            Item::Loop(l) => {
                let lp = self.ir.loop_(l);
                for v in 0..lp.trip_count as i64 {
                    self.env.insert(lp.iterator.clone(), v);
                    for child in &lp.body {
                        self.item(*child, mem)?;
                    }
                }
                self.env.remove(&lp.iterator);
            }
        }
        Ok(())
    }
}

/// Executes the kernel in its written order.
pub fn run_ir(ir: &KernelIr, mem: &mut Memory) -> Result<(), InterpError> {
    let mut run = IrRun { ir, env: BTreeMap::new() };
    for item in &ir.top {
        run.item(*item, mem)?;
    }
    Ok(())
}

/// The same kernel with the perfect band starting at `outer` reordered:
/// `perm[k]` is the band position executed at depth `k`.
pub fn permute_band(ir: &KernelIr, outer: LoopId, perm: &[usize]) -> Result<KernelIr, InterpError> {
    let mut band = vec![outer];
    while band.len() < perm.len() {
        let lp = ir.loop_(*band.last().unwrap());
        match lp.body.as_slice() {
            [Item::Loop(c)] => band.push(*c),
            _ => return fail("band is not perfectly nested"),
        }
    }
    let heads: Vec<(String, u64)> = band.iter().map(|l| (ir.loop_(*l).iterator.clone(), ir.loop_(*l).trip_count)).collect();
    let mut out = ir.clone();
    for (depth, l) in band.iter().enumerate() {
        let (it, trip) = heads[perm[depth]].clone();
        let lp = &mut out.loops[l.0];
        lp.iterator = it;
        lp.trip_count = trip;
    }
    Ok(out)
}

struct CRun {
    env: BTreeMap<String, i64>,
    locals: Vec<String>,
    /// Executions per `#pragma tileforge stmt` tag.
    counts: BTreeMap<String, u64>,
}

impl CRun {
    fn index(&self, subs: &[CExpr], mem: &Memory) -> Result<Vec<i64>, InterpError> {
        subs.iter().map(|s| self.eval(s, mem).map(|v| v.as_i64())).collect()
    }

    fn eval(&self, e: &CExpr, mem: &Memory) -> Result<Val, InterpError> {
        Ok(match e {
            CExpr::Num(n) => Val::literal(n)?,
            CExpr::Ident(name) => match self.env.get(name) {
                Some(v) => Val::I(*v),
                None => *mem.scalars.get(name).ok_or_else(|| InterpError(format!("unknown name `{name}`")))?,
            },
            CExpr::Index(name, subs) => {
                let buf = mem.arrays.get(name).ok_or_else(|| InterpError(format!("unknown array `{name}`")))?;
                let idx = self.index(subs, mem)?;
                buf.data[buf.offset(&idx, name)?]
            }
            CExpr::Bin(op, a, b) => arith(*op, self.eval(a, mem)?, self.eval(b, mem)?)?,
            CExpr::Neg(x) => neg(self.eval(x, mem)?),
            CExpr::Call(name, _) => return fail(format!("call to `{name}` cannot be executed")),
        })
    }

    fn stmts(&mut self, body: &[CStmt], mem: &mut Memory) -> Result<(), InterpError> {
        for s in body {
            self.stmt(s, mem)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &CStmt, mem: &mut Memory) -> Result<(), InterpError> {
        match s {
            CStmt::For { iterator, trip, body, .. } => {
                let saved = self.env.get(iterator).copied();
                for v in 0..*trip as i64 {
                    self.env.insert(iterator.clone(), v);
                    self.stmts(body, mem)?;
                }
                match saved {
                    Some(v) => self.env.insert(iterator.clone(), v),
                    None => self.env.remove(iterator),
                };
            }
            CStmt::Assign { target, op, value, tag, .. } => {
                if let Some(t) = tag {
                    *self.counts.entry(t.clone()).or_insert(0) += 1;
                }
                let rhs = self.eval(value, mem)?;
                match target {
                    CExpr::Index(name, subs) => {
                        let idx = self.index(subs, mem)?;
                        let buf = mem.arrays.get_mut(name).ok_or_else(|| InterpError(format!("unknown array `{name}`")))?;
                        let off = buf.offset(&idx, name)?;
                        buf.data[off] = assign(*op, buf.data[off], rhs)?.cast(buf.ty);
                    }
                    CExpr::Ident(name) if mem.scalars.contains_key(name) => {
                        let old = mem.scalars[name];
                        let ty = match old {
                            Val::I(_) => ScalarType::Long,
                            Val::F(_) => ScalarType::Float,
                            Val::D(_) => ScalarType::Double,
                        };
                        mem.scalars.insert(name.clone(), assign(*op, old, rhs)?.cast(ty));
                    }
                    _ => return fail("unsupported assignment target"),
                }
            }
            CStmt::Decl { ty, name, dims, init, .. } => {
                let t = ScalarType::from_c_name(ty).ok_or_else(|| InterpError(format!("unknown type `{ty}`")))?;
                if dims.is_empty() {
                    let v = match init {
                        Some(e) => self.eval(e, mem)?,
                        None => Val::I(0),
                    };
                    mem.scalars.insert(name.clone(), v.cast(t));
                } else {
                    mem.arrays.insert(name.clone(), Buffer::zeroed(t, dims));
                }
                self.locals.push(name.clone());
            }
            CStmt::Block(b) => self.stmts(b, mem)?,
            CStmt::Pragma(_) => {}
            CStmt::Call { name, .. } => return fail(format!("call to `{name}` cannot be executed")),
        }
        Ok(())
    }
}

/// Executes a parsed generated function against `mem`; local buffers are
/// dropped afterwards.
pub fn run_function(f: &CFunction, mem: &mut Memory) -> Result<(), InterpError> {
    run_function_counted(f, mem).map(|_| ())
}

/// Like `run_function`, also returning how often each tagged statement ran.
pub fn run_function_counted(f: &CFunction, mem: &mut Memory) -> Result<BTreeMap<String, u64>, InterpError> {
    for p in &f.params {
        let known = if p.dims.is_empty() { mem.scalars.contains_key(&p.name) } else { mem.arrays.contains_key(&p.name) };
        if !known {
            return fail(format!("no value bound for parameter `{}`", p.name));
        }
    }
    let mut run = CRun { env: BTreeMap::new(), locals: Vec::new(), counts: BTreeMap::new() };
    let r = run.stmts(&f.body, mem);
    for name in &run.locals {
        mem.arrays.remove(name);
        mem.scalars.remove(name);
    }
    r.map(|_| run.counts)
}

/// First mismatch between two memories over the arrays of `ir`. With a
/// tolerance, floating values may differ by that relative error.
pub fn compare(ir: &KernelIr, expected: &Memory, actual: &Memory, rel_tol: Option<f64>) -> Result<(), String> {
    for a in &ir.arrays {
        let (Some(x), Some(y)) = (expected.arrays.get(&a.name), actual.arrays.get(&a.name)) else {
            return Err(format!("array `{}` missing", a.name));
        };
        for (i, (u, v)) in x.data.iter().zip(&y.data).enumerate() {
            let same = match rel_tol {
                None => u.as_f64().to_bits() == v.as_f64().to_bits() || (u.as_f64().is_nan() && v.as_f64().is_nan()),
                Some(tol) => {
                    let (p, q) = (u.as_f64(), v.as_f64());
                    p == q || (p.is_nan() && q.is_nan()) || (p.is_finite() && q.is_finite() && (p - q).abs() <= tol * p.abs().max(q.abs()).max(1.0))
                }
            };
            if !same {
                return Err(format!("`{}` element {i}: expected {:?}, got {:?}", a.name, u, v));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_generated_function, parse_kernel};

    #[test]
    fn float_arithmetic_rounds_each_step() {
        let a = Val::F(16777216.0);
        let b = arith('+', a, Val::F(1.0)).unwrap();
        assert_eq!(b, Val::F(16777216.0));
        assert_eq!(arith('+', Val::I(1), Val::D(0.5)).unwrap(), Val::D(1.5));
        assert_eq!(Val::D(3.7).cast(ScalarType::Int), Val::I(3));
    }

    #[test]
    fn ir_and_source_agree() {
        let src = "void k(float a, float A[4][4], float x[4], float y[4]) {\n  for (int i = 0; i < 4; i++)\n    for (int j = 0; j < 4; j++)\n      y[i] += a * A[i][j] * x[j];\n}\n";
        let ir = parse_kernel(src).unwrap();
        let f = parse_generated_function(src, "k").unwrap();
        let mut m1 = seeded_memory(&ir, 7);
        let mut m2 = m1.clone();
        run_ir(&ir, &mut m1).unwrap();
        run_function(&f, &mut m2).unwrap();
        assert_eq!(compare(&ir, &m1, &m2, None), Ok(()));
        assert_ne!(m1, seeded_memory(&ir, 7));
    }

    #[test]
    fn illegal_interchange_changes_results() {
        let src = "void r(float A[6][6]) {\n  for (int i = 0; i < 5; i++)\n    for (int j = 0; j < 5; j++)\n      A[i + 1][j] = A[i][j + 1] * 2;\n}\n";
        let ir = parse_kernel(src).unwrap();
        let swapped = permute_band(&ir, LoopId(0), &[1, 0]).unwrap();
        let mut m1 = seeded_memory(&ir, 3);
        let mut m2 = m1.clone();
        run_ir(&ir, &mut m1).unwrap();
        run_ir(&swapped, &mut m2).unwrap();
        assert!(compare(&ir, &m1, &m2, None).is_err());
    }

    #[test]
    fn out_of_bounds_is_reported() {
        let src = "void k(float A[4]) {\n  for (int i = 0; i < 4; i++)\n    A[i + 1] = 0;\n}\n";
        let f = parse_generated_function(src, "k").unwrap();
        let ir = parse_kernel("void k(float A[5]) {\n  for (int i = 0; i < 4; i++)\n    A[i + 1] = 0;\n}\n").unwrap();
        let mut m = seeded_memory(&ir, 1);
        m.arrays.get_mut("A").unwrap().dims = vec![4];
        assert!(run_function(&f, &mut m).is_err());
    }
}
