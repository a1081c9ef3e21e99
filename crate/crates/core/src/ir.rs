//! Intermediate representation of a restricted affine kernel.
//!
//! A kernel is a forest of constant-bound, unit-stride `for` loops whose
//! leaves are array assignments. Subscripts are affine in the enclosing
//! iterators. The representation is serializable so that it can be fed
//! back through `--ir-json` without going through the C parser.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::FrontendError;

/// Arithmetic operation kinds tracked by the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            OpKind::Add => "+",
            OpKind::Sub => "-",
            OpKind::Mul => "*",
            OpKind::Div => "/",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// C element types accepted for arrays and scalar parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Char,
    Short,
    Int,
    Long,
    Float,
    Double,
}

impl ScalarType {
    pub fn bits(self) -> u32 {
        match self {
            ScalarType::Char => 8,
            ScalarType::Short => 16,
            ScalarType::Int | ScalarType::Float => 32,
            ScalarType::Long | ScalarType::Double => 64,
        }
    }

    pub fn c_name(self) -> &'static str {
        match self {
            ScalarType::Char => "char",
            ScalarType::Short => "short",
            ScalarType::Int => "int",
            ScalarType::Long => "long",
            ScalarType::Float => "float",
            ScalarType::Double => "double",
        }
    }

    pub fn from_c_name(name: &str) -> Option<Self> {
        Some(match name {
            "char" => ScalarType::Char,
            "short" => ScalarType::Short,
            "int" => ScalarType::Int,
            "long" => ScalarType::Long,
            "float" => ScalarType::Float,
            "double" => ScalarType::Double,
            _ => return None,
        })
    }

    pub fn is_floating(self) -> bool {
        matches!(self, ScalarType::Float | ScalarType::Double)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Array {
    pub name: String,
    pub dims: Vec<u64>,
    pub ty: ScalarType,
}

impl Array {
    pub fn element_bits(&self) -> u32 {
        self.ty.bits()
    }

    pub fn elements(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.elements() * u64::from(self.element_bits() / 8)
    }
}

/// Read-only scalar kernel parameter (e.g. `alpha`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scalar {
    pub name: String,
    pub ty: ScalarType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoopId(pub usize);

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// A child of a loop body or of the kernel's top level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Loop(LoopId),
    Stmt(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Loop {
    pub id: LoopId,
    pub iterator: String,
    pub trip_count: u64,
    pub parent: Option<LoopId>,
    pub depth: usize,
    pub body: Vec<Item>,
}

/// `constant + sum(coeff * iterator)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffineExpr {
    #[serde(default)]
    pub terms: BTreeMap<String, i64>,
    #[serde(default)]
    pub constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr { terms: BTreeMap::new(), constant: c }
    }

    pub fn iterator(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(name.to_string(), 1);
        AffineExpr { terms, constant: 0 }
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(0) += v;
        }
        out.terms.retain(|_, v| *v != 0);
        out.constant += other.constant;
        out
    }

    pub fn scale(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        AffineExpr {
            terms: self.terms.iter().map(|(n, c)| (n.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// The iterator of a `it + c` subscript.
    pub fn simple_iterator(&self) -> Option<&str> {
        if self.terms.len() == 1 {
            let (name, coeff) = self.terms.iter().next().unwrap();
            if *coeff == 1 {
                return Some(name.as_str());
            }
        }
        None
    }

    /// At most one iterator, with coefficient +1.
    pub fn is_simple(&self) -> bool {
        self.terms.is_empty() || self.simple_iterator().is_some()
    }

    pub fn mentions(&self, iterator: &str) -> bool {
        self.terms.contains_key(iterator)
    }

    pub fn eval(&self, env: &dyn Fn(&str) -> i64) -> i64 {
        self.constant + self.terms.iter().map(|(n, c)| c * env(n)).sum::<i64>()
    }

    /// Range of the expression when each iterator spans `0..trip`.
    pub fn range(&self, trip: &dyn Fn(&str) -> Option<u64>) -> Option<(i64, i64)> {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for (name, c) in &self.terms {
            let t = trip(name)? as i64;
            let span = c * (t - 1);
            if span >= 0 {
                hi += span;
            } else {
                lo += span;
            }
        }
        Some((lo, hi))
    }

    pub fn rename(&self, map: &dyn Fn(&str) -> String) -> AffineExpr {
        AffineExpr {
            terms: self.terms.iter().map(|(n, c)| (map(n), *c)).collect(),
            constant: self.constant,
        }
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, c) in &self.terms {
            let (neg, mag) = (*c < 0, c.unsigned_abs());
            if first {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            if mag == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{mag} * {name}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayRef {
    pub array: String,
    pub subscripts: Vec<AffineExpr>,
}

impl fmt::Display for ArrayRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.array)?;
        for s in &self.subscripts {
            write!(f, "[{s}]")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineAccess {
    pub array: String,
    pub subscripts: Vec<AffineExpr>,
    pub mode: AccessMode,
}

impl AffineAccess {
    pub fn non_simple(&self) -> bool {
        self.subscripts.iter().any(|s| !s.is_simple())
    }

    pub fn is_write(&self) -> bool {
        self.mode == AccessMode::Write
    }
}

/// Right-hand side expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Ref(ArrayRef),
    Scalar(String),
    /// Numeric literal kept as written.
    Literal(String),
    Neg(Box<Expr>),
    Bin(OpKind, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn for_each_ref<'a>(&'a self, f: &mut dyn FnMut(&'a ArrayRef)) {
        match self {
            Expr::Ref(r) => f(r),
            Expr::Scalar(_) | Expr::Literal(_) => {}
            Expr::Neg(e) => e.for_each_ref(f),
            Expr::Bin(_, a, b) => {
                a.for_each_ref(f);
                b.for_each_ref(f);
            }
        }
    }

    fn count_ops(&self, out: &mut BTreeMap<OpKind, u32>) {
        match self {
            Expr::Bin(op, a, b) => {
                *out.entry(*op).or_insert(0) += 1;
                a.count_ops(out);
                b.count_ops(out);
            }
            Expr::Neg(e) => e.count_ops(out),
            _ => {}
        }
    }

    /// Renders the expression as C, mapping each array reference through `r`.
    pub fn render(&self, r: &dyn Fn(&ArrayRef) -> String) -> String {
        self.render_prec(r, 0)
    }

    fn render_prec(&self, r: &dyn Fn(&ArrayRef) -> String, parent: u8) -> String {
        match self {
            Expr::Ref(a) => r(a),
            Expr::Scalar(s) => s.clone(),
            Expr::Literal(l) => l.clone(),
            Expr::Neg(e) => format!("-{}", e.render_prec(r, 3)),
            Expr::Bin(op, a, b) => {
                let prec = match op {
                    OpKind::Add | OpKind::Sub => 1,
                    OpKind::Mul | OpKind::Div => 2,
                };
                // Left-associative: the right operand needs parentheses at equal precedence.
                let s = format!(
                    "{} {} {}",
                    a.render_prec(r, prec),
                    op.symbol(),
                    b.render_prec(r, prec + 1)
                );
                if prec < parent {
                    format!("({s})")
                } else {
                    s
                }
            }
        }
    }

    pub fn map_refs(&self, f: &dyn Fn(&ArrayRef) -> ArrayRef) -> Expr {
        match self {
            Expr::Ref(a) => Expr::Ref(f(a)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.map_refs(f))),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.map_refs(f)), Box::new(b.map_refs(f))),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignOp {
    Assign,
    AddAssign,
    SubAssign,
    MulAssign,
    DivAssign,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Assign => "=",
            AssignOp::AddAssign => "+=",
            AssignOp::SubAssign => "-=",
            AssignOp::MulAssign => "*=",
            AssignOp::DivAssign => "/=",
        }
    }

    pub fn compound_op(self) -> Option<OpKind> {
        match self {
            AssignOp::Assign => None,
            AssignOp::AddAssign => Some(OpKind::Add),
            AssignOp::SubAssign => Some(OpKind::Sub),
            AssignOp::MulAssign => Some(OpKind::Mul),
            AssignOp::DivAssign => Some(OpKind::Div),
        }
    }
}

/// The accumulated element is combined with `operand` through `op`
/// (`lhs = lhs op operand`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accumulation {
    pub op: OpKind,
    pub operand: Expr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub id: String,
    pub enclosing_loops: Vec<LoopId>,
    pub lhs: ArrayRef,
    pub op: AssignOp,
    pub rhs: Expr,
    pub ops: BTreeMap<OpKind, u32>,
    pub accesses: Vec<AffineAccess>,
    pub accumulation: Option<Accumulation>,
}

impl Statement {
    /// Builds a statement, deriving accesses, op counts and accumulation.
    pub fn new(id: String, enclosing_loops: Vec<LoopId>, lhs: ArrayRef, op: AssignOp, rhs: Expr) -> Self {
        let mut s = Statement {
            id,
            enclosing_loops,
            lhs,
            op,
            rhs,
            ops: BTreeMap::new(),
            accesses: Vec::new(),
            accumulation: None,
        };
        s.ops = op_census(&s);
        s.accumulation = detect_accumulation(&s);
        s.accesses = collect_accesses(&s);
        s
    }

    pub fn is_accumulation(&self) -> bool {
        self.accumulation.is_some()
    }

    pub fn write(&self) -> &AffineAccess {
        &self.accesses[0]
    }

    pub fn text(&self) -> String {
        format!("{} {} {}", self.lhs, self.op.symbol(), self.rhs.render(&|r| r.to_string()))
    }
}

/// Arithmetic operations per dynamic instance. A plain copy counts nothing.
pub fn op_census(stmt: &Statement) -> BTreeMap<OpKind, u32> {
    let mut out = BTreeMap::new();
    stmt.rhs.count_ops(&mut out);
    if let Some(op) = stmt.op.compound_op() {
        *out.entry(op).or_insert(0) += 1;
    }
    out
}

/// Detects `x op= e` and `x = x op e` / `x = e op x` (commutative ops only for the latter).
/// An operand that reads the accumulated array makes a recurrence, not a reduction.
pub fn detect_accumulation(stmt: &Statement) -> Option<Accumulation> {
    let acc = accumulation_form(stmt)?;
    let mut reads_target = false;
    acc.operand.for_each_ref(&mut |r| reads_target |= r.array == stmt.lhs.array);
    (!reads_target).then_some(acc)
}

fn accumulation_form(stmt: &Statement) -> Option<Accumulation> {
    match stmt.op {
        AssignOp::AddAssign | AssignOp::SubAssign | AssignOp::MulAssign => Some(Accumulation {
            op: stmt.op.compound_op().unwrap(),
            operand: stmt.rhs.clone(),
        }),
        AssignOp::DivAssign => None,
        AssignOp::Assign => match &stmt.rhs {
            Expr::Bin(op @ (OpKind::Add | OpKind::Sub | OpKind::Mul), a, b) => {
                let is_lhs = |e: &Expr| matches!(e, Expr::Ref(r) if *r == stmt.lhs);
                if is_lhs(a) {
                    Some(Accumulation { op: *op, operand: (**b).clone() })
                } else if is_lhs(b) && *op != OpKind::Sub {
                    Some(Accumulation { op: *op, operand: (**a).clone() })
                } else {
                    None
                }
            }
            _ => None,
        },
    }
}

fn collect_accesses(stmt: &Statement) -> Vec<AffineAccess> {
    let mut out = vec![AffineAccess {
        array: stmt.lhs.array.clone(),
        subscripts: stmt.lhs.subscripts.clone(),
        mode: AccessMode::Write,
    }];
    if stmt.op != AssignOp::Assign {
        out.push(AffineAccess {
            array: stmt.lhs.array.clone(),
            subscripts: stmt.lhs.subscripts.clone(),
            mode: AccessMode::Read,
        });
    }
    stmt.rhs.for_each_ref(&mut |r| {
        out.push(AffineAccess {
            array: r.array.clone(),
            subscripts: r.subscripts.clone(),
            mode: AccessMode::Read,
        })
    });
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelIr {
    pub name: String,
    pub scalars: Vec<Scalar>,
    pub arrays: Vec<Array>,
    pub loops: Vec<Loop>,
    pub statements: Vec<Statement>,
    pub top: Vec<Item>,
}

impl KernelIr {
    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn array_index(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn loop_(&self, id: LoopId) -> &Loop {
        &self.loops[id.0]
    }

    pub fn statement(&self, id: &str) -> Option<&Statement> {
        self.statements.iter().find(|s| s.id == id)
    }

    pub fn statement_index(&self, id: &str) -> Option<usize> {
        self.statements.iter().position(|s| s.id == id)
    }

    /// Trip count of the enclosing loop with the given iterator.
    pub fn trip_of(&self, stmt: &Statement, iterator: &str) -> Option<u64> {
        stmt.enclosing_loops
            .iter()
            .map(|l| self.loop_(*l))
            .find(|l| l.iterator == iterator)
            .map(|l| l.trip_count)
    }

    /// Number of dynamic instances of a statement.
    pub fn instances(&self, stmt: &Statement) -> u64 {
        stmt.enclosing_loops.iter().map(|l| self.loop_(*l).trip_count).product()
    }

    pub fn total_iterations(&self) -> u64 {
        self.statements.iter().map(|s| self.instances(s)).sum()
    }

    /// Checks every structural invariant. Used for JSON input, which bypasses the parser.
    pub fn validate(&self) -> Result<(), FrontendError> {
        let invalid = |msg: String| Err(FrontendError::Invalid(msg));
        let mut names = BTreeSet::new();
        for a in &self.arrays {
            if !names.insert(a.name.as_str()) {
                return invalid(format!("duplicate array `{}`", a.name));
            }
            if a.dims.is_empty() || a.dims.contains(&0) {
                return invalid(format!("array `{}` needs positive dimensions", a.name));
            }
        }
        for s in &self.scalars {
            if !names.insert(s.name.as_str()) {
                return invalid(format!("duplicate parameter `{}`", s.name));
            }
        }
        for (i, l) in self.loops.iter().enumerate() {
            if l.id.0 != i {
                return invalid(format!("loop id {} stored at position {i}", l.id));
            }
            if l.trip_count == 0 {
                return invalid(format!("loop {} has zero trip count", l.id));
            }
            let expected_depth = match l.parent {
                None => 0,
                Some(p) => {
                    if p.0 >= i {
                        return invalid(format!("loop {} has a parent that does not precede it", l.id));
                    }
                    if !self.loop_(p).body.contains(&Item::Loop(l.id)) {
                        return invalid(format!("loop {} missing from its parent's body", l.id));
                    }
                    self.loop_(p).depth + 1
                }
            };
            if l.depth != expected_depth {
                return invalid(format!("loop {} has inconsistent depth", l.id));
            }
        }
        for (si, s) in self.statements.iter().enumerate() {
            // enclosing loops must be a root-to-leaf path
            let mut parent = None;
            for l in &s.enclosing_loops {
                if l.0 >= self.loops.len() || self.loop_(*l).parent != parent {
                    return invalid(format!("statement {} has a broken loop path", s.id));
                }
                parent = Some(*l);
            }
            let container = match s.enclosing_loops.last() {
                Some(l) => &self.loop_(*l).body,
                None => &self.top,
            };
            if !container.contains(&Item::Stmt(si)) {
                return invalid(format!("statement {} is not placed in its innermost loop", s.id));
            }
            let iters: Vec<&str> = s.enclosing_loops.iter().map(|l| self.loop_(*l).iterator.as_str()).collect();
            let unique: BTreeSet<_> = iters.iter().collect();
            if unique.len() != iters.len() {
                return invalid(format!("statement {} is enclosed by two loops with the same iterator", s.id));
            }
            if s.accesses.iter().filter(|a| a.is_write()).count() != 1 {
                return invalid(format!("statement {} must have exactly one write", s.id));
            }
            for acc in &s.accesses {
                let Some(arr) = self.array(&acc.array) else {
                    return invalid(format!("statement {} references unknown array `{}`", s.id, acc.array));
                };
                if arr.dims.len() != acc.subscripts.len() {
                    return invalid(format!("statement {} indexes `{}` with the wrong rank", s.id, acc.array));
                }
                for (d, sub) in acc.subscripts.iter().enumerate() {
                    for it in sub.terms.keys() {
                        if !iters.contains(&it.as_str()) {
                            return invalid(format!(
                                "statement {} subscript uses `{it}` which is not an enclosing iterator",
                                s.id
                            ));
                        }
                    }
                    let (lo, hi) = sub.range(&|n| self.trip_of(s, n)).unwrap();
                    if lo < 0 || hi >= arr.dims[d] as i64 {
                        return invalid(format!(
                            "statement {} accesses `{}` out of bounds in dimension {d} ({lo}..={hi})",
                            s.id, acc.array
                        ));
                    }
                }
            }
            let mut bad = None;
            let mut check_scalar = |e: &Expr| {
                if let Expr::Scalar(n) = e {
                    if !self.scalars.iter().any(|p| &p.name == n) {
                        bad = Some(n.clone());
                    }
                }
            };
            visit_expr(&s.rhs, &mut check_scalar);
            if let Some(n) = bad {
                return invalid(format!("statement {} uses unknown scalar `{n}`", s.id));
            }
        }
        Ok(())
    }

    /// Emits the kernel back as C in the accepted input grammar.
    pub fn to_c(&self) -> String {
        self.to_c_named(&self.name)
    }

    pub fn to_c_named(&self, fn_name: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("void {}({})\n{{\n", fn_name, self.c_params("")));
        for item in &self.top {
            self.unparse_item(*item, 1, &mut out);
        }
        out.push_str("}\n");
        out
    }

    /// Parameter list; arrays get `suffix` appended to their names.
    pub fn c_params(&self, suffix: &str) -> String {
        let mut params: Vec<String> = self
            .scalars
            .iter()
            .map(|s| format!("{} {}", s.ty.c_name(), s.name))
            .collect();
        for a in &self.arrays {
            let dims: String = a.dims.iter().map(|d| format!("[{d}]")).collect();
            params.push(format!("{} {}{}{}", a.ty.c_name(), a.name, suffix, dims));
        }
        params.join(", ")
    }

    fn unparse_item(&self, item: Item, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match item {
            Item::Stmt(s) => {
                out.push_str(&format!("{pad}{};\n", self.statements[s].text()));
            }
            Item::Loop(l) => {
                let lp = self.loop_(l);
                let it = &lp.iterator;
                out.push_str(&format!(
                    "{pad}for (int {it} = 0; {it} < {}; {it}++) {{\n",
                    lp.trip_count
                ));
                for child in &lp.body {
                    self.unparse_item(*child, indent + 1, out);
                }
                out.push_str(&format!("{pad}}}\n"));
            }
        }
    }
}

pub fn visit_expr(e: &Expr, f: &mut dyn FnMut(&Expr)) {
    f(e);
    match e {
        Expr::Neg(x) => visit_expr(x, f),
        Expr::Bin(_, a, b) => {
            visit_expr(a, f);
            visit_expr(b, f);
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(array: &str, its: &[&str]) -> ArrayRef {
        ArrayRef {
            array: array.into(),
            subscripts: its.iter().map(|i| AffineExpr::iterator(i)).collect(),
        }
    }

    fn stmt(lhs: ArrayRef, op: AssignOp, rhs: Expr) -> Statement {
        Statement::new("S0".into(), vec![], lhs, op, rhs)
    }

    fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Bin(OpKind::Mul, Box::new(a), Box::new(b))
    }

    #[test]
    fn census_of_gemm_statements() {
        let s1 = stmt(
            r("C", &["i", "j"]),
            AssignOp::AddAssign,
            mul(mul(Expr::Scalar("alpha".into()), Expr::Ref(r("A", &["i", "k"]))), Expr::Ref(r("B", &["k", "j"]))),
        );
        assert_eq!(s1.ops, BTreeMap::from([(OpKind::Mul, 2), (OpKind::Add, 1)]));
        assert!(s1.is_accumulation());

        let s0 = stmt(r("C", &["i", "j"]), AssignOp::MulAssign, Expr::Scalar("beta".into()));
        assert_eq!(s0.ops, BTreeMap::from([(OpKind::Mul, 1)]));
        assert_eq!(s0.accumulation.as_ref().unwrap().op, OpKind::Mul);

        let copy = stmt(r("C", &["i", "j"]), AssignOp::Assign, Expr::Ref(r("A", &["i", "j"])));
        assert!(copy.ops.is_empty());
        assert!(!copy.is_accumulation());
    }

    #[test]
    fn non_accumulating_assignment() {
        let s = stmt(
            r("C", &["i", "j"]),
            AssignOp::Assign,
            Expr::Bin(OpKind::Add, Box::new(Expr::Ref(r("A", &["i", "k"]))), Box::new(Expr::Ref(r("B", &["k", "j"])))),
        );
        assert!(!s.is_accumulation());
        let explicit = stmt(
            r("C", &["i"]),
            AssignOp::Assign,
            Expr::Bin(OpKind::Add, Box::new(Expr::Ref(r("C", &["i"]))), Box::new(Expr::Ref(r("x", &["i"])))),
        );
        assert_eq!(explicit.accumulation.unwrap().op, OpKind::Add);
        // the operand reads the target again: a recurrence, not a reduction
        let rec = stmt(r("x", &["i"]), AssignOp::AddAssign, mul(Expr::Ref(r("x", &["i"])), Expr::Ref(r("a", &["i", "k"]))));
        assert!(!rec.is_accumulation());
        assert_eq!(rec.ops, BTreeMap::from([(OpKind::Mul, 1), (OpKind::Add, 1)]));
    }

    #[test]
    fn affine_display_and_range() {
        let e = AffineExpr::iterator("h").add(&AffineExpr::iterator("p")).add(&AffineExpr::constant(-1));
        assert_eq!(e.to_string(), "h + p - 1");
        assert!(!e.is_simple());
        let range = e.range(&|n| Some(if n == "h" { 10 } else { 3 })).unwrap();
        assert_eq!(range, (-1, 10));
        assert_eq!(AffineExpr::constant(3).to_string(), "3");
        assert_eq!(AffineExpr::iterator("i").scale(-2).to_string(), "-2 * i");
    }

    #[test]
    fn render_keeps_precedence() {
        let e = mul(
            Expr::Bin(OpKind::Add, Box::new(Expr::Scalar("a".into())), Box::new(Expr::Scalar("b".into()))),
            Expr::Scalar("c".into()),
        );
        assert_eq!(e.render(&|r| r.to_string()), "(a + b) * c");
        let e = Expr::Bin(
            OpKind::Sub,
            Box::new(Expr::Scalar("a".into())),
            Box::new(Expr::Bin(OpKind::Sub, Box::new(Expr::Scalar("b".into())), Box::new(Expr::Scalar("c".into())))),
        );
        assert_eq!(e.render(&|r| r.to_string()), "a - (b - c)");
    }
}
