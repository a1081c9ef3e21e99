//! Parser for the restricted affine C subset.
//!
//! The grammar: one kernel function whose parameters are scalars and
//! fixed-size arrays, and whose body is a nest of
//! `for (int it = 0; it < CONST; it++)` loops around assignments
//! (`=`, `+=`, `-=`, `*=`, `/=`) of arithmetic expressions over array
//! references, scalar parameters and literals. `#pragma` lines are tolerated.
//!
//! The same lexer and concrete syntax tree serve a permissive mode used to
//! read back generated designs (index aliases, local temporaries and
//! transfer calls are accepted there).

use std::collections::{BTreeMap, HashMap};

use crate::error::FrontendError;
use crate::ir::{AffineExpr, ArrayRef, Array, AssignOp, Expr, Item, KernelIr, Loop, LoopId, OpKind, Scalar, ScalarType, Statement};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Punct(&'static str),
    Pragma(String),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCTS: [&str; 35] = [
    "++", "--", "+=", "-=", "*=", "/=", "%=", "<=", ">=", "==", "!=", "&&", "||", "->", "<<", ">>", "(", ")", "{",
    "}", "[", "]", ";", ",", "=", "<", ">", "+", "-", "*", "/", "%", "&", "?", ":",
];

fn lex(src: &str, strict: bool) -> Result<Vec<Token>, FrontendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut at_line_start = true;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            at_line_start = true;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(FrontendError::Syntax { line: sl, column: sc, message: "unterminated comment".into() });
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        if c == '#' && at_line_start {
            let start = i;
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let body = text.trim_start_matches('#').trim();
            if let Some(p) = body.strip_prefix("pragma") {
                out.push(Token { tok: Tok::Pragma(p.trim().to_string()), line, col });
            } else if strict && !body.starts_with("include") {
                return Err(FrontendError::Unsupported {
                    line,
                    column: col,
                    construct: "preprocessor directive".into(),
                    rule: "kernel: no preprocessor beyond #include and #pragma",
                });
            }
            continue;
        }
        at_line_start = false;
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: tl, col: tc });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric()
                    || chars[i] == '.'
                    || ((chars[i] == '-' || chars[i] == '+') && matches!(chars[i - 1], 'e' | 'E')))
            {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Number(chars[start..i].iter().collect()), line: tl, col: tc });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
            return Err(FrontendError::Syntax { line, column: col, message: format!("unexpected character `{c}`") });
        };
        i += p.len();
        col += p.len();
        out.push(Token { tok: Tok::Punct(p), line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

/// Expression as written, before affine/arith classification.
#[derive(Clone, Debug, PartialEq)]
pub enum CExpr {
    Num(String),
    Ident(String),
    Index(String, Vec<CExpr>),
    Bin(char, Box<CExpr>, Box<CExpr>),
    Neg(Box<CExpr>),
    Call(String, Vec<CExpr>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CStmt {
    For {
        iterator: String,
        trip: u64,
        pragmas: Vec<String>,
        body: Vec<CStmt>,
        line: usize,
    },
    Assign {
        target: CExpr,
        op: AssignOp,
        value: CExpr,
        /// Set by a preceding `#pragma tileforge stmt <id>`.
        tag: Option<String>,
        line: usize,
        column: usize,
    },
    Decl {
        ty: String,
        name: String,
        dims: Vec<u64>,
        init: Option<CExpr>,
        line: usize,
    },
    Block(Vec<CStmt>),
    Call { name: String, args: Vec<CExpr>, line: usize },
    Pragma(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CParam {
    pub ty: ScalarType,
    pub name: String,
    pub dims: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CFunction {
    pub name: String,
    pub params: Vec<CParam>,
    pub body: Vec<CStmt>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    strict: bool,
}

type PResult<T> = Result<T, FrontendError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> PResult<T> {
        let (line, column) = self.here();
        Err(FrontendError::Syntax { line, column, message: message.into() })
    }

    fn unsupported<T>(&self, construct: &str, rule: &'static str) -> PResult<T> {
        let (line, column) = self.here();
        Err(FrontendError::Unsupported { line, column, construct: construct.into(), rule })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(q) if q == s)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.syntax(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn expect_ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.syntax(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn expect_uint(&mut self) -> PResult<u64> {
        match self.peek().clone() {
            Tok::Number(n) => match n.parse::<u64>() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.syntax(format!("expected integer constant, found `{n}`")),
            },
            other => self.syntax(format!("expected integer constant, found {}", describe(&other))),
        }
    }

    fn skip_pragmas(&mut self) {
        while matches!(self.peek(), Tok::Pragma(_)) {
            self.bump();
        }
    }

    /// `[const] [unsigned] type`
    fn parse_type(&mut self) -> PResult<Option<String>> {
        let save = self.pos;
        while self.is_ident("const") || self.is_ident("unsigned") || self.is_ident("signed") || self.is_ident("static") {
            self.bump();
        }
        if let Tok::Ident(name) = self.peek().clone() {
            if ScalarType::from_c_name(&name).is_some() || name == "void" {
                self.bump();
                return Ok(Some(name));
            }
        }
        self.pos = save;
        Ok(None)
    }

    fn parse_dims(&mut self) -> PResult<Vec<u64>> {
        let mut dims = Vec::new();
        while self.eat_punct("[") {
            if let Tok::Ident(_) = self.peek() {
                return self.unsupported("symbolic array extent", "arrays: constant extents");
            }
            dims.push(self.expect_uint()?);
            self.expect_punct("]")?;
        }
        Ok(dims)
    }

    fn parse_function(&mut self) -> PResult<CFunction> {
        self.skip_pragmas();
        if self.parse_type()?.is_none() {
            return self.syntax("expected a function definition");
        }
        let name = self.expect_ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if self.is_ident("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        while !self.is_punct(")") {
            let Some(ty) = self.parse_type()? else {
                return self.syntax(format!("expected parameter type, found {}", describe(self.peek())));
            };
            if self.is_punct("*") {
                return self.unsupported("pointer arithmetic", "parameters: scalars and fixed-size arrays");
            }
            let pname = self.expect_ident()?;
            let dims = self.parse_dims()?;
            let ty = match ScalarType::from_c_name(&ty) {
                Some(t) => t,
                None => return self.syntax("void parameter"),
            };
            params.push(CParam { ty, name: pname, dims });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let body = self.parse_block_items()?;
        self.expect_punct("}")?;
        Ok(CFunction { name, params, body })
    }

    fn parse_block_items(&mut self) -> PResult<Vec<CStmt>> {
        let mut items = Vec::new();
        let mut tag = None;
        while !self.is_punct("}") && *self.peek() != Tok::Eof {
            if let Tok::Pragma(p) = self.peek().clone() {
                self.bump();
                if let Some(id) = p.strip_prefix("tileforge stmt") {
                    tag = Some(id.trim().to_string());
                } else if !self.strict {
                    items.push(CStmt::Pragma(p));
                }
                continue;
            }
            let mut stmt = self.parse_stmt()?;
            if let CStmt::Assign { tag: t, .. } = &mut stmt {
                *t = tag.take();
            }
            items.push(stmt);
        }
        Ok(items)
    }

    fn parse_stmt(&mut self) -> PResult<CStmt> {
        let (line, column) = self.here();
        match self.peek().clone() {
            Tok::Punct("{") => {
                self.bump();
                let items = self.parse_block_items()?;
                self.expect_punct("}")?;
                Ok(CStmt::Block(items))
            }
            Tok::Punct(";") => {
                self.bump();
                Ok(CStmt::Block(vec![]))
            }
            Tok::Ident(k) if k == "for" => self.parse_for(),
            Tok::Ident(k) if k == "if" || k == "else" || k == "switch" => {
                self.unsupported("conditional", "bodies: no conditionals")
            }
            Tok::Ident(k) if k == "while" || k == "do" => self.unsupported("while loop", "loops: for only"),
            Tok::Ident(k) if k == "return" || k == "break" || k == "continue" || k == "goto" => {
                self.unsupported("control transfer", "bodies: assignments and loops only")
            }
            Tok::Ident(_) => {
                if let Some(ty) = self.parse_type()? {
                    return self.parse_decl(ty, line);
                }
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    let name = self.expect_ident()?;
                    if self.strict {
                        self.pos -= 1;
                        return self.unsupported("function call", "bodies: no calls");
                    }
                    let args = self.parse_call_args()?;
                    self.expect_punct(";")?;
                    return Ok(CStmt::Call { name, args, line });
                }
                let target = self.parse_postfix()?;
                let op = match self.bump() {
                    Tok::Punct("=") => AssignOp::Assign,
                    Tok::Punct("+=") => AssignOp::AddAssign,
                    Tok::Punct("-=") => AssignOp::SubAssign,
                    Tok::Punct("*=") => AssignOp::MulAssign,
                    Tok::Punct("/=") => AssignOp::DivAssign,
                    Tok::Punct("++") | Tok::Punct("--") => {
                        self.pos -= 1;
                        return self.unsupported("increment statement", "bodies: assignments only");
                    }
                    other => {
                        self.pos -= 1;
                        return self.syntax(format!("expected assignment operator, found {}", describe(&other)));
                    }
                };
                let value = self.parse_expr()?;
                if self.is_punct("?") {
                    return self.unsupported("conditional", "bodies: no conditionals");
                }
                self.expect_punct(";")?;
                Ok(CStmt::Assign { target, op, value, tag: None, line, column })
            }
            Tok::Punct("*") | Tok::Punct("&") => self.unsupported("pointer arithmetic", "bodies: array references only"),
            other => self.syntax(format!("expected statement, found {}", describe(&other))),
        }
    }

    fn parse_decl(&mut self, ty: String, line: usize) -> PResult<CStmt> {
        let mut decls = Vec::new();
        loop {
            let name = self.expect_ident()?;
            let dims = self.parse_dims()?;
            let init = if self.eat_punct("=") { Some(self.parse_expr()?) } else { None };
            if self.strict && (ty != "int" || !dims.is_empty() || init.is_some()) {
                return self.unsupported("local variable", "kernel: locals limited to loop iterator declarations");
            }
            decls.push(CStmt::Decl { ty: ty.clone(), name, dims, init, line });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(if decls.len() == 1 { decls.pop().unwrap() } else { CStmt::Block(decls) })
    }

    fn parse_for(&mut self) -> PResult<CStmt> {
        let line = self.here().0;
        self.bump();
        self.expect_punct("(")?;
        if self.is_ident("int") || self.is_ident("long") || self.is_ident("unsigned") {
            self.parse_type()?;
        }
        let it = self.expect_ident()?;
        self.expect_punct("=")?;
        match self.peek().clone() {
            Tok::Number(n) if n == "0" => {
                self.bump();
            }
            Tok::Number(_) => return self.unsupported("non-zero lower bound", "loops: 0-based constant bounds"),
            _ => return self.unsupported("non-constant lower bound", "loops: 0-based constant bounds"),
        }
        self.expect_punct(";")?;
        let var = self.expect_ident()?;
        if var != it {
            return self.unsupported("loop condition on another variable", "loops: `it < CONST`");
        }
        let inclusive = match self.bump() {
            Tok::Punct("<") => false,
            Tok::Punct("<=") => true,
            _ => {
                self.pos -= 1;
                return self.unsupported("loop condition", "loops: `it < CONST`");
            }
        };
        let bound = match (self.peek().clone(), self.peek_at(1).clone()) {
            (Tok::Number(n), Tok::Punct(";")) => match n.parse::<u64>() {
                Ok(v) => {
                    self.bump();
                    v
                }
                Err(_) => return self.syntax(format!("bad loop bound `{n}`")),
            },
            _ => return self.unsupported("non-constant bound", "loops: 0-based constant bounds"),
        };
        let trip = if inclusive { bound + 1 } else { bound };
        self.expect_punct(";")?;
        let unit = match self.peek().clone() {
            Tok::Punct("++") => {
                self.bump();
                self.expect_ident()? == it
            }
            Tok::Ident(v) if v == it => {
                self.bump();
                match self.bump() {
                    Tok::Punct("++") => true,
                    Tok::Punct("+=") => matches!(self.bump(), Tok::Number(n) if n == "1"),
                    Tok::Punct("=") => {
                        let a = self.bump();
                        let p = self.bump();
                        let b = self.bump();
                        a == Tok::Ident(it.clone()) && p == Tok::Punct("+") && b == Tok::Number("1".into())
                    }
                    _ => false,
                }
            }
            _ => false,
        };
        if !unit {
            return self.unsupported("non-unit stride", "loops: unit stride");
        }
        self.expect_punct(")")?;
        let mut pragmas = Vec::new();
        while let Tok::Pragma(p) = self.peek().clone() {
            self.bump();
            pragmas.push(p);
        }
        let body = match self.parse_stmt()? {
            CStmt::Block(items) => items,
            single => vec![single],
        };
        // pragmas at the head of the loop body belong to the loop
        let mut body = body;
        while let Some(CStmt::Pragma(p)) = body.first() {
            if p.starts_with("tileforge") || p.contains("array_partition") {
                break;
            }
            pragmas.push(p.clone());
            body.remove(0);
        }
        if trip == 0 {
            return self.syntax("loop with zero trip count");
        }
        Ok(CStmt::For { iterator: it, trip, pragmas, body, line })
    }

    fn parse_call_args(&mut self) -> PResult<Vec<CExpr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        while !self.is_punct(")") {
            args.push(self.parse_expr()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn parse_expr(&mut self) -> PResult<CExpr> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = if self.is_punct("+") {
                '+'
            } else if self.is_punct("-") {
                '-'
            } else {
                break;
            };
            self.bump();
            let rhs = self.parse_term()?;
            lhs = CExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> PResult<CExpr> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = if self.is_punct("*") {
                '*'
            } else if self.is_punct("/") {
                '/'
            } else if self.is_punct("%") {
                '%'
            } else {
                break;
            };
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = CExpr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> PResult<CExpr> {
        if self.eat_punct("-") {
            return Ok(CExpr::Neg(Box::new(self.parse_unary()?)));
        }
        if self.eat_punct("+") {
            return self.parse_unary();
        }
        if self.is_punct("*") || self.is_punct("&") {
            return self.unsupported("pointer arithmetic", "expressions: array references only");
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> PResult<CExpr> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(CExpr::Num(n))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.is_punct("(") {
                    if self.strict {
                        self.pos -= 1;
                        return self.unsupported("function call", "expressions: no calls");
                    }
                    let args = self.parse_call_args()?;
                    return Ok(CExpr::Call(name, args));
                }
                if self.is_punct("->") || self.is_punct(".") {
                    return self.unsupported("pointer arithmetic", "expressions: array references only");
                }
                let mut subs = Vec::new();
                while self.eat_punct("[") {
                    subs.push(self.parse_expr()?);
                    self.expect_punct("]")?;
                }
                if subs.is_empty() {
                    Ok(CExpr::Ident(name))
                } else {
                    Ok(CExpr::Index(name, subs))
                }
            }
            other => self.syntax(format!("expected expression, found {}", describe(&other))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(s) => format!("`{s}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Pragma(_) => "pragma".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a file that must contain exactly one function in the strict grammar.
fn parse_single_function(src: &str) -> PResult<CFunction> {
    let toks = lex(src, true)?;
    let mut p = Parser { toks, pos: 0, strict: true };
    let f = p.parse_function()?;
    p.skip_pragmas();
    if *p.peek() != Tok::Eof {
        return p.syntax("expected end of input after the kernel function (one kernel per file)");
    }
    Ok(f)
}

/// Parses the function `name` out of a generated translation unit, skipping
/// every other top-level definition.
pub fn parse_generated_function(src: &str, name: &str) -> PResult<CFunction> {
    let toks = lex(src, false)?;
    let mut start = None;
    let mut depth = 0i32;
    for (i, t) in toks.iter().enumerate() {
        match &t.tok {
            Tok::Punct("{") => depth += 1,
            Tok::Punct("}") => depth -= 1,
            Tok::Ident(s) if depth == 0 && s == name && matches!(toks.get(i + 1).map(|t| &t.tok), Some(Tok::Punct("("))) => {
                // back up to the return type
                start = Some(i.saturating_sub(1));
                break;
            }
            _ => {}
        }
    }
    let Some(start) = start else {
        return Err(FrontendError::Syntax { line: 1, column: 1, message: format!("function `{name}` not found") });
    };
    let mut p = Parser { toks, pos: start, strict: false };
    p.parse_function()
}

/// Parses kernel source into a validated [`KernelIr`].
pub fn parse_kernel(source: &str) -> Result<KernelIr, FrontendError> {
    let f = parse_single_function(source)?;
    lower(&f)
}

struct Lowering<'a> {
    f: &'a CFunction,
    loops: Vec<Loop>,
    statements: Vec<Statement>,
    stack: Vec<LoopId>,
}

impl Lowering<'_> {
    fn is_scalar(&self, name: &str) -> bool {
        self.f.params.iter().any(|p| p.name == name && p.dims.is_empty())
    }

    fn array_rank(&self, name: &str) -> Option<usize> {
        self.f.params.iter().find(|p| p.name == name && !p.dims.is_empty()).map(|p| p.dims.len())
    }

    fn iterators(&self) -> Vec<&str> {
        self.stack.iter().map(|l| self.loops[l.0].iterator.as_str()).collect()
    }

    fn items(&mut self, body: &[CStmt]) -> PResult<Vec<Item>> {
        let mut out = Vec::new();
        for s in body {
            match s {
                CStmt::Block(inner) => out.extend(self.items(inner)?),
                CStmt::Decl { .. } | CStmt::Pragma(_) => {}
                CStmt::Call { line, .. } => return Err(unsupported_at(*line, 1, "function call", "bodies: no calls")),
                CStmt::For { iterator, trip, body, line, .. } => {
                    if self.iterators().contains(&iterator.as_str()) {
                        return Err(unsupported_at(*line, 1, "shadowed loop iterator", "loops: distinct iterators per nest"));
                    }
                    if self.is_scalar(iterator) || self.array_rank(iterator).is_some() {
                        return Err(unsupported_at(*line, 1, "iterator shadows a parameter", "loops: fresh iterators"));
                    }
                    let id = LoopId(self.loops.len());
                    self.loops.push(Loop {
                        id,
                        iterator: iterator.clone(),
                        trip_count: *trip,
                        parent: self.stack.last().copied(),
                        depth: self.stack.len(),
                        body: Vec::new(),
                    });
                    self.stack.push(id);
                    let children = self.items(body)?;
                    self.stack.pop();
                    self.loops[id.0].body = children;
                    out.push(Item::Loop(id));
                }
                CStmt::Assign { target, op, value, line, column, .. } => {
                    let lhs = match target {
                        CExpr::Index(name, subs) => self.array_ref(name, subs, *line, *column)?,
                        _ => {
                            return Err(unsupported_at(*line, *column, "scalar assignment", "bodies: assignments to array elements"))
                        }
                    };
                    let rhs = self.arith(value, *line, *column)?;
                    let id = format!("S{}", self.statements.len());
                    let idx = self.statements.len();
                    self.statements.push(Statement::new(id, self.stack.clone(), lhs, *op, rhs));
                    out.push(Item::Stmt(idx));
                }
            }
        }
        Ok(out)
    }

    fn array_ref(&self, name: &str, subs: &[CExpr], line: usize, col: usize) -> PResult<ArrayRef> {
        let Some(rank) = self.array_rank(name) else {
            return Err(FrontendError::Syntax { line, column: col, message: format!("`{name}` is not an array parameter") });
        };
        if rank != subs.len() {
            return Err(FrontendError::Syntax {
                line,
                column: col,
                message: format!("`{name}` has rank {rank} but is indexed with {} subscripts", subs.len()),
            });
        }
        let iters = self.iterators();
        let env = |n: &str| -> Option<AffineExpr> { iters.contains(&n).then(|| AffineExpr::iterator(n)) };
        let subscripts = subs
            .iter()
            .map(|s| to_affine(s, &env).ok_or_else(|| unsupported_at(line, col, "non-affine subscript", "subscripts: affine in enclosing iterators")))
            .collect::<PResult<Vec<_>>>()?;
        Ok(ArrayRef { array: name.to_string(), subscripts })
    }

    fn arith(&self, e: &CExpr, line: usize, col: usize) -> PResult<Expr> {
        Ok(match e {
            CExpr::Num(n) => Expr::Literal(n.clone()),
            CExpr::Ident(n) => {
                if self.is_scalar(n) {
                    Expr::Scalar(n.clone())
                } else if self.iterators().contains(&n.as_str()) {
                    return Err(unsupported_at(line, col, "iterator used as a value", "expressions: arrays, scalars, literals"));
                } else {
                    return Err(FrontendError::Syntax { line, column: col, message: format!("unknown identifier `{n}`") });
                }
            }
            CExpr::Index(n, subs) => Expr::Ref(self.array_ref(n, subs, line, col)?),
            CExpr::Neg(x) => Expr::Neg(Box::new(self.arith(x, line, col)?)),
            CExpr::Bin(op, a, b) => {
                let kind = match op {
                    '+' => OpKind::Add,
                    '-' => OpKind::Sub,
                    '*' => OpKind::Mul,
                    '/' => OpKind::Div,
                    _ => return Err(unsupported_at(line, col, "modulo operator", "expressions: + - * /")),
                };
                Expr::Bin(kind, Box::new(self.arith(a, line, col)?), Box::new(self.arith(b, line, col)?))
            }
            CExpr::Call(..) => return Err(unsupported_at(line, col, "function call", "expressions: no calls")),
        })
    }
}

fn unsupported_at(line: usize, column: usize, construct: &str, rule: &'static str) -> FrontendError {
    FrontendError::Unsupported { line, column, construct: construct.into(), rule }
}

/// Converts an expression to affine form. `env` resolves identifiers
/// (iterators or index aliases).
pub fn to_affine(e: &CExpr, env: &dyn Fn(&str) -> Option<AffineExpr>) -> Option<AffineExpr> {
    match e {
        CExpr::Num(n) => n.parse::<i64>().ok().map(AffineExpr::constant),
        CExpr::Ident(n) => env(n),
        CExpr::Neg(x) => to_affine(x, env).map(|a| a.scale(-1)),
        CExpr::Bin(op, a, b) => {
            let (a, b) = (to_affine(a, env)?, to_affine(b, env)?);
            match op {
                '+' => Some(a.add(&b)),
                '-' => Some(a.add(&b.scale(-1))),
                '*' if a.is_constant() => Some(b.scale(a.constant)),
                '*' if b.is_constant() => Some(a.scale(b.constant)),
                _ => None,
            }
        }
        _ => None,
    }
}

fn lower(f: &CFunction) -> PResult<KernelIr> {
    let mut scalars = Vec::new();
    let mut arrays = Vec::new();
    for p in &f.params {
        if p.dims.is_empty() {
            scalars.push(Scalar { name: p.name.clone(), ty: p.ty });
        } else {
            arrays.push(Array { name: p.name.clone(), dims: p.dims.clone(), ty: p.ty });
        }
    }
    let mut lw = Lowering { f, loops: Vec::new(), statements: Vec::new(), stack: Vec::new() };
    let top = lw.items(&f.body)?;
    let ir = KernelIr { name: f.name.clone(), scalars, arrays, loops: lw.loops, statements: lw.statements, top };
    ir.validate()?;
    Ok(ir)
}

/// Reads a kernel from its JSON form and validates it.
pub fn kernel_from_json(text: &str) -> Result<KernelIr, FrontendError> {
    let mut ir: KernelIr = serde_json::from_str(text).map_err(|e| FrontendError::Invalid(e.to_string()))?;
    // derived fields are recomputed so that hand-written JSON may omit nothing but cannot lie
    for s in &mut ir.statements {
        *s = Statement::new(s.id.clone(), s.enclosing_loops.clone(), s.lhs.clone(), s.op, s.rhs.clone());
    }
    ir.validate()?;
    Ok(ir)
}

/// Renames iterators to a canonical `t<depth>` scheme per statement path;
/// two kernels that differ only in iterator names compare equal afterwards.
pub fn alpha_normalize(ir: &KernelIr) -> KernelIr {
    let mut out = ir.clone();
    let names: HashMap<usize, String> = ir.loops.iter().map(|l| (l.id.0, format!("t{}", l.depth))).collect();
    for l in &mut out.loops {
        l.iterator = names[&l.id.0].clone();
    }
    for s in &mut out.statements {
        let map: BTreeMap<String, String> = s
            .enclosing_loops
            .iter()
            .map(|l| (ir.loop_(*l).iterator.clone(), names[&l.0].clone()))
            .collect();
        let rn = |r: &ArrayRef| ArrayRef {
            array: r.array.clone(),
            subscripts: r.subscripts.iter().map(|e| e.rename(&|n| map[n].clone())).collect(),
        };
        *s = Statement::new(s.id.clone(), s.enclosing_loops.clone(), rn(&s.lhs), s.op, s.rhs.map_refs(&rn));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const GEMM: &str = r#"
void kernel_gemm(float alpha, float beta, float C[200][220], float A[200][240], float B[240][220]) {
  int i, j, k;
  for (i = 0; i < 200; i++) { // L0
    for (j = 0; j < 220; j++) // L1
      C[i][j] *= beta; // S0
    for (k = 0; k < 240; k++) // L2
      for (j = 0; j < 220; j++) // L3
        C[i][j] += alpha * A[i][k] * B[k][j]; // S1
  }
}
"#;

    #[test]
    fn parses_gemm() {
        let ir = parse_kernel(GEMM).unwrap();
        assert_eq!(ir.statements.len(), 2);
        let trips: Vec<_> = ir.loops.iter().map(|l| l.trip_count).collect();
        assert_eq!(trips, vec![200, 220, 240, 220]);
        assert_eq!(ir.statements[1].enclosing_loops, vec![LoopId(0), LoopId(2), LoopId(3)]);
        assert_eq!(ir.arrays.len(), 3);
        assert_eq!(ir.scalars.len(), 2);
        assert_eq!(ir.statements[1].ops[&OpKind::Mul], 2);
    }

    #[test]
    fn empty_loop_body() {
        let ir = parse_kernel("void k(float A[4]) { for (int i = 0; i < 4; i++) {} }").unwrap();
        assert_eq!(ir.loops.len(), 1);
        assert!(ir.statements.is_empty());
    }

    #[test]
    fn symbolic_bound_is_rejected() {
        let err = parse_kernel("void k(int n, float A[4]) { for (int i = 0; i < n; i++) A[i] = 0; }").unwrap_err();
        assert_eq!(err.construct(), Some("non-constant bound"));
    }

    #[test]
    fn rejects_unsupported_constructs() {
        let cases = [
            ("void k(float A[4]) { for (int i = 0; i < 4; i += 2) A[i] = 0; }", "non-unit stride"),
            ("void k(float A[4]) { for (int i = 1; i < 4; i++) A[i] = 0; }", "non-zero lower bound"),
            ("void k(float A[4]) { for (int i = 0; i < 4; i++) if (i) A[i] = 0; }", "conditional"),
            ("void k(float A[4]) { for (int i = 0; i < 4; i++) A[i] = f(i); }", "function call"),
            ("void k(float *A) { }", "pointer arithmetic"),
            ("void k(float A[4]) { for (int i = 0; i < 4; i++) A[i*i] = 0; }", "non-affine subscript"),
            ("void k(float A[4]) { while (1) A[0] = 0; }", "while loop"),
        ];
        for (src, construct) in cases {
            let err = parse_kernel(src).unwrap_err();
            assert_eq!(err.construct(), Some(construct), "{src}: {err}");
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_kernel("void k(float A[4]) {\n  for (int i = 0; i < 4; i++)\n    A[i] = ;\n}").unwrap_err();
        match err {
            FrontendError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_access_is_invalid() {
        let err = parse_kernel("void k(float A[4]) { for (int i = 0; i < 4; i++) A[i+1] = 0; }").unwrap_err();
        assert!(matches!(err, FrontendError::Invalid(_)));
    }

    #[test]
    fn non_simple_subscripts_parse() {
        let ir = parse_kernel(
            "void k(float o[4], float x[6]) { for (int h = 0; h < 4; h++) for (int p = 0; p < 3; p++) o[h] += x[h + p]; }",
        )
        .unwrap();
        assert!(ir.statements[0].accesses.iter().any(|a| a.non_simple()));
    }

    #[test]
    fn unparse_round_trips() {
        let ir = parse_kernel(GEMM).unwrap();
        let again = parse_kernel(&ir.to_c()).unwrap();
        assert_eq!(alpha_normalize(&ir), alpha_normalize(&again));
    }

    #[test]
    fn json_round_trip() {
        let ir = parse_kernel(GEMM).unwrap();
        let text = serde_json::to_string(&ir).unwrap();
        assert_eq!(kernel_from_json(&text).unwrap(), ir);
    }

    #[test]
    fn pragmas_are_tolerated_and_attached() {
        let src = "void k(float A[8]) {\n for (int i = 0; i < 8; i++)\n#pragma HLS pipeline\n A[i] = 1; }";
        assert_eq!(parse_kernel(src).unwrap().statements.len(), 1);
        let f = parse_generated_function(src, "k").unwrap();
        match &f.body[0] {
            CStmt::For { pragmas, .. } => assert_eq!(pragmas, &vec!["HLS pipeline".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
