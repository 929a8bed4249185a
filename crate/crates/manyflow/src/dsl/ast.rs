//! Syntax tree for `.mf` scripts, plus the canonical printer.
//!
//! Every node carries a [`Span`](super::Span) into the original source.
//! [`ScriptAst::unparse`] prints the canonical formatting; reparsing the
//! result yields a structurally equal tree (compare with
//! [`ScriptAst::stripped`], which zeroes spans).

use super::Span;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub text: String,
    pub span: Span,
}

impl Ident {
    pub fn new(text: impl Into<String>, span: Span) -> Self {
        Ident {
            text: text.into(),
            span,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptAst {
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Type(TypeDecl),
    App(AppDecl),
    Var(VarDecl),
    Stmt(Stmt),
}

/// `type file;`
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDecl {
    pub name: Ident,
    pub span: Span,
}

/// `app (file o) name(file i, int n) { "prog" "-k" n i o }`
#[derive(Debug, Clone, PartialEq)]
pub struct AppDecl {
    pub name: Ident,
    pub outputs: Vec<ParamDecl>,
    pub inputs: Vec<ParamDecl>,
    pub command: Vec<CmdWord>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub ty: Ident,
    pub name: Ident,
    pub is_array: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CmdWord {
    /// A literal command word, written as a string literal.
    Lit(String, Span),
    /// A reference to one of the app's parameters.
    Ref(Ident),
}

/// `volatile file x <"a.dat">;` / `file a[] <"out/a_", ".dat">;` / `int n = 4;`
#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub volatile: bool,
    pub ty: Ident,
    pub name: Ident,
    pub is_array: bool,
    pub mapping: Option<Mapping>,
    pub init: Option<Expr>,
    pub span: Span,
}

/// The `<...>` mapping clause. One string maps a scalar file to a path; two
/// strings map array element `i` to `prefix + i + suffix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub parts: Vec<(String, Span)>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Call(CallStmt),
    Foreach(ForeachStmt),
}

/// `(outs) = app(args) @duration(2.5);`
#[derive(Debug, Clone, PartialEq)]
pub struct CallStmt {
    pub outs: Vec<LValue>,
    pub app: Ident,
    pub args: Vec<Arg>,
    pub annotations: Vec<Annotation>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub name: Ident,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LValue {
    pub name: Ident,
    pub index: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Expr(Expr),
    /// Inclusive slice of a file array: `parts[lo:hi]`.
    Slice {
        name: Ident,
        lo: Expr,
        hi: Expr,
        span: Span,
    },
}

/// `foreach v, i in [0:9] { ... }`
#[derive(Debug, Clone, PartialEq)]
pub struct ForeachStmt {
    pub var: Ident,
    pub index_var: Option<Ident>,
    pub range: RangeOrArray,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RangeOrArray {
    /// Inclusive integer range `[lo:hi]`.
    Range { lo: Expr, hi: Expr },
    /// Literal array `[a, b, c]`.
    Array(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64, Span),
    Float(f64, Span),
    Str(String, Span),
    Var(Ident),
    Index {
        name: Ident,
        index: Box<Expr>,
        span: Span,
    },
    Neg {
        expr: Box<Expr>,
        span: Span,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 2,
        }
    }
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Int(_, s) | Expr::Float(_, s) | Expr::Str(_, s) => *s,
            Expr::Var(id) => id.span,
            Expr::Index { span, .. } | Expr::Neg { span, .. } | Expr::Binary { span, .. } => *span,
        }
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Print a float so it reparses as a float token (always keeps a `.`).
fn float_text(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

impl ScriptAst {
    /// Canonical formatting. This is the output format of `manyflow fmt`-style
    /// tooling and the anchor of the parse/unparse round-trip property.
    pub fn unparse(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            item.unparse(&mut out, 0);
        }
        out
    }

    /// Copy of the tree with every span zeroed, for structural comparison.
    pub fn stripped(&self) -> ScriptAst {
        let mut copy = self.clone();
        copy.strip();
        copy
    }
}

impl Item {
    fn unparse(&self, out: &mut String, indent: usize) {
        match self {
            Item::Type(d) => {
                let _ = writeln!(out, "{}type {};", pad(indent), d.name.text);
            }
            Item::App(d) => d.unparse(out, indent),
            Item::Var(d) => d.unparse(out, indent),
            Item::Stmt(s) => s.unparse(out, indent),
        }
    }
}

fn pad(indent: usize) -> String {
    "  ".repeat(indent)
}

fn unparse_params(params: &[ParamDecl]) -> String {
    params
        .iter()
        .map(|p| {
            format!(
                "{} {}{}",
                p.ty.text,
                p.name.text,
                if p.is_array { "[]" } else { "" }
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl AppDecl {
    fn unparse(&self, out: &mut String, indent: usize) {
        let words = self
            .command
            .iter()
            .map(|w| match w {
                CmdWord::Lit(s, _) => quote(s),
                CmdWord::Ref(id) => id.text.clone(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            out,
            "{}app ({}) {}({}) {{ {} }}",
            pad(indent),
            unparse_params(&self.outputs),
            self.name.text,
            unparse_params(&self.inputs),
            words
        );
    }
}

impl VarDecl {
    fn unparse(&self, out: &mut String, indent: usize) {
        let mut line = pad(indent);
        if self.volatile {
            line.push_str("volatile ");
        }
        line.push_str(&self.ty.text);
        line.push(' ');
        line.push_str(&self.name.text);
        if self.is_array {
            line.push_str("[]");
        }
        if let Some(m) = &self.mapping {
            let parts = m
                .parts
                .iter()
                .map(|(s, _)| quote(s))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = write!(line, " <{parts}>");
        }
        if let Some(e) = &self.init {
            let _ = write!(line, " = {}", e.unparse());
        }
        line.push_str(";\n");
        out.push_str(&line);
    }
}

impl Stmt {
    fn unparse(&self, out: &mut String, indent: usize) {
        match self {
            Stmt::Call(c) => c.unparse(out, indent),
            Stmt::Foreach(f) => f.unparse(out, indent),
        }
    }
}

impl CallStmt {
    fn unparse(&self, out: &mut String, indent: usize) {
        let outs = self
            .outs
            .iter()
            .map(|lv| lv.unparse())
            .collect::<Vec<_>>()
            .join(", ");
        let args = self
            .args
            .iter()
            .map(|a| a.unparse())
            .collect::<Vec<_>>()
            .join(", ");
        let mut line = format!("{}({}) = {}({})", pad(indent), outs, self.app.text, args);
        for ann in &self.annotations {
            let _ = write!(line, " @{}({})", ann.name.text, ann.value.unparse());
        }
        line.push_str(";\n");
        out.push_str(&line);
    }
}

impl LValue {
    fn unparse(&self) -> String {
        match &self.index {
            Some(e) => format!("{}[{}]", self.name.text, e.unparse()),
            None => self.name.text.clone(),
        }
    }
}

impl Arg {
    fn unparse(&self) -> String {
        match self {
            Arg::Expr(e) => e.unparse(),
            Arg::Slice { name, lo, hi, .. } => {
                format!("{}[{}:{}]", name.text, lo.unparse(), hi.unparse())
            }
        }
    }
}

impl ForeachStmt {
    fn unparse(&self, out: &mut String, indent: usize) {
        let head = match &self.index_var {
            Some(i) => format!("{}, {}", self.var.text, i.text),
            None => self.var.text.clone(),
        };
        let range = match &self.range {
            RangeOrArray::Range { lo, hi } => format!("[{}:{}]", lo.unparse(), hi.unparse()),
            RangeOrArray::Array(es) => format!(
                "[{}]",
                es.iter()
                    .map(|e| e.unparse())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let _ = writeln!(out, "{}foreach {} in {} {{", pad(indent), head, range);
        for s in &self.body {
            s.unparse(out, indent + 1);
        }
        let _ = writeln!(out, "{}}}", pad(indent));
    }
}

impl Expr {
    pub fn unparse(&self) -> String {
        self.unparse_prec(0)
    }

    fn unparse_prec(&self, parent_prec: u8) -> String {
        match self {
            Expr::Int(v, _) => v.to_string(),
            Expr::Float(v, _) => float_text(*v),
            Expr::Str(s, _) => quote(s),
            Expr::Var(id) => id.text.clone(),
            Expr::Index { name, index, .. } => {
                format!("{}[{}]", name.text, index.unparse())
            }
            Expr::Neg { expr, .. } => format!("-{}", expr.unparse_prec(3)),
            Expr::Binary { op, lhs, rhs, .. } => {
                let prec = op.precedence();
                let text = format!(
                    "{} {} {}",
                    lhs.unparse_prec(prec),
                    op.symbol(),
                    rhs.unparse_prec(prec + 1)
                );
                if prec < parent_prec {
                    format!("({text})")
                } else {
                    text
                }
            }
        }
    }
}

// ---- span stripping ------------------------------------------------------

trait Strip {
    fn strip(&mut self);
}

impl Strip for Span {
    fn strip(&mut self) {
        *self = Span::default();
    }
}

impl Strip for Ident {
    fn strip(&mut self) {
        self.span.strip();
    }
}

impl<T: Strip> Strip for Vec<T> {
    fn strip(&mut self) {
        for t in self {
            t.strip();
        }
    }
}

impl<T: Strip> Strip for Option<T> {
    fn strip(&mut self) {
        if let Some(t) = self {
            t.strip();
        }
    }
}

impl Strip for ScriptAst {
    fn strip(&mut self) {
        self.items.strip();
    }
}

impl Strip for Item {
    fn strip(&mut self) {
        match self {
            Item::Type(d) => {
                d.name.strip();
                d.span.strip();
            }
            Item::App(d) => {
                d.name.strip();
                d.outputs.strip();
                d.inputs.strip();
                d.command.strip();
                d.span.strip();
            }
            Item::Var(d) => d.strip(),
            Item::Stmt(s) => s.strip(),
        }
    }
}

impl Strip for ParamDecl {
    fn strip(&mut self) {
        self.ty.strip();
        self.name.strip();
    }
}

impl Strip for CmdWord {
    fn strip(&mut self) {
        match self {
            CmdWord::Lit(_, s) => s.strip(),
            CmdWord::Ref(id) => id.strip(),
        }
    }
}

impl Strip for VarDecl {
    fn strip(&mut self) {
        self.ty.strip();
        self.name.strip();
        if let Some(m) = &mut self.mapping {
            for (_, s) in &mut m.parts {
                s.strip();
            }
            m.span.strip();
        }
        self.init.strip();
        self.span.strip();
    }
}

impl Strip for Stmt {
    fn strip(&mut self) {
        match self {
            Stmt::Call(c) => {
                c.outs.strip();
                c.app.strip();
                c.args.strip();
                for a in &mut c.annotations {
                    a.name.strip();
                    a.value.strip();
                }
                c.span.strip();
            }
            Stmt::Foreach(f) => {
                f.var.strip();
                f.index_var.strip();
                match &mut f.range {
                    RangeOrArray::Range { lo, hi } => {
                        lo.strip();
                        hi.strip();
                    }
                    RangeOrArray::Array(es) => es.strip(),
                }
                f.body.strip();
                f.span.strip();
            }
        }
    }
}

impl Strip for LValue {
    fn strip(&mut self) {
        self.name.strip();
        self.index.strip();
    }
}

impl Strip for Arg {
    fn strip(&mut self) {
        match self {
            Arg::Expr(e) => e.strip(),
            Arg::Slice { name, lo, hi, span } => {
                name.strip();
                lo.strip();
                hi.strip();
                span.strip();
            }
        }
    }
}

impl Strip for Expr {
    fn strip(&mut self) {
        match self {
            Expr::Int(_, s) | Expr::Float(_, s) | Expr::Str(_, s) => s.strip(),
            Expr::Var(id) => id.strip(),
            Expr::Index { name, index, span } => {
                name.strip();
                index.strip();
                span.strip();
            }
            Expr::Neg { expr, span } => {
                expr.strip();
                span.strip();
            }
            Expr::Binary { lhs, rhs, span, .. } => {
                lhs.strip();
                rhs.strip();
                span.strip();
            }
        }
    }
}

impl<T: Strip> Strip for Box<T> {
    fn strip(&mut self) {
        (**self).strip();
    }
}
