//! Name resolution, type checking, and static single-assignment checking.
//!
//! The checker evaluates everything that must be known before the graph is
//! built: scalar constants, foreach ranges, and call-site annotations. What
//! it cannot decide statically (array-element single assignment under
//! loops) is deferred to graph instantiation.

use super::ast::{self, Arg, BinOp, CmdWord, Expr, Item, RangeOrArray, ScriptAst, Stmt};
use super::{Diagnostic, Span};
use std::collections::BTreeMap;

/// Variable kinds after resolution. All user-declared `type` names are
/// file kinds; `int`, `float`, and `string` are built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    File,
    Int,
    Float,
    Str,
}

impl std::fmt::Display for VarKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VarKind::File => "file",
            VarKind::Int => "int",
            VarKind::Float => "float",
            VarKind::Str => "string",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ScalarValue {
    pub fn kind(&self) -> VarKind {
        match self {
            ScalarValue::Int(_) => VarKind::Int,
            ScalarValue::Float(_) => VarKind::Float,
            ScalarValue::Str(_) => VarKind::Str,
        }
    }

    /// The word this value substitutes into a command line.
    pub fn to_word(&self) -> String {
        match self {
            ScalarValue::Int(v) => v.to_string(),
            ScalarValue::Float(v) => format!("{v}"),
            ScalarValue::Str(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarMapping {
    /// Scalar file mapped to a fixed logical path.
    Single(String),
    /// Array element `i` maps to `prefix + i + suffix`.
    Indexed { prefix: String, suffix: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub is_array: bool,
    pub volatile: bool,
    pub mapping: Option<VarMapping>,
    /// Evaluated initializer, for scalar constants.
    pub value: Option<ScalarValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedParam {
    pub name: String,
    pub kind: VarKind,
    pub is_array: bool,
}

/// One word of an app's command template after parameter resolution.
#[derive(Debug, Clone, PartialEq)]
pub enum TplWord {
    Lit(String),
    /// Index into the app's input parameter list.
    In(usize),
    /// Index into the app's output parameter list.
    Out(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSig {
    pub name: String,
    pub outputs: Vec<TypedParam>,
    pub inputs: Vec<TypedParam>,
    pub command: Vec<TplWord>,
}

/// Scalar expression evaluated at instantiation time. Constants are folded
/// here; only loop variables remain symbolic.
#[derive(Debug, Clone, PartialEq)]
pub enum TExpr {
    Const(ScalarValue),
    LoopVar(String),
    Neg(Box<TExpr>),
    Bin(BinOp, Box<TExpr>, Box<TExpr>),
}

impl TExpr {
    pub fn as_const_int(&self) -> Option<i64> {
        match self {
            TExpr::Const(ScalarValue::Int(v)) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TLValue {
    Var(String),
    Elem(String, TExpr),
}

impl TLValue {
    pub fn var_name(&self) -> &str {
        match self {
            TLValue::Var(n) | TLValue::Elem(n, _) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TArg {
    Scalar(TExpr),
    FileVar(String),
    FileElem(String, TExpr),
    FileSlice(String, TExpr, TExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TCall {
    /// Stable call-site id, assigned in source order.
    pub site: u32,
    pub app: String,
    pub outs: Vec<TLValue>,
    pub args: Vec<TArg>,
    pub duration: Option<f64>,
    pub width: u32,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TRange {
    Span { lo: i64, hi: i64 },
    Array(Vec<i64>),
}

impl TRange {
    pub fn len(&self) -> u64 {
        match self {
            TRange::Span { lo, hi } => {
                if hi < lo {
                    0
                } else {
                    (hi - lo) as u64 + 1
                }
            }
            TRange::Array(v) => v.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<i64> {
        match self {
            TRange::Span { lo, hi } => (*lo..=*hi).collect(),
            TRange::Array(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TForeach {
    pub var: String,
    pub index_var: Option<String>,
    pub range: TRange,
    pub body: Vec<TStmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TStmt {
    Call(TCall),
    Foreach(TForeach),
}

/// A parsed, resolved, and statically checked script.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedProgram {
    pub apps: BTreeMap<String, AppSig>,
    pub vars: BTreeMap<String, VarInfo>,
    pub stmts: Vec<TStmt>,
}

/// Type-check an AST. All diagnostics are collected in one pass.
pub fn typecheck(ast: &ScriptAst) -> Result<TypedProgram, Vec<Diagnostic>> {
    let mut cx = Checker {
        types: BTreeMap::new(),
        apps: BTreeMap::new(),
        vars: BTreeMap::new(),
        assignments: BTreeMap::new(),
        errors: Vec::new(),
        loop_vars: Vec::new(),
        next_site: 0,
    };
    let stmts = cx.program(ast);
    if cx.errors.is_empty() {
        Ok(TypedProgram {
            apps: cx.apps,
            vars: cx.vars,
            stmts,
        })
    } else {
        Err(cx.errors)
    }
}

struct Checker {
    /// Declared file-kind type names (`type file;`).
    types: BTreeMap<String, Span>,
    apps: BTreeMap<String, AppSig>,
    vars: BTreeMap<String, VarInfo>,
    /// Static assignment sites per scalar variable name.
    assignments: BTreeMap<String, Span>,
    errors: Vec<Diagnostic>,
    loop_vars: Vec<String>,
    next_site: u32,
}

impl Checker {
    fn error(&mut self, span: Span, message: impl Into<String>) {
        self.errors.push(Diagnostic {
            span,
            message: message.into(),
        });
    }

    fn resolve_kind(&mut self, ty: &ast::Ident) -> Option<(VarKind, bool)> {
        // (kind, is_file_kind)
        match ty.text.as_str() {
            "int" => Some((VarKind::Int, false)),
            "float" => Some((VarKind::Float, false)),
            "string" => Some((VarKind::Str, false)),
            name => {
                if self.types.contains_key(name) {
                    Some((VarKind::File, true))
                } else {
                    self.error(
                        ty.span,
                        format!("unknown type `{name}` (declare it with `type {name};`)"),
                    );
                    None
                }
            }
        }
    }

    fn program(&mut self, ast: &ScriptAst) -> Vec<TStmt> {
        // Declarations are processed in source order; forward references are
        // an unknown-identifier error, matching single-pass resolution.
        let mut stmts = Vec::new();
        for item in &ast.items {
            match item {
                Item::Type(d) => self.type_decl(d),
                Item::App(d) => self.app_decl(d),
                Item::Var(d) => self.var_decl(d),
                Item::Stmt(s) => {
                    if let Some(ts) = self.stmt(s) {
                        stmts.push(ts);
                    }
                }
            }
        }
        stmts
    }

    fn type_decl(&mut self, d: &ast::TypeDecl) {
        let name = &d.name.text;
        if matches!(name.as_str(), "int" | "float" | "string") {
            self.error(d.name.span, format!("`{name}` is a built-in type"));
            return;
        }
        if self.types.insert(name.clone(), d.name.span).is_some() {
            self.error(d.name.span, format!("type `{name}` declared twice"));
        }
    }

    fn params(&mut self, decls: &[ast::ParamDecl], app: &str, out: bool) -> Vec<TypedParam> {
        let mut seen: BTreeMap<&str, Span> = BTreeMap::new();
        let mut params = Vec::new();
        for p in decls {
            if let Some((kind, _)) = self.resolve_kind(&p.ty) {
                if out && kind != VarKind::File {
                    self.error(
                        p.ty.span,
                        format!("output parameters of app `{app}` must have a file type"),
                    );
                }
                if p.is_array && kind != VarKind::File {
                    self.error(p.ty.span, "only file parameters can be arrays");
                }
                if seen.insert(&p.name.text, p.name.span).is_some() {
                    self.error(
                        p.name.span,
                        format!("duplicate parameter `{}` in app `{app}`", p.name.text),
                    );
                }
                params.push(TypedParam {
                    name: p.name.text.clone(),
                    kind,
                    is_array: p.is_array,
                });
            }
        }
        params
    }

    fn app_decl(&mut self, d: &ast::AppDecl) {
        let name = d.name.text.clone();
        let outputs = self.params(&d.outputs, &name, true);
        let inputs = self.params(&d.inputs, &name, false);
        if outputs.is_empty() {
            // parser already reported empty output lists; this catches
            // lists that were dropped due to bad types
            self.error(d.span, format!("app `{name}` has no usable output parameter"));
        }
        let mut command = Vec::new();
        for w in &d.command {
            match w {
                CmdWord::Lit(s, _) => command.push(TplWord::Lit(s.clone())),
                CmdWord::Ref(id) => {
                    if let Some(i) = inputs.iter().position(|p| p.name == id.text) {
                        command.push(TplWord::In(i));
                    } else if let Some(i) = outputs.iter().position(|p| p.name == id.text) {
                        command.push(TplWord::Out(i));
                    } else {
                        self.error(
                            id.span,
                            format!("`{}` is not a parameter of app `{name}`", id.text),
                        );
                    }
                }
            }
        }
        if let Some(first) = d.command.first() {
            if matches!(first, CmdWord::Ref(_)) {
                self.error(
                    d.span,
                    format!("the first command word of app `{name}` must be a literal program name"),
                );
            }
        }
        if self
            .apps
            .insert(
                name.clone(),
                AppSig {
                    name: name.clone(),
                    outputs,
                    inputs,
                    command,
                },
            )
            .is_some()
        {
            self.error(d.name.span, format!("app `{name}` declared twice"));
        }
    }

    fn var_decl(&mut self, d: &ast::VarDecl) {
        let Some((kind, is_file)) = self.resolve_kind(&d.ty) else {
            return;
        };
        let name = d.name.text.clone();
        if self.vars.contains_key(&name) || self.loop_vars.contains(&name) {
            self.error(d.name.span, format!("`{name}` is already declared"));
            return;
        }
        if d.volatile && !is_file {
            self.error(d.span, "`volatile` applies to file variables only");
        }
        if d.is_array && !is_file {
            self.error(d.span, "only file variables can be arrays");
        }
        let mapping = match &d.mapping {
            None => None,
            Some(m) if !is_file => {
                self.error(m.span, "mappings apply to file variables only");
                None
            }
            Some(m) => match (d.is_array, m.parts.len()) {
                (false, 1) => Some(VarMapping::Single(m.parts[0].0.clone())),
                (true, 2) => Some(VarMapping::Indexed {
                    prefix: m.parts[0].0.clone(),
                    suffix: m.parts[1].0.clone(),
                }),
                (false, n) => {
                    self.error(m.span, format!("scalar file mappings take one path, found {n}"));
                    None
                }
                (true, n) => {
                    self.error(
                        m.span,
                        format!("array mappings take a prefix and a suffix, found {n}"),
                    );
                    None
                }
            },
        };
        let value = match &d.init {
            None => None,
            Some(e) if is_file => {
                self.error(e.span(), "file variables take mappings, not initializers");
                None
            }
            Some(e) => {
                let te = self.expr(e);
                match te.and_then(|te| self.fold(&te, e.span())) {
                    Some(v) => {
                        let want = kind;
                        let got = v.kind();
                        let coerced = coerce(v, want);
                        match coerced {
                            Some(v) => {
                                self.assignments.insert(name.clone(), d.span);
                                Some(v)
                            }
                            None => {
                                self.error(
                                    e.span(),
                                    format!("initializer for `{name}` has type {got}, expected {want}"),
                                );
                                None
                            }
                        }
                    }
                    None => None,
                }
            }
        };
        if !is_file && d.init.is_none() {
            self.error(
                d.span,
                format!("scalar `{name}` needs an initializer (single assignment at declaration)"),
            );
        }
        self.vars.insert(
            name.clone(),
            VarInfo {
                name,
                kind,
                is_array: d.is_array,
                volatile: d.volatile,
                mapping,
                value,
            },
        );
    }

    fn stmt(&mut self, s: &Stmt) -> Option<TStmt> {
        match s {
            Stmt::Call(c) => self.call(c).map(TStmt::Call),
            Stmt::Foreach(f) => self.foreach(f).map(TStmt::Foreach),
        }
    }

    fn foreach(&mut self, f: &ast::ForeachStmt) -> Option<TForeach> {
        let range = match &f.range {
            RangeOrArray::Range { lo, hi } => {
                let lo = self.const_int(lo)?;
                let hi = self.const_int(hi)?;
                TRange::Span { lo, hi }
            }
            RangeOrArray::Array(es) => {
                let mut vals = Vec::new();
                for e in es {
                    vals.push(self.const_int(e)?);
                }
                TRange::Array(vals)
            }
        };
        let mut introduced = Vec::new();
        for id in std::iter::once(&f.var).chain(f.index_var.iter()) {
            if self.vars.contains_key(&id.text) || self.loop_vars.contains(&id.text) {
                self.error(
                    id.span,
                    format!("loop variable `{}` shadows an existing declaration", id.text),
                );
            } else {
                self.loop_vars.push(id.text.clone());
                introduced.push(id.text.clone());
            }
        }
        let body: Vec<TStmt> = f.body.iter().filter_map(|s| self.stmt(s)).collect();
        for name in introduced {
            self.loop_vars.retain(|v| *v != name);
        }
        Some(TForeach {
            var: f.var.text.clone(),
            index_var: f.index_var.as_ref().map(|i| i.text.clone()),
            range,
            body,
        })
    }

    fn call(&mut self, c: &ast::CallStmt) -> Option<TCall> {
        let Some(sig) = self.apps.get(&c.app.text).cloned() else {
            self.error(c.app.span, format!("unknown app `{}`", c.app.text));
            return None;
        };
        if c.outs.len() != sig.outputs.len() {
            self.error(
                c.span,
                format!(
                    "app `{}` produces {} output(s), call binds {}",
                    sig.name,
                    sig.outputs.len(),
                    c.outs.len()
                ),
            );
            return None;
        }
        if c.args.len() != sig.inputs.len() {
            self.error(
                c.span,
                format!(
                    "app `{}` takes {} argument(s), call passes {}",
                    sig.name,
                    sig.inputs.len(),
                    c.args.len()
                ),
            );
            return None;
        }
        let mut outs = Vec::new();
        for (lv, param) in c.outs.iter().zip(&sig.outputs) {
            outs.push(self.out_lvalue(lv, param, &c.app.text)?);
        }
        let mut args = Vec::new();
        for (arg, param) in c.args.iter().zip(&sig.inputs) {
            args.push(self.in_arg(arg, param, &c.app.text)?);
        }
        let mut duration = None;
        let mut width = 1u32;
        for ann in &c.annotations {
            match ann.name.text.as_str() {
                "duration" => match self.const_scalar(&ann.value) {
                    Some(ScalarValue::Float(v)) if v >= 0.0 => duration = Some(v),
                    Some(ScalarValue::Int(v)) if v >= 0 => duration = Some(v as f64),
                    _ => self.error(
                        ann.name.span,
                        "@duration takes a non-negative constant number of seconds",
                    ),
                },
                "width" => match self.const_scalar(&ann.value) {
                    Some(ScalarValue::Int(v)) if v >= 1 => width = v as u32,
                    _ => self.error(ann.name.span, "@width takes a constant integer >= 1"),
                },
                other => self.error(ann.name.span, format!("unknown annotation `@{other}`")),
            }
        }
        let site = self.next_site;
        self.next_site += 1;
        Some(TCall {
            site,
            app: c.app.text.clone(),
            outs,
            args,
            duration,
            width,
            span: c.span,
        })
    }

    fn out_lvalue(&mut self, lv: &ast::LValue, param: &TypedParam, app: &str) -> Option<TLValue> {
        let name = &lv.name.text;
        let Some(info) = self.vars.get(name).cloned() else {
            self.error(lv.name.span, format!("unknown identifier `{name}`"));
            return None;
        };
        if info.kind != VarKind::File {
            self.error(
                lv.name.span,
                format!("outputs of app `{app}` bind to file variables, `{name}` is {}", info.kind),
            );
            return None;
        }
        if param.is_array {
            self.error(
                lv.name.span,
                format!("app `{app}` declares an array output; bind its elements one call at a time"),
            );
            return None;
        }
        match (&lv.index, info.is_array) {
            (None, false) => {
                // static single-assignment check for scalar files
                if let Some(_prev) = self.assignments.get(name) {
                    self.error(
                        lv.name.span,
                        format!("double assignment: `{name}` is already assigned"),
                    );
                    return None;
                }
                self.assignments.insert(name.clone(), lv.name.span);
                Some(TLValue::Var(name.clone()))
            }
            (Some(e), true) => {
                let idx = self.int_expr(e)?;
                Some(TLValue::Elem(name.clone(), idx))
            }
            (None, true) => {
                self.error(lv.name.span, format!("`{name}` is an array; assign an element `{name}[i]`"));
                None
            }
            (Some(_), false) => {
                self.error(lv.name.span, format!("`{name}` is not an array"));
                None
            }
        }
    }

    fn in_arg(&mut self, arg: &Arg, param: &TypedParam, app: &str) -> Option<TArg> {
        match (param.kind, arg) {
            (VarKind::File, Arg::Slice { name, lo, hi, span }) => {
                if !param.is_array {
                    self.error(*span, format!("app `{app}` expects a single file for `{}`", param.name));
                    return None;
                }
                let info = self.file_array(name)?;
                let lo = self.int_expr(lo)?;
                let hi = self.int_expr(hi)?;
                Some(TArg::FileSlice(info, lo, hi))
            }
            (VarKind::File, Arg::Expr(e)) => {
                if param.is_array {
                    self.error(
                        e.span(),
                        format!(
                            "app `{app}` expects a file array slice for `{}` (write `name[lo:hi]`)",
                            param.name
                        ),
                    );
                    return None;
                }
                match e {
                    Expr::Var(id) => {
                        let info = self.vars.get(&id.text).cloned();
                        match info {
                            Some(v) if v.kind == VarKind::File && !v.is_array => {
                                Some(TArg::FileVar(id.text.clone()))
                            }
                            Some(v) if v.kind == VarKind::File => {
                                self.error(
                                    id.span,
                                    format!("`{}` is an array; pass an element or a slice", id.text),
                                );
                                None
                            }
                            Some(v) => {
                                self.error(
                                    id.span,
                                    format!(
                                        "app `{app}` expects a file for `{}`, `{}` is {}",
                                        param.name, id.text, v.kind
                                    ),
                                );
                                None
                            }
                            None => {
                                self.error(id.span, format!("unknown identifier `{}`", id.text));
                                None
                            }
                        }
                    }
                    Expr::Index { name, index, .. } => {
                        let arr = self.file_array(name)?;
                        let idx = self.int_expr(index)?;
                        Some(TArg::FileElem(arr, idx))
                    }
                    other => {
                        self.error(
                            other.span(),
                            format!("app `{app}` expects a file for `{}`", param.name),
                        );
                        None
                    }
                }
            }
            (_, Arg::Slice { span, .. }) => {
                self.error(*span, format!("app `{app}` expects {} for `{}`", param.kind, param.name));
                None
            }
            (want, Arg::Expr(e)) => {
                let te = self.expr(e)?;
                let got = self.expr_kind(&te);
                match (want, got) {
                    (VarKind::Int, VarKind::Int)
                    | (VarKind::Float, VarKind::Float)
                    | (VarKind::Float, VarKind::Int)
                    | (VarKind::Str, VarKind::Str) => Some(TArg::Scalar(te)),
                    _ => {
                        self.error(
                            e.span(),
                            format!("app `{app}` expects {want} for `{}`, found {got}", param.name),
                        );
                        None
                    }
                }
            }
        }
    }

    fn file_array(&mut self, name: &ast::Ident) -> Option<String> {
        match self.vars.get(&name.text) {
            Some(v) if v.kind == VarKind::File && v.is_array => Some(name.text.clone()),
            Some(_) => {
                self.error(name.span, format!("`{}` is not a file array", name.text));
                None
            }
            None => {
                self.error(name.span, format!("unknown identifier `{}`", name.text));
                None
            }
        }
    }

    /// Scalar expression to a TExpr, folding constants.
    fn expr(&mut self, e: &Expr) -> Option<TExpr> {
        let te = self.expr_raw(e)?;
        Some(self.fold_partial(te))
    }

    fn expr_raw(&mut self, e: &Expr) -> Option<TExpr> {
        match e {
            Expr::Int(v, _) => Some(TExpr::Const(ScalarValue::Int(*v))),
            Expr::Float(v, _) => Some(TExpr::Const(ScalarValue::Float(*v))),
            Expr::Str(s, _) => Some(TExpr::Const(ScalarValue::Str(s.clone()))),
            Expr::Var(id) => {
                if self.loop_vars.contains(&id.text) {
                    return Some(TExpr::LoopVar(id.text.clone()));
                }
                match self.vars.get(&id.text) {
                    Some(v) if v.kind == VarKind::File => {
                        self.error(
                            id.span,
                            format!("`{}` is a file and cannot appear in a scalar expression", id.text),
                        );
                        None
                    }
                    Some(v) => match &v.value {
                        Some(val) => Some(TExpr::Const(val.clone())),
                        None => {
                            self.error(id.span, format!("`{}` has no value here", id.text));
                            None
                        }
                    },
                    None => {
                        self.error(id.span, format!("unknown identifier `{}`", id.text));
                        None
                    }
                }
            }
            Expr::Index { name, .. } => {
                self.error(
                    name.span,
                    format!("`{}` indexing is not a scalar expression", name.text),
                );
                None
            }
            Expr::Neg { expr, .. } => Some(TExpr::Neg(Box::new(self.expr_raw(expr)?))),
            Expr::Binary { op, lhs, rhs, span } => {
                let l = self.expr_raw(lhs)?;
                let r = self.expr_raw(rhs)?;
                let lk = self.expr_kind(&l);
                let rk = self.expr_kind(&r);
                let ok = matches!(
                    (lk, rk),
                    (VarKind::Int, VarKind::Int)
                        | (VarKind::Float, VarKind::Float)
                        | (VarKind::Int, VarKind::Float)
                        | (VarKind::Float, VarKind::Int)
                );
                if !ok {
                    self.error(*span, format!("cannot apply `{}` to {lk} and {rk}", op.symbol()));
                    return None;
                }
                Some(TExpr::Bin(*op, Box::new(l), Box::new(r)))
            }
        }
    }

    fn expr_kind(&self, e: &TExpr) -> VarKind {
        match e {
            TExpr::Const(v) => v.kind(),
            TExpr::LoopVar(_) => VarKind::Int,
            TExpr::Neg(inner) => self.expr_kind(inner),
            TExpr::Bin(_, l, r) => {
                if self.expr_kind(l) == VarKind::Float || self.expr_kind(r) == VarKind::Float {
                    VarKind::Float
                } else {
                    VarKind::Int
                }
            }
        }
    }

    fn fold_partial(&mut self, e: TExpr) -> TExpr {
        match e {
            TExpr::Neg(inner) => {
                let inner = self.fold_partial(*inner);
                match inner {
                    TExpr::Const(ScalarValue::Int(v)) => TExpr::Const(ScalarValue::Int(-v)),
                    TExpr::Const(ScalarValue::Float(v)) => TExpr::Const(ScalarValue::Float(-v)),
                    other => TExpr::Neg(Box::new(other)),
                }
            }
            TExpr::Bin(op, l, r) => {
                let l = self.fold_partial(*l);
                let r = self.fold_partial(*r);
                if let (TExpr::Const(a), TExpr::Const(b)) = (&l, &r) {
                    if let Some(v) = apply_bin(op, a, b) {
                        return TExpr::Const(v);
                    }
                }
                TExpr::Bin(op, Box::new(l), Box::new(r))
            }
            other => other,
        }
    }

    /// Evaluate to a constant; loop variables are not allowed.
    fn fold(&mut self, e: &TExpr, span: Span) -> Option<ScalarValue> {
        match e {
            TExpr::Const(v) => Some(v.clone()),
            TExpr::LoopVar(name) => {
                self.error(
                    span,
                    format!("`{name}` is a loop variable; a compile-time constant is required here"),
                );
                None
            }
            TExpr::Neg(inner) => match self.fold(inner, span)? {
                ScalarValue::Int(v) => Some(ScalarValue::Int(-v)),
                ScalarValue::Float(v) => Some(ScalarValue::Float(-v)),
                ScalarValue::Str(_) => None,
            },
            TExpr::Bin(op, l, r) => {
                let a = self.fold(l, span)?;
                let b = self.fold(r, span)?;
                let out = apply_bin(*op, &a, &b);
                if out.is_none() {
                    self.error(span, "invalid arithmetic (division by zero?)");
                }
                out
            }
        }
    }

    fn const_scalar(&mut self, e: &Expr) -> Option<ScalarValue> {
        let te = self.expr(e)?;
        self.fold(&te, e.span())
    }

    fn const_int(&mut self, e: &Expr) -> Option<i64> {
        match self.const_scalar(e) {
            Some(ScalarValue::Int(v)) => Some(v),
            Some(other) => {
                self.error(
                    e.span(),
                    format!("expected a compile-time integer, found {}", other.kind()),
                );
                None
            }
            None => None,
        }
    }

    fn int_expr(&mut self, e: &Expr) -> Option<TExpr> {
        let te = self.expr(e)?;
        if self.expr_kind(&te) != VarKind::Int {
            self.error(e.span(), "array indices must be integers");
            return None;
        }
        Some(te)
    }
}

fn coerce(v: ScalarValue, want: VarKind) -> Option<ScalarValue> {
    match (v, want) {
        (v @ ScalarValue::Int(_), VarKind::Int) => Some(v),
        (ScalarValue::Int(i), VarKind::Float) => Some(ScalarValue::Float(i as f64)),
        (v @ ScalarValue::Float(_), VarKind::Float) => Some(v),
        (v @ ScalarValue::Str(_), VarKind::Str) => Some(v),
        _ => None,
    }
}

fn apply_bin(op: BinOp, a: &ScalarValue, b: &ScalarValue) -> Option<ScalarValue> {
    use ScalarValue::*;
    match (a, b) {
        (Int(a), Int(b)) => match op {
            BinOp::Add => Some(Int(a.wrapping_add(*b))),
            BinOp::Sub => Some(Int(a.wrapping_sub(*b))),
            BinOp::Mul => Some(Int(a.wrapping_mul(*b))),
            BinOp::Div => {
                if *b == 0 {
                    None
                } else {
                    Some(Int(a / b))
                }
            }
            BinOp::Mod => {
                if *b == 0 {
                    None
                } else {
                    Some(Int(a % b))
                }
            }
        },
        (Int(_), Float(_)) | (Float(_), Int(_)) | (Float(_), Float(_)) => {
            let fa = match a {
                Int(v) => *v as f64,
                Float(v) => *v,
                Str(_) => return None,
            };
            let fb = match b {
                Int(v) => *v as f64,
                Float(v) => *v,
                Str(_) => return None,
            };
            let v = match op {
                BinOp::Add => fa + fb,
                BinOp::Sub => fa - fb,
                BinOp::Mul => fa * fb,
                BinOp::Div => fa / fb,
                BinOp::Mod => fa % fb,
            };
            Some(Float(v))
        }
        _ => None,
    }
}

/// Evaluate a [`TExpr`] with loop-variable bindings. Used at instantiation.
pub fn eval_texpr(e: &TExpr, env: &BTreeMap<String, i64>) -> Result<ScalarValue, String> {
    match e {
        TExpr::Const(v) => Ok(v.clone()),
        TExpr::LoopVar(name) => env
            .get(name)
            .map(|v| ScalarValue::Int(*v))
            .ok_or_else(|| format!("loop variable `{name}` is not bound")),
        TExpr::Neg(inner) => match eval_texpr(inner, env)? {
            ScalarValue::Int(v) => Ok(ScalarValue::Int(-v)),
            ScalarValue::Float(v) => Ok(ScalarValue::Float(-v)),
            ScalarValue::Str(_) => Err("cannot negate a string".into()),
        },
        TExpr::Bin(op, l, r) => {
            let a = eval_texpr(l, env)?;
            let b = eval_texpr(r, env)?;
            apply_bin(*op, &a, &b).ok_or_else(|| "invalid arithmetic (division by zero?)".into())
        }
    }
}
