//! Lowering from a [`TypedProgram`] to a [`DataflowProgram`].
//!
//! Lowering keeps foreach loops symbolic — expansion happens when the graph
//! is instantiated — but resolves each call site's command template against
//! its app signature and records per-loop expansion counts. It is a pure,
//! total function on type-checked programs.

use super::typecheck::{
    AppSig, TArg, TCall, TForeach, TLValue, TRange, TStmt, TypedProgram, VarInfo, VarKind,
};
use std::collections::BTreeMap;

/// One word of a call site's resolved command line.
#[derive(Debug, Clone, PartialEq)]
pub enum DWord {
    Lit(String),
    /// Substitute the value of scalar argument `i`.
    Scalar(usize),
    /// Substitute the staged path(s) of file argument `i`. Slices expand to
    /// one word per element, in index order.
    FileIn(usize),
    /// Substitute the output path bound to output slot `i`.
    FileOut(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DCall {
    /// Stable call-site id from the type checker (source order).
    pub site: u32,
    pub app: String,
    pub command: Vec<DWord>,
    pub outs: Vec<TLValue>,
    pub args: Vec<TArg>,
    pub duration: Option<f64>,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DLoop {
    pub var: String,
    pub index_var: Option<String>,
    pub range: TRange,
    pub body: Vec<DStmt>,
    /// Number of call instances this loop contributes when fully expanded.
    pub expansion: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DStmt {
    Call(DCall),
    Loop(DLoop),
}

/// A closed, lowered program: declarations plus a statement list whose call
/// sites carry resolved command templates.
#[derive(Debug, Clone, PartialEq)]
pub struct DataflowProgram {
    pub apps: BTreeMap<String, AppSig>,
    pub vars: BTreeMap<String, VarInfo>,
    pub body: Vec<DStmt>,
}

impl DataflowProgram {
    /// Total call instances across the whole program after loop expansion.
    pub fn call_instances(&self) -> u64 {
        count_instances(&self.body)
    }
}

fn count_instances(body: &[DStmt]) -> u64 {
    body.iter()
        .map(|s| match s {
            DStmt::Call(_) => 1,
            DStmt::Loop(l) => l.expansion,
        })
        .sum()
}

/// Lower a type-checked program. Total: never fails.
pub fn lower(prog: &TypedProgram) -> DataflowProgram {
    let body = prog.stmts.iter().map(|s| lower_stmt(s, &prog.apps)).collect();
    DataflowProgram {
        apps: prog.apps.clone(),
        vars: prog.vars.clone(),
        body,
    }
}

fn lower_stmt(stmt: &TStmt, apps: &BTreeMap<String, AppSig>) -> DStmt {
    match stmt {
        TStmt::Call(c) => DStmt::Call(lower_call(c, apps)),
        TStmt::Foreach(f) => DStmt::Loop(lower_loop(f, apps)),
    }
}

fn lower_loop(f: &TForeach, apps: &BTreeMap<String, AppSig>) -> DLoop {
    let body: Vec<DStmt> = f.body.iter().map(|s| lower_stmt(s, apps)).collect();
    let expansion = f.range.len() * count_instances(&body);
    DLoop {
        var: f.var.clone(),
        index_var: f.index_var.clone(),
        range: f.range.clone(),
        body,
        expansion,
    }
}

fn lower_call(c: &TCall, apps: &BTreeMap<String, AppSig>) -> DCall {
    let sig = &apps[&c.app];
    let command = sig
        .command
        .iter()
        .map(|w| match w {
            super::typecheck::TplWord::Lit(s) => DWord::Lit(s.clone()),
            super::typecheck::TplWord::In(i) => {
                if sig.inputs[*i].kind == VarKind::File {
                    DWord::FileIn(*i)
                } else {
                    DWord::Scalar(*i)
                }
            }
            super::typecheck::TplWord::Out(i) => DWord::FileOut(*i),
        })
        .collect();
    DCall {
        site: c.site,
        app: c.app.clone(),
        command,
        outs: c.outs.clone(),
        args: c.args.clone(),
        duration: c.duration,
        width: c.width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, typecheck::typecheck};

    fn lowered(src: &str) -> DataflowProgram {
        lower(&typecheck(&parse(src).unwrap()).unwrap())
    }

    #[test]
    fn single_call_is_one_site() {
        let p = lowered(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\nfile x <\"a\">;\nfile y;\n(y) = f(x);\n",
        );
        assert_eq!(p.body.len(), 1);
        assert_eq!(p.call_instances(), 1);
        let DStmt::Call(c) = &p.body[0] else { panic!() };
        assert_eq!(
            c.command,
            vec![DWord::Lit("cp".into()), DWord::FileIn(0), DWord::FileOut(0)]
        );
    }

    #[test]
    fn foreach_expansion_count_is_range_length() {
        let p = lowered(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\nfile x <\"a\">;\nfile a[];\n\
             foreach t in [0:9] {\n  (a[t]) = f(x);\n}\n",
        );
        let DStmt::Loop(l) = &p.body[0] else { panic!() };
        assert_eq!(l.expansion, 10);
        assert_eq!(p.call_instances(), 10);
    }

    #[test]
    fn nested_foreach_expansion_matches_enumeration() {
        let src = "type file;\napp (file o) f(file i) { \"cp\" i o }\nfile x <\"a\">;\nfile a[];\n\
                   foreach t in [0:2] {\n  foreach u in [0:3] {\n    (a[t * 4 + u]) = f(x);\n  }\n}\n";
        let p = lowered(src);

        // oracle: enumerate the loop product by hand
        let mut count = 0u64;
        for _t in 0..=2 {
            for _u in 0..=3 {
                count += 1;
            }
        }
        assert_eq!(count, 12);
        assert_eq!(p.call_instances(), 12);
    }

    #[test]
    fn scalar_params_lower_to_scalar_words() {
        let p = lowered(
            "type file;\napp (file o) f(file i, int n, string tag) { \"prog\" \"-n\" n \"-t\" tag i o }\n\
             file x <\"a\">;\nfile y;\n(y) = f(x, 3, \"hello\");\n",
        );
        let DStmt::Call(c) = &p.body[0] else { panic!() };
        assert_eq!(
            c.command,
            vec![
                DWord::Lit("prog".into()),
                DWord::Lit("-n".into()),
                DWord::Scalar(1),
                DWord::Lit("-t".into()),
                DWord::Scalar(2),
                DWord::FileIn(0),
                DWord::FileOut(0),
            ]
        );
    }

    #[test]
    fn lowering_is_pure() {
        let src = "type file;\napp (file o) f(file i) { \"cp\" i o }\nfile x <\"a\">;\nfile a[];\n\
                   foreach t in [0:4] {\n  (a[t]) = f(x) @duration(0.5) @width(2);\n}\n";
        let typed = typecheck(&parse(src).unwrap()).unwrap();
        assert_eq!(lower(&typed), lower(&typed));
    }

    #[test]
    fn empty_range_expands_to_zero() {
        let p = lowered(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\nfile x <\"a\">;\nfile a[];\n\
             foreach t in [3:2] {\n  (a[t]) = f(x);\n}\n",
        );
        assert_eq!(p.call_instances(), 0);
    }
}
