//! The `.mf` scripting language: lexer, parser, type checker, and lowering
//! to the dataflow program the engine instantiates.
//!
//! The pipeline is `parse` → `typecheck` → `lower`. Each stage is pure and
//! deterministic; errors carry source spans and never abort collection of
//! later errors within the same stage.

pub mod ast;
pub mod lexer;
pub mod lower;
pub mod parser;
pub mod typecheck;

pub use ast::ScriptAst;
pub use lower::{lower, DataflowProgram};
pub use parser::parse;
pub use typecheck::{typecheck, TypedProgram};

/// Half-open byte region plus human coordinates (1-based line/column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
    pub offset: u32,
    pub len: u32,
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// One user-facing problem, anchored to the source text.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub span: Span,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

/// Parse and type-check in one step.
pub fn check(source: &str) -> Result<TypedProgram, Vec<Diagnostic>> {
    let ast = parse(source)?;
    typecheck(&ast)
}

/// Full front-end pipeline: source text to dataflow program.
pub fn compile(source: &str) -> Result<DataflowProgram, Vec<Diagnostic>> {
    Ok(lower(&check(source)?))
}
