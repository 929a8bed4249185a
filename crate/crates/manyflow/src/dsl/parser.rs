//! Recursive-descent parser. Collects every syntax error it can: after a
//! failed item it resynchronizes at the next `;` or `}` and keeps going.

use super::ast::*;
use super::lexer::{tokenize, SpannedToken, Token};
use super::{Diagnostic, Span};

/// Parse source text into a [`ScriptAst`].
pub fn parse(source: &str) -> Result<ScriptAst, Vec<Diagnostic>> {
    let (tokens, mut errors) = tokenize(source);
    let mut p = Parser {
        tokens,
        pos: 0,
        errors: Vec::new(),
    };
    let ast = p.program();
    errors.extend(p.errors);
    if errors.is_empty() {
        Ok(ast)
    } else {
        Err(errors)
    }
}

struct Parser {
    tokens: Vec<SpannedToken>,
    pos: usize,
    errors: Vec<Diagnostic>,
}

struct Recover;

type PResult<T> = Result<T, Recover>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)].token
    }

    fn peek_at(&self, ahead: usize) -> &Token {
        &self.tokens[(self.pos + ahead).min(self.tokens.len() - 1)].token
    }

    fn span(&self) -> Span {
        self.tokens[self.pos.min(self.tokens.len() - 1)].span
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1).min(self.tokens.len() - 1)].span
    }

    fn advance(&mut self) -> SpannedToken {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Token) -> bool {
        if std::mem::discriminant(self.peek()) == std::mem::discriminant(tok) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn error_at(&mut self, span: Span, message: impl Into<String>) -> Recover {
        self.errors.push(Diagnostic {
            span,
            message: message.into(),
        });
        Recover
    }

    fn expect(&mut self, tok: Token, what: &str) -> PResult<SpannedToken> {
        if std::mem::discriminant(self.peek()) == std::mem::discriminant(&tok) {
            Ok(self.advance())
        } else {
            let found = self.peek().describe();
            let span = self.span();
            Err(self.error_at(span, format!("expected {what}, found {found}")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> PResult<Ident> {
        match self.peek().clone() {
            Token::Ident(text) => {
                let span = self.span();
                self.advance();
                Ok(Ident { text, span })
            }
            other => {
                let span = self.span();
                Err(self.error_at(span, format!("expected {what}, found {}", other.describe())))
            }
        }
    }

    /// Skip to just past the next `;`, or stop before `}` / EOF.
    fn synchronize(&mut self) {
        loop {
            match self.peek() {
                Token::Semi => {
                    self.advance();
                    return;
                }
                Token::RBrace | Token::Eof => return,
                _ => {
                    self.advance();
                }
            }
        }
    }

    fn program(&mut self) -> ScriptAst {
        let mut items = Vec::new();
        while !matches!(self.peek(), Token::Eof) {
            match self.item() {
                Ok(item) => items.push(item),
                Err(Recover) => self.synchronize(),
            }
        }
        ScriptAst { items }
    }

    fn item(&mut self) -> PResult<Item> {
        match self.peek() {
            Token::KwType => self.type_decl().map(Item::Type),
            Token::KwApp => self.app_decl().map(Item::App),
            Token::KwVolatile | Token::Ident(_) => self.var_decl().map(Item::Var),
            Token::LParen => self.call_stmt().map(|c| Item::Stmt(Stmt::Call(c))),
            Token::KwForeach => self.foreach_stmt().map(|f| Item::Stmt(Stmt::Foreach(f))),
            other => {
                let msg = format!("expected a declaration or statement, found {}", other.describe());
                let span = self.span();
                Err(self.error_at(span, msg))
            }
        }
    }

    fn type_decl(&mut self) -> PResult<TypeDecl> {
        let start = self.span();
        self.advance(); // `type`
        let name = self.expect_ident("a type name")?;
        self.expect(Token::Semi, "`;`")?;
        Ok(TypeDecl { name, span: start })
    }

    fn param_list(&mut self) -> PResult<Vec<ParamDecl>> {
        let mut params = Vec::new();
        if matches!(self.peek(), Token::RParen) {
            return Ok(params);
        }
        loop {
            let ty = self.expect_ident("a parameter type")?;
            let name = self.expect_ident("a parameter name")?;
            let is_array = if self.eat(&Token::LBracket) {
                self.expect(Token::RBracket, "`]`")?;
                true
            } else {
                false
            };
            params.push(ParamDecl { ty, name, is_array });
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        Ok(params)
    }

    fn app_decl(&mut self) -> PResult<AppDecl> {
        let start = self.span();
        self.advance(); // `app`
        self.expect(Token::LParen, "`(` before the output parameters")?;
        let outputs = self.param_list()?;
        self.expect(Token::RParen, "`)`")?;
        if outputs.is_empty() {
            self.errors.push(Diagnostic {
                span: start,
                message: "app declarations must name at least one output parameter".into(),
            });
        }
        let name = self.expect_ident("the app name")?;
        self.expect(Token::LParen, "`(`")?;
        let inputs = self.param_list()?;
        self.expect(Token::RParen, "`)`")?;
        self.expect(Token::LBrace, "`{` starting the command template")?;
        let mut command = Vec::new();
        loop {
            match self.peek().clone() {
                Token::Str(s) => {
                    let span = self.span();
                    self.advance();
                    command.push(CmdWord::Lit(s, span));
                }
                Token::Ident(text) => {
                    let span = self.span();
                    self.advance();
                    command.push(CmdWord::Ref(Ident { text, span }));
                }
                Token::RBrace => {
                    self.advance();
                    break;
                }
                other => {
                    let span = self.span();
                    return Err(self.error_at(
                        span,
                        format!(
                            "command templates hold string literals and parameter names, found {}",
                            other.describe()
                        ),
                    ));
                }
            }
        }
        if command.is_empty() {
            self.errors.push(Diagnostic {
                span: start,
                message: format!("app `{}` has an empty command template", name.text),
            });
        }
        Ok(AppDecl {
            name,
            outputs,
            inputs,
            command,
            span: start,
        })
    }

    fn var_decl(&mut self) -> PResult<VarDecl> {
        let start = self.span();
        let volatile = self.eat(&Token::KwVolatile);
        let ty = self.expect_ident("a type name")?;
        let name = self.expect_ident("a variable name")?;
        let is_array = if self.eat(&Token::LBracket) {
            self.expect(Token::RBracket, "`]`")?;
            true
        } else {
            false
        };
        let mapping = if matches!(self.peek(), Token::Lt) {
            let mspan = self.span();
            self.advance();
            let mut parts = Vec::new();
            loop {
                match self.peek().clone() {
                    Token::Str(s) => {
                        let span = self.span();
                        self.advance();
                        parts.push((s, span));
                    }
                    other => {
                        let span = self.span();
                        return Err(self.error_at(
                            span,
                            format!("expected a string literal in mapping, found {}", other.describe()),
                        ));
                    }
                }
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
            self.expect(Token::Gt, "`>` closing the mapping")?;
            Some(Mapping { parts, span: mspan })
        } else {
            None
        };
        let init = if self.eat(&Token::Eq) {
            Some(self.expr()?)
        } else {
            None
        };
        self.expect(Token::Semi, "`;`")?;
        Ok(VarDecl {
            volatile,
            ty,
            name,
            is_array,
            mapping,
            init,
            span: start,
        })
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let name = self.expect_ident("an output variable")?;
        let index = if self.eat(&Token::LBracket) {
            let e = self.expr()?;
            self.expect(Token::RBracket, "`]`")?;
            Some(e)
        } else {
            None
        };
        Ok(LValue { name, index })
    }

    fn call_stmt(&mut self) -> PResult<CallStmt> {
        let start = self.span();
        self.expect(Token::LParen, "`(`")?;
        let mut outs = vec![self.lvalue()?];
        while self.eat(&Token::Comma) {
            outs.push(self.lvalue()?);
        }
        self.expect(Token::RParen, "`)`")?;
        self.expect(Token::Eq, "`=`")?;
        let app = self.expect_ident("an app name")?;
        self.expect(Token::LParen, "`(`")?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Token::RParen) {
            loop {
                args.push(self.arg()?);
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
        }
        self.expect(Token::RParen, "`)`")?;
        let mut annotations = Vec::new();
        while self.eat(&Token::At) {
            let name = self.expect_ident("an annotation name")?;
            self.expect(Token::LParen, "`(`")?;
            let value = self.expr()?;
            self.expect(Token::RParen, "`)`")?;
            annotations.push(Annotation { name, value });
        }
        self.expect(Token::Semi, "`;`")?;
        Ok(CallStmt {
            outs,
            app,
            args,
            annotations,
            span: start,
        })
    }

    /// An argument is an expression, or an array slice `a[lo:hi]`.
    fn arg(&mut self) -> PResult<Arg> {
        // Look ahead for `ident [ expr : ...` to distinguish slices from
        // element indexing.
        if let Token::Ident(_) = self.peek() {
            if matches!(self.peek_at(1), Token::LBracket) {
                // scan for a `:` before the matching `]`
                let mut depth = 0usize;
                let mut i = self.pos + 1;
                let is_slice = loop {
                    match &self.tokens[i.min(self.tokens.len() - 1)].token {
                        Token::LBracket => depth += 1,
                        Token::RBracket => {
                            depth -= 1;
                            if depth == 0 {
                                break false;
                            }
                        }
                        Token::Colon if depth == 1 => break true,
                        Token::Eof | Token::Semi => break false,
                        _ => {}
                    }
                    i += 1;
                };
                if is_slice {
                    let span = self.span();
                    let name = self.expect_ident("an array name")?;
                    self.expect(Token::LBracket, "`[`")?;
                    let lo = self.expr()?;
                    self.expect(Token::Colon, "`:`")?;
                    let hi = self.expr()?;
                    self.expect(Token::RBracket, "`]`")?;
                    return Ok(Arg::Slice { name, lo, hi, span });
                }
            }
        }
        Ok(Arg::Expr(self.expr()?))
    }

    fn foreach_stmt(&mut self) -> PResult<ForeachStmt> {
        let start = self.span();
        self.advance(); // `foreach`
        let var = self.expect_ident("a loop variable")?;
        let index_var = if self.eat(&Token::Comma) {
            Some(self.expect_ident("an index variable")?)
        } else {
            None
        };
        self.expect(Token::KwIn, "`in`")?;
        self.expect(Token::LBracket, "`[`")?;
        let first = self.expr()?;
        let range = if self.eat(&Token::Colon) {
            let hi = self.expr()?;
            self.expect(Token::RBracket, "`]`")?;
            RangeOrArray::Range { lo: first, hi }
        } else {
            let mut elems = vec![first];
            while self.eat(&Token::Comma) {
                elems.push(self.expr()?);
            }
            self.expect(Token::RBracket, "`]`")?;
            RangeOrArray::Array(elems)
        };
        self.expect(Token::LBrace, "`{`")?;
        let mut body = Vec::new();
        while !matches!(self.peek(), Token::RBrace | Token::Eof) {
            let stmt = match self.peek() {
                Token::LParen => self.call_stmt().map(Stmt::Call),
                Token::KwForeach => self.foreach_stmt().map(Stmt::Foreach),
                other => {
                    let msg = format!(
                        "foreach bodies hold call or foreach statements, found {}",
                        other.describe()
                    );
                    let span = self.span();
                    Err(self.error_at(span, msg))
                }
            };
            match stmt {
                Ok(s) => body.push(s),
                Err(Recover) => self.synchronize(),
            }
        }
        self.expect(Token::RBrace, "`}` closing the foreach body")?;
        Ok(ForeachStmt {
            var,
            index_var,
            range,
            body,
            span: start,
        })
    }

    // precedence-climbing expression parser
    fn expr(&mut self) -> PResult<Expr> {
        self.additive()
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.multiplicative()?;
            let span = lhs.span();
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                Token::Percent => BinOp::Mod,
                _ => break,
            };
            self.advance();
            let rhs = self.unary()?;
            let span = lhs.span();
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if matches!(self.peek(), Token::Minus) {
            let span = self.span();
            self.advance();
            let expr = self.unary()?;
            return Ok(Expr::Neg {
                expr: Box::new(expr),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Token::Int(v) => {
                let span = self.span();
                self.advance();
                Ok(Expr::Int(v, span))
            }
            Token::Float(v) => {
                let span = self.span();
                self.advance();
                Ok(Expr::Float(v, span))
            }
            Token::Str(s) => {
                let span = self.span();
                self.advance();
                Ok(Expr::Str(s, span))
            }
            Token::Ident(text) => {
                let span = self.span();
                self.advance();
                let id = Ident { text, span };
                if self.eat(&Token::LBracket) {
                    let index = self.expr()?;
                    self.expect(Token::RBracket, "`]`")?;
                    Ok(Expr::Index {
                        name: id,
                        index: Box::new(index),
                        span,
                    })
                } else {
                    Ok(Expr::Var(id))
                }
            }
            Token::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(e)
            }
            other => {
                let span = self.span();
                let _ = self.prev_span();
                Err(self.error_at(span, format!("expected an expression, found {}", other.describe())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program_parses() {
        let ast = parse("type file;").unwrap();
        assert_eq!(ast.items.len(), 1);
        assert!(matches!(ast.items[0], Item::Type(_)));
    }

    #[test]
    fn app_decl_shapes() {
        let ast = parse(r#"app (file o) f(file i) { "cp" i o }"#).unwrap();
        let Item::App(app) = &ast.items[0] else {
            panic!("expected app decl");
        };
        assert_eq!(app.name.text, "f");
        assert_eq!(app.outputs.len(), 1);
        assert_eq!(app.inputs.len(), 1);
        assert_eq!(app.command.len(), 3);
    }

    #[test]
    fn missing_mapping_close_reports_span_on_line_one() {
        let errs = parse(r#"file x <"a.dat"; "#).unwrap_err();
        assert!(!errs.is_empty());
        assert_eq!(errs[0].span.line, 1);
    }

    #[test]
    fn multiple_errors_are_collected() {
        let src = "type ;\nfile x <\"a\";\n";
        let errs = parse(src).unwrap_err();
        assert!(errs.len() >= 2, "expected 2+ errors, got {errs:?}");
        assert_eq!(errs[0].span.line, 1);
        assert!(errs.iter().any(|e| e.span.line == 2));
    }

    #[test]
    fn foreach_and_annotations() {
        let src = r#"
type file;
app (file o) f(file i) { "cp" i o }
file a[];
file x <"in.dat">;
foreach t, i in [0:9] {
  (a[t]) = f(x) @duration(1.5) @width(2);
}
"#;
        let ast = parse(src).unwrap();
        let Item::Stmt(Stmt::Foreach(f)) = &ast.items[4] else {
            panic!("expected foreach");
        };
        assert_eq!(f.var.text, "t");
        assert_eq!(f.index_var.as_ref().unwrap().text, "i");
        let Stmt::Call(c) = &f.body[0] else {
            panic!("expected call");
        };
        assert_eq!(c.annotations.len(), 2);
    }

    #[test]
    fn slice_arguments_parse() {
        let src = r#"(y) = m(c, parts[t * 8:t * 8 + 7]);"#;
        let ast = parse(src).unwrap();
        let Item::Stmt(Stmt::Call(c)) = &ast.items[0] else {
            panic!()
        };
        assert!(matches!(c.args[1], Arg::Slice { .. }));
    }

    #[test]
    fn unparse_round_trips() {
        let src = r#"
type file;
app (file o) f(file i, int n) { "prog" "-n" n i o }
volatile file tmp;
file a[] <"out/a_", ".dat">;
int k = 4 * (1 + 2);
foreach t in [0:3] {
  (a[t]) = f(tmp, k) @duration(0.5);
}
"#;
        let ast = parse(src).unwrap();
        let text = ast.unparse();
        let reparsed = parse(&text).unwrap();
        assert_eq!(ast.stripped(), reparsed.stripped());
        // canonical form is a fixed point
        assert_eq!(text, reparsed.unparse());
    }
}
