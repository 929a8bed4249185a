//! Tokenizer for `.mf` scripts.

use super::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    // keywords
    KwType,
    KwApp,
    KwForeach,
    KwIn,
    KwVolatile,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Comma,
    Semi,
    Colon,
    Eq,
    At,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Eof,
}

impl Token {
    pub fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Int(v) => format!("integer `{v}`"),
            Token::Float(v) => format!("float `{v}`"),
            Token::Str(_) => "string literal".into(),
            Token::KwType => "`type`".into(),
            Token::KwApp => "`app`".into(),
            Token::KwForeach => "`foreach`".into(),
            Token::KwIn => "`in`".into(),
            Token::KwVolatile => "`volatile`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::LBrace => "`{`".into(),
            Token::RBrace => "`}`".into(),
            Token::LBracket => "`[`".into(),
            Token::RBracket => "`]`".into(),
            Token::Lt => "`<`".into(),
            Token::Gt => "`>`".into(),
            Token::Comma => "`,`".into(),
            Token::Semi => "`;`".into(),
            Token::Colon => "`:`".into(),
            Token::Eq => "`=`".into(),
            Token::At => "`@`".into(),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::Percent => "`%`".into(),
            Token::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpannedToken {
    pub token: Token,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

/// Tokenize source text. Lex errors are collected, not fatal; the bad byte
/// is skipped so parsing can keep reporting later problems.
pub fn tokenize(source: &str) -> (Vec<SpannedToken>, Vec<Diagnostic>) {
    let mut lx = Lexer {
        src: source.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    loop {
        lx.skip_trivia();
        let start = lx.mark();
        if lx.pos >= lx.src.len() {
            tokens.push(SpannedToken {
                token: Token::Eof,
                span: lx.span_from(start),
            });
            break;
        }
        let c = lx.src[lx.pos];
        match c {
            b'(' => lx.punct(&mut tokens, Token::LParen),
            b')' => lx.punct(&mut tokens, Token::RParen),
            b'{' => lx.punct(&mut tokens, Token::LBrace),
            b'}' => lx.punct(&mut tokens, Token::RBrace),
            b'[' => lx.punct(&mut tokens, Token::LBracket),
            b']' => lx.punct(&mut tokens, Token::RBracket),
            b'<' => lx.punct(&mut tokens, Token::Lt),
            b'>' => lx.punct(&mut tokens, Token::Gt),
            b',' => lx.punct(&mut tokens, Token::Comma),
            b';' => lx.punct(&mut tokens, Token::Semi),
            b':' => lx.punct(&mut tokens, Token::Colon),
            b'=' => lx.punct(&mut tokens, Token::Eq),
            b'@' => lx.punct(&mut tokens, Token::At),
            b'+' => lx.punct(&mut tokens, Token::Plus),
            b'-' => lx.punct(&mut tokens, Token::Minus),
            b'*' => lx.punct(&mut tokens, Token::Star),
            b'/' => lx.punct(&mut tokens, Token::Slash),
            b'%' => lx.punct(&mut tokens, Token::Percent),
            b'"' => match lx.string() {
                Ok(s) => tokens.push(SpannedToken {
                    token: Token::Str(s),
                    span: lx.span_from(start),
                }),
                Err(msg) => errors.push(Diagnostic {
                    span: lx.span_from(start),
                    message: msg,
                }),
            },
            b'0'..=b'9' => {
                let (tok, err) = lx.number();
                match tok {
                    Some(t) => tokens.push(SpannedToken {
                        token: t,
                        span: lx.span_from(start),
                    }),
                    None => errors.push(Diagnostic {
                        span: lx.span_from(start),
                        message: err.unwrap_or_else(|| "bad number".into()),
                    }),
                }
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                let word = lx.word();
                let tok = match word {
                    "type" => Token::KwType,
                    "app" => Token::KwApp,
                    "foreach" => Token::KwForeach,
                    "in" => Token::KwIn,
                    "volatile" => Token::KwVolatile,
                    w => Token::Ident(w.to_string()),
                };
                tokens.push(SpannedToken {
                    token: tok,
                    span: lx.span_from(start),
                });
            }
            other => {
                lx.bump();
                errors.push(Diagnostic {
                    span: lx.span_from(start),
                    message: format!("unexpected character `{}`", other as char),
                });
            }
        }
    }
    (tokens, errors)
}

struct Mark {
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn mark(&self) -> Mark {
        Mark {
            pos: self.pos,
            line: self.line,
            col: self.col,
        }
    }

    fn span_from(&self, m: Mark) -> Span {
        Span {
            line: m.line,
            col: m.col,
            offset: m.pos as u32,
            len: (self.pos - m.pos) as u32,
        }
    }

    fn bump(&mut self) {
        if self.pos < self.src.len() {
            if self.src[self.pos] == b'\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
            self.pos += 1;
        }
    }

    fn punct(&mut self, out: &mut Vec<SpannedToken>, tok: Token) {
        let m = self.mark();
        self.bump();
        out.push(SpannedToken {
            token: tok,
            span: self.span_from(m),
        });
    }

    fn skip_trivia(&mut self) {
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.bump();
            }
            // line comments: `#` or `//`
            if self.pos < self.src.len() && self.src[self.pos] == b'#' {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.bump();
                }
                continue;
            }
            if self.pos + 1 < self.src.len() && &self.src[self.pos..self.pos + 2] == b"//" {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.bump();
                }
                continue;
            }
            break;
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos] == b'_' || self.src[self.pos].is_ascii_alphanumeric())
        {
            self.bump();
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap()
    }

    fn number(&mut self) -> (Option<Token>, Option<String>) {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.bump();
        }
        let mut is_float = false;
        if self.pos + 1 < self.src.len()
            && self.src[self.pos] == b'.'
            && self.src[self.pos + 1].is_ascii_digit()
        {
            is_float = true;
            self.bump();
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.bump();
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if is_float {
            match text.parse::<f64>() {
                Ok(v) => (Some(Token::Float(v)), None),
                Err(_) => (None, Some(format!("bad float literal `{text}`"))),
            }
        } else {
            match text.parse::<i64>() {
                Ok(v) => (Some(Token::Int(v)), None),
                Err(_) => (None, Some(format!("integer literal `{text}` out of range"))),
            }
        }
    }

    fn string(&mut self) -> Result<String, String> {
        self.bump(); // opening quote
        let mut out = String::new();
        loop {
            if self.pos >= self.src.len() {
                return Err("unterminated string literal".into());
            }
            match self.src[self.pos] {
                b'"' => {
                    self.bump();
                    return Ok(out);
                }
                b'\n' => return Err("unterminated string literal".into()),
                b'\\' => {
                    self.bump();
                    if self.pos >= self.src.len() {
                        return Err("unterminated string literal".into());
                    }
                    let esc = self.src[self.pos];
                    self.bump();
                    match esc {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'n' => out.push('\n'),
                        b't' => out.push('\t'),
                        other => return Err(format!("unknown escape `\\{}`", other as char)),
                    }
                }
                _ => {
                    // multi-byte UTF-8 passes through untouched
                    let ch_start = self.pos;
                    self.bump();
                    while self.pos < self.src.len() && (self.src[self.pos] & 0xc0) == 0x80 {
                        self.bump();
                    }
                    out.push_str(std::str::from_utf8(&self.src[ch_start..self.pos]).unwrap());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Token> {
        let (toks, errs) = tokenize(src);
        assert!(errs.is_empty(), "unexpected lex errors: {errs:?}");
        toks.into_iter().map(|t| t.token).collect()
    }

    #[test]
    fn lexes_declaration() {
        assert_eq!(
            kinds("type file;"),
            vec![
                Token::KwType,
                Token::Ident("file".into()),
                Token::Semi,
                Token::Eof
            ]
        );
    }

    #[test]
    fn lexes_numbers_and_strings() {
        assert_eq!(
            kinds(r#"12 3.5 "a\"b""#),
            vec![
                Token::Int(12),
                Token::Float(3.5),
                Token::Str("a\"b".into()),
                Token::Eof
            ]
        );
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(
            kinds("# hello\n// world\nfoo"),
            vec![Token::Ident("foo".into()), Token::Eof]
        );
    }

    #[test]
    fn unterminated_string_is_reported_with_span() {
        let (_, errs) = tokenize("file x <\"a.dat\n");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].span.line, 1);
    }

    #[test]
    fn spans_track_lines_and_columns() {
        let (toks, _) = tokenize("a\n  bb");
        assert_eq!(toks[0].span.line, 1);
        assert_eq!(toks[0].span.col, 1);
        assert_eq!(toks[1].span.line, 2);
        assert_eq!(toks[1].span.col, 3);
        assert_eq!(toks[1].span.len, 2);
    }
}
