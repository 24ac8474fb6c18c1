//! Recursive-descent parser for the collective-variable grammar:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")" | "-" factor
//! ```
//!
//! Variables are `x0`, `x1`, ...; functions are `sin`, `cos`, `exp`, `sig`.

use super::ast::{Expr, Func, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if let Some(tok) = simple {
            out.push(Token {
                tok,
                line: start_line,
                column: start_col,
            });
            i += 1;
            col += 1;
            continue;
        }
        let begin = i;
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                } else {
                    return Err(syntax(line, col + (j - begin), "malformed exponent"));
                }
            }
            let s: String = chars[begin..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| syntax(start_line, start_col, format!("malformed number `{s}`")))?;
            out.push(Token {
                tok: Tok::Num(v),
                line: start_line,
                column: start_col,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[begin..i].iter().collect()),
                line: start_line,
                column: start_col,
            });
        } else {
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        }
        col += i - begin;
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    expr: Expr,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let t = self.bump();
        if t.tok != want {
            return Err(syntax(t.line, t.column, format!("expected {what}, found {}", describe(&t.tok))));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<NodeId> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = self.expr.add(lhs, rhs);
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = self.expr.sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<NodeId> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = self.expr.mul(lhs, rhs);
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = self.expr.div(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<NodeId> {
        let t = self.bump();
        match t.tok {
            Tok::Num(v) => Ok(self.expr.num(v)),
            Tok::Minus => {
                let a = self.factor()?;
                Ok(self.expr.neg(a))
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    let f = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier {
                        name: name.clone(),
                        line: t.line,
                        column: t.column,
                    })?;
                    self.bump();
                    let a = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(self.expr.call(f, a))
                } else if let Some(i) = variable_index(&name) {
                    Ok(self.expr.var(i))
                } else if Func::from_name(&name).is_some() {
                    Err(syntax(t.line, t.column, format!("function `{name}` needs an argument")))
                } else {
                    Err(Error::UnknownIdentifier {
                        name,
                        line: t.line,
                        column: t.column,
                    })
                }
            }
            other => Err(syntax(t.line, t.column, format!("unexpected {}", describe(&other)))),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

pub fn parse(text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        expr: Expr::new(),
    };
    let root = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return Err(syntax(t.line, t.column, format!("unexpected {}", describe(&t.tok))));
    }
    // Every node is pushed after its children, so the top-level node is last.
    debug_assert_eq!(root, p.expr.root());
    Ok(p.expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_simple_text() {
        assert_eq!(parse("sin(x0)+2").unwrap().eval(&[0.0]), 2.0);
        assert_eq!(parse("1 - 2 - 3").unwrap().eval(&[]), -4.0);
        assert_eq!(parse("8/4/2").unwrap().eval(&[]), 1.0);
        assert_eq!(parse("2+3*4").unwrap().eval(&[]), 14.0);
        assert_eq!(parse("-x1*2").unwrap().eval(&[0.0, 3.0]), -6.0);
        assert_eq!(parse("--2").unwrap().eval(&[]), 2.0);
        assert_eq!(parse("1.5e2 + 2E-1").unwrap().eval(&[]), 150.2);
    }

    #[test]
    fn malformed_inputs_carry_positions() {
        let cases: &[(&str, usize, usize)] = &[
            ("x0 +", 1, 5),
            ("(x0", 1, 4),
            ("x0 $ 1", 1, 4),
            ("sin x0", 1, 1),
            ("1 2", 1, 3),
            ("x0\n  * )", 2, 5),
            ("", 1, 1),
            ("1e+", 1, 4),
        ];
        for (text, line, col) in cases {
            match parse(text) {
                Err(Error::Syntax { line: l, column: c, .. }) => {
                    assert_eq!((l, c), (*line, *col), "for {text:?}")
                }
                other => panic!("{text:?}: expected syntax error, got {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_identifiers() {
        for text in ["y + 1", "tanh(x0)", "x0 * foo", "xa"] {
            assert!(
                matches!(parse(text), Err(Error::UnknownIdentifier { .. })),
                "{text}"
            );
        }
        match parse("1 +\n  bar") {
            Err(Error::UnknownIdentifier { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
    }
}
