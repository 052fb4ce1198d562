//! Hand-rolled lexer. Tracks line/column so parse errors can point at source.

use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    KwFunction,
    KwConst,
    KwFor,
    KwIn,
    KwIf,
    KwElse,
    KwObserve,
    KwApprox,
    KwExact,
    KwGaussian,
    KwBernoulli,
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Arrow, // <-
    DotDot,
    Plus,
    Minus,
    Star,
    Eq,
    Eof,
}

impl Tok {
    /// Human-readable form used in "expected ..." lists.
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::KwFunction => "`function`".into(),
            Tok::KwConst => "`const`".into(),
            Tok::KwFor => "`for`".into(),
            Tok::KwIn => "`in`".into(),
            Tok::KwIf => "`if`".into(),
            Tok::KwElse => "`else`".into(),
            Tok::KwObserve => "`observe`".into(),
            Tok::KwApprox => "`approx`".into(),
            Tok::KwExact => "`exact`".into(),
            Tok::KwGaussian => "`gaussian`".into(),
            Tok::KwBernoulli => "`bernoulli`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Arrow => "`<-`".into(),
            Tok::DotDot => "`..`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! push {
        ($tok:expr, $span:expr) => {
            out.push(Token { tok: $tok, span: $span })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' => {
                push!(Tok::LBrace, span);
                i += 1;
                col += 1;
            }
            '}' => {
                push!(Tok::RBrace, span);
                i += 1;
                col += 1;
            }
            '(' => {
                push!(Tok::LParen, span);
                i += 1;
                col += 1;
            }
            ')' => {
                push!(Tok::RParen, span);
                i += 1;
                col += 1;
            }
            '[' => {
                push!(Tok::LBracket, span);
                i += 1;
                col += 1;
            }
            ']' => {
                push!(Tok::RBracket, span);
                i += 1;
                col += 1;
            }
            ';' => {
                push!(Tok::Semi, span);
                i += 1;
                col += 1;
            }
            ',' => {
                push!(Tok::Comma, span);
                i += 1;
                col += 1;
            }
            '+' => {
                push!(Tok::Plus, span);
                i += 1;
                col += 1;
            }
            '*' => {
                push!(Tok::Star, span);
                i += 1;
                col += 1;
            }
            '=' => {
                push!(Tok::Eq, span);
                i += 1;
                col += 1;
            }
            '<' if chars.get(i + 1) == Some(&'-') => {
                push!(Tok::Arrow, span);
                i += 2;
                col += 2;
            }
            '-' => {
                push!(Tok::Minus, span);
                i += 1;
                col += 1;
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                push!(Tok::DotDot, span);
                i += 2;
                col += 2;
            }
            '.' if chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                let (tok, len) = lex_number(&chars[i..], span)?;
                push!(tok, span);
                i += len;
                col += len as u32;
            }
            c if c.is_ascii_digit() => {
                let (tok, len) = lex_number(&chars[i..], span)?;
                push!(tok, span);
                i += len;
                col += len as u32;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                col += (i - start) as u32;
                let tok = match word.as_str() {
                    "function" => Tok::KwFunction,
                    "const" => Tok::KwConst,
                    "for" => Tok::KwFor,
                    "in" => Tok::KwIn,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    "observe" => Tok::KwObserve,
                    "approx" => Tok::KwApprox,
                    "exact" => Tok::KwExact,
                    "gaussian" => Tok::KwGaussian,
                    "bernoulli" => Tok::KwBernoulli,
                    _ => Tok::Ident(word),
                };
                push!(tok, span);
            }
            other => {
                return Err(ParseError::BadChar {
                    ch: other,
                    line: span.line,
                    col: span.col,
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, col },
    });
    Ok(out)
}

/// Numbers: `12`, `12.`, `.5`, `1.25`. A `.` that starts a `..` range is not
/// consumed, so `1 .. N` and `1..N` both lex.
fn lex_number(chars: &[char], span: Span) -> Result<(Tok, usize), ParseError> {
    let mut i = 0;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' && chars.get(i + 1) != Some(&'.') {
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
    }
    let text: String = chars[..i].iter().collect();
    let value: f64 = text.parse().map_err(|_| ParseError::BadNumber {
        text: text.clone(),
        line: span.line,
        col: span.col,
    })?;
    Ok((Tok::Number(value), i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_forms() {
        let toks = lex("0. 100. .1 1.25 7").unwrap();
        let nums: Vec<f64> = toks
            .iter()
            .filter_map(|t| match t.tok {
                Tok::Number(n) => Some(n),
                _ => None,
            })
            .collect();
        assert_eq!(nums, vec![0.0, 100.0, 0.1, 1.25, 7.0]);
    }

    #[test]
    fn range_vs_float_dots() {
        let toks = lex("1 .. N").unwrap();
        assert_eq!(toks[1].tok, Tok::DotDot);
        let toks = lex("1..N").unwrap();
        assert_eq!(toks[1].tok, Tok::DotDot);
    }

    #[test]
    fn arrow_and_spans() {
        let toks = lex("x <- gaussian\n(0., 1.)").unwrap();
        assert_eq!(toks[1].tok, Tok::Arrow);
        assert_eq!(toks[3].span, Span { line: 2, col: 1 });
    }

    #[test]
    fn comments_skipped() {
        let toks = lex("x // trailing\ny").unwrap();
        assert_eq!(toks.len(), 3); // x, y, eof
    }
}
