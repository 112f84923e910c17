//! Tokenizer. Keywords are case-insensitive; identifiers keep their case.

use std::fmt;

use super::ParseError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keyword {
    And,
    Asc,
    Begin,
    By,
    Commit,
    Create,
    Delete,
    Float,
    From,
    Index,
    Insert,
    Int,
    Into,
    Key,
    Limit,
    On,
    Order,
    Primary,
    Rollback,
    Select,
    Set,
    Table,
    Text,
    Update,
    Values,
    Where,
}

const KEYWORDS: &[(&str, Keyword)] = &[
    ("AND", Keyword::And),
    ("ASC", Keyword::Asc),
    ("BEGIN", Keyword::Begin),
    ("BY", Keyword::By),
    ("COMMIT", Keyword::Commit),
    ("CREATE", Keyword::Create),
    ("DELETE", Keyword::Delete),
    ("FLOAT", Keyword::Float),
    ("FROM", Keyword::From),
    ("INDEX", Keyword::Index),
    ("INSERT", Keyword::Insert),
    ("INT", Keyword::Int),
    ("INTO", Keyword::Into),
    ("KEY", Keyword::Key),
    ("LIMIT", Keyword::Limit),
    ("ON", Keyword::On),
    ("ORDER", Keyword::Order),
    ("PRIMARY", Keyword::Primary),
    ("ROLLBACK", Keyword::Rollback),
    ("SELECT", Keyword::Select),
    ("SET", Keyword::Set),
    ("TABLE", Keyword::Table),
    ("TEXT", Keyword::Text),
    ("UPDATE", Keyword::Update),
    ("VALUES", Keyword::Values),
    ("WHERE", Keyword::Where),
];

impl Keyword {
    pub fn lookup(word: &str) -> Option<Keyword> {
        KEYWORDS.iter().find(|(w, _)| w.eq_ignore_ascii_case(word)).map(|(_, k)| *k)
    }

    pub fn as_str(self) -> &'static str {
        KEYWORDS.iter().find(|(_, k)| *k == self).map(|(w, _)| *w).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Keyword(Keyword),
    Ident(String),
    /// Unsigned; the parser applies a leading minus.
    Int(u64),
    Float(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semi,
    Star,
    Minus,
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Keyword(k) => f.write_str(k.as_str()),
            Tok::Ident(s) => f.write_str(s),
            Tok::Int(i) => write!(f, "{i}"),
            Tok::Float(x) => write!(f, "{x:?}"),
            Tok::Str(s) => write!(f, "'{s}'"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::Comma => f.write_str(","),
            Tok::Semi => f.write_str(";"),
            Tok::Star => f.write_str("*"),
            Tok::Minus => f.write_str("-"),
            Tok::Eq => f.write_str("="),
            Tok::Lt => f.write_str("<"),
            Tok::Le => f.write_str("<="),
            Tok::Gt => f.write_str(">"),
            Tok::Ge => f.write_str(">="),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor { chars: text.chars().peekable(), line: 1, col: 1 };
    let mut out = Vec::new();
    loop {
        while cur.peek().is_some_and(char::is_whitespace) {
            cur.bump();
        }
        let (line, col) = (cur.line, cur.col);
        let err = |token: String, message: &str| ParseError { line, col, token, message: message.to_string() };
        let Some(c) = cur.bump() else {
            out.push(Token { tok: Tok::Eof, line, col });
            return Ok(out);
        };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '*' => Tok::Star,
            '=' => Tok::Eq,
            '<' if cur.peek() == Some('=') => {
                cur.bump();
                Tok::Le
            }
            '<' => Tok::Lt,
            '>' if cur.peek() == Some('=') => {
                cur.bump();
                Tok::Ge
            }
            '>' => Tok::Gt,
            '-' if cur.peek() == Some('-') => {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
                continue;
            }
            '-' => Tok::Minus,
            '\'' => {
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(err("'".into(), "unterminated string literal")),
                        Some('\'') if cur.peek() == Some('\'') => {
                            cur.bump();
                            s.push('\'');
                        }
                        Some('\'') => break,
                        Some(ch) => s.push(ch),
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() => {
                let mut s = String::from(c);
                let mut is_float = false;
                while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                    s.push(cur.bump().unwrap());
                }
                if cur.peek() == Some('.') {
                    is_float = true;
                    s.push(cur.bump().unwrap());
                    if !cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(err(s, "expected digits after decimal point"));
                    }
                    while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        s.push(cur.bump().unwrap());
                    }
                }
                if matches!(cur.peek(), Some('e' | 'E')) {
                    is_float = true;
                    s.push(cur.bump().unwrap());
                    if matches!(cur.peek(), Some('+' | '-')) {
                        s.push(cur.bump().unwrap());
                    }
                    if !cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(err(s, "expected exponent digits"));
                    }
                    while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        s.push(cur.bump().unwrap());
                    }
                }
                if cur.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    s.push(cur.bump().unwrap());
                    return Err(err(s, "malformed number"));
                }
                if is_float {
                    let x: f64 = s.parse().map_err(|_| err(s.clone(), "malformed number"))?;
                    if !x.is_finite() {
                        return Err(err(s, "float literal out of range"));
                    }
                    Tok::Float(x)
                } else {
                    Tok::Int(s.parse().map_err(|_| err(s.clone(), "integer literal out of range"))?)
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::from(c);
                while cur.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    s.push(cur.bump().unwrap());
                }
                match Keyword::lookup(&s) {
                    Some(k) => Tok::Keyword(k),
                    None => Tok::Ident(s),
                }
            }
            other => return Err(err(other.to_string(), "unexpected character")),
        };
        out.push(Token { tok, line, col });
    }
}

/// Split a script into statements at `;` outside string literals and
/// comments. Each piece keeps its text; blank pieces are dropped.
pub fn split_statements(text: &str) -> (Vec<String>, String) {
    let mut done = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\'' => {
                cur.push(c);
                for d in chars.by_ref() {
                    cur.push(d);
                    if d == '\'' {
                        break;
                    }
                }
            }
            '-' if chars.peek() == Some(&'-') => {
                for d in chars.by_ref() {
                    if d == '\n' {
                        cur.push('\n');
                        break;
                    }
                }
            }
            ';' => {
                if !cur.trim().is_empty() {
                    done.push(std::mem::take(&mut cur));
                }
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    (done, cur)
}
