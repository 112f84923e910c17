//! Recursive-descent parser for the grammar in `docs/sql-grammar.md`.

use std::fmt;

use super::ast::{CmpOp, ColumnDef, ColumnType, Comparison, Projection, Statement, Value};
use super::lexer::{tokenize, Keyword, Tok, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    /// Text of the offending token.
    pub token: String,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at line {}, column {} near '{}': {}", self.line, self.col, self.token, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Parse exactly one statement, optionally followed by `;`.
pub fn parse(text: &str) -> Result<Statement, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let stmt = p.statement()?;
    if p.peek() == &Tok::Semi {
        p.pos += 1;
    }
    if p.peek() != &Tok::Eof {
        return Err(p.error("expected end of statement"));
    }
    Ok(stmt)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn error(&self, message: &str) -> ParseError {
        let t = &self.tokens[self.pos];
        ParseError { line: t.line, col: t.col, token: t.tok.to_string(), message: message.to_string() }
    }

    fn next(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn keyword(&mut self, k: Keyword) -> PResult<()> {
        self.expect(Tok::Keyword(k), k.as_str())
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(s)
            }
            Tok::Keyword(k) => {
                Err(self.error(&format!("reserved word {} cannot be used as {what}", k.as_str())))
            }
            _ => Err(self.error(&format!("expected {what}"))),
        }
    }

    fn statement(&mut self) -> PResult<Statement> {
        match self.next() {
            Tok::Keyword(Keyword::Create) => match self.next() {
                Tok::Keyword(Keyword::Table) => self.create_table(),
                Tok::Keyword(Keyword::Index) => self.create_index(),
                _ => {
                    self.pos -= 1;
                    Err(self.error("expected TABLE or INDEX"))
                }
            },
            Tok::Keyword(Keyword::Insert) => self.insert(),
            Tok::Keyword(Keyword::Select) => self.select(),
            Tok::Keyword(Keyword::Update) => self.update(),
            Tok::Keyword(Keyword::Delete) => self.delete(),
            Tok::Keyword(Keyword::Begin) => Ok(Statement::Begin),
            Tok::Keyword(Keyword::Commit) => Ok(Statement::Commit),
            Tok::Keyword(Keyword::Rollback) => Ok(Statement::Rollback),
            Tok::Eof => Err(self.error("expected a statement")),
            _ => {
                self.pos -= 1;
                Err(self.error("expected a statement"))
            }
        }
    }

    fn create_table(&mut self) -> PResult<Statement> {
        let name = self.ident("a table name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut columns = Vec::new();
        loop {
            let col = self.ident("a column name")?;
            let ty = match self.peek() {
                Tok::Keyword(Keyword::Int) => ColumnType::Int,
                Tok::Keyword(Keyword::Text) => ColumnType::Text,
                Tok::Keyword(Keyword::Float) => ColumnType::Float,
                _ => return Err(self.error("expected a column type (INT, TEXT or FLOAT)")),
            };
            self.pos += 1;
            let primary_key = if self.eat(&Tok::Keyword(Keyword::Primary)) {
                self.keyword(Keyword::Key)?;
                true
            } else {
                false
            };
            columns.push(ColumnDef { name: col, ty, primary_key });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen, "',' or ')'")?;
        Ok(Statement::CreateTable { name, columns })
    }

    fn create_index(&mut self) -> PResult<Statement> {
        let name = self.ident("an index name")?;
        self.keyword(Keyword::On)?;
        let table = self.ident("a table name")?;
        self.expect(Tok::LParen, "'('")?;
        let column = self.ident("a column name")?;
        self.expect(Tok::RParen, "')'")?;
        Ok(Statement::CreateIndex { name, table, column })
    }

    fn insert(&mut self) -> PResult<Statement> {
        self.keyword(Keyword::Into)?;
        let table = self.ident("a table name")?;
        let columns = if self.eat(&Tok::LParen) {
            let mut cols = vec![self.ident("a column name")?];
            while self.eat(&Tok::Comma) {
                cols.push(self.ident("a column name")?);
            }
            self.expect(Tok::RParen, "',' or ')'")?;
            Some(cols)
        } else {
            None
        };
        self.keyword(Keyword::Values)?;
        self.expect(Tok::LParen, "'('")?;
        let mut values = vec![self.literal()?];
        while self.eat(&Tok::Comma) {
            values.push(self.literal()?);
        }
        self.expect(Tok::RParen, "',' or ')'")?;
        Ok(Statement::Insert { table, columns, values })
    }

    fn select(&mut self) -> PResult<Statement> {
        let projection = if self.eat(&Tok::Star) {
            Projection::All
        } else {
            let mut cols = vec![self.ident("a column name or '*'")?];
            while self.eat(&Tok::Comma) {
                cols.push(self.ident("a column name")?);
            }
            Projection::Columns(cols)
        };
        self.keyword(Keyword::From)?;
        let table = self.ident("a table name")?;
        let predicate = self.where_clause()?;
        let order_by = if self.eat(&Tok::Keyword(Keyword::Order)) {
            self.keyword(Keyword::By)?;
            let col = self.ident("a column name")?;
            self.eat(&Tok::Keyword(Keyword::Asc));
            Some(col)
        } else {
            None
        };
        let limit = if self.eat(&Tok::Keyword(Keyword::Limit)) {
            match self.peek() {
                Tok::Int(n) => {
                    let n = *n;
                    self.pos += 1;
                    Some(n)
                }
                _ => return Err(self.error("expected a non-negative integer")),
            }
        } else {
            None
        };
        Ok(Statement::Select { projection, table, predicate, order_by, limit })
    }

    fn update(&mut self) -> PResult<Statement> {
        let table = self.ident("a table name")?;
        self.keyword(Keyword::Set)?;
        let mut assignments = Vec::new();
        loop {
            let col = self.ident("a column name")?;
            self.expect(Tok::Eq, "'='")?;
            assignments.push((col, self.literal()?));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let predicate = self.where_clause()?;
        Ok(Statement::Update { table, assignments, predicate })
    }

    fn delete(&mut self) -> PResult<Statement> {
        self.keyword(Keyword::From)?;
        let table = self.ident("a table name")?;
        let predicate = self.where_clause()?;
        Ok(Statement::Delete { table, predicate })
    }

    fn where_clause(&mut self) -> PResult<Vec<Comparison>> {
        let mut out = Vec::new();
        if !self.eat(&Tok::Keyword(Keyword::Where)) {
            return Ok(out);
        }
        loop {
            let column = self.ident("a column name")?;
            let op = match self.peek() {
                Tok::Eq => CmpOp::Eq,
                Tok::Lt => CmpOp::Lt,
                Tok::Le => CmpOp::Le,
                Tok::Gt => CmpOp::Gt,
                Tok::Ge => CmpOp::Ge,
                _ => return Err(self.error("expected a comparison operator")),
            };
            self.pos += 1;
            let value = self.literal()?;
            out.push(Comparison { column, op, value });
            if !self.eat(&Tok::Keyword(Keyword::And)) {
                return Ok(out);
            }
        }
    }

    fn literal(&mut self) -> PResult<Value> {
        let negative = self.eat(&Tok::Minus);
        let v = match self.peek().clone() {
            Tok::Int(n) => {
                let v = if negative {
                    if n > 1u64 << 63 {
                        return Err(self.error("integer literal out of range"));
                    }
                    (n as i64).wrapping_neg()
                } else {
                    i64::try_from(n).map_err(|_| self.error("integer literal out of range"))?
                };
                Value::Int(v)
            }
            Tok::Float(x) => Value::Float(if negative { -x } else { x }),
            Tok::Str(s) if !negative => Value::Text(s),
            _ if negative => return Err(self.error("expected a number")),
            _ => return Err(self.error("expected a literal")),
        };
        self.pos += 1;
        Ok(v)
    }
}
