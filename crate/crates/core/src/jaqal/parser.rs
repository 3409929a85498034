//! Recursive descent parser producing the tree IR.

use super::ast::*;
use super::lexer::{tokenize_into, Token, TokenKind};
use super::number::parse_rational;
use super::JaqalError;

/// Work counters, for checking that parsing stays linear.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub tokens: usize,
    pub nodes: usize,
}

impl ParseStats {
    pub fn ops(&self) -> usize {
        self.tokens + self.nodes
    }
}

pub fn parse_source(src: &str) -> Result<Program, JaqalError> {
    parse_with_stats(src).map(|(p, _)| p)
}

pub fn parse_with_stats(src: &str) -> Result<(Program, ParseStats), JaqalError> {
    let mut tokens = Vec::new();
    tokenize_into(src, &mut tokens)?;
    let mut parser = Parser::new(&tokens);
    let program = parser.program()?;
    Ok((program, parser.stats))
}

pub fn parse(tokens: &[Token<'_>]) -> Result<Program, JaqalError> {
    Parser::new(tokens).program()
}

struct Parser<'t, 'a> {
    tokens: &'t [Token<'a>],
    at: usize,
    stats: ParseStats,
}

enum Context {
    Top,
    Sequential,
    Parallel,
}

impl<'t, 'a> Parser<'t, 'a> {
    fn new(tokens: &'t [Token<'a>]) -> Self {
        Parser {
            tokens,
            at: 0,
            stats: ParseStats::default(),
        }
    }

    fn peek(&self) -> Option<&'t Token<'a>> {
        self.tokens.get(self.at)
    }

    fn bump(&mut self) -> &'t Token<'a> {
        let t = &self.tokens[self.at];
        self.at += 1;
        self.stats.tokens += 1;
        t
    }

    fn last_line(&self) -> u32 {
        if self.at == 0 {
            0
        } else {
            self.tokens[self.at - 1].line
        }
    }

    fn node(&mut self) {
        self.stats.nodes += 1;
    }

    fn error(&self, expected: &str) -> JaqalError {
        match self.peek() {
            Some(t) => JaqalError::Syntax {
                line: t.line,
                column: t.column,
                expected: expected.to_string(),
                found: format!("{} '{}'", t.kind, t.text),
            },
            None => {
                let (line, column) = self
                    .tokens
                    .last()
                    .map(|t| (t.line, t.column + t.text.len() as u32))
                    .unwrap_or((1, 1));
                JaqalError::Syntax {
                    line,
                    column,
                    expected: expected.to_string(),
                    found: "end of input".into(),
                }
            }
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<&'t Token<'a>, JaqalError> {
        match self.peek() {
            Some(t) if t.is_punct(p) => Ok(self.bump()),
            _ => Err(self.error(&format!("'{p}'"))),
        }
    }

    fn expect_ident(&mut self) -> Result<Ident, JaqalError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let t = self.bump();
                Ok(Ident::new(t.text, pos(t)))
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn expect_int(&mut self) -> Result<i64, JaqalError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Integer => {
                let t = self.bump();
                t.text.parse().map_err(|_| JaqalError::InvalidValue {
                    what: format!("integer '{}' out of range", t.text),
                    line: t.line,
                    column: t.column,
                })
            }
            _ => Err(self.error("integer")),
        }
    }

    fn number(&mut self) -> Result<num_rational::Rational64, JaqalError> {
        match self.peek() {
            Some(t) if matches!(t.kind, TokenKind::Integer | TokenKind::Float) => {
                let t = self.bump();
                parse_rational(t.text).ok_or_else(|| JaqalError::InvalidValue {
                    what: format!("number '{}' is not representable", t.text),
                    line: t.line,
                    column: t.column,
                })
            }
            _ => Err(self.error("number")),
        }
    }

    fn program(&mut self) -> Result<Program, JaqalError> {
        let statements = self.statements(Context::Top)?;
        if self.peek().is_some() {
            return Err(self.error("statement"));
        }
        Ok(Program { statements })
    }

    fn statements(&mut self, ctx: Context) -> Result<Vec<Statement>, JaqalError> {
        let mut out = Vec::new();
        loop {
            // separators may repeat
            while let Some(t) = self.peek() {
                let sep = t.is_punct(";") || (matches!(ctx, Context::Parallel) && t.is_punct("|"));
                if !sep {
                    break;
                }
                self.bump();
            }
            let Some(t) = self.peek() else { break };
            let closes = match ctx {
                Context::Top => false,
                Context::Sequential => t.is_punct("}"),
                Context::Parallel => t.is_punct(">"),
            };
            if closes {
                break;
            }
            let stmt = self.statement(&ctx)?;
            self.node();
            out.push(stmt);
            let end_line = self.last_line();
            if let Some(next) = self.peek() {
                let ok = next.line > end_line
                    || next.is_punct(";")
                    || next.is_punct("}")
                    || next.is_punct(">")
                    || (matches!(ctx, Context::Parallel) && next.is_punct("|"));
                if !ok {
                    return Err(self.error("statement separator"));
                }
            }
        }
        Ok(out)
    }

    fn statement(&mut self, ctx: &Context) -> Result<Statement, JaqalError> {
        let t = self.peek().ok_or_else(|| self.error("statement"))?;
        let top = matches!(ctx, Context::Top);
        match t.kind {
            TokenKind::Keyword => match t.text {
                "from" if top => self.usepulses(),
                "register" if top => {
                    self.bump();
                    let name = self.expect_ident()?;
                    self.expect_punct("[")?;
                    let size = self.expect_int()?;
                    self.expect_punct("]")?;
                    let size = u32::try_from(size).map_err(|_| JaqalError::InvalidValue {
                        what: format!("register size {size}"),
                        line: name.pos.line,
                        column: name.pos.column,
                    })?;
                    Ok(Statement::Register { name, size })
                }
                "map" if top => self.map(),
                "let" if top => {
                    self.bump();
                    let name = self.expect_ident()?;
                    let value = self.number()?;
                    Ok(Statement::Let { name, value })
                }
                "macro" if top => {
                    self.bump();
                    let name = self.expect_ident()?;
                    let mut params = Vec::new();
                    while let Some(t) = self.peek() {
                        if t.kind != TokenKind::Identifier {
                            break;
                        }
                        params.push(self.expect_ident()?);
                    }
                    let body = self.block()?;
                    Ok(Statement::Macro { name, params, body })
                }
                "loop" => {
                    let kw = self.bump();
                    let count = match self.peek() {
                        Some(t) if t.kind == TokenKind::Identifier => {
                            Index::Ident(self.expect_ident()?)
                        }
                        _ => Index::Literal(self.expect_int()?),
                    };
                    let body = self.block()?;
                    Ok(Statement::Loop {
                        count,
                        body,
                        pos: pos(kw),
                    })
                }
                "branch" => self.branch(),
                _ => Err(self.error("statement")),
            },
            TokenKind::Identifier => {
                Ok(Statement::Gate(self.gate()?))
            }
            TokenKind::Punctuation if t.text == "{" || t.text == "<" => {
                Ok(Statement::Block(self.block()?))
            }
            _ => Err(self.error("statement")),
        }
    }

    fn usepulses(&mut self) -> Result<Statement, JaqalError> {
        let kw = self.bump();
        let mut module = self.expect_ident()?.name;
        while self.peek().is_some_and(|t| t.is_punct(".")) {
            self.bump();
            module.push('.');
            module.push_str(&self.expect_ident()?.name);
        }
        match self.peek() {
            Some(t) if t.is_keyword("usepulses") => {
                self.bump();
            }
            _ => return Err(self.error("'usepulses'")),
        }
        self.expect_punct("*")?;
        Ok(Statement::Usepulses {
            module,
            pos: pos(kw),
        })
    }

    fn map(&mut self) -> Result<Statement, JaqalError> {
        self.bump();
        let name = self.expect_ident()?;
        let register = self.expect_ident()?;
        if !self.peek().is_some_and(|t| t.is_punct("[")) {
            return Ok(Statement::Map {
                name,
                target: MapTarget::Whole(register),
            });
        }
        self.bump();
        let first = self.index()?;
        let target = if self.peek().is_some_and(|t| t.is_punct(":")) {
            let Index::Literal(start) = first else {
                return Err(self.error("integer range start"));
            };
            self.bump();
            let stop = self.expect_int()?;
            let step = if self.peek().is_some_and(|t| t.is_punct(":")) {
                self.bump();
                self.expect_int()?
            } else {
                1
            };
            MapTarget::Range {
                register,
                start,
                stop,
                step,
            }
        } else {
            MapTarget::Qubit {
                register,
                index: first,
            }
        };
        self.expect_punct("]")?;
        Ok(Statement::Map { name, target })
    }

    fn index(&mut self) -> Result<Index, JaqalError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => Ok(Index::Ident(self.expect_ident()?)),
            Some(t) if t.kind == TokenKind::Integer => Ok(Index::Literal(self.expect_int()?)),
            _ => Err(self.error("index")),
        }
    }

    fn gate(&mut self) -> Result<GateCall, JaqalError> {
        let name = self.expect_ident()?;
        let mut args = Vec::new();
        loop {
            let line = self.last_line();
            let Some(t) = self.peek() else { break };
            if t.line != line {
                break;
            }
            match t.kind {
                TokenKind::Integer | TokenKind::Float => args.push(Arg::Number(self.number()?)),
                TokenKind::Identifier => {
                    let id = self.expect_ident()?;
                    if self.peek().is_some_and(|t| t.is_punct("[")) {
                        self.bump();
                        let index = self.index()?;
                        self.expect_punct("]")?;
                        args.push(Arg::Qubit {
                            register: id,
                            index,
                        });
                    } else {
                        args.push(Arg::Ident(id));
                    }
                }
                _ => break,
            }
            self.node();
        }
        Ok(GateCall {
            pos: name.pos,
            name,
            args,
        })
    }

    fn block(&mut self) -> Result<Block, JaqalError> {
        let open = match self.peek() {
            Some(t) if t.is_punct("{") || t.is_punct("<") => self.bump(),
            _ => return Err(self.error("'{' or '<'")),
        };
        let parallel = open.text == "<";
        let statements = if parallel {
            let s = self.statements(Context::Parallel)?;
            self.expect_punct(">")?;
            s
        } else {
            let s = self.statements(Context::Sequential)?;
            self.expect_punct("}")?;
            s
        };
        self.node();
        Ok(Block {
            parallel,
            statements,
            pos: pos(open),
        })
    }

    fn branch(&mut self) -> Result<Statement, JaqalError> {
        let kw = self.bump();
        self.expect_punct("{")?;
        let mut cases = Vec::new();
        loop {
            while self.peek().is_some_and(|t| t.is_punct(",") || t.is_punct(";")) {
                self.bump();
            }
            match self.peek() {
                Some(t) if t.is_punct("}") => {
                    self.bump();
                    break;
                }
                Some(t) if t.is_punct("'") => {
                    let open = self.bump();
                    let label = match self.peek() {
                        Some(t) if t.kind == TokenKind::Integer
                            && t.text.bytes().all(|b| b == b'0' || b == b'1') =>
                        {
                            self.bump().text.to_string()
                        }
                        _ => return Err(self.error("binary outcome label")),
                    };
                    self.expect_punct("'")?;
                    self.expect_punct(":")?;
                    let body = self.block()?;
                    self.node();
                    cases.push(BranchCase {
                        label,
                        body,
                        pos: pos(open),
                    });
                }
                _ => return Err(self.error("case label or '}'")),
            }
        }
        Ok(Statement::Branch {
            cases,
            pos: pos(kw),
        })
    }
}

fn pos(t: &Token<'_>) -> Pos {
    Pos {
        line: t.line,
        column: t.column,
    }
}
