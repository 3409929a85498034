//! Semantic analysis: resolve every identifier in a parsed program.

use std::collections::HashMap;

use num_rational::Rational64;

use super::ast::*;
use super::JaqalError;

#[derive(Debug, Clone)]
enum Symbol {
    Register { offset: u32, step: u32, size: u32 },
    Qubit(u32),
    Constant(Rational64),
    Macro { arity: usize },
}

struct Scope<'p> {
    globals: HashMap<&'p str, Symbol>,
}

/// Returns a copy of `program` with every identifier resolved.
pub fn analyze(program: &Program) -> Result<Program, JaqalError> {
    let mut scope = Scope {
        globals: HashMap::new(),
    };
    let mut out = Vec::with_capacity(program.statements.len());

    // Header definitions first, so use may precede definition in the body.
    for s in &program.statements {
        match s {
            Statement::Register { name, size } => {
                scope.define(name, Symbol::Register {
                    offset: 0,
                    step: 1,
                    size: *size,
                })?;
            }
            Statement::Let { name, value } => scope.define(name, Symbol::Constant(*value))?,
            Statement::Macro { name, params, .. } => scope.define(name, Symbol::Macro {
                arity: params.len(),
            })?,
            _ => {}
        }
    }
    for s in &program.statements {
        if let Statement::Map { name, target } = s {
            let symbol = scope.map_target(target)?;
            scope.define(name, symbol)?;
        }
    }

    for s in &program.statements {
        out.push(scope.statement(s, None, false)?);
    }
    Ok(Program { statements: out })
}

fn duplicate(id: &Ident) -> JaqalError {
    JaqalError::DuplicateDefinition {
        name: id.name.clone(),
        line: id.pos.line,
        column: id.pos.column,
    }
}

fn unknown(id: &Ident) -> JaqalError {
    JaqalError::UnknownIdentifier {
        name: id.name.clone(),
        line: id.pos.line,
        column: id.pos.column,
    }
}

fn invalid_use(id: &Ident, expected: &'static str) -> JaqalError {
    JaqalError::InvalidUse {
        name: id.name.clone(),
        expected,
        line: id.pos.line,
        column: id.pos.column,
    }
}

fn out_of_range(id: &Ident, index: i64, size: u32) -> JaqalError {
    JaqalError::IndexOutOfRange {
        name: id.name.clone(),
        index,
        size,
        line: id.pos.line,
        column: id.pos.column,
    }
}

impl<'p> Scope<'p> {
    fn define(&mut self, id: &'p Ident, symbol: Symbol) -> Result<(), JaqalError> {
        if self.globals.insert(&id.name, symbol).is_some() {
            return Err(duplicate(id));
        }
        Ok(())
    }

    fn register(&self, id: &Ident) -> Result<(u32, u32, u32), JaqalError> {
        match self.globals.get(id.name.as_str()) {
            Some(Symbol::Register { offset, step, size }) => Ok((*offset, *step, *size)),
            Some(_) => Err(invalid_use(id, "register")),
            None => Err(unknown(id)),
        }
    }

    fn constant_index(&self, index: &Index) -> Result<i64, JaqalError> {
        match index {
            Index::Literal(v) => Ok(*v),
            Index::Ident(id) => match self.globals.get(id.name.as_str()) {
                Some(Symbol::Constant(v)) if v.is_integer() => Ok(v.to_integer()),
                Some(_) => Err(invalid_use(id, "integer constant")),
                None => Err(unknown(id)),
            },
        }
    }

    fn map_target(&self, target: &MapTarget) -> Result<Symbol, JaqalError> {
        match target {
            MapTarget::Whole(reg) => {
                let (offset, step, size) = self.register(reg)?;
                Ok(Symbol::Register { offset, step, size })
            }
            MapTarget::Qubit { register, index } => {
                let (offset, step, size) = self.register(register)?;
                let i = self.constant_index(index)?;
                if i < 0 || i >= size as i64 {
                    return Err(out_of_range(register, i, size));
                }
                Ok(Symbol::Qubit(offset + step * i as u32))
            }
            MapTarget::Range {
                register,
                start,
                stop,
                step,
            } => {
                let (offset, rstep, size) = self.register(register)?;
                if *step <= 0 || *start < 0 || stop < start || *stop > size as i64 {
                    return Err(JaqalError::InvalidValue {
                        what: format!("map range {start}:{stop}:{step} of {}", register.name),
                        line: register.pos.line,
                        column: register.pos.column,
                    });
                }
                let count = (stop - start + step - 1) / step;
                Ok(Symbol::Register {
                    offset: offset + rstep * *start as u32,
                    step: rstep * *step as u32,
                    size: count as u32,
                })
            }
        }
    }

    fn resolve_value(&self, id: &Ident, params: Option<&[Ident]>) -> Result<Ident, JaqalError> {
        let mut id = id.clone();
        if let Some(i) = params.and_then(|p| p.iter().position(|p| p.name == id.name)) {
            id.resolution = Resolution::MacroParam(i);
            return Ok(id);
        }
        id.resolution = match self.globals.get(id.name.as_str()) {
            Some(Symbol::Constant(v)) => Resolution::Constant(*v),
            Some(Symbol::Qubit(q)) => Resolution::NamedQubit(*q),
            Some(Symbol::Register { .. }) => return Err(invalid_use(&id, "qubit or value")),
            Some(Symbol::Macro { .. }) => return Err(invalid_use(&id, "qubit or value")),
            None => return Err(unknown(&id)),
        };
        Ok(id)
    }

    fn resolve_index(
        &self,
        index: &Index,
        params: Option<&[Ident]>,
        bound: Option<(&Ident, u32)>,
    ) -> Result<Index, JaqalError> {
        let out = match index {
            Index::Literal(v) => Index::Literal(*v),
            Index::Ident(id) => {
                let id = self.resolve_value(id, params)?;
                if let Resolution::Constant(v) = id.resolution {
                    if !v.is_integer() {
                        return Err(invalid_use(&id, "integer constant"));
                    }
                } else if !matches!(id.resolution, Resolution::MacroParam(_)) {
                    return Err(invalid_use(&id, "integer constant"));
                }
                Index::Ident(id)
            }
        };
        let literal = match &out {
            Index::Literal(v) => Some(*v),
            Index::Ident(Ident {
                resolution: Resolution::Constant(v),
                ..
            }) => Some(v.to_integer()),
            _ => None,
        };
        if let Some(v) = literal {
            match bound {
                Some((reg, size)) if v < 0 || v >= size as i64 => {
                    return Err(out_of_range(reg, v, size))
                }
                None if v < 0 => {
                    return Err(JaqalError::InvalidValue {
                        what: format!("negative count {v}"),
                        line: 0,
                        column: 0,
                    })
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn gate(&self, g: &GateCall, params: Option<&[Ident]>) -> Result<GateCall, JaqalError> {
        let mut name = g.name.clone();
        name.resolution = match self.globals.get(name.name.as_str()) {
            Some(Symbol::Macro { arity }) => {
                if *arity != g.args.len() {
                    return Err(JaqalError::ArityMismatch {
                        name: name.name.clone(),
                        expected: *arity,
                        found: g.args.len(),
                        line: g.pos.line,
                        column: g.pos.column,
                    });
                }
                Resolution::Macro
            }
            Some(_) => return Err(invalid_use(&name, "gate or macro")),
            None if params.is_some_and(|p| p.iter().any(|p| p.name == name.name)) => {
                return Err(invalid_use(&name, "gate or macro"))
            }
            None => Resolution::GateName,
        };
        let mut args = Vec::with_capacity(g.args.len());
        for a in &g.args {
            args.push(match a {
                Arg::Number(v) => Arg::Number(*v),
                Arg::Ident(id) => Arg::Ident(self.resolve_value(id, params)?),
                Arg::Qubit { register, index } => {
                    let (offset, step, size) = self.register(register)?;
                    let mut reg = register.clone();
                    reg.resolution = Resolution::Register { offset, step, size };
                    let index = self.resolve_index(index, params, Some((register, size)))?;
                    Arg::Qubit {
                        register: reg,
                        index,
                    }
                }
            });
        }
        Ok(GateCall {
            name,
            args,
            pos: g.pos,
        })
    }

    fn block(&self, b: &Block, params: Option<&[Ident]>) -> Result<Block, JaqalError> {
        let mut statements = Vec::with_capacity(b.statements.len());
        for s in &b.statements {
            if b.parallel {
                match s {
                    Statement::Gate(g) if !matches!(
                        self.globals.get(g.name.name.as_str()),
                        Some(Symbol::Macro { .. })
                    ) => {}
                    _ => {
                        return Err(JaqalError::InvalidValue {
                            what: "only gates may appear in a parallel block".into(),
                            line: b.pos.line,
                            column: b.pos.column,
                        })
                    }
                }
            }
            statements.push(self.statement(s, params, true)?);
        }
        Ok(Block {
            parallel: b.parallel,
            statements,
            pos: b.pos,
        })
    }

    fn statement(
        &self,
        s: &Statement,
        params: Option<&[Ident]>,
        nested: bool,
    ) -> Result<Statement, JaqalError> {
        Ok(match s {
            Statement::Usepulses { .. } | Statement::Register { .. } | Statement::Let { .. } => {
                s.clone()
            }
            Statement::Map { name, target } => {
                let mut name = name.clone();
                name.resolution = match self.map_target(target)? {
                    Symbol::Register { offset, step, size } => {
                        Resolution::Register { offset, step, size }
                    }
                    Symbol::Qubit(q) => Resolution::NamedQubit(q),
                    _ => unreachable!("map targets are qubits or registers"),
                };
                Statement::Map {
                    name,
                    target: target.clone(),
                }
            }
            Statement::Macro { name, params: p, body } => {
                debug_assert!(!nested);
                for (i, a) in p.iter().enumerate() {
                    if p[..i].iter().any(|b| b.name == a.name) {
                        return Err(duplicate(a));
                    }
                }
                let mut resolved = Vec::with_capacity(p.len());
                for (i, a) in p.iter().enumerate() {
                    let mut a = a.clone();
                    a.resolution = Resolution::MacroParam(i);
                    resolved.push(a);
                }
                let mut name = name.clone();
                name.resolution = Resolution::Macro;
                Statement::Macro {
                    name,
                    body: self.block(body, Some(p))?,
                    params: resolved,
                }
            }
            Statement::Gate(g) => Statement::Gate(self.gate(g, params)?),
            Statement::Block(b) => Statement::Block(self.block(b, params)?),
            Statement::Loop { count, body, pos } => Statement::Loop {
                count: self
                    .resolve_index(count, params, None)
                    .map_err(|e| with_pos(e, *pos))?,
                body: self.block(body, params)?,
                pos: *pos,
            },
            Statement::Branch { cases, pos } => {
                let width = cases.first().map_or(0, |c| c.label.len());
                let mut out = Vec::with_capacity(cases.len());
                for (i, c) in cases.iter().enumerate() {
                    if c.label.len() != width || width > 11 {
                        return Err(JaqalError::InvalidValue {
                            what: format!("outcome label '{}' has the wrong width", c.label),
                            line: c.pos.line,
                            column: c.pos.column,
                        });
                    }
                    if cases[..i].iter().any(|d| d.label == c.label) {
                        return Err(JaqalError::DuplicateDefinition {
                            name: c.label.clone(),
                            line: c.pos.line,
                            column: c.pos.column,
                        });
                    }
                    out.push(BranchCase {
                        label: c.label.clone(),
                        body: self.block(&c.body, params)?,
                        pos: c.pos,
                    });
                }
                Statement::Branch {
                    cases: out,
                    pos: *pos,
                }
            }
        })
    }
}

fn with_pos(e: JaqalError, pos: Pos) -> JaqalError {
    match e {
        JaqalError::InvalidValue { what, line: 0, .. } => JaqalError::InvalidValue {
            what,
            line: pos.line,
            column: pos.column,
        },
        e => e,
    }
}
