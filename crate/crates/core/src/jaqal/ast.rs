//! Tree IR: the parsed program, mirroring source nesting.

use num_rational::Rational64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

/// What an identifier refers to after analysis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Resolution {
    #[default]
    Unresolved,
    Constant(Rational64),
    /// A register, or a map alias over a register range.
    Register {
        offset: u32,
        step: u32,
        size: u32,
    },
    GateName,
    Macro,
    MacroParam(usize),
    NamedQubit(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ident {
    pub name: String,
    pub resolution: Resolution,
    pub pos: Pos,
}

impl Ident {
    pub fn new(name: &str, pos: Pos) -> Ident {
        Ident {
            name: name.to_string(),
            resolution: Resolution::Unresolved,
            pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Index {
    Literal(i64),
    Ident(Ident),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Number(Rational64),
    Ident(Ident),
    Qubit { register: Ident, index: Index },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateCall {
    pub name: Ident,
    pub args: Vec<Arg>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub parallel: bool,
    pub statements: Vec<Statement>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchCase {
    /// Outcome bits as written, leftmost character first.
    pub label: String,
    pub body: Block,
    pub pos: Pos,
}

/// Source of a `map` statement: one qubit or a `start:stop[:step]` range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapTarget {
    Qubit { register: Ident, index: Index },
    Range {
        register: Ident,
        start: i64,
        stop: i64,
        step: i64,
    },
    Whole(Ident),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Usepulses {
        module: String,
        pos: Pos,
    },
    Register {
        name: Ident,
        size: u32,
    },
    Map {
        name: Ident,
        target: MapTarget,
    },
    Let {
        name: Ident,
        value: Rational64,
    },
    Macro {
        name: Ident,
        params: Vec<Ident>,
        body: Block,
    },
    Gate(GateCall),
    Block(Block),
    Loop {
        count: Index,
        body: Block,
        pos: Pos,
    },
    Branch {
        cases: Vec<BranchCase>,
        pos: Pos,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub statements: Vec<Statement>,
}

impl Program {
    /// Copy with every source position cleared, for structural comparison.
    pub fn without_positions(&self) -> Program {
        let mut p = self.clone();
        for s in &mut p.statements {
            clear_statement(s);
        }
        p
    }

    /// Values of the top-level `let` bindings, in order.
    pub fn lets(&self) -> impl Iterator<Item = (&str, Rational64)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Let { name, value } => Some((name.name.as_str(), *value)),
            _ => None,
        })
    }

    /// Replaces `let` values before analysis. Unknown names are an error.
    pub fn override_lets(&mut self, overrides: &[(String, Rational64)]) -> Result<(), String> {
        for (name, value) in overrides {
            let slot = self.statements.iter_mut().find_map(|s| match s {
                Statement::Let { name: n, value } if &n.name == name => Some(value),
                _ => None,
            });
            match slot {
                Some(v) => *v = *value,
                None => return Err(name.clone()),
            }
        }
        Ok(())
    }
}

fn clear_ident(i: &mut Ident) {
    i.pos = Pos::default();
}

fn clear_index(i: &mut Index) {
    if let Index::Ident(id) = i {
        clear_ident(id);
    }
}

fn clear_block(b: &mut Block) {
    b.pos = Pos::default();
    for s in &mut b.statements {
        clear_statement(s);
    }
}

fn clear_statement(s: &mut Statement) {
    match s {
        Statement::Usepulses { pos, .. } => *pos = Pos::default(),
        Statement::Register { name, .. } | Statement::Let { name, .. } => clear_ident(name),
        Statement::Map { name, target } => {
            clear_ident(name);
            match target {
                MapTarget::Qubit { register, index } => {
                    clear_ident(register);
                    clear_index(index);
                }
                MapTarget::Range { register, .. } | MapTarget::Whole(register) => {
                    clear_ident(register)
                }
            }
        }
        Statement::Macro { name, params, body } => {
            clear_ident(name);
            params.iter_mut().for_each(clear_ident);
            clear_block(body);
        }
        Statement::Gate(g) => {
            g.pos = Pos::default();
            clear_ident(&mut g.name);
            for a in &mut g.args {
                match a {
                    Arg::Number(_) => {}
                    Arg::Ident(id) => clear_ident(id),
                    Arg::Qubit { register, index } => {
                        clear_ident(register);
                        clear_index(index);
                    }
                }
            }
        }
        Statement::Block(b) => clear_block(b),
        Statement::Loop { count, body, pos } => {
            *pos = Pos::default();
            clear_index(count);
            clear_block(body);
        }
        Statement::Branch { cases, pos } => {
            *pos = Pos::default();
            for c in cases {
                c.pos = Pos::default();
                clear_block(&mut c.body);
            }
        }
    }
}
