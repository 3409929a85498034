//! Tabulated intermediate representation: flat gate, block and macro tables
//! with deduplicated gate entries.

use std::collections::HashMap;

use num_rational::Rational64;

use super::ast::*;
use super::JaqalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GateId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacroId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GateEntry {
    pub name: String,
    /// Resolved argument values; qubits appear as their register index.
    pub args: Vec<Rational64>,
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Gate(GateId),
    Block(BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    Sequential,
    Parallel,
    /// A single child repeated `n` times.
    Loop(u64),
    /// One child per case; `outcomes[i]` selects `children[i]`.
    Branch { width: u32, outcomes: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockEntry {
    pub kind: BlockKind,
    pub children: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroEntry {
    pub name: String,
    pub params: Vec<String>,
    /// Instantiations, one block per distinct argument list.
    pub instances: Vec<(Vec<Rational64>, BlockId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tir {
    pub gates: Vec<GateEntry>,
    pub blocks: Vec<BlockEntry>,
    pub macros: Vec<MacroEntry>,
    pub root: BlockId,
}

impl Tir {
    pub fn gate(&self, id: GateId) -> &GateEntry {
        &self.gates[id.0 as usize]
    }

    pub fn block(&self, id: BlockId) -> &BlockEntry {
        &self.blocks[id.0 as usize]
    }

    /// Walks the program in execution order. `choose` picks the case index
    /// taken at each branch (or `None` to skip it).
    pub fn walk(
        &self,
        visit: &mut impl FnMut(GateId),
        choose: &mut impl FnMut(&[u32]) -> Option<usize>,
    ) {
        self.walk_block(self.root, visit, choose);
    }

    fn walk_block(
        &self,
        id: BlockId,
        visit: &mut impl FnMut(GateId),
        choose: &mut impl FnMut(&[u32]) -> Option<usize>,
    ) {
        let b = self.block(id);
        match &b.kind {
            BlockKind::Sequential | BlockKind::Parallel => {
                for n in &b.children {
                    self.walk_node(n, visit, choose);
                }
            }
            BlockKind::Loop(count) => {
                for _ in 0..*count {
                    for n in &b.children {
                        self.walk_node(n, visit, choose);
                    }
                }
            }
            BlockKind::Branch { outcomes, .. } => {
                if let Some(i) = choose(outcomes) {
                    self.walk_node(&b.children[i], visit, choose);
                }
            }
        }
    }

    fn walk_node(
        &self,
        n: &Node,
        visit: &mut impl FnMut(GateId),
        choose: &mut impl FnMut(&[u32]) -> Option<usize>,
    ) {
        match n {
            Node::Gate(g) => visit(*g),
            Node::Block(b) => self.walk_block(*b, visit, choose),
        }
    }

    /// Flat gate sequence; branches take the case for outcome 0 if present.
    pub fn expand(&self) -> Vec<GateId> {
        let mut out = Vec::new();
        self.walk(&mut |g| out.push(g), &mut |o: &[u32]| o.iter().position(|&x| x == 0));
        out
    }
}

/// Outcome word for a case label; the leftmost character is bit 0.
pub fn label_outcome(label: &str) -> u32 {
    label
        .bytes()
        .enumerate()
        .fold(0, |acc, (i, b)| acc | (((b == b'1') as u32) << i))
}

pub fn lower(program: &Program) -> Result<Tir, JaqalError> {
    let mut l = Lowering::default();
    let mut macro_bodies = Vec::new();
    for s in &program.statements {
        if let Statement::Macro { name, params, body } = s {
            l.macro_index.insert(name.name.clone(), l.macros.len());
            l.macros.push(MacroEntry {
                name: name.name.clone(),
                params: params.iter().map(|p| p.name.clone()).collect(),
                instances: Vec::new(),
            });
            macro_bodies.push(body);
        }
    }
    let root = l.reserve(BlockKind::Sequential);
    let mut children = Vec::new();
    for s in &program.statements {
        if let Some(n) = l.statement(s, &[], &macro_bodies)? {
            children.push(n);
        }
    }
    l.blocks[root.0 as usize].children = children;
    Ok(Tir {
        gates: l.gates,
        blocks: l.blocks,
        macros: l.macros,
        root,
    })
}

#[derive(Default)]
struct Lowering {
    gates: Vec<GateEntry>,
    blocks: Vec<BlockEntry>,
    macros: Vec<MacroEntry>,
    macro_index: HashMap<String, usize>,
    dedup: HashMap<(String, Vec<Rational64>), GateId>,
    instances: HashMap<(usize, Vec<Rational64>), BlockId>,
    expanding: Vec<usize>,
}

fn value_error(what: String, pos: Pos) -> JaqalError {
    JaqalError::InvalidValue {
        what,
        line: pos.line,
        column: pos.column,
    }
}

impl Lowering {
    fn reserve(&mut self, kind: BlockKind) -> BlockId {
        self.blocks.push(BlockEntry {
            kind,
            children: Vec::new(),
        });
        BlockId(self.blocks.len() as u32 - 1)
    }

    fn value(&self, id: &Ident, env: &[Rational64]) -> Result<Rational64, JaqalError> {
        match &id.resolution {
            Resolution::Constant(v) => Ok(*v),
            Resolution::NamedQubit(q) => Ok(Rational64::from_integer(*q as i64)),
            Resolution::MacroParam(i) => Ok(env[*i]),
            _ => Err(value_error(format!("'{}' has no value", id.name), id.pos)),
        }
    }

    fn index(&self, index: &Index, env: &[Rational64]) -> Result<i64, JaqalError> {
        match index {
            Index::Literal(v) => Ok(*v),
            Index::Ident(id) => {
                let v = self.value(id, env)?;
                if v.is_integer() {
                    Ok(v.to_integer())
                } else {
                    Err(value_error(format!("'{}' is not an integer", id.name), id.pos))
                }
            }
        }
    }

    fn args(&self, g: &GateCall, env: &[Rational64]) -> Result<Vec<Rational64>, JaqalError> {
        g.args
            .iter()
            .map(|a| match a {
                Arg::Number(v) => Ok(*v),
                Arg::Ident(id) => self.value(id, env),
                Arg::Qubit { register, index } => {
                    let Resolution::Register { offset, step, size } = register.resolution else {
                        return Err(value_error(format!("'{}' is not a register", register.name), register.pos));
                    };
                    let i = self.index(index, env)?;
                    if i < 0 || i >= size as i64 {
                        return Err(JaqalError::IndexOutOfRange {
                            name: register.name.clone(),
                            index: i,
                            size,
                            line: register.pos.line,
                            column: register.pos.column,
                        });
                    }
                    Ok(Rational64::from_integer((offset + step * i as u32) as i64))
                }
            })
            .collect()
    }

    fn gate_entry(&mut self, name: &str, args: Vec<Rational64>, parallel: bool) -> GateId {
        if parallel {
            self.gates.push(GateEntry {
                name: name.to_string(),
                args,
                parallel,
            });
            return GateId(self.gates.len() as u32 - 1);
        }
        let key = (name.to_string(), args);
        if let Some(id) = self.dedup.get(&key) {
            return *id;
        }
        self.gates.push(GateEntry {
            name: key.0.clone(),
            args: key.1.clone(),
            parallel,
        });
        let id = GateId(self.gates.len() as u32 - 1);
        self.dedup.insert(key, id);
        id
    }

    fn block(
        &mut self,
        b: &Block,
        env: &[Rational64],
        bodies: &[&Block],
    ) -> Result<BlockId, JaqalError> {
        let kind = if b.parallel {
            BlockKind::Parallel
        } else {
            BlockKind::Sequential
        };
        let id = self.reserve(kind);
        let mut children = Vec::with_capacity(b.statements.len());
        for s in &b.statements {
            if b.parallel {
                if let Statement::Gate(g) = s {
                    let args = self.args(g, env)?;
                    children.push(Node::Gate(self.gate_entry(&g.name.name, args, true)));
                    continue;
                }
            }
            if let Some(n) = self.statement(s, env, bodies)? {
                children.push(n);
            }
        }
        self.blocks[id.0 as usize].children = children;
        Ok(id)
    }

    fn statement(
        &mut self,
        s: &Statement,
        env: &[Rational64],
        bodies: &[&Block],
    ) -> Result<Option<Node>, JaqalError> {
        Ok(Some(match s {
            Statement::Usepulses { .. }
            | Statement::Register { .. }
            | Statement::Map { .. }
            | Statement::Let { .. }
            | Statement::Macro { .. } => return Ok(None),
            Statement::Gate(g) => {
                let args = self.args(g, env)?;
                if g.name.resolution == Resolution::Macro {
                    Node::Block(self.instantiate(g, args, bodies)?)
                } else {
                    Node::Gate(self.gate_entry(&g.name.name, args, false))
                }
            }
            Statement::Block(b) => Node::Block(self.block(b, env, bodies)?),
            Statement::Loop { count, body, pos } => {
                let n = self.index(count, env)?;
                if n < 0 {
                    return Err(value_error(format!("negative loop count {n}"), *pos));
                }
                let id = self.reserve(BlockKind::Loop(n as u64));
                let body = self.block(body, env, bodies)?;
                self.blocks[id.0 as usize].children = vec![Node::Block(body)];
                Node::Block(id)
            }
            Statement::Branch { cases, .. } => {
                let width = cases.first().map_or(0, |c| c.label.len() as u32);
                let outcomes = cases.iter().map(|c| label_outcome(&c.label)).collect();
                let id = self.reserve(BlockKind::Branch { width, outcomes });
                let mut children = Vec::with_capacity(cases.len());
                for c in cases {
                    children.push(Node::Block(self.block(&c.body, env, bodies)?));
                }
                self.blocks[id.0 as usize].children = children;
                Node::Block(id)
            }
        }))
    }

    fn instantiate(
        &mut self,
        g: &GateCall,
        args: Vec<Rational64>,
        bodies: &[&Block],
    ) -> Result<BlockId, JaqalError> {
        let m = self.macro_index[&g.name.name];
        let key = (m, args);
        if let Some(id) = self.instances.get(&key) {
            return Ok(*id);
        }
        if self.expanding.contains(&m) {
            return Err(value_error(
                format!("macro '{}' expands recursively", g.name.name),
                g.pos,
            ));
        }
        self.expanding.push(m);
        let id = self.block(bodies[m], &key.1, bodies)?;
        self.expanding.pop();
        self.macros[m].instances.push((key.1.clone(), id));
        self.instances.insert(key, id);
        Ok(id)
    }
}
