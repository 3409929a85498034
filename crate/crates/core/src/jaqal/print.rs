//! Pretty printer for the tree IR. Output re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;
use super::number::format_rational;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for s in &p.statements {
        statement(&mut out, s, 0);
        out.push('\n');
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn index(i: &Index) -> String {
    match i {
        Index::Literal(v) => v.to_string(),
        Index::Ident(id) => id.name.clone(),
    }
}

fn block(out: &mut String, b: &Block, depth: usize) {
    out.push(if b.parallel { '<' } else { '{' });
    out.push('\n');
    for s in &b.statements {
        indent(out, depth + 1);
        statement(out, s, depth + 1);
        out.push('\n');
    }
    indent(out, depth);
    out.push(if b.parallel { '>' } else { '}' });
}

fn statement(out: &mut String, s: &Statement, depth: usize) {
    match s {
        Statement::Usepulses { module, .. } => {
            let _ = write!(out, "from {module} usepulses *");
        }
        Statement::Register { name, size } => {
            let _ = write!(out, "register {}[{size}]", name.name);
        }
        Statement::Map { name, target } => {
            let _ = match target {
                MapTarget::Whole(r) => write!(out, "map {} {}", name.name, r.name),
                MapTarget::Qubit { register, index: i } => {
                    write!(out, "map {} {}[{}]", name.name, register.name, index(i))
                }
                MapTarget::Range {
                    register,
                    start,
                    stop,
                    step,
                } => write!(
                    out,
                    "map {} {}[{start}:{stop}:{step}]",
                    name.name, register.name
                ),
            };
        }
        Statement::Let { name, value } => {
            let _ = write!(out, "let {} {}", name.name, format_rational(value));
        }
        Statement::Macro { name, params, body } => {
            out.push_str("macro ");
            out.push_str(&name.name);
            for p in params {
                out.push(' ');
                out.push_str(&p.name);
            }
            out.push(' ');
            block(out, body, depth);
        }
        Statement::Gate(g) => {
            out.push_str(&g.name.name);
            for a in &g.args {
                out.push(' ');
                match a {
                    Arg::Number(v) => out.push_str(&format_rational(v)),
                    Arg::Ident(id) => out.push_str(&id.name),
                    Arg::Qubit { register, index: i } => {
                        let _ = write!(out, "{}[{}]", register.name, index(i));
                    }
                }
            }
        }
        Statement::Block(b) => block(out, b, depth),
        Statement::Loop { count, body, .. } => {
            let _ = write!(out, "loop {} ", index(count));
            block(out, body, depth);
        }
        Statement::Branch { cases, .. } => {
            out.push_str("branch {\n");
            for c in cases {
                indent(out, depth + 1);
                let _ = write!(out, "'{}': ", c.label);
                block(out, &c.body, depth + 1);
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}
