//! Jaqal-subset frontend: tokenizer, parser, semantic analysis and lowering
//! to the tabulated IR.

pub mod analyze;
pub mod ast;
pub mod lexer;
pub mod number;
pub mod parser;
pub mod print;
pub mod tir;

use num_rational::Rational64;
use thiserror::Error;

pub use analyze::analyze;
pub use ast::Program;
pub use lexer::{tokenize, Lexer, Token, TokenKind};
pub use parser::{parse, parse_source, parse_with_stats, ParseStats};
pub use print::print_program;
pub use tir::{lower, BlockId, BlockKind, GateEntry, GateId, Node, Tir};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JaqalError {
    #[error("{line}:{column}: illegal character 0x{byte:02x}")]
    IllegalCharacter { line: u32, column: u32, byte: u8 },
    #[error("{line}:{column}: expected {expected}, found {found}")]
    Syntax {
        line: u32,
        column: u32,
        expected: String,
        found: String,
    },
    #[error("{line}:{column}: unknown identifier '{name}'")]
    UnknownIdentifier { name: String, line: u32, column: u32 },
    #[error("{line}:{column}: '{name}' is already defined")]
    DuplicateDefinition { name: String, line: u32, column: u32 },
    #[error("{line}:{column}: macro '{name}' takes {expected} arguments, got {found}")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
        line: u32,
        column: u32,
    },
    #[error("{line}:{column}: '{name}' cannot be used here, expected {expected}")]
    InvalidUse {
        name: String,
        expected: &'static str,
        line: u32,
        column: u32,
    },
    #[error("{line}:{column}: index {index} out of range for '{name}' of size {size}")]
    IndexOutOfRange {
        name: String,
        index: i64,
        size: u32,
        line: u32,
        column: u32,
    },
    #[error("{line}:{column}: {what}")]
    InvalidValue { what: String, line: u32, column: u32 },
    #[error("no let binding named '{0}' to override")]
    UnknownLet(String),
}

/// Source text to TIR in one step.
pub fn compile_tir(src: &str) -> Result<Tir, JaqalError> {
    compile_tir_with(src, &[])
}

/// Source text to TIR with `let` values replaced before lowering.
pub fn compile_tir_with(src: &str, overrides: &[(String, Rational64)]) -> Result<Tir, JaqalError> {
    let mut program = parse_source(src)?;
    program
        .override_lets(overrides)
        .map_err(JaqalError::UnknownLet)?;
    lower(&analyze(&program)?)
}
