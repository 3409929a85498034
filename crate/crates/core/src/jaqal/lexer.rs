//! Tokenizer for the Jaqal subset.
//!
//! Tokens borrow their text from the source. Newlines are not tokens;
//! statement separation by line change is recovered from `Token::line`.

use std::fmt;

use super::JaqalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Integer,
    Float,
    Punctuation,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Keyword => "keyword",
            TokenKind::Identifier => "identifier",
            TokenKind::Integer => "integer",
            TokenKind::Float => "float",
            TokenKind::Punctuation => "punctuation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub line: u32,
    pub column: u32,
}

impl Token<'_> {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn is_punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuation, text)
    }

    pub fn is_keyword(&self, text: &str) -> bool {
        self.is(TokenKind::Keyword, text)
    }
}

pub const KEYWORDS: &[&str] = &[
    "register", "map", "let", "macro", "loop", "branch", "from", "usepulses",
];

const PUNCTUATION: &[u8] = b"{}<>[]|;:,.*'";

/// Reusable tokenizer. The output buffer keeps its capacity across calls.
#[derive(Debug, Default)]
pub struct Lexer<'a> {
    tokens: Vec<Token<'a>>,
}

impl<'a> Lexer<'a> {
    pub fn new() -> Self {
        Lexer { tokens: Vec::new() }
    }

    pub fn tokenize(&mut self, src: &'a str) -> Result<&[Token<'a>], JaqalError> {
        self.tokens.clear();
        tokenize_into(src, &mut self.tokens)?;
        Ok(&self.tokens)
    }

    pub fn capacity(&self) -> usize {
        self.tokens.capacity()
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Token<'_>>, JaqalError> {
    let mut out = Vec::new();
    tokenize_into(src, &mut out)?;
    Ok(out)
}

pub fn tokenize_into<'a>(src: &'a str, out: &mut Vec<Token<'a>>) -> Result<(), JaqalError> {
    let bytes = src.as_bytes();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;
    let col = |i: usize, line_start: usize| (i - line_start + 1) as u32;

    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\n' => {
                i += 1;
                line += 1;
                line_start = i;
            }
            b' ' | b'\t' | b'\r' => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let (start_line, start_col) = (line, col(i, line_start));
                i += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        return Err(JaqalError::Syntax {
                            line: start_line,
                            column: start_col,
                            expected: "end of block comment".into(),
                            found: "end of input".into(),
                        });
                    }
                    if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                        line_start = i + 1;
                    }
                    i += 1;
                }
            }
            _ => {
                let start = i;
                let column = col(i, line_start);
                let kind = if b.is_ascii_alphabetic() || b == b'_' {
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    if KEYWORDS.contains(&&src[start..i]) {
                        TokenKind::Keyword
                    } else {
                        TokenKind::Identifier
                    }
                } else if starts_number(bytes, i) {
                    scan_number(bytes, &mut i)
                } else if PUNCTUATION.contains(&b) {
                    i += 1;
                    TokenKind::Punctuation
                } else {
                    return Err(JaqalError::IllegalCharacter {
                        line,
                        column,
                        byte: b,
                    });
                };
                out.push(Token {
                    kind,
                    text: &src[start..i],
                    line,
                    column,
                });
            }
        }
    }
    Ok(())
}

fn starts_number(bytes: &[u8], i: usize) -> bool {
    let digit_at = |j: usize| bytes.get(j).is_some_and(u8::is_ascii_digit);
    match bytes[i] {
        b'0'..=b'9' => true,
        b'.' => digit_at(i + 1),
        b'-' | b'+' => digit_at(i + 1) || (bytes.get(i + 1) == Some(&b'.') && digit_at(i + 2)),
        _ => false,
    }
}

fn scan_number(bytes: &[u8], i: &mut usize) -> TokenKind {
    let digits = |i: &mut usize| {
        while *i < bytes.len() && bytes[*i].is_ascii_digit() {
            *i += 1;
        }
    };
    let mut float = false;
    if bytes[*i] == b'-' || bytes[*i] == b'+' {
        *i += 1;
    }
    digits(i);
    if *i < bytes.len() && bytes[*i] == b'.' && bytes.get(*i + 1).is_some_and(u8::is_ascii_digit)
    {
        float = true;
        *i += 1;
        digits(i);
    } else if *i < bytes.len() && bytes[*i] == b'.' {
        // "1." is still a float literal
        float = true;
        *i += 1;
    }
    if *i < bytes.len() && (bytes[*i] == b'e' || bytes[*i] == b'E') {
        let mut j = *i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            float = true;
            *i = j;
            digits(i);
        }
    }
    if float {
        TokenKind::Float
    } else {
        TokenKind::Integer
    }
}
