//! Front end for a small Python-like language: lexing with layout tokens,
//! parsing, control and data flow, and extraction of typed, qualified
//! hypergraphs.

pub mod ast;
pub mod cfg;
pub mod dunder;
pub mod extract;
pub mod golden;
pub mod lexer;
pub mod parser;
pub mod printer;
pub mod symbols;

pub use ast::{Ast, AstId, Kind};
pub use extract::{analyze, extract, ExtractionConfig, Program};
pub use lexer::{tokenize, SyntaxError, Token};
pub use parser::parse;
pub use printer::print;
