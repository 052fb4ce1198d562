//! Program syntax: lexer, parser, canonical renderer, and semantic checks.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod render;
pub mod validate;

pub use ast::*;
pub use parser::{parse, ParseError};
pub use render::{render, stmt_head};
pub use validate::{check, CheckedProgram, ProgramInfo, SemanticError, ShapeClass};

/// Parses and checks in one step, applying constant overrides first so loop
/// bounds validate against their effective values.
pub fn load(
    src: &str,
    overrides: &std::collections::BTreeMap<String, i64>,
) -> Result<CheckedProgram, LoadError> {
    let mut program = parse(src)?;
    for (name, value) in overrides {
        program.consts.insert(name.clone(), *value);
    }
    Ok(check(program)?)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}
