use thiserror::Error;

/// Errors from reading a kernel (C source or JSON IR).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontendError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported construct at {line}:{column}: {construct} (rule: {rule})")]
    Unsupported {
        line: usize,
        column: usize,
        construct: String,
        rule: &'static str,
    },
    #[error("invalid kernel: {0}")]
    Invalid(String),
}

impl FrontendError {
    pub fn construct(&self) -> Option<&str> {
        match self {
            FrontendError::Unsupported { construct, .. } => Some(construct),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("statements {0} cannot be distributed and do not form a perfect nest")]
    ImperfectBody(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid pin `{path}`: {reason}")]
    InvalidPin { path: String, reason: String },
    #[error("design space has {size} points, above the enumeration guard of {guard}")]
    SpaceTooLarge { size: u128, guard: u128 },
    #[error("budget exhausted before any feasible point was found")]
    NoIncumbent,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed solution: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("solution fails re-checking: {0}")]
    InternalInvariant(String),
}
