use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("polynomials live over different field counts ({0} vs {1})")]
    FieldMismatch(u8, u8),

    #[error("field index {index} outside 1..={count}")]
    InvalidField { index: u8, count: u8 },

    #[error("term of D-weight 1 cannot be inverted by D-1: {term}")]
    WeightOneObstruction { term: String },

    #[error("not a total x-derivative; residual: {residual}")]
    NotExact { residual: String },

    #[error("term without a factor of hbar: {term}")]
    NotDivisible { term: String },

    #[error("substitution needs all u-degrees but the input is truncated at u-degree {0}")]
    TruncationOverflow(u32),

    #[error("an odd power of lambda survived the expansion: {0}")]
    OddLambdaResidue(String),

    #[error("this construction needs a finite u-degree truncation")]
    UnboundedUDegree,

    #[error("undeclared formal parameter `{0}`")]
    UndeclaredParam(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("malformed structured input: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;
