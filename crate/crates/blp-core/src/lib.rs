//! Analysis of one-parameter bilevel programs
//!
//! ```text
//! minimize F(x, y)   subject to   y solves  min { f(x, y') : g(x, y') <= 0 }
//!   x,y
//! ```
//!
//! with scalar `x` and `y` of small dimension. The crate classifies
//! lower-level stationary points into the five generic types, computes the
//! structure of Fritz-John and KKT multiplier sets, traces stationary
//! branches and the optimal-value function in `x`, estimates partial error
//! bound and calmness moduli by sampling, and checks first-order optimality
//! certificates in two independently computed forms.

pub mod calmness;
pub mod classify;
pub mod continuation;
pub mod corpus;
pub mod csvio;
pub mod expr;
pub mod linalg;
pub mod multipliers;
pub mod problem;
pub mod stationarity;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("expression parse error in {field}: {source}")]
    ExprSyntax {
        field: String,
        #[source]
        source: expr::ParseError,
    },

    #[error(transparent)]
    Eval(#[from] expr::EvalError),

    #[error("problem file, line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("search box required but the problem declares none")]
    MissingBox,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operation does not support upper-level constraints (q > 0)")]
    UpperConstraintsUnsupported,

    #[error("global search inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
