//! Exact symbolic engine for the vertex algebras of chiral differential
//! operators on the three-torus and the Heisenberg nilmanifold, together with
//! their logarithmic modules over the double twisted torus.
//!
//! The engine works over a decidable coefficient ring (rationals extended by
//! the formal symbols `sigma` and `q`), so every check it runs is an exact
//! identity at a finite truncation window, never a numerical approximation.
//!
//! Module map:
//! - [`scalar`]: exact coefficients and formal z-exponents
//! - [`funcspace`]: symbolic functions on the double twisted torus
//! - [`modealg`]: the mode Lie algebra, its affinization and derived operators
//! - [`states`]: the induced modules and exact mode actions
//! - [`fields`]: truncated logarithmic-field calculus
//! - [`verify`]: theorem-level verification suites and reports

pub mod fields;
pub mod funcspace;
pub mod modealg;
pub mod report;
pub mod scalar;
pub mod states;
pub mod translation;
pub mod verify;

pub use fields::{Field, LogSeries, TwoVarSeries, Window};
pub use funcspace::{CoordSystem, FTerm, FuncExpr, ThetaFactor, UPoly, VectorField};
pub use modealg::{Mode, ModeKind, OpExpr, StructureData};
pub use scalar::{Rat, Scalar, ZExp};
pub use states::{Space, State};

use thiserror::Error;

/// Engine error taxonomy. Suite failures are report content, not errors;
/// these are structural misuses or window problems.
#[derive(Debug, Clone, Error)]
pub enum EngineError {
    #[error("division by zero mode index")]
    ZeroModeIndexDivision,
    #[error("mixed coordinate systems: {0}")]
    MixedCoordSystem(String),
    #[error("unsupported product: {0}")]
    UnsupportedProduct(String),
    #[error("unsupported coordinate conversion: {0}")]
    UnsupportedConversion(String),
    #[error("derivative left the term basis at {0}")]
    NonClosure(String),
    #[error("theta sector index out of range: m={m} for n={n}")]
    ThetaIndexRange { n: i64, m: i64 },
    #[error("state slot outside space {space}: {term}")]
    SpaceViolation { space: String, term: String },
    #[error("mixed frequency sectors in {0}")]
    MixedSector(String),
    #[error("window too small to be conclusive: {0}")]
    Inconclusive(String),
    #[error("internal consistency violation: {0}")]
    InternalInconsistency(String),
    #[error("operator not expandable: {0}")]
    NotExpandable(String),
    #[error("field has no split metadata: {0}")]
    NoSplitMetadata(String),
    #[error("parse error in `{input}`: {message}")]
    Parse { input: String, message: String },
}

impl EngineError {
    pub fn parse(input: &str, message: &str) -> Self {
        EngineError::Parse {
            input: input.to_string(),
            message: message.to_string(),
        }
    }
}
