//! The common interface of all maintenance strategies.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::database::{Database, DbError, Update};
use crate::delta::{DeltaEngine, DeltaError, Mode};
use crate::query::{Query, QueryError};
use crate::relation::{Relation, Schema, SchemaError};
use crate::ring::{LiftingSpec, Payload};
use crate::triangle::IvmEps;
use crate::value::Tuple;
use crate::viewtree::ViewTree;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Delta(DeltaError),
    #[error("relation {0} does not occur in the query")]
    UnknownRelation(String),
    #[error("{engine} does not support this query: {reason}")]
    Unsupported { engine: String, reason: String },
    #[error("query is not q-hierarchical: {0}")]
    NotQHierarchical(String),
    #[error("functional dependency {fd} violated in {relation} by {tuple}")]
    FdViolation { fd: String, relation: String, tuple: String },
    #[error("unsupported access pattern: {0}")]
    UnsupportedAccessPattern(String),
    #[error("epsilon {0} outside [0,1]")]
    BadEpsilon(f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<DeltaError> for EngineError {
    fn from(e: DeltaError) -> Self {
        match e {
            DeltaError::Db(d) => EngineError::Db(d),
            other => EngineError::Delta(other),
        }
    }
}

impl From<SchemaError> for EngineError {
    fn from(e: SchemaError) -> Self {
        EngineError::Delta(DeltaError::Schema(e))
    }
}

pub trait Engine: Send {
    fn name(&self) -> String;

    /// Schema of the output tuples.
    fn head(&self) -> Schema;

    fn apply(&mut self, u: &Update) -> Result<(), EngineError>;

    /// Streams every output tuple with its payload. Lazy engines bring their
    /// output up to date first.
    fn enumerate(&mut self, sink: &mut dyn FnMut(&Tuple, Payload));

    /// Canonical text of the full internal state, for determinism checks.
    fn fingerprint(&mut self) -> String;

    /// The output collected into a relation.
    fn output(&mut self) -> Relation {
        let mut out = Relation::new(self.head());
        self.enumerate(&mut |t, p| out.apply_delta(t.clone(), p).expect("head arity"));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EngineKind {
    DeltaEager,
    DeltaLazy,
    ViewTree,
    IvmEps(f64),
}

impl EngineKind {
    pub fn build(self, q: &Query, db: &Database, lifts: &LiftingSpec) -> Result<Box<dyn Engine>, EngineError> {
        Ok(match self {
            EngineKind::DeltaEager => Box::new(DeltaEngine::new(q, db, Mode::Eager, lifts.clone())?),
            EngineKind::DeltaLazy => Box::new(DeltaEngine::new(q, db, Mode::Lazy, lifts.clone())?),
            EngineKind::ViewTree => Box::new(ViewTree::build(q, db, lifts.clone())?),
            EngineKind::IvmEps(eps) => Box::new(IvmEps::for_query(q, db, eps)?),
        })
    }

    /// Whether this engine accepts `q`, decided by the static classifiers.
    pub fn supports(self, q: &Query) -> bool {
        match self {
            EngineKind::DeltaEager | EngineKind::DeltaLazy => true,
            EngineKind::ViewTree => ViewTree::supports(q).is_ok(),
            EngineKind::IvmEps(_) => IvmEps::triangle_shape(q).is_some(),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineKind::DeltaEager => f.write_str("delta-eager"),
            EngineKind::DeltaLazy => f.write_str("delta-lazy"),
            EngineKind::ViewTree => f.write_str("viewtree"),
            EngineKind::IvmEps(eps) => write!(f, "ivm-eps({eps})"),
        }
    }
}

impl FromStr for EngineKind {
    type Err = String;

    /// `delta-eager`, `delta-lazy`, `viewtree`, `ivm-eps` (ε = 0.5) or
    /// `ivm-eps:<ε>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delta-eager" | "eager-list" => Ok(EngineKind::DeltaEager),
            "delta-lazy" | "lazy-list" => Ok(EngineKind::DeltaLazy),
            "viewtree" | "fact" | "eager-fact" => Ok(EngineKind::ViewTree),
            "ivm-eps" => Ok(EngineKind::IvmEps(0.5)),
            other => match other.strip_prefix("ivm-eps:").map(str::parse::<f64>) {
                Some(Ok(eps)) => Ok(EngineKind::IvmEps(eps)),
                _ => Err(format!("unknown engine `{other}` (delta-eager, delta-lazy, viewtree, ivm-eps[:eps])")),
            },
        }
    }
}
