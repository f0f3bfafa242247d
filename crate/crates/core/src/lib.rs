//! Incremental maintenance of conjunctive aggregate queries over ring-valued
//! relations.
//!
//! The crate ships four maintenance strategies behind the [`engine::Engine`]
//! trait: first-order deltas (eager and lazy), factorized view trees, and the
//! heavy/light triangle engine. Static classifiers in [`query`] decide which
//! strategy applies to a given query.

pub mod database;
pub mod delta;
pub mod engine;
pub mod harness;
pub mod lex;
pub mod probe;
pub mod query;
pub mod relation;
pub mod ring;
pub mod triangle;
pub mod value;
pub mod viewtree;

pub use database::{Database, DbError, Update};
pub use engine::{Engine, EngineError, EngineKind};
pub use relation::{IndexId, Relation, Schema, SchemaError};
pub use ring::{LiftingSpec, Payload};
pub use value::{Tuple, Value};
