//! Named collections of relations and the textual database format.
//!
//! ```text
//! # triangle sample
//! schema R(A,B)
//! schema S(B,C)
//! R(a1,b1) -> 2
//! S(b1,c1) -> 2
//! ```
//!
//! An entry without `-> payload` has payload 1. Repeated entries add up.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::lex::{Cursor, ParseError, Tok};
use crate::relation::{Relation, Schema, SchemaError};
use crate::ring::Payload;
use crate::value::{Tuple, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DbError {
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("relation {0} already declared")]
    DuplicateRelation(String),
    #[error("{relation}: {source}")]
    Schema { relation: String, source: SchemaError },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A single-tuple change `relation(tuple) += delta`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Update {
    pub relation: String,
    pub tuple: Tuple,
    pub delta: Payload,
}

impl Update {
    pub fn new(relation: impl Into<String>, tuple: Tuple, delta: Payload) -> Self {
        Update { relation: relation.into(), tuple, delta }
    }

    pub fn insert(relation: &str, values: &[&str]) -> Self {
        Update::new(relation, Tuple::parse(values), 1)
    }

    pub fn delete(relation: &str, values: &[&str]) -> Self {
        Update::new(relation, Tuple::parse(values), -1)
    }

    pub fn negated(&self) -> Update {
        Update { delta: -self.delta, ..self.clone() }
    }
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (sign, m) = if self.delta < 0 { ('-', self.delta.unsigned_abs()) } else { ('+', self.delta as u64) };
        write!(f, "{sign} {}{} * {m}", self.relation, self.tuple)
    }
}

#[derive(Clone, Default, PartialEq, Eq)]
pub struct Database {
    relations: BTreeMap<String, Relation>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str, schema: Schema) -> Result<(), DbError> {
        if self.relations.contains_key(name) {
            return Err(DbError::DuplicateRelation(name.to_string()));
        }
        self.relations.insert(name.to_string(), Relation::new(schema));
        Ok(())
    }

    /// Declares `name` unless it already exists with the same arity.
    pub fn ensure(&mut self, name: &str, schema: Schema) -> Result<(), DbError> {
        match self.relations.get(name) {
            Some(r) if r.schema().len() == schema.len() => Ok(()),
            Some(r) => Err(DbError::Schema {
                relation: name.to_string(),
                source: SchemaError::ArityMismatch { expected: r.schema().len(), got: schema.len() },
            }),
            None => self.declare(name, schema),
        }
    }

    pub fn insert_relation(&mut self, name: &str, rel: Relation) {
        self.relations.insert(name.to_string(), rel);
    }

    pub fn get(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn relation(&self, name: &str) -> Result<&Relation, DbError> {
        self.relations.get(name).ok_or_else(|| DbError::UnknownRelation(name.to_string()))
    }

    pub fn relation_mut(&mut self, name: &str) -> Result<&mut Relation, DbError> {
        self.relations.get_mut(name).ok_or_else(|| DbError::UnknownRelation(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Relation)> {
        self.relations.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of stored tuples across all relations.
    pub fn size(&self) -> usize {
        self.relations.values().map(Relation::len).sum()
    }

    pub fn apply(&mut self, u: &Update) -> Result<(), DbError> {
        let rel = self.relation_mut(&u.relation)?;
        rel.apply_delta(u.tuple.clone(), u.delta)
            .map_err(|source| DbError::Schema { relation: u.relation.clone(), source })
    }

    pub fn parse(text: &str) -> Result<Database, DbError> {
        let mut db = Database::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut cur = Cursor::new(raw, line)?;
            if cur.at_end() {
                continue;
            }
            let head = cur.word("relation name or `schema`")?;
            if head == "schema" && matches!(cur.peek(), Some(Tok::Word(_))) {
                let (l, c) = cur.mark();
                let name = cur.word("relation name")?;
                let vars = cur.word_list("variable")?;
                cur.finish()?;
                let schema = Schema::new(vars).map_err(|e| ParseError::new(l, c, e.to_string()))?;
                db.declare(&name, schema).map_err(|e| ParseError::new(l, c, e.to_string()))?;
                continue;
            }
            let values = cur.word_list("value")?;
            let payload = if cur.peek() == Some(&Tok::Arrow) {
                cur.bump();
                let (l, c) = cur.mark();
                let w = cur.word("payload")?;
                w.parse::<Payload>().map_err(|_| ParseError::new(l, c, format!("invalid payload `{w}`")))?
            } else {
                1
            };
            cur.finish()?;
            let rel = db
                .relations
                .get_mut(&head)
                .ok_or_else(|| ParseError::new(line, 1, format!("relation {head} used before its schema declaration")))?;
            let tuple: Tuple = values.iter().map(|v| Value::parse(v)).collect();
            rel.apply_delta(tuple, payload).map_err(|e| ParseError::new(line, 1, format!("{head}: {e}")))?;
        }
        Ok(db)
    }

    /// Canonical text: schemas, then entries sorted by relation and tuple.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, rel) in &self.relations {
            out.push_str(&format!("schema {name}{}\n", rel.schema()));
        }
        for (name, rel) in &self.relations {
            for (t, p) in rel.sorted_entries() {
                out.push_str(&format!("{name}{t} -> {p}\n"));
            }
        }
        out
    }
}

impl fmt::Debug for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.relations.iter()).finish()
    }
}
