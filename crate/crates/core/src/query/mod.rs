//! Conjunctive aggregate queries and their static classifiers.
//!
//! Textual form, one query per file:
//!
//! ```text
//! Q(A,C) := sum(B) R(A,B), S(B,C)@static
//! fd: A -> C; B,C -> D
//! ```
//!
//! The head lists free variables; a `|` splits them into outputs (left) and
//! inputs (right), which makes the query a CQAP. `Q(·|A,B)` and `Q(|A,B)` both
//! denote a CQAP without outputs. Every variable used by an atom must be
//! declared either in the head or in `sum(...)`.

mod classify;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::lex::ParseError;
use crate::relation::{Schema, Var};

pub use classify::{
    atoms_of, check_static_dynamic, classify, fd_closure, fracture, is_hierarchical,
    is_q_hierarchical, is_tractable_cqap, sigma_reduct, ClassificationReport, Verdict,
};
pub use parse::parse_query;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at {0}")]
    Syntax(#[from] ParseError),
    #[error("variable {0} listed twice in the head")]
    DuplicateFree(Var),
    #[error("variable {0} is both free and bound")]
    FreeAndBound(Var),
    #[error("variable {0} occurs in no atom")]
    UnusedVariable(Var),
    #[error("variable {0} is neither free nor bound")]
    UndeclaredVariable(Var),
    #[error("variable {var} repeated in atom {relation}")]
    RepeatedInAtom { relation: String, var: Var },
    #[error("functional dependency mentions unknown variable {0}")]
    UnknownFdVariable(Var),
    #[error("unknown variable {0}")]
    UnknownVariable(Var),
    #[error("self-join on {0}: classifier requires self-join-free queries")]
    SelfJoin(String),
    #[error("query {0} has no input/output annotation")]
    NotCqap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub relation: String,
    pub schema: Schema,
    /// `None` when the atom carries no annotation; treated as dynamic.
    pub mode: Option<Mode>,
}

impl Atom {
    pub fn new(relation: &str, vars: &[&str]) -> Self {
        Atom {
            relation: relation.to_string(),
            schema: Schema::new(vars.iter().copied()).expect("distinct atom variables"),
            mode: None,
        }
    }

    pub fn vars(&self) -> &[Var] {
        self.schema.vars()
    }

    pub fn is_dynamic(&self) -> bool {
        self.mode != Some(Mode::Static)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.relation, self.schema)?;
        match self.mode {
            Some(Mode::Static) => f.write_str("@static"),
            Some(Mode::Dynamic) => f.write_str("@dynamic"),
            None => Ok(()),
        }
    }
}

/// A functional dependency `lhs -> rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fd {
    pub lhs: BTreeSet<Var>,
    pub rhs: BTreeSet<Var>,
}

impl Fd {
    pub fn new(lhs: &[&str], rhs: &[&str]) -> Self {
        Fd {
            lhs: lhs.iter().map(|s| s.to_string()).collect(),
            rhs: rhs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Fd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lhs: Vec<&str> = self.lhs.iter().map(String::as_str).collect();
        let rhs: Vec<&str> = self.rhs.iter().map(String::as_str).collect();
        write!(f, "{} -> {}", lhs.join(","), rhs.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub name: String,
    /// Free variables in head order: outputs first, then inputs.
    pub free: Vec<Var>,
    /// Input variables (a suffix of `free`). Empty unless `cqap`.
    pub inputs: Vec<Var>,
    /// Whether the head carries a `|` access-pattern split.
    pub cqap: bool,
    pub bound: Vec<Var>,
    pub atoms: Vec<Atom>,
    pub fds: Vec<Fd>,
}

impl Query {
    /// Builds and validates a query without access patterns.
    pub fn new(name: &str, free: &[&str], bound: &[&str], atoms: Vec<Atom>) -> Result<Self, QueryError> {
        let q = Query {
            name: name.to_string(),
            free: free.iter().map(|s| s.to_string()).collect(),
            inputs: Vec::new(),
            cqap: false,
            bound: bound.iter().map(|s| s.to_string()).collect(),
            atoms,
            fds: Vec::new(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_fds(mut self, fds: Vec<Fd>) -> Result<Self, QueryError> {
        self.fds = fds;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let mut seen = BTreeSet::new();
        for v in &self.free {
            if !seen.insert(v) {
                return Err(QueryError::DuplicateFree(v.clone()));
            }
        }
        for v in &self.bound {
            if self.free.contains(v) {
                return Err(QueryError::FreeAndBound(v.clone()));
            }
            if !seen.insert(v) {
                return Err(QueryError::DuplicateFree(v.clone()));
            }
        }
        let used: BTreeSet<&Var> = self.atoms.iter().flat_map(|a| a.vars()).collect();
        for v in &used {
            if !seen.contains(v) {
                return Err(QueryError::UndeclaredVariable((*v).clone()));
            }
        }
        for v in &seen {
            if !used.contains(v) {
                return Err(QueryError::UnusedVariable((*v).clone()));
            }
        }
        for fd in &self.fds {
            for v in fd.lhs.iter().chain(&fd.rhs) {
                if !seen.contains(v) {
                    return Err(QueryError::UnknownFdVariable(v.clone()));
                }
            }
        }
        debug_assert!(self.inputs.iter().all(|v| self.free.contains(v)));
        Ok(())
    }

    /// Free variables that are not inputs.
    pub fn outputs(&self) -> Vec<Var> {
        self.free.iter().filter(|v| !self.inputs.contains(v)).cloned().collect()
    }

    /// All variables: free then bound.
    pub fn vars(&self) -> Vec<Var> {
        self.free.iter().chain(&self.bound).cloned().collect()
    }

    pub fn is_free(&self, v: &str) -> bool {
        self.free.iter().any(|f| f == v)
    }

    pub fn is_input(&self, v: &str) -> bool {
        self.inputs.iter().any(|f| f == v)
    }

    pub fn head_schema(&self) -> Schema {
        Schema::new(self.free.iter().cloned()).expect("validated head")
    }

    /// Relation names occurring in more than one atom, sorted.
    pub fn self_joins(&self) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &self.atoms {
            *counts.entry(&a.relation).or_default() += 1;
        }
        counts.into_iter().filter(|(_, n)| *n > 1).map(|(r, _)| r.to_string()).collect()
    }

    pub fn has_self_join(&self) -> bool {
        !self.self_joins().is_empty()
    }

    /// Indices of atoms over `relation`.
    pub fn atoms_over(&self, relation: &str) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].relation == relation).collect()
    }

    /// Distinct relation names in atom order.
    pub fn relations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in &self.atoms {
            if !out.contains(&a.relation) {
                out.push(a.relation.clone());
            }
        }
        out
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        if self.cqap {
            let outs = self.outputs();
            if outs.is_empty() {
                f.write_str("·")?;
            } else {
                f.write_str(&outs.join(","))?;
            }
            write!(f, "|{}", self.inputs.join(","))?;
        } else {
            f.write_str(&self.free.join(","))?;
        }
        f.write_str(") :=")?;
        if !self.bound.is_empty() {
            write!(f, " sum({})", self.bound.join(","))?;
        }
        for (i, a) in self.atoms.iter().enumerate() {
            write!(f, "{}{a}", if i == 0 { " " } else { ", " })?;
        }
        if !self.fds.is_empty() {
            let fds: Vec<String> = self.fds.iter().map(Fd::to_string).collect();
            write!(f, "\nfd: {}", fds.join("; "))?;
        }
        Ok(())
    }
}
