//! First-order delta maintenance, eager and lazy, plus the recompute oracle.

mod expr;
mod plan;
mod recompute;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::database::{Database, DbError, Update};
use crate::engine::{Engine, EngineError};
use crate::query::Query;
use crate::relation::{Relation, Schema, SchemaError};
use crate::ring::{LiftingSpec, Payload};
use crate::value::Tuple;

pub use expr::{derive_delta, ViewExpr};
pub use recompute::{recompute, recompute_naive};

use plan::{Compiled, Monomial, MonomialDisplay, Sources};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeltaError {
    #[error("relation {0} does not occur in the expression")]
    RelationAbsent(String),
    #[error("unknown view {0}")]
    UnknownView(String),
    #[error("name {0} is already taken")]
    NameClash(String),
    #[error(transparent)]
    Schema(SchemaError),
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Keep the output materialized after every update.
    Eager,
    /// Update base relations only; recompute on enumeration.
    Lazy,
}

struct AuxView {
    name: String,
    def: Query,
    /// Compiled deltas per base relation index.
    deltas: Vec<Vec<Compiled>>,
}

/// Declares every relation of `q` missing from `db`, using the variable
/// names of its first atom as schema.
pub fn ensure_relations(q: &Query, db: &mut Database) -> Result<(), DbError> {
    for a in &q.atoms {
        db.ensure(&a.relation, a.schema.clone())?;
    }
    Ok(())
}

pub struct DeltaEngine {
    query: Query,
    mode: Mode,
    lifts: LiftingSpec,
    base_names: Vec<String>,
    db: Database,
    output: Relation,
    aux: Vec<AuxView>,
    aux_rels: Vec<Relation>,
    /// Compiled deltas of the query per base relation index.
    deltas: Vec<Vec<Compiled>>,
    version: u64,
    output_version: u64,
    checks: bool,
}

impl DeltaEngine {
    pub fn new(query: &Query, db: &Database, mode: Mode, lifts: LiftingSpec) -> Result<Self, EngineError> {
        let base_names = query.relations();
        let mut own = Database::new();
        for name in &base_names {
            if let Some(rel) = db.get(name) {
                own.insert_relation(name, rel.clone());
            }
        }
        ensure_relations(query, &mut own)?;
        let output = recompute(query, &own, &lifts)?;
        let mut e = DeltaEngine {
            query: query.clone(),
            mode,
            lifts,
            base_names,
            db: own,
            output,
            aux: Vec::new(),
            aux_rels: Vec::new(),
            deltas: Vec::new(),
            version: 0,
            output_version: 0,
            checks: false,
        };
        e.compile_query();
        Ok(e)
    }

    /// Compares output and auxiliary views against recompute after every
    /// update. Slow; meant for tests.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    fn compile_query(&mut self) {
        let full = Monomial::of_query(&self.query);
        let mut deltas = Vec::new();
        for name in self.base_names.clone() {
            let mut compiled = Vec::new();
            for mut m in full.deltas(&name) {
                for (i, aux) in self.aux.iter().enumerate() {
                    m.rewrite_with(i, &Monomial::of_query(&aux.def), &self.lifts);
                }
                compiled.push(Compiled::new(m, &self.base_names, &mut self.db, &mut self.aux_rels, &self.lifts));
            }
            deltas.push(compiled);
        }
        self.deltas = deltas;
    }

    /// Materializes `def` as a view named `def.name` and uses it in the
    /// query's delta programs wherever its atoms can be matched.
    pub fn register_auxiliary_view(&mut self, def: &Query) -> Result<(), DeltaError> {
        let name = &def.name;
        if self.aux.iter().any(|a| &a.name == name) || self.db.get(name).is_some() || *name == self.query.name {
            return Err(DeltaError::NameClash(name.clone()));
        }
        for a in &def.atoms {
            if !self.base_names.contains(&a.relation) {
                return Err(DeltaError::RelationAbsent(a.relation.clone()));
            }
        }
        let rel = recompute(def, &self.db, &self.lifts)?;
        self.aux_rels.push(rel);
        let full = Monomial::of_query(def);
        let mut deltas = Vec::new();
        for base in self.base_names.clone() {
            let compiled = full
                .deltas(&base)
                .into_iter()
                .map(|m| Compiled::new(m, &self.base_names, &mut self.db, &mut self.aux_rels, &self.lifts))
                .collect();
            deltas.push(compiled);
        }
        self.aux.push(AuxView { name: name.clone(), def: def.clone(), deltas });
        self.compile_query();
        Ok(())
    }

    pub fn auxiliary_view(&self, name: &str) -> Option<&Relation> {
        self.aux.iter().position(|a| a.name == name).map(|i| &self.aux_rels[i])
    }

    /// The compiled delta programs, one line per monomial.
    pub fn describe(&self) -> String {
        let names: Vec<String> = self.aux.iter().map(|a| a.name.clone()).collect();
        let mut out = String::new();
        for (i, aux) in self.aux.iter().enumerate() {
            writeln!(out, "view {} := {}", aux.name, aux.def).unwrap();
            for (b, progs) in self.base_names.iter().zip(&aux.deltas) {
                for c in progs {
                    writeln!(out, "  δ{}[{b}] = {}", names[i], MonomialDisplay { mono: &c.mono, aux_names: &names }).unwrap();
                }
            }
        }
        for (b, progs) in self.base_names.iter().zip(&self.deltas) {
            for c in progs {
                writeln!(out, "δ{}[{b}] = {}", self.query.name, MonomialDisplay { mono: &c.mono, aux_names: &names })
                    .unwrap();
            }
        }
        out
    }

    fn sources(&self) -> Sources<'_> {
        Sources {
            base: self.base_names.iter().map(|n| self.db.get(n).expect("base")).collect(),
            aux: self.aux_rels.iter().collect(),
        }
    }

    /// δQ for a single-tuple update, evaluated on the current state.
    pub fn delta_output(&self, u: &Update) -> Result<Relation, EngineError> {
        let b = self.base_index(u)?;
        let src = self.sources();
        let mut out = Relation::new(self.query.head_schema());
        for c in &self.deltas[b] {
            c.run(&u.tuple, u.delta, &src, &self.lifts, &mut out);
        }
        Ok(out)
    }

    fn base_index(&self, u: &Update) -> Result<usize, EngineError> {
        let b = self
            .base_names
            .iter()
            .position(|n| *n == u.relation)
            .ok_or_else(|| EngineError::UnknownRelation(u.relation.clone()))?;
        let arity = self.db.get(&u.relation).unwrap().schema().len();
        if u.tuple.arity() != arity {
            return Err(DbError::Schema {
                relation: u.relation.clone(),
                source: SchemaError::ArityMismatch { expected: arity, got: u.tuple.arity() },
            }
            .into());
        }
        Ok(b)
    }

    fn refresh(&mut self) {
        if self.output_version != self.version {
            self.output = recompute(&self.query, &self.db, &self.lifts).expect("relations exist");
            self.output_version = self.version;
        }
    }

    /// The current output, refreshing it first in lazy mode.
    pub fn output(&mut self) -> &Relation {
        self.refresh();
        &self.output
    }

    fn check(&self) -> Result<(), EngineError> {
        let want = recompute(&self.query, &self.db, &self.lifts)?;
        if self.mode == Mode::Eager && want != self.output {
            return Err(EngineError::Invariant(format!("output {:?} != recompute {:?}", self.output, want)));
        }
        for (a, rel) in self.aux.iter().zip(&self.aux_rels) {
            if recompute(&a.def, &self.db, &self.lifts)? != *rel {
                return Err(EngineError::Invariant(format!("auxiliary view {} out of date", a.name)));
            }
        }
        for (name, rel) in self.db.iter() {
            rel.check_invariants().map_err(|e| EngineError::Invariant(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

impl Engine for DeltaEngine {
    fn name(&self) -> String {
        match self.mode {
            Mode::Eager => "delta-eager".into(),
            Mode::Lazy => "delta-lazy".into(),
        }
    }

    fn head(&self) -> Schema {
        self.query.head_schema()
    }

    fn apply(&mut self, u: &Update) -> Result<(), EngineError> {
        let b = self.base_index(u)?;
        if u.delta == 0 {
            return Ok(());
        }
        if self.mode == Mode::Eager {
            let dq = self.delta_output(u)?;
            let src = self.sources();
            let mut daux = Vec::new();
            for (i, aux) in self.aux.iter().enumerate() {
                let mut d = Relation::new(self.aux_rels[i].schema().clone());
                for c in &aux.deltas[b] {
                    c.run(&u.tuple, u.delta, &src, &self.lifts, &mut d);
                }
                daux.push(d);
            }
            drop(src);
            for (t, p) in dq.iter() {
                self.output.apply_delta(t.clone(), p)?;
            }
            for (rel, d) in self.aux_rels.iter_mut().zip(daux) {
                for (t, p) in d.iter() {
                    rel.apply_delta(t.clone(), p)?;
                }
            }
        }
        self.db.apply(u)?;
        self.version += 1;
        if self.mode == Mode::Eager {
            self.output_version = self.version;
        }
        if self.checks {
            self.check()?;
        }
        Ok(())
    }

    fn enumerate(&mut self, sink: &mut dyn FnMut(&Tuple, Payload)) {
        self.refresh();
        for (t, p) in self.output.iter() {
            sink(t, p);
        }
    }

    fn fingerprint(&mut self) -> String {
        self.refresh();
        let mut out = self.db.to_text();
        for (t, p) in self.output.sorted_entries() {
            writeln!(out, "{}{t} -> {p}", self.query.name).unwrap();
        }
        for (a, rel) in self.aux.iter().zip(&self.aux_rels) {
            for (t, p) in rel.sorted_entries() {
                writeln!(out, "{}{t} -> {p}", a.name).unwrap();
            }
        }
        out
    }
}

/// Evaluates `q` directly from its view expression; used to cross-check
/// the compiled plans.
pub fn eval_query(q: &Query, db: &Database, lifts: &LiftingSpec) -> Result<Relation, DeltaError> {
    let r = ViewExpr::from_query(q).eval(db, &BTreeMap::new(), None, lifts)?;
    Ok(r.reordered(&q.head_schema())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe;
    use crate::query::parse_query;

    const TRIANGLE_DB: &str = "\
schema R(A,B)
schema S(B,C)
schema T(C,A)
R(a1,b1) -> 2
R(a2,b1) -> 3
S(b1,c1) -> 2
S(b1,c2) -> 1
T(c1,a1) -> 1
T(c2,a1) -> 3
T(c2,a2) -> 3
";

    fn tri() -> Query {
        parse_query("Q() := sum(A,B,C) R(A,B), S(B,C), T(C,A)").unwrap()
    }

    fn count(e: &mut DeltaEngine) -> Payload {
        e.output().get(&Tuple::empty())
    }

    #[test]
    fn recompute_examples() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let lifts = LiftingSpec::new();
        assert_eq!(recompute(&tri(), &db, &lifts).unwrap().get(&Tuple::empty()), 19);
        let mut empty = Database::new();
        ensure_relations(&tri(), &mut empty).unwrap();
        assert!(recompute(&tri(), &empty, &lifts).unwrap().is_empty());
        let mut db2 = db.clone();
        db2.apply(&Update::new("R", Tuple::parse(&["a2", "b1"]), -2)).unwrap();
        assert_eq!(recompute(&tri(), &db2, &lifts).unwrap().get(&Tuple::empty()), 13);
        assert_eq!(recompute_naive(&tri(), &db2, &lifts).unwrap(), recompute(&tri(), &db2, &lifts).unwrap());
        assert_eq!(
            recompute(&parse_query("Q(A) := Z(A)").unwrap(), &db, &lifts).unwrap_err(),
            DeltaError::Db(DbError::UnknownRelation("Z".into()))
        );
    }

    #[test]
    fn eager_triangle() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Eager, LiftingSpec::new()).unwrap().with_checks(true);
        assert_eq!(count(&mut e), 19);
        let u = Update::new("R", Tuple::parse(&["a2", "b1"]), -2);
        assert_eq!(e.delta_output(&u).unwrap().get(&Tuple::empty()), -6);
        e.apply(&u).unwrap();
        assert_eq!(count(&mut e), 13);
    }

    #[test]
    fn update_without_partners_leaves_output() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Eager, LiftingSpec::new()).unwrap();
        e.apply(&Update::insert("R", &["a9", "b9"])).unwrap();
        assert_eq!(count(&mut e), 19);
    }

    #[test]
    fn lazy_recomputes_once() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Lazy, LiftingSpec::new()).unwrap();
        e.apply(&Update::new("R", Tuple::parse(&["a2", "b1"]), -2)).unwrap();
        e.apply(&Update::insert("S", &["b1", "c1"])).unwrap();
        e.apply(&Update::delete("S", &["b1", "c1"])).unwrap();
        let (c, first) = probe::measure(|| count(&mut e));
        assert_eq!(c, 13);
        let (_, second) = probe::measure(|| count(&mut e));
        assert!(second < first, "cached output reused: {second} vs {first}");
    }

    #[test]
    fn auxiliary_view_triangle() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Eager, LiftingSpec::new()).unwrap().with_checks(true);
        e.register_auxiliary_view(&parse_query("V_ST(B,A) := sum(C) S(B,C), T(C,A)").unwrap()).unwrap();
        let v = e.auxiliary_view("V_ST").unwrap();
        // brute force: (b1,a1) = 2*1 + 1*3, (b1,a2) = 1*3
        assert_eq!(v.get(&Tuple::parse(&["b1", "a1"])), 5);
        assert_eq!(v.get(&Tuple::parse(&["b1", "a2"])), 3);
        assert_eq!(v.len(), 2);
        assert!(e.describe().contains("δQ[R] = sum[A,B](δR(A,B) * V_ST(B,A))"), "{}", e.describe());

        let u = Update::new("R", Tuple::parse(&["a2", "b1"]), -2);
        let (dq, probes) = probe::measure(|| e.delta_output(&u).unwrap());
        assert_eq!(dq.get(&Tuple::empty()), -6);
        assert!(probes <= 4, "one view lookup, got {probes} probes");
        e.apply(&u).unwrap();
        e.apply(&Update::insert("S", &["b1", "c3"])).unwrap();
        e.apply(&Update::insert("T", &["c3", "a1"])).unwrap();
        assert_eq!(count(&mut e), 13 + 2);
        assert_eq!(e.auxiliary_view("V_ST").unwrap().get(&Tuple::parse(&["b1", "a1"])), 6);

        let err = e.register_auxiliary_view(&parse_query("V_ST(B) := sum(C) S(B,C)").unwrap()).unwrap_err();
        assert_eq!(err, DeltaError::NameClash("V_ST".into()));
    }

    #[test]
    fn auxiliary_view_over_empty_relations() {
        let mut db = Database::new();
        ensure_relations(&tri(), &mut db).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Eager, LiftingSpec::new()).unwrap();
        e.register_auxiliary_view(&parse_query("V_ST(B,A) := sum(C) S(B,C), T(C,A)").unwrap()).unwrap();
        assert!(e.auxiliary_view("V_ST").unwrap().is_empty());
    }

    #[test]
    fn self_join_delta_uses_cross_term() {
        let q = parse_query("Q(A,C) := sum(B) E(A,B), E(B,C)").unwrap();
        let mut db = Database::new();
        ensure_relations(&q, &mut db).unwrap();
        let mut e = DeltaEngine::new(&q, &db, Mode::Eager, LiftingSpec::new()).unwrap().with_checks(true);
        for (a, b) in [("1", "1"), ("1", "2"), ("2", "1"), ("1", "1")] {
            e.apply(&Update::insert("E", &[a, b])).unwrap();
        }
        e.apply(&Update::delete("E", &["1", "1"])).unwrap();
    }

    #[test]
    fn lifted_sum() {
        let q = parse_query("Q(A) := sum(B) R(A,B)").unwrap();
        let db = Database::parse("schema R(A,B)\nR(a,1) -> 2\nR(a,2) -> 3\n").unwrap();
        let lifts = LiftingSpec::new().with_value_lift("B");
        let mut e = DeltaEngine::new(&q, &db, Mode::Eager, lifts.clone()).unwrap().with_checks(true);
        assert_eq!(e.output().get(&Tuple::parse(&["a"])), 8);
        e.apply(&Update::insert("R", &["a", "5"])).unwrap();
        assert_eq!(e.output().get(&Tuple::parse(&["a"])), 13);
        assert_eq!(eval_query(&q, e.database(), &lifts).unwrap(), *e.output());
    }

    #[test]
    fn unknown_relation_and_arity() {
        let db = Database::parse(TRIANGLE_DB).unwrap();
        let mut e = DeltaEngine::new(&tri(), &db, Mode::Eager, LiftingSpec::new()).unwrap();
        assert!(matches!(e.apply(&Update::insert("Z", &["x"])), Err(EngineError::UnknownRelation(_))));
        assert!(e.apply(&Update::insert("R", &["x"])).is_err());
    }
}
