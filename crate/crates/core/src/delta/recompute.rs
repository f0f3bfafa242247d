//! Full re-evaluation from scratch. This is the oracle every engine is
//! checked against.

use crate::database::Database;
use crate::query::Query;
use crate::relation::{self, Relation, Schema};
use crate::ring::{self, LiftingSpec, Payload};
use crate::value::{Tuple, Value};

use super::DeltaError;

fn atom_relation(q: &Query, i: usize, db: &Database) -> Result<Relation, DeltaError> {
    let a = &q.atoms[i];
    Ok(db.relation(&a.relation)?.renamed(a.schema.clone())?)
}

/// Left-deep hash joins in atom order. A bound variable is summed out as
/// soon as no later atom mentions it.
pub fn recompute(q: &Query, db: &Database, lifts: &LiftingSpec) -> Result<Relation, DeltaError> {
    let mut acc = Relation::from_entries(Schema::empty(), [(Tuple::empty(), 1)])?;
    for i in 0..q.atoms.len() {
        acc = relation::join(&acc, &atom_relation(q, i, db)?);
        for v in &q.bound {
            let later = q.atoms[i + 1..].iter().any(|a| a.schema.contains(v));
            if acc.schema().contains(v) && !later {
                acc = relation::marginalize(&acc, v, lifts)?;
            }
        }
    }
    Ok(acc.reordered(&q.head_schema())?)
}

/// Nested loops over all atom tuple combinations. Exponential; only for
/// tiny instances.
pub fn recompute_naive(q: &Query, db: &Database, lifts: &LiftingSpec) -> Result<Relation, DeltaError> {
    let rels: Vec<Vec<(Tuple, Payload)>> = (0..q.atoms.len())
        .map(|i| Ok(atom_relation(q, i, db)?.sorted_entries()))
        .collect::<Result<_, DeltaError>>()?;
    let vars = q.vars();
    let mut out = Relation::new(q.head_schema());
    let mut choice = vec![0usize; rels.len()];
    if rels.iter().any(Vec::is_empty) {
        return Ok(out);
    }
    'combos: loop {
        let mut binding: Vec<Option<Value>> = vec![None; vars.len()];
        let mut payload: Payload = 1;
        let mut ok = true;
        for (i, a) in q.atoms.iter().enumerate() {
            let (t, p) = &rels[i][choice[i]];
            payload = ring::mul(payload, *p);
            for (pos, v) in a.vars().iter().enumerate() {
                let slot = vars.iter().position(|x| x == v).unwrap();
                match binding[slot] {
                    Some(val) if val != t.get(pos) => ok = false,
                    _ => binding[slot] = Some(t.get(pos)),
                }
            }
        }
        if ok {
            for v in &q.bound {
                let slot = vars.iter().position(|x| x == v).unwrap();
                payload = ring::mul(payload, lifts.lift(v, &binding[slot].unwrap()));
            }
            let head: Tuple = (0..q.free.len()).map(|s| binding[s].unwrap()).collect();
            out.apply_delta(head, payload)?;
        }
        for i in (0..choice.len()).rev() {
            choice[i] += 1;
            if choice[i] < rels[i].len() {
                continue 'combos;
            }
            choice[i] = 0;
        }
        return Ok(out);
    }
}
