//! Ring-valued relations with secondary indices.
//!
//! A [`Relation`] maps tuples (keys) to nonzero payloads. Entries are kept in
//! insertion order, so enumeration is deterministic for identical operation
//! sequences. Zero payloads are evicted as soon as they appear, which keeps
//! `len()` equal to the number of live tuples at all times.

use std::collections::HashMap;
use std::fmt;

use hashlink::LinkedHashMap;
use thiserror::Error;

use crate::probe;
use crate::ring::{self, LiftingSpec, Payload};
use crate::value::Tuple;

pub type Var = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("arity mismatch: expected {expected} values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("duplicate variable {0} in schema")]
    DuplicateVariable(Var),
    #[error("unknown variable {0}")]
    UnknownVariable(Var),
    #[error("schema mismatch: {left} vs {right}")]
    Mismatch { left: Schema, right: Schema },
}

/// An ordered list of distinct variables.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Schema(Vec<Var>);

impl Schema {
    pub fn new<I, S>(vars: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<Var>,
    {
        let mut out: Vec<Var> = Vec::new();
        for v in vars {
            let v = v.into();
            if out.contains(&v) {
                return Err(SchemaError::DuplicateVariable(v));
            }
            out.push(v);
        }
        Ok(Schema(out))
    }

    pub fn empty() -> Self {
        Schema(Vec::new())
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, var: &str) -> Option<usize> {
        self.0.iter().position(|v| v == var)
    }

    pub fn contains(&self, var: &str) -> bool {
        self.position(var).is_some()
    }

    pub fn positions<S: AsRef<str>>(&self, vars: &[S]) -> Result<Vec<usize>, SchemaError> {
        vars.iter()
            .map(|v| {
                self.position(v.as_ref())
                    .ok_or_else(|| SchemaError::UnknownVariable(v.as_ref().to_string()))
            })
            .collect()
    }

    /// Variables of `self` followed by those of `other` not already present.
    pub fn union(&self, other: &Schema) -> Schema {
        let mut vars = self.0.clone();
        for v in &other.0 {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
        Schema(vars)
    }

    pub fn intersection(&self, other: &Schema) -> Vec<Var> {
        self.0.iter().filter(|v| other.contains(v)).cloned().collect()
    }

    pub fn without(&self, var: &str) -> Schema {
        Schema(self.0.iter().filter(|v| *v != var).cloned().collect())
    }

    pub fn is_subset_of(&self, other: &Schema) -> bool {
        self.0.iter().all(|v| other.contains(v))
    }

    pub fn same_set(&self, other: &Schema) -> bool {
        self.len() == other.len() && self.is_subset_of(other)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.join(","))
    }
}

impl fmt::Debug for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Handle to an index registered on a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct IndexId(usize);

type Bucket = LinkedHashMap<Tuple, Payload>;

/// Secondary index grouping full tuples by their projection on `key`.
#[derive(Clone)]
struct Index {
    key: Vec<usize>,
    buckets: LinkedHashMap<Tuple, Bucket>,
}

impl Index {
    fn set(&mut self, t: &Tuple, payload: Payload) {
        probe::tick();
        let key = t.project(&self.key);
        if payload == 0 {
            if let Some(bucket) = self.buckets.get_mut(&key) {
                bucket.remove(t);
                if bucket.is_empty() {
                    self.buckets.remove(&key);
                }
            }
        } else {
            match self.buckets.get_mut(&key) {
                Some(bucket) => match bucket.get_mut(t) {
                    Some(p) => *p = payload,
                    None => {
                        bucket.insert(t.clone(), payload);
                    }
                },
                None => {
                    let mut bucket = Bucket::new();
                    bucket.insert(t.clone(), payload);
                    self.buckets.insert(key, bucket);
                }
            }
        }
    }
}

/// Iterator over a block of entries: a whole relation or one index bucket.
/// Each yielded entry costs one probe.
pub struct Block<'a> {
    inner: Option<hashlink::linked_hash_map::Iter<'a, Tuple, Payload>>,
}

impl<'a> Block<'a> {
    pub fn empty() -> Self {
        Block { inner: None }
    }
}

impl<'a> Iterator for Block<'a> {
    type Item = (&'a Tuple, Payload);

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        let (t, p) = self.inner.as_mut()?.next()?;
        probe::tick();
        Some((t, *p))
    }
}

/// A relation over a schema with payloads in the integer ring.
#[derive(Clone)]
pub struct Relation {
    schema: Schema,
    entries: LinkedHashMap<Tuple, Payload>,
    indices: Vec<Index>,
}

impl Relation {
    pub fn new(schema: Schema) -> Self {
        Relation { schema, entries: LinkedHashMap::new(), indices: Vec::new() }
    }

    /// Builds a relation by summing the given entries.
    pub fn from_entries(
        schema: Schema,
        entries: impl IntoIterator<Item = (Tuple, Payload)>,
    ) -> Result<Self, SchemaError> {
        let mut rel = Relation::new(schema);
        for (t, p) in entries {
            rel.apply_delta(t, p)?;
        }
        Ok(rel)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Number of tuples with a nonzero payload.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Payload of `t`, zero if absent. One probe.
    #[inline]
    pub fn get(&self, t: &Tuple) -> Payload {
        probe::tick();
        self.entries.get(t).copied().unwrap_or(0)
    }

    /// `R := R + {t -> d}`, evicting the entry if its payload becomes zero.
    pub fn apply_delta(&mut self, t: Tuple, d: Payload) -> Result<(), SchemaError> {
        if t.arity() != self.schema.len() {
            return Err(SchemaError::ArityMismatch { expected: self.schema.len(), got: t.arity() });
        }
        if d == 0 {
            return Ok(());
        }
        probe::tick();
        let new = match self.entries.get_mut(&t) {
            Some(p) => {
                let new = ring::add(*p, d);
                if new == 0 {
                    self.entries.remove(&t);
                } else {
                    *p = new;
                }
                new
            }
            None => {
                self.entries.insert(t.clone(), d);
                d
            }
        };
        for idx in &mut self.indices {
            idx.set(&t, new);
        }
        Ok(())
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> Block<'_> {
        Block { inner: Some(self.entries.iter()) }
    }

    /// Registers an index on the given key variables, or returns the existing
    /// index with the same key.
    pub fn build_index<S: AsRef<str>>(&mut self, key: &[S]) -> Result<IndexId, SchemaError> {
        let positions = self.schema.positions(key)?;
        Ok(self.build_index_on(&positions))
    }

    /// Like [`Relation::build_index`] but keyed by column positions.
    pub fn build_index_on(&mut self, positions: &[usize]) -> IndexId {
        assert!(positions.iter().all(|&p| p < self.schema.len()), "index position out of range");
        if let Some(i) = self.indices.iter().position(|idx| idx.key == positions) {
            return IndexId(i);
        }
        let mut idx = Index { key: positions.to_vec(), buckets: LinkedHashMap::new() };
        for (t, p) in &self.entries {
            let key = t.project(positions);
            idx.buckets.entry(key).or_insert_with(Bucket::new).insert(t.clone(), *p);
        }
        self.indices.push(idx);
        IndexId(self.indices.len() - 1)
    }

    /// Key positions of a registered index.
    pub fn index_key(&self, id: IndexId) -> &[usize] {
        &self.indices[id.0].key
    }

    /// All entries whose projection on the index key equals `key`.
    pub fn probe(&self, id: IndexId, key: &Tuple) -> Block<'_> {
        probe::tick();
        match self.indices[id.0].buckets.get(key) {
            Some(bucket) => Block { inner: Some(bucket.iter()) },
            None => Block::empty(),
        }
    }

    /// Number of entries agreeing with `key` on the index key. One probe.
    pub fn degree(&self, id: IndexId, key: &Tuple) -> usize {
        probe::tick();
        self.indices[id.0].buckets.get(key).map_or(0, |b| b.len())
    }

    /// Number of distinct keys in an index.
    pub fn distinct_keys(&self, id: IndexId) -> usize {
        self.indices[id.0].buckets.len()
    }

    /// Distinct keys of an index, one probe each.
    pub fn index_keys(&self, id: IndexId) -> impl Iterator<Item = &Tuple> + '_ {
        self.indices[id.0].buckets.keys().inspect(|_| probe::tick())
    }

    /// Same entries under new variable names (positional).
    pub fn renamed(&self, schema: Schema) -> Result<Relation, SchemaError> {
        if schema.len() != self.schema.len() {
            return Err(SchemaError::ArityMismatch { expected: self.schema.len(), got: schema.len() });
        }
        Ok(Relation { schema, entries: self.entries.clone(), indices: Vec::new() })
    }

    /// Same entries with columns permuted to match `schema`, which must hold
    /// the same set of variables.
    pub fn reordered(&self, schema: &Schema) -> Result<Relation, SchemaError> {
        if !schema.same_set(&self.schema) {
            return Err(SchemaError::Mismatch { left: self.schema.clone(), right: schema.clone() });
        }
        if *schema == self.schema {
            return Ok(Relation { schema: schema.clone(), entries: self.entries.clone(), indices: Vec::new() });
        }
        let positions = self.schema.positions(schema.vars())?;
        let mut out = Relation::new(schema.clone());
        for (t, p) in &self.entries {
            out.entries.insert(t.project(&positions), *p);
        }
        Ok(out)
    }

    /// Entries sorted by tuple, without touching probe counters.
    pub fn sorted_entries(&self) -> Vec<(Tuple, Payload)> {
        let mut v: Vec<_> = self.entries.iter().map(|(t, p)| (t.clone(), *p)).collect();
        v.sort();
        v
    }

    /// Checks zero eviction and index consistency.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some((t, _)) = self.entries.iter().find(|(_, p)| **p == 0) {
            return Err(format!("zero payload stored for {t}"));
        }
        for idx in &self.indices {
            let mut seen = 0;
            for (key, bucket) in &idx.buckets {
                if bucket.is_empty() {
                    return Err(format!("empty bucket for key {key}"));
                }
                for (t, p) in bucket {
                    if t.project(&idx.key) != *key {
                        return Err(format!("{t} filed under wrong key {key}"));
                    }
                    if self.entries.get(t) != Some(p) {
                        return Err(format!("index payload for {t} out of sync"));
                    }
                    seen += 1;
                }
            }
            if seen != self.entries.len() {
                return Err(format!("index holds {seen} tuples, relation holds {}", self.entries.len()));
            }
        }
        Ok(())
    }
}

/// Equality of contents: same schema and same key-payload map. Insertion
/// order and registered indices are ignored.
impl PartialEq for Relation {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.entries.len() == other.entries.len()
            && self.entries.iter().all(|(t, p)| other.entries.get(t) == Some(p))
    }
}

impl Eq for Relation {}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.schema)?;
        for (i, (t, p)) in self.sorted_entries().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}->{p}")?;
        }
        f.write_str("}")
    }
}

/// `(R + S)(t) = R(t) + S(t)`. `S` may list the same variables in another
/// order; the result uses the order of `R`.
pub fn union(r: &Relation, s: &Relation) -> Result<Relation, SchemaError> {
    let s = s.reordered(r.schema())?;
    let mut out = Relation { schema: r.schema.clone(), entries: r.entries.clone(), indices: Vec::new() };
    for (t, p) in &s.entries {
        out.apply_delta(t.clone(), *p)?;
    }
    Ok(out)
}

/// Natural join with payload product, evaluated as a hash join on the shared
/// variables. The output schema lists the variables of `s` first.
pub fn join(s: &Relation, t: &Relation) -> Relation {
    let shared = s.schema.intersection(&t.schema);
    let s_key = s.schema.positions(&shared).expect("shared vars in s");
    let t_key = t.schema.positions(&shared).expect("shared vars in t");
    let extra: Vec<usize> = (0..t.schema.len()).filter(|i| !t_key.contains(i)).collect();
    let schema = s.schema.union(&t.schema);

    let mut table: HashMap<Tuple, Vec<(&Tuple, Payload)>> = HashMap::new();
    for (tt, p) in &t.entries {
        table.entry(tt.project(&t_key)).or_default().push((tt, *p));
    }
    let mut out = Relation::new(schema);
    for (st, sp) in &s.entries {
        if let Some(matches) = table.get(&st.project(&s_key)) {
            for (tt, tp) in matches {
                let joined: Tuple = st.values().iter().copied().chain(extra.iter().map(|&i| tt.get(i))).collect();
                out.apply_delta(joined, ring::mul(*sp, *tp)).expect("join arity");
            }
        }
    }
    out
}

/// `(sum_X R)(t) = sum { R(t1) * g_X(t1.X) | t = t1 without X }`.
pub fn marginalize(r: &Relation, var: &str, lifts: &LiftingSpec) -> Result<Relation, SchemaError> {
    let pos = r.schema.position(var).ok_or_else(|| SchemaError::UnknownVariable(var.to_string()))?;
    let keep: Vec<usize> = (0..r.schema.len()).filter(|&i| i != pos).collect();
    let mut out = Relation::new(r.schema.without(var));
    for (t, p) in &r.entries {
        let lifted = ring::mul(*p, lifts.lift(var, &t.get(pos)));
        out.apply_delta(t.project(&keep), lifted)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;
    use proptest::prelude::*;

    fn schema(vars: &[&str]) -> Schema {
        Schema::new(vars.iter().copied()).unwrap()
    }

    fn rel(vars: &[&str], rows: &[(&[&str], Payload)]) -> Relation {
        Relation::from_entries(schema(vars), rows.iter().map(|(t, p)| (Tuple::parse(t), *p))).unwrap()
    }

    fn sample_triangle() -> (Relation, Relation, Relation) {
        let r = rel(&["A", "B"], &[(&["a1", "b1"], 2), (&["a2", "b1"], 3)]);
        let s = rel(&["B", "C"], &[(&["b1", "c1"], 2), (&["b1", "c2"], 1)]);
        let t = rel(&["C", "A"], &[(&["c1", "a1"], 1), (&["c2", "a1"], 3), (&["c2", "a2"], 3)]);
        (r, s, t)
    }

    #[test]
    fn apply_delta_adds_payloads() {
        let (mut r, _, _) = sample_triangle();
        r.apply_delta(Tuple::parse(&["a2", "b1"]), -2).unwrap();
        assert_eq!(r.get(&Tuple::parse(&["a2", "b1"])), 1);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn apply_delta_evicts_zero() {
        let mut r = rel(&["A", "B"], &[(&["a", "b"], 5), (&["c", "d"], 1)]);
        r.apply_delta(Tuple::parse(&["a", "b"]), -5).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r.iter().all(|(t, _)| *t != Tuple::parse(&["a", "b"])));
        r.check_invariants().unwrap();
    }

    #[test]
    fn apply_delta_into_empty() {
        let mut r = Relation::new(schema(&["X", "Y"]));
        r.apply_delta(Tuple::parse(&["x", "y"]), 7).unwrap();
        assert_eq!(r, rel(&["X", "Y"], &[(&["x", "y"], 7)]));
    }

    #[test]
    fn apply_delta_rejects_wrong_arity() {
        let mut r = Relation::new(schema(&["X", "Y"]));
        let err = r.apply_delta(Tuple::parse(&["x"]), 1).unwrap_err();
        assert_eq!(err, SchemaError::ArityMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn union_examples() {
        let a = rel(&["A"], &[(&["a"], 2)]);
        let b = rel(&["A"], &[(&["a"], 3), (&["b"], 1)]);
        assert_eq!(union(&a, &b).unwrap(), rel(&["A"], &[(&["a"], 5), (&["b"], 1)]));
        let neg = rel(&["A"], &[(&["a"], -2)]);
        assert!(union(&a, &neg).unwrap().is_empty());

        let (r, _, _) = sample_triangle();
        let delta = rel(&["A", "B"], &[(&["a2", "b1"], -2)]);
        assert_eq!(
            union(&r, &delta).unwrap(),
            rel(&["A", "B"], &[(&["a1", "b1"], 2), (&["a2", "b1"], 1)])
        );
        let other = rel(&["A", "C"], &[]);
        assert!(matches!(union(&r, &other), Err(SchemaError::Mismatch { .. })));
    }

    #[test]
    fn join_triangle() {
        let (r, s, t) = sample_triangle();
        let rst = join(&join(&r, &s), &t);
        assert_eq!(
            rst,
            rel(
                &["A", "B", "C"],
                &[(&["a1", "b1", "c1"], 4), (&["a1", "b1", "c2"], 6), (&["a2", "b1", "c2"], 9)]
            )
        );
        let mut q = rst;
        for v in ["A", "B", "C"] {
            q = marginalize(&q, v, &LiftingSpec::new()).unwrap();
        }
        assert_eq!(q, rel(&[], &[(&[], 19)]));
    }

    #[test]
    fn join_with_empty_and_cartesian() {
        let (r, _, _) = sample_triangle();
        assert!(join(&r, &Relation::new(schema(&["B", "C"]))).is_empty());
        let a = rel(&["A"], &[(&["a"], 2)]);
        let x = rel(&["X"], &[(&["x"], 3)]);
        assert_eq!(join(&a, &x), rel(&["A", "X"], &[(&["a", "x"], 6)]));
    }

    #[test]
    fn marginalize_examples() {
        // singleton groups: projection keeping payloads
        let r = rel(&["A", "B"], &[(&["a", "1"], 2), (&["b", "2"], 3)]);
        assert_eq!(
            marginalize(&r, "B", &LiftingSpec::new()).unwrap(),
            rel(&["A"], &[(&["a"], 2), (&["b"], 3)])
        );
        // g(x) = x: 2*1 + 3*2 = 8
        let r = rel(&["A", "B"], &[(&["a", "1"], 2), (&["a", "2"], 3)]);
        let lifts = LiftingSpec::new().with_value_lift("B");
        assert_eq!(marginalize(&r, "B", &lifts).unwrap(), rel(&["A"], &[(&["a"], 8)]));
        assert_eq!(
            marginalize(&r, "Z", &lifts).unwrap_err(),
            SchemaError::UnknownVariable("Z".into())
        );
    }

    #[test]
    fn enumerate_examples() {
        assert_eq!(Relation::new(schema(&["A"])).iter().count(), 0);
        let (_, _, mut t) = sample_triangle();
        assert_eq!(t.iter().count(), 3);
        t.apply_delta(Tuple::parse(&["c2", "a1"]), -3).unwrap();
        let seen: Vec<_> = t.iter().map(|(t, _)| t.clone()).collect();
        assert_eq!(seen, vec![Tuple::parse(&["c1", "a1"]), Tuple::parse(&["c2", "a2"])]);
    }

    #[test]
    fn enumeration_follows_insertion_order() {
        let mut r = Relation::new(schema(&["A"]));
        for v in ["z", "a", "m"] {
            r.apply_delta(Tuple::parse(&[v]), 1).unwrap();
        }
        let order: Vec<_> = r.iter().map(|(t, _)| t.to_string()).collect();
        assert_eq!(order, ["(z)", "(a)", "(m)"]);
    }

    #[test]
    fn index_examples() {
        let (_, mut s, _) = sample_triangle();
        let by_b = s.build_index(&["B"]).unwrap();
        assert_eq!(s.probe(by_b, &Tuple::parse(&["b1"])).count(), 2);
        assert_eq!(s.probe(by_b, &Tuple::parse(&["b9"])).count(), 0);
        let full = s.build_index(&["B", "C"]).unwrap();
        let hits: Vec<_> = s.probe(full, &Tuple::parse(&["b1", "c2"])).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].1, 1);
        assert_eq!(s.build_index(&["B"]).unwrap(), by_b);
        assert_eq!(s.build_index(&["Q"]).unwrap_err(), SchemaError::UnknownVariable("Q".into()));
    }

    #[test]
    fn probes_are_counted() {
        let (_, mut s, _) = sample_triangle();
        let by_b = s.build_index(&["B"]).unwrap();
        let (n, probes) = probe::measure(|| s.probe(by_b, &Tuple::parse(&["b1"])).count());
        assert_eq!(n, 2);
        assert_eq!(probes, 3);
    }

    // --- naive nested-loop reference operators -------------------------------

    fn naive_join(s: &Relation, t: &Relation) -> Vec<(Tuple, Payload)> {
        let schema = s.schema().union(t.schema());
        let mut out: Vec<(Tuple, Payload)> = Vec::new();
        for (st, sp) in s.sorted_entries() {
            for (tt, tp) in t.sorted_entries() {
                let ok = s.schema().vars().iter().enumerate().all(|(i, v)| match t.schema().position(v) {
                    Some(j) => st.get(i) == tt.get(j),
                    None => true,
                });
                if ok {
                    let tuple: Tuple = schema
                        .vars()
                        .iter()
                        .map(|v| match s.schema().position(v) {
                            Some(i) => st.get(i),
                            None => tt.get(t.schema().position(v).unwrap()),
                        })
                        .collect();
                    out.push((tuple, sp * tp));
                }
            }
        }
        out
    }

    fn arb_relation(vars: &'static [&'static str]) -> impl Strategy<Value = Relation> {
        let row = (prop::collection::vec(0i64..4, vars.len()), -3i64..4);
        prop::collection::vec(row, 0..40).prop_map(move |rows| {
            Relation::from_entries(
                Schema::new(vars.iter().copied()).unwrap(),
                rows.into_iter().map(|(vals, p)| (vals.into_iter().map(Value::Int).collect(), p)),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn join_matches_nested_loop(s in arb_relation(&["A", "B"]), t in arb_relation(&["B", "C"])) {
            let fast = join(&s, &t);
            let naive = Relation::from_entries(fast.schema().clone(), naive_join(&s, &t)).unwrap();
            prop_assert_eq!(fast, naive);
        }

        #[test]
        fn marginalize_matches_group_sum(r in arb_relation(&["A", "B", "C"])) {
            let lifts = LiftingSpec::new().with_value_lift("B");
            let fast = marginalize(&r, "B", &lifts).unwrap();
            let mut groups: std::collections::BTreeMap<Tuple, Payload> = Default::default();
            for (t, p) in r.sorted_entries() {
                *groups.entry(t.project(&[0, 2])).or_default() += p * t.get(1).as_int().unwrap();
            }
            let naive = Relation::from_entries(schema(&["A", "C"]), groups).unwrap();
            prop_assert_eq!(fast, naive);
        }

        #[test]
        fn union_is_pointwise(r in arb_relation(&["A", "B"]), s in arb_relation(&["A", "B"])) {
            let u = union(&r, &s).unwrap();
            for (t, _) in r.sorted_entries().into_iter().chain(s.sorted_entries()) {
                prop_assert_eq!(u.get(&t), r.get(&t) + s.get(&t));
            }
            u.check_invariants().map_err(TestCaseError::fail)?;
        }

        #[test]
        fn delta_round_trip_restores_relation(r in arb_relation(&["A", "B"]), a in 0i64..4, b in 0i64..4, d in 1i64..5) {
            let mut r = r;
            r.build_index(&["A"]).unwrap();
            r.build_index(&["B"]).unwrap();
            let before = r.clone();
            let t = Tuple::new([Value::Int(a), Value::Int(b)]);
            r.apply_delta(t.clone(), d).unwrap();
            r.check_invariants().map_err(TestCaseError::fail)?;
            r.apply_delta(t, -d).unwrap();
            r.check_invariants().map_err(TestCaseError::fail)?;
            prop_assert_eq!(&r, &before);
            let by_a = r.build_index(&["A"]).unwrap();
            let key = Tuple::new([Value::Int(a)]);
            let mut got: Vec<_> = r.probe(by_a, &key).map(|(t, p)| (t.clone(), p)).collect();
            got.sort();
            let mut want: Vec<_> = before.sorted_entries().into_iter().filter(|(t, _)| t.get(0) == Value::Int(a)).collect();
            want.sort();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn updates_commute(rows in prop::collection::vec((0i64..3, 0i64..3, -2i64..3), 0..30), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let build = |rows: &[(i64, i64, i64)]| {
                let mut r = Relation::new(schema(&["A", "B"]));
                r.build_index(&["B"]).unwrap();
                for (a, b, d) in rows {
                    r.apply_delta(Tuple::new([Value::Int(*a), Value::Int(*b)]), *d).unwrap();
                }
                r
            };
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let x = build(&rows);
            let y = build(&shuffled);
            y.check_invariants().map_err(TestCaseError::fail)?;
            prop_assert_eq!(x, y);
        }
    }
}
