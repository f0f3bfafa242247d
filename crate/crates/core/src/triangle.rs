//! Heavy/light maintenance of the triangle count
//! `Q() = sum_{A,B,C} R(A,B) * S(B,C) * T(C,A)`.
//!
//! The three relations are handled by rotation: `X0 = R(A,B)`,
//! `X1 = S(B,C)`, `X2 = T(C,A)`, each `Xi(vi, vi+1)` partitioned on its first
//! variable. A key is heavy when its degree reaches the threshold
//! `θ = ⌈N^ε⌉` and light otherwise. For every rotation we keep
//!
//! ```text
//! V_i(vi, vi-1) = sum_{vi+1} Xi_H(vi, vi+1) * Xi+1_L(vi+1, vi-1)
//! ```
//!
//! so `V_1(B,A)` is the usual `V_ST`. An update `δXi(x,y)` needs
//! `sum_z Xi+1(y,z) * Xi+2(z,x)`:
//!
//! * `y` light in `Xi+1`: scan its block, fewer than `2θ` tuples;
//! * `y` heavy, `z` light in `Xi+2`: one lookup in `V_i+1(y,x)`;
//! * `y` heavy, `z` heavy: scan the smaller of `y`'s block and the heavy
//!   keys of `Xi+2`, of which there are at most `2N/θ`.
//!
//! Keys migrate when their degree leaves `[θ/2, 2θ)`; everything is
//! repartitioned when `N` leaves `[N0/2, 2N0]`.

use std::fmt::Write as _;

use hashlink::LinkedHashSet;

use crate::database::{Database, Update};
use crate::delta::recompute;
use crate::engine::{Engine, EngineError};
use crate::probe;
use crate::query::{Atom, Query};
use crate::relation::{IndexId, Relation, Schema, Var};
use crate::ring::{self, LiftingSpec, Payload};
use crate::value::{Tuple, Value};

/// Where the atoms of a triangle query sit in the rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriangleShape {
    /// Relation names of `X0, X1, X2`.
    pub relations: [String; 3],
    /// Whether the atom lists its variables as `(vi+1, vi)`.
    pub flipped: [bool; 3],
    /// `v0, v1, v2`.
    pub vars: [Var; 3],
}

#[derive(Clone)]
struct Part {
    rel: Relation,
    by_key: IndexId,
    by_second: IndexId,
    heavy: LinkedHashSet<Value>,
    heavy_size: usize,
}

impl Part {
    fn new(i: usize) -> Self {
        let mut rel = Relation::new(Schema::new([format!("v{i}"), format!("v{}", (i + 1) % 3)]).expect("distinct"));
        let by_key = rel.build_index_on(&[0]);
        let by_second = rel.build_index_on(&[1]);
        Part { rel, by_key, by_second, heavy: LinkedHashSet::new(), heavy_size: 0 }
    }

    fn is_heavy(&self, key: &Value) -> bool {
        probe::tick();
        self.heavy.contains(key)
    }

    fn degree(&self, key: Value) -> usize {
        self.rel.degree(self.by_key, &Tuple::new([key]))
    }

    fn block(&self, key: Value) -> Vec<(Value, Payload)> {
        self.rel.probe(self.by_key, &Tuple::new([key])).map(|(t, p)| (t.get(1), p)).collect()
    }
}

#[derive(Clone)]
pub struct IvmEps {
    shape: TriangleShape,
    query: Query,
    eps: f64,
    theta: usize,
    n0: usize,
    parts: [Part; 3],
    views: [Relation; 3],
    count: Payload,
    rebalances: usize,
    checks: bool,
}

fn pair(a: Value, b: Value) -> Tuple {
    Tuple::new([a, b])
}

impl IvmEps {
    /// `R(A,B), S(B,C), T(C,A)` counted over all variables.
    pub fn triangle_query() -> Query {
        Query::new(
            "Q",
            &[],
            &["A", "B", "C"],
            vec![Atom::new("R", &["A", "B"]), Atom::new("S", &["B", "C"]), Atom::new("T", &["C", "A"])],
        )
        .expect("well-formed")
    }

    /// Recognizes a count over a cycle of three distinct binary relations.
    pub fn triangle_shape(q: &Query) -> Option<TriangleShape> {
        if q.atoms.len() != 3 || !q.free.is_empty() || q.has_self_join() || q.vars().len() != 3 {
            return None;
        }
        if q.atoms.iter().any(|a| a.vars().len() != 2 || a.vars()[0] == a.vars()[1]) {
            return None;
        }
        let v0 = q.atoms[0].vars()[0].clone();
        let v1 = q.atoms[0].vars()[1].clone();
        let next = (1..3).find(|&k| q.atoms[k].schema.contains(&v1))?;
        let last = 3 - next;
        let a1 = q.atoms[next].vars();
        let (v2, flip1) = if a1[0] == v1 { (a1[1].clone(), false) } else { (a1[0].clone(), true) };
        let a2 = q.atoms[last].vars();
        let flip2 = match (a2[0].as_str(), a2[1].as_str()) {
            (x, y) if x == v2 && y == v0 => false,
            (x, y) if x == v0 && y == v2 => true,
            _ => return None,
        };
        Some(TriangleShape {
            relations: [q.atoms[0].relation.clone(), q.atoms[next].relation.clone(), q.atoms[last].relation.clone()],
            flipped: [false, flip1, flip2],
            vars: [v0, v1, v2],
        })
    }

    /// Builds the state for the triangle query over `R, S, T` in `db`.
    pub fn init(db: &Database, eps: f64) -> Result<Self, EngineError> {
        Self::for_query(&Self::triangle_query(), db, eps)
    }

    pub fn for_query(q: &Query, db: &Database, eps: f64) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(EngineError::BadEpsilon(eps));
        }
        let shape = Self::triangle_shape(q).ok_or_else(|| EngineError::Unsupported {
            engine: "ivm-eps".into(),
            reason: format!("{} is not a triangle count over three distinct binary relations", q.name),
        })?;
        let mut parts = [Part::new(0), Part::new(1), Part::new(2)];
        for (i, part) in parts.iter_mut().enumerate() {
            let rel = db.relation(&shape.relations[i])?;
            if rel.schema().len() != 2 {
                return Err(EngineError::Unsupported {
                    engine: "ivm-eps".into(),
                    reason: format!("relation {} is not binary", shape.relations[i]),
                });
            }
            for (t, p) in rel.iter() {
                let t = if shape.flipped[i] { pair(t.get(1), t.get(0)) } else { t.clone() };
                part.rel.apply_delta(t, p)?;
            }
        }
        let views = [0, 1, 2].map(|i| {
            Relation::new(Schema::new([format!("v{i}"), format!("v{}", (i + 2) % 3)]).expect("distinct"))
        });
        let mut state = IvmEps {
            shape,
            query: q.clone(),
            eps,
            theta: 1,
            n0: 0,
            parts,
            views,
            count: 0,
            rebalances: 0,
            checks: false,
        };
        state.rebalance();
        state.count = recompute(q, db, &LiftingSpec::new())?.get(&Tuple::empty());
        Ok(state)
    }

    /// Verifies count, views and partitions after every update.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn count(&self) -> Payload {
        probe::tick();
        self.count
    }

    /// Whether some triangle exists; valid streams keep multiplicities
    /// positive, so this is `count != 0`.
    pub fn detect(&self) -> bool {
        self.count() != 0
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn threshold(&self) -> usize {
        self.theta
    }

    pub fn size(&self) -> usize {
        self.parts.iter().map(|p| p.rel.len()).sum()
    }

    /// Number of full repartitions so far, including the initial one.
    pub fn rebalances(&self) -> usize {
        self.rebalances
    }

    pub fn shape(&self) -> &TriangleShape {
        &self.shape
    }

    /// `(light, heavy)` tuple counts of `X0, X1, X2`.
    pub fn partition_sizes(&self) -> [(usize, usize); 3] {
        [0, 1, 2].map(|i| (self.parts[i].rel.len() - self.parts[i].heavy_size, self.parts[i].heavy_size))
    }

    /// `V_i` under rotation variables; `view(1)` is `V_ST(B,A)`.
    pub fn view(&self, i: usize) -> &Relation {
        &self.views[i]
    }

    /// Whether `key` is heavy in `Xi`.
    pub fn is_heavy(&self, i: usize, key: &Value) -> bool {
        self.parts[i].heavy.contains(key)
    }

    /// Applies one single-tuple update and returns the change of the count.
    pub fn update(&mut self, u: &Update) -> Result<Payload, EngineError> {
        let i = (0..3)
            .find(|&i| self.shape.relations[i] == u.relation)
            .ok_or_else(|| EngineError::UnknownRelation(u.relation.clone()))?;
        if u.tuple.arity() != 2 {
            return Err(EngineError::from(crate::relation::SchemaError::ArityMismatch {
                expected: 2,
                got: u.tuple.arity(),
            }));
        }
        if u.delta == 0 {
            return Ok(0);
        }
        let (x, y) = if self.shape.flipped[i] { (u.tuple.get(1), u.tuple.get(0)) } else { (u.tuple.get(0), u.tuple.get(1)) };
        let dq = ring::mul(u.delta, self.extensions(i, x, y));
        self.update_views(i, x, y, u.delta);
        let part = &mut self.parts[i];
        let before = part.rel.len();
        part.rel.apply_delta(pair(x, y), u.delta)?;
        if part.heavy.contains(&x) {
            part.heavy_size = part.heavy_size + part.rel.len() - before;
        }
        self.count = ring::add(self.count, dq);
        self.migrate(i, x);
        let n = self.size();
        if n > 2 * self.n0.max(1) || 2 * n < self.n0 {
            self.rebalance();
        }
        if self.checks {
            self.check_invariants().map_err(EngineError::Invariant)?;
        }
        Ok(dq)
    }

    /// `sum_z Xi+1(y,z) * Xi+2(z,x)` split over the parts of `y` and `z`.
    fn extensions(&self, i: usize, x: Value, y: Value) -> Payload {
        let u = &self.parts[(i + 1) % 3];
        let w = &self.parts[(i + 2) % 3];
        let mut sum: Payload = 0;
        if !u.is_heavy(&y) {
            for (t, p) in u.rel.probe(u.by_key, &Tuple::new([y])) {
                sum = ring::add(sum, ring::mul(p, w.rel.get(&pair(t.get(1), x))));
            }
            return sum;
        }
        sum = self.views[(i + 1) % 3].get(&pair(y, x));
        if u.degree(y) <= w.heavy.len() {
            for (t, p) in u.rel.probe(u.by_key, &Tuple::new([y])) {
                let z = t.get(1);
                if w.is_heavy(&z) {
                    sum = ring::add(sum, ring::mul(p, w.rel.get(&pair(z, x))));
                }
            }
        } else {
            for z in &w.heavy {
                probe::tick();
                let p = u.rel.get(&pair(y, *z));
                if p != 0 {
                    sum = ring::add(sum, ring::mul(p, w.rel.get(&pair(*z, x))));
                }
            }
        }
        sum
    }

    /// Maintains `V_i` (if `x` is heavy in `Xi`) or `V_i-1` (if light) for
    /// the change `Xi(x,y) += m`.
    fn update_views(&mut self, i: usize, x: Value, y: Value, m: Payload) {
        let next = (i + 1) % 3;
        let prev = (i + 2) % 3;
        if self.parts[i].is_heavy(&x) {
            let nx = &self.parts[next];
            if nx.is_heavy(&y) {
                return;
            }
            let block = nx.block(y);
            for (w, q) in block {
                self.views[i].apply_delta(pair(x, w), ring::mul(m, q)).expect("binary");
            }
        } else {
            let pv = &self.parts[prev];
            let mut contrib = Vec::new();
            if pv.heavy.len() <= pv.rel.degree(pv.by_second, &Tuple::new([x])) {
                for h in &pv.heavy {
                    probe::tick();
                    let p = pv.rel.get(&pair(*h, x));
                    if p != 0 {
                        contrib.push((*h, p));
                    }
                }
            } else {
                for (t, p) in pv.rel.probe(pv.by_second, &Tuple::new([x])) {
                    let h = t.get(0);
                    if pv.is_heavy(&h) {
                        contrib.push((h, p));
                    }
                }
            }
            for (h, p) in contrib {
                self.views[prev].apply_delta(pair(h, y), ring::mul(p, m)).expect("binary");
            }
        }
    }

    /// Moves `x` across the partition of `Xi` when its degree leaves the
    /// slack window.
    fn migrate(&mut self, i: usize, x: Value) {
        let deg = self.parts[i].degree(x);
        let heavy = self.parts[i].heavy.contains(&x);
        let flip = if heavy { 2 * deg < self.theta } else { deg >= 2 * self.theta };
        if !flip {
            return;
        }
        let block = self.parts[i].block(x);
        for &(y, p) in &block {
            self.update_views(i, x, y, -p);
        }
        let part = &mut self.parts[i];
        if heavy {
            part.heavy.remove(&x);
            part.heavy_size -= deg;
        } else {
            part.heavy.insert(x);
            part.heavy_size += deg;
        }
        for &(y, p) in &block {
            self.update_views(i, x, y, p);
        }
    }

    /// Recomputes `N` and `θ`, repartitions strictly and rebuilds the views.
    /// The count is unchanged.
    pub fn rebalance(&mut self) {
        self.n0 = self.size();
        self.theta = threshold(self.n0, self.eps);
        for part in &mut self.parts {
            part.heavy.clear();
            part.heavy_size = 0;
            let keys: Vec<(Value, usize)> = part
                .rel
                .index_keys(part.by_key)
                .map(|k| k.get(0))
                .collect::<Vec<_>>()
                .into_iter()
                .map(|k| (k, part.degree(k)))
                .collect();
            for (k, d) in keys {
                if d >= self.theta {
                    part.heavy.insert(k);
                    part.heavy_size += d;
                }
            }
        }
        for v in &mut self.views {
            *v = Relation::new(v.schema().clone());
        }
        for i in 0..3 {
            let heavy: Vec<Value> = self.parts[i].heavy.iter().copied().collect();
            for x in heavy {
                for (y, p) in self.parts[i].block(x) {
                    self.update_views(i, x, y, p);
                }
            }
        }
        self.rebalances += 1;
    }

    /// Count against recompute, views against their definitions, and the
    /// degree window of every key.
    pub fn check_invariants(&self) -> Result<(), String> {
        let want = recompute(&self.query, &self.database(), &LiftingSpec::new())
            .map_err(|e| e.to_string())?
            .get(&Tuple::empty());
        if want != self.count {
            return Err(format!("count {} but recompute gives {want}", self.count));
        }
        for i in 0..3 {
            let part = &self.parts[i];
            let next = &self.parts[(i + 1) % 3];
            let mut v = Relation::new(self.views[i].schema().clone());
            for (t, p) in part.rel.iter() {
                let (x, y) = (t.get(0), t.get(1));
                if part.heavy.contains(&x) && !next.heavy.contains(&y) {
                    for (w, q) in next.block(y) {
                        v.apply_delta(pair(x, w), ring::mul(p, q)).map_err(|e| e.to_string())?;
                    }
                }
            }
            if v != self.views[i] {
                return Err(format!("view V_{i} differs from its definition"));
            }
            let mut heavy_size = 0;
            for k in part.rel.index_keys(part.by_key) {
                let deg = part.degree(k.get(0));
                if part.heavy.contains(&k.get(0)) {
                    heavy_size += deg;
                    if 2 * deg < self.theta {
                        return Err(format!("heavy key {} of X{i} has degree {deg} below θ/2 = {}/2", k.get(0), self.theta));
                    }
                } else if deg >= 2 * self.theta {
                    return Err(format!("light key {} of X{i} has degree {deg} at least 2θ = {}", k.get(0), 2 * self.theta));
                }
            }
            if heavy_size != part.heavy_size {
                return Err(format!("heavy size of X{i} is {} but keys sum to {heavy_size}", part.heavy_size));
            }
            part.rel.check_invariants()?;
        }
        Ok(())
    }

    /// The base relations under their original names and column order.
    pub fn database(&self) -> Database {
        let mut db = Database::new();
        for i in 0..3 {
            let atom = &self.query.atoms[self.query.atoms_over(&self.shape.relations[i])[0]];
            let mut rel = Relation::new(atom.schema.clone());
            for (t, p) in self.parts[i].rel.iter() {
                let t = if self.shape.flipped[i] { pair(t.get(1), t.get(0)) } else { t.clone() };
                rel.apply_delta(t, p).expect("binary");
            }
            db.insert_relation(&self.shape.relations[i], rel);
        }
        db
    }
}

/// `max(1, ⌈n^ε⌉)`.
pub fn threshold(n: usize, eps: f64) -> usize {
    ((n as f64).powf(eps) - 1e-9).ceil().max(1.0) as usize
}

impl Engine for IvmEps {
    fn name(&self) -> String {
        format!("ivm-eps({})", self.eps)
    }

    fn head(&self) -> Schema {
        Schema::empty()
    }

    fn apply(&mut self, u: &Update) -> Result<(), EngineError> {
        self.update(u).map(|_| ())
    }

    fn enumerate(&mut self, sink: &mut dyn FnMut(&Tuple, Payload)) {
        let c = self.count();
        if c != 0 {
            sink(&Tuple::empty(), c);
        }
    }

    /// Heavy/light splits depend on the update order, so the state is
    /// rendered after a strict repartition.
    fn fingerprint(&mut self) -> String {
        let mut canon = self.clone();
        canon.rebalance();
        let mut out = String::new();
        writeln!(out, "count {} theta {}", canon.count, canon.theta).unwrap();
        for i in 0..3 {
            let part = &canon.parts[i];
            for (t, p) in part.rel.sorted_entries() {
                let side = if part.heavy.contains(&t.get(0)) { "H" } else { "L" };
                writeln!(out, "X{i}{side}{t} -> {p}").unwrap();
            }
            for (t, p) in canon.views[i].sorted_entries() {
                writeln!(out, "V{i}{t} -> {p}").unwrap();
            }
        }
        out
    }
}

impl std::fmt::Debug for IvmEps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IvmEps")
            .field("eps", &self.eps)
            .field("theta", &self.theta)
            .field("count", &self.count)
            .field("partition_sizes", &self.partition_sizes())
            .finish()
    }
}
