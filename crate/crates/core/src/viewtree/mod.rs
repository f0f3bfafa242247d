//! Factorized view trees for q-hierarchical queries.
//!
//! Every query variable `X` owns two materialized views:
//!
//! * `V'_X(dep(X), X)`, the join of the atoms placed at `X` with the views
//!   of its child variables, and
//! * `V_X(dep(X)) = sum_X V'_X`, which feeds the parent.
//!
//! `dep(X)` is the set of ancestors of `X` that occur in atoms below `X`.
//! A single-tuple update walks from its atom to the root; at every step the
//! delta is joined with the sibling views through pre-registered indices,
//! which are point lookups for q-hierarchical queries. When the order comes
//! from an fd-reduct the lookups are partial but return at most one group
//! on data satisfying the dependencies.
//!
//! Enumeration walks the free variables top-down (they form a top fragment
//! of the order) with one open index block per variable.

mod enumerate;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::database::{Database, DbError, Update};
use crate::delta::{ensure_relations, recompute};
use crate::engine::{Engine, EngineError};
use crate::query::{is_q_hierarchical, is_tractable_cqap, sigma_reduct, Fd, Query};
use crate::relation::{self, IndexId, Relation, Schema, SchemaError, Var};
use crate::ring::{self, LiftingSpec, Payload};
use crate::value::{Tuple, Value};

pub use enumerate::EnumCursor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Input {
    Atom(usize),
    Child(usize),
}

#[derive(Debug, Clone)]
struct Step {
    input: Input,
    index: IndexId,
    key: Vec<usize>,
    bind: Vec<(usize, usize)>,
}

/// How to extend one delta tuple of a driving input to tuples of `V'_X`.
#[derive(Debug, Clone)]
struct Plan {
    drive: Vec<usize>,
    steps: Vec<Step>,
}

#[derive(Clone)]
struct Node {
    var: Var,
    parent: Option<usize>,
    children: Vec<usize>,
    atoms: Vec<usize>,
    dep: Vec<Var>,
    /// Free in the query that fixed the order.
    free: bool,
    /// Marginalize with the lifting function of `var`.
    lift: bool,
    /// Free in the order but bound in the original query: multiply the lift
    /// in during enumeration.
    level_lift: bool,
    join: Relation,
    join_by_dep: IndexId,
    marg: Relation,
    /// Plans per input: atoms first, then children, in their order here.
    plans: Vec<Plan>,
    /// Index of this node among its parent's inputs.
    input_in_parent: usize,
}

impl Node {
    fn inputs(&self) -> impl Iterator<Item = Input> + '_ {
        self.atoms.iter().map(|&a| Input::Atom(a)).chain(self.children.iter().map(|&c| Input::Child(c)))
    }
}

#[derive(Debug, Clone)]
struct FdCheck {
    fd: Fd,
    index: IndexId,
    lhs: Vec<usize>,
    rhs: Vec<usize>,
}

#[derive(Clone)]
pub struct ViewTree {
    query: Query,
    shape: Query,
    lifts: LiftingSpec,
    atom_rels: Vec<Relation>,
    atom_node: Vec<Option<usize>>,
    atom_input: Vec<usize>,
    fd_checks: Vec<Vec<FdCheck>>,
    nodes: Vec<Node>,
    roots: Vec<usize>,
    nullary: Vec<usize>,
    checks: bool,
}

impl ViewTree {
    /// The q-hierarchical query whose variable order the tree follows: the
    /// query itself or its fd-reduct.
    pub fn supports(q: &Query) -> Result<Query, EngineError> {
        let direct = is_q_hierarchical(q)?;
        if direct.holds {
            return Ok(q.clone());
        }
        if !q.fds.is_empty() {
            let reduct = sigma_reduct(q, &q.fds);
            if is_q_hierarchical(&reduct)?.holds {
                return Ok(reduct);
            }
        }
        if q.cqap && !q.inputs.is_empty() && is_tractable_cqap(q).holds {
            return Err(EngineError::UnsupportedAccessPattern(format!(
                "{} is a tractable CQAP but not q-hierarchical; only top-fragment inputs are supported",
                q.name
            )));
        }
        Err(EngineError::NotQHierarchical(direct.witness.unwrap_or_default()))
    }

    pub fn build(q: &Query, db: &Database, lifts: LiftingSpec) -> Result<Self, EngineError> {
        let shape = Self::supports(q)?;
        let mut own = Database::new();
        for a in &q.atoms {
            if let Some(r) = db.get(&a.relation) {
                own.insert_relation(&a.relation, r.clone());
            }
        }
        ensure_relations(q, &mut own)?;
        let mut tree = Self::empty(q, shape, lifts);
        for (k, a) in q.atoms.iter().enumerate() {
            for (t, p) in own.relation(&a.relation)?.sorted_entries() {
                tree.update_atom(k, &t, p)?;
            }
        }
        Ok(tree)
    }

    fn empty(q: &Query, shape: Query, lifts: LiftingSpec) -> Self {
        let atom_sets: BTreeMap<Var, Vec<usize>> = shape
            .vars()
            .into_iter()
            .map(|v| {
                let set = (0..shape.atoms.len()).filter(|&i| shape.atoms[i].schema.contains(&v)).collect();
                (v, set)
            })
            .collect();
        let mut order = shape.vars();
        order.sort_by_key(|v| (std::cmp::Reverse(atom_sets[v].len()), !shape.is_input(v), !shape.is_free(v), v.clone()));

        let mut nodes: Vec<Node> = Vec::new();
        let mut roots = Vec::new();
        for (i, v) in order.iter().enumerate() {
            let parent = (0..i).rev().find(|&j| atom_sets[v].iter().all(|a| atom_sets[&order[j]].contains(a)));
            let free = shape.is_free(v);
            nodes.push(Node {
                var: v.clone(),
                parent,
                children: Vec::new(),
                atoms: Vec::new(),
                dep: Vec::new(),
                free,
                lift: !free && !lifts.is_trivial(v),
                level_lift: free && !q.is_free(v) && !lifts.is_trivial(v),
                join: Relation::new(Schema::empty()),
                join_by_dep: IndexId::default(),
                marg: Relation::new(Schema::empty()),
                plans: Vec::new(),
                input_in_parent: 0,
            });
            match parent {
                Some(p) => nodes[p].children.push(i),
                None => roots.push(i),
            }
        }

        let mut atom_node = vec![None; q.atoms.len()];
        let mut nullary = Vec::new();
        for (k, a) in shape.atoms.iter().enumerate() {
            match (0..order.len()).rev().find(|&i| a.schema.contains(&order[i])) {
                Some(n) => {
                    nodes[n].atoms.push(k);
                    atom_node[k] = Some(n);
                }
                None => nullary.push(k),
            }
        }

        // dep(X) = ancestors of X occurring in original atoms below X
        fn subtree_vars(nodes: &[Node], n: usize, q: &Query, out: &mut Vec<Var>) {
            for &a in &nodes[n].atoms {
                for v in q.atoms[a].vars() {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            for &c in &nodes[n].children {
                subtree_vars(nodes, c, q, out);
            }
        }
        for n in 0..nodes.len() {
            let mut below = Vec::new();
            subtree_vars(&nodes, n, q, &mut below);
            let mut anc = Vec::new();
            let mut p = nodes[n].parent;
            while let Some(x) = p {
                anc.push(nodes[x].var.clone());
                p = nodes[x].parent;
            }
            anc.reverse();
            nodes[n].dep = anc.into_iter().filter(|v| below.contains(v)).collect();
            let mut jvars = nodes[n].dep.clone();
            jvars.push(nodes[n].var.clone());
            nodes[n].join = Relation::new(Schema::new(jvars).expect("distinct"));
            nodes[n].marg = Relation::new(Schema::new(nodes[n].dep.clone()).expect("distinct"));
            let dep_pos: Vec<usize> = (0..nodes[n].dep.len()).collect();
            nodes[n].join_by_dep = nodes[n].join.build_index_on(&dep_pos);
        }

        let mut atom_rels: Vec<Relation> = q.atoms.iter().map(|a| Relation::new(a.schema.clone())).collect();
        let mut atom_input = vec![0; q.atoms.len()];
        for n in 0..nodes.len() {
            for (i, &a) in nodes[n].atoms.iter().enumerate() {
                atom_input[a] = i;
            }
            let offset = nodes[n].atoms.len();
            for (i, c) in nodes[n].children.clone().into_iter().enumerate() {
                nodes[c].input_in_parent = offset + i;
            }
        }
        for n in 0..nodes.len() {
            let inputs: Vec<Input> = nodes[n].inputs().collect();
            let plans = inputs
                .iter()
                .map(|&drive| Self::plan(n, drive, &inputs, &mut nodes, &mut atom_rels))
                .collect();
            nodes[n].plans = plans;
        }

        let mut fd_checks = vec![Vec::new(); q.atoms.len()];
        for (k, a) in q.atoms.iter().enumerate() {
            for fd in &q.fds {
                if fd.lhs.iter().chain(&fd.rhs).all(|v| a.schema.contains(v)) {
                    let lhs: Vec<usize> = fd.lhs.iter().map(|v| a.schema.position(v).unwrap()).collect();
                    let rhs = fd.rhs.iter().map(|v| a.schema.position(v).unwrap()).collect();
                    let index = atom_rels[k].build_index_on(&lhs);
                    fd_checks[k].push(FdCheck { fd: fd.clone(), index, lhs, rhs });
                }
            }
        }

        ViewTree {
            query: q.clone(),
            shape,
            lifts,
            atom_rels,
            atom_node,
            atom_input,
            fd_checks,
            nodes,
            roots,
            nullary,
            checks: false,
        }
    }

    fn input_vars(nodes: &[Node], atom_rels: &[Relation], input: Input) -> Vec<Var> {
        match input {
            Input::Atom(a) => atom_rels[a].schema().vars().to_vec(),
            Input::Child(c) => nodes[c].dep.clone(),
        }
    }

    /// Fully covered inputs first (lookups), then the one sharing the most
    /// bound variables; ties by input order.
    fn plan(n: usize, drive: Input, inputs: &[Input], nodes: &mut [Node], atom_rels: &mut [Relation]) -> Plan {
        let jschema = nodes[n].join.schema().clone();
        let slot = |v: &Var| jschema.position(v).expect("input vars inside join schema");
        let dvars = Self::input_vars(nodes, atom_rels, drive);
        let drive_slots: Vec<usize> = dvars.iter().map(slot).collect();
        let mut bound: Vec<bool> = vec![false; jschema.len()];
        for &s in &drive_slots {
            bound[s] = true;
        }
        let mut rest: Vec<Input> = inputs.iter().copied().filter(|&i| i != drive).collect();
        let mut steps = Vec::new();
        while !rest.is_empty() {
            let score = |i: &Input| {
                let vars = Self::input_vars(nodes, atom_rels, *i);
                let hit = vars.iter().filter(|v| bound[slot(v)]).count();
                (hit == vars.len(), hit)
            };
            let best = (0..rest.len()).max_by_key(|&k| (score(&rest[k]), std::cmp::Reverse(k))).unwrap();
            let input = rest.remove(best);
            let vars = Self::input_vars(nodes, atom_rels, input);
            let key_pos: Vec<usize> = (0..vars.len()).filter(|&p| bound[slot(&vars[p])]).collect();
            let key = key_pos.iter().map(|&p| slot(&vars[p])).collect();
            let bind: Vec<(usize, usize)> =
                (0..vars.len()).filter(|p| !key_pos.contains(p)).map(|p| (p, slot(&vars[p]))).collect();
            for &(_, s) in &bind {
                bound[s] = true;
            }
            let index = match input {
                Input::Atom(a) => atom_rels[a].build_index_on(&key_pos),
                Input::Child(c) => nodes[c].marg.build_index_on(&key_pos),
            };
            steps.push(Step { input, index, key, bind });
        }
        debug_assert!(bound.iter().all(|b| *b), "inputs cover the join schema");
        Plan { drive: drive_slots, steps }
    }

    /// Compares all views against direct evaluation after every update.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    fn relation_of(&self, input: Input) -> &Relation {
        match input {
            Input::Atom(a) => &self.atom_rels[a],
            Input::Child(c) => &self.nodes[c].marg,
        }
    }

    fn delta_join(&self, n: usize, plan: usize, delta: &[(Tuple, Payload)]) -> Vec<(Tuple, Payload)> {
        let node = &self.nodes[n];
        let plan = &node.plans[plan];
        let mut out = Vec::new();
        let mut slots = vec![Value::Int(0); node.join.schema().len()];
        for (t, p) in delta {
            for (pos, &s) in plan.drive.iter().enumerate() {
                slots[s] = t.get(pos);
            }
            self.extend(plan, 0, &mut slots, *p, &mut out);
        }
        out
    }

    fn extend(&self, plan: &Plan, k: usize, slots: &mut Vec<Value>, acc: Payload, out: &mut Vec<(Tuple, Payload)>) {
        let Some(step) = plan.steps.get(k) else {
            out.push((Tuple::new(slots.iter().copied()), acc));
            return;
        };
        let key: Tuple = step.key.iter().map(|&s| slots[s]).collect();
        for (t, p) in self.relation_of(step.input).probe(step.index, &key) {
            for &(pos, s) in &step.bind {
                slots[s] = t.get(pos);
            }
            self.extend(plan, k + 1, slots, ring::mul(acc, p), out);
        }
    }

    fn check_fds(&self, k: usize, t: &Tuple, d: Payload) -> Result<(), EngineError> {
        if self.fd_checks[k].is_empty() || self.atom_rels[k].get(t) != 0 || d == 0 {
            return Ok(());
        }
        for c in &self.fd_checks[k] {
            if let Some((other, _)) = self.atom_rels[k].probe(c.index, &t.project(&c.lhs)).next() {
                if other.project(&c.rhs) != t.project(&c.rhs) {
                    return Err(EngineError::FdViolation {
                        fd: c.fd.to_string(),
                        relation: self.query.atoms[k].relation.clone(),
                        tuple: t.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    fn update_atom(&mut self, k: usize, t: &Tuple, d: Payload) -> Result<(), EngineError> {
        let arity = self.atom_rels[k].schema().len();
        if t.arity() != arity {
            return Err(DbError::Schema {
                relation: self.query.atoms[k].relation.clone(),
                source: SchemaError::ArityMismatch { expected: arity, got: t.arity() },
            }
            .into());
        }
        if d == 0 {
            return Ok(());
        }
        self.check_fds(k, t, d)?;
        self.atom_rels[k].apply_delta(t.clone(), d)?;
        let Some(mut at) = self.atom_node[k] else {
            return Ok(());
        };
        let mut plan = self.atom_input[k];
        let mut pending = vec![(t.clone(), d)];
        loop {
            let dj = self.delta_join(at, plan, &pending);
            let node = &mut self.nodes[at];
            let dep_pos: Vec<usize> = (0..node.dep.len()).collect();
            let var_pos = node.dep.len();
            let mut dm = Relation::new(node.marg.schema().clone());
            for (t, p) in dj {
                let lifted = if node.lift { ring::mul(p, self.lifts.lift(&node.var, &t.get(var_pos))) } else { p };
                dm.apply_delta(t.project(&dep_pos), lifted)?;
                node.join.apply_delta(t, p)?;
            }
            pending = dm.iter().map(|(t, p)| (t.clone(), p)).collect();
            for (t, p) in &pending {
                node.marg.apply_delta(t.clone(), *p)?;
            }
            match node.parent {
                Some(parent) if !pending.is_empty() => {
                    plan = node.input_in_parent;
                    at = parent;
                }
                _ => return Ok(()),
            }
        }
    }

    /// Product of the views that do not depend on any free variable.
    fn scalar(&self) -> Payload {
        let mut s: Payload = 1;
        for &k in &self.nullary {
            s = ring::mul(s, self.atom_rels[k].get(&Tuple::empty()));
        }
        for &r in &self.roots {
            if !self.nodes[r].free {
                s = ring::mul(s, self.nodes[r].marg.get(&Tuple::empty()));
            }
        }
        s
    }

    /// Cursor over the output tuples and their payloads.
    pub fn cursor(&self) -> EnumCursor<'_> {
        EnumCursor::new(self, None).expect("no access binding")
    }

    /// Output tuples agreeing with `binding` on the input variables, listed
    /// in `query.inputs` order. The inputs must form a top fragment of the
    /// variable order.
    pub fn enumerate_with_access(&self, binding: &Tuple) -> Result<EnumCursor<'_>, EngineError> {
        EnumCursor::new(self, Some(binding))
    }

    /// Each view against direct evaluation, calibration, and relation
    /// invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let trivial = LiftingSpec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let mut want = Relation::from_entries(Schema::empty(), [(Tuple::empty(), 1)]).unwrap();
            for input in n.inputs() {
                want = relation::join(&want, self.relation_of(input));
            }
            let want = want.reordered(n.join.schema()).map_err(|e| e.to_string())?;
            if want != n.join {
                return Err(format!("V'_{} differs from the join of its inputs", n.var));
            }
            let lifts = if n.lift { &self.lifts } else { &trivial };
            if relation::marginalize(&n.join, &n.var, lifts).map_err(|e| e.to_string())? != n.marg {
                return Err(format!("V_{} differs from its marginalization", n.var));
            }
            for (t, _) in n.join.iter() {
                for &c in &n.children {
                    let child = &self.nodes[c];
                    let key: Tuple = child.dep.iter().map(|v| t.get(n.join.schema().position(v).unwrap())).collect();
                    if child.join.probe(child.join_by_dep, &key).next().is_none() {
                        return Err(format!("tuple {t} of V'_{} has no partner in V'_{}", n.var, child.var));
                    }
                }
            }
            n.join.check_invariants().map_err(|e| format!("node {i}: {e}"))?;
            n.marg.check_invariants().map_err(|e| format!("node {i}: {e}"))?;
        }
        Ok(())
    }

    /// Stable text rendering of the tree, root first.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.query).unwrap();
        if self.shape.atoms != self.query.atoms {
            writeln!(out, "order from fd-reduct: {}", self.shape.to_string().lines().next().unwrap()).unwrap();
        }
        for &k in &self.nullary {
            writeln!(out, "{}()", self.query.atoms[k].relation).unwrap();
        }
        for &r in &self.roots {
            self.explain_node(r, 0, &mut out);
        }
        out
    }

    fn explain_node(&self, n: usize, depth: usize, out: &mut String) {
        let node = &self.nodes[n];
        let pad = "  ".repeat(depth);
        let dep = node.dep.join(",");
        let jvars = node.join.schema().vars().join(",");
        let kind = if node.free { "free" } else { "bound" };
        writeln!(out, "{pad}V_{}({dep}) = sum_{} V'_{}({jvars})  [{kind}]", node.var, node.var, node.var).unwrap();
        let parts: Vec<String> = node
            .inputs()
            .map(|i| match i {
                Input::Atom(a) => format!("{}({})", self.query.atoms[a].relation, self.query.atoms[a].vars().join(",")),
                Input::Child(c) => format!("V_{}({})", self.nodes[c].var, self.nodes[c].dep.join(",")),
            })
            .collect();
        writeln!(out, "{pad}  V'_{}({jvars}) = {}", node.var, parts.join(" * ")).unwrap();
        for &c in &node.children {
            self.explain_node(c, depth + 2, out);
        }
    }
}

impl Engine for ViewTree {
    fn name(&self) -> String {
        "viewtree".into()
    }

    fn head(&self) -> Schema {
        self.query.head_schema()
    }

    fn apply(&mut self, u: &Update) -> Result<(), EngineError> {
        let atoms = self.query.atoms_over(&u.relation);
        let &[k] = atoms.as_slice() else {
            return Err(EngineError::UnknownRelation(u.relation.clone()));
        };
        self.update_atom(k, &u.tuple, u.delta)?;
        if self.checks {
            self.check_invariants().map_err(EngineError::Invariant)?;
            let db = self.database();
            let want = recompute(&self.query, &db, &self.lifts)?;
            if self.output() != want {
                return Err(EngineError::Invariant("enumeration differs from recompute".into()));
            }
        }
        Ok(())
    }

    fn enumerate(&mut self, sink: &mut dyn FnMut(&Tuple, Payload)) {
        for (t, p) in self.cursor() {
            sink(&t, p);
        }
    }

    fn fingerprint(&mut self) -> String {
        let mut out = String::new();
        for (a, rel) in self.query.atoms.iter().zip(&self.atom_rels) {
            for (t, p) in rel.sorted_entries() {
                writeln!(out, "{}{t} -> {p}", a.relation).unwrap();
            }
        }
        for n in &self.nodes {
            for (t, p) in n.join.sorted_entries() {
                writeln!(out, "V'_{}{t} -> {p}", n.var).unwrap();
            }
            for (t, p) in n.marg.sorted_entries() {
                writeln!(out, "V_{}{t} -> {p}", n.var).unwrap();
            }
        }
        out
    }
}

impl std::fmt::Debug for ViewTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ViewTree").field("query", &self.query.to_string()).field("nodes", &self.nodes.len()).finish()
    }
}

impl ViewTree {
    /// The base relations as a database, under the atoms' variable names.
    pub fn database(&self) -> Database {
        let mut db = Database::new();
        for (a, rel) in self.query.atoms.iter().zip(&self.atom_rels) {
            db.insert_relation(&a.relation, rel.clone());
        }
        db
    }
}
