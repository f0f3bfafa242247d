use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::relation::{Schema, Var};

use super::{Atom, Fd, Query, QueryError};

/// Outcome of a boolean classifier. `witness` explains a negative answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub holds: bool,
    pub witness: Option<String>,
}

impl Verdict {
    fn yes() -> Self {
        Verdict { holds: true, witness: None }
    }

    fn no(witness: String) -> Self {
        Verdict { holds: false, witness: Some(witness) }
    }

    fn from_witness(w: Option<String>) -> Self {
        w.map_or_else(Verdict::yes, Verdict::no)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.witness {
            None => f.write_str("yes"),
            Some(w) => write!(f, "no: {w}"),
        }
    }
}

type AtomSets = BTreeMap<Var, BTreeSet<usize>>;

fn atom_sets(q: &Query) -> AtomSets {
    let mut out: AtomSets = BTreeMap::new();
    for (i, a) in q.atoms.iter().enumerate() {
        for v in a.vars() {
            out.entry(v.clone()).or_default().insert(i);
        }
    }
    out
}

fn show_atoms(q: &Query, set: &BTreeSet<usize>) -> String {
    let names: Vec<String> = if q.has_self_join() {
        set.iter().map(|&i| format!("{}#{}", q.atoms[i].relation, i + 1)).collect()
    } else {
        set.iter().map(|&i| q.atoms[i].relation.clone()).collect()
    };
    format!("{{{}}}", names.join(","))
}

/// Indices of the atoms whose schema contains `x`.
pub fn atoms_of(q: &Query, x: &str) -> Result<BTreeSet<usize>, QueryError> {
    atom_sets(q).remove(x).ok_or_else(|| QueryError::UnknownVariable(x.to_string()))
}

fn reject_self_joins(q: &Query) -> Result<(), QueryError> {
    match q.self_joins().into_iter().next() {
        Some(r) => Err(QueryError::SelfJoin(r)),
        None => Ok(()),
    }
}

// Pairs are scanned in lexicographic order of variable names, so the first
// violation found is the least one.
fn hierarchy_violation(q: &Query) -> Option<String> {
    let sets = atom_sets(q);
    for (x, a) in &sets {
        for (y, b) in sets.range::<Var, _>((std::ops::Bound::Excluded(x), std::ops::Bound::Unbounded)) {
            if !a.is_subset(b) && !b.is_subset(a) && !a.is_disjoint(b) {
                return Some(format!(
                    "({x},{y}): atoms({x})={} and atoms({y})={} overlap but neither contains the other",
                    show_atoms(q, a),
                    show_atoms(q, b)
                ));
            }
        }
    }
    None
}

/// First pair `(a, b)` where `b` dominates `a`, `a` has the property and `b`
/// lacks it.
fn dominance_violation(q: &Query, has: impl Fn(&str) -> bool, what: &str) -> Option<String> {
    let sets = atom_sets(q);
    for (a, sa) in &sets {
        if !has(a) {
            continue;
        }
        for (b, sb) in &sets {
            if sa.len() < sb.len() && sa.is_subset(sb) && !has(b) {
                return Some(format!(
                    "({a},{b}): atoms({a})={} ⊂ atoms({b})={}, {a} is {what} but {b} is not",
                    show_atoms(q, sa),
                    show_atoms(q, sb)
                ));
            }
        }
    }
    None
}

pub fn is_hierarchical(q: &Query) -> Result<Verdict, QueryError> {
    reject_self_joins(q)?;
    Ok(Verdict::from_witness(hierarchy_violation(q)))
}

pub fn is_q_hierarchical(q: &Query) -> Result<Verdict, QueryError> {
    reject_self_joins(q)?;
    Ok(Verdict::from_witness(
        hierarchy_violation(q).or_else(|| dominance_violation(q, |v| q.is_free(v), "free")),
    ))
}

/// Least fixpoint of `set` under `fds`.
pub fn fd_closure(set: &BTreeSet<Var>, fds: &[Fd]) -> BTreeSet<Var> {
    let mut out = set.clone();
    loop {
        let before = out.len();
        for fd in fds {
            if fd.lhs.is_subset(&out) {
                out.extend(fd.rhs.iter().cloned());
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Extends `vars` by its closure, appending new variables in `order`.
fn close_list(vars: &[Var], fds: &[Fd], order: &[Var]) -> Vec<Var> {
    let closure = fd_closure(&vars.iter().cloned().collect(), fds);
    let mut out = vars.to_vec();
    out.extend(order.iter().filter(|v| closure.contains(*v) && !vars.contains(v)).cloned());
    out
}

/// Replaces every atom schema and the head by their closures under `fds`.
/// Bound variables that enter the closure of the head become free.
pub fn sigma_reduct(q: &Query, fds: &[Fd]) -> Query {
    let order = q.vars();
    let atoms = q
        .atoms
        .iter()
        .map(|a| Atom {
            relation: a.relation.clone(),
            schema: Schema::new(close_list(a.vars(), fds, &order)).expect("closure keeps names distinct"),
            mode: a.mode,
        })
        .collect();
    let outputs = q.outputs();
    let closed = close_list(&q.free, fds, &order);
    let mut free = outputs;
    free.extend(closed.iter().filter(|v| !q.free.contains(v)).cloned());
    free.extend(q.inputs.iter().cloned());
    let bound = q.bound.iter().filter(|v| !closed.contains(v)).cloned().collect();
    Query {
        name: q.name.clone(),
        free,
        inputs: q.inputs.clone(),
        cqap: q.cqap,
        bound,
        atoms,
        fds: fds.to_vec(),
    }
}

/// The fracture of a CQAP: input occurrences are split, atoms are grouped
/// into components connected through non-input variables, and the copies of
/// an input variable are merged back per component. A copy keeps the
/// original name when the variable meets a single component, otherwise it
/// is named `v_k` for its k-th component.
pub fn fracture(q: &Query) -> Result<Query, QueryError> {
    if !q.cqap {
        return Err(QueryError::NotCqap(q.name.clone()));
    }
    let n = q.atoms.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let mut first: HashMap<&str, usize> = HashMap::new();
    for (i, a) in q.atoms.iter().enumerate() {
        for v in a.vars().iter().filter(|v| !q.is_input(v)) {
            match first.get(v.as_str()) {
                Some(&j) => {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
                None => {
                    first.insert(v, i);
                }
            }
        }
    }
    // components numbered by their first atom
    let mut comp_of = vec![0; n];
    let mut roots: Vec<usize> = Vec::new();
    for (i, slot) in comp_of.iter_mut().enumerate() {
        let r = find(&mut parent, i);
        *slot = match roots.iter().position(|&x| x == r) {
            Some(k) => k,
            None => {
                roots.push(r);
                roots.len() - 1
            }
        };
    }

    let mut comps_of_input: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in q.atoms.iter().enumerate() {
        for v in a.vars().iter().filter(|v| q.is_input(v)) {
            let list = comps_of_input.entry(v).or_default();
            if !list.contains(&comp_of[i]) {
                list.push(comp_of[i]);
            }
        }
    }
    let all_vars = q.vars();
    let taken: BTreeSet<&str> = all_vars.iter().map(String::as_str).collect();
    let copy_name = |v: &str, comp: usize| -> String {
        let comps = &comps_of_input[v];
        if comps.len() == 1 {
            return v.to_string();
        }
        let k = comps.iter().position(|&c| c == comp).unwrap() + 1;
        let mut name = format!("{v}_{k}");
        while taken.contains(name.as_str()) {
            name.push('\'');
        }
        name
    };

    let atoms: Vec<Atom> = q
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let vars: Vec<Var> =
                a.vars().iter().map(|v| if q.is_input(v) { copy_name(v, comp_of[i]) } else { v.clone() }).collect();
            Atom { relation: a.relation.clone(), schema: Schema::new(vars).expect("distinct"), mode: a.mode }
        })
        .collect();
    let mut inputs = Vec::new();
    for v in &q.inputs {
        match comps_of_input.get(v.as_str()) {
            Some(comps) => inputs.extend(comps.iter().map(|&c| copy_name(v, c))),
            None => inputs.push(v.clone()),
        }
    }
    let mut free = q.outputs();
    free.extend(inputs.iter().cloned());
    Ok(Query { name: q.name.clone(), free, inputs, cqap: true, bound: q.bound.clone(), atoms, fds: Vec::new() })
}

/// Tractability of a CQAP: its fracture must be hierarchical, free-dominant
/// and input-dominant. A query without an access-pattern split is treated as
/// having no inputs. Repeated relation symbols are allowed here.
pub fn is_tractable_cqap(q: &Query) -> Verdict {
    let fr = if q.cqap { fracture(q).expect("cqap") } else { q.clone() };
    if let Some(w) = hierarchy_violation(&fr) {
        return Verdict::no(format!("fracture is not hierarchical: {w}"));
    }
    if let Some(w) = dominance_violation(&fr, |v| fr.is_free(v), "free") {
        return Verdict::no(format!("fracture is not free-dominant: {w}"));
    }
    if let Some(w) = dominance_violation(&fr, |v| fr.is_input(v), "input") {
        return Verdict::no(format!("fracture is not input-dominant: {w}"));
    }
    Verdict::yes()
}

/// Searches for a variable order whose view tree keeps the free variables on
/// top and in which every dynamic view covers the schemas of its siblings.
pub fn check_static_dynamic(q: &Query) -> Verdict {
    let mut search = SdSearch {
        vars: q.atoms.iter().map(|a| a.vars().iter().cloned().collect()).collect(),
        dynamic: q.atoms.iter().map(Atom::is_dynamic).collect(),
        free: q.free.iter().cloned().collect(),
        memo: HashMap::new(),
    };
    let all: Vec<usize> = (0..q.atoms.len()).filter(|&i| !search.vars[i].is_empty()).collect();
    let anc = BTreeSet::new();
    for comp in search.components(&all, &anc) {
        if !search.ok(&comp, &anc, false) {
            let names: Vec<&str> = comp.iter().map(|&i| q.atoms[i].relation.as_str()).collect();
            return Verdict::no(format!(
                "no variable order over {{{}}} keeps free variables on top with every dynamic view covering its siblings",
                names.join(",")
            ));
        }
    }
    Verdict::yes()
}

struct SdSearch {
    vars: Vec<BTreeSet<Var>>,
    dynamic: Vec<bool>,
    free: BTreeSet<Var>,
    memo: HashMap<(Vec<usize>, Vec<Var>, bool), bool>,
}

impl SdSearch {
    fn comp_vars(&self, comp: &[usize]) -> BTreeSet<Var> {
        comp.iter().flat_map(|&i| self.vars[i].iter().cloned()).collect()
    }

    /// Groups atoms connected through variables outside `anc`.
    fn components(&self, atoms: &[usize], anc: &BTreeSet<Var>) -> Vec<Vec<usize>> {
        let mut out: Vec<(BTreeSet<Var>, Vec<usize>)> = Vec::new();
        for &i in atoms {
            let rest: BTreeSet<Var> = self.vars[i].difference(anc).cloned().collect();
            let mut merged = (rest, vec![i]);
            let mut k = 0;
            while k < out.len() {
                if out[k].0.is_disjoint(&merged.0) {
                    k += 1;
                } else {
                    let (vs, is) = out.swap_remove(k);
                    merged.0.extend(vs);
                    merged.1.extend(is);
                }
            }
            out.push(merged);
        }
        let mut comps: Vec<Vec<usize>> = out
            .into_iter()
            .map(|(_, mut is)| {
                is.sort_unstable();
                is
            })
            .collect();
        comps.sort();
        comps
    }

    fn ok(&mut self, comp: &[usize], anc: &BTreeSet<Var>, under_bound: bool) -> bool {
        let vars = self.comp_vars(comp);
        let key = (comp.to_vec(), vars.intersection(anc).cloned().collect(), under_bound);
        if let Some(&r) = self.memo.get(&key) {
            return r;
        }
        let candidates: Vec<Var> = vars.difference(anc).cloned().collect();
        let mut result = false;
        for x in candidates {
            let free = self.free.contains(&x);
            if under_bound && free {
                continue;
            }
            let mut below = anc.clone();
            below.insert(x);
            let (leaves, rest): (Vec<usize>, Vec<usize>) =
                comp.iter().partition(|&&i| self.vars[i].is_subset(&below));
            let subs = self.components(&rest, &below);

            let mut children: Vec<(BTreeSet<Var>, bool)> =
                leaves.iter().map(|&i| (self.vars[i].clone(), self.dynamic[i])).collect();
            for c in &subs {
                let schema = self.comp_vars(c).intersection(&below).cloned().collect();
                children.push((schema, c.iter().any(|&i| self.dynamic[i])));
            }
            let covered = children.iter().enumerate().all(|(i, (si, di))| {
                !di || children.iter().enumerate().all(|(j, (sj, _))| i == j || sj.is_subset(si))
            });
            if covered && subs.iter().all(|c| self.ok(c, &below, under_bound || !free)) {
                result = true;
                break;
            }
        }
        self.memo.insert(key, result);
        result
    }
}

/// All classifier outcomes for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationReport {
    pub hierarchical: Result<Verdict, QueryError>,
    pub q_hierarchical: Result<Verdict, QueryError>,
    /// Present when the query declares functional dependencies.
    pub reduct_q_hierarchical: Option<Result<Verdict, QueryError>>,
    /// Present for CQAPs.
    pub cqap_tractable: Option<Verdict>,
    /// Present when some atom carries a static/dynamic annotation.
    pub sd_tractable: Option<Verdict>,
}

pub fn classify(q: &Query) -> ClassificationReport {
    ClassificationReport {
        hierarchical: is_hierarchical(q),
        q_hierarchical: is_q_hierarchical(q),
        reduct_q_hierarchical: (!q.fds.is_empty()).then(|| is_q_hierarchical(&sigma_reduct(q, &q.fds))),
        cqap_tractable: q.cqap.then(|| is_tractable_cqap(q)),
        sd_tractable: q.atoms.iter().any(|a| a.mode.is_some()).then(|| check_static_dynamic(q)),
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn line(f: &mut fmt::Formatter<'_>, label: &str, v: &Result<Verdict, QueryError>) -> fmt::Result {
            match v {
                Ok(v) => writeln!(f, "{label}: {v}"),
                Err(e) => writeln!(f, "{label}: error: {e}"),
            }
        }
        line(f, "hierarchical", &self.hierarchical)?;
        line(f, "q-hierarchical", &self.q_hierarchical)?;
        if let Some(v) = &self.reduct_q_hierarchical {
            line(f, "fd-reduct q-hierarchical", v)?;
        }
        if let Some(v) = &self.cqap_tractable {
            writeln!(f, "tractable cqap: {v}")?;
        }
        if let Some(v) = &self.sd_tractable {
            writeln!(f, "static-dynamic tractable: {v}")?;
        }
        Ok(())
    }
}
