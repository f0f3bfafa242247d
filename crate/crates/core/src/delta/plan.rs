//! Compiled single-tuple delta programs.
//!
//! A delta query is kept as a sum of monomials `sum_X F1 * ... * Fk` whose
//! factors are base relations, auxiliary views or the delta itself. Binding
//! the delta to one tuple fixes its variables; the remaining factors are
//! visited by index nested loops, outward from the delta by connectivity.

use std::collections::BTreeSet;
use std::fmt;

use crate::database::Database;
use crate::query::Query;
use crate::relation::{IndexId, Relation, Var};
use crate::ring::{self, LiftingSpec, Payload};
use crate::value::{Tuple, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum FactorKind {
    Base(String),
    Aux(usize),
    Delta(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Factor {
    pub kind: FactorKind,
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Monomial {
    pub factors: Vec<Factor>,
    pub summed: BTreeSet<Var>,
    pub head: Vec<Var>,
}

impl Monomial {
    pub fn of_query(q: &Query) -> Self {
        Monomial {
            factors: q
                .atoms
                .iter()
                .map(|a| Factor { kind: FactorKind::Base(a.relation.clone()), vars: a.vars().to_vec() })
                .collect(),
            summed: q.bound.iter().cloned().collect(),
            head: q.free.clone(),
        }
    }

    /// Delta monomials with respect to `rel`: one per nonempty subset of the
    /// occurrences of `rel`, which is the full expansion of the product rule.
    pub fn deltas(&self, rel: &str) -> Vec<Monomial> {
        let occ: Vec<usize> = (0..self.factors.len())
            .filter(|&i| self.factors[i].kind == FactorKind::Base(rel.to_string()))
            .collect();
        let mut out = Vec::new();
        for mask in 1u32..(1 << occ.len()) {
            let mut m = self.clone();
            for (bit, &i) in occ.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    m.factors[i].kind = FactorKind::Delta(rel.to_string());
                }
            }
            out.push(m);
        }
        out
    }

    /// Replaces factors matching the definition of auxiliary view `aux` by a
    /// single view factor. The view's summed variables must be summed here
    /// too and must not occur in any factor left outside the match.
    pub fn rewrite_with(&mut self, aux: usize, def: &Monomial, lifts: &LiftingSpec) -> bool {
        let candidates: Vec<usize> =
            (0..self.factors.len()).filter(|&i| matches!(self.factors[i].kind, FactorKind::Base(_))).collect();
        let mut chosen = Vec::new();
        let mut map: Vec<(Var, Var)> = Vec::new();
        if !self.match_factors(def, 0, &candidates, &mut chosen, &mut map) {
            return false;
        }
        let image = |v: &Var| map.iter().find(|(from, _)| from == v).map(|(_, to)| to.clone()).unwrap();
        for s in &def.summed {
            let target = image(s);
            let outside = self
                .factors
                .iter()
                .enumerate()
                .any(|(i, f)| !chosen.contains(&i) && f.vars.contains(&target));
            let same_lift = *s == target || (lifts.is_trivial(s) && lifts.is_trivial(&target));
            if !self.summed.contains(&target) || outside || self.head.contains(&target) || !same_lift {
                return false;
            }
        }
        let vars: Vec<Var> = def.head.iter().map(image).collect();
        for s in &def.summed {
            self.summed.remove(&image(s));
        }
        let first = *chosen.iter().min().unwrap();
        let mut kept = Vec::new();
        for (i, f) in self.factors.drain(..).enumerate() {
            if i == first {
                kept.push(Factor { kind: FactorKind::Aux(aux), vars: vars.clone() });
            } else if !chosen.contains(&i) {
                kept.push(f);
            }
        }
        self.factors = kept;
        true
    }

    fn match_factors(
        &self,
        def: &Monomial,
        k: usize,
        candidates: &[usize],
        chosen: &mut Vec<usize>,
        map: &mut Vec<(Var, Var)>,
    ) -> bool {
        if k == def.factors.len() {
            return true;
        }
        let want = &def.factors[k];
        for &i in candidates {
            let f = &self.factors[i];
            if chosen.contains(&i) || f.kind != want.kind || f.vars.len() != want.vars.len() {
                continue;
            }
            let saved = map.len();
            let ok = want.vars.iter().zip(&f.vars).all(|(from, to)| {
                match map.iter().find(|(a, b)| a == from || b == to) {
                    Some((a, b)) => a == from && b == to,
                    None => {
                        map.push((from.clone(), to.clone()));
                        true
                    }
                }
            });
            if ok {
                chosen.push(i);
                if self.match_factors(def, k + 1, candidates, chosen, map) {
                    return true;
                }
                chosen.pop();
            }
            map.truncate(saved);
        }
        false
    }
}

pub(crate) struct MonomialDisplay<'a> {
    pub mono: &'a Monomial,
    pub aux_names: &'a [String],
}

impl fmt::Display for MonomialDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .mono
            .factors
            .iter()
            .map(|fa| {
                let vars = fa.vars.join(",");
                match &fa.kind {
                    FactorKind::Base(n) => format!("{n}({vars})"),
                    FactorKind::Aux(i) => format!("{}({vars})", self.aux_names[*i]),
                    FactorKind::Delta(n) => format!("δ{n}({vars})"),
                }
            })
            .collect();
        let body = parts.join(" * ");
        if self.mono.summed.is_empty() {
            f.write_str(&body)
        } else {
            let summed: Vec<&str> = self.mono.summed.iter().map(String::as_str).collect();
            write!(f, "sum[{}]({body})", summed.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Base(usize),
    Aux(usize),
}

#[derive(Debug, Clone)]
struct Step {
    source: Source,
    index: IndexId,
    key: Vec<usize>,
    bind: Vec<(usize, usize)>,
}

/// A delta monomial compiled against concrete indices.
#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub mono: Monomial,
    /// Slots fixed by each delta factor, by tuple position.
    delta_slots: Vec<Vec<usize>>,
    steps: Vec<Step>,
    head: Vec<usize>,
    lifted: Vec<(usize, Var)>,
    nslots: usize,
}

/// Read-only inputs for running compiled plans.
pub(crate) struct Sources<'a> {
    pub base: Vec<&'a Relation>,
    pub aux: Vec<&'a Relation>,
}

impl Compiled {
    /// `base_names` fixes the numbering used by [`Sources::base`].
    pub fn new(
        mono: Monomial,
        base_names: &[String],
        db: &mut Database,
        aux: &mut [Relation],
        lifts: &LiftingSpec,
    ) -> Compiled {
        let mut slots: Vec<Var> = Vec::new();
        let slot = |slots: &mut Vec<Var>, v: &Var| match slots.iter().position(|s| s == v) {
            Some(i) => i,
            None => {
                slots.push(v.clone());
                slots.len() - 1
            }
        };
        let mut bound: BTreeSet<Var> = BTreeSet::new();
        let mut delta_slots = Vec::new();
        for f in mono.factors.iter().filter(|f| matches!(f.kind, FactorKind::Delta(_))) {
            delta_slots.push(f.vars.iter().map(|v| slot(&mut slots, v)).collect());
            bound.extend(f.vars.iter().cloned());
        }

        // outward from the delta: first connected factor in atom order
        let mut remaining: Vec<usize> =
            (0..mono.factors.len()).filter(|&i| !matches!(mono.factors[i].kind, FactorKind::Delta(_))).collect();
        let mut steps = Vec::new();
        while !remaining.is_empty() {
            let pick = remaining
                .iter()
                .position(|&i| mono.factors[i].vars.iter().any(|v| bound.contains(v)))
                .unwrap_or(0);
            let i = remaining.remove(pick);
            let f = &mono.factors[i];
            let key_pos: Vec<usize> = (0..f.vars.len()).filter(|&p| bound.contains(&f.vars[p])).collect();
            let key = key_pos.iter().map(|&p| slot(&mut slots, &f.vars[p])).collect();
            let bind = (0..f.vars.len())
                .filter(|p| !key_pos.contains(p))
                .map(|p| (p, slot(&mut slots, &f.vars[p])))
                .collect();
            let (source, index) = match &f.kind {
                FactorKind::Base(name) => {
                    let n = base_names.iter().position(|b| b == name).expect("base relation registered");
                    (Source::Base(n), db.relation_mut(name).expect("base relation").build_index_on(&key_pos))
                }
                FactorKind::Aux(a) => (Source::Aux(*a), aux[*a].build_index_on(&key_pos)),
                FactorKind::Delta(_) => unreachable!(),
            };
            bound.extend(f.vars.iter().cloned());
            steps.push(Step { source, index, key, bind });
        }
        let head = mono.head.iter().map(|v| slot(&mut slots, v)).collect();
        let lifted = mono
            .summed
            .iter()
            .filter(|v| !lifts.is_trivial(v))
            .map(|v| (slot(&mut slots, v), v.clone()))
            .collect();
        Compiled { mono, delta_slots, steps, head, lifted, nslots: slots.len() }
    }

    /// Adds the result of this monomial, with every delta factor bound to
    /// `{t -> m}`, into `out`.
    pub fn run(&self, t: &Tuple, m: Payload, src: &Sources<'_>, lifts: &LiftingSpec, out: &mut Relation) {
        let mut binding = vec![Value::Int(0); self.nslots];
        let mut set = vec![false; self.nslots];
        let mut acc: Payload = 1;
        for slots in &self.delta_slots {
            for (pos, &s) in slots.iter().enumerate() {
                let v = t.get(pos);
                if set[s] && binding[s] != v {
                    return;
                }
                binding[s] = v;
                set[s] = true;
            }
            acc = ring::mul(acc, m);
        }
        self.step(0, &mut binding, acc, src, lifts, out);
    }

    fn step(&self, k: usize, binding: &mut Vec<Value>, acc: Payload, src: &Sources<'_>, lifts: &LiftingSpec, out: &mut Relation) {
        if k == self.steps.len() {
            let mut p = acc;
            for (s, v) in &self.lifted {
                p = ring::mul(p, lifts.lift(v, &binding[*s]));
            }
            let head: Tuple = self.head.iter().map(|&s| binding[s]).collect();
            out.apply_delta(head, p).expect("head arity");
            return;
        }
        let st = &self.steps[k];
        let rel = match st.source {
            Source::Base(i) => src.base[i],
            Source::Aux(i) => src.aux[i],
        };
        let key: Tuple = st.key.iter().map(|&s| binding[s]).collect();
        for (t, p) in rel.probe(st.index, &key) {
            for &(pos, s) in &st.bind {
                binding[s] = t.get(pos);
            }
            self.step(k + 1, binding, ring::mul(acc, p), src, lifts, out);
        }
    }
}
