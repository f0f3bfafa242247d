//! View expressions and the symbolic delta rules.

use std::collections::BTreeMap;
use std::fmt;

use crate::database::Database;
use crate::query::Query;
use crate::relation::{self, Relation, Schema, SchemaError, Var};
use crate::ring::LiftingSpec;

use super::DeltaError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewExpr {
    /// A base relation, columns renamed positionally to `vars`.
    Rel { name: String, vars: Vec<Var> },
    /// A materialized auxiliary view.
    View { name: String, vars: Vec<Var> },
    /// The change to a base relation.
    Delta { name: String, vars: Vec<Var> },
    Union(Box<ViewExpr>, Box<ViewExpr>),
    Join(Box<ViewExpr>, Box<ViewExpr>),
    Sum { var: Var, child: Box<ViewExpr> },
}

impl ViewExpr {
    pub fn rel(name: &str, vars: &[&str]) -> Self {
        ViewExpr::Rel { name: name.into(), vars: vars.iter().map(|s| s.to_string()).collect() }
    }

    pub fn join(a: ViewExpr, b: ViewExpr) -> Self {
        ViewExpr::Join(Box::new(a), Box::new(b))
    }

    pub fn union(a: ViewExpr, b: ViewExpr) -> Self {
        ViewExpr::Union(Box::new(a), Box::new(b))
    }

    pub fn sum(var: &str, child: ViewExpr) -> Self {
        ViewExpr::Sum { var: var.into(), child: Box::new(child) }
    }

    /// `sum_{bound} atom_1 * ... * atom_n`, joined left-deep in atom order.
    pub fn from_query(q: &Query) -> Self {
        let mut atoms = q.atoms.iter().map(|a| ViewExpr::Rel { name: a.relation.clone(), vars: a.vars().to_vec() });
        let first = atoms.next().expect("query has atoms");
        let mut e = atoms.fold(first, ViewExpr::join);
        for v in q.bound.iter().rev() {
            e = ViewExpr::Sum { var: v.clone(), child: Box::new(e) };
        }
        e
    }

    pub fn schema(&self) -> Vec<Var> {
        match self {
            ViewExpr::Rel { vars, .. } | ViewExpr::View { vars, .. } | ViewExpr::Delta { vars, .. } => vars.clone(),
            ViewExpr::Union(a, _) => a.schema(),
            ViewExpr::Join(a, b) => {
                let mut s = a.schema();
                for v in b.schema() {
                    if !s.contains(&v) {
                        s.push(v);
                    }
                }
                s
            }
            ViewExpr::Sum { var, child } => child.schema().into_iter().filter(|v| v != var).collect(),
        }
    }

    pub fn mentions(&self, rel: &str) -> bool {
        match self {
            ViewExpr::Rel { name, .. } => name == rel,
            ViewExpr::View { .. } | ViewExpr::Delta { .. } => false,
            ViewExpr::Union(a, b) | ViewExpr::Join(a, b) => a.mentions(rel) || b.mentions(rel),
            ViewExpr::Sum { child, .. } => child.mentions(rel),
        }
    }

    /// Number of `Delta` leaves.
    pub fn delta_leaves(&self) -> usize {
        match self {
            ViewExpr::Delta { .. } => 1,
            ViewExpr::Rel { .. } | ViewExpr::View { .. } => 0,
            ViewExpr::Union(a, b) | ViewExpr::Join(a, b) => a.delta_leaves() + b.delta_leaves(),
            ViewExpr::Sum { child, .. } => child.delta_leaves(),
        }
    }

    /// Evaluates the expression. `delta` supplies the contents of every
    /// `Delta` leaf; `views` those of `View` leaves.
    pub fn eval(
        &self,
        db: &Database,
        views: &BTreeMap<String, Relation>,
        delta: Option<&Relation>,
        lifts: &LiftingSpec,
    ) -> Result<Relation, DeltaError> {
        let rename = |rel: &Relation, vars: &[Var]| -> Result<Relation, DeltaError> {
            Ok(rel.renamed(Schema::new(vars.iter().cloned())?)?)
        };
        match self {
            ViewExpr::Rel { name, vars } => rename(db.relation(name)?, vars),
            ViewExpr::View { name, vars } => {
                rename(views.get(name).ok_or_else(|| DeltaError::UnknownView(name.clone()))?, vars)
            }
            ViewExpr::Delta { vars, .. } => match delta {
                Some(d) => rename(d, vars),
                None => Ok(Relation::new(Schema::new(vars.iter().cloned())?)),
            },
            ViewExpr::Union(a, b) => {
                Ok(relation::union(&a.eval(db, views, delta, lifts)?, &b.eval(db, views, delta, lifts)?)?)
            }
            ViewExpr::Join(a, b) => Ok(relation::join(&a.eval(db, views, delta, lifts)?, &b.eval(db, views, delta, lifts)?)),
            ViewExpr::Sum { var, child } => Ok(relation::marginalize(&child.eval(db, views, delta, lifts)?, var, lifts)?),
        }
    }
}

/// Applies the delta rules with respect to base relation `rel`:
/// `δ(V1 + V2) = δV1 + δV2`, `δ(V1 * V2) = δV1 * V2 + V1 * δV2 + δV1 * δV2`,
/// `δ(sum_X V) = sum_X δV`. Terms containing the delta of another relation
/// are empty and dropped.
pub fn derive_delta(expr: &ViewExpr, rel: &str) -> Result<ViewExpr, DeltaError> {
    if !expr.mentions(rel) {
        return Err(DeltaError::RelationAbsent(rel.to_string()));
    }
    Ok(delta_of(expr, rel).expect("mentioned relation has a nonempty delta"))
}

fn delta_of(e: &ViewExpr, rel: &str) -> Option<ViewExpr> {
    match e {
        ViewExpr::Rel { name, vars } if name == rel => Some(ViewExpr::Delta { name: name.clone(), vars: vars.clone() }),
        ViewExpr::Rel { .. } | ViewExpr::View { .. } | ViewExpr::Delta { .. } => None,
        ViewExpr::Union(a, b) => match (delta_of(a, rel), delta_of(b, rel)) {
            (Some(x), Some(y)) => Some(ViewExpr::union(x, y)),
            (x, y) => x.or(y),
        },
        ViewExpr::Join(a, b) => {
            let (da, db) = (delta_of(a, rel), delta_of(b, rel));
            let mut terms = Vec::new();
            if let Some(da) = &da {
                terms.push(ViewExpr::join(da.clone(), (**b).clone()));
            }
            if let Some(db) = &db {
                terms.push(ViewExpr::join((**a).clone(), db.clone()));
            }
            if let (Some(da), Some(db)) = (da, db) {
                terms.push(ViewExpr::join(da, db));
            }
            terms.into_iter().reduce(ViewExpr::union)
        }
        ViewExpr::Sum { var, child } => delta_of(child, rel).map(|d| ViewExpr::Sum { var: var.clone(), child: Box::new(d) }),
    }
}

impl From<SchemaError> for DeltaError {
    fn from(e: SchemaError) -> Self {
        DeltaError::Schema(e)
    }
}

impl fmt::Display for ViewExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn atom(f: &mut fmt::Formatter<'_>, prefix: &str, name: &str, vars: &[Var]) -> fmt::Result {
            write!(f, "{prefix}{name}({})", vars.join(","))
        }
        fn factors(e: &ViewExpr, out: &mut Vec<String>) {
            match e {
                ViewExpr::Join(a, b) => {
                    factors(a, out);
                    factors(b, out);
                }
                ViewExpr::Union(..) => out.push(format!("({e})")),
                other => out.push(other.to_string()),
            }
        }
        match self {
            ViewExpr::Rel { name, vars } | ViewExpr::View { name, vars } => atom(f, "", name, vars),
            ViewExpr::Delta { name, vars } => atom(f, "δ", name, vars),
            ViewExpr::Union(a, b) => write!(f, "{a} + {b}"),
            ViewExpr::Join(..) => {
                let mut parts = Vec::new();
                factors(self, &mut parts);
                f.write_str(&parts.join(" * "))
            }
            ViewExpr::Sum { .. } => {
                let mut vars = Vec::new();
                let mut e = self;
                while let ViewExpr::Sum { var, child } = e {
                    vars.push(var.as_str());
                    e = child;
                }
                write!(f, "sum[{}]({e})", vars.join(","))
            }
        }
    }
}
