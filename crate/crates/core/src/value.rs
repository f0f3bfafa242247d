//! Domain values and tuples.
//!
//! String values are interned into a process-wide table so that tuples hash
//! and compare over small copyable ids.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use smallvec::SmallVec;

#[derive(Default)]
struct Interner {
    names: Vec<Arc<str>>,
    ids: HashMap<Arc<str>, u32>,
}

fn interner() -> &'static RwLock<Interner> {
    static INTERNER: OnceLock<RwLock<Interner>> = OnceLock::new();
    INTERNER.get_or_init(Default::default)
}

fn intern(s: &str) -> u32 {
    if let Some(id) = interner().read().unwrap().ids.get(s) {
        return *id;
    }
    let mut table = interner().write().unwrap();
    if let Some(id) = table.ids.get(s) {
        return *id;
    }
    let id = u32::try_from(table.names.len()).expect("symbol table overflow");
    let name: Arc<str> = Arc::from(s);
    table.names.push(name.clone());
    table.ids.insert(name, id);
    id
}

fn resolve(id: u32) -> Arc<str> {
    interner().read().unwrap().names[id as usize].clone()
}

/// A single domain value: an integer or an interned symbol.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Sym(u32),
}

impl Value {
    pub fn sym(s: &str) -> Self {
        Value::Sym(intern(s))
    }

    /// Integers parse as `Int`, everything else is interned.
    pub fn parse(token: &str) -> Self {
        match token.parse::<i64>() {
            Ok(n) => Value::Int(n),
            Err(_) => Value::sym(token),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            Value::Sym(_) => None,
        }
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Int(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::parse(s)
    }
}

// Integers sort before symbols; symbols sort by their text so that the order
// does not depend on interning order.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Int(_), Value::Sym(_)) => Ordering::Less,
            (Value::Sym(_), Value::Int(_)) => Ordering::Greater,
            (Value::Sym(a), Value::Sym(b)) if a == b => Ordering::Equal,
            (Value::Sym(a), Value::Sym(b)) => resolve(*a).cmp(&resolve(*b)),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Sym(id) => f.write_str(&resolve(*id)),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// An ordered list of values aligned with some schema.
#[derive(Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Tuple(SmallVec<[Value; 4]>);

impl Tuple {
    pub fn new(values: impl IntoIterator<Item = Value>) -> Self {
        Tuple(values.into_iter().collect())
    }

    /// The unique tuple over the empty schema.
    pub fn empty() -> Self {
        Tuple(SmallVec::new())
    }

    /// Builds a tuple from textual tokens, see [`Value::parse`].
    pub fn parse(tokens: &[&str]) -> Self {
        Tuple(tokens.iter().map(|t| Value::parse(t)).collect())
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Value {
        self.0[i]
    }

    pub fn project(&self, positions: &[usize]) -> Tuple {
        Tuple(positions.iter().map(|&i| self.0[i]).collect())
    }
}

impl FromIterator<Value> for Tuple {
    fn from_iter<I: IntoIterator<Item = Value>>(iter: I) -> Self {
        Tuple(iter.into_iter().collect())
    }
}

impl fmt::Display for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
