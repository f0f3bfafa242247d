//! Rings of payloads and lifting functions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::value::Value;

/// Payloads of the shipped integer ring.
pub type Payload = i64;

/// A commutative semiring `(D, +, *, 0, 1)`.
pub trait Semiring {
    type Elem: Clone + PartialEq + fmt::Debug;

    fn zero() -> Self::Elem;
    fn one() -> Self::Elem;
    fn add(a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn mul(a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
}

/// A semiring with additive inverses. Deletes are negative payloads.
pub trait Ring: Semiring {
    fn neg(a: &Self::Elem) -> Self::Elem;
}

/// The ring `(Z, +, *, 0, 1)` over 64-bit integers. Overflow panics; it never
/// wraps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Integers;

impl Semiring for Integers {
    type Elem = Payload;

    fn zero() -> Payload {
        0
    }

    fn one() -> Payload {
        1
    }

    #[inline]
    fn add(a: &Payload, b: &Payload) -> Payload {
        a.checked_add(*b).expect("payload overflow in ring addition")
    }

    #[inline]
    fn mul(a: &Payload, b: &Payload) -> Payload {
        a.checked_mul(*b).expect("payload overflow in ring multiplication")
    }
}

impl Ring for Integers {
    #[inline]
    fn neg(a: &Payload) -> Payload {
        a.checked_neg().expect("payload overflow in ring negation")
    }
}

#[inline]
pub(crate) fn add(a: Payload, b: Payload) -> Payload {
    Integers::add(&a, &b)
}

#[inline]
pub(crate) fn mul(a: Payload, b: Payload) -> Payload {
    Integers::mul(&a, &b)
}

pub type LiftFn = Arc<dyn Fn(&Value) -> Payload + Send + Sync>;

/// Per-variable lifting functions `g_X` used when a variable is marginalized.
/// Variables without an entry lift every value to one.
#[derive(Clone, Default)]
pub struct LiftingSpec {
    lifts: HashMap<String, LiftFn>,
}

impl LiftingSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: &str, f: impl Fn(&Value) -> Payload + Send + Sync + 'static) -> Self {
        self.lifts.insert(var.to_string(), Arc::new(f));
        self
    }

    /// `g_X(x) = x` for integer values. Symbols lift to zero.
    pub fn with_value_lift(self, var: &str) -> Self {
        self.with(var, |v| v.as_int().unwrap_or(0))
    }

    pub fn is_trivial(&self, var: &str) -> bool {
        !self.lifts.contains_key(var)
    }

    #[inline]
    pub fn lift(&self, var: &str, value: &Value) -> Payload {
        match self.lifts.get(var) {
            Some(f) => f(value),
            None => 1,
        }
    }
}

impl fmt::Debug for LiftingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut vars: Vec<_> = self.lifts.keys().collect();
        vars.sort();
        f.debug_struct("LiftingSpec").field("lifted", &vars).finish()
    }
}
