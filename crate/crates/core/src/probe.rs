//! Per-thread probe counters.
//!
//! Every hash lookup and every step through a block of tuples ticks the
//! counter of the current thread. Engines and the harness read differences of
//! the counter to report work in a machine-independent unit.

use std::cell::Cell;

thread_local! {
    static PROBES: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn tick() {
    PROBES.with(|p| p.set(p.get() + 1));
}

#[inline]
pub fn tick_n(n: u64) {
    PROBES.with(|p| p.set(p.get() + n));
}

/// Total probes performed on this thread so far.
#[inline]
pub fn count() -> u64 {
    PROBES.with(Cell::get)
}

/// Runs `f` and returns its result with the number of probes it performed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = count();
    let out = f();
    (out, count() - start)
}
