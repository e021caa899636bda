//! Multiply counter for forward kernels.
//!
//! One unit per scalar multiply-accumulate in matmul, linear and convolution
//! kernels. Softmax, normalization, activations, bias adds and scalar scaling
//! are not counted. Backward kernels never count.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Snapshot of an instrumented region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub multiplies: u64,
    pub enabled: bool,
}

impl FlopCounter {
    /// Current state of the calling thread's counter.
    pub fn current() -> FlopCounter {
        COUNTER.with(|c| match c.get() {
            Some(n) => FlopCounter { multiplies: n, enabled: true },
            None => FlopCounter::default(),
        })
    }
}

pub(crate) fn record(multiplies: u64) {
    COUNTER.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + multiplies));
        }
    });
}

/// Runs `f` with counting enabled on this thread and returns the multiplies it
/// performed. Nested regions also add to any enclosing region.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let inner = COUNTER.with(|c| c.replace(outer)).unwrap_or(0);
    if outer.is_some() {
        record(inner);
    }
    (out, inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_outside_measure() {
        record(10);
        assert_eq!(FlopCounter::current(), FlopCounter::default());
    }

    #[test]
    fn nested_regions_accumulate() {
        let (_, outer) = measure(|| {
            record(3);
            let (_, inner) = measure(|| record(4));
            assert_eq!(inner, 4);
            assert!(FlopCounter::current().enabled);
        });
        assert_eq!(outer, 7);
    }
}
