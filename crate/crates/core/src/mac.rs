//! Multiply-accumulate accounting.
//!
//! Kernels call [`record`] with the number of scalar multiplies they perform.
//! Counts land in whichever [`MacCounter`] is installed on the current thread
//! (see [`MacCounter::measure`]), filed under the dot-joined path of the
//! active [`scope`] guards. Without an installed counter, recording is a no-op.
//!
//! Convention: only convolutions, projections and matrix products count.
//! Bias adds, activations, normalizations, softmax and elementwise ops are free.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

pub const UNSCOPED: &str = "<unscoped>";

#[derive(Default)]
struct Inner {
    total: u64,
    per_scope: BTreeMap<String, u64>,
}

/// Shared, thread-safe MAC tally. Clones share the same tally.
#[derive(Clone, Default)]
pub struct MacCounter {
    inner: Arc<Mutex<Inner>>,
    dry_run: bool,
}

thread_local! {
    static CURRENT: RefCell<Option<MacCounter>> = const { RefCell::new(None) };
    static SCOPES: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
    static PAUSED: Cell<u32> = const { Cell::new(0) };
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// A counter whose kernels skip arithmetic and emit zero tensors of the
    /// right shape. Counts are identical to a real run.
    pub fn dry_run() -> Self {
        Self {
            dry_run: true,
            ..Self::default()
        }
    }

    pub fn is_dry_run(&self) -> bool {
        self.dry_run
    }

    /// Runs `f` with this counter installed on the current thread.
    pub fn measure<R>(&self, f: impl FnOnce() -> R) -> R {
        struct Restore(Option<MacCounter>);
        impl Drop for Restore {
            fn drop(&mut self) {
                let prev = self.0.take();
                CURRENT.with(|c| *c.borrow_mut() = prev);
            }
        }
        let prev = CURRENT.with(|c| c.borrow_mut().replace(self.clone()));
        let _restore = Restore(prev);
        f()
    }

    pub fn total(&self) -> u64 {
        self.inner.lock().unwrap().total
    }

    pub fn per_scope(&self) -> BTreeMap<String, u64> {
        self.inner.lock().unwrap().per_scope.clone()
    }

    /// Sum over `prefix` itself and every scope nested below it.
    pub fn scope_total(&self, prefix: &str) -> u64 {
        let inner = self.inner.lock().unwrap();
        inner
            .per_scope
            .iter()
            .filter(|(k, _)| is_under(k, prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn add(&self, scope: &str, macs: u64) {
        let mut inner = self.inner.lock().unwrap();
        inner.total += macs;
        *inner.per_scope.entry(scope.to_string()).or_insert(0) += macs;
    }

    /// Folds another counter's tally into this one (per-thread counters).
    pub fn merge(&self, other: &MacCounter) {
        if Arc::ptr_eq(&self.inner, &other.inner) {
            return;
        }
        let theirs = other.per_scope();
        for (k, v) in theirs {
            self.add(&k, v);
        }
    }

    pub fn reset(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.total = 0;
        inner.per_scope.clear();
    }
}

pub(crate) fn is_under(scope: &str, prefix: &str) -> bool {
    scope == prefix
        || (scope.len() > prefix.len()
            && scope.starts_with(prefix)
            && scope.as_bytes()[prefix.len()] == b'.')
}

pub fn current_scope() -> String {
    SCOPES.with(|s| {
        let s = s.borrow();
        if s.is_empty() {
            UNSCOPED.to_string()
        } else {
            s.join(".")
        }
    })
}

/// Adds `macs` to the installed counter under the current scope.
pub fn record(macs: u64) {
    if PAUSED.with(|p| p.get()) > 0 {
        return;
    }
    CURRENT.with(|c| {
        if let Some(counter) = c.borrow().as_ref() {
            counter.add(&current_scope(), macs);
        }
    });
}

/// The counter installed on this thread.
pub fn installed() -> crate::error::Result<MacCounter> {
    CURRENT
        .with(|c| c.borrow().clone())
        .ok_or(crate::error::Error::CounterDisabled)
}

pub fn is_enabled() -> bool {
    CURRENT.with(|c| c.borrow().is_some())
}

/// True when the installed counter asks kernels to skip arithmetic.
pub fn is_dry_run() -> bool {
    CURRENT.with(|c| c.borrow().as_ref().is_some_and(|m| m.dry_run))
}

/// Suspends recording while `f` runs. Backward passes use this so only
/// forward work is tallied.
pub fn paused<R>(f: impl FnOnce() -> R) -> R {
    struct Resume;
    impl Drop for Resume {
        fn drop(&mut self) {
            PAUSED.with(|p| p.set(p.get() - 1));
        }
    }
    PAUSED.with(|p| p.set(p.get() + 1));
    let _resume = Resume;
    f()
}

#[must_use = "the scope ends when the guard is dropped"]
pub struct ScopeGuard {
    depth: usize,
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        SCOPES.with(|s| s.borrow_mut().truncate(self.depth));
    }
}

/// Pushes `label` onto this thread's scope path until the guard drops.
pub fn scope(label: impl Into<String>) -> ScopeGuard {
    SCOPES.with(|s| {
        let mut s = s.borrow_mut();
        let depth = s.len();
        s.push(label.into());
        ScopeGuard { depth }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scopes_nest_and_totals_decompose() {
        let c = MacCounter::new();
        c.measure(|| {
            record(5);
            let _a = scope("enc");
            record(3);
            {
                let _b = scope("conv");
                record(7);
            }
            record(1);
        });
        assert_eq!(c.total(), 16);
        assert_eq!(c.per_scope().values().sum::<u64>(), c.total());
        assert_eq!(c.scope_total("enc"), 11);
        assert_eq!(c.scope_total("enc.conv"), 7);
        assert_eq!(c.scope_total("en"), 0);
    }

    #[test]
    fn nothing_recorded_without_counter_or_when_paused() {
        record(10);
        let c = MacCounter::new();
        c.measure(|| paused(|| record(4)));
        assert_eq!(c.total(), 0);
        assert!(!is_enabled());
    }

    #[test]
    fn per_thread_counters_merge() {
        let all = MacCounter::new();
        let handles: Vec<_> = (0..4)
            .map(|i| {
                std::thread::spawn(move || {
                    let local = MacCounter::new();
                    local.measure(|| {
                        let _s = scope(format!("t{i}"));
                        record(10);
                    });
                    local
                })
            })
            .collect();
        for h in handles {
            all.merge(&h.join().unwrap());
        }
        assert_eq!(all.total(), 40);
        assert_eq!(all.per_scope().len(), 4);
    }
}
