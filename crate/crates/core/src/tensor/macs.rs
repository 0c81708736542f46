//! Operation-level multiply-accumulate counters.
//!
//! Tape operations report their forward cost here while a [`MacProbe`] is
//! active on the current thread. Costs land in the bucket set by the
//! innermost [`in_bucket`] scope unless an operation names one explicitly.

use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bucket {
    TokenMixing,
    ChannelMixing,
    Other,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::TokenMixing, Bucket::ChannelMixing, Bucket::Other];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::TokenMixing => "token_mixing",
            Bucket::ChannelMixing => "channel_mixing",
            Bucket::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub by_bucket: [u64; 3],
}

impl MacCounts {
    pub fn get(&self, bucket: Bucket) -> u64 {
        self.by_bucket[bucket.index()]
    }

    pub fn total(&self) -> u64 {
        self.by_bucket.iter().sum()
    }
}

struct State {
    depth: usize,
    counts: MacCounts,
    scope: Vec<Bucket>,
}

thread_local! {
    static STATE: RefCell<State> = const {
        RefCell::new(State { depth: 0, counts: MacCounts { by_bucket: [0; 3] }, scope: Vec::new() })
    };
}

/// Counts MACs reported on this thread until dropped or finished.
pub struct MacProbe {
    _private: (),
}

impl MacProbe {
    pub fn start() -> Self {
        STATE.with(|s| {
            let mut s = s.borrow_mut();
            if s.depth == 0 {
                s.counts = MacCounts::default();
            }
            s.depth += 1;
        });
        MacProbe { _private: () }
    }

    pub fn counts(&self) -> MacCounts {
        STATE.with(|s| s.borrow().counts)
    }

    pub fn finish(self) -> MacCounts {
        self.counts()
    }
}

impl Drop for MacProbe {
    fn drop(&mut self) {
        STATE.with(|s| s.borrow_mut().depth -= 1);
    }
}

/// Runs `f` with `bucket` as the default destination for reported costs.
pub fn in_bucket<T>(bucket: Bucket, f: impl FnOnce() -> T) -> T {
    STATE.with(|s| s.borrow_mut().scope.push(bucket));
    let out = f();
    STATE.with(|s| s.borrow_mut().scope.pop());
    out
}

/// Reports `macs` against the current scope (default [`Bucket::Other`]).
pub fn record(macs: u64) {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        if s.depth > 0 {
            let b = s.scope.last().copied().unwrap_or(Bucket::Other);
            s.counts.by_bucket[b.index()] += macs;
        }
    });
}

pub fn record_in(bucket: Bucket, macs: u64) {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        if s.depth > 0 {
            s.counts.by_bucket[bucket.index()] += macs;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_counted_without_probe() {
        record(10);
        let p = MacProbe::start();
        assert_eq!(p.counts().total(), 0);
    }

    #[test]
    fn scopes_route_costs() {
        let p = MacProbe::start();
        record(1);
        in_bucket(Bucket::ChannelMixing, || {
            record(5);
            in_bucket(Bucket::TokenMixing, || record(7));
            record_in(Bucket::Other, 2);
        });
        let c = p.finish();
        assert_eq!(c.get(Bucket::Other), 3);
        assert_eq!(c.get(Bucket::ChannelMixing), 5);
        assert_eq!(c.get(Bucket::TokenMixing), 7);
        assert_eq!(c.total(), 15);
    }
}
