//! Single-writer single-reader latest-value slot built on a triple buffer.
//!
//! The writer fills its private buffer and swaps it with the shared middle
//! buffer in one atomic exchange; the reader swaps its private buffer with the
//! middle one only when the dirty bit says something new was published. Both
//! sides are wait-free and a reader can never observe a partially written
//! value.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

const INDEX_MASK: u8 = 0b011;
const DIRTY: u8 = 0b100;

struct Shared<T> {
    buffers: [UnsafeCell<Option<T>>; 3],
    /// Index of the middle buffer plus the dirty bit.
    middle: AtomicU8,
}

// Each buffer is owned by exactly one side at a time; ownership moves only
// through the atomic exchange on `middle`.
unsafe impl<T: Send> Sync for Shared<T> {}

pub struct SlotWriter<T> {
    shared: Arc<Shared<T>>,
    own: u8,
}

pub struct SlotReader<T> {
    shared: Arc<Shared<T>>,
    own: u8,
}

/// Creates a connected writer/reader pair over an initially empty slot.
pub fn slot<T: Send>() -> (SlotWriter<T>, SlotReader<T>) {
    let shared = Arc::new(Shared {
        buffers: [
            UnsafeCell::new(None),
            UnsafeCell::new(None),
            UnsafeCell::new(None),
        ],
        middle: AtomicU8::new(1),
    });
    (
        SlotWriter {
            shared: Arc::clone(&shared),
            own: 0,
        },
        SlotReader { shared, own: 2 },
    )
}

impl<T: Send> SlotWriter<T> {
    /// Publishes `value`, replacing whatever the reader has not yet taken.
    pub fn publish(&mut self, value: T) {
        // SAFETY: `own` is exclusively held by the writer.
        unsafe {
            *self.shared.buffers[self.own as usize].get() = Some(value);
        }
        let prev = self
            .shared
            .middle
            .swap(self.own | DIRTY, Ordering::AcqRel);
        self.own = prev & INDEX_MASK;
    }
}

impl<T: Send> SlotReader<T> {
    /// Takes ownership of the newest published buffer if there is one.
    fn refresh(&mut self) -> bool {
        if self.shared.middle.load(Ordering::Relaxed) & DIRTY == 0 {
            return false;
        }
        let prev = self.shared.middle.swap(self.own, Ordering::AcqRel);
        self.own = prev & INDEX_MASK;
        true
    }

    /// The most recent complete value, or `None` if nothing was ever published.
    pub fn latest(&mut self) -> Option<&T> {
        self.refresh();
        // SAFETY: `own` is exclusively held by the reader.
        unsafe { (*self.shared.buffers[self.own as usize].get()).as_ref() }
    }

    /// Like [`SlotReader::latest`] but returns only values not seen before.
    pub fn take_new(&mut self) -> Option<&T> {
        if self.refresh() {
            unsafe { (*self.shared.buffers[self.own as usize].get()).as_ref() }
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn empty_then_latest() {
        let (mut w, mut r) = slot::<u32>();
        assert_eq!(r.latest(), None);
        w.publish(1);
        w.publish(2);
        assert_eq!(r.latest(), Some(&2));
        assert_eq!(r.latest(), Some(&2));
        assert_eq!(r.take_new(), None);
        w.publish(3);
        assert_eq!(r.take_new(), Some(&3));
    }

    #[test]
    fn concurrent_reads_are_whole_and_monotone() {
        let (mut w, mut r) = slot::<[u64; 16]>();
        let writer = thread::spawn(move || {
            for v in 1..=20_000u64 {
                w.publish([v; 16]);
            }
        });
        let mut last = 0;
        while last < 20_000 {
            if let Some(rec) = r.latest() {
                assert!(rec.iter().all(|&x| x == rec[0]));
                assert!(rec[0] >= last);
                last = rec[0];
            }
        }
        writer.join().unwrap();
    }
}
