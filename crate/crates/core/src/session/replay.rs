/// Number of counters tracked behind the highest one seen.
pub const REPLAY_WINDOW: u32 = 64;

/// Sliding-window replay filter. Bit `i` of `seen` is counter `highest - i`.
#[derive(Debug, Clone, Default)]
pub struct ReplayWindow {
    highest: Option<u32>,
    seen: u64,
}

impl ReplayWindow {
    pub fn is_fresh(&self, counter: u32) -> bool {
        let Some(highest) = self.highest else {
            return true;
        };
        if counter > highest {
            return true;
        }
        let age = highest - counter;
        age < REPLAY_WINDOW && self.seen & (1u64 << age) == 0
    }

    /// Records `counter`. Callers check [`is_fresh`](Self::is_fresh) first.
    pub fn mark(&mut self, counter: u32) {
        match self.highest {
            None => {
                self.highest = Some(counter);
                self.seen = 1;
            }
            Some(highest) if counter > highest => {
                let shift = counter - highest;
                self.seen = if shift >= REPLAY_WINDOW {
                    0
                } else {
                    self.seen << shift
                };
                self.seen |= 1;
                self.highest = Some(counter);
            }
            Some(highest) => {
                let age = highest - counter;
                if age < REPLAY_WINDOW {
                    self.seen |= 1u64 << age;
                }
            }
        }
    }

    pub fn highest(&self) -> Option<u32> {
        self.highest
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accept(w: &mut ReplayWindow, c: u32) -> bool {
        let fresh = w.is_fresh(c);
        if fresh {
            w.mark(c);
        }
        fresh
    }

    #[test]
    fn duplicates_and_stale_counters() {
        let mut w = ReplayWindow::default();
        assert!(accept(&mut w, 70));
        assert!(!accept(&mut w, 70));
        assert!(!accept(&mut w, 3));
        assert!(!accept(&mut w, 6));
        assert!(accept(&mut w, 7));
        assert!(accept(&mut w, 69));
        assert!(!accept(&mut w, 69));
        assert!(accept(&mut w, 200));
        assert!(!accept(&mut w, 136));
        assert!(accept(&mut w, 137));
    }

    #[test]
    fn out_of_order_within_window() {
        let mut w = ReplayWindow::default();
        for c in [5u32, 3, 4, 1, 2, 0] {
            assert!(accept(&mut w, c), "{c}");
        }
        for c in 0..=5 {
            assert!(!accept(&mut w, c));
        }
    }
}
