use std::sync::{Condvar, Mutex};

/// Counting semaphore capping in-flight remote requests.
#[derive(Debug)]
pub struct Limiter {
    available: Mutex<usize>,
    cond: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

    pub fn new(max_in_flight: usize) -> Self {
        Self {
            available: Mutex::new(max_in_flight.max(1)),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.cond.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

impl Default for Limiter {
    fn default() -> Self {
        Self::new(Self::DEFAULT_MAX_IN_FLIGHT)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.available.lock().expect("limiter poisoned") += 1;
        self.limiter.cond.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn caps_concurrency() {
        let limiter = Limiter::new(2);
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
