use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::ForwardCache;

/// Forward caches of one layer awaiting their backward pass.
#[derive(Debug, Clone)]
pub struct ActivationStash {
    layer: usize,
    capacity: usize,
    entries: VecDeque<(usize, ForwardCache)>,
    peak: usize,
    peak_bytes: usize,
}

impl ActivationStash {
    pub fn new(layer: usize, capacity: usize) -> Self {
        Self {
            layer,
            capacity,
            entries: VecDeque::with_capacity(capacity),
            peak: 0,
            peak_bytes: 0,
        }
    }

    pub fn push(&mut self, microbatch: usize, cache: ForwardCache) -> Result<()> {
        if self.entries.len() == self.capacity {
            return Err(Error::StashOverflow {
                layer: self.layer,
                capacity: self.capacity,
            });
        }
        self.entries.push_back((microbatch, cache));
        self.peak = self.peak.max(self.entries.len());
        self.peak_bytes = self.peak_bytes.max(self.bytes());
        Ok(())
    }

    /// Removes the oldest cache, which must belong to `microbatch`.
    pub fn take(&mut self, microbatch: usize) -> Result<ForwardCache> {
        match self.entries.front() {
            Some(&(m, _)) if m == microbatch => Ok(self.entries.pop_front().unwrap().1),
            _ => Err(Error::StashUnderflow {
                layer: self.layer,
                microbatch,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.entries.iter().map(|(_, c)| c.nbytes()).sum()
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn cache() -> ForwardCache {
        ForwardCache {
            x: Tensor::zeros(&[1, 2]),
            pre: Tensor::zeros(&[1, 3]),
        }
    }

    #[test]
    fn fifo_with_capacity() {
        let mut s = ActivationStash::new(0, 2);
        s.push(0, cache()).unwrap();
        s.push(1, cache()).unwrap();
        assert!(matches!(s.push(2, cache()), Err(Error::StashOverflow { .. })));
        assert!(matches!(s.take(1), Err(Error::StashUnderflow { layer: 0, microbatch: 1 })));
        s.take(0).unwrap();
        s.take(1).unwrap();
        assert!(s.take(2).is_err());
        assert_eq!((s.peak(), s.peak_bytes()), (2, 80));
    }
}
