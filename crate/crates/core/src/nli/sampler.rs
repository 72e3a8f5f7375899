use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Conversation;
use crate::error::{Error, Result};

use super::ResponseSampler;

/// Draws from a fixed pool without replacement, in a seeded order.
#[derive(Debug, Clone)]
pub struct MockPoolSampler {
    order: Vec<String>,
    next: usize,
}

impl MockPoolSampler {
    pub fn new(pool: Vec<String>, seed: u64) -> Self {
        let mut order = pool;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        MockPoolSampler { order, next: 0 }
    }

    /// Draws in the given order (no shuffle).
    pub fn in_order(pool: Vec<String>) -> Self {
        MockPoolSampler { order: pool, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.next
    }

    pub fn draw(&mut self) -> Result<String> {
        let r = self
            .order
            .get(self.next)
            .cloned()
            .ok_or(Error::PoolExhausted { drawn: self.next })?;
        self.next += 1;
        Ok(r)
    }
}

impl ResponseSampler for MockPoolSampler {
    fn next_response(&mut self, _context: &Conversation) -> Result<String> {
        self.draw()
    }
}

/// Candidates ranked most to least probable (e.g. beam outputs).
#[derive(Debug, Clone)]
pub struct RankedListSampler {
    ranked: Vec<String>,
    consumed: usize,
}

impl RankedListSampler {
    pub fn new(ranked: Vec<String>) -> Self {
        RankedListSampler { ranked, consumed: 0 }
    }

    /// Highest-ranked unconsumed candidate.
    pub fn next_ranked(&mut self) -> Result<String> {
        let r = self
            .ranked
            .get(self.consumed)
            .cloned()
            .ok_or(Error::PoolExhausted { drawn: self.consumed })?;
        self.consumed += 1;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

impl ResponseSampler for RankedListSampler {
    fn next_response(&mut self, _context: &Conversation) -> Result<String> {
        self.next_ranked()
    }
}
