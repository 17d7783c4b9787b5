//! Seeded, seekable random stream shared by samplers and optimizers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A ChaCha8 stream whose position can be saved and restored.
///
/// [`StudyRng::fork`] derives an independent stream from the same seed by
/// selecting ChaCha stream `n`; forks never overlap the parent (stream 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyRng {
    inner: ChaCha8Rng,
}

impl StudyRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Current position in 32-bit words since the start of the stream.
    pub fn cursor(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn seek(&mut self, cursor: u128) {
        self.inner.set_word_pos(cursor);
    }

    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_stream(stream.wrapping_add(1));
        inner.set_word_pos(0);
        Self { inner }
    }
}

impl RngCore for StudyRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
