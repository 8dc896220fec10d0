//! Counter-keyed random streams.
//!
//! Every consumer derives an independent ChaCha8 stream from
//! `(seed, stream)`; the stream id encodes what is being drawn (tuple index
//! and group, raster row, ...). Output therefore does not depend on the
//! order in which work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for one purpose (`domain`) and item index.
#[inline]
pub fn stream_id(domain: u8, index: u64) -> u64 {
    ((domain as u64) << 56) | (index & ((1 << 56) - 1))
}
