//! Seeded, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream `id` of the ChaCha8 generator keyed by `seed`.
///
/// Different ids never share output, so adding draws to one stream leaves the others
/// untouched.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}
