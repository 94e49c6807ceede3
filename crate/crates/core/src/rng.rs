//! Per-shot random streams.
//!
//! Every shot draws from its own ChaCha8 stream keyed by `(seed, shot_id)`,
//! so frames can be generated in any order or in parallel and still come out
//! bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent streams used within one shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Pump gain and photon-pair emission and detection.
    Photons = 0,
    /// Straylight and read noise.
    Background = 1,
}

pub fn shot_rng(seed: u64, shot_id: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot_id.wrapping_mul(2).wrapping_add(stream as u64));
    rng
}
