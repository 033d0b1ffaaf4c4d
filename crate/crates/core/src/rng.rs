//! Seeded random streams. Every stochastic decision draws from a stream keyed by
//! `(seed, purpose, coordinates)`, so results never depend on call order across
//! utterances or workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keeping independent decisions on independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Mask = 3,
    Noise = 4,
    Position = 5,
    StudentNoise = 6,
    TeacherNoise = 7,
    Distractors = 8,
    Synth = 9,
    Probe = 10,
    Classifier = 11,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn utterance ids into stream coordinates.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(seed ^ splitmix(stream as u64)), |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn stream(seed: u64, stream: Stream, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, coords))
}
