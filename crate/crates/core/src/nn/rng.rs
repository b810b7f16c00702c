//! Seeded RNG with a serialisable state, so a training run can be checkpointed mid-stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed, stream and word position: 32 + 8 + 16 bytes.
pub fn state_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(56);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn from_state_bytes(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != 56 {
        return Err(Error::Format(format!(
            "rng state must be 56 bytes, got {}",
            bytes.len()
        )));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let stream = u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes"));
    let pos = u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}
