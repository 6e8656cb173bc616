//! Stable hashing and seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from the single
//! experiment seed through [`derive`]. Nothing reads the clock.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Streaming 64-bit FNV-1a. Stable across platforms and releases, unlike
/// `std`'s hasher.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(FNV_OFFSET)
    }
}

impl Fnv {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
    }

    /// Writes a string followed by a unit separator so that field
    /// boundaries affect the hash.
    pub fn write_field(&mut self, s: &str) {
        self.write(s.as_bytes());
        self.write(&[0x1f]);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv::default();
    h.write(bytes);
    h.finish()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed for a named purpose.
pub fn derive(seed: u64, purpose: &str) -> u64 {
    splitmix(seed ^ fnv1a(purpose.as_bytes()))
}

pub fn rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose))
}

/// Hex fingerprint over an ordered list of fields.
pub fn fingerprint<S: AsRef<str>>(fields: &[S]) -> String {
    let mut h = Fnv::default();
    for f in fields {
        h.write_field(f.as_ref());
    }
    format!("{:016x}", h.finish())
}
