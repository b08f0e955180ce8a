//! Keyed hash, one-time pad and XOR cipher used by the simulated memory
//! controller.
//!
//! None of this is meant to be cryptographically strong. The simulator only
//! needs deterministic, well-mixed values so that integrity checks reduce to
//! equality tests. Latency is charged by the caller: the primitives themselves
//! know nothing about cycles.

use sha2::{Digest, Sha256};

use crate::metadata::{Address, DataBlock, BLOCK_BYTES};

/// 16 bytes of key material, fixed for a simulation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; 16]);

impl SecretKey {
    pub const fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// Derives a key from a run seed so that runs are reproducible.
    pub fn from_seed(seed: u64) -> Self {
        let digest = Sha256::new()
            .chain_update(b"scue-key")
            .chain_update(seed.to_le_bytes())
            .finalize();
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&digest[..16]);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

/// 64-bit authentication tag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacTag(pub u64);

impl MacTag {
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Self {
        Self(u64::from_le_bytes(bytes))
    }
}

/// A 64-byte one-time pad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pad(pub [u8; BLOCK_BYTES]);

/// Keyed MAC over an ordered list of byte strings.
///
/// Every part is length-prefixed, so `["ab", "c"]` and `["a", "bc"]` hash
/// differently.
///
/// # Panics
///
/// Panics if `parts` is empty.
pub fn mac(key: &SecretKey, parts: &[&[u8]]) -> MacTag {
    assert!(!parts.is_empty(), "mac needs at least one input part");
    let mut hasher = Sha256::new();
    hasher.update(b"mac");
    hasher.update(key.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut tag = [0u8; 8];
    tag.copy_from_slice(&digest[..8]);
    MacTag(u64::from_le_bytes(tag))
}

/// One-time pad for the line at `addr` under counter pair `(major, minor)`.
pub fn gen_otp(key: &SecretKey, addr: Address, major: u64, minor: u32) -> Pad {
    debug_assert!(addr.is_aligned(), "OTP address must be block aligned");
    let mut pad = [0u8; BLOCK_BYTES];
    for (half, chunk) in pad.chunks_mut(32).enumerate() {
        let digest = Sha256::new()
            .chain_update(b"otp")
            .chain_update(key.as_bytes())
            .chain_update(addr.value().to_le_bytes())
            .chain_update(major.to_le_bytes())
            .chain_update(minor.to_le_bytes())
            .chain_update([half as u8])
            .finalize();
        chunk.copy_from_slice(&digest);
    }
    Pad(pad)
}

/// MAC of a stored data block, bound to its address and counter pair.
pub fn data_mac(key: &SecretKey, addr: Address, ciphertext: &DataBlock, major: u64, minor: u32) -> MacTag {
    mac(key, &[&addr.value().to_le_bytes(), &ciphertext.0, &major.to_le_bytes(), &minor.to_le_bytes()])
}

/// Bytewise XOR of a block with a pad. Encrypts and decrypts.
pub fn xor_cipher(block: &DataBlock, pad: &Pad) -> DataBlock {
    let mut out = [0u8; BLOCK_BYTES];
    for (o, (b, p)) in out.iter_mut().zip(block.0.iter().zip(pad.0.iter())) {
        *o = b ^ p;
    }
    DataBlock(out)
}
