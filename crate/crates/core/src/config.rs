//! Run configuration. Every key has a default, so an empty config file is a
//! valid 16 GiB simulation under the shortcut scheme.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::TreeGeometry;

/// How leaf modifications reach the tree root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateScheme {
    /// Propagate to the root on the write path, recomputing every HMAC.
    Eager,
    /// Update only the parent; ancestors change when children are evicted.
    Lazy,
    /// Increment every branch counter on-path, defer HMACs to eviction.
    #[serde(rename = "lc")]
    LazyComputing,
    /// Increment the root counter on-path; branch counters in background.
    Scue,
    /// Bonsai Merkle tree with an eager hash chain to the root.
    BmtEager,
    /// Bonsai Merkle tree updating only the parent digest.
    BmtLazy,
}

impl UpdateScheme {
    pub const ALL: [UpdateScheme; 6] = [
        UpdateScheme::Eager,
        UpdateScheme::Lazy,
        UpdateScheme::LazyComputing,
        UpdateScheme::Scue,
        UpdateScheme::BmtEager,
        UpdateScheme::BmtLazy,
    ];

    /// Schemes whose persisted root can be checked against rebuilt leaves.
    pub const RECOVERABLE: [UpdateScheme; 4] =
        [UpdateScheme::Eager, UpdateScheme::LazyComputing, UpdateScheme::Scue, UpdateScheme::BmtEager];

    pub fn is_bmt(self) -> bool {
        matches!(self, UpdateScheme::BmtEager | UpdateScheme::BmtLazy)
    }

    /// Whether the live root tracks every leaf persist (and so the write
    /// queue carries predicted root-counter tags).
    pub fn counts_in_root(self) -> bool {
        matches!(self, UpdateScheme::Eager | UpdateScheme::LazyComputing | UpdateScheme::Scue)
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateScheme::Eager => "eager",
            UpdateScheme::Lazy => "lazy",
            UpdateScheme::LazyComputing => "lc",
            UpdateScheme::Scue => "scue",
            UpdateScheme::BmtEager => "bmt-eager",
            UpdateScheme::BmtLazy => "bmt-lazy",
        }
    }

    fn code(self) -> u8 {
        match self {
            UpdateScheme::Eager => 0,
            UpdateScheme::Lazy => 1,
            UpdateScheme::LazyComputing => 2,
            UpdateScheme::Scue => 3,
            UpdateScheme::BmtEager => 4,
            UpdateScheme::BmtLazy => 5,
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        self.code()
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == b)
    }
}

impl fmt::Display for UpdateScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mem_size: u64,
    pub cache_kib: u64,
    pub cache_ways: usize,
    pub wq_user: usize,
    pub wq_meta: usize,
    pub hash_cycles: u64,
    pub nvm_read_cycles: u64,
    /// Average cycles between retirements of write-queue entries.
    pub nvm_write_cycles: u64,
    /// Latency of one OTP generation.
    pub otp_cycles: u64,
    pub scheme: UpdateScheme,
    pub minor_bits: u32,
    pub osiris_limit: u32,
    /// Persist a counter block once any minor drifts `osiris_limit` writes
    /// ahead of its persisted copy. Disabling it lets staleness exceed the
    /// recovery window.
    pub osiris_stop_loss: bool,
    pub tag_refill_cycles: u64,
    pub eager_parallel_hashes: u32,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            mem_size: 16 << 30,
            cache_kib: 256,
            cache_ways: 8,
            wq_user: 64,
            wq_meta: 10,
            hash_cycles: 80,
            // tRCD 48 ns at 2 GHz
            nvm_read_cycles: 96,
            // tWR 300 ns at 2 GHz, spread over 8 banks
            nvm_write_cycles: 75,
            otp_cycles: 40,
            scheme: UpdateScheme::Scue,
            minor_bits: 7,
            osiris_limit: 4,
            osiris_stop_loss: true,
            tag_refill_cycles: 8,
            eager_parallel_hashes: 1,
            seed: 0,
        }
    }
}

impl Config {
    pub fn with_scheme(mut self, scheme: UpdateScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<TreeGeometry> {
        let geometry = TreeGeometry::new(self.mem_size)?;
        if self.cache_ways == 0 || self.cache_kib == 0 {
            return Err(Error::Config("metadata cache must have at least one way".into()));
        }
        let lines = self.cache_kib * 1024 / 64;
        if lines % self.cache_ways as u64 != 0 {
            return Err(Error::Config("cache lines must divide evenly into ways".into()));
        }
        if self.wq_user == 0 || self.wq_meta == 0 {
            return Err(Error::Config("write queue needs user and metadata slots".into()));
        }
        if !(1..=31).contains(&self.minor_bits) {
            return Err(Error::Config("minor_bits must be in 1..=31".into()));
        }
        if self.eager_parallel_hashes == 0 {
            return Err(Error::Config("eager_parallel_hashes must be at least 1".into()));
        }
        Ok(geometry)
    }

    /// Stable 64-bit fingerprint written into crash-image headers.
    pub fn fingerprint(&self) -> u64 {
        let text = format!("{self:?}");
        crate::crypto::mac(&crate::crypto::SecretKey::new([0; 16]), &[text.as_bytes()]).0
    }
}
