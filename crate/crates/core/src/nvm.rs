//! Persistent NVM contents and the crash-image file format.
//!
//! Storage is sparse: an absent entry is a line that has never been
//! written and holds its pristine (all-zero) value.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! version:u8 | mem_size:u64 minor_bits:u8 scheme:u8 config_hash:u64
//! data:        n:u64 { block:u64 ciphertext:[u8;64] }*
//! data MACs:   n:u64 { block:u64 tag:u64 }*
//! counters:    n:u64 { leaf:u64 block:[u8;counter_len] }*
//! leaf MACs:   n:u64 { leaf:u64 tag:u64 }*
//! tree:        n:u64 { level:u8 index:u64 node:[u8;64] }*
//! root:        [u64;8]
//! ```

use std::collections::BTreeMap;

use crate::config::UpdateScheme;
use crate::crypto::MacTag;
use crate::error::{Error, Result};
use crate::metadata::{CounterBlock, DataBlock, NodeId, RootRegister, TreeGeometry, BLOCK_BYTES};

pub const IMAGE_VERSION: u8 = 1;

/// One line headed for NVM, as carried by a write-queue entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Persist {
    Data { block: u64, ciphertext: DataBlock, mac: MacTag },
    Counter { leaf: u64, bytes: Vec<u8>, mac: MacTag },
    Node { node: NodeId, bytes: [u8; BLOCK_BYTES] },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NvmImage {
    pub geometry: TreeGeometry,
    pub minor_bits: u32,
    pub scheme: UpdateScheme,
    pub config_hash: u64,
    pub data: BTreeMap<u64, DataBlock>,
    pub data_macs: BTreeMap<u64, MacTag>,
    pub counters: BTreeMap<u64, Vec<u8>>,
    pub leaf_macs: BTreeMap<u64, MacTag>,
    pub tree: BTreeMap<NodeId, [u8; BLOCK_BYTES]>,
}

impl NvmImage {
    pub fn new(geometry: TreeGeometry, minor_bits: u32, scheme: UpdateScheme, config_hash: u64) -> Self {
        Self {
            geometry,
            minor_bits,
            scheme,
            config_hash,
            data: BTreeMap::new(),
            data_macs: BTreeMap::new(),
            counters: BTreeMap::new(),
            leaf_macs: BTreeMap::new(),
            tree: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, persist: &Persist) {
        match persist {
            Persist::Data { block, ciphertext, mac } => {
                self.data.insert(*block, *ciphertext);
                self.data_macs.insert(*block, *mac);
            }
            Persist::Counter { leaf, bytes, mac } => {
                self.counters.insert(*leaf, bytes.clone());
                self.leaf_macs.insert(*leaf, *mac);
            }
            Persist::Node { node, bytes } => {
                self.tree.insert(*node, *bytes);
            }
        }
    }

    /// Stored counter block for `leaf`, pristine if never persisted.
    pub fn counter_block(&self, leaf: u64) -> Result<CounterBlock> {
        match self.counters.get(&leaf) {
            Some(bytes) => CounterBlock::decode(bytes, self.minor_bits),
            None => Ok(CounterBlock::new(self.minor_bits)),
        }
    }

    pub fn to_bytes(&self, root: &RootRegister) -> Vec<u8> {
        let mut out = vec![IMAGE_VERSION];
        out.extend(self.geometry.mem_size.to_le_bytes());
        out.push(self.minor_bits as u8);
        out.push(self.scheme.to_byte());
        out.extend(self.config_hash.to_le_bytes());

        out.extend((self.data.len() as u64).to_le_bytes());
        for (block, ct) in &self.data {
            out.extend(block.to_le_bytes());
            out.extend(ct.0);
        }
        out.extend((self.data_macs.len() as u64).to_le_bytes());
        for (block, tag) in &self.data_macs {
            out.extend(block.to_le_bytes());
            out.extend(tag.to_le_bytes());
        }
        out.extend((self.counters.len() as u64).to_le_bytes());
        for (leaf, bytes) in &self.counters {
            out.extend(leaf.to_le_bytes());
            out.extend(bytes);
        }
        out.extend((self.leaf_macs.len() as u64).to_le_bytes());
        for (leaf, tag) in &self.leaf_macs {
            out.extend(leaf.to_le_bytes());
            out.extend(tag.to_le_bytes());
        }
        out.extend((self.tree.len() as u64).to_le_bytes());
        for (node, bytes) in &self.tree {
            out.push(node.level);
            out.extend(node.index.to_le_bytes());
            out.extend(bytes);
        }
        for c in root.counters {
            out.extend(c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, RootRegister)> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u8()?;
        if version != IMAGE_VERSION {
            return Err(Error::Decode(format!("unsupported image version {version}")));
        }
        let geometry = TreeGeometry::new(r.u64()?)?;
        let minor_bits = u32::from(r.u8()?);
        if !(1..=31).contains(&minor_bits) {
            return Err(Error::Decode(format!("bad minor_bits {minor_bits}")));
        }
        let scheme_byte = r.u8()?;
        let scheme = UpdateScheme::from_byte(scheme_byte)
            .ok_or_else(|| Error::Decode(format!("unknown scheme code {scheme_byte}")))?;
        let mut image = Self::new(geometry, minor_bits, scheme, r.u64()?);

        for _ in 0..r.u64()? {
            let block = r.u64()?;
            image.data.insert(block, DataBlock(r.array()?));
        }
        for _ in 0..r.u64()? {
            let block = r.u64()?;
            image.data_macs.insert(block, MacTag(r.u64()?));
        }
        let counter_len = CounterBlock::encoded_len(minor_bits);
        for _ in 0..r.u64()? {
            let leaf = r.u64()?;
            image.counters.insert(leaf, r.take(counter_len)?.to_vec());
        }
        for _ in 0..r.u64()? {
            let leaf = r.u64()?;
            image.leaf_macs.insert(leaf, MacTag(r.u64()?));
        }
        for _ in 0..r.u64()? {
            let level = r.u8()?;
            let index = r.u64()?;
            image.tree.insert(NodeId::new(level, index), r.array()?);
        }
        let mut root = RootRegister::default();
        for c in root.counters.iter_mut() {
            *c = r.u64()?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok((image, root))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode(format!("truncated image at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> NvmImage {
        NvmImage::new(TreeGeometry::new(1 << 20).unwrap(), 7, UpdateScheme::Scue, 42)
    }

    #[test]
    fn file_round_trip() {
        let mut img = image();
        img.apply(&Persist::Data { block: 3, ciphertext: DataBlock([7; 64]), mac: MacTag(9) });
        let mut cb = CounterBlock::new(7);
        cb.increment_minor(3);
        img.apply(&Persist::Counter { leaf: 0, bytes: cb.encode(), mac: MacTag(11) });
        img.apply(&Persist::Node { node: NodeId::new(1, 0), bytes: [5; 64] });
        let root = RootRegister { counters: [1, 2, 3, 4, 5, 6, 7, 8] };
        let bytes = img.to_bytes(&root);
        assert_eq!(bytes[0], IMAGE_VERSION);
        let (back, root_back) = NvmImage::from_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(root_back, root);
        assert_eq!(back.counter_block(0).unwrap(), cb);
    }

    #[test]
    fn rejects_truncated_and_bad_version() {
        let bytes = image().to_bytes(&RootRegister::default());
        assert!(NvmImage::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(NvmImage::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(NvmImage::from_bytes(&long).is_err());
    }
}
