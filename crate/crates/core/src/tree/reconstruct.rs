//! Counter-summing reconstruction of the SIT after a crash, and the
//! from-scratch fold of a Bonsai Merkle tree.

use std::collections::BTreeMap;

use super::{bmt_leaf_digest, bmt_node_digest, bmt_pristine_digests, compute_leaf_hmac, compute_node_hmac};
use crate::crypto::SecretKey;
use crate::error::Result;
use crate::metadata::{BmtNode, CounterBlock, NodeId, RootRegister, SitNode, TreeGeometry, FANOUT, SIT_COUNTER_MASK};
use crate::nvm::NvmImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Verdict {
    Clean,
    RollForwardDetected,
    RollBackDetected,
}

/// Intermediate nodes rebuilt by summation. Only nodes with a nonzero
/// counter are materialized; the rest are pristine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RebuiltTree {
    pub nodes: BTreeMap<NodeId, SitNode>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconstructionReport {
    pub root_match: bool,
    pub hmac_failures: Vec<u64>,
    pub verdict: Verdict,
    pub rebuilt_root: RootRegister,
    pub tree: RebuiltTree,
}

/// Rebuilds the tree from the counter blocks stored in `image`.
pub fn reconstruct(key: &SecretKey, image: &NvmImage, root: &RootRegister) -> Result<ReconstructionReport> {
    reconstruct_with(key, image, root, &BTreeMap::new())
}

/// As [`reconstruct`], but summing `recovered` blocks in place of the stored
/// ones where given. Leaf MACs are still checked against the stored bytes,
/// which is what they were computed over.
pub fn reconstruct_with(
    key: &SecretKey,
    image: &NvmImage,
    root: &RootRegister,
    recovered: &BTreeMap<u64, CounterBlock>,
) -> Result<ReconstructionReport> {
    let geometry = image.geometry;
    let mut hmac_failures = Vec::new();
    let mut sums: BTreeMap<u64, u64> = BTreeMap::new();

    let mut leaves: Vec<u64> = image.counters.keys().chain(image.leaf_macs.keys()).copied().collect();
    leaves.sort_unstable();
    leaves.dedup();
    for leaf in leaves {
        let stored = image.counter_block(leaf)?;
        let sum = stored.leaf_sum().0;
        let addr = geometry.node_address(NodeId::leaf(leaf));
        let expected = compute_leaf_hmac(key, addr, &stored, sum);
        if image.leaf_macs.get(&leaf) != Some(&expected) {
            hmac_failures.push(leaf);
        }
        sums.insert(leaf, sum);
    }
    for (&leaf, block) in recovered {
        sums.insert(leaf, block.leaf_sum().0);
    }

    let mut tree = RebuiltTree::default();
    let mut rebuilt_root = RootRegister::default();
    let mut level: BTreeMap<NodeId, u64> = sums
        .into_iter()
        .filter(|&(_, s)| s != 0)
        .map(|(leaf, s)| (NodeId::leaf(leaf), s))
        .collect();
    while !level.is_empty() {
        let mut parents: BTreeMap<NodeId, SitNode> = BTreeMap::new();
        for (node, sum) in level {
            match geometry.parent(node) {
                None => rebuilt_root.counters[geometry.octant_of(node)] = sum,
                Some(p) => {
                    let slot = geometry.slot_in_parent(node);
                    // forged blocks can carry any sum
                    parents.entry(p).or_default().counters[slot] = sum & SIT_COUNTER_MASK;
                }
            }
        }
        level = BTreeMap::new();
        for (id, mut node) in parents {
            let dummy = node.dummy_counter().0;
            node.hmac = compute_node_hmac(key, geometry.node_address(id), &node.counters, dummy);
            tree.nodes.insert(id, node);
            level.insert(id, dummy);
        }
    }

    let root_match = rebuilt_root == *root;
    let verdict = if !hmac_failures.is_empty() {
        Verdict::RollForwardDetected
    } else if !root_match {
        Verdict::RollBackDetected
    } else {
        Verdict::Clean
    };
    Ok(ReconstructionReport { root_match, hmac_failures, verdict, rebuilt_root, tree })
}

/// Root digests of a Bonsai Merkle tree over `leaves`; absent leaves are
/// pristine.
pub fn bmt_fold(key: &SecretKey, geometry: &TreeGeometry, leaves: &BTreeMap<u64, CounterBlock>, minor_bits: u32) -> RootRegister {
    let pristine = bmt_pristine_digests(key, geometry, minor_bits);
    let top = *pristine.last().unwrap();
    let mut root = RootRegister { counters: [top.0; FANOUT] };
    let mut level: BTreeMap<NodeId, _> =
        leaves.iter().map(|(&leaf, block)| (NodeId::leaf(leaf), bmt_leaf_digest(key, block))).collect();
    while !level.is_empty() {
        let mut parents: BTreeMap<NodeId, BmtNode> = BTreeMap::new();
        for (node, digest) in level {
            match geometry.parent(node) {
                None => root.counters[geometry.octant_of(node)] = digest.0,
                Some(p) => {
                    let blank = BmtNode { hmacs: [pristine[node.level as usize]; FANOUT] };
                    parents.entry(p).or_insert(blank).hmacs[geometry.slot_in_parent(node)] = digest;
                }
            }
        }
        level = parents.into_iter().map(|(id, node)| (id, bmt_node_digest(key, &node))).collect();
    }
    root
}
