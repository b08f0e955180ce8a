use proptest::prelude::*;
use scue::failure::{crash_sweep, recover, AttackKind, RecoveryStatus};
use scue::nvm::Persist;
use scue::tree::{bmt_fold, reconstruct, Verdict};
use scue::{Address, Config, Controller, CounterBlock, DataBlock, OpKind, Trace, TraceOp, UpdateScheme};

fn small() -> Config {
    Config { mem_size: 16 << 20, cache_kib: 4, cache_ways: 4, wq_user: 8, wq_meta: 4, ..Config::default() }
}

fn trace_of(blocks: &[(bool, u64)]) -> Trace {
    let ops = blocks
        .iter()
        .enumerate()
        .map(|(i, &(write, block))| TraceOp {
            kind: if write { OpKind::Write } else { OpKind::Read },
            addr: Address::from_block_index(block),
            payload: DataBlock([i as u8; 64]),
        })
        .collect();
    Trace { ops, seed: 0, label: "test".into() }
}

#[test]
fn cold_write_closed_forms() {
    let addr = Address::from_block_index(12345);
    let mut scue = Controller::new(Config::default()).unwrap();
    scue.write(addr, &DataBlock([1; 64])).unwrap();
    let l = scue.ledger();
    assert_eq!((l.path_hash_cycles, l.tree_node_reads), (80, 0));

    let mut eager = Controller::new(Config::default().with_scheme(UpdateScheme::Eager)).unwrap();
    eager.write(addr, &DataBlock([1; 64])).unwrap();
    let l = eager.ledger();
    assert!(l.path_hash_cycles >= 8 * 80);
    assert!(l.tree_node_reads + l.counter_reads >= 8);
}

#[test]
fn lazy_sit_is_not_crash_recoverable() {
    let blocks: Vec<(bool, u64)> = (0..60).map(|i| (true, (i * 97) % 4096)).collect();
    let s = crash_sweep(&small().with_scheme(UpdateScheme::Lazy), &trace_of(&blocks)).unwrap();
    assert!(!s.all_clean());
}

#[test]
fn decremented_counter_fails_its_leaf_mac() {
    let mut ctl = Controller::new(small()).unwrap();
    for i in 0..5 {
        ctl.write(Address::from_block_index(3), &DataBlock([i; 64])).unwrap();
    }
    ctl.shutdown().unwrap();
    let (mut image, root) = ctl.drain_on_crash();
    let mut block = image.counter_block(0).unwrap();
    block.minors[3] -= 1;
    let mac = image.leaf_macs[&0];
    image.apply(&Persist::Counter { leaf: 0, bytes: block.encode(), mac });
    assert_eq!(reconstruct(ctl.key(), &image, &root).unwrap().verdict, Verdict::RollForwardDetected);
    let v = recover(ctl.key(), &image, &root, 4).unwrap();
    assert_eq!(v.status, RecoveryStatus::AttackDetected(AttackKind::RollForward));
}

#[test]
fn bmt_root_matches_fold_after_shutdown() {
    let blocks: Vec<(bool, u64)> = (0..200).map(|i| (i % 5 != 0, (i * 131) % 8192)).collect();
    let mut ctl = Controller::new(small().with_scheme(UpdateScheme::BmtEager)).unwrap();
    ctl.run(&trace_of(&blocks)).unwrap();
    ctl.shutdown().unwrap();
    let (image, root) = ctl.drain_on_crash();
    let leaves = image.counters.keys().map(|&l| (l, image.counter_block(l).unwrap())).collect();
    assert_eq!(bmt_fold(ctl.key(), &image.geometry, &leaves, 7), root);
}

#[test]
fn clean_shutdown_rebuilds_exactly() {
    let blocks: Vec<(bool, u64)> = (0..300).map(|i| (true, (i * 7919) % 16384)).collect();
    for scheme in [UpdateScheme::Eager, UpdateScheme::LazyComputing, UpdateScheme::Scue] {
        let mut ctl = Controller::new(small().with_scheme(scheme)).unwrap();
        ctl.run(&trace_of(&blocks)).unwrap();
        ctl.shutdown().unwrap();
        let (image, root) = ctl.drain_on_crash();
        let report = reconstruct(ctl.key(), &image, &root).unwrap();
        assert_eq!(report.verdict, Verdict::Clean, "{scheme}");
    }
}

#[test]
fn pristine_block_sums_to_zero() {
    assert_eq!(CounterBlock::new(7).leaf_sum().0, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shortcut_lc_and_eager_agree_on_the_root(ops in prop::collection::vec((any::<bool>(), 0u64..20_000), 1..300)) {
        let trace = trace_of(&ops);
        let mut roots = Vec::new();
        for scheme in [UpdateScheme::Eager, UpdateScheme::LazyComputing, UpdateScheme::Scue] {
            let mut ctl = Controller::new(small().with_scheme(scheme)).unwrap();
            ctl.run(&trace).unwrap();
            ctl.finish().unwrap();
            roots.push(*ctl.root());
        }
        prop_assert_eq!(roots[0], roots[1]);
        prop_assert_eq!(roots[1], roots[2]);
    }

    #[test]
    fn every_crash_point_recovers(ops in prop::collection::vec((any::<bool>(), 0u64..2_000), 1..60)) {
        let trace = trace_of(&ops);
        for scheme in UpdateScheme::RECOVERABLE {
            let s = crash_sweep(&small().with_scheme(scheme), &trace).unwrap();
            prop_assert!(s.all_clean(), "{} {:?}", scheme, s.failures);
        }
    }
}
