use scue::controller::WriteQueue;
use scue::failure::recover;
use scue::report::simulate;
use scue::{gen_trace, Address, Config, Controller, DataBlock, OpKind, Trace, TraceOp, UpdateScheme, WorkloadKind};

fn small() -> Config {
    Config { mem_size: 16 << 20, cache_kib: 4, cache_ways: 4, wq_user: 8, wq_meta: 4, ..Config::default() }
}

#[test]
fn round_trip_under_every_scheme() {
    for scheme in UpdateScheme::ALL {
        let mut ctl = Controller::new(small().with_scheme(scheme)).unwrap();
        for i in 0..500u64 {
            let block = (i * 37) % 3000;
            ctl.write(Address::from_block_index(block), &DataBlock([(i % 251) as u8; 64])).unwrap();
        }
        for i in 450..500u64 {
            let block = (i * 37) % 3000;
            let (data, _) = ctl.read(Address::from_block_index(block)).unwrap();
            assert_eq!(data, DataBlock([(i % 251) as u8; 64]), "{scheme}");
        }
    }
}

#[test]
fn unwritten_block_reads_as_zero() {
    let mut ctl = Controller::new(small()).unwrap();
    assert_eq!(ctl.read(Address::from_block_index(9)).unwrap().0, DataBlock::ZERO);
}

#[test]
fn cached_scue_write_is_one_hash_plus_queue_cost() {
    let mut ctl = Controller::new(Config::default()).unwrap();
    ctl.write(Address::from_block_index(0), &DataBlock([1; 64])).unwrap();
    let before = ctl.ledger().clone();
    let cycles = ctl.write(Address::from_block_index(1), &DataBlock([2; 64])).unwrap();
    let l = ctl.ledger();
    assert_eq!(l.tree_node_reads, before.tree_node_reads);
    assert_eq!(l.path_hash_cycles - before.path_hash_cycles, 80);
    assert_eq!(cycles, 80 + (l.stall_cycles - before.stall_cycles) + 8 * (l.tag_refills - before.tag_refills));
}

#[test]
fn cached_read_overlaps_otp_with_the_data_read() {
    let cfg = Config::default();
    let mut ctl = Controller::new(cfg.clone()).unwrap();
    ctl.write(Address::from_block_index(0), &DataBlock([1; 64])).unwrap();
    let (_, cycles) = ctl.read(Address::from_block_index(0)).unwrap();
    assert_eq!(cycles, cfg.nvm_read_cycles.max(cfg.otp_cycles) + cfg.hash_cycles);
}

#[test]
fn same_octant_tags_follow_the_root() {
    let mut wq = WriteQueue::new(64, 10);
    wq.prefill_tags(2, 41);
    for n in 42..52 {
        let grant = wq.take_tag(2, n).unwrap();
        assert_eq!((grant.tag, grant.refilled), (n, false));
    }
}

#[test]
fn crash_between_prepare_and_commit_loses_the_write() {
    let mut ctl = Controller::new(small()).unwrap();
    let addr = Address::from_block_index(70);
    ctl.write(addr, &DataBlock([1; 64])).unwrap();
    let (before, root_before) = ctl.drain_on_crash();

    let prepared = ctl.prepare_write(addr, &DataBlock([2; 64])).unwrap();
    let (mid, root_mid) = ctl.drain_on_crash();
    assert_eq!(root_mid, root_before);
    assert_eq!(mid.data.get(&70), before.data.get(&70));
    assert!(recover(ctl.key(), &mid, &root_mid, 4).unwrap().is_clean());

    ctl.commit_write(prepared).unwrap();
    let (after, root_after) = ctl.drain_on_crash();
    assert_eq!(root_after, *ctl.root());
    assert_ne!(after.data.get(&70), before.data.get(&70));
    assert!(recover(ctl.key(), &after, &root_after, 4).unwrap().is_clean());
}

#[test]
fn drained_tags_overwrite_the_root() {
    let mut ctl = Controller::new(Config::default()).unwrap();
    let start = ctl.persisted_root().counters[0];
    for i in 0..3 {
        ctl.write(Address::from_block_index(i), &DataBlock([9; 64])).unwrap();
    }
    assert_eq!(ctl.drain_on_crash().1.counters[0], start + 3);
}

#[test]
fn read_only_trace_has_no_write_latency() {
    let ops = (0..100)
        .map(|i| TraceOp { kind: OpKind::Read, addr: Address::from_block_index(i * 64), payload: DataBlock::ZERO })
        .collect();
    let trace = Trace { ops, seed: 0, label: "reads".into() };
    for scheme in UpdateScheme::ALL {
        let (r, _) = simulate(&Config::default().with_scheme(scheme), &trace).unwrap();
        assert_eq!(r.avg_write_latency_cycles, 0.0);
    }
}

#[test]
fn write_latency_ordering() {
    let trace = gen_trace(WorkloadKind::Hash, 3000, 3, 16 << 30).unwrap();
    let lat = |s| simulate(&Config::default().with_scheme(s), &trace).unwrap().0.avg_write_latency_cycles;
    let (eager, lazy, lc, scue) =
        (lat(UpdateScheme::Eager), lat(UpdateScheme::Lazy), lat(UpdateScheme::LazyComputing), lat(UpdateScheme::Scue));
    assert!(eager >= lc && lc >= scue && lazy >= scue, "{eager} {lazy} {lc} {scue}");

    let seq = gen_trace(WorkloadKind::Seqwrite, 1000, 3, 16 << 30).unwrap();
    let lat = |s| simulate(&Config::default().with_scheme(s), &seq).unwrap().0.avg_write_latency_cycles;
    assert!(lat(UpdateScheme::Eager) > lat(UpdateScheme::Scue));
}

#[test]
fn ledger_conserves_cycles() {
    let trace = gen_trace(WorkloadKind::Btree, 2000, 1, 16 << 20).unwrap();
    let (r, ctl) = simulate(&small(), &trace).unwrap();
    let l = ctl.ledger();
    assert_eq!(l.op_cycles.iter().sum::<u64>(), r.total_cycles);
    assert_eq!(r.ops as usize, trace.len());
}
