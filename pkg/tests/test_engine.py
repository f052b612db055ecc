import itertools

import pytest

from frpkernel.engine import (
    ABORTED,
    ACTIVE,
    COMMITTED,
    CCAction,
    Engine,
    OpStatus,
    Record,
    WorkloadSpec,
    compute_checksum,
)
from helpers import all_lock, all_optimistic, matches_some_serial_order, r, run_schedule, w

LOCK = CCAction.LOCK_IMMEDIATE
OPT = CCAction.OPTIMISTIC_NO_LOCK


def test_uncontended_locked_write_no_wait():
    eng = Engine()
    txn = eng.begin([w("k1", 5)])
    out = eng.execute_op(txn, txn.ops[0], LOCK)
    assert out.status is OpStatus.OK
    assert out.wait == 0
    assert eng.validate_and_commit(txn).status == COMMITTED
    assert eng.store.read("k1").value == 5


def test_contended_locked_write_waits_without_retry():
    eng = Engine()
    holder = eng.begin([w("hot", 1)])
    eng.execute_op(holder, holder.ops[0], LOCK)

    writer = eng.begin([w("hot", 2)])
    first = eng.execute_op(writer, writer.ops[0], LOCK)
    assert first.status is OpStatus.BLOCKED

    eng.validate_and_commit(holder)
    second = eng.execute_op(writer, writer.ops[0], LOCK)
    assert second.status is OpStatus.WAITED
    assert second.wait > 0
    assert writer.status == ACTIVE  # waited, never aborted and restarted
    assert eng.validate_and_commit(writer).status == COMMITTED
    assert eng.store.read("hot").value == 2


def test_optimistic_read_records_version():
    eng = Engine()
    setup = eng.begin([w("a", 7)])
    eng.execute_op(setup, setup.ops[0], LOCK)
    eng.validate_and_commit(setup)

    txn = eng.begin([r("a")])
    out = eng.execute_op(txn, txn.ops[0], OPT)
    assert out.status is OpStatus.OK
    assert txn.read_versions == {"a": 1}
    assert eng.validate_and_commit(txn).status == COMMITTED


def test_locked_only_txn_validation_vacuous():
    eng = Engine()
    txn = eng.begin([r("a"), w("b", 1)])
    for op in txn.ops:
        eng.execute_op(txn, op, LOCK)
    assert eng.validate_and_commit(txn).status == COMMITTED


def test_optimistic_read_invalidated_by_concurrent_write():
    eng = Engine()
    reader = eng.begin([r("a")])
    eng.execute_op(reader, reader.ops[0], OPT)

    writer = eng.begin([w("a", 9)])
    eng.execute_op(writer, writer.ops[0], LOCK)
    eng.validate_and_commit(writer)

    res = eng.validate_and_commit(reader)
    assert res.status == ABORTED
    assert res.reason == "conflict"


def test_two_optimistic_writers_exactly_one_commits():
    # Brute force over both validation orders.
    for first, second in [(0, 1), (1, 0)]:
        eng = Engine()
        txns = [eng.begin([w("k", 10)]), eng.begin([w("k", 20)])]
        for txn in txns:
            eng.execute_op(txn, txn.ops[0], OPT)
        results = {}
        results[first] = eng.validate_and_commit(txns[first]).status
        results[second] = eng.validate_and_commit(txns[second]).status
        statuses = sorted(results.values())
        assert statuses == [ABORTED, COMMITTED]
        assert results[first] == COMMITTED  # serial validation: first wins


def test_deadlock_aborts_youngest():
    eng = Engine()
    older = eng.begin([w("k1", 1), w("k2", 1)])
    younger = eng.begin([w("k2", 2), w("k1", 2)])
    eng.execute_op(older, older.ops[0], LOCK)
    eng.execute_op(younger, younger.ops[0], LOCK)
    assert eng.execute_op(older, older.ops[1], LOCK).status is OpStatus.BLOCKED
    out = eng.execute_op(younger, younger.ops[1], LOCK)
    assert out.status is OpStatus.ABORTED
    assert younger.status == ABORTED
    assert younger.abort_reason == "deadlock"
    # the older txn can now finish
    assert eng.execute_op(older, older.ops[1], LOCK).status is OpStatus.WAITED
    assert eng.validate_and_commit(older).status == COMMITTED
    assert eng.lock_table_empty()


def test_read_own_buffered_write():
    eng = Engine()
    txn = eng.begin([w("a", 42), r("a")])
    eng.execute_op(txn, txn.ops[0], LOCK)
    eng.execute_op(txn, txn.ops[1], LOCK)
    assert txn.reads == [("a", 42)]


def test_record_checksum_roundtrip():
    rec = Record.initial("x")
    assert rec.checksum_ok()
    assert rec.checksum == compute_checksum("x", rec.value, rec.version)


def test_run_window_empty_workload():
    eng = Engine()
    spec = WorkloadSpec(arrival_rate=0.0, seed=1)
    stats = eng.run_window(spec, all_lock, duration=10)
    assert stats.committed_count == 0
    assert stats.aborted_count == 0
    assert stats.op_count == 0
    assert stats.total_lock_wait == 0


def test_run_window_serial_never_aborts():
    for policy in (all_lock, all_optimistic):
        eng = Engine(max_workers=1)
        spec = WorkloadSpec(key_space=4, zipf_theta=1.2, write_frac=0.9,
                            txn_len=4, arrival_rate=2.0, seed=7)
        stats = eng.run_window(spec, policy, duration=20)
        assert stats.aborted_count == 0
        assert stats.committed_count > 0
        assert stats.committed_count + stats.carryover_count == 40


def test_run_window_deterministic():
    def run():
        eng = Engine(max_workers=4)
        spec = WorkloadSpec(key_space=8, zipf_theta=0.9, write_frac=0.5,
                            txn_len=3, arrival_rate=3.0, seed=11)
        return eng.run_window(spec, all_lock, duration=15)

    assert run() == run()


def test_skewed_writes_optimistic_aborts_exceed_locking():
    def abort_rate(policy, seed):
        eng = Engine(max_workers=4)
        spec = WorkloadSpec(key_space=8, zipf_theta=1.2, write_frac=0.8,
                            txn_len=3, arrival_rate=4.0, seed=seed)
        stats = eng.run_window(spec, policy, duration=40)
        assert eng.lock_table_empty()
        total = stats.committed_count + stats.aborted_count
        return stats.aborted_count / total

    seeds = range(5)
    optimistic = sum(abort_rate(all_optimistic, s) for s in seeds) / 5
    locking = sum(abort_rate(all_lock, s) for s in seeds) / 5
    assert optimistic > locking


def test_interleavings_of_two_txns_serializable():
    specs = [[w("a", 1), r("b")], [w("b", 2), r("a")]]
    steps = [0] * 3 + [1] * 3  # 2 ops + commit each
    for mode in (all_lock, all_optimistic):
        actions = [[mode(op.kind, "cold") for op in ops] for ops in specs]
        for order in set(itertools.permutations(steps)):
            committed, final, reads = run_schedule(specs, actions, order)
            assert matches_some_serial_order(specs, actions, committed, final, reads)


def test_pending_ops_block_commit():
    eng = Engine()
    txn = eng.begin([w("a", 1), w("b", 2)])
    eng.execute_op(txn, txn.ops[0], LOCK)
    with pytest.raises(ValueError):
        eng.validate_and_commit(txn)
