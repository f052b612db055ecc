"""In-memory transactional key-value engine on a logical-tick clock.

The engine executes transactions cooperatively: each call to `execute_op` is
one attempt at the transaction's next operation. Lock acquisition that cannot
proceed returns BLOCKED and the caller retries on a later tick; every blocked
attempt counts one tick of lock wait. This keeps whole runs deterministic
(no OS threads, no wall clock) while still producing real contention,
deadlocks, and validation aborts.

Two per-operation concurrency actions exist: LOCK_IMMEDIATE takes a per-key
lock up front (shared for reads, exclusive for writes, held to commit) and
OPTIMISTIC_NO_LOCK just records the key and committed version for backward
validation at commit. A transaction may mix both.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng as rnglib

READ = "read"
WRITE = "write"
HOT = "hot"
COLD = "cold"

INITIAL_VALUE = 0

ACTIVE = "active"
COMMITTED = "committed"
ABORTED = "aborted"


def compute_checksum(key: str, value: int, version: int) -> str:
    return hashlib.sha256(f"{key}|{value}|{version}".encode()).hexdigest()


@dataclass
class Record:
    """One stored item; checksum binds (key, value, version)."""

    key: str
    value: int
    version: int
    checksum: str

    @classmethod
    def initial(cls, key: str) -> "Record":
        return cls(key, INITIAL_VALUE, 0, compute_checksum(key, INITIAL_VALUE, 0))

    def checksum_ok(self) -> bool:
        return self.checksum == compute_checksum(self.key, self.value, self.version)


class Store:
    """Committed records. Keys absent from the map read as initial records."""

    def __init__(self):
        self.records: dict[str, Record] = {}

    def read(self, key: str) -> Record:
        rec = self.records.get(key)
        return rec if rec is not None else Record.initial(key)

    def install(self, key: str, value: int) -> Record:
        version = self.read(key).version + 1
        rec = Record(key, value, version, compute_checksum(key, value, version))
        self.records[key] = rec
        return rec

    def tamper(self, key: str, value=None, version=None, checksum=None) -> Record:
        """Overwrite fields out-of-band, skipping the checksum update."""
        rec = self.read(key)
        tampered = Record(
            key,
            rec.value if value is None else value,
            rec.version if version is None else version,
            rec.checksum if checksum is None else checksum,
        )
        self.records[key] = tampered
        return tampered


class CCAction(Enum):
    LOCK_IMMEDIATE = "lock_immediate"
    OPTIMISTIC_NO_LOCK = "optimistic_no_lock"


class OpStatus(Enum):
    OK = "ok"
    WAITED = "waited"
    CONFLICT_NOTED = "conflict_noted"
    BLOCKED = "blocked"      # attempt did not complete; retry next tick
    ABORTED = "aborted"      # txn was chosen as deadlock victim


@dataclass
class OpOutcome:
    status: OpStatus
    wait: int = 0


@dataclass
class TxnOp:
    kind: str                  # READ or WRITE
    key: str
    write_value: int | None = None


@dataclass
class Txn:
    txn_id: int
    ops: list[TxnOp]
    begin_seq: int
    status: str = ACTIVE
    abort_reason: str | None = None
    next_op: int = 0
    op_wait: int = 0                                   # blocked ticks on current op
    stall: int = 0                                     # service ticks still owed
    locks: dict[str, str] = field(default_factory=dict)        # key -> "S" | "X"
    read_versions: dict[str, int] = field(default_factory=dict)
    write_versions: dict[str, int] = field(default_factory=dict)
    buffered: dict[str, int] = field(default_factory=dict)     # uncommitted writes
    reads: list[tuple[str, int]] = field(default_factory=list)  # observed values


@dataclass
class CommitResult:
    status: str                # COMMITTED or ABORTED
    reason: str | None = None


@dataclass
class ExecStats:
    """Counters for one execution window.

    Transactions still in flight when the window's tick budget runs out are
    rolled back and counted as carryover, not as aborts; committed + aborted
    never exceeds the number submitted.
    """

    committed_count: int = 0
    aborted_count: int = 0
    total_lock_wait: int = 0
    op_count: int = 0
    locked_op_count: int = 0
    conflicted_op_count: int = 0
    carryover_count: int = 0


@dataclass
class WorkloadSpec:
    """Parameters of a generated transaction stream (part of scenario configs)."""

    key_space: int = 16
    zipf_theta: float = 0.0
    write_frac: float = 0.2
    txn_len: int = 3
    arrival_rate: float = 2.0   # transactions per tick
    seed: int = 0


def zipf_probs(n: int, theta: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** (-theta)
    return w / w.sum()


class Engine:
    """Single-owner engine; one scenario drives it at a time."""

    def __init__(self, log=None, max_workers: int = 4, hot_key_count: int = 8,
                 lock_overhead: int = 1, abort_cost: int = 4):
        self.store = Store()
        self.log = log
        self.max_workers = max_workers
        self.hot_key_count = hot_key_count
        # Service-time model. A locked op owes lock_overhead extra ticks for
        # acquisition bookkeeping (why lock-free reads pay off on uncontended
        # data); an aborted attempt occupies its worker for abort_cost ticks
        # of rollback and rescheduling (why optimistic writes lose on hot
        # data).
        self.lock_overhead = lock_overhead
        self.abort_cost = abort_cost
        self.locks: dict[str, dict[int, str]] = {}      # key -> {txn_id: mode}
        self.waits_for: dict[int, set[int]] = {}
        self.active: dict[int, Txn] = {}
        self._begin_seq = 0
        self.access_counts: dict[str, int] = {}

    # -- transaction lifecycle -------------------------------------------

    def begin(self, ops: list[TxnOp], txn_id: int | None = None) -> Txn:
        self._begin_seq += 1
        tid = txn_id if txn_id is not None else self._begin_seq
        txn = Txn(txn_id=tid, ops=ops, begin_seq=self._begin_seq)
        self.active[tid] = txn
        return txn

    def execute_op(self, txn: Txn, op: TxnOp, action: CCAction) -> OpOutcome:
        if txn.status != ACTIVE:
            raise ValueError(f"txn {txn.txn_id} is {txn.status}")
        if action is CCAction.LOCK_IMMEDIATE:
            return self._attempt_locked(txn, op)
        return self._perform_optimistic(txn, op)

    def validate_and_commit(self, txn: Txn) -> CommitResult:
        if txn.status != ACTIVE:
            raise ValueError(f"txn {txn.txn_id} is {txn.status}")
        if txn.next_op != len(txn.ops):
            raise ValueError("ops remain unexecuted")

        # An optimistic write may not slip under a key another active txn
        # still holds locked; committing anyway would break 2PL readers.
        for key in txn.write_versions:
            holders = self.locks.get(key, {})
            if any(t != txn.txn_id for t in holders):
                self._abort(txn, "conflict")
                return CommitResult(ABORTED, "conflict")

        # Backward validation of the optimistic footprint.
        for key, ver in {**txn.read_versions, **txn.write_versions}.items():
            if self.store.read(key).version != ver:
                self._abort(txn, "conflict")
                return CommitResult(ABORTED, "conflict")

        if self.log is not None:
            self.log.register_txn(txn.txn_id)
        # Install in first-write order; one version bump per key.
        for key in self._install_order(txn):
            rec = self.store.install(key, txn.buffered[key])
            if self.log is not None:
                self.log.append_redo(txn.txn_id, key, rec.value)
        if self.log is not None:
            self.log.seal_txn(txn.txn_id)

        self._release_all(txn)
        txn.status = COMMITTED
        self.active.pop(txn.txn_id, None)
        return CommitResult(COMMITTED)

    def abort(self, txn: Txn, reason: str = "user") -> None:
        self._abort(txn, reason)

    # -- locked path ------------------------------------------------------

    def _attempt_locked(self, txn: Txn, op: TxnOp) -> OpOutcome:
        mode = "X" if op.kind == WRITE else "S"
        if not self._acquirable(txn, op.key, mode):
            txn.op_wait += 1
            blockers = self._blockers(txn, op.key, mode)
            self.waits_for[txn.txn_id] = blockers
            victim = self._find_deadlock_victim(txn.txn_id)
            if victim is not None:
                vic = self.active[victim]
                self._abort(vic, "deadlock")
                if vic is txn:
                    return OpOutcome(OpStatus.ABORTED, txn.op_wait)
            if not self._acquirable(txn, op.key, mode):
                return OpOutcome(OpStatus.BLOCKED, txn.op_wait)

        self.locks.setdefault(op.key, {})
        cur = self.locks[op.key].get(txn.txn_id)
        if cur != "X":  # never downgrade an exclusive lock
            self.locks[op.key][txn.txn_id] = mode if cur is None else "X"
        txn.locks[op.key] = self.locks[op.key][txn.txn_id]
        self.waits_for.pop(txn.txn_id, None)

        self._perform(txn, op)
        waited = txn.op_wait
        txn.op_wait = 0
        txn.next_op += 1
        if waited > 0:
            return OpOutcome(OpStatus.WAITED, waited)
        return OpOutcome(OpStatus.OK)

    def _acquirable(self, txn: Txn, key: str, mode: str) -> bool:
        holders = self.locks.get(key, {})
        others = {t: m for t, m in holders.items() if t != txn.txn_id}
        if mode == "S":
            return all(m == "S" for m in others.values())
        return not others

    def _blockers(self, txn: Txn, key: str, mode: str) -> set[int]:
        holders = self.locks.get(key, {})
        if mode == "S":
            return {t for t, m in holders.items() if t != txn.txn_id and m == "X"}
        return {t for t in holders if t != txn.txn_id}

    def _find_deadlock_victim(self, start: int) -> int | None:
        """Walk the wait-for graph; on a cycle return its youngest member."""
        path: list[int] = []
        on_path: set[int] = set()

        def dfs(t: int) -> list[int] | None:
            if t in on_path:
                return path[path.index(t):]
            path.append(t)
            on_path.add(t)
            for nxt in sorted(self.waits_for.get(t, ())):
                if nxt in self.active:
                    cycle = dfs(nxt)
                    if cycle is not None:
                        return cycle
            path.pop()
            on_path.discard(t)
            return None

        cycle = dfs(start)
        if cycle is None:
            return None
        return max(cycle, key=lambda t: self.active[t].begin_seq)

    # -- optimistic path --------------------------------------------------

    def _perform_optimistic(self, txn: Txn, op: TxnOp) -> OpOutcome:
        rec = self.store.read(op.key)
        if op.kind == READ:
            txn.read_versions.setdefault(op.key, rec.version)
        else:
            txn.write_versions.setdefault(op.key, rec.version)
        self._perform(txn, op)
        txn.next_op += 1
        txn.op_wait = 0
        if self._contended(txn, op.key):
            return OpOutcome(OpStatus.CONFLICT_NOTED)
        return OpOutcome(OpStatus.OK)

    def _contended(self, txn: Txn, key: str) -> bool:
        if any(t != txn.txn_id for t in self.locks.get(key, {})):
            return True
        return any(
            key in other.buffered
            for t, other in self.active.items()
            if t != txn.txn_id
        )

    # -- shared helpers ---------------------------------------------------

    def _perform(self, txn: Txn, op: TxnOp) -> None:
        if op.kind == WRITE:
            txn.buffered[op.key] = op.write_value
        else:
            if op.key in txn.buffered:
                txn.reads.append((op.key, txn.buffered[op.key]))
            else:
                txn.reads.append((op.key, self.store.read(op.key).value))

    def _install_order(self, txn: Txn) -> list[str]:
        order = []
        for op in txn.ops:
            if op.kind == WRITE and op.key in txn.buffered and op.key not in order:
                order.append(op.key)
        return order

    def _release_all(self, txn: Txn) -> None:
        for key in list(txn.locks):
            holders = self.locks.get(key)
            if holders:
                holders.pop(txn.txn_id, None)
                if not holders:
                    del self.locks[key]
        txn.locks.clear()
        self.waits_for.pop(txn.txn_id, None)

    def _abort(self, txn: Txn, reason: str) -> None:
        self._release_all(txn)
        txn.buffered.clear()
        txn.status = ABORTED
        txn.abort_reason = reason
        self.active.pop(txn.txn_id, None)

    def lock_table_empty(self) -> bool:
        return not self.locks

    # -- window simulation --------------------------------------------------

    def hot_keys(self) -> set[str]:
        ranked = sorted(self.access_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return {k for k, _ in ranked[: self.hot_key_count]}

    def run_window(self, workload: WorkloadSpec, policy, duration: float) -> ExecStats:
        """Run one fixed-length window; `policy(kind, heat) -> CCAction` picks actions.

        The window lasts exactly int(duration) ticks. Transaction i arrives at
        tick floor(i / arrival_rate) and is admitted when a worker slot frees
        up; every op attempt and the commit each consume one tick per worker,
        and a locked op owes lock_overhead extra service ticks. An aborted
        attempt (deadlock victim or failed validation) re-enters the queue
        and retries the same ops, so wasted optimistic work costs committed
        throughput just like lock waiting does. Whatever is unfinished at the
        cutoff is rolled back and counted as carryover.

        Deterministic in (workload.seed, policy): transaction generation never
        consults engine state, so identical seeds produce identical streams
        regardless of the actions chosen.
        """
        if self.active:
            raise RuntimeError("engine not quiescent")
        ticks = int(duration)
        pending: list[tuple[int, list[TxnOp]]] = []
        if workload.arrival_rate > 0:
            arrivals = []
            i = 0
            while int(i / workload.arrival_rate) < ticks:
                arrivals.append(int(i / workload.arrival_rate))
                i += 1
            pending = list(zip(arrivals, self._gen_plans(workload, len(arrivals))))

        stats = ExecStats()
        self.access_counts = {}
        running: list[Txn] = []
        cooldowns: list[int] = []   # worker slots busy rolling back aborts

        def finish_abort(txn: Txn, tick: int) -> None:
            stats.aborted_count += 1
            running.remove(txn)
            if self.abort_cost > 0:
                cooldowns.append(self.abort_cost)
            pending.append((tick + 1, txn.ops))

        for tick in range(ticks):
            cooldowns[:] = [c - 1 for c in cooldowns if c > 1]
            for slot in list(pending):
                if len(running) + len(cooldowns) >= self.max_workers:
                    break
                if slot[0] <= tick:
                    pending.remove(slot)
                    running.append(self.begin(slot[1]))
            for txn in list(running):
                if txn.status == ABORTED:
                    finish_abort(txn, tick)
                    continue
                if txn.next_op < len(txn.ops):
                    self._step_op(txn, policy, stats)
                    if txn.status == ABORTED:
                        finish_abort(txn, tick)
                else:
                    res = self.validate_and_commit(txn)
                    if res.status == COMMITTED:
                        stats.committed_count += 1
                        running.remove(txn)
                    else:
                        finish_abort(txn, tick)

        for txn in running:
            if txn.status == ABORTED:
                stats.aborted_count += 1
            else:
                self._abort(txn, "window_end")
                stats.carryover_count += 1
        stats.carryover_count += len(pending)

        assert self.lock_table_empty(), "locks leaked past window end"
        return stats

    def _step_op(self, txn: Txn, policy, stats: ExecStats) -> None:
        if txn.stall > 0:
            txn.stall -= 1
            return
        op = txn.ops[txn.next_op]
        heat = HOT if op.key in self.hot_keys() else COLD
        action = policy(op.kind, heat)
        out = self.execute_op(txn, op, action)
        if out.status in (OpStatus.OK, OpStatus.WAITED, OpStatus.CONFLICT_NOTED):
            self.access_counts[op.key] = self.access_counts.get(op.key, 0) + 1
            stats.op_count += 1
            if action is CCAction.LOCK_IMMEDIATE:
                stats.locked_op_count += 1
                stats.total_lock_wait += out.wait
                txn.stall = self.lock_overhead
            if out.status in (OpStatus.WAITED, OpStatus.CONFLICT_NOTED):
                stats.conflicted_op_count += 1

    def _gen_plans(self, workload: WorkloadSpec, count: int) -> list[list[TxnOp]]:
        gen = rnglib.derive(workload.seed, "window")
        probs = zipf_probs(workload.key_space, workload.zipf_theta)
        n_ops = count * workload.txn_len
        key_ids = gen.choice(workload.key_space, size=n_ops, p=probs)
        is_write = gen.random(n_ops) < workload.write_frac
        values = gen.integers(0, 1_000_000, size=n_ops)
        plans = []
        for t in range(count):
            ops = []
            for j in range(t * workload.txn_len, (t + 1) * workload.txn_len):
                key = f"k{int(key_ids[j]):03d}"
                if is_write[j]:
                    ops.append(TxnOp(WRITE, key, int(values[j])))
                else:
                    ops.append(TxnOp(READ, key))
            plans.append(ops)
        return plans
