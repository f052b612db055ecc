"""Tamper detection and bounded-replay repair over a sealed redo log.

Every committed write appends one redo entry (delta); every n-th modification
of a key additionally appends an anchor entry carrying the key's full content,
so repair never replays more than n deltas. Each transaction's entries are
hashed and the digest is MAC-signed by a key-isolated enclave stand-in, which
makes both the entries and the seals tamper-evident.

The log doubles as the trusted view of "what the store should contain": a
stored record whose checksum fails, or whose (value, version) disagrees with
the latest sealed log state, is flagged as tampered and can be rebuilt from
the most recent anchor.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .engine import INITIAL_VALUE, Record, compute_checksum

MAGIC = "FRPLOG"
FORMAT_VERSION = "1"
DIGEST_ALGO = "sha256"


class LogError(Exception):
    pass


class LogCorrupt(LogError):
    """Log bytes failed structural or cryptographic validation."""


class RecoveryRefused(LogError):
    """A seal in the replayed range failed to verify; the log itself is suspect."""


class UnknownTxn(LogError):
    pass


class EnclaveSim:
    """Key-isolated signer standing in for enclave-shielded computation.

    The MAC key lives only inside this object and never reaches any
    serialized output; the log header carries a MAC *over* the header, not
    the key.
    """

    def __init__(self, seed: int | None = None, key: bytes | None = None):
        if key is not None:
            self._mac_key = key
        elif seed is not None:
            self._mac_key = hashlib.sha256(f"enclave:{seed}".encode()).digest()
        else:
            import os

            self._mac_key = os.urandom(32)

    def sign(self, digest: str) -> str:
        return hmac.new(self._mac_key, digest.encode(), hashlib.sha256).hexdigest()

    def verify(self, digest: str, signature: str) -> bool:
        return hmac.compare_digest(self.sign(digest), signature)

    def __repr__(self):
        return "EnclaveSim(<key withheld>)"


@dataclass(frozen=True)
class RedoEntry:
    lsn: int
    txn_id: int
    key: str
    new_value: int
    mod_index: int

    def line(self) -> str:
        return f"R|{self.lsn}|{self.txn_id}|{self.key}|{self.new_value}|{self.mod_index}"


@dataclass(frozen=True)
class AnchorEntry:
    lsn: int
    key: str
    full_value: int
    full_version: int
    mod_index: int

    def line(self) -> str:
        return f"A|{self.lsn}|{self.key}|{self.full_value}|{self.full_version}|{self.mod_index}"


@dataclass(frozen=True)
class TxnSeal:
    lsn: int
    txn_id: int
    first_lsn: int    # -1/-1 marks a seal over an empty range
    last_lsn: int
    digest: str
    signature: str

    def line(self) -> str:
        return (
            f"S|{self.lsn}|{self.txn_id}|{self.first_lsn}|{self.last_lsn}"
            f"|{self.digest}|{self.signature}"
        )


def _check_key(key: str) -> str:
    if "|" in key or "\n" in key or not key:
        raise ValueError(f"illegal key for log: {key!r}")
    return key


class RedoLog:
    def __init__(self, enclave: EnclaveSim, anchor_every: int = 4):
        if anchor_every < 1:
            raise ValueError("anchor_every must be >= 1")
        self.enclave = enclave
        self.anchor_every = anchor_every
        self.records: list = []
        self._mod_counts: dict[str, int] = {}
        self._latest: dict[str, tuple[int, int]] = {}   # key -> (value, version)
        self._txn_lsns: dict[int, list[int]] = {}
        self._sealed: set[int] = set()
        self._key_redos: dict[str, list[int]] = {}
        self._key_anchors: dict[str, list[int]] = {}
        self.last_replay_count = 0

    # -- append side --------------------------------------------------------

    def register_txn(self, txn_id: int) -> None:
        self._txn_lsns.setdefault(txn_id, [])

    def append_redo(self, txn_id: int, key: str, new_value: int) -> int:
        _check_key(key)
        self.register_txn(txn_id)
        mod_index = self._mod_counts.get(key, 0) + 1
        self._mod_counts[key] = mod_index

        lsn = len(self.records)
        entry = RedoEntry(lsn, txn_id, key, new_value, mod_index)
        self.records.append(entry)
        self._txn_lsns[txn_id].append(lsn)
        self._key_redos.setdefault(key, []).append(lsn)
        self._latest[key] = (new_value, mod_index)

        if mod_index % self.anchor_every == 0:
            alsn = len(self.records)
            anchor = AnchorEntry(alsn, key, new_value, mod_index, mod_index)
            self.records.append(anchor)
            self._txn_lsns[txn_id].append(alsn)
            self._key_anchors.setdefault(key, []).append(alsn)
        return lsn

    def seal_txn(self, txn_id: int) -> TxnSeal:
        if txn_id not in self._txn_lsns:
            raise UnknownTxn(f"txn {txn_id} has no log entries and was never registered")
        if txn_id in self._sealed:
            raise LogError(f"txn {txn_id} already sealed")
        lsns = self._txn_lsns[txn_id]
        if lsns:
            first, last = lsns[0], lsns[-1]
            if lsns != list(range(first, last + 1)):
                raise LogError("txn entries not contiguous; appends must be serialized")
        else:
            first = last = -1
        digest = self._range_digest(txn_id, first, last)
        seal = TxnSeal(len(self.records), txn_id, first, last, digest,
                       self.enclave.sign(digest))
        self.records.append(seal)
        self._sealed.add(txn_id)
        return seal

    def _range_digest(self, txn_id: int, first: int, last: int) -> str:
        h = hashlib.sha256(f"seal:{txn_id}".encode())
        if first >= 0:
            for lsn in range(first, last + 1):
                h.update(b"\n")
                h.update(self.records[lsn].line().encode())
        return h.hexdigest()

    # -- verification ---------------------------------------------------------

    def verify_log(self, first: int = 0, last: int | None = None) -> bool:
        """True iff lsns are gap-free and every seal in range checks out."""
        if last is None:
            last = len(self.records) - 1
        for i, rec in enumerate(self.records):
            if rec.lsn != i:
                return False
        for rec in self.records:
            if isinstance(rec, TxnSeal) and first <= rec.lsn <= last:
                if not self._seal_ok(rec):
                    return False
        return True

    def _seal_ok(self, seal: TxnSeal) -> bool:
        if seal.first_lsn >= 0:
            if seal.last_lsn < seal.first_lsn or seal.last_lsn >= len(self.records):
                return False
            if seal.last_lsn >= seal.lsn:    # seal must follow its entries
                return False
        recomputed = self._range_digest(seal.txn_id, seal.first_lsn, seal.last_lsn)
        if recomputed != seal.digest:
            return False
        return self.enclave.verify(seal.digest, seal.signature)

    # -- trusted state and repair ---------------------------------------------

    def expected_state(self, key: str) -> tuple[int, int]:
        return self._latest.get(key, (INITIAL_VALUE, 0))

    def detect_tamper(self, key: str, stored: Record) -> bool:
        if not stored.checksum_ok():
            return True
        return (stored.value, stored.version) != self.expected_state(key)

    def replay_plan(self, key: str):
        """(base_record, redo_lsns) recovery would use; replay is bounded by n."""
        anchors = self._key_anchors.get(key, [])
        if anchors:
            anchor: AnchorEntry = self.records[anchors[-1]]
            base = Record(key, anchor.full_value, anchor.full_version,
                          compute_checksum(key, anchor.full_value, anchor.full_version))
            start = anchor.lsn
        else:
            base = Record.initial(key)
            start = -1
        redo_lsns = [l for l in self._key_redos.get(key, []) if l > start]
        return base, redo_lsns

    def recover(self, key: str) -> Record:
        base, redo_lsns = self.replay_plan(key)
        anchors = self._key_anchors.get(key, [])
        touched = ([anchors[-1]] if anchors else []) + redo_lsns
        if touched:
            lo, hi = min(touched), max(touched)
            self._check_replay_range(lo, hi, touched)
        value, version = base.value, base.version
        for lsn in redo_lsns:
            entry: RedoEntry = self.records[lsn]
            value, version = entry.new_value, entry.mod_index
        self.last_replay_count = len(redo_lsns)
        return Record(key, value, version, compute_checksum(key, value, version))

    def _check_replay_range(self, lo: int, hi: int, touched: list[int]) -> None:
        for i, rec in enumerate(self.records):
            if rec.lsn != i:
                raise RecoveryRefused("log sequence numbers out of order")
        covered: set[int] = set()
        for rec in self.records:
            if not isinstance(rec, TxnSeal):
                continue
            if rec.first_lsn < 0 or rec.last_lsn < lo or rec.first_lsn > hi:
                continue
            if not self._seal_ok(rec):
                raise RecoveryRefused(f"seal at lsn {rec.lsn} failed verification")
            covered.update(range(rec.first_lsn, rec.last_lsn + 1))
        missing = [l for l in touched if l not in covered]
        if missing:
            raise RecoveryRefused(f"entries {missing} not covered by any valid seal")

    # -- file persistence -------------------------------------------------------

    def _header_line(self) -> str:
        prefix = f"{MAGIC}|{FORMAT_VERSION}|{DIGEST_ALGO}|{self.anchor_every}"
        return f"{prefix}|{self.enclave.sign(prefix)}"

    def to_text(self) -> str:
        lines = [self._header_line()] + [rec.line() for rec in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path, enclave: EnclaveSim) -> "RedoLog":
        with open(path, "r") as fh:
            content = fh.read()
        return cls.from_text(content, enclave)

    @classmethod
    def from_text(cls, content: str, enclave: EnclaveSim) -> "RedoLog":
        if not content.endswith("\n"):
            raise LogCorrupt("missing trailing newline")
        lines = content[:-1].split("\n")
        if not lines:
            raise LogCorrupt("empty log file")

        head = lines[0].split("|")
        if len(head) != 5 or head[0] != MAGIC or head[1] != FORMAT_VERSION:
            raise LogCorrupt("bad header")
        if head[2] != DIGEST_ALGO:
            raise LogCorrupt(f"unsupported digest algorithm {head[2]!r}")
        n = _parse_int(head[3])
        if n < 1:
            raise LogCorrupt("bad anchor interval")
        prefix = "|".join(head[:4])
        if not enclave.verify(prefix, head[4]):
            raise LogCorrupt("header MAC mismatch")

        log = cls(enclave, anchor_every=n)
        for raw in lines[1:]:
            rec = _parse_record(raw)
            if rec.line() != raw:
                raise LogCorrupt(f"non-canonical record: {raw!r}")
            if rec.lsn != len(log.records):
                raise LogCorrupt(f"lsn gap at {rec.lsn}")
            log.records.append(rec)
            log._index_record(rec)
        return log

    def _index_record(self, rec) -> None:
        if isinstance(rec, RedoEntry):
            self._txn_lsns.setdefault(rec.txn_id, []).append(rec.lsn)
            self._key_redos.setdefault(rec.key, []).append(rec.lsn)
            self._mod_counts[rec.key] = rec.mod_index
            self._latest[rec.key] = (rec.new_value, rec.mod_index)
        elif isinstance(rec, AnchorEntry):
            self._key_anchors.setdefault(rec.key, []).append(rec.lsn)
            # anchors ride in the committing txn's contiguous range
            prev = self.records[rec.lsn - 1] if rec.lsn > 0 else None
            if isinstance(prev, RedoEntry) and prev.key == rec.key:
                self._txn_lsns.setdefault(prev.txn_id, []).append(rec.lsn)
        elif isinstance(rec, TxnSeal):
            self._sealed.add(rec.txn_id)
            self._txn_lsns.setdefault(rec.txn_id, [])


def _parse_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise LogCorrupt(f"not an integer: {text!r}") from None
    if str(value) != text:
        raise LogCorrupt(f"non-canonical integer: {text!r}")
    return value


def _parse_record(raw: str):
    parts = raw.split("|")
    tag = parts[0] if parts else ""
    try:
        if tag == "R" and len(parts) == 6:
            return RedoEntry(_parse_int(parts[1]), _parse_int(parts[2]),
                             _check_key(parts[3]), _parse_int(parts[4]),
                             _parse_int(parts[5]))
        if tag == "A" and len(parts) == 6:
            return AnchorEntry(_parse_int(parts[1]), _check_key(parts[2]),
                               _parse_int(parts[3]), _parse_int(parts[4]),
                               _parse_int(parts[5]))
        if tag == "S" and len(parts) == 7:
            return TxnSeal(_parse_int(parts[1]), _parse_int(parts[2]),
                           _parse_int(parts[3]), _parse_int(parts[4]),
                           parts[5], parts[6])
    except ValueError as exc:
        raise LogCorrupt(str(exc)) from None
    raise LogCorrupt(f"unparseable record: {raw!r}")
