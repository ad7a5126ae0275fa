"""Embedded consortium ledger: transaction pool, proof-of-work mining, reads.

A single-process chain mined by a configured set of member identities.
Block hashes are SHA-256 over the canonical serialization of
(index, prev_hash, nonce, difficulty, miner_id, transactions, timestamp);
a block is valid when its hash has at least `difficulty` leading zero bits.

Transaction lifecycle status is deliberately excluded from the hashed
content: the chain records what was requested, while status is mutable
pipeline state that advances after mining (evaluation, approval,
execution, rejection).
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import canon

GENESIS_PREV_HASH = b"\x00" * 32


class TxKind(str, Enum):
    READ = "Read"
    CONFIG_UPDATE = "ConfigUpdate"
    FIRMWARE_UPDATE = "FirmwareUpdate"
    ACTUATOR_COMMAND = "ActuatorCommand"


class TxStatus(str, Enum):
    SUBMITTED = "Submitted"
    MINED = "Mined"
    APPROVED = "Approved"
    SUSPICIOUS = "Suspicious"
    EXECUTED = "Executed"
    REJECTED = "Rejected"
    EXPIRED = "Expired"


# The only legal lifecycle edges. Everything else is a StatusConflict.
VALID_TRANSITIONS: dict[TxStatus, frozenset[TxStatus]] = {
    TxStatus.SUBMITTED: frozenset({TxStatus.MINED}),
    TxStatus.MINED: frozenset({TxStatus.APPROVED, TxStatus.SUSPICIOUS}),
    TxStatus.SUSPICIOUS: frozenset({TxStatus.APPROVED, TxStatus.REJECTED, TxStatus.EXPIRED}),
    TxStatus.APPROVED: frozenset({TxStatus.EXECUTED}),
    TxStatus.EXECUTED: frozenset(),
    TxStatus.REJECTED: frozenset(),
    TxStatus.EXPIRED: frozenset(),
}


class LedgerError(Exception):
    code = "LEDGER"


class DuplicateTxId(LedgerError):
    code = "DUPLICATE_TX_ID"


class UnknownDeviceKindCombination(LedgerError):
    code = "UNKNOWN_DEVICE_KIND_COMBINATION"


class EmptyPool(LedgerError):
    code = "EMPTY_POOL"


class StatusConflict(LedgerError):
    code = "STATUS_CONFLICT"


@dataclass
class Transaction:
    tx_id: str
    device_id: str
    kind: TxKind
    params: dict[str, str]
    issuer: str
    submitted_at: int
    status: TxStatus = TxStatus.SUBMITTED
    block_index: Optional[int] = None

    def transition(self, new_status: TxStatus) -> None:
        if new_status not in VALID_TRANSITIONS[self.status]:
            raise StatusConflict(
                f"{self.tx_id}: illegal transition {self.status.value} -> {new_status.value}"
            )
        self.status = new_status


def tx_canonical_bytes(tx: Transaction) -> bytes:
    """Hash form of a transaction. Field order: tx_id, device_id, kind,
    params (insertion order), issuer, submitted_at. Status excluded."""
    return b"".join(
        (
            canon.text(tx.tx_id),
            canon.text(tx.device_id),
            canon.text(tx.kind.value),
            canon.str_map(tx.params.items()),
            canon.text(tx.issuer),
            canon.u64(tx.submitted_at),
        )
    )


def _tx_from_reader(reader: canon.Reader) -> Transaction:
    tx_id = reader.text()
    device_id = reader.text()
    kind_raw = reader.text()
    try:
        kind = TxKind(kind_raw)
    except ValueError as exc:
        raise canon.CanonDecodeError(f"unknown transaction kind {kind_raw!r}") from exc
    params = reader.str_map()
    issuer = reader.text()
    submitted_at = reader.u64()
    return Transaction(tx_id, device_id, kind, params, issuer, submitted_at)


@dataclass
class Block:
    index: int
    prev_hash: bytes
    nonce: int
    difficulty: int
    miner_id: str
    transactions: list[Transaction]
    timestamp: int
    hash: bytes = b""

    def content_bytes(self, nonce: Optional[int] = None) -> bytes:
        """Hashed content. Field order: index, prev_hash, nonce, difficulty,
        miner_id, transactions, timestamp."""
        use_nonce = self.nonce if nonce is None else nonce
        txs = canon.u32(len(self.transactions)) + b"".join(
            tx_canonical_bytes(tx) for tx in self.transactions
        )
        return b"".join(
            (
                canon.u32(self.index),
                self.prev_hash,
                canon.u64(use_nonce),
                canon.u16(self.difficulty),
                canon.text(self.miner_id),
                txs,
                canon.u64(self.timestamp),
            )
        )

    def compute_hash(self, nonce: Optional[int] = None) -> bytes:
        return hashlib.sha256(self.content_bytes(nonce)).digest()


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    if value == 0:
        return len(digest) * 8
    return len(digest) * 8 - value.bit_length()


def make_genesis() -> Block:
    # Fixed fields (timestamp 0) so every instance shares one genesis hash.
    block = Block(
        index=0,
        prev_hash=GENESIS_PREV_HASH,
        nonce=0,
        difficulty=0,
        miner_id="genesis",
        transactions=[],
        timestamp=0,
    )
    block.hash = block.compute_hash()
    return block


@dataclass
class ValidationReport:
    valid: bool
    first_bad_index: Optional[int] = None
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        if self.valid:
            return {"valid": True}
        return {"valid": False, "first_bad_index": self.first_bad_index, "reason": self.reason}


def validate_chain(blocks: list[Block]) -> ValidationReport:
    """Check linkage, hash recomputation, and difficulty for every block.

    Reports the first failing block index with one of the reasons:
    "index", "linkage", "hash-mismatch", "difficulty".
    """
    if not blocks:
        return ValidationReport(False, 0, "index")
    for i, block in enumerate(blocks):
        if block.index != i:
            return ValidationReport(False, i, "index")
        if i == 0:
            if block.prev_hash != GENESIS_PREV_HASH:
                return ValidationReport(False, 0, "linkage")
        elif block.prev_hash != blocks[i - 1].hash:
            return ValidationReport(False, i, "linkage")
        if block.compute_hash() != block.hash:
            return ValidationReport(False, i, "hash-mismatch")
        if leading_zero_bits(block.hash) < block.difficulty:
            return ValidationReport(False, i, "difficulty")
    return ValidationReport(True)


def serialize_chain(blocks: list[Block]) -> bytes:
    """Canonical chain serialization: u32 block count, then per block the
    hashed content followed by the stored 32-byte hash. Every byte is
    integrity-protected, so any single-byte change is detectable."""
    out = [canon.u32(len(blocks))]
    for block in blocks:
        out.append(block.content_bytes())
        out.append(block.hash)
    return b"".join(out)


def deserialize_chain(data: bytes) -> list[Block]:
    reader = canon.Reader(data)
    count = reader.u32()
    blocks: list[Block] = []
    for _ in range(count):
        index = reader.u32()
        prev_hash = reader.take(32)
        nonce = reader.u64()
        difficulty = reader.u16()
        miner_id = reader.text()
        tx_count = reader.u32()
        txs = [_tx_from_reader(reader) for _ in range(tx_count)]
        timestamp = reader.u64()
        stored_hash = reader.take(32)
        blocks.append(
            Block(index, prev_hash, nonce, difficulty, miner_id, txs, timestamp, stored_hash)
        )
    reader.expect_eof()
    return blocks


class Ledger:
    """Pending pool plus chain. Writes are serialized through one lock;
    reads see only fully appended blocks."""

    def __init__(self, clock, default_difficulty: int = 12):
        self._clock = clock
        self.default_difficulty = default_difficulty
        self._write_lock = threading.Lock()
        self._pool: list[Transaction] = []
        self._known_ids: set[str] = set()
        self.blocks: list[Block] = [make_genesis()]
        self._feedback: list[tuple[str, int]] = []  # (tx_id, recorded_at) rejection log

    # -- writes ---------------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> str:
        with self._write_lock:
            if tx.status is not TxStatus.SUBMITTED:
                raise StatusConflict(f"{tx.tx_id}: submit requires status Submitted")
            if not tx.device_id:
                raise UnknownDeviceKindCombination("transaction has an empty device_id")
            if tx.tx_id in self._known_ids:
                raise DuplicateTxId(tx.tx_id)
            self._known_ids.add(tx.tx_id)
            self._pool.append(tx)
            return tx.tx_id

    def mine_block(self, miner_id: str, difficulty: Optional[int] = None) -> Block:
        """Mine the whole pending pool into one block. The nonce search is a
        deterministic scan from 0 upward, so equal inputs give equal blocks."""
        with self._write_lock:
            if not self._pool:
                raise EmptyPool("no pending transactions")
            difficulty = self.default_difficulty if difficulty is None else difficulty
            prev = self.blocks[-1]
            block = Block(
                index=prev.index + 1,
                prev_hash=prev.hash,
                nonce=0,
                difficulty=difficulty,
                miner_id=miner_id,
                transactions=list(self._pool),
                timestamp=self._clock.now_ms(),
            )
            nonce = 0
            while True:
                digest = block.compute_hash(nonce)
                if leading_zero_bits(digest) >= difficulty:
                    break
                nonce += 1
            block.nonce = nonce
            block.hash = digest
            for tx in block.transactions:
                tx.transition(TxStatus.MINED)
                tx.block_index = block.index
            self._pool.clear()
            self.blocks.append(block)
            return block

    def record_rejection(self, tx: Transaction) -> None:
        """Log a verifier rejection so it is visible as provenance feedback."""
        if tx.status is not TxStatus.REJECTED:
            raise StatusConflict(f"{tx.tx_id}: rejection feedback requires status Rejected")
        self._feedback.append((tx.tx_id, self._clock.now_ms()))

    # -- reads ----------------------------------------------------------

    @property
    def pool_size(self) -> int:
        return len(self._pool)

    @property
    def rejection_feedback(self) -> list[tuple[str, int]]:
        return list(self._feedback)

    def read_transactions(
        self,
        status: Optional[TxStatus] = None,
        kind: Optional[TxKind] = None,
        device_id: Optional[str] = None,
        since_block: Optional[int] = None,
    ) -> list[tuple[Transaction, int]]:
        """Mined transactions in chain order, with current lifecycle status."""
        rows: list[tuple[Transaction, int]] = []
        for block in self.blocks:
            if since_block is not None and block.index < since_block:
                continue
            for tx in block.transactions:
                if status is not None and tx.status is not status:
                    continue
                if kind is not None and tx.kind is not kind:
                    continue
                if device_id is not None and tx.device_id != device_id:
                    continue
                rows.append((tx, block.index))
        return rows

    def validate(self) -> ValidationReport:
        return validate_chain(self.blocks)
