"""Contextual snapshot assembly: on-chain provenance plus live sensor data.

The snapshot is what the evaluator judges a transaction against. Its
conceptual half is the provenance of recent mined transactions, reduced
to template signatures and chunked into groups; its physical half is the
freshest reading per registered sensor plus a datetime reading.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional, Protocol

from . import canon
from .ledger import Ledger, Transaction, TxKind, TxStatus

DEFAULT_WINDOW = 100
DEFAULT_GROUP_SIZE = 10
DEFAULT_MAX_PHYSICAL_AGE_MS = 5_000


class ContextError(Exception):
    code = "CONTEXT"


class LedgerUnavailable(ContextError):
    code = "LEDGER_UNAVAILABLE"


class PhysicalQuantity(str, Enum):
    TEMPERATURE = "temperature"
    DATETIME = "datetime"
    LOCATION = "location"


@dataclass(frozen=True)
class PhysicalReading:
    source: str
    quantity: PhysicalQuantity
    value: str
    observed_at: int


@dataclass(frozen=True)
class TemplateSignature:
    """Timestamp-independent fingerprint of what kind of operation a
    transaction performs on which device: a digest over device_id, kind,
    and the sorted parameter key schema. Parameter values, issuer, tx_id
    and timestamps deliberately do not participate, so repeated reads
    with different sensed values share one template."""

    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()


def signature_for(device_id: str, kind: TxKind, param_keys: Iterable[str]) -> TemplateSignature:
    material = canon.text(device_id) + canon.text(kind.value)
    keys = sorted(param_keys)
    material += canon.u32(len(keys))
    for key in keys:
        material += canon.text(key)
    return TemplateSignature(hashlib.sha256(material).digest())


def template_signature(tx: Transaction) -> TemplateSignature:
    return signature_for(tx.device_id, tx.kind, tx.params.keys())


@dataclass(frozen=True)
class ProvenanceEntry:
    signature: TemplateSignature
    status: TxStatus
    block_index: int


@dataclass(frozen=True)
class ProvenanceGroup:
    group_index: int
    entries: tuple[ProvenanceEntry, ...]


@dataclass(frozen=True)
class BuildStats:
    total_ms: float
    per_group_ms: tuple[float, ...]


@dataclass(frozen=True)
class ContextSnapshot:
    groups: tuple[ProvenanceGroup, ...]
    physical: tuple[PhysicalReading, ...]
    built_at: int
    window: int
    build_stats: BuildStats = BuildStats(0.0, ())

    @property
    def entry_count(self) -> int:
        return sum(len(g.entries) for g in self.groups)

    def iter_entries(self) -> Iterable[ProvenanceEntry]:
        for group in self.groups:
            yield from group.entries

    def to_dict(self) -> dict:
        return {
            "built_at": self.built_at,
            "window": self.window,
            "groups": [
                {
                    "group_index": g.group_index,
                    "entries": [
                        {
                            "signature": e.signature.hex,
                            "status": e.status.value,
                            "block_index": e.block_index,
                        }
                        for e in g.entries
                    ],
                }
                for g in self.groups
            ],
            "physical": [
                {
                    "source": r.source,
                    "quantity": r.quantity.value,
                    "value": r.value,
                    "observed_at": r.observed_at,
                }
                for r in self.physical
            ],
            "build_ms": self.build_stats.total_ms,
            "per_group_ms": list(self.build_stats.per_group_ms),
        }


class SensorFeed(Protocol):
    def readings(self) -> list[PhysicalReading]:
        """Latest reading per registered sensor."""
        ...


class StaticSensorFeed:
    """Fixed readings, for tests and for gateways without a fleet."""

    def __init__(self, readings: Optional[list[PhysicalReading]] = None):
        self._readings = list(readings or [])

    def readings(self) -> list[PhysicalReading]:
        return list(self._readings)


def collect_provenance(
    ledger: Ledger,
    window: int = DEFAULT_WINDOW,
    group_size: int = DEFAULT_GROUP_SIZE,
) -> list[ProvenanceGroup]:
    """Most recent `window` on-chain transactions in chain order, chunked
    into groups of `group_size` with a possibly short final group.
    Statuses are copied at collection time, so later lifecycle moves do
    not alter an existing snapshot."""
    if window < 1 or group_size < 1:
        raise ValueError("window and group_size must be >= 1")
    try:
        rows = ledger.read_transactions()
    except Exception as exc:  # noqa: BLE001 - any ledger failure maps to one error
        raise LedgerUnavailable(str(exc)) from exc
    rows = rows[-window:]
    groups: list[ProvenanceGroup] = []
    for start in range(0, len(rows), group_size):
        chunk = rows[start : start + group_size]
        entries = tuple(
            ProvenanceEntry(template_signature(tx), tx.status, block_index)
            for tx, block_index in chunk
        )
        groups.append(ProvenanceGroup(len(groups), entries))
    return groups


def collect_physical(
    sensor_feed: SensorFeed,
    clock,
    max_age_ms: int = DEFAULT_MAX_PHYSICAL_AGE_MS,
) -> list[PhysicalReading]:
    """Fresh sensor readings plus a datetime reading. Readings older than
    max_age_ms are dropped rather than passed along as live context."""
    now = clock.now_ms()
    fresh = [r for r in sensor_feed.readings() if now - r.observed_at <= max_age_ms]
    stamp = datetime.fromtimestamp(now / 1000, tz=timezone.utc).isoformat()
    fresh.append(PhysicalReading("clock", PhysicalQuantity.DATETIME, stamp, now))
    return fresh


def build_context(
    ledger: Ledger,
    sensor_feed: SensorFeed,
    clock,
    window: int = DEFAULT_WINDOW,
    group_size: int = DEFAULT_GROUP_SIZE,
    max_physical_age_ms: int = DEFAULT_MAX_PHYSICAL_AGE_MS,
) -> ContextSnapshot:
    """Assemble a full snapshot; read-only over the ledger. Build duration
    is measured per group and in total for the benchmark harness."""
    start_ns = time.perf_counter_ns()
    if window < 1 or group_size < 1:
        raise ValueError("window and group_size must be >= 1")
    try:
        rows = ledger.read_transactions()
    except Exception as exc:  # noqa: BLE001
        raise LedgerUnavailable(str(exc)) from exc
    rows = rows[-window:]
    groups: list[ProvenanceGroup] = []
    per_group_ms: list[float] = []
    for start in range(0, len(rows), group_size):
        group_start_ns = time.perf_counter_ns()
        chunk = rows[start : start + group_size]
        entries = tuple(
            ProvenanceEntry(template_signature(tx), tx.status, block_index)
            for tx, block_index in chunk
        )
        groups.append(ProvenanceGroup(len(groups), entries))
        per_group_ms.append((time.perf_counter_ns() - group_start_ns) / 1e6)
    physical = collect_physical(sensor_feed, clock, max_physical_age_ms)
    total_ms = (time.perf_counter_ns() - start_ns) / 1e6
    return ContextSnapshot(
        groups=tuple(groups),
        physical=tuple(physical),
        built_at=clock.now_ms(),
        window=window,
        build_stats=BuildStats(total_ms, tuple(per_group_ms)),
    )


class ContextFactory:
    """Bound defaults for repeated builds inside the pipeline."""

    def __init__(
        self,
        ledger: Ledger,
        sensor_feed: SensorFeed,
        clock,
        window: int = DEFAULT_WINDOW,
        group_size: int = DEFAULT_GROUP_SIZE,
        max_physical_age_ms: int = DEFAULT_MAX_PHYSICAL_AGE_MS,
    ):
        self._ledger = ledger
        self._sensor_feed = sensor_feed
        self._clock = clock
        self.window = window
        self.group_size = group_size
        self.max_physical_age_ms = max_physical_age_ms

    def build(self) -> ContextSnapshot:
        return build_context(
            self._ledger,
            self._sensor_feed,
            self._clock,
            self.window,
            self.group_size,
            self.max_physical_age_ms,
        )
