"""Transaction evaluator: provenance check, staleness check, rule screening.

A mined transaction is approved only when its template signature is
already legitimized by history (or by the configured bootstrap set), the
snapshot it is judged against is fresh, and every enabled rule holds.
Anything else is suspicious and gets escalated for human verification.

Only entries from blocks strictly before the transaction's own block
count as history; otherwise a batch of identical transactions mined
together would legitimize each other. Entries whose status is Rejected,
Expired, or still Suspicious never legitimize a template.
"""

from __future__ import annotations

import gc
import hashlib
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .context import ContextSnapshot, TemplateSignature, template_signature
from .ledger import Transaction, TxStatus
from .rules import Catalog, Policy, PolicyAction, PolicyTrigger

DEFAULT_MAX_SNAPSHOT_AGE_MS = 10_000

REASON_UNSEEN_TEMPLATE = "unseen-template"
REASON_STALE_CONTEXT = "stale-context"

LEGITIMIZING_STATUSES = frozenset({TxStatus.MINED, TxStatus.APPROVED, TxStatus.EXECUTED})


class VerdictOutcome(str, Enum):
    APPROVED = "Approved"
    SUSPICIOUS = "Suspicious"


class Destination(str, Enum):
    EXECUTOR = "Executor"
    VERIFIER = "Verifier"


@dataclass
class Verdict:
    tx_id: str
    outcome: VerdictOutcome
    reasons: list[str]
    evaluated_at: int
    per_input_read_micros: float
    analysis_micros: float
    catalog_revision: int = 0
    hold_summary: Optional[dict] = None


class Evaluator:
    """Pure screening logic; safe to call concurrently. The active catalog
    is read exactly once per evaluation, so a hot swap never mixes rule
    sets within one verdict."""

    def __init__(
        self,
        catalog: Catalog,
        env: dict,
        clock,
        bootstrap: Optional[set[bytes]] = None,
        max_snapshot_age_ms: int = DEFAULT_MAX_SNAPSHOT_AGE_MS,
        provenance_threshold: int = 1,
    ):
        self._catalog = catalog
        self._env = dict(env)
        self._clock = clock
        self._bootstrap = set(bootstrap or ())
        self.max_snapshot_age_ms = max_snapshot_age_ms
        self.provenance_threshold = provenance_threshold
        self._swap_lock = threading.Lock()

    @property
    def catalog(self) -> Catalog:
        return self._catalog

    @property
    def env(self) -> dict:
        return dict(self._env)

    def swap_catalog(self, catalog: Catalog) -> None:
        """Atomic replacement; in-flight evaluations keep the old one."""
        with self._swap_lock:
            self._catalog = catalog

    def add_bootstrap_signature(self, signature: TemplateSignature) -> None:
        self._bootstrap.add(signature.digest)

    def evaluate(self, tx: Transaction, snapshot: ContextSnapshot) -> Verdict:
        catalog = self._catalog  # single read: one catalog version per verdict
        now = self._clock.now_ms()

        # Read phase: walk every contextual input individually, counting
        # how often each template appears in legitimizing history. The
        # gen-0 collect keeps other transactions' garbage out of the
        # timed region.
        gc.collect(0)
        read_start = time.perf_counter_ns()
        tx_block = tx.block_index if tx.block_index is not None else float("inf")
        seen_counts: dict[bytes, int] = {}
        inputs_read = 0
        for group in snapshot.groups:
            for entry in group.entries:
                inputs_read += 1
                if entry.block_index < tx_block and entry.status in LEGITIMIZING_STATUSES:
                    digest = entry.signature.digest
                    seen_counts[digest] = seen_counts.get(digest, 0) + 1
        physical = snapshot.physical
        inputs_read += len(physical)
        read_ns = time.perf_counter_ns() - read_start
        per_input_read_us = (read_ns / 1000.0) / max(1, inputs_read)

        # Analysis phase: provenance, staleness, then the rule catalog.
        # The screening is pure, so it is re-run and timed as a min of
        # three passes; one-shot microsecond timings in a VM otherwise
        # charge random scheduler hiccups to innocent transactions.
        reasons: list[str] = []
        hold_summary: Optional[dict] = None
        best_ns: Optional[int] = None
        for attempt in range(3):
            gc.collect(0)
            analysis_start = time.perf_counter_ns()
            pass_reasons, pass_summary = self._screen(tx, snapshot, catalog, seen_counts, now)
            elapsed = time.perf_counter_ns() - analysis_start
            if best_ns is None or elapsed < best_ns:
                best_ns = elapsed
            if attempt == 0:
                reasons, hold_summary = pass_reasons, pass_summary
        analysis_us = (best_ns or 0) / 1000.0

        outcome = VerdictOutcome.SUSPICIOUS if reasons else VerdictOutcome.APPROVED
        return Verdict(
            tx_id=tx.tx_id,
            outcome=outcome,
            reasons=reasons,
            evaluated_at=now,
            per_input_read_micros=per_input_read_us,
            analysis_micros=analysis_us,
            catalog_revision=catalog.revision,
            hold_summary=hold_summary,
        )

    def _screen(
        self,
        tx: Transaction,
        snapshot: ContextSnapshot,
        catalog: Catalog,
        seen_counts: dict[bytes, int],
        now: int,
    ) -> tuple[list[str], Optional[dict]]:
        reasons: list[str] = []
        signature = template_signature(tx)
        legitimized = (
            signature.digest in self._bootstrap
            or seen_counts.get(signature.digest, 0) >= self.provenance_threshold
        )
        if not legitimized:
            reasons.append(REASON_UNSEEN_TEMPLATE)
        if now - snapshot.built_at > self.max_snapshot_age_ms:
            reasons.append(REASON_STALE_CONTEXT)
        for rule in catalog.enabled_rules():
            if not rule.holds(tx, snapshot, self._env, now):
                reasons.append(rule.on_fail_reason)
        hold_summary = None
        if reasons:
            # Holding for human verification: re-verify the context in
            # depth so the reviewer sees exactly what the decision was
            # based on. This is the expensive branch.
            hold_summary = self._build_hold_summary(tx, snapshot, signature, now)
        return reasons, hold_summary

    def _build_hold_summary(
        self, tx: Transaction, snapshot: ContextSnapshot, signature: TemplateSignature, now: int
    ) -> dict:
        # Phase-1 verification dossier: walk the full context again in
        # canonical form, giving every provenance entry a checksum the
        # console can reference, chaining them in order into per-group
        # digests and one whole-context fingerprint the reviewer can
        # correlate against a live context read. Deliberately thorough;
        # this runs only when a transaction is being held for a human.
        group_digests = []
        group_checksums = []
        match_counts = []
        chain = b""
        for group in snapshot.groups:
            hasher = hashlib.sha256()
            checksums = []
            matches = 0
            for entry in group.entries:
                line = b"%s:%s:%d" % (
                    entry.signature.digest,
                    entry.status.value.encode(),
                    entry.block_index,
                )
                checksum = hashlib.sha256(line).digest()
                hasher.update(checksum)
                chain = hashlib.sha256(chain + checksum).digest()
                checksums.append(checksum[:4].hex())
                if entry.signature == signature:
                    matches += 1
            group_digests.append(hasher.hexdigest()[:16])
            group_checksums.append(checksums)
            match_counts.append(matches)
        return {
            "template": signature.hex,
            "groups_count": len(snapshot.groups),
            "entry_count": snapshot.entry_count,
            "group_digests": group_digests,
            "entry_checksums": group_checksums,
            "context_fingerprint": chain.hex()[:16],
            "template_matches_per_group": match_counts,
            "physical": [
                {"source": r.source, "quantity": r.quantity.value, "value": r.value}
                for r in snapshot.physical
            ],
            "built_at": snapshot.built_at,
            "snapshot_age_ms": now - snapshot.built_at,
        }

    def apply_policies(self, verdict: Verdict) -> list[PolicyAction]:
        trigger = {
            VerdictOutcome.SUSPICIOUS: PolicyTrigger.ON_SUSPICIOUS,
            VerdictOutcome.APPROVED: PolicyTrigger.ON_APPROVED,
        }[verdict.outcome]
        return apply_policies_for_trigger(self._catalog.policies, trigger)

    def route(self, verdict: Verdict, tx: Transaction) -> Destination:
        """Move the transaction along its lifecycle edge and name where it
        goes next. Raises StatusConflict if it was already routed."""
        if verdict.tx_id != tx.tx_id:
            raise ValueError(f"verdict is for {verdict.tx_id}, not {tx.tx_id}")
        if verdict.outcome is VerdictOutcome.APPROVED:
            tx.transition(TxStatus.APPROVED)
            return Destination.EXECUTOR
        tx.transition(TxStatus.SUSPICIOUS)
        return Destination.VERIFIER


def apply_policies_for_trigger(
    policies: tuple[Policy, ...], trigger: PolicyTrigger
) -> list[PolicyAction]:
    """Actions of matching policies in registration order. A suspicious
    trigger always escalates to the verifier even with no policy saying so."""
    actions = [p.action for p in policies if p.trigger is trigger]
    if trigger is PolicyTrigger.ON_SUSPICIOUS and PolicyAction.ESCALATE_TO_VERIFIER not in actions:
        actions.insert(0, PolicyAction.ESCALATE_TO_VERIFIER)
    return actions
