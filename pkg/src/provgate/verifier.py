"""Human verification layer: pending holds, approve/revoke, catalog updates.

Suspicious transactions stop here until a trusted principal commits a
decision. Rejections feed back into the ledger's provenance stream so
the same template keeps getting flagged. Catalog (rule/policy) updates
need two distinct principals with update rights: one proposes, another
confirms, and only then does the evaluator swap.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .evaluator import Evaluator, Verdict, VerdictOutcome
from .ledger import Ledger, Transaction, TxStatus
from .rules import ConfigParse, parse_catalog


class VerifierError(Exception):
    code = "VERIFIER"


class DuplicatePending(VerifierError):
    code = "DUPLICATE_PENDING"


class UnknownPending(VerifierError):
    code = "UNKNOWN_PENDING"


class AlreadyDecided(VerifierError):
    code = "ALREADY_DECIDED"


class Unauthorized(VerifierError):
    code = "UNAUTHORIZED"


class Forbidden(VerifierError):
    code = "FORBIDDEN"


class PendingExpired(VerifierError):
    code = "PENDING_EXPIRED"


class NotSuspicious(VerifierError):
    code = "NOT_SUSPICIOUS"


class SelfConfirm(VerifierError):
    code = "SELF_CONFIRM"


class InvalidCatalog(VerifierError):
    code = "INVALID_CATALOG"


class UnknownProposal(VerifierError):
    code = "UNKNOWN_PROPOSAL"


class DecisionKind(str, Enum):
    APPROVE = "Approve"
    REVOKE = "Revoke"


class PendingState(str, Enum):
    AWAITING = "awaiting"
    DECIDED = "decided"
    EXPIRED = "expired"


class ProposalState(str, Enum):
    PROPOSED = "Proposed"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class TrustedPrincipal:
    principal_id: str
    bearer_token: str
    can_update_icontracts: bool = False


@dataclass
class Decision:
    principal_id: str
    decision: DecisionKind
    decided_at: int


@dataclass
class PendingVerification:
    pending_id: str
    tx_id: str
    reasons: list[str]
    snapshot_summary: dict
    enqueued_at: int
    ttl_ms: Optional[int] = None  # None means never expires
    decision: Optional[Decision] = None
    expired: bool = False

    @property
    def state(self) -> PendingState:
        if self.decision is not None:
            return PendingState.DECIDED
        if self.expired:
            return PendingState.EXPIRED
        return PendingState.AWAITING

    def to_dict(self, tx: Optional[Transaction] = None) -> dict:
        out = {
            "pending_id": self.pending_id,
            "tx_id": self.tx_id,
            "reasons": list(self.reasons),
            "context": dict(self.snapshot_summary),
            "enqueued_at": self.enqueued_at,
            "ttl_ms": self.ttl_ms,
            "state": self.state.value,
            "decision": None,
        }
        if self.decision:
            out["decision"] = {
                "principal_id": self.decision.principal_id,
                "decision": self.decision.decision.value,
                "decided_at": self.decision.decided_at,
            }
        if tx is not None:
            out["tx"] = {
                "device_id": tx.device_id,
                "kind": tx.kind.value,
                "params": dict(tx.params),
                "issuer": tx.issuer,
                "status": tx.status.value,
            }
        return out


@dataclass
class CatalogProposal:
    proposal_id: str
    raw_catalog: dict
    proposer: str
    confirmer: Optional[str] = None
    state: ProposalState = ProposalState.PROPOSED


class VerifierService:
    """Pending store with serialized decision writes (first decision wins)
    and the two-principal commit path for catalog updates."""

    def __init__(
        self,
        principals: list[TrustedPrincipal],
        ledger: Ledger,
        evaluator: Evaluator,
        clock,
        ttl_ms: Optional[int] = None,
        on_approved: Optional[Callable[[Transaction], None]] = None,
    ):
        tokens = [p.bearer_token for p in principals]
        if len(set(tokens)) != len(tokens):
            raise ValueError("trusted principal tokens must be unique")
        self._principals = {p.bearer_token: p for p in principals}
        self._ledger = ledger
        self._evaluator = evaluator
        self._clock = clock
        self._ttl_ms = ttl_ms
        self._on_approved = on_approved
        self._pending: dict[str, PendingVerification] = {}
        self._tx_by_pending: dict[str, Transaction] = {}
        self._queued_tx_ids: set[str] = set()
        self._proposals: dict[str, CatalogProposal] = {}
        self._lock = threading.Lock()
        self._next_revision = evaluator.catalog.revision + 1

    # -- authentication ---------------------------------------------------

    def authenticate(self, token: Optional[str]) -> TrustedPrincipal:
        if not token or token not in self._principals:
            raise Unauthorized("unknown or missing bearer token")
        return self._principals[token]

    # -- pending queue ------------------------------------------------------

    def enqueue(self, tx: Transaction, verdict: Verdict, snapshot_summary: dict) -> str:
        if verdict.outcome is not VerdictOutcome.SUSPICIOUS:
            raise NotSuspicious(f"{tx.tx_id}: only suspicious verdicts can be held")
        if tx.status is not TxStatus.SUSPICIOUS:
            raise NotSuspicious(f"{tx.tx_id}: transaction status is {tx.status.value}")
        with self._lock:
            if tx.tx_id in self._queued_tx_ids:
                raise DuplicatePending(tx.tx_id)
            pending_id = uuid.uuid4().hex[:12]
            entry = PendingVerification(
                pending_id=pending_id,
                tx_id=tx.tx_id,
                reasons=list(verdict.reasons),
                snapshot_summary=dict(snapshot_summary),
                enqueued_at=self._clock.now_ms(),
                ttl_ms=self._ttl_ms,
            )
            self._pending[pending_id] = entry
            self._tx_by_pending[pending_id] = tx
            self._queued_tx_ids.add(tx.tx_id)
            return pending_id

    def list_pending(self) -> list[dict]:
        """Newest first; sweeps expiries so the view is current."""
        self.expire_pending(self._clock.now_ms())
        with self._lock:
            entries = sorted(self._pending.values(), key=lambda p: p.enqueued_at, reverse=True)
            return [p.to_dict(self._tx_by_pending[p.pending_id]) for p in entries]

    def get_pending(self, pending_id: str) -> PendingVerification:
        entry = self._pending.get(pending_id)
        if entry is None:
            raise UnknownPending(pending_id)
        return entry

    def decide(self, pending_id: str, token: Optional[str], decision: DecisionKind) -> dict:
        """First decision wins; everything later is AlreadyDecided."""
        principal = self.authenticate(token)
        with self._lock:
            entry = self._pending.get(pending_id)
            if entry is None:
                raise UnknownPending(pending_id)
            if entry.decision is not None:
                raise AlreadyDecided(pending_id)
            if entry.expired:
                raise PendingExpired(pending_id)
            now = self._clock.now_ms()
            if entry.ttl_ms is not None and now - entry.enqueued_at > entry.ttl_ms:
                self._expire_entry(entry)
                raise PendingExpired(pending_id)
            tx = self._tx_by_pending[pending_id]
            entry.decision = Decision(principal.principal_id, decision, now)
            if decision is DecisionKind.APPROVE:
                tx.transition(TxStatus.APPROVED)
            else:
                tx.transition(TxStatus.REJECTED)
                self.record_rejection(tx)
        # Execution happens outside the lock; the decision is already final.
        if decision is DecisionKind.APPROVE and self._on_approved is not None:
            self._on_approved(tx)
        return entry.to_dict(tx)

    def record_rejection(self, tx: Transaction) -> None:
        self._ledger.record_rejection(tx)

    def _expire_entry(self, entry: PendingVerification) -> None:
        entry.expired = True
        tx = self._tx_by_pending[entry.pending_id]
        tx.transition(TxStatus.EXPIRED)

    def expire_pending(self, now_ms: int) -> list[str]:
        expired: list[str] = []
        with self._lock:
            for entry in self._pending.values():
                if entry.decision is not None or entry.expired:
                    continue
                if entry.ttl_ms is not None and now_ms - entry.enqueued_at > entry.ttl_ms:
                    self._expire_entry(entry)
                    expired.append(entry.pending_id)
        return expired

    # -- catalog update 2-phase commit --------------------------------------

    def propose_icontract_update(self, raw_catalog: dict, token: Optional[str]) -> CatalogProposal:
        principal = self.authenticate(token)
        if not principal.can_update_icontracts:
            raise Forbidden(f"{principal.principal_id} may not update contracts")
        try:
            parse_catalog(raw_catalog, set(self._evaluator.env.keys()))
        except ConfigParse as exc:
            raise InvalidCatalog(str(exc)) from exc
        proposal = CatalogProposal(
            proposal_id=uuid.uuid4().hex[:12],
            raw_catalog=raw_catalog,
            proposer=principal.principal_id,
        )
        with self._lock:
            self._proposals[proposal.proposal_id] = proposal
        return proposal

    def confirm_icontract_update(self, proposal_id: str, token: Optional[str]) -> CatalogProposal:
        principal = self.authenticate(token)
        if not principal.can_update_icontracts:
            raise Forbidden(f"{principal.principal_id} may not update contracts")
        with self._lock:
            proposal = self._proposals.get(proposal_id)
            if proposal is None:
                raise UnknownProposal(proposal_id)
            if proposal.state is not ProposalState.PROPOSED:
                raise VerifierError(f"proposal already {proposal.state.value}")
            if principal.principal_id == proposal.proposer:
                raise SelfConfirm("confirmer must differ from proposer")
            try:
                catalog = parse_catalog(
                    proposal.raw_catalog,
                    set(self._evaluator.env.keys()),
                    revision=self._next_revision,
                )
            except ConfigParse as exc:
                proposal.state = ProposalState.ABORTED
                raise InvalidCatalog(str(exc)) from exc
            self._next_revision += 1
            proposal.confirmer = principal.principal_id
            proposal.state = ProposalState.COMMITTED
            self._evaluator.swap_catalog(catalog)
        return proposal

    def get_proposal(self, proposal_id: str) -> CatalogProposal:
        proposal = self._proposals.get(proposal_id)
        if proposal is None:
            raise UnknownProposal(proposal_id)
        return proposal
