"""HTTP gateway wiring the whole pipeline: submit, mine, screen, execute.

One pipeline instance owns the ledger, context factory, evaluator,
verifier, and device executor. A tick drains the pending pool into one
block, rebuilds the context snapshot, evaluates each newly mined
transaction, and routes it: approved work executes on the fleet over
CoAP, suspicious work is held for a trusted human decision.

Every stage is observable over REST so the console, the CLI, the bench
harness, and the tests all drive the same surface.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .clock import Clock, SystemClock
from .context import ContextFactory, LedgerUnavailable, signature_for
from .devices import (
    DeviceError,
    DeviceExecutor,
    DeviceFleet,
    EmulatedDevice,
    FleetSensorFeed,
    TempUnit,
)
from .evaluator import Destination, Evaluator, Verdict
from .ledger import (
    Ledger,
    LedgerError,
    Transaction,
    TxKind,
    TxStatus,
)
from .rules import ConfigParse, load_rule_catalog
from .verifier import (
    DecisionKind,
    TrustedPrincipal,
    VerifierError,
    VerifierService,
)

logger = logging.getLogger("provgate")

ENV_HTTP_PORT = "PROVGATE_HTTP_PORT"
ENV_COAP_PORT = "PROVGATE_COAP_PORT"
ENV_TOKEN_PREFIX = "PROVGATE_TOKEN_"


class GatewayConfigError(Exception):
    code = "CONFIG"


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    unit: str = "celsius"
    seed: Optional[int] = None


@dataclass(frozen=True)
class BootstrapTemplate:
    device_id: str
    kind: str
    param_keys: tuple[str, ...] = ()


@dataclass
class PipelineConfig:
    difficulty: int = 12
    window: int = 100
    group_size: int = 10
    max_snapshot_age_ms: int = 10_000
    max_physical_age_ms: int = 5_000
    provenance_threshold: int = 1
    pending_ttl_ms: Optional[int] = None
    mining_mode: str = "auto"  # "auto" ticks on every submission, "manual" waits for /mine
    seed: int = 0
    http_port: int = 8080
    coap_port: int = 0
    coap_transport: str = "inprocess"  # or "udp"
    miners: list[str] = dc_field(default_factory=lambda: ["miner-1", "miner-2", "miner-3"])
    trusted_principals: list[TrustedPrincipal] = dc_field(default_factory=list)
    devices: list[DeviceSpec] = dc_field(default_factory=list)
    bootstrap_templates: list[BootstrapTemplate] = dc_field(default_factory=list)
    rule_catalog_path: Optional[str] = None
    rule_env: dict = dc_field(
        default_factory=lambda: {"proto_allowlist": ["coap", "http"], "firmware_admins": []}
    )

    _KNOWN_KEYS = {
        "difficulty", "window", "group_size", "max_snapshot_age_ms", "max_physical_age_ms",
        "provenance_threshold", "pending_ttl_ms", "mining_mode", "seed", "http_port",
        "coap_port", "coap_transport", "miners", "trusted_principals", "devices",
        "bootstrap_templates", "rule_catalog_path", "rule_env",
    }

    @classmethod
    def from_dict(cls, raw: dict, environ: Optional[dict] = None) -> "PipelineConfig":
        environ = os.environ if environ is None else environ
        if not isinstance(raw, dict):
            raise GatewayConfigError("config must be a JSON object")
        unknown = set(raw) - cls._KNOWN_KEYS
        if unknown:
            raise GatewayConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls()
        for key in ("difficulty", "window", "group_size", "max_snapshot_age_ms",
                    "max_physical_age_ms", "provenance_threshold", "seed",
                    "http_port", "coap_port"):
            if key in raw:
                value = raw[key]
                if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                    raise GatewayConfigError(f"{key} must be a non-negative integer")
                setattr(cfg, key, value)
        if cfg.window < 1 or cfg.group_size < 1:
            raise GatewayConfigError("window and group_size must be >= 1")
        if "pending_ttl_ms" in raw:
            ttl = raw["pending_ttl_ms"]
            if ttl is not None and (not isinstance(ttl, int) or ttl < 0):
                raise GatewayConfigError("pending_ttl_ms must be a non-negative integer or null")
            cfg.pending_ttl_ms = ttl
        if "mining_mode" in raw:
            if raw["mining_mode"] not in ("auto", "manual"):
                raise GatewayConfigError("mining_mode must be 'auto' or 'manual'")
            cfg.mining_mode = raw["mining_mode"]
        if "coap_transport" in raw:
            if raw["coap_transport"] not in ("inprocess", "udp"):
                raise GatewayConfigError("coap_transport must be 'inprocess' or 'udp'")
            cfg.coap_transport = raw["coap_transport"]
        if "miners" in raw:
            miners = raw["miners"]
            if not isinstance(miners, list) or not miners or not all(
                isinstance(m, str) and m for m in miners
            ):
                raise GatewayConfigError("miners must be a non-empty list of names")
            cfg.miners = list(miners)
        if "rule_catalog_path" in raw:
            path = raw["rule_catalog_path"]
            if path is not None and not isinstance(path, str):
                raise GatewayConfigError("rule_catalog_path must be a string or null")
            cfg.rule_catalog_path = path
        if "rule_env" in raw:
            env = raw["rule_env"]
            if not isinstance(env, dict):
                raise GatewayConfigError("rule_env must be an object")
            cfg.rule_env = {**cfg.rule_env, **env}
        cfg.trusted_principals = cls._parse_principals(raw.get("trusted_principals", []), environ)
        cfg.devices = cls._parse_devices(raw.get("devices", []))
        cfg.bootstrap_templates = cls._parse_templates(raw.get("bootstrap_templates", []))
        if ENV_HTTP_PORT in environ:
            cfg.http_port = int(environ[ENV_HTTP_PORT])
        if ENV_COAP_PORT in environ:
            cfg.coap_port = int(environ[ENV_COAP_PORT])
        return cfg

    @staticmethod
    def _parse_principals(raw: Any, environ) -> list[TrustedPrincipal]:
        if not isinstance(raw, list):
            raise GatewayConfigError("trusted_principals must be a list")
        out = []
        for item in raw:
            if not isinstance(item, dict):
                raise GatewayConfigError("principal entries must be objects")
            unknown = set(item) - {"principal_id", "token", "can_update_icontracts"}
            if unknown:
                raise GatewayConfigError(f"unknown principal keys {sorted(unknown)}")
            try:
                principal_id = item["principal_id"]
            except KeyError:
                raise GatewayConfigError("principal needs a principal_id") from None
            env_key = ENV_TOKEN_PREFIX + "".join(
                ch if ch.isalnum() else "_" for ch in principal_id.upper()
            )
            token = environ.get(env_key, item.get("token"))
            if not token:
                raise GatewayConfigError(
                    f"principal {principal_id!r} has no token (config or {env_key})"
                )
            out.append(
                TrustedPrincipal(principal_id, token, bool(item.get("can_update_icontracts")))
            )
        return out

    @staticmethod
    def _parse_devices(raw: Any) -> list[DeviceSpec]:
        if not isinstance(raw, list):
            raise GatewayConfigError("devices must be a list")
        out = []
        for item in raw:
            if not isinstance(item, dict):
                raise GatewayConfigError("device entries must be objects")
            unknown = set(item) - {"device_id", "unit", "seed"}
            if unknown:
                raise GatewayConfigError(f"unknown device keys {sorted(unknown)}")
            if "device_id" not in item or not item["device_id"]:
                raise GatewayConfigError("device needs a device_id")
            unit = item.get("unit", "celsius")
            if unit not in (u.value for u in TempUnit):
                raise GatewayConfigError(f"unknown unit {unit!r}")
            out.append(DeviceSpec(item["device_id"], unit, item.get("seed")))
        return out

    @staticmethod
    def _parse_templates(raw: Any) -> list[BootstrapTemplate]:
        if not isinstance(raw, list):
            raise GatewayConfigError("bootstrap_templates must be a list")
        out = []
        for item in raw:
            if not isinstance(item, dict):
                raise GatewayConfigError("template entries must be objects")
            unknown = set(item) - {"device_id", "kind", "param_keys"}
            if unknown:
                raise GatewayConfigError(f"unknown template keys {sorted(unknown)}")
            try:
                TxKind(item["kind"])
            except (KeyError, ValueError):
                raise GatewayConfigError("template needs a valid kind") from None
            if "device_id" not in item:
                raise GatewayConfigError("template needs a device_id")
            out.append(
                BootstrapTemplate(
                    item["device_id"], item["kind"], tuple(item.get("param_keys", ()))
                )
            )
        return out

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise GatewayConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise GatewayConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


@dataclass
class PipelineReport:
    mined: int = 0
    approved: int = 0
    suspicious: int = 0
    executed: int = 0
    block_index: Optional[int] = None
    block_hash: Optional[str] = None
    duration_ms: float = 0.0
    errors: list[dict] = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mined": self.mined,
            "approved": self.approved,
            "suspicious": self.suspicious,
            "executed": self.executed,
            "block_index": self.block_index,
            "block_hash": self.block_hash,
            "duration_ms": self.duration_ms,
            "errors": self.errors,
        }


class PipelineMetrics:
    """Timing and stage records for every transaction that passed through."""

    def __init__(self):
        self._lock = threading.Lock()
        self.factory_builds: list[dict] = []
        self.evaluations: list[dict] = []
        self.detections: list[dict] = []
        self.stages: dict[str, dict[str, int]] = {}
        self._eval_index = 0

    def stamp(self, tx_id: str, stage: str, at_ms: int) -> None:
        with self._lock:
            self.stages.setdefault(tx_id, {})[stage] = at_ms

    def record_factory_build(self, tick: int, groups: int, total_ms: float,
                             per_group_ms: tuple[float, ...]) -> None:
        with self._lock:
            self.factory_builds.append(
                {"tick": tick, "groups": groups, "total_ms": total_ms,
                 "per_group_ms": list(per_group_ms)}
            )

    def record_evaluation(self, verdict: Verdict) -> int:
        with self._lock:
            index = self._eval_index
            self._eval_index += 1
            self.evaluations.append(
                {
                    "index": index,
                    "tx_id": verdict.tx_id,
                    "outcome": verdict.outcome.value,
                    "reasons": list(verdict.reasons),
                    "read_us": verdict.per_input_read_micros,
                    "analysis_us": verdict.analysis_micros,
                    "catalog_revision": verdict.catalog_revision,
                    "evaluated_at": verdict.evaluated_at,
                }
            )
            return index

    def add_analysis_us(self, index: int, extra_us: float) -> None:
        with self._lock:
            self.evaluations[index]["analysis_us"] += extra_us

    def record_detection(self, tx_id: str, index: int, detect_to_hold_ms: float) -> None:
        with self._lock:
            self.detections.append(
                {"tx_id": tx_id, "index": index, "detect_to_hold_ms": detect_to_hold_ms}
            )

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "factory_builds": [dict(b) for b in self.factory_builds],
                "evaluations": [dict(e) for e in self.evaluations],
                "detections": [dict(d) for d in self.detections],
                "stages": {k: dict(v) for k, v in self.stages.items()},
            }


class Pipeline:
    def __init__(self, config: PipelineConfig, clock: Optional[Clock] = None):
        self.config = config
        self.clock: Clock = clock or SystemClock()
        self.ledger = Ledger(self.clock, config.difficulty)
        self.fleet = DeviceFleet()
        for i, spec in enumerate(config.devices):
            seed = spec.seed if spec.seed is not None else config.seed * 1000 + i
            self.fleet.register_device(
                EmulatedDevice(spec.device_id, TempUnit(spec.unit), seed)
            )
        self.feed = FleetSensorFeed(self.fleet, self.clock)
        self.factory = ContextFactory(
            self.ledger, self.feed, self.clock,
            config.window, config.group_size, config.max_physical_age_ms,
        )
        env = dict(config.rule_env)
        env["registered_devices"] = self.fleet.device_ids()
        catalog = load_rule_catalog(config.rule_catalog_path, set(env.keys()))
        bootstrap = {
            signature_for(t.device_id, TxKind(t.kind), t.param_keys).digest
            for t in config.bootstrap_templates
        }
        self.evaluator = Evaluator(
            catalog, env, self.clock,
            bootstrap=bootstrap,
            max_snapshot_age_ms=config.max_snapshot_age_ms,
            provenance_threshold=max(1, config.provenance_threshold),
        )
        self.executor = DeviceExecutor(self.fleet, self.clock)
        self._coap_endpoint = None
        if config.coap_transport == "udp":
            self._coap_endpoint = self.executor.serve_udp(port=config.coap_port)
        else:
            self.executor.serve_in_process()
        self.verifier = VerifierService(
            config.trusted_principals,
            self.ledger,
            self.evaluator,
            self.clock,
            ttl_ms=config.pending_ttl_ms,
            on_approved=self._execute_approved,
        )
        self.metrics = PipelineMetrics()
        self._txs: dict[str, Transaction] = {}
        self._tick_lock = threading.Lock()
        self._miner_cycle = itertools.cycle(config.miners)
        self._tick_count = 0
        self._warm_up()

    def _warm_up(self) -> None:
        # One throwaway evaluation so first-call costs (lazy allocations,
        # hash module setup) never land in a measured verdict.
        snapshot = self.factory.build()
        dummy = Transaction("warmup", "warmup-device", TxKind.READ, {}, "warmup", 0)
        dummy.status = TxStatus.MINED
        dummy.block_index = 0
        self.evaluator.evaluate(dummy, snapshot)

    def close(self) -> None:
        if self._coap_endpoint is not None:
            self._coap_endpoint.stop()

    def _log(self, event: str, **fields) -> None:
        logger.info(json.dumps({"event": event, "at": self.clock.now_ms(), **fields}))

    # -- intake -----------------------------------------------------------

    def submit(
        self,
        device_id: str,
        kind: str,
        issuer: str,
        params: Optional[dict[str, str]] = None,
        tx_id: Optional[str] = None,
    ) -> Transaction:
        try:
            tx_kind = TxKind(kind)
        except ValueError:
            raise GatewayConfigError(
                f"unknown kind {kind!r}, expected one of {[k.value for k in TxKind]}"
            ) from None
        tx = Transaction(
            tx_id=tx_id or uuid.uuid4().hex,
            device_id=device_id,
            kind=tx_kind,
            params=dict(params or {}),
            issuer=issuer,
            submitted_at=self.clock.now_ms(),
        )
        self.ledger.submit_transaction(tx)
        self._txs[tx.tx_id] = tx
        self.metrics.stamp(tx.tx_id, "submitted", tx.submitted_at)
        self._log("submitted", tx_id=tx.tx_id, device_id=device_id, kind=kind)
        if self.config.mining_mode == "auto":
            self.run_pipeline_tick()
        return tx

    def transaction(self, tx_id: str) -> Optional[Transaction]:
        return self._txs.get(tx_id)

    # -- the tick ---------------------------------------------------------

    def run_pipeline_tick(self) -> PipelineReport:
        """Mine everything queued into one block, rebuild context, evaluate
        and route each mined transaction. Exclusive: one tick at a time."""
        with self._tick_lock:
            report = PipelineReport()
            if self.ledger.pool_size == 0:
                return report
            start_ns = time.perf_counter_ns()
            miner = next(self._miner_cycle)
            block = self.ledger.mine_block(miner, self.config.difficulty)
            mined_at = self.clock.now_ms()
            for tx in block.transactions:
                self.metrics.stamp(tx.tx_id, "mined", mined_at)
            report.mined = len(block.transactions)
            report.block_index = block.index
            report.block_hash = block.hash.hex()
            self._log("mined", block_index=block.index, miner=miner, txs=report.mined)

            snapshot = self.factory.build()
            self._tick_count += 1
            self.metrics.record_factory_build(
                self._tick_count, len(snapshot.groups),
                snapshot.build_stats.total_ms, snapshot.build_stats.per_group_ms,
            )

            for tx in block.transactions:
                try:
                    self._process_mined(tx, snapshot, report)
                except Exception as exc:  # noqa: BLE001 - contain per transaction
                    code = getattr(exc, "code", exc.__class__.__name__)
                    report.errors.append({"tx_id": tx.tx_id, "code": code, "message": str(exc)})
                    self._log("tick_error", tx_id=tx.tx_id, code=code)
            report.duration_ms = (time.perf_counter_ns() - start_ns) / 1e6
            return report

    def _process_mined(self, tx: Transaction, snapshot, report: PipelineReport) -> None:
        detect_start_ns = time.perf_counter_ns()
        verdict = self.evaluator.evaluate(tx, snapshot)
        self.metrics.stamp(tx.tx_id, "evaluated", verdict.evaluated_at)
        index = self.metrics.record_evaluation(verdict)
        actions = self.evaluator.apply_policies(verdict)
        destination = self.evaluator.route(verdict, tx)
        self._log(
            "verdict",
            tx_id=tx.tx_id,
            outcome=verdict.outcome.value,
            reasons=verdict.reasons,
            actions=[a.value for a in actions],
        )
        if destination is Destination.EXECUTOR:
            report.approved += 1
            self.metrics.stamp(tx.tx_id, "approved", self.clock.now_ms())
            result = self.executor.execute(tx)
            report.executed += 1
            self.metrics.stamp(tx.tx_id, "executed", result.executed_at)
            self._log("executed", tx_id=tx.tx_id, outcome=result.outcome)
        else:
            report.suspicious += 1
            self.metrics.stamp(tx.tx_id, "suspicious", self.clock.now_ms())
            enqueue_start_ns = time.perf_counter_ns()
            pending_id = self.verifier.enqueue(tx, verdict, verdict.hold_summary or {})
            enqueue_ns = time.perf_counter_ns() - enqueue_start_ns
            hold_ms = (time.perf_counter_ns() - detect_start_ns) / 1e6
            # Activating the verification hold is part of analyzing this
            # transaction; charge it to the analysis metric.
            self.metrics.add_analysis_us(index, enqueue_ns / 1000.0)
            self.metrics.stamp(tx.tx_id, "enqueued", self.clock.now_ms())
            self.metrics.record_detection(tx.tx_id, index, hold_ms)
            self._log("held", tx_id=tx.tx_id, pending_id=pending_id, reasons=verdict.reasons)

    def _execute_approved(self, tx: Transaction) -> None:
        self.metrics.stamp(tx.tx_id, "approved", self.clock.now_ms())
        result = self.executor.execute(tx)
        self.metrics.stamp(tx.tx_id, "executed", result.executed_at)
        self._log("executed", tx_id=tx.tx_id, outcome=result.outcome, via="verifier")

    # -- views ------------------------------------------------------------

    def status_counts(self) -> dict:
        counts = {status.value: 0 for status in TxStatus}
        for tx in self._txs.values():
            counts[tx.status.value] += 1
        counts["pool"] = self.ledger.pool_size
        counts["chain_blocks"] = len(self.ledger.blocks)
        return counts

    def metrics_snapshot(self) -> dict:
        snap = self.metrics.snapshot()
        snap["counts"] = self.status_counts()
        snap["executor"] = {
            "executed_count": self.executor.executed_count,
            "rejected_bypass_count": self.executor.rejected_bypass_count,
        }
        return snap


# -- HTTP layer -------------------------------------------------------------


class TransactionIn(BaseModel):
    device_id: str
    kind: str
    issuer: str
    params: dict[str, str] = {}
    tx_id: Optional[str] = None


class DecisionIn(BaseModel):
    decision: str


class ProposalIn(BaseModel):
    catalog: dict


_STATUS_BY_CODE = {
    "DUPLICATE_TX_ID": 409,
    "UNKNOWN_DEVICE_KIND_COMBINATION": 400,
    "EMPTY_POOL": 409,
    "STATUS_CONFLICT": 409,
    "CONFIG": 400,
    "CONFIG_PARSE": 400,
    "LEDGER_UNAVAILABLE": 503,
    "DUPLICATE_PENDING": 409,
    "UNKNOWN_PENDING": 404,
    "ALREADY_DECIDED": 409,
    "UNAUTHORIZED": 401,
    "FORBIDDEN": 403,
    "PENDING_EXPIRED": 409,
    "NOT_SUSPICIOUS": 409,
    "SELF_CONFIRM": 409,
    "INVALID_CATALOG": 400,
    "UNKNOWN_PROPOSAL": 404,
    "DUPLICATE_DEVICE": 409,
    "UNKNOWN_DEVICE": 404,
    "NOT_APPROVED": 409,
    "UNSUPPORTED_KIND": 400,
    "BAD_CONFIG": 400,
}


def _error_response(exc: Exception) -> JSONResponse:
    code = getattr(exc, "code", "INTERNAL")
    status = _STATUS_BY_CODE.get(code, 500)
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": str(exc)}}
    )


def _bearer_token(request: Request) -> Optional[str]:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[7:].strip()
    return None


def _tx_row(tx: Transaction, block_index: Optional[int]) -> dict:
    return {
        "tx_id": tx.tx_id,
        "device_id": tx.device_id,
        "kind": tx.kind.value,
        "params": dict(tx.params),
        "issuer": tx.issuer,
        "submitted_at": tx.submitted_at,
        "status": tx.status.value,
        "block_index": block_index,
    }


def build_app(pipeline: Pipeline, console_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="provgate", version="0.1.0")

    # The console may be served from a different origin than the gateway.
    # Authentication is bearer tokens, never cookies, so open CORS does
    # not create ambient authority.
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    for base in (LedgerError, VerifierError, DeviceError, ConfigParse,
                 GatewayConfigError, LedgerUnavailable):
        app.add_exception_handler(base, lambda request, exc: _error_response(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": {"code": "VALIDATION", "message": str(exc.errors())}},
        )

    @app.post("/transactions", status_code=202)
    def post_transaction(body: TransactionIn):
        tx = pipeline.submit(
            device_id=body.device_id,
            kind=body.kind,
            issuer=body.issuer,
            params=body.params,
            tx_id=body.tx_id,
        )
        return {"tx_id": tx.tx_id, "status": tx.status.value}

    @app.get("/transactions")
    def get_transactions(
        status: Optional[str] = None,
        kind: Optional[str] = None,
        device_id: Optional[str] = None,
        since_block: Optional[int] = None,
    ):
        try:
            status_f = TxStatus(status) if status else None
            kind_f = TxKind(kind) if kind else None
        except ValueError as exc:
            raise GatewayConfigError(str(exc)) from None
        rows = pipeline.ledger.read_transactions(status_f, kind_f, device_id, since_block)
        return {"transactions": [_tx_row(tx, bi) for tx, bi in rows]}

    @app.post("/mine")
    def post_mine():
        report = pipeline.run_pipeline_tick()
        return {
            "block_index": report.block_index,
            "hash": report.block_hash,
            "report": report.to_dict(),
        }

    @app.get("/chain")
    def get_chain():
        return {
            "blocks": [
                {
                    "index": b.index,
                    "prev_hash": b.prev_hash.hex(),
                    "nonce": b.nonce,
                    "difficulty": b.difficulty,
                    "miner_id": b.miner_id,
                    "timestamp": b.timestamp,
                    "hash": b.hash.hex(),
                    "transactions": [_tx_row(tx, b.index) for tx in b.transactions],
                }
                for b in pipeline.ledger.blocks
            ]
        }

    @app.get("/chain/validate")
    def get_chain_validate():
        return pipeline.ledger.validate().to_dict()

    @app.get("/context")
    def get_context():
        return pipeline.factory.build().to_dict()

    @app.get("/devices")
    def get_devices():
        return {"devices": [d.to_dict() for d in pipeline.fleet.list_devices()]}

    @app.get("/pending")
    def get_pending(request: Request):
        pipeline.verifier.authenticate(_bearer_token(request))
        return {"pending": pipeline.verifier.list_pending()}

    @app.post("/pending/{pending_id}/decision")
    def post_decision(pending_id: str, body: DecisionIn, request: Request):
        try:
            decision = DecisionKind(body.decision.capitalize())
        except ValueError:
            raise GatewayConfigError(
                f"decision must be one of {[d.value for d in DecisionKind]}"
            ) from None
        result = pipeline.verifier.decide(pending_id, _bearer_token(request), decision)
        tx = pipeline.transaction(result["tx_id"])
        result["tx_status"] = tx.status.value if tx else None
        return result

    @app.post("/icontracts/proposals", status_code=201)
    def post_proposal(body: ProposalIn, request: Request):
        proposal = pipeline.verifier.propose_icontract_update(
            body.catalog, _bearer_token(request)
        )
        return {"proposal_id": proposal.proposal_id, "state": proposal.state.value}

    @app.post("/icontracts/proposals/{proposal_id}/confirm")
    def post_confirm(proposal_id: str, request: Request):
        proposal = pipeline.verifier.confirm_icontract_update(
            proposal_id, _bearer_token(request)
        )
        return {
            "proposal_id": proposal.proposal_id,
            "state": proposal.state.value,
            "catalog_revision": pipeline.evaluator.catalog.revision,
        }

    @app.get("/metrics")
    def get_metrics():
        return pipeline.metrics_snapshot()

    if console_dir and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
