"""Declarative rule and policy catalog for the transaction evaluator.

Rules are if-else style conditions expressed as a small JSON predicate
tree rather than code, so catalog updates stay auditable. A rule HOLDS
when its predicate is true; a failing rule marks the transaction
suspicious with the rule's on_fail_reason.

Predicate grammar (JSON):

    {"all": [<predicate>, ...]}
    {"any": [<predicate>, ...]}
    {"not": <predicate>}
    {"field": <path>, "op": <op>, "value": <literal | {"$env": <name>}>}

Ops: eq, ne, lt, le, gt, ge, in, not_in, absent, present
(absent/present take no value). A comparison against a missing field is
false, so rules fail closed.

Field paths:

    tx.tx_id | tx.device_id | tx.kind | tx.issuer | tx.params.<key>
    snapshot.age_ms | snapshot.entry_count | snapshot.groups_count
    physical.count | physical.newest_age_ms
    physical.<quantity>.value | physical.<quantity>.age_ms

Policies map a verdict trigger to one action each and run in
registration order. EscalateToVerifier is always enacted for a
suspicious verdict whether or not a policy names it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from .context import ContextSnapshot, PhysicalQuantity
from .ledger import Transaction

_OPS = {"eq", "ne", "lt", "le", "gt", "ge", "in", "not_in", "absent", "present"}
_FIELD_PREFIXES = ("tx.", "snapshot.", "physical.")


class ConfigParse(Exception):
    code = "CONFIG_PARSE"


class PolicyTrigger(str, Enum):
    ON_SUSPICIOUS = "OnSuspicious"
    ON_APPROVED = "OnApproved"
    ON_REJECTED = "OnRejected"
    ON_EXPIRED = "OnExpired"


class PolicyAction(str, Enum):
    QUARANTINE = "Quarantine"
    NOTIFY = "Notify"
    LOG = "Log"
    ESCALATE_TO_VERIFIER = "EscalateToVerifier"


@dataclass(frozen=True)
class Policy:
    policy_id: str
    trigger: PolicyTrigger
    action: PolicyAction


@dataclass(frozen=True)
class Predicate:
    """Parsed predicate node. kind is one of all/any/not/leaf."""

    kind: str
    children: tuple["Predicate", ...] = ()
    path: str = ""
    op: str = ""
    value: Any = None
    env_ref: Optional[str] = None

    def evaluate(self, tx: Transaction, snapshot: ContextSnapshot, env: dict, now_ms: int) -> bool:
        if self.kind == "all":
            return all(c.evaluate(tx, snapshot, env, now_ms) for c in self.children)
        if self.kind == "any":
            return any(c.evaluate(tx, snapshot, env, now_ms) for c in self.children)
        if self.kind == "not":
            return not self.children[0].evaluate(tx, snapshot, env, now_ms)
        actual = _resolve_field(self.path, tx, snapshot, now_ms)
        if self.op == "absent":
            return actual is None
        if self.op == "present":
            return actual is not None
        if actual is None:
            return False
        expected = env[self.env_ref] if self.env_ref is not None else self.value
        try:
            if self.op == "eq":
                return actual == expected
            if self.op == "ne":
                return actual != expected
            if self.op == "lt":
                return actual < expected
            if self.op == "le":
                return actual <= expected
            if self.op == "gt":
                return actual > expected
            if self.op == "ge":
                return actual >= expected
            if self.op == "in":
                return actual in expected
            if self.op == "not_in":
                return actual not in expected
        except TypeError:
            return False
        raise AssertionError(f"unreachable op {self.op}")


def _resolve_field(path: str, tx: Transaction, snapshot: ContextSnapshot, now_ms: int):
    if path == "tx.tx_id":
        return tx.tx_id
    if path == "tx.device_id":
        return tx.device_id
    if path == "tx.kind":
        return tx.kind.value
    if path == "tx.issuer":
        return tx.issuer
    if path.startswith("tx.params."):
        return tx.params.get(path[len("tx.params.") :])
    if path == "snapshot.age_ms":
        return now_ms - snapshot.built_at
    if path == "snapshot.entry_count":
        return snapshot.entry_count
    if path == "snapshot.groups_count":
        return len(snapshot.groups)
    if path == "physical.count":
        return len(snapshot.physical)
    if path == "physical.newest_age_ms":
        if not snapshot.physical:
            return None
        return now_ms - max(r.observed_at for r in snapshot.physical)
    if path.startswith("physical."):
        _, quantity, attr = path.split(".", 2)
        matches = [r for r in snapshot.physical if r.quantity.value == quantity]
        if not matches:
            return None
        newest = max(matches, key=lambda r: r.observed_at)
        return newest.value if attr == "value" else now_ms - newest.observed_at
    raise AssertionError(f"unvalidated field path {path}")


def _validate_field_path(path: str) -> None:
    if path in {
        "tx.tx_id",
        "tx.device_id",
        "tx.kind",
        "tx.issuer",
        "snapshot.age_ms",
        "snapshot.entry_count",
        "snapshot.groups_count",
        "physical.count",
        "physical.newest_age_ms",
    }:
        return
    if path.startswith("tx.params.") and len(path) > len("tx.params."):
        return
    parts = path.split(".")
    if (
        len(parts) == 3
        and parts[0] == "physical"
        and parts[1] in {q.value for q in PhysicalQuantity}
        and parts[2] in {"value", "age_ms"}
    ):
        return
    raise ConfigParse(f"unknown field path {path!r}")


def parse_predicate(node: Any, env_keys: set[str]) -> Predicate:
    if not isinstance(node, dict):
        raise ConfigParse(f"predicate must be an object, got {type(node).__name__}")
    for combinator in ("all", "any"):
        if combinator in node:
            if set(node) != {combinator}:
                raise ConfigParse(f"extra keys next to {combinator!r}")
            children = node[combinator]
            if not isinstance(children, list) or not children:
                raise ConfigParse(f"{combinator!r} needs a non-empty list")
            return Predicate(combinator, tuple(parse_predicate(c, env_keys) for c in children))
    if "not" in node:
        if set(node) != {"not"}:
            raise ConfigParse("extra keys next to 'not'")
        return Predicate("not", (parse_predicate(node["not"], env_keys),))
    unknown = set(node) - {"field", "op", "value"}
    if unknown:
        raise ConfigParse(f"unknown predicate keys {sorted(unknown)}")
    if "field" not in node or "op" not in node:
        raise ConfigParse("leaf predicate needs 'field' and 'op'")
    path, op = node["field"], node["op"]
    if op not in _OPS:
        raise ConfigParse(f"unknown op {op!r}")
    _validate_field_path(path)
    value = node.get("value")
    env_ref = None
    if isinstance(value, dict):
        if set(value) != {"$env"}:
            raise ConfigParse("object values must be a single {'$env': name} reference")
        env_ref = value["$env"]
        if env_ref not in env_keys:
            raise ConfigParse(f"unknown env reference {env_ref!r}")
        value = None
    if op in {"absent", "present"} and (value is not None or env_ref is not None):
        raise ConfigParse(f"op {op!r} takes no value")
    return Predicate("leaf", path=path, op=op, value=value, env_ref=env_ref)


@dataclass(frozen=True)
class Rule:
    rule_id: str
    description: str
    predicate: Predicate
    on_fail_reason: str
    enabled: bool = True

    def holds(self, tx: Transaction, snapshot: ContextSnapshot, env: dict, now_ms: int) -> bool:
        return self.predicate.evaluate(tx, snapshot, env, now_ms)


@dataclass(frozen=True)
class Catalog:
    rules: tuple[Rule, ...]
    policies: tuple[Policy, ...]
    revision: int = 0

    def enabled_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.enabled)


DEFAULT_ENV_KEYS = {"registered_devices", "proto_allowlist", "firmware_admins"}

_DEFAULT_RULES_JSON = [
    {
        "rule_id": "unknown-protocol",
        "description": "A transaction naming a communication protocol must use a registered one.",
        "on_fail_reason": "unknown-protocol",
        "predicate": {
            "any": [
                {"field": "tx.params.proto", "op": "absent"},
                {"field": "tx.params.proto", "op": "in", "value": {"$env": "proto_allowlist"}},
            ]
        },
    },
    {
        "rule_id": "delayed-streaming",
        "description": "The newest physical reading must be recent enough to trust.",
        "on_fail_reason": "delayed-streaming",
        "predicate": {"field": "physical.newest_age_ms", "op": "le", "value": 5000},
    },
    {
        "rule_id": "unregistered-device",
        "description": "Transactions may only target devices in the fleet registry.",
        "on_fail_reason": "unregistered-device",
        "predicate": {
            "field": "tx.device_id",
            "op": "in",
            "value": {"$env": "registered_devices"},
        },
    },
    {
        "rule_id": "unauthorized-kind-for-issuer",
        "description": "Firmware updates require an issuer with firmware rights.",
        "on_fail_reason": "unauthorized-kind-for-issuer",
        "predicate": {
            "any": [
                {"field": "tx.kind", "op": "ne", "value": "FirmwareUpdate"},
                {"field": "tx.issuer", "op": "in", "value": {"$env": "firmware_admins"}},
            ]
        },
    },
]

_DEFAULT_POLICIES_JSON = [
    {"policy_id": "escalate-suspicious", "trigger": "OnSuspicious", "action": "EscalateToVerifier"},
    {"policy_id": "log-suspicious", "trigger": "OnSuspicious", "action": "Log"},
    {"policy_id": "log-approved", "trigger": "OnApproved", "action": "Log"},
]


def parse_catalog(raw: Any, env_keys: set[str], revision: int = 0) -> Catalog:
    if not isinstance(raw, dict):
        raise ConfigParse("catalog must be an object with 'rules' and 'policies'")
    unknown = set(raw) - {"rules", "policies"}
    if unknown:
        raise ConfigParse(f"unknown catalog keys {sorted(unknown)}")
    rules: list[Rule] = []
    seen_rule_ids: set[str] = set()
    for item in raw.get("rules", []):
        if not isinstance(item, dict):
            raise ConfigParse("rule entries must be objects")
        extra = set(item) - {"rule_id", "description", "predicate", "on_fail_reason", "enabled"}
        if extra:
            raise ConfigParse(f"unknown rule keys {sorted(extra)}")
        try:
            rule = Rule(
                rule_id=item["rule_id"],
                description=item.get("description", ""),
                predicate=parse_predicate(item["predicate"], env_keys),
                on_fail_reason=item.get("on_fail_reason", item["rule_id"]),
                enabled=bool(item.get("enabled", True)),
            )
        except KeyError as exc:
            raise ConfigParse(f"rule missing {exc.args[0]!r}") from exc
        if rule.rule_id in seen_rule_ids:
            raise ConfigParse(f"duplicate rule_id {rule.rule_id!r}")
        seen_rule_ids.add(rule.rule_id)
        rules.append(rule)
    policies: list[Policy] = []
    for item in raw.get("policies", []):
        if not isinstance(item, dict):
            raise ConfigParse("policy entries must be objects")
        extra = set(item) - {"policy_id", "trigger", "action"}
        if extra:
            raise ConfigParse(f"unknown policy keys {sorted(extra)}")
        try:
            policies.append(
                Policy(
                    policy_id=item["policy_id"],
                    trigger=PolicyTrigger(item["trigger"]),
                    action=PolicyAction(item["action"]),
                )
            )
        except KeyError as exc:
            raise ConfigParse(f"policy missing {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise ConfigParse(str(exc)) from exc
    return Catalog(tuple(rules), tuple(policies), revision)


def default_catalog(env_keys: Optional[set[str]] = None) -> Catalog:
    keys = DEFAULT_ENV_KEYS | (env_keys or set())
    return parse_catalog(
        {"rules": _DEFAULT_RULES_JSON, "policies": _DEFAULT_POLICIES_JSON}, keys
    )


def load_rule_catalog(path: Optional[str | Path], env_keys: Optional[set[str]] = None) -> Catalog:
    """Load a catalog file, or the built-in defaults when no path given."""
    keys = DEFAULT_ENV_KEYS | (env_keys or set())
    if path is None:
        return default_catalog(keys)
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigParse(f"cannot read catalog file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"catalog is not valid JSON: {exc}") from exc
    return parse_catalog(raw, keys)
