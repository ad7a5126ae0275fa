"""Evaluator tests: provenance screening, staleness, rules, policies, routing."""

import random

import pytest

from provgate.clock import ManualClock
from provgate.context import StaticSensorFeed, build_context, signature_for, template_signature
from provgate.evaluator import (
    Destination,
    Evaluator,
    VerdictOutcome,
    apply_policies_for_trigger,
)
from provgate.ledger import Ledger, StatusConflict, Transaction, TxKind, TxStatus
from provgate.rules import (
    Catalog,
    ConfigParse,
    PolicyAction,
    PolicyTrigger,
    default_catalog,
    load_rule_catalog,
    parse_catalog,
)

ENV = {
    "registered_devices": ["sensor-1", "sensor-2"],
    "proto_allowlist": ["coap", "http"],
    "firmware_admins": ["ops-admin"],
}


def make_tx(tx_id, device="sensor-1", kind=TxKind.READ, params=None, issuer="alice", at=0):
    return Transaction(tx_id, device, kind, dict(params or {"unit": "celsius"}), issuer, at)


def mined_history(specs, clock):
    """specs: list of (tx, final_status). Mines each sublist separated by
    None markers into its own block; plain lists go one tx per block."""
    ledger = Ledger(clock, default_difficulty=2)
    for tx, final_status in specs:
        ledger.submit_transaction(tx)
        ledger.mine_block("miner-a")
        if final_status is TxStatus.EXECUTED:
            tx.transition(TxStatus.APPROVED)
            tx.transition(TxStatus.EXECUTED)
        elif final_status is TxStatus.APPROVED:
            tx.transition(TxStatus.APPROVED)
        elif final_status is TxStatus.SUSPICIOUS:
            tx.transition(TxStatus.SUSPICIOUS)
        elif final_status is TxStatus.REJECTED:
            tx.transition(TxStatus.SUSPICIOUS)
            tx.transition(TxStatus.REJECTED)
        elif final_status is TxStatus.EXPIRED:
            tx.transition(TxStatus.SUSPICIOUS)
            tx.transition(TxStatus.EXPIRED)
    return ledger


def mine_probe(ledger, probe):
    ledger.submit_transaction(probe)
    ledger.mine_block("miner-a")
    return probe


def evaluator(clock, catalog=None, bootstrap=None, **kwargs):
    return Evaluator(
        catalog or default_catalog(),
        ENV,
        clock,
        bootstrap=bootstrap,
        **kwargs,
    )


class TestProvenanceScreening:
    def test_config_update_after_reads_only_history_is_suspicious(self):
        clock = ManualClock(0)
        specs = [(make_tx(f"r{i}", at=i), TxStatus.EXECUTED) for i in range(100)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(
            ledger, make_tx("cfg", kind=TxKind.CONFIG_UPDATE, params={"unit": "fahrenheit"})
        )
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert verdict.reasons == ["unseen-template"]
        assert verdict.hold_summary is not None

    def test_read_matching_established_template_is_approved(self):
        clock = ManualClock(0)
        specs = [(make_tx(f"r{i}", at=i), TxStatus.EXECUTED) for i in range(100)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("r100", at=100))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.APPROVED
        assert verdict.reasons == []

    def test_empty_provenance_is_always_suspicious(self):
        clock = ManualClock(0)
        ledger = Ledger(clock, default_difficulty=2)
        probe = mine_probe(ledger, make_tx("t0"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert "unseen-template" in verdict.reasons

    def test_same_block_siblings_do_not_legitimize(self):
        clock = ManualClock(0)
        ledger = Ledger(clock, default_difficulty=2)
        a, b = make_tx("a"), make_tx("b")
        ledger.submit_transaction(a)
        ledger.submit_transaction(b)
        ledger.mine_block("miner-a")
        snap = build_context(ledger, StaticSensorFeed(), clock)
        ev = evaluator(clock)
        assert ev.evaluate(a, snap).outcome is VerdictOutcome.SUSPICIOUS
        assert ev.evaluate(b, snap).outcome is VerdictOutcome.SUSPICIOUS

    def test_rejected_only_template_stays_unseen(self):
        clock = ManualClock(0)
        cfg = make_tx("cfg0", kind=TxKind.CONFIG_UPDATE, params={"unit": "fahrenheit"})
        ledger = mined_history([(cfg, TxStatus.REJECTED)], clock)
        probe = mine_probe(
            ledger, make_tx("cfg1", kind=TxKind.CONFIG_UPDATE, params={"unit": "fahrenheit"})
        )
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert "unseen-template" in verdict.reasons

    def test_bootstrap_signature_legitimizes(self):
        clock = ManualClock(0)
        ledger = Ledger(clock, default_difficulty=2)
        probe = mine_probe(ledger, make_tx("t0"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        boot = {signature_for("sensor-1", TxKind.READ, ["unit"]).digest}
        verdict = evaluator(clock, bootstrap=boot).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.APPROVED

    def test_frequency_threshold_above_one(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0"), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        once = evaluator(clock, provenance_threshold=2).evaluate(probe, snap)
        assert "unseen-template" in once.reasons  # one appearance is not enough
        default = evaluator(clock).evaluate(probe, snap)
        assert default.outcome is VerdictOutcome.APPROVED

    def test_stale_snapshot_flags_stale_context(self):
        clock = ManualClock(0)
        specs = [(make_tx(f"r{i}", at=i), TxStatus.EXECUTED) for i in range(5)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        clock.advance(10_001)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert "stale-context" in verdict.reasons

    def test_evaluation_is_deterministic(self):
        clock = ManualClock(0)
        specs = [(make_tx(f"r{i}", at=i), TxStatus.EXECUTED) for i in range(10)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe", kind=TxKind.ACTUATOR_COMMAND, params={}))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        ev = evaluator(clock)
        first = ev.evaluate(probe, snap)
        second = ev.evaluate(probe, snap)
        assert (first.outcome, first.reasons) == (second.outcome, second.reasons)

    def test_brute_force_oracle_agreement_small(self):
        rng = random.Random(99)
        devices = ["sensor-1", "sensor-2", "dev-3", "dev-4"]
        kinds = [TxKind.READ, TxKind.CONFIG_UPDATE, TxKind.FIRMWARE_UPDATE]
        key_pool = ["unit", "proto", "rate"]
        statuses = [
            TxStatus.EXECUTED,
            TxStatus.APPROVED,
            TxStatus.MINED,
            TxStatus.REJECTED,
            TxStatus.SUSPICIOUS,
            TxStatus.EXPIRED,
        ]
        for trial in range(60):
            clock = ManualClock(0)
            n = rng.randint(0, 30)
            specs = []
            history = []
            for i in range(n):
                device = rng.choice(devices)
                kind = rng.choice(kinds)
                keys = rng.sample(key_pool, rng.randint(0, len(key_pool)))
                status = rng.choice(statuses)
                tx = Transaction(f"h{trial}-{i}", device, kind, {k: "v" for k in keys}, "alice", i)
                specs.append((tx, status))
                history.append((device, kind, frozenset(keys), status))
            ledger = mined_history(specs, clock)
            device = rng.choice(devices)
            kind = rng.choice(kinds)
            keys = rng.sample(key_pool, rng.randint(0, len(key_pool)))
            probe = mine_probe(
                ledger,
                Transaction(f"p{trial}", device, kind, {k: "v" for k in keys}, "alice", n),
            )
            snap = build_context(ledger, StaticSensorFeed(), clock, window=100)
            verdict = Evaluator(Catalog((), ()), ENV, clock).evaluate(probe, snap)
            # Oracle: direct field-by-field scan, no signatures involved.
            legit = {TxStatus.MINED, TxStatus.APPROVED, TxStatus.EXECUTED}
            seen = any(
                (d, k, ks) == (device, kind, frozenset(keys)) and s in legit
                for d, k, ks, s in history
            )
            flagged = "unseen-template" in verdict.reasons
            assert flagged == (not seen), f"trial {trial}: oracle disagrees"


class TestRules:
    def test_default_catalog_has_four_rules(self):
        catalog = load_rule_catalog(None)
        assert len(catalog.rules) == 4

    def test_unknown_protocol_flagged(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0", params={"unit": "celsius", "proto": "telnet"}), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(
            ledger, make_tx("probe", params={"unit": "celsius", "proto": "telnet"})
        )
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert "unknown-protocol" in verdict.reasons

    def test_unregistered_device_flagged(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0", device="ghost"), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe", device="ghost"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(probe, snap)
        assert "unregistered-device" in verdict.reasons

    def test_firmware_update_needs_grant(self):
        clock = ManualClock(0)
        specs = [
            (make_tx("r0", kind=TxKind.FIRMWARE_UPDATE, params={}, issuer="mallory"),
             TxStatus.EXECUTED),
        ]
        ledger = mined_history(specs, clock)
        bad = mine_probe(
            ledger, make_tx("p1", kind=TxKind.FIRMWARE_UPDATE, params={}, issuer="mallory")
        )
        snap = build_context(ledger, StaticSensorFeed(), clock)
        verdict = evaluator(clock).evaluate(bad, snap)
        assert "unauthorized-kind-for-issuer" in verdict.reasons

    def test_all_rules_disabled_seen_template_fresh_snapshot_approved(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0"), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        raw = {
            "rules": [
                {
                    "rule_id": "always-fail",
                    "predicate": {"field": "tx.kind", "op": "eq", "value": "nope"},
                    "on_fail_reason": "always-fail",
                    "enabled": False,
                }
            ],
            "policies": [],
        }
        catalog = parse_catalog(raw, {"registered_devices"})
        verdict = evaluator(clock, catalog=catalog).evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.APPROVED

    def test_catalog_parse_errors(self):
        with pytest.raises(ConfigParse):
            parse_catalog({"rules": [{"rule_id": "x", "predicate": {"bogus": 1}}]}, set())
        with pytest.raises(ConfigParse):
            parse_catalog(
                {"rules": [{"rule_id": "x", "predicate": {"field": "tx.nope", "op": "eq"}}]},
                set(),
            )
        with pytest.raises(ConfigParse):
            parse_catalog(
                {
                    "rules": [
                        {
                            "rule_id": "x",
                            "predicate": {
                                "field": "tx.issuer",
                                "op": "in",
                                "value": {"$env": "missing"},
                            },
                        }
                    ]
                },
                set(),
            )

    def test_load_rule_catalog_from_file(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text(
            '{"rules": [{"rule_id": "only-reads", '
            '"predicate": {"field": "tx.kind", "op": "eq", "value": "Read"}, '
            '"on_fail_reason": "not-a-read"}], "policies": []}'
        )
        catalog = load_rule_catalog(path)
        assert [r.rule_id for r in catalog.rules] == ["only-reads"]
        with pytest.raises(ConfigParse):
            load_rule_catalog(tmp_path / "missing.json")


class TestPolicies:
    def test_suspicious_default_policies(self):
        catalog = default_catalog()
        actions = apply_policies_for_trigger(catalog.policies, PolicyTrigger.ON_SUSPICIOUS)
        assert actions == [PolicyAction.ESCALATE_TO_VERIFIER, PolicyAction.LOG]

    def test_approved_default_policies(self):
        catalog = default_catalog()
        actions = apply_policies_for_trigger(catalog.policies, PolicyTrigger.ON_APPROVED)
        assert actions == [PolicyAction.LOG]

    def test_no_policies_still_escalates_suspicious(self):
        actions = apply_policies_for_trigger((), PolicyTrigger.ON_SUSPICIOUS)
        assert actions == [PolicyAction.ESCALATE_TO_VERIFIER]


class TestRouting:
    def _approved_pair(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0"), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        ev = evaluator(clock)
        return ev, probe, ev.evaluate(probe, snap)

    def test_approved_goes_to_executor(self):
        ev, probe, verdict = self._approved_pair()
        assert verdict.outcome is VerdictOutcome.APPROVED
        assert ev.route(verdict, probe) is Destination.EXECUTOR
        assert probe.status is TxStatus.APPROVED

    def test_suspicious_goes_to_verifier(self):
        clock = ManualClock(0)
        ledger = Ledger(clock, default_difficulty=2)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        ev = evaluator(clock)
        verdict = ev.evaluate(probe, snap)
        assert ev.route(verdict, probe) is Destination.VERIFIER
        assert probe.status is TxStatus.SUSPICIOUS

    def test_double_routing_is_a_status_conflict(self):
        ev, probe, verdict = self._approved_pair()
        ev.route(verdict, probe)
        with pytest.raises(StatusConflict):
            ev.route(verdict, probe)


class TestCatalogSwap:
    def test_swap_changes_next_verdict(self):
        clock = ManualClock(0)
        specs = [(make_tx("r0"), TxStatus.EXECUTED)]
        ledger = mined_history(specs, clock)
        probe = mine_probe(ledger, make_tx("probe"))
        snap = build_context(ledger, StaticSensorFeed(), clock)
        ev = evaluator(clock)
        assert ev.evaluate(probe, snap).outcome is VerdictOutcome.APPROVED
        raw = {
            "rules": [
                {
                    "rule_id": "no-reads",
                    "predicate": {"field": "tx.kind", "op": "ne", "value": "Read"},
                    "on_fail_reason": "no-reads",
                }
            ],
            "policies": [],
        }
        ev.swap_catalog(parse_catalog(raw, set(), revision=2))
        verdict = ev.evaluate(probe, snap)
        assert verdict.outcome is VerdictOutcome.SUSPICIOUS
        assert verdict.catalog_revision == 2
