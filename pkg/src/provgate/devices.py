"""Emulated device fleet and the executor that is the only path to it.

Devices are temperature sensors whose ambient value follows a seeded
bounded random walk (start 20.0 C, step up to +/-0.1, clamped to
[-20, 50]), so readings vary realistically but reproduce exactly under
a fixed seed. Unit changes happen only through an executed config
update.

The executor refuses anything that is not Approved; that refusal is the
system's last line against pipeline bypasses. The actual device
operation crosses the CoAP wire when a transport is wired in, so the
byte contract is exercised on every execution.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import canon, coap
from .context import PhysicalQuantity, PhysicalReading
from .ledger import Transaction, TxKind, TxStatus

WALK_START_C = 20.0
WALK_STEP_C = 0.1
WALK_MIN_C = -20.0
WALK_MAX_C = 50.0


class DeviceError(Exception):
    code = "DEVICE"


class DuplicateDevice(DeviceError):
    code = "DUPLICATE_DEVICE"


class UnknownDevice(DeviceError):
    code = "UNKNOWN_DEVICE"


class NotApproved(DeviceError):
    code = "NOT_APPROVED"


class UnsupportedKind(DeviceError):
    code = "UNSUPPORTED_KIND"


class BadConfig(DeviceError):
    code = "BAD_CONFIG"


class TempUnit(str, Enum):
    CELSIUS = "celsius"
    FAHRENHEIT = "fahrenheit"


def celsius_to_fahrenheit(c: float) -> float:
    return c * 9.0 / 5.0 + 32.0


def fahrenheit_to_celsius(f: float) -> float:
    return (f - 32.0) * 5.0 / 9.0


class EmulatedDevice:
    """One temperature sensor. State mutations are serialized per device."""

    kind = "temperature-sensor"

    def __init__(self, device_id: str, unit: TempUnit = TempUnit.CELSIUS, seed: int = 0,
                 registered_protocols: Optional[set[str]] = None):
        self.device_id = device_id
        self.unit = unit
        self.registered_protocols = set(registered_protocols or {"coap"})
        self._rng = random.Random(seed)
        self._truth_c = WALK_START_C
        self._lock = threading.Lock()

    def _advance(self) -> float:
        self._truth_c = min(
            WALK_MAX_C,
            max(WALK_MIN_C, self._truth_c + self._rng.uniform(-WALK_STEP_C, WALK_STEP_C)),
        )
        return self._truth_c

    def read(self) -> str:
        """Sample the ambient walk, formatted in the configured unit with
        one decimal place (payloads stay byte-stable)."""
        with self._lock:
            c = self._advance()
            if self.unit is TempUnit.FAHRENHEIT:
                return f"{celsius_to_fahrenheit(c):.1f} F"
            return f"{c:.1f} C"

    def ambient_celsius(self) -> float:
        with self._lock:
            return self._advance()

    def set_unit(self, unit: TempUnit) -> None:
        with self._lock:
            self.unit = unit

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "kind": self.kind,
            "unit": self.unit.value,
            "registered_protocols": sorted(self.registered_protocols),
        }


class DeviceFleet:
    def __init__(self):
        self._devices: dict[str, EmulatedDevice] = {}
        self._lock = threading.Lock()

    def register_device(self, device: EmulatedDevice) -> None:
        with self._lock:
            if device.device_id in self._devices:
                raise DuplicateDevice(device.device_id)
            self._devices[device.device_id] = device

    def list_devices(self) -> list[EmulatedDevice]:
        with self._lock:
            return list(self._devices.values())

    def get(self, device_id: str) -> EmulatedDevice:
        device = self._devices.get(device_id)
        if device is None:
            raise UnknownDevice(device_id)
        return device

    def device_ids(self) -> list[str]:
        with self._lock:
            return list(self._devices)


class FleetSensorFeed:
    """Adapter presenting the fleet as environment sensors: each call
    samples every device's ambient value in celsius, stamped now."""

    def __init__(self, fleet: DeviceFleet, clock):
        self._fleet = fleet
        self._clock = clock

    def readings(self) -> list[PhysicalReading]:
        now = self._clock.now_ms()
        return [
            PhysicalReading(
                source=device.device_id,
                quantity=PhysicalQuantity.TEMPERATURE,
                value=f"{device.ambient_celsius():.1f} C",
                observed_at=now,
            )
            for device in self._fleet.list_devices()
        ]


@dataclass(frozen=True)
class ExecutionResult:
    tx_id: str
    device_id: str
    outcome: str
    executed_at: int

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "device_id": self.device_id,
            "outcome": self.outcome,
            "executed_at": self.executed_at,
        }


def _apply_config(device: EmulatedDevice, params: dict[str, str]) -> str:
    unsupported = set(params) - {"unit"}
    if unsupported:
        raise BadConfig(f"unsupported config keys {sorted(unsupported)}")
    if "unit" not in params:
        raise BadConfig("config update carries no 'unit' parameter")
    try:
        unit = TempUnit(params["unit"].lower())
    except ValueError as exc:
        raise BadConfig(f"unknown unit {params['unit']!r}") from exc
    device.set_unit(unit)
    return f"unit={unit.value}"


def fleet_coap_router(fleet: DeviceFleet):
    """CoAP request router over the fleet:

        GET  device/<id>         -> 2.05 Content, payload = reading
        PUT  device/<id>/config  -> 2.04 Changed, payload = ack
        unknown device           -> 4.04, disallowed config -> 4.03
    """

    def route(request: coap.CoapMessage) -> tuple[coap.Code, bytes]:
        path = request.uri_path()
        if len(path) == 2 and path[0] == "device" and request.code == coap.GET:
            try:
                device = fleet.get(path[1])
            except UnknownDevice:
                return coap.NOT_FOUND, b""
            return coap.CONTENT, device.read().encode()
        if len(path) == 3 and path[:1] == ["device"] and path[2] == "config" \
                and request.code == coap.PUT:
            try:
                device = fleet.get(path[1])
            except UnknownDevice:
                return coap.NOT_FOUND, b""
            try:
                params = canon.Reader(request.payload).str_map()
                ack = _apply_config(device, params)
            except (canon.CanonDecodeError, BadConfig):
                return coap.FORBIDDEN, b""
            return coap.CHANGED, ack.encode()
        return coap.NOT_FOUND, b""

    return route


class DeviceExecutor:
    """Executes approved transactions on the fleet. With a CoAP client
    configured, every operation travels the wire to the fleet endpoint;
    without one it calls the fleet directly (unit-test mode)."""

    def __init__(self, fleet: DeviceFleet, clock, coap_client: Optional[coap.CoapClient] = None):
        self._fleet = fleet
        self._clock = clock
        self._coap_client = coap_client
        self.executed_count = 0
        self.rejected_bypass_count = 0
        self._lock = threading.Lock()

    def serve_in_process(self) -> coap.InProcessTransport:
        """Bind a loopback CoAP endpoint over the fleet and point this
        executor's client at it."""
        transport = coap.InProcessTransport()
        transport.bind(coap.CoapServer(fleet_coap_router(self._fleet)).handle_datagram)
        self._coap_client = coap.CoapClient(transport)
        return transport

    def serve_udp(self, host: str = "127.0.0.1", port: int = 0) -> coap.UdpCoapEndpoint:
        endpoint = coap.UdpCoapEndpoint(
            coap.CoapServer(fleet_coap_router(self._fleet)), host, port
        )
        endpoint.start()
        self._coap_client = coap.CoapClient(coap.UdpTransport(endpoint.host, endpoint.port))
        return endpoint

    def execute(self, tx: Transaction) -> ExecutionResult:
        if tx.status is not TxStatus.APPROVED:
            with self._lock:
                self.rejected_bypass_count += 1
            raise NotApproved(f"{tx.tx_id}: status is {tx.status.value}, execution refused")
        device = self._fleet.get(tx.device_id)  # UnknownDevice if absent
        if tx.kind is TxKind.READ:
            outcome = self._do_read(device)
        elif tx.kind is TxKind.CONFIG_UPDATE:
            outcome = self._do_config(device, tx.params)
        else:
            raise UnsupportedKind(f"{tx.kind.value} not supported by {device.kind}")
        tx.transition(TxStatus.EXECUTED)
        with self._lock:
            self.executed_count += 1
        return ExecutionResult(tx.tx_id, tx.device_id, outcome, self._clock.now_ms())

    def _do_read(self, device: EmulatedDevice) -> str:
        if self._coap_client is None:
            return device.read()
        reply = self._coap_client.request(coap.GET, ["device", device.device_id])
        if reply.code != coap.CONTENT:
            raise DeviceError(f"device read failed with {reply.code}")
        return reply.payload.decode()

    def _do_config(self, device: EmulatedDevice, params: dict[str, str]) -> str:
        if self._coap_client is None:
            return _apply_config(device, params)
        payload = canon.str_map(params.items())
        reply = self._coap_client.request(
            coap.PUT, ["device", device.device_id, "config"], payload
        )
        if reply.code == coap.FORBIDDEN:
            raise BadConfig("device refused the config update")
        if reply.code != coap.CHANGED:
            raise DeviceError(f"config update failed with {reply.code}")
        return reply.payload.decode()
