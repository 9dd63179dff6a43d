"""Shared domain types: packet records, endpoint roles, directions and labels."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

from matterlens.errors import SchemaViolation


def endpoint_id(network_address: str, link_address: str = "") -> str:
    """Canonical endpoint identifier for a (network address, link address) pair."""
    return f"{network_address.strip().lower()}|{link_address.strip().lower()}"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """Metadata for one captured Matter packet.

    ``payload_len`` is the UDP payload length in octets, Matter header
    included. ``payload`` is optional; when present its length must match.
    """

    timestamp: float
    src_id: str
    dst_id: str
    src_port: int
    dst_port: int
    payload_len: int
    message_flags: int = 0
    security_flags: int = 0
    session_id: int = 0
    message_counter: int = 0
    payload: Optional[bytes] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {self.timestamp!r}")
        if self.payload_len < 0:
            raise ValueError(f"payload_len must be >= 0, got {self.payload_len}")
        if self.payload is not None and len(self.payload) != self.payload_len:
            raise ValueError(
                f"payload_len {self.payload_len} does not match payload of {len(self.payload)} octets"
            )
        for name, hi in (
            ("src_port", 0xFFFF),
            ("dst_port", 0xFFFF),
            ("message_flags", 0xFF),
            ("security_flags", 0xFF),
            ("session_id", 0xFFFF),
            ("message_counter", 0xFFFFFFFF),
        ):
            value = getattr(self, name)
            if not 0 <= value <= hi:
                raise ValueError(f"{name} out of range: {value}")

    def swapped(self) -> PacketRecord:
        """The same record with source and destination exchanged."""
        return PacketRecord(
            timestamp=self.timestamp,
            src_id=self.dst_id,
            dst_id=self.src_id,
            src_port=self.dst_port,
            dst_port=self.src_port,
            payload_len=self.payload_len,
            message_flags=self.message_flags,
            security_flags=self.security_flags,
            session_id=self.session_id,
            message_counter=self.message_counter,
            payload=self.payload,
        )


class Direction(str, Enum):
    CONTROLLER_TO_DEVICE = "ControllerToDevice"
    DEVICE_TO_CONTROLLER = "DeviceToController"
    OTHER = "Other"


class InteractionLabel(str, Enum):
    MULTI_ATTR_RRA = "MultiAttrRRA"
    MULTI_ATTR_RDA = "MultiAttrRDA"
    SINGLE_ATTR_RRA = "SingleAttrRRA"
    EMPTY_RDA = "EmptyRDA"
    NON_EMPTY_RDA = "NonEmptyRDA"
    END = "END"
    WRA1 = "WRA1"
    WRA2 = "WRA2"
    IRA1 = "IRA1"
    IRA2 = "IRA2"
    SRA2 = "SRA2"
    TRA = "TRA"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, text: str) -> InteractionLabel:
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown interaction label {text!r}") from None


class DeviceType(str, Enum):
    LIGHTING = "Lighting"
    LOCK = "Lock"
    PLUG = "Plug"
    SENSOR = "Sensor"


@dataclass(frozen=True)
class RoleMap:
    """Which endpoints are controllers and which are named end devices."""

    controller_ids: frozenset[str] = frozenset()
    device_ids: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "controller_ids", frozenset(self.controller_ids))
        object.__setattr__(self, "device_ids", dict(self.device_ids))
        both = self.controller_ids & set(self.device_ids)
        if both:
            raise ValueError(f"endpoints listed as both controller and device: {sorted(both)}")

    def __hash__(self) -> int:
        return hash((self.controller_ids, tuple(sorted(self.device_ids.items()))))

    def device_of(self, record: PacketRecord) -> Optional[str]:
        """Device endpoint of a controller<->device record, else None."""
        direction = classify_direction(record, self)
        if direction is Direction.CONTROLLER_TO_DEVICE:
            return record.dst_id
        if direction is Direction.DEVICE_TO_CONTROLLER:
            return record.src_id
        return None

    def to_json(self) -> dict:
        return {"controllers": sorted(self.controller_ids), "devices": dict(sorted(self.device_ids.items()))}

    @classmethod
    def from_json(cls, doc: Mapping) -> RoleMap:
        if not isinstance(doc, Mapping):
            raise SchemaViolation("role map must be a JSON object")
        controllers = doc.get("controllers", [])
        devices = doc.get("devices", {})
        if not isinstance(controllers, list) or not all(isinstance(c, str) for c in controllers):
            raise SchemaViolation("'controllers' must be a list of endpoint ids")
        if not isinstance(devices, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in devices.items()
        ):
            raise SchemaViolation("'devices' must map endpoint ids to device names")
        try:
            return cls(frozenset(c.lower() for c in controllers), {k.lower(): v for k, v in devices.items()})
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RoleMap:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_json(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def classify_direction(record: PacketRecord, roles: RoleMap) -> Direction:
    if record.src_id in roles.controller_ids and record.dst_id in roles.device_ids:
        return Direction.CONTROLLER_TO_DEVICE
    if record.src_id in roles.device_ids and record.dst_id in roles.controller_ids:
        return Direction.DEVICE_TO_CONTROLLER
    return Direction.OTHER


def infer_roles(records: Iterable[PacketRecord]) -> RoleMap:
    """Guess roles: the endpoint with the most distinct peers is the controller.

    Every peer of that endpoint becomes a device named after its identifier.
    Callers must opt in explicitly; nothing in the pipeline applies this.
    """
    peers: dict[str, set[str]] = defaultdict(set)
    for rec in records:
        peers[rec.src_id].add(rec.dst_id)
        peers[rec.dst_id].add(rec.src_id)
    if not peers:
        return RoleMap()
    controller = min(peers, key=lambda ep: (-len(peers[ep]), ep))
    devices = {ep: ep for ep in sorted(peers[controller]) if ep != controller}
    return RoleMap(frozenset({controller}), devices)
