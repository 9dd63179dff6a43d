"""Request/response pairing, controller-issued length sequences, and day partitions."""

from __future__ import annotations

import bisect
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

from matterlens.model import Direction, PacketRecord, RoleMap, classify_direction

DEFAULT_WINDOW = 0.5


@dataclass(frozen=True)
class Exchange:
    request: PacketRecord
    response: Optional[PacketRecord]
    gap: Optional[float]


@dataclass(frozen=True, order=True)
class LengthSequence:
    first_len: int
    second_len: int

    def __post_init__(self) -> None:
        if self.first_len <= 0 or self.second_len <= 0:
            raise ValueError("sequence lengths must be positive")

    def __str__(self) -> str:
        return f"({self.first_len}->{self.second_len})"


def _pair_key(rec: PacketRecord, direction: Direction) -> tuple[str, str]:
    # (device, controller)
    if direction is Direction.CONTROLLER_TO_DEVICE:
        return rec.dst_id, rec.src_id
    return rec.src_id, rec.dst_id


def pair_index(
    records: Sequence[PacketRecord],
    roles: RoleMap,
    window: float = DEFAULT_WINDOW,
    eligible: Optional[Sequence[bool]] = None,
) -> dict[int, int]:
    """Greedy earliest-response matching over record indices.

    Requests are visited in input order; each takes the earliest later
    DeviceToController record on the same (device, controller) pair that is
    still free and at most ``window`` seconds away. ``eligible`` masks records
    out of the matching altogether. Returns ``{request_idx: response_idx}``.
    """
    responses: dict[tuple[str, str], list[int]] = defaultdict(list)
    requests: list[tuple[int, tuple[str, str]]] = []
    for idx, rec in enumerate(records):
        if eligible is not None and not eligible[idx]:
            continue
        direction = classify_direction(rec, roles)
        if direction is Direction.CONTROLLER_TO_DEVICE:
            requests.append((idx, _pair_key(rec, direction)))
        elif direction is Direction.DEVICE_TO_CONTROLLER:
            responses[_pair_key(rec, direction)].append(idx)

    taken: set[int] = set()
    pairs: dict[int, int] = {}
    for req_idx, key in requests:
        candidates = responses.get(key)
        if not candidates:
            continue
        req = records[req_idx]
        pos = bisect.bisect_right(candidates, req_idx)
        for resp_idx in candidates[pos:]:
            gap = records[resp_idx].timestamp - req.timestamp
            if gap > window:
                break
            if resp_idx in taken or gap < 0:
                continue
            taken.add(resp_idx)
            pairs[req_idx] = resp_idx
            break
    return pairs


def pair_exchanges(
    records: Sequence[PacketRecord], roles: RoleMap, window: float = DEFAULT_WINDOW
) -> tuple[list[Exchange], list[PacketRecord]]:
    """Match each controller request to at most one device response.

    Returns the exchanges (in request order) and every record that ended up
    in no exchange, in input order.
    """
    pairs = pair_index(records, roles, window)
    paired = set(pairs) | set(pairs.values())
    exchanges = [
        Exchange(records[q], records[r], records[r].timestamp - records[q].timestamp)
        for q, r in sorted(pairs.items())
    ]
    unpaired = [rec for idx, rec in enumerate(records) if idx not in paired]
    return exchanges, unpaired


def day_of(timestamp: float, timezone_offset: float = 0.0) -> str:
    """Calendar day (ISO date) of ``timestamp`` shifted by ``timezone_offset`` seconds."""
    moment = datetime.fromtimestamp(0, tz=timezone.utc) + timedelta(seconds=timestamp + timezone_offset)
    return moment.date().isoformat()


def partition_days(records: Iterable[PacketRecord], timezone_offset: float = 0.0) -> dict[str, list[PacketRecord]]:
    buckets: dict[str, list[PacketRecord]] = defaultdict(list)
    for rec in records:
        buckets[day_of(rec.timestamp, timezone_offset)].append(rec)
    return dict(buckets)


def extract_sequences(
    records: Iterable[PacketRecord],
    roles: RoleMap,
    window: float = DEFAULT_WINDOW,
    timezone_offset: float = 0.0,
) -> dict[tuple[str, str], Counter[LengthSequence]]:
    """Length pairs of consecutive controller-to-device packets per (device, day).

    Two packets to the same device form a sequence when the second follows
    the first within ``window`` seconds. The day is taken from the first
    packet of the pair.
    """
    per_device: dict[str, list[PacketRecord]] = defaultdict(list)
    for rec in records:
        if classify_direction(rec, roles) is Direction.CONTROLLER_TO_DEVICE:
            per_device[rec.dst_id].append(rec)

    out: dict[tuple[str, str], Counter[LengthSequence]] = {}
    for device, pkts in per_device.items():
        pkts.sort(key=lambda r: r.timestamp)
        for x, y in zip(pkts, pkts[1:]):
            if y.timestamp - x.timestamp <= window and x.payload_len > 0 and y.payload_len > 0:
                key = (device, day_of(x.timestamp, timezone_offset))
                out.setdefault(key, Counter())[LengthSequence(x.payload_len, y.payload_len)] += 1
    return out
