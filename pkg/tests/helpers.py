"""Hand-written trace helpers shared by the test modules."""

from __future__ import annotations

import itertools

from matterlens.model import PacketRecord

CTRL = "fd00::1|02:00:00:00:00:01"
BULB = "fd00::10|02:00:00:00:00:10"
PLUG = "fd00::11|02:00:00:00:00:11"

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []

_counter = itertools.count(1)


def pkt(t: float, length: int, src: str = CTRL, dst: str = BULB, counter: int | None = None) -> PacketRecord:
    return PacketRecord(
        timestamp=t,
        src_id=src,
        dst_id=dst,
        src_port=5540,
        dst_port=5540,
        payload_len=length,
        message_counter=next(_counter) if counter is None else counter,
    )


def c2d(t: float, length: int, device: str = BULB, **kw) -> PacketRecord:
    return pkt(t, length, CTRL, device, **kw)


def d2c(t: float, length: int, device: str = BULB, **kw) -> PacketRecord:
    return pkt(t, length, device, CTRL, **kw)
