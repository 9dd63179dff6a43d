"""Packet loss, fixed delay and length padding applied to traces.

All operations are pure: they return new lists and never mutate records.
Each packet's fate is drawn from one uniform variate per packet, so two
calls with the same seed and a higher level perturb a superset of the
packets perturbed at the lower level.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from matterlens.errors import InvalidConfig
from matterlens.model import PacketRecord

DEFAULT_DELAY = 0.5


class PadKind(str, Enum):
    NONE = "none"
    UNIFORM = "uniform"
    BUCKET = "bucket"


@dataclass(frozen=True)
class PadStrategy:
    kind: PadKind = PadKind.NONE
    amount: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PadKind(self.kind))
        if self.kind is not PadKind.NONE and self.amount <= 0:
            raise InvalidConfig(f"{self.kind.value} padding needs a positive size")

    @classmethod
    def parse(cls, text: Optional[str]) -> PadStrategy:
        """Parse ``none``, ``uniform:<max extra bytes>`` or ``bucket:<size>``."""
        if not text or text.lower() == "none":
            return cls()
        m = re.fullmatch(r"(uniform|bucket):(\d+)", text.strip().lower())
        if not m:
            raise InvalidConfig(f"bad padding strategy {text!r}; use none, uniform:N or bucket:N")
        return cls(PadKind(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return "none" if self.kind is PadKind.NONE else f"{self.kind.value}:{self.amount}"


class Order(str, Enum):
    LOSS_THEN_DELAY = "loss-delay"
    DELAY_THEN_LOSS = "delay-loss"


@dataclass(frozen=True)
class PerturbationSpec:
    loss_fraction: float = 0.0
    delay_fraction: float = 0.0
    delay_delta: float = DEFAULT_DELAY
    pad: PadStrategy = PadStrategy()
    seed: int = 0
    order: Order = Order.LOSS_THEN_DELAY

    def __post_init__(self) -> None:
        for name in ("loss_fraction", "delay_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {value}")
        if not (self.delay_delta >= 0 and math.isfinite(self.delay_delta)):
            raise InvalidConfig("delay_delta must be a non-negative number of seconds")
        object.__setattr__(self, "order", Order(self.order))


def _uniforms(n: int, seed: int, stream: int) -> np.ndarray:
    return np.random.default_rng([seed, stream]).random(n)


LOSS_STREAM, DELAY_STREAM, PAD_STREAM = 1, 2, 3


def inject_loss(trace: Sequence[PacketRecord], p: float, seed: int) -> list[PacketRecord]:
    """Drop each packet independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidConfig(f"loss fraction must lie in [0, 1], got {p}")
    u = _uniforms(len(trace), seed, LOSS_STREAM)
    return [rec for rec, x in zip(trace, u) if x >= p]


def inject_delay(trace: Sequence[PacketRecord], q: float, delta: float = DEFAULT_DELAY, seed: int = 0) -> list[PacketRecord]:
    """Delay each packet by ``delta`` seconds with probability ``q``, then re-sort by time."""
    if not 0.0 <= q <= 1.0:
        raise InvalidConfig(f"delay fraction must lie in [0, 1], got {q}")
    u = _uniforms(len(trace), seed, DELAY_STREAM)
    moved = [replace(rec, timestamp=rec.timestamp + delta) if x < q else rec for rec, x in zip(trace, u)]
    moved.sort(key=lambda r: r.timestamp)
    return moved


def pad_lengths(trace: Sequence[PacketRecord], strategy: PadStrategy, seed: int = 0) -> list[PacketRecord]:
    """Grow payload lengths; raw payloads, if kept, are zero-filled to match."""
    if strategy.kind is PadKind.NONE:
        return list(trace)
    if strategy.kind is PadKind.BUCKET:
        size = strategy.amount
        new_lens = [-(-rec.payload_len // size) * size for rec in trace]
    else:
        rng = np.random.default_rng([seed, PAD_STREAM])
        extra = rng.integers(0, strategy.amount + 1, size=len(trace))
        new_lens = [rec.payload_len + int(e) for rec, e in zip(trace, extra)]
    out = []
    for rec, n in zip(trace, new_lens):
        payload = None if rec.payload is None else rec.payload + bytes(n - rec.payload_len)
        out.append(replace(rec, payload_len=n, payload=payload))
    return out


def perturb(trace: Sequence[PacketRecord], spec: PerturbationSpec) -> list[PacketRecord]:
    """Apply loss and delay in ``spec.order``, then padding."""
    out = list(trace)
    steps = [
        lambda t: inject_loss(t, spec.loss_fraction, spec.seed),
        lambda t: inject_delay(t, spec.delay_fraction, spec.delay_delta, spec.seed),
    ]
    if spec.order is Order.DELAY_THEN_LOSS:
        steps.reverse()
    for step in steps:
        out = step(out)
    return pad_lengths(out, spec.pad, spec.seed)
