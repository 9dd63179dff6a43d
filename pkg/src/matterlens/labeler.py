"""Rule-based labeling of encrypted Matter packets from length and direction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from matterlens.errors import SchemaViolation
from matterlens.ingest import iter_trace_rows, write_trace
from matterlens.model import Direction, InteractionLabel as L, PacketRecord, RoleMap, classify_direction
from matterlens.sequencer import DEFAULT_WINDOW, pair_index


class OverlapPolicy(str, Enum):
    PREFER_IRA = "PreferIRA"
    PREFER_WRA = "PreferWRA"
    MARK_AMBIGUOUS = "MarkAmbiguous"


@dataclass(frozen=True)
class RuleSet:
    """Length thresholds (bytes of UDP payload) for every packet type.

    Ranges are inclusive ``(lo, hi)`` tuples.
    """

    single_attr_rra_range: tuple[int, int] = (51, 58)
    empty_rda_len: int = 41
    end_len: int = 34
    sra2_len: int = 42
    tra_lens: frozenset[int] = frozenset({38, 39})
    wra_resp_range: tuple[int, int] = (62, 69)
    ira_resp_range: tuple[int, int] = (67, 74)
    multiattr_ratio: float = 1.2
    nonempty_rda_excluded: frozenset[int] = frozenset({34, 41, 42})
    overlap_policy: OverlapPolicy = OverlapPolicy.PREFER_IRA

    def __post_init__(self) -> None:
        for name in ("single_attr_rra_range", "wra_resp_range", "ira_resp_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: [{lo}, {hi}]")
            object.__setattr__(self, name, (int(lo), int(hi)))
        object.__setattr__(self, "tra_lens", frozenset(self.tra_lens))
        object.__setattr__(self, "nonempty_rda_excluded", frozenset(self.nonempty_rda_excluded))
        object.__setattr__(self, "overlap_policy", OverlapPolicy(self.overlap_policy))
        if self.multiattr_ratio <= 0:
            raise ValueError("multiattr_ratio must be positive")

    @property
    def overlap_range(self) -> Optional[tuple[int, int]]:
        lo = max(self.wra_resp_range[0], self.ira_resp_range[0])
        hi = min(self.wra_resp_range[1], self.ira_resp_range[1])
        return (lo, hi) if lo <= hi else None

    def in_overlap(self, length: int) -> bool:
        band = self.overlap_range
        return band is not None and band[0] <= length <= band[1]

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["tra_lens"] = sorted(self.tra_lens)
        doc["nonempty_rda_excluded"] = sorted(self.nonempty_rda_excluded)
        doc["overlap_policy"] = self.overlap_policy.value
        for name in ("single_attr_rra_range", "wra_resp_range", "ira_resp_range"):
            doc[name] = list(doc[name])
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> RuleSet:
        if not isinstance(doc, Mapping):
            raise SchemaViolation("rule set must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SchemaViolation(f"unknown rule keys: {sorted(unknown)}")
        kwargs = dict(doc)
        try:
            for name in ("single_attr_rra_range", "wra_resp_range", "ira_resp_range"):
                if name in kwargs:
                    lo, hi = kwargs[name]
                    kwargs[name] = (int(lo), int(hi))
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(f"invalid rule set: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> RuleSet:
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc


DEFAULT_RULES = RuleSet()


def _in(length: int, bounds: tuple[int, int]) -> bool:
    return bounds[0] <= length <= bounds[1]


def resolve_overlap(response_len: int, policy: OverlapPolicy | str, rules: RuleSet = DEFAULT_RULES) -> tuple[L, L]:
    """Label pair for a response whose length sits in the IRA/WRA response bands.

    Lengths outside the shared band resolve by plain range membership.
    """
    policy = OverlapPolicy(policy)
    if not rules.in_overlap(response_len):
        if _in(response_len, rules.ira_resp_range):
            return L.IRA1, L.IRA2
        if _in(response_len, rules.wra_resp_range):
            return L.WRA1, L.WRA2
        raise ValueError(f"response length {response_len} is in neither response band")
    if policy is OverlapPolicy.PREFER_IRA:
        return L.IRA1, L.IRA2
    if policy is OverlapPolicy.PREFER_WRA:
        return L.WRA1, L.WRA2
    return L.UNKNOWN, L.UNKNOWN


def pair_labels(request_len: int, response_len: int, rules: RuleSet = DEFAULT_RULES) -> Optional[tuple[L, L]]:
    """Labels for a request/response exchange, or None when no pair rule applies."""
    if _in(response_len, rules.ira_resp_range) or _in(response_len, rules.wra_resp_range):
        return resolve_overlap(response_len, rules.overlap_policy, rules)
    if response_len >= rules.multiattr_ratio * request_len:
        return L.MULTI_ATTR_RRA, L.MULTI_ATTR_RDA
    return None


def singleton_label(length: int, direction: Direction, rules: RuleSet = DEFAULT_RULES) -> L:
    if length == rules.end_len:
        return L.END
    if length == rules.sra2_len:
        return L.SRA2
    if direction is Direction.CONTROLLER_TO_DEVICE:
        if length in rules.tra_lens:
            return L.TRA
        if _in(length, rules.single_attr_rra_range):
            return L.SINGLE_ATTR_RRA
    elif direction is Direction.DEVICE_TO_CONTROLLER:
        if length == rules.empty_rda_len:
            return L.EMPTY_RDA
        if length not in rules.nonempty_rda_excluded:
            return L.NON_EMPTY_RDA
    return L.UNKNOWN


def label_records(
    records: Sequence[PacketRecord],
    roles: RoleMap,
    rules: RuleSet = DEFAULT_RULES,
    window: float = DEFAULT_WINDOW,
) -> list[L]:
    """One label per record, aligned with ``records``.

    Fixed-length END packets are labeled first and kept out of pairing, since
    they close an exchange and never solicit a response. Remaining traffic is
    paired greedily; pairs that match a response rule take both labels, and
    every other packet (including members of pairs no rule accepted) falls
    through to the single-packet rules.
    """
    labels: list[Optional[L]] = [None] * len(records)
    directions = [classify_direction(r, roles) for r in records]
    eligible = [r.payload_len != rules.end_len for r in records]

    for q, r in pair_index(records, roles, window, eligible).items():
        chosen = pair_labels(records[q].payload_len, records[r].payload_len, rules)
        if chosen is not None:
            labels[q], labels[r] = chosen

    return [
        lab if lab is not None else singleton_label(rec.payload_len, direction, rules)
        for rec, direction, lab in zip(records, directions, labels)
    ]


def label_trace(
    records: Sequence[PacketRecord],
    roles: RoleMap,
    rules: RuleSet = DEFAULT_RULES,
    window: float = DEFAULT_WINDOW,
) -> list[tuple[PacketRecord, L]]:
    return list(zip(records, label_records(records, roles, rules, window)))


def write_labeled_trace(labeled: Sequence[tuple[PacketRecord, L]], path: str | Path) -> None:
    write_trace((rec for rec, _ in labeled), path, ({"label": lab.value} for _, lab in labeled))


def read_labeled_trace(path: str | Path) -> list[tuple[PacketRecord, L]]:
    out = []
    for lineno, row, rec in iter_trace_rows(path):
        try:
            out.append((rec, L.parse(row["label"])))
        except KeyError:
            raise SchemaViolation("missing field: label", lineno) from None
        except ValueError as exc:
            raise SchemaViolation(str(exc), lineno) from None
    return out
