"""Device-type classification from per-day IRA1 lengths and controller sequences.

Each fingerprint lists length classes (a class is a set of byte values that
count as one element, e.g. the 70/71 pair that differs only by controller)
and characteristic controller-issued sequences. A device-day observation is
scored against every fingerprint as ``m + m / k`` where ``m`` is the number
of length classes hit and ``k`` the number of classes in the fingerprint.
Ties on score go to the fingerprint matching more sequences.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from matterlens.errors import SchemaViolation
from matterlens.model import DeviceType, Direction, InteractionLabel, PacketRecord, RoleMap, classify_direction
from matterlens.sequencer import DEFAULT_WINDOW, LengthSequence, day_of, extract_sequences

TYPE_ORDER = tuple(DeviceType)
HOME_ASSISTANT_LEN = 71
APPLE_GOOGLE_LEN = 70


@dataclass(frozen=True)
class Fingerprint:
    device_type: DeviceType
    ira1_lengths: tuple[frozenset[int], ...] = ()
    sequences: tuple[tuple[frozenset[int], frozenset[int]], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "device_type", DeviceType(self.device_type))
        object.__setattr__(self, "ira1_lengths", tuple(frozenset(c) for c in self.ira1_lengths))
        object.__setattr__(
            self, "sequences", tuple((frozenset(a), frozenset(b)) for a, b in self.sequences)
        )
        if any(not c for c in self.ira1_lengths):
            raise ValueError(f"{self.device_type.value}: empty length class")

    def matches_sequence(self, seq: LengthSequence) -> bool:
        return any(seq.first_len in a and seq.second_len in b for a, b in self.sequences)


@dataclass(frozen=True)
class Observation:
    device_id: str
    day: str
    ira1_lengths: frozenset[int] = frozenset()
    sequences: Counter = field(default_factory=Counter)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ira1_lengths", frozenset(self.ira1_lengths))
        object.__setattr__(self, "sequences", Counter(self.sequences))

    @property
    def is_empty(self) -> bool:
        return not self.ira1_lengths and not self.sequences

    def controller_hint(self) -> Optional[str]:
        """Which controller family issued the level command, if that is visible."""
        seen = {HOME_ASSISTANT_LEN, APPLE_GOOGLE_LEN} & self.ira1_lengths
        if seen == {HOME_ASSISTANT_LEN}:
            return "HomeAssistant"
        if seen == {APPLE_GOOGLE_LEN}:
            return "AppleGoogle"
        if seen:
            return "mixed"
        return None


@dataclass(frozen=True, order=True)
class Score:
    value: Fraction
    matched_sequences: int


class FingerprintDB:
    """Fingerprints held in the fixed type order used for tie-breaking."""

    def __init__(self, fingerprints: Iterable[Fingerprint]):
        by_type: dict[DeviceType, Fingerprint] = {}
        for fp in fingerprints:
            if fp.device_type in by_type:
                raise ValueError(f"duplicate fingerprint for {fp.device_type.value}")
            by_type[fp.device_type] = fp
        if not by_type:
            raise ValueError("fingerprint database is empty")
        self.fingerprints: tuple[Fingerprint, ...] = tuple(by_type[t] for t in TYPE_ORDER if t in by_type)

    def __iter__(self):
        return iter(self.fingerprints)

    def __len__(self) -> int:
        return len(self.fingerprints)

    def __getitem__(self, device_type: DeviceType | str) -> Fingerprint:
        device_type = DeviceType(device_type)
        for fp in self.fingerprints:
            if fp.device_type is device_type:
                return fp
        raise KeyError(device_type)

    @classmethod
    def from_json(cls, doc: Mapping) -> FingerprintDB:
        if not isinstance(doc, Mapping):
            raise SchemaViolation("fingerprint database must be a JSON object")

        def as_class(item) -> frozenset[int]:
            values = item if isinstance(item, list) else [item]
            if not values or not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
                raise SchemaViolation(f"bad length class {item!r}")
            return frozenset(values)

        fps = []
        for name, body in doc.items():
            try:
                device_type = DeviceType(name)
            except ValueError:
                raise SchemaViolation(f"unknown device type {name!r}") from None
            if not isinstance(body, Mapping):
                raise SchemaViolation(f"{name}: expected an object")
            seqs = []
            for seq in body.get("sequences", []):
                if not isinstance(seq, list) or len(seq) != 2:
                    raise SchemaViolation(f"{name}: sequence must be a [first, second] pair")
                seqs.append((as_class(seq[0]), as_class(seq[1])))
            fps.append(Fingerprint(device_type, tuple(as_class(c) for c in body.get("lengths", [])), tuple(seqs)))
        try:
            return cls(fps)
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> FingerprintDB:
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc

    @classmethod
    def default(cls) -> FingerprintDB:
        text = resources.files("matterlens").joinpath("data/fingerprints.json").read_text(encoding="utf-8")
        return cls.from_json(json.loads(text))


def score(obs: Observation, fp: Fingerprint) -> Score:
    k = len(fp.ira1_lengths)
    m = sum(1 for cls in fp.ira1_lengths if cls & obs.ira1_lengths)
    value = Fraction(m) + Fraction(m, k) if k else Fraction(0)
    matched = sum(1 for seq in obs.sequences if fp.matches_sequence(seq))
    return Score(value, matched)


def score_all(obs: Observation, db: FingerprintDB) -> dict[DeviceType, Score]:
    return {fp.device_type: score(obs, fp) for fp in db}


def classify_device(obs: Observation, db: FingerprintDB) -> DeviceType:
    scores = score_all(obs, db)
    if all(s.value == 0 for s in scores.values()):
        return DeviceType.SENSOR
    best = None
    for fp in db:  # db order breaks the remaining ties
        s = scores[fp.device_type]
        if best is None or (s.value, s.matched_sequences) > (scores[best].value, scores[best].matched_sequences):
            best = fp.device_type
    return best


def build_observation(
    labeled: Sequence[tuple[PacketRecord, InteractionLabel]],
    roles: RoleMap,
    device_id: str,
    day: str,
    window: float = DEFAULT_WINDOW,
) -> Observation:
    """Observation for one device-day from its labeled packets.

    Only controller-to-device packets labeled IRA1 or TRA contribute.
    """
    command_pkts = [
        rec
        for rec, label in labeled
        if label in (InteractionLabel.IRA1, InteractionLabel.TRA)
        and rec.dst_id == device_id
        and classify_direction(rec, roles) is Direction.CONTROLLER_TO_DEVICE
    ]
    lengths = frozenset(
        rec.payload_len
        for rec, label in labeled
        if label is InteractionLabel.IRA1
        and rec.dst_id == device_id
        and classify_direction(rec, roles) is Direction.CONTROLLER_TO_DEVICE
    )
    seqs: Counter = Counter()
    for counter in extract_sequences(command_pkts, roles, window).values():
        seqs.update(counter)
    return Observation(device_id, day, lengths, seqs)


@dataclass(frozen=True)
class DeviceVerdict:
    observation: Observation
    device_type: DeviceType
    scores: dict

    @property
    def device_id(self) -> str:
        return self.observation.device_id

    @property
    def day(self) -> str:
        return self.observation.day

    def to_json(self) -> dict:
        obs = self.observation
        return {
            "device_id": obs.device_id,
            "day": obs.day,
            "device_type": self.device_type.value,
            "ira1_lengths": sorted(obs.ira1_lengths),
            "sequences": [[s.first_len, s.second_len, n] for s, n in sorted(obs.sequences.items())],
            "scores": {t.value: [str(s.value), s.matched_sequences] for t, s in self.scores.items()},
            "controller_hint": obs.controller_hint(),
        }


def classify_trace(
    labeled: Sequence[tuple[PacketRecord, InteractionLabel]],
    roles: RoleMap,
    db: Optional[FingerprintDB] = None,
    window: float = DEFAULT_WINDOW,
    timezone_offset: float = 0.0,
) -> dict[tuple[str, str], DeviceVerdict]:
    """Classify every device-day that carries any controller traffic."""
    db = db or FingerprintDB.default()
    groups: dict[tuple[str, str], list] = defaultdict(list)
    for rec, label in labeled:
        device = roles.device_of(rec)
        if device is not None:
            groups[(device, day_of(rec.timestamp, timezone_offset))].append((rec, label))
    out = {}
    for (device, day), rows in sorted(groups.items()):
        obs = build_observation(rows, roles, device, day, window)
        out[(device, day)] = DeviceVerdict(obs, classify_device(obs, db), score_all(obs, db))
    return out
