"""Ground-truth-labeled synthetic Matter metadata traces.

A scenario describes one device: how many invoke interactions happen per
day, which commands they carry and how long each command's IRA1 packet is.
Each interaction expands through a transaction template into packets with
known labels, so labeler and fingerprinter output can be scored exactly.
Optional background traffic (reads, writes, device reports) mimics the mix a
controller produces on its own.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from matterlens.errors import InvalidConfig, SchemaViolation
from matterlens.model import DeviceType, Direction, InteractionLabel as L, PacketRecord, RoleMap, endpoint_id
from matterlens.sequencer import day_of

C2D = Direction.CONTROLLER_TO_DEVICE
D2C = Direction.DEVICE_TO_CONTROLLER

DAY = 86400.0
DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc).timestamp()
PACKET_GAP = (0.05, 0.3)
TRAILING_GAP = (0.1, 0.4)
BLOCK_SEPARATION = 2.0
MATTER_PORT = 5540

END_LEN = 34
SRA2_LEN = 42
EMPTY_RDA_LEN = 41
DEFAULT_IRA2_LEN = 70
DEFAULT_WRA2_LEN = 65
DEFAULT_TRA_LEN = 39

# byte ranges for background traffic, chosen clear of every other rule band
MULTI_RRA_RANGE = (59, 66)
MULTI_RDA_RANGE = (80, 110)
SINGLE_RRA_RANGE = (51, 58)
SINGLE_RDA_RANGE = (44, 60)
WRA1_RANGE = (60, 66)
REPORT_RANGE = (76, 130)

PROB_TOLERANCE = 1e-9


class ControllerVariant(str, Enum):
    HOME_ASSISTANT = "HomeAssistant"
    APPLE_GOOGLE = "AppleGoogle"


class TransactionKind(str, Enum):
    INVOKE = "Invoke"
    TIMED_INVOKE = "TimedInvoke"
    READ = "Read"
    WRITE = "Write"
    REPORT = "Report"


@dataclass(frozen=True)
class Step:
    """One packet of a transaction: direction, label, and a fixed or ranged length."""

    direction: Direction
    label: L
    length: int | tuple[int, int]
    gap: tuple[float, float] = PACKET_GAP


@dataclass(frozen=True)
class TransactionTemplate:
    kind: TransactionKind
    steps: tuple[Step, ...]


def invoke_template(ira1_len: int, ira2_len: int = DEFAULT_IRA2_LEN) -> TransactionTemplate:
    return TransactionTemplate(
        TransactionKind.INVOKE,
        (Step(C2D, L.IRA1, ira1_len), Step(D2C, L.IRA2, ira2_len), Step(C2D, L.END, END_LEN)),
    )


def timed_invoke_template(
    ira1_len: int, ira2_len: int = DEFAULT_IRA2_LEN, tra_len: int = DEFAULT_TRA_LEN
) -> TransactionTemplate:
    return TransactionTemplate(
        TransactionKind.TIMED_INVOKE,
        (Step(C2D, L.TRA, tra_len), Step(D2C, L.SRA2, SRA2_LEN)) + invoke_template(ira1_len, ira2_len).steps,
    )


def read_template(multi: bool) -> TransactionTemplate:
    if multi:
        steps = (Step(C2D, L.MULTI_ATTR_RRA, MULTI_RRA_RANGE), Step(D2C, L.MULTI_ATTR_RDA, MULTI_RDA_RANGE))
    else:
        # the report answering a single-attribute read carries no label of its own
        steps = (Step(C2D, L.SINGLE_ATTR_RRA, SINGLE_RRA_RANGE), Step(D2C, L.NON_EMPTY_RDA, SINGLE_RDA_RANGE))
    return TransactionTemplate(TransactionKind.READ, steps + (Step(C2D, L.END, END_LEN),))


def write_template(wra2_len: int = DEFAULT_WRA2_LEN) -> TransactionTemplate:
    return TransactionTemplate(
        TransactionKind.WRITE,
        (Step(C2D, L.WRA1, WRA1_RANGE), Step(D2C, L.WRA2, wra2_len), Step(C2D, L.END, END_LEN)),
    )


def report_template(empty: bool) -> TransactionTemplate:
    first = Step(D2C, L.EMPTY_RDA, EMPTY_RDA_LEN) if empty else Step(D2C, L.NON_EMPTY_RDA, REPORT_RANGE)
    return TransactionTemplate(
        TransactionKind.REPORT, (first, Step(C2D, L.SRA2, SRA2_LEN), Step(D2C, L.END, END_LEN))
    )


BACKGROUND_KINDS = ("read_multi", "read_single", "write", "report", "report_empty")

# per-type command catalog: command -> IRA1 length (HomeAssistant variant)
LIGHTING_COMMANDS = {
    "OnOff": 59,
    "MoveToLevelWithOnOff": 71,
    "MoveToColorTemperature(warm)": 73,
    "MoveToColorTemperature(cool)": 72,
    "MoveToHueAndSaturation": 75,
}
COMMAND_CATALOG: dict[DeviceType, dict[str, int]] = {
    DeviceType.LIGHTING: LIGHTING_COMMANDS,
    DeviceType.PLUG: {"OnOff": 59},
    DeviceType.LOCK: {"LockDoor": 64, "UnlockDoor": 64},
    DeviceType.SENSOR: {},
}
VARIANT_OVERRIDES = {
    (DeviceType.LIGHTING, ControllerVariant.APPLE_GOOGLE): {"MoveToLevelWithOnOff": 70},
}
DEFAULT_TIMED = {DeviceType.LOCK: ("LockDoor", "UnlockDoor")}
DEFAULT_TRAILING = {
    DeviceType.LIGHTING: (
        "MoveToColorTemperature(warm)",
        "MoveToColorTemperature(cool)",
        "MoveToHueAndSaturation",
    )
}
TRAILING_COMMAND = "OnOff"


def default_command_lengths(device_type: DeviceType, variant: ControllerVariant) -> dict[str, int]:
    lengths = dict(COMMAND_CATALOG[device_type])
    lengths.update(VARIANT_OVERRIDES.get((device_type, variant), {}))
    return lengths


def _check_distribution(dist: Mapping, what: str) -> None:
    if not dist:
        raise InvalidConfig(f"{what} is empty")
    if any((not isinstance(p, (int, float))) or p < 0 or not math.isfinite(p) for p in dist.values()):
        raise InvalidConfig(f"{what} has a negative or non-numeric probability")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise InvalidConfig(f"{what} sums to {total!r}, not 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator settings for one simulated device.

    ``fixed_commands`` switches a scenario to full-repertoire mode: every day
    issues each listed command the given number of times, in random order,
    and the sampled distributions are ignored. ``background`` holds Poisson
    means per day for ``read_multi``, ``read_single``, ``write``, ``report``
    and ``report_empty`` transactions.
    """

    device_type: DeviceType
    days: int
    interactions_per_day: Mapping[int, float] = field(default_factory=dict)
    command_distribution: Mapping[str, float] = field(default_factory=dict)
    command_length_map: Optional[Mapping[str, int]] = None
    controller_variant: ControllerVariant = ControllerVariant.HOME_ASSISTANT
    seed: int = 0
    fixed_commands: Optional[Mapping[str, int]] = None
    background: Mapping[str, float] = field(default_factory=dict)
    timed_commands: Optional[Sequence[str]] = None
    trailing_commands: Optional[Sequence[str]] = None
    ira2_len: int = DEFAULT_IRA2_LEN
    wra2_len: int = DEFAULT_WRA2_LEN
    tra_len: int = DEFAULT_TRA_LEN
    name: Optional[str] = None
    start: float = DEFAULT_START

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "device_type", DeviceType(self.device_type))
            object.__setattr__(self, "controller_variant", ControllerVariant(self.controller_variant))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        object.__setattr__(self, "interactions_per_day", {int(k): float(v) for k, v in self.interactions_per_day.items()})
        object.__setattr__(self, "command_distribution", dict(self.command_distribution))
        if self.command_length_map is None:
            object.__setattr__(
                self, "command_length_map", default_command_lengths(self.device_type, self.controller_variant)
            )
        else:
            object.__setattr__(self, "command_length_map", dict(self.command_length_map))
        if self.timed_commands is None:
            object.__setattr__(self, "timed_commands", DEFAULT_TIMED.get(self.device_type, ()))
        if self.trailing_commands is None:
            object.__setattr__(self, "trailing_commands", DEFAULT_TRAILING.get(self.device_type, ()))
        object.__setattr__(self, "timed_commands", tuple(self.timed_commands))
        object.__setattr__(self, "trailing_commands", tuple(self.trailing_commands))
        object.__setattr__(self, "background", dict(self.background))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.days, int) or self.days < 0:
            raise InvalidConfig(f"days must be a non-negative integer, got {self.days!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must fit in 64 unsigned bits")
        lengths = self.command_length_map
        if self.fixed_commands is not None:
            for cmd, count in self.fixed_commands.items():
                if cmd not in lengths:
                    raise InvalidConfig(f"unknown command {cmd!r}")
                if not isinstance(count, int) or count < 0:
                    raise InvalidConfig(f"count for {cmd!r} must be a non-negative integer")
        elif self.interactions_per_day or self.command_distribution:
            _check_distribution(self.interactions_per_day, "interactions_per_day")
            if any(n < 0 for n in self.interactions_per_day):
                raise InvalidConfig("interaction counts must be non-negative")
            _check_distribution(self.command_distribution, "command_distribution")
            for cmd in self.command_distribution:
                if cmd not in lengths:
                    raise InvalidConfig(f"unknown command {cmd!r}")
        for cmd in (*self.timed_commands, *self.trailing_commands):
            if cmd not in lengths and (self.fixed_commands or self.command_distribution):
                raise InvalidConfig(f"unknown command {cmd!r}")
        if self.trailing_commands and TRAILING_COMMAND not in lengths:
            raise InvalidConfig(f"trailing commands need a length for {TRAILING_COMMAND!r}")
        for kind, mean in self.background.items():
            if kind not in BACKGROUND_KINDS:
                raise InvalidConfig(f"unknown background kind {kind!r}")
            if mean < 0:
                raise InvalidConfig(f"background rate for {kind!r} is negative")
        if any(v <= 0 for v in lengths.values()):
            raise InvalidConfig("command lengths must be positive")

    @property
    def mean_interactions(self) -> float:
        return sum(n * p for n, p in self.interactions_per_day.items())

    def to_json(self) -> dict:
        doc = {
            "device_type": self.device_type.value,
            "days": self.days,
            "interactions_per_day": [[n, p] for n, p in sorted(self.interactions_per_day.items())],
            "command_distribution": dict(self.command_distribution),
            "command_length_map": dict(self.command_length_map),
            "controller_variant": self.controller_variant.value,
            "seed": self.seed,
            "background": dict(self.background),
            "timed_commands": list(self.timed_commands),
            "trailing_commands": list(self.trailing_commands),
            "ira2_len": self.ira2_len,
            "wra2_len": self.wra2_len,
            "tra_len": self.tra_len,
            "start": self.start,
        }
        if self.fixed_commands is not None:
            doc["fixed_commands"] = dict(self.fixed_commands)
        if self.name is not None:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> ScenarioConfig:
        if not isinstance(doc, Mapping):
            raise SchemaViolation("scenario must be a JSON object")
        kwargs = dict(doc)
        ipd = kwargs.get("interactions_per_day")
        if isinstance(ipd, list):
            kwargs["interactions_per_day"] = {int(n): p for n, p in ipd}
        elif isinstance(ipd, Mapping):
            kwargs["interactions_per_day"] = {int(n): p for n, p in ipd.items()}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise SchemaViolation(f"bad scenario: {exc}") from exc


@dataclass(frozen=True)
class Fleet:
    """Several device scenarios sharing one controller, generated under one seed."""

    scenarios: tuple[ScenarioConfig, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise InvalidConfig("fleet has no devices")

    def to_json(self) -> dict:
        return {"seed": self.seed, "devices": [s.to_json() for s in self.scenarios]}

    @classmethod
    def from_json(cls, doc: Mapping) -> Fleet:
        devices = doc.get("devices")
        if not isinstance(devices, list):
            raise SchemaViolation("fleet needs a 'devices' list")
        return cls(tuple(ScenarioConfig.from_json(d) for d in devices), int(doc.get("seed", 0)))


def load_scenario(source: str | Path) -> ScenarioConfig | Fleet:
    """Load a scenario or fleet from a JSON file or a bundled preset name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        preset = resources.files("matterlens").joinpath(f"data/scenarios/{source}.json")
        if not preset.is_file():
            raise InvalidConfig(f"no scenario file or preset named {source!r}")
        text = preset.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{source}: invalid JSON: {exc}") from exc
    if isinstance(doc, Mapping) and "devices" in doc:
        return Fleet.from_json(doc)
    return ScenarioConfig.from_json(doc)


def with_seed(config: ScenarioConfig | Fleet, seed: int) -> ScenarioConfig | Fleet:
    return replace(config, seed=seed)


# sampling


def sample_commands(dist: Mapping[str, float], n: int, rng: np.random.Generator) -> list[str]:
    """``n`` i.i.d. command draws from ``dist``."""
    _check_distribution(dist, "command distribution")
    names = list(dist)
    probs = np.array([dist[k] for k in names], dtype=float)
    idx = rng.choice(len(names), size=n, p=probs / probs.sum())
    return [names[i] for i in idx]


def sample_interaction_counts(dist: Mapping[int, float], days: int, rng: np.random.Generator) -> np.ndarray:
    _check_distribution(dist, "interactions_per_day")
    values = np.array(sorted(dist), dtype=np.int64)
    probs = np.array([dist[v] for v in values], dtype=float)
    return rng.choice(values, size=days, p=probs / probs.sum())


# generation


@dataclass
class SyntheticTrace:
    records: list[PacketRecord]
    truth: dict[int, L]
    device_truth: dict[tuple[str, str], DeviceType]
    roles: RoleMap

    def labels(self) -> list[L]:
        return [self.truth[r.message_counter] for r in self.records]

    def truth_rows(self) -> list[dict]:
        rows = [{"kind": "packet", "message_counter": c, "label": lab.value} for c, lab in self.truth.items()]
        rows += [
            {"kind": "device_day", "device_id": dev, "day": day, "device_type": t.value}
            for (dev, day), t in sorted(self.device_truth.items())
        ]
        return rows


CONTROLLER_ID = endpoint_id("fd00::1", "02:00:00:00:00:01")


def device_endpoint(index: int) -> str:
    return endpoint_id(f"fd00::{index + 16:x}", f"02:00:00:00:00:{index + 16:02x}")


def _expand(template: TransactionTemplate, rng: np.random.Generator, t0: float) -> list[tuple[float, Direction, int, L]]:
    out = []
    t = t0
    for i, step in enumerate(template.steps):
        if i:
            t += rng.uniform(*step.gap)
        length = step.length if isinstance(step.length, int) else int(rng.integers(step.length[0], step.length[1] + 1))
        out.append((t, step.direction, length, step.label))
    return out


def _command_block(cfg: ScenarioConfig, command: str, rng: np.random.Generator) -> list:
    lengths = cfg.command_length_map
    if command in cfg.timed_commands:
        template = timed_invoke_template(lengths[command], cfg.ira2_len, cfg.tra_len)
    else:
        template = invoke_template(lengths[command], cfg.ira2_len)
    packets = _expand(template, rng, 0.0)
    if command in cfg.trailing_commands:
        t = packets[-1][0] + rng.uniform(*TRAILING_GAP)
        packets += _expand(invoke_template(lengths[TRAILING_COMMAND], cfg.ira2_len), rng, t)
    return packets


def _background_blocks(cfg: ScenarioConfig, rng: np.random.Generator) -> list:
    blocks = []
    for kind in BACKGROUND_KINDS:
        mean = cfg.background.get(kind, 0.0)
        if mean <= 0:
            continue
        template = {
            "read_multi": lambda: read_template(multi=True),
            "read_single": lambda: read_template(multi=False),
            "write": lambda: write_template(cfg.wra2_len),
            "report": lambda: report_template(empty=False),
            "report_empty": lambda: report_template(empty=True),
        }[kind]()
        for _ in range(int(rng.poisson(mean))):
            blocks.append(_expand(template, rng, 0.0))
    return blocks


def _day_commands(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> list[str]:
    if cfg.fixed_commands is not None:
        cmds = [c for c, k in cfg.fixed_commands.items() for _ in range(k)]
        return [cmds[i] for i in rng.permutation(len(cmds))]
    if n <= 0:
        return []
    return sample_commands(cfg.command_distribution, n, rng)


def _place(blocks: list[list], rng: np.random.Generator) -> list[list]:
    """Spread blocks uniformly over a day without letting any two come closer than the separation."""
    if not blocks:
        return []
    order = rng.permutation(len(blocks))
    blocks = [blocks[i] for i in order]
    spans = [b[-1][0] - b[0][0] + BLOCK_SEPARATION for b in blocks]
    free = DAY - 2 * BLOCK_SEPARATION - sum(spans)
    if free < 0:
        raise InvalidConfig("too many interactions to fit in one day")
    starts = np.sort(rng.uniform(0.0, free, size=len(blocks)))
    placed = []
    offset = BLOCK_SEPARATION
    for block, start, span in zip(blocks, starts, spans):
        shift = start + offset
        placed.append([(t + shift, *rest) for t, *rest in block])
        offset += span
    return placed


def generate_fleet(fleet: Fleet) -> SyntheticTrace:
    """Generate all devices of ``fleet`` into one time-ordered trace."""
    rng = np.random.default_rng(fleet.seed)
    names: dict[str, str] = {}
    raw: list[tuple[float, str, Direction, int, L]] = []
    device_truth: dict[tuple[str, str], DeviceType] = {}

    for index, cfg in enumerate(fleet.scenarios):
        dev = device_endpoint(index)
        names[dev] = cfg.name or f"{cfg.device_type.value.lower()}-{index}"
        if cfg.fixed_commands is None and cfg.interactions_per_day:
            counts = sample_interaction_counts(cfg.interactions_per_day, cfg.days, rng)
        else:
            counts = np.zeros(cfg.days, dtype=np.int64)
        for d in range(cfg.days):
            blocks = [_command_block(cfg, c, rng) for c in _day_commands(cfg, int(counts[d]), rng)]
            blocks += _background_blocks(cfg, rng)
            day_start = cfg.start + d * DAY
            for block in _place(blocks, rng):
                for t, direction, length, label in block:
                    raw.append((round(day_start + t, 6), dev, direction, length, label))
            if blocks:
                device_truth[(dev, day_of(day_start))] = cfg.device_type

    raw.sort(key=lambda row: row[0])
    base = int(rng.integers(0, 2**31))
    sessions = {dev: int(rng.integers(1, 0xFFFF)) for dev in names}
    records = []
    truth: dict[int, L] = {}
    for i, (t, dev, direction, length, label) in enumerate(raw):
        counter = (base + i) & 0xFFFFFFFF
        src, dst = (CONTROLLER_ID, dev) if direction is C2D else (dev, CONTROLLER_ID)
        records.append(
            PacketRecord(
                timestamp=t,
                src_id=src,
                dst_id=dst,
                src_port=MATTER_PORT,
                dst_port=MATTER_PORT,
                payload_len=length,
                session_id=sessions[dev],
                message_counter=counter,
            )
        )
        truth[counter] = label
    roles = RoleMap(frozenset({CONTROLLER_ID}), names)
    return SyntheticTrace(records, truth, device_truth, roles)


def generate(config: ScenarioConfig | Fleet, seed: Optional[int] = None) -> SyntheticTrace:
    """Generate a labeled trace for a single scenario or a fleet.

    ``seed`` overrides the seed stored in the configuration.
    """
    if isinstance(config, ScenarioConfig):
        config = Fleet((config,), config.seed)
    if seed is not None:
        config = replace(config, seed=seed)
    return generate_fleet(config)


def all_on_off_probability(interactions_per_day: Mapping[int, float], command_distribution: Mapping[str, float]) -> float:
    """Probability that a day's commands are all On/Off, by direct summation."""
    p = command_distribution.get("OnOff", 0.0)
    return math.fsum(q * p**n for n, q in interactions_per_day.items())


def write_truth(data: SyntheticTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in data.truth_rows():
            fh.write(json.dumps(row) + "\n")


def read_truth(path: str | Path) -> tuple[dict[int, L], dict[tuple[str, str], DeviceType]]:
    """Read a ground-truth file into packet labels and device-day types."""
    packets: dict[int, L] = {}
    devices: dict[tuple[str, str], DeviceType] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
                if row["kind"] == "packet":
                    packets[int(row["message_counter"])] = L.parse(row["label"])
                elif row["kind"] == "device_day":
                    devices[(row["device_id"], row["day"])] = DeviceType(row["device_type"])
                else:
                    raise SchemaViolation(f"unknown row kind {row['kind']!r}", lineno)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"bad truth row: {exc}", lineno) from exc
    return packets, devices
