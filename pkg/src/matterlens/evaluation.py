"""Confusion matrices, macro-averaged metrics, robustness sweeps and report files.

Precision, recall and F1 are macro-averaged over the ground-truth classes
present in the evaluated rows. ``Unknown`` can be predicted but is never a
ground-truth class; a class that is never predicted has precision 0.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from matterlens.errors import MisalignedTraces
from matterlens.fingerprint import FingerprintDB, classify_trace
from matterlens.labeler import DEFAULT_RULES, RuleSet, label_records
from matterlens.model import DeviceType, InteractionLabel, PacketRecord
from matterlens.perturb import DEFAULT_DELAY, inject_delay, inject_loss
from matterlens.sequencer import DEFAULT_WINDOW
from matterlens.synth import Fleet, ScenarioConfig, SyntheticTrace, all_on_off_probability, generate

AVERAGING = "macro"
TABLE_LEVELS = (0.05, 0.10, 0.25, 0.50)


class Subset(str, Enum):
    ALL = "All"
    UNUSUAL = "UnusualOnly"


UNUSUAL_LABELS = frozenset(
    {InteractionLabel.IRA1, InteractionLabel.MULTI_ATTR_RRA, InteractionLabel.SINGLE_ATTR_RRA, InteractionLabel.WRA1}
)


class SweepKind(str, Enum):
    LOSS = "loss"
    DELAY = "delay"


@dataclass
class EvalReport:
    labels: tuple[str, ...]
    confusion: np.ndarray  # rows: truth, columns: prediction, both indexed by ``labels``
    accuracy: float
    recall: float
    precision: float
    f1: float
    support: int
    classes: tuple[str, ...]
    subset: Subset = Subset.ALL
    sweep_point: Optional[tuple[str, float]] = None
    seed: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "subset": self.subset.value,
            "averaging": AVERAGING,
            "sweep_point": list(self.sweep_point) if self.sweep_point else None,
            "seed": self.seed,
            "support": self.support,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "classes": list(self.classes),
            "labels": list(self.labels),
            "confusion": self.confusion.tolist(),
        }


def score_predictions(
    truth: Sequence[str], pred: Sequence[str], labels: Sequence[str], subset: Subset = Subset.ALL
) -> EvalReport:
    """Metrics for aligned truth/prediction sequences of label names.

    ``labels`` fixes the row and column order of the confusion matrix and
    must contain every value that occurs in either sequence.
    """
    if len(truth) != len(pred):
        raise MisalignedTraces(f"{len(truth)} truth rows vs {len(pred)} predictions")
    if not truth:
        raise MisalignedTraces("nothing to evaluate")
    index = {lab: i for i, lab in enumerate(labels)}
    try:
        t_idx = np.fromiter((index[t] for t in truth), dtype=np.int64, count=len(truth))
        p_idx = np.fromiter((index[p] for p in pred), dtype=np.int64, count=len(pred))
    except KeyError as exc:
        raise MisalignedTraces(f"label {exc.args[0]!r} missing from label set") from None
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(cm, (t_idx, p_idx), 1)

    total = int(cm.sum())
    present = [i for i in range(len(labels)) if cm[i].sum() > 0]
    recalls, precisions, f1s = [], [], []
    for i in present:
        tp = cm[i, i]
        r = tp / cm[i].sum()
        predicted = cm[:, i].sum()
        p = tp / predicted if predicted else 0.0
        recalls.append(r)
        precisions.append(p)
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return EvalReport(
        labels=tuple(labels),
        confusion=cm,
        accuracy=100.0 * float(np.trace(cm)) / total,
        recall=100.0 * float(np.mean(recalls)),
        precision=100.0 * float(np.mean(precisions)),
        f1=100.0 * float(np.mean(f1s)),
        support=total,
        classes=tuple(labels[i] for i in present),
        subset=subset,
    )


def labels_by_counter(records: Iterable[PacketRecord], labels: Iterable[InteractionLabel]) -> dict[int, InteractionLabel]:
    out: dict[int, InteractionLabel] = {}
    for rec, lab in zip(records, labels, strict=True):
        if rec.message_counter in out:
            raise MisalignedTraces(f"message counter {rec.message_counter} occurs twice")
        out[rec.message_counter] = lab
    return out


LABEL_ORDER = tuple(lab.value for lab in InteractionLabel)


def evaluate_labels(
    pred: Mapping[int, InteractionLabel],
    truth: Mapping[int, InteractionLabel],
    subset: Subset | str = Subset.ALL,
) -> EvalReport:
    """Score packet labels keyed by message counter.

    Every predicted counter must exist in ``truth``; truth rows without a
    prediction (lost packets) are not scored.
    """
    subset = Subset(subset)
    if not pred:
        raise MisalignedTraces("no predictions")
    extra = set(pred) - set(truth)
    if extra:
        raise MisalignedTraces(f"{len(extra)} predicted counters have no ground truth (e.g. {min(extra)})")
    keys = sorted(pred)
    if subset is Subset.UNUSUAL:
        keys = [k for k in keys if InteractionLabel(truth[k]) in UNUSUAL_LABELS]
    if any(InteractionLabel(truth[k]) is InteractionLabel.UNKNOWN for k in keys):
        raise MisalignedTraces("ground truth may not contain Unknown")
    t = [InteractionLabel(truth[k]).value for k in keys]
    p = [InteractionLabel(pred[k]).value for k in keys]
    return score_predictions(t, p, LABEL_ORDER, subset)


DEVICE_ORDER = tuple(t.value for t in DeviceType)


def evaluate_devices(pred: Mapping[Hashable, DeviceType], truth: Mapping[Hashable, DeviceType]) -> EvalReport:
    """Score one device-type prediction per device-day."""
    if not pred or not truth:
        raise MisalignedTraces("empty prediction or truth set")
    if set(pred) != set(truth):
        missing = len(set(truth) - set(pred))
        extra = len(set(pred) - set(truth))
        raise MisalignedTraces(f"device-days differ: {missing} without prediction, {extra} without truth")
    keys = sorted(pred)
    t = [DeviceType(truth[k]).value for k in keys]
    p = [DeviceType(pred[k]).value for k in keys]
    return score_predictions(t, p, DEVICE_ORDER)


# pipelines


def label_and_score(
    records: Sequence[PacketRecord],
    data: SyntheticTrace,
    rules: RuleSet = DEFAULT_RULES,
    window: float = DEFAULT_WINDOW,
) -> list[EvalReport]:
    labels = label_records(records, data.roles, rules, window)
    pred = labels_by_counter(records, labels)
    return [evaluate_labels(pred, data.truth, s) for s in Subset]


def classify_and_score(
    data: SyntheticTrace,
    rules: RuleSet = DEFAULT_RULES,
    db: Optional[FingerprintDB] = None,
    window: float = DEFAULT_WINDOW,
) -> EvalReport:
    labels = label_records(data.records, data.roles, rules, window)
    verdicts = classify_trace(list(zip(data.records, labels)), data.roles, db, window)
    return evaluate_devices({k: v.device_type for k, v in verdicts.items()}, data.device_truth)


def robustness_sweep(
    scenario: ScenarioConfig | Fleet,
    levels: Sequence[float],
    kind: SweepKind | str,
    seeds: Sequence[int],
    rules: RuleSet = DEFAULT_RULES,
    window: float = DEFAULT_WINDOW,
    delay: float = DEFAULT_DELAY,
) -> list[EvalReport]:
    """Label and score perturbed copies of generated traces.

    Each seed generates one trace and drives the perturbation draws at every
    level, so a higher level perturbs a superset of the packets of a lower one.
    Returns reports for both subsets at every (seed, level).
    """
    kind = SweepKind(kind)
    if any(not 0.0 <= lv <= 1.0 for lv in levels):
        raise ValueError("sweep levels must lie in [0, 1]")
    reports = []
    for seed in seeds:
        data = generate(scenario, seed=seed)
        for level in levels:
            if kind is SweepKind.LOSS:
                records = inject_loss(data.records, level, seed)
            else:
                records = inject_delay(data.records, level, delay, seed)
            for rep in label_and_score(records, data, rules, window):
                rep.sweep_point = (kind.value, level)
                rep.seed = seed
                reports.append(rep)
    return reports


@dataclass
class SummaryRow:
    kind: str
    level: float
    subset: str
    n_seeds: int
    mean: dict
    std: dict


METRICS = ("accuracy", "recall", "precision", "f1")


def summarize(reports: Iterable[EvalReport]) -> list[SummaryRow]:
    """Mean and sample standard deviation across seeds per (kind, level, subset)."""
    groups: dict[tuple, list[EvalReport]] = defaultdict(list)
    for rep in reports:
        kind, level = rep.sweep_point if rep.sweep_point else ("none", 0.0)
        groups[(kind, level, rep.subset.value)].append(rep)
    rows = []
    subset_rank = {s.value: i for i, s in enumerate(Subset)}
    for (kind, level, subset), reps in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], subset_rank[kv[0][2]])):
        mean = {m: statistics.fmean(getattr(r, m) for r in reps) for m in METRICS}
        std = {m: statistics.stdev(getattr(r, m) for r in reps) if len(reps) > 1 else 0.0 for m in METRICS}
        rows.append(SummaryRow(kind, level, subset, len(reps), mean, std))
    return rows


def sweep_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "subset", *METRICS, *(f"{m}_std" for m in METRICS), "kind", "n_seeds", "averaging"])
    for row in rows:
        writer.writerow(
            [
                f"{row.level:g}",
                row.subset,
                *(f"{row.mean[m]:.4f}" for m in METRICS),
                *(f"{row.std[m]:.4f}" for m in METRICS),
                row.kind,
                row.n_seeds,
                AVERAGING,
            ]
        )
    return buf.getvalue()


def reports_json(reports: Iterable[EvalReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=1) + "\n"


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


# table reproductions


def labeling_table(scenario: ScenarioConfig | Fleet, seeds: Sequence[int], rules: RuleSet = DEFAULT_RULES) -> list[SummaryRow]:
    """Unperturbed labeling performance on both subsets."""
    return summarize(robustness_sweep(scenario, [0.0], SweepKind.LOSS, seeds, rules))


@dataclass
class DeviceRow:
    experiment: str
    report: EvalReport
    oracle_accuracy: Optional[float]


def device_table(experiments: Mapping[str, ScenarioConfig | Fleet], seed: int, rules: RuleSet = DEFAULT_RULES) -> list[DeviceRow]:
    """Device-type classification per experiment.

    Single-device scenarios get an analytic accuracy reference: the chance
    that a day carries at least one command other than On/Off.
    """
    rows = []
    for name, scenario in experiments.items():
        report = classify_and_score(generate(scenario, seed=seed), rules)
        oracle = None
        if isinstance(scenario, ScenarioConfig) and scenario.fixed_commands is None and scenario.command_distribution:
            oracle = 100.0 * (1.0 - all_on_off_probability(scenario.interactions_per_day, scenario.command_distribution))
        rows.append(DeviceRow(name, report, oracle))
    return rows


def device_csv(rows: Sequence[DeviceRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", *METRICS, "samples", "oracle_accuracy", "averaging"])
    for row in rows:
        rep = row.report
        writer.writerow(
            [
                row.experiment,
                *(f"{getattr(rep, m):.4f}" for m in METRICS),
                rep.support,
                "" if row.oracle_accuracy is None else f"{row.oracle_accuracy:.4f}",
                AVERAGING,
            ]
        )
    return buf.getvalue()
