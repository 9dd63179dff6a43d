"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error. Data errors are also
reported as one JSON object on stderr. Any files a failing command already
wrote are removed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterator, Optional

from matterlens import __version__
from matterlens.errors import MatterLensError, MisalignedTraces, SchemaViolation
from matterlens.evaluation import (
    TABLE_LEVELS,
    Subset,
    SweepKind,
    device_csv,
    device_table,
    evaluate_devices,
    evaluate_labels,
    labeling_table,
    reports_json,
    robustness_sweep,
    summarize,
    sweep_csv,
)
from matterlens.fingerprint import FingerprintDB, classify_trace
from matterlens.ingest import LinkType, dedup_retransmissions, parse_capture, read_trace, write_trace
from matterlens.labeler import OverlapPolicy, RuleSet, label_trace, read_labeled_trace, write_labeled_trace
from matterlens.model import DeviceType, RoleMap, infer_roles
from matterlens.perturb import DEFAULT_DELAY, Order, PadStrategy, PerturbationSpec, perturb
from matterlens.sequencer import DEFAULT_WINDOW
from matterlens.synth import Fleet, generate, load_scenario, read_truth, write_truth

log = logging.getLogger("matterlens")

EXIT_USAGE = 2
EXIT_DATA = 3
SEED_ENV = "MATTERLENS_SEED"
REPRO_SEED = 42
REPRO_FILES = {
    "labeling": "labeling.csv",
    "loss": "loss.csv",
    "delay": "delay.csv",
    "devices": "devices.csv",
}


class UsageError(Exception):
    pass


class Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self) -> None:
        self.written: list[Path] = []

    def path(self, target: str | Path) -> Path:
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(target)
        return target

    def write(self, target: str | Path, text: str) -> None:
        target = self.path(target)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def cleanup(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


@contextmanager
def tracked_outputs() -> Iterator[Outputs]:
    outputs = Outputs()
    try:
        yield outputs
    except BaseException:
        outputs.cleanup()
        raise


def resolve_seed(value: Optional[int], default: Optional[int] = None) -> Optional[int]:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return default


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _rules(args) -> RuleSet:
    rules = RuleSet.load(args.rules) if getattr(args, "rules", None) else RuleSet()
    policy = getattr(args, "overlap_policy", None)
    if policy:
        rules = replace(rules, overlap_policy=OverlapPolicy(policy))
    return rules


def _scenario(args):
    config = load_scenario(args.config)
    if getattr(args, "days", None) is not None:
        if isinstance(config, Fleet):
            config = replace(config, scenarios=tuple(replace(s, days=args.days) for s in config.scenarios))
        else:
            config = replace(config, days=args.days)
    return config


# subcommands


def cmd_ingest(args, out: Outputs) -> dict:
    parsed = parse_capture(args.capture, args.link_type, len_offset=args.len_offset, keep_payload=not args.no_payload)
    records = parsed.records if args.keep_retransmissions else dedup_retransmissions(parsed.records)
    write_trace(records, out.path(args.out))
    summary = {"records": len(records), "skipped": parsed.skipped, "retransmissions": len(parsed.records) - len(records)}
    if args.infer_roles:
        infer_roles(records).save(out.path(args.infer_roles))
    return summary


def cmd_label(args, out: Outputs) -> dict:
    records = read_trace(args.trace)
    roles = RoleMap.load(args.roles)
    labeled = label_trace(records, roles, _rules(args), args.window_secs)
    write_labeled_trace(labeled, out.path(args.out))
    counts: dict[str, int] = {}
    for _, lab in labeled:
        counts[lab.value] = counts.get(lab.value, 0) + 1
    return {"records": len(labeled), "labels": dict(sorted(counts.items()))}


def cmd_fingerprint(args, out: Outputs) -> dict:
    labeled = read_labeled_trace(args.labeled)
    roles = RoleMap.load(args.roles)
    db = FingerprintDB.load(args.fingerprints) if args.fingerprints else FingerprintDB.default()
    verdicts = classify_trace(labeled, roles, db, args.window_secs, args.tz_offset)
    out.write(args.out, "".join(json.dumps(v.to_json()) + "\n" for v in verdicts.values()))
    counts: dict[str, int] = {}
    for v in verdicts.values():
        counts[v.device_type.value] = counts.get(v.device_type.value, 0) + 1
    return {"device_days": len(verdicts), "types": counts}


def cmd_synth(args, out: Outputs) -> dict:
    config = _scenario(args)
    data = generate(config, seed=resolve_seed(args.seed))
    write_trace(data.records, out.path(args.out_trace))
    write_truth(data, out.path(args.out_truth))
    if args.out_roles:
        data.roles.save(out.path(args.out_roles))
    return {"records": len(data.records), "device_days": len(data.device_truth)}


def cmd_perturb(args, out: Outputs) -> dict:
    seed = resolve_seed(args.seed, 0)
    spec = PerturbationSpec(
        loss_fraction=args.loss,
        delay_fraction=args.delay_frac,
        delay_delta=args.delay_secs,
        pad=PadStrategy.parse(args.pad),
        seed=seed,
        order=Order(args.order),
    )
    records = read_trace(args.trace)
    result = perturb(records, spec)
    write_trace(result, out.path(args.out))
    return {"records_in": len(records), "records_out": len(result), "order": spec.order.value, "seed": seed}


def _read_device_predictions(path) -> dict:
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
                preds[(row["device_id"], row["day"])] = DeviceType(row["device_type"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"bad device prediction row: {exc}", lineno) from exc
    return preds


def cmd_eval(args, out: Outputs) -> dict:
    packet_truth, device_truth = read_truth(args.truth)
    if args.devices:
        reports = [evaluate_devices(_read_device_predictions(args.pred), device_truth)]
    else:
        labeled = read_labeled_trace(args.pred)
        pred = {}
        for rec, lab in labeled:
            if rec.message_counter in pred:
                raise MisalignedTraces(f"message counter {rec.message_counter} occurs twice in predictions")
            pred[rec.message_counter] = lab
        subsets = list(Subset) if args.subset == "both" else [Subset(args.subset)]
        reports = [evaluate_labels(pred, packet_truth, s) for s in subsets]
    if args.out:
        if str(args.out).endswith(".json"):
            out.write(args.out, reports_json(reports))
        else:
            out.write(args.out, sweep_csv(summarize(reports)))
    return {
        r.subset.value: {m: round(getattr(r, m), 4) for m in ("accuracy", "recall", "precision", "f1")} for r in reports
    }


def cmd_sweep(args, out: Outputs) -> dict:
    config = _scenario(args)
    reports = robustness_sweep(
        config, args.levels, SweepKind(args.kind), args.seeds, _rules(args), args.window_secs, args.delay_secs
    )
    out.write(args.out, sweep_csv(summarize(reports)))
    if args.json_out:
        out.write(args.json_out, reports_json(reports))
    return {"reports": len(reports)}


def cmd_repro(args, out: Outputs) -> dict:
    seed = resolve_seed(args.seed, REPRO_SEED)
    seeds = [seed, seed + 1, seed + 2]
    outdir = Path(args.out)
    d2 = load_scenario("d2")
    if args.days is not None:
        d2 = replace(d2, days=args.days)
    out.write(outdir / REPRO_FILES["labeling"], sweep_csv(labeling_table(d2, seeds)))
    for kind in (SweepKind.LOSS, SweepKind.DELAY):
        rows = summarize(robustness_sweep(d2, TABLE_LEVELS, kind, seeds, delay=DEFAULT_DELAY))
        out.write(outdir / REPRO_FILES[kind.value], sweep_csv(rows))
    experiments = {"EXP1": load_scenario("exp1"), "EXP2": load_scenario("exp2"), "D3": load_scenario("d3")}
    out.write(outdir / REPRO_FILES["devices"], device_csv(device_table(experiments, seed)))
    return {"seed": seed, "files": sorted(REPRO_FILES.values())}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matterlens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        return p

    def window(p):
        p.add_argument("--window-secs", type=float, default=DEFAULT_WINDOW, help="sequence/pairing window (default 0.5)")

    def rules(p):
        p.add_argument("--rules", help="rule set JSON overriding the default thresholds")
        p.add_argument("--overlap-policy", choices=[o.value for o in OverlapPolicy])

    p = add("ingest", cmd_ingest, "capture file -> trace")
    p.add_argument("--capture", required=True)
    p.add_argument("--link-type", choices=[t.value for t in LinkType], help="default: from the capture header")
    p.add_argument("--len-offset", type=int, default=0, help="add this many bytes to every payload_len")
    p.add_argument("--no-payload", action="store_true", help="omit raw payload bytes from the trace")
    p.add_argument("--keep-retransmissions", action="store_true")
    p.add_argument("--infer-roles", metavar="PATH", help="also write a heuristic role map here")
    p.add_argument("--out", required=True)

    p = add("label", cmd_label, "trace -> labeled trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--roles", required=True)
    rules(p)
    window(p)
    p.add_argument("--out", required=True)

    p = add("fingerprint", cmd_fingerprint, "labeled trace -> device-day report")
    p.add_argument("--labeled", required=True)
    p.add_argument("--roles", required=True)
    p.add_argument("--fingerprints", help="fingerprint database JSON (default: bundled)")
    p.add_argument("--tz-offset", type=float, default=0.0, help="seconds added before computing the calendar day")
    window(p)
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "scenario -> trace + ground truth")
    p.add_argument("--config", required=True, help="scenario JSON or preset name (exp1, exp2, d2, d3)")
    p.add_argument("--seed", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--out-trace", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--out-roles")

    p = add("perturb", cmd_perturb, "trace -> perturbed trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--delay-frac", type=float, default=0.0)
    p.add_argument("--delay-secs", type=float, default=DEFAULT_DELAY)
    p.add_argument("--pad", default="none", help="none | uniform:N | bucket:N")
    p.add_argument("--order", choices=[o.value for o in Order], default=Order.LOSS_THEN_DELAY.value)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "predictions + truth -> metrics")
    p.add_argument("--pred", required=True, help="labeled trace, or device report with --devices")
    p.add_argument("--truth", required=True)
    p.add_argument("--devices", action="store_true")
    p.add_argument("--subset", choices=["both", *(s.value for s in Subset)], default="both")
    p.add_argument("--out", help="report path (.csv or .json)")

    p = add("sweep", cmd_sweep, "scenario -> loss/delay robustness table")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=[k.value for k in SweepKind], required=True)
    p.add_argument("--levels", type=_float_list, default=list(TABLE_LEVELS))
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p.add_argument("--days", type=int)
    p.add_argument("--delay-secs", type=float, default=DEFAULT_DELAY)
    rules(p)
    window(p)
    p.add_argument("--out", required=True)
    p.add_argument("--json-out")

    p = add("repro", cmd_repro, "regenerate the labeling, loss, delay and device tables")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--days", type=int, help="override the sweep scenario length")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with tracked_outputs() as out:
            summary = args.func(args, out)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except MatterLensError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
