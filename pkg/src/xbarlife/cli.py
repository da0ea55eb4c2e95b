"""Command-line front end.

Exit codes: 0 ok, 2 input error, 3 comparison mismatch, 4 arithmetic guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any

from .arch import AcceleratorConfig
from .engine import (PLAN_INFEASIBLE, CompareError, SimPolicy, SimReport, compare,
                     inference_latency, run)
from .faults import FaultToleranceProfile, ToyEvaluator, estimate_thresholds
from .scheduler import PlanInfeasible, bind, compute_batch_size, schedule
from .transpose import transpose_check
from .workload import GraphError, NetworkGraph, build_workload

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH, EXIT_GUARD = 0, 2, 3, 4

LADDER_ORDER = ["baseline", "+fault_handling", "+wear_leveling", "+batching", "+approximation"]
# published full-scale breakdown, shown for context only
REFERENCE_ROW = {"+fault_handling": 4.6, "+batching": 2.6, "total": 13.2}


class InputError(Exception):
    pass


def load_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e.strerror or e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def _config(exp: dict) -> AcceleratorConfig:
    c = dict(exp.get("config", {}))
    base = c.pop("base", "default")
    if base == "scaled":
        return AcceleratorConfig.scaled(**c)
    if base != "default":
        raise InputError(f"unknown config base {base!r}")
    return AcceleratorConfig.from_dict(c)


def _profile(exp: dict, g: NetworkGraph, base_dir: Path) -> FaultToleranceProfile | None:
    p = exp.get("profile")
    if p is None:
        return None
    if isinstance(p, str):
        p = load_json(base_dir / p)
    if "uniform" in p:
        return FaultToleranceProfile.uniform(g, int(p["uniform"]))
    return FaultToleranceProfile.from_dict(p)


def _policies(exp: dict, seed_override: int | None) -> tuple[list[SimPolicy], list[int]]:
    common = dict(exp.get("policy", {}))
    if exp.get("ladder"):
        pols = SimPolicy.ladder(**common)
    else:
        base = SimPolicy.from_dict(common)
        overrides = exp.get("policies") or [{}]
        pols = []
        for o in overrides:
            d = base.to_dict()
            wl = {**d["wl"], **o.get("wl", {})}
            d.update(o)
            d["wl"] = wl
            pols.append(SimPolicy.from_dict(d))
    seeds = [seed_override] if seed_override is not None else [int(s) for s in exp.get("seeds", [0])]
    return pols, seeds


def load_experiment(path: str, seed: int | None = None):
    exp = load_json(path)
    if not isinstance(exp, dict):
        raise InputError(f"{path}: top level must be an object")
    try:
        config = _config(exp)
        g = build_workload(exp["workload"])
        pols, seeds = _policies(exp, seed)
        profile = _profile(exp, g, Path(path).parent)
    except KeyError as e:
        raise InputError(f"{path}: missing key {e}") from e
    except (ValueError, TypeError, GraphError) as e:
        raise InputError(f"{path}: {e}") from e
    return config, g, pols, seeds, profile


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _emit(obj, as_json: bool, text: str) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True) if as_json else text)


def cmd_run(args) -> int:
    config, g, pols, seeds, profile = load_experiment(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    infeasible = False
    for i, pol in enumerate(pols):
        for s in seeds:
            p = pol.with_(seed=s)
            name = f"{i:02d}_{(p.label or 'policy').lstrip('+')}_seed{s}"
            try:
                rep = run(g, config, p, profile)
            except PlanInfeasible as e:
                print(f"{name}: initial plan infeasible: {e}", file=sys.stderr)
                infeasible = True
                entries.append({"name": name, "label": p.label, "seed": s, "error": str(e)})
                continue
            except ValueError as e:
                raise InputError(str(e)) from e
            d = out / name
            d.mkdir(exist_ok=True)
            (d / "report.json").write_text(rep.to_json())
            _write_csv(d / "throughput_series.csv", ["inference", "throughput_ips"],
                       [(n, repr(float(t))) for n, t in rep.throughput_series])
            _write_csv(d / "retired_columns.csv", ["inference", "cumulative_retired"],
                       rep.retired_columns_series)
            infeasible |= rep.stop_reason == PLAN_INFEASIBLE
            entries.append({"name": name, "label": p.label, "seed": s,
                            "report": f"{name}/report.json",
                            "throughput_series": f"{name}/throughput_series.csv",
                            "retired_columns": f"{name}/retired_columns.csv",
                            "lifespan_inferences": rep.lifespan_inferences,
                            "stop_reason": rep.stop_reason})
            if not args.json:
                print(f"{name}: {rep.lifespan_inferences} inferences, {rep.stop_reason}")
    (out / "index.json").write_text(json.dumps({"runs": entries}, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps({"runs": entries}, indent=2, sort_keys=True))
    if infeasible and not args.allow_infeasible:
        print("plan infeasible (use --allow-infeasible to accept)", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_plan(args) -> int:
    config, g, pols, _, _ = load_experiment(args.config, args.seed)
    pol = pols[0]
    bs = compute_batch_size(g, config.gbuffer_bytes, pol.activation_bits, pol.batch_cap)
    B = bs.batch_size if pol.batching else 1
    try:
        plan = bind(g, config, batch_size=B, wear_aware=pol.wl.wear_aware_binding)
    except PlanInfeasible as e:
        print(f"plan infeasible: {e}", file=sys.stderr)
        return EXIT_INPUT
    sched = schedule(plan, g)
    doc = {"plan": plan.to_dict(), "schedule": sched.to_dict(), "batch_overflow": bs.overflow,
           "latency_cycles": inference_latency(sched, config)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    text = "\n".join(
        [f"batch size {B}, batch latency {doc['latency_cycles']} cycles"]
        + [f"layer {lid}: {len(b.apus)} APUs, span {b.vertical_span}, waves {b.waves}"
           for lid, b in sorted(plan.bindings.items())])
    _emit(doc, args.json, text)
    return EXIT_OK


def _ladder_sort(reports: list[SimReport]) -> list[SimReport]:
    if all(r.label in LADDER_ORDER for r in reports):
        return sorted(reports, key=lambda r: LADDER_ORDER.index(r.label))
    return reports


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise InputError("compare needs at least two reports")
    reps = []
    for p in args.reports:
        try:
            reps.append(SimReport.from_dict(load_json(p)))
        except (KeyError, TypeError) as e:
            raise InputError(f"{p}: not a report ({e})") from e
    try:
        rows = compare(_ladder_sort(reps))
    except CompareError as e:
        print(f"incompatible reports: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    header = ["label", "lifespan_inferences", "lifespan_ratio", "inferences_per_reconfig",
              "reconfig_ratio", "stop_reason"]
    if args.out:
        _write_csv(Path(args.out), header, [[r[h] for h in header] for r in rows])
    lines = [f"{'label':<18}{'lifespan':>12}{'ratio':>9}{'inf/reconfig':>15}{'ratio':>9}  stop"]
    for r in rows:
        lines.append(f"{r['label'] or '-':<18}{r['lifespan_inferences']:>12}{r['lifespan_ratio']:>9.2f}"
                     f"{r['inferences_per_reconfig']:>15.1f}{r['reconfig_ratio']:>9.2f}  {r['stop_reason']}")
    lines.append("reference (published, full scale): fault handling 4.6x, batching 2.6x, total 13.2x")
    _emit({"rows": rows, "reference": REFERENCE_ROW}, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_transpose_check(args) -> int:
    n, m, banks = args.n, args.m, args.banks
    if min(n, m, banks) < 1:
        raise InputError("N, M and banks must be >= 1")
    if n * n * m >= 2 ** 63:
        print("index arithmetic would overflow 64 bits", file=sys.stderr)
        return EXIT_GUARD
    res = transpose_check(n, m, banks)
    cyc = " ".join("{" + ",".join(map(str, c)) + "}" for c in res["cycles"])
    text = (f"cycles: {cyc}\ncollisions: {res['collisions']}\n"
            f"verdict: {'OK' if res['ok'] else 'MISMATCH'}")
    _emit(res, args.json, text)
    return EXIT_OK if res["ok"] else 1


def cmd_estimate_thresholds(args) -> int:
    _, g, _, _, _ = load_experiment(args.config)
    ev = ToyEvaluator(seed=args.seed)
    prof = estimate_thresholds(g, ev, args.limit, args.step, args.trials, args.seed, args.max_faults)
    if args.out:
        Path(args.out).write_text(prof.to_json() + "\n")
    t = next(iter(prof.per_layer_threshold.values()), 0)
    _emit(prof.to_dict(), args.json,
          f"uniform threshold {t} faults per layer (baseline accuracy {prof.baseline_accuracy:.4f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xbarlife", description="ReRAM crossbar accelerator lifespan simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    p = common(sub.add_parser("run", help="simulate every (policy, seed) cell"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--allow-infeasible", action="store_true")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("plan", help="emit binding plan and schedule"))
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_plan)

    p = common(sub.add_parser("compare", help="lifespan ratio breakdown"), config=False)
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("transpose-check", help="bank-group transposition round trip"), config=False)
    p.add_argument("n", type=int)
    p.add_argument("m", type=int)
    p.add_argument("--banks", type=int, default=16)
    p.set_defaults(func=cmd_transpose_check)

    p = common(sub.add_parser("estimate-thresholds", help="fault tolerance profile from the toy evaluator"))
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=float, default=0.01)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--max-faults", type=int)
    p.set_defaults(func=cmd_estimate_thresholds)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OverflowError as e:
        print(f"arithmetic guard: {e}", file=sys.stderr)
        return EXIT_GUARD
