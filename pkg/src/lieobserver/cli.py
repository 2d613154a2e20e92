"""``simulate`` command line entry point.

Examples::

    simulate --preset se3-figure1 --out fig1.csv
    simulate --config run.toml --report json
    simulate --preset se3-figure1 --runs 4 --seed 7 --out mc.csv
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .config import ConfigError, RunConfig, parse_config, parse_document, preset_document, PRESETS
from .simulate import AssumptionReport, SimulationAborted, SimulationTrace, fit_exponential_rate, run, RATE_FLOOR

CSV_HEADER = "t,err_A,err_b,V,membership,sigma_min,sigma_max,xi_norm"
RATE_WINDOW = (2.0, 10.0)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def emit_csv(trace: SimulationTrace, path) -> None:
    """Write the trace with 17 significant digits and LF line endings."""
    lines = [CSV_HEADER]
    for row in trace.rows():
        lines.append(",".join(format(float(x), ".17g") for x in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> SimulationTrace:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        rows = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    return SimulationTrace.from_rows(rows, math.nan)


def _rate_summary(trace: SimulationTrace, t_end: float) -> dict:
    lo, hi = RATE_WINDOW[0], min(RATE_WINDOW[1], t_end)
    out = {"window": [lo, hi], "column": "err_A", "rate": None, "r_squared": None}
    t = trace["t"]
    in_window = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if hi <= lo or in_window.sum() < 2:
        out["status"] = "window outside run"
        return out
    if float(trace["norm_EA"][in_window].min()) <= RATE_FLOOR:
        out["status"] = "at floor"
        return out
    fit = fit_exponential_rate(trace, lo, hi, "norm_EA")
    out.update(rate=fit.rate, r_squared=fit.r_squared, status="degenerate" if fit.degenerate else "ok")
    return out


def report(trace: SimulationTrace, assumptions: AssumptionReport, config: RunConfig, duration: float = 0.0) -> dict:
    """Summary of a finished run; every number is derivable from the CSV."""
    ea, eb = trace["norm_EA"], trace["norm_Eb"]
    return {
        "initial_err_A": float(ea[0]),
        "initial_err_b": float(eb[0]),
        "final_err_A": float(ea[-1]),
        "final_err_b": float(eb[-1]),
        "rows": len(trace),
        "rate_fit": _rate_summary(trace, float(trace["t"][-1])),
        "assumptions": assumptions.as_dict(),
        "duration_s": duration,
        "preset": config.preset,
        "config": config.document,
    }


def format_report(summary: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(summary, sort_keys=True, indent=2)
    rate = summary["rate_fit"]
    a = summary["assumptions"]
    noise = summary["config"]["noise"]
    lines = [
        f"preset           {summary['preset'] or '-'}",
        f"noise            sigma={noise['sigma']} enabled={noise['enabled']} seed={noise['seed']}",
        f"rows             {summary['rows']}",
        f"|E_A| initial    {summary['initial_err_A']:.6g}",
        f"|E_A| final      {summary['final_err_A']:.6g}",
        f"|E_b| initial    {summary['initial_err_b']:.6g}",
        f"|E_b| final      {summary['final_err_b']:.6g}",
    ]
    if rate["status"] in ("ok", "degenerate"):
        lines.append(
            f"rate on {rate['window']}  {rate['rate']:.6g} 1/s (R^2 = {rate['r_squared']:.4f}, {rate['status']})"
        )
    else:
        lines.append(f"rate on {rate['window']}  skipped ({rate['status']})")
    lines.append(
        f"assumptions      M_hat={a['M_hat']:.6g} L_hat={a['L_hat']:.6g} R_hat={a['R_hat']:.6g}"
        f" {'VIOLATED' if a['violated'] else 'ok'}"
    )
    lines.append(f"duration         {summary['duration_s']:.3f} s")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulate", description="Run the ambient-space Lie group observer.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=sorted(PRESETS))
    source.add_argument("--config", type=Path, help="TOML (or .json) run configuration")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("--seed", type=int, help="noise seed (unsigned 64-bit)")
    parser.add_argument("--no-noise", action="store_true", help="disable measurement noise")
    parser.add_argument("--step", type=float, help="integration step h in seconds")
    parser.add_argument("--duration", type=float, help="simulated time t_end in seconds")
    parser.add_argument("--report", choices=("text", "json"), help="summary format on stdout")
    parser.add_argument("--runs", type=int, default=1, help="repeat with derived seeds seed+i")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes for --runs")
    return parser


def _apply_overrides(doc: dict, args) -> dict:
    doc = copy.deepcopy(doc)
    if args.seed is not None:
        doc.setdefault("noise", {})["seed"] = args.seed
    if args.no_noise:
        doc.setdefault("noise", {})["enabled"] = False
    if args.step is not None:
        doc["h"] = args.step
    if args.duration is not None:
        doc["t_end"] = args.duration
    if args.out is not None:
        doc["output"] = args.out
    if args.report is not None:
        doc["report"] = args.report
    return doc


def _suffixed(path: str, i: int) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{i}{p.suffix}"))


def execute(config: RunConfig) -> tuple[int, str]:
    """Run one configuration, write its CSV and return (exit code, report text)."""
    start = time.perf_counter()
    code = EXIT_OK
    try:
        trace, assumptions = run(config.scenario)
    except SimulationAborted as exc:
        trace, assumptions = exc.trace, exc.assumptions
        code = EXIT_NUMERIC
        print(f"simulate: numeric abort: {exc}", file=sys.stderr)
    duration = time.perf_counter() - start
    try:
        emit_csv(trace, config.output_path)
    except OSError as exc:
        print(f"simulate: cannot write {config.output_path}: {exc}", file=sys.stderr)
        return EXIT_IO, ""
    if not len(trace):
        return code, ""
    return code, format_report(report(trace, assumptions, config, duration), config.report_format)


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.runs < 1:
        print("simulate: --runs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.preset:
            doc, preset = preset_document(args.preset), args.preset
        else:
            text = args.config.read_text(encoding="utf-8")
            fmt = "json" if args.config.suffix == ".json" else "toml"
            doc, preset = parse_config(text, fmt).document, None
        doc = _apply_overrides(doc, args)
        configs = []
        for i in range(args.runs):
            run_doc = copy.deepcopy(doc)
            if args.runs > 1:
                run_doc["noise"]["seed"] = (run_doc["noise"]["seed"] + i) % 2**64
                run_doc["output"] = _suffixed(run_doc.get("output", "trace.csv"), i)
            configs.append(parse_document(run_doc, preset=preset))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"simulate: config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"simulate: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, os.cpu_count() or 1)) as pool:
            results = list(pool.map(execute, configs))
    else:
        results = [execute(c) for c in configs]
    for _, text in results:
        if text:
            print(text)
    return max(code for code, _ in results)


if __name__ == "__main__":
    sys.exit(main())
