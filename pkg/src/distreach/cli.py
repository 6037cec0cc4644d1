"""Batch command line: verify, compare, check, bench, synth-weights."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from distreach import io
from distreach.baseline import monolithic_reach
from distreach.errors import DistReachError, ParseError, ScenarioValidationError, ShapeError
from distreach.model import restrict
from distreach.reach import default_workers, multi_step
from distreach.scenarios import linear_feedback_mlp, synth_mlp
from distreach.sim import containment_check, initial_samples, simulate

log = logging.getLogger("distreach")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class Failure(Exception):
    """A run finished but did not meet its contract (solver failure, violations)."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


def _workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    return cfg.workers if cfg.raw.get("workers") is not None else default_workers()


def _run(cfg, mode: str, steps: int, workers: int):
    runner = multi_step if mode == "per-agent" else monolithic_reach
    return runner(cfg.scenario, steps, cfg.settings, workers)


def _sample_trajectories(cfg, steps: int, seed: int, count: int = 20) -> dict:
    rng = np.random.default_rng(seed)
    x0, _ = initial_samples(cfg.scenario, count, rng, corner_cap=1)
    uncertain = cfg.scenario.uncertainty is not None
    return simulate(cfg.scenario, x0, steps, rng=rng, uncertain=uncertain)


def cmd_verify(args) -> dict:
    cfg = io.load_config(args.config, args.steps)
    mode = args.mode or cfg.mode
    seed = cfg.seed if args.seed is None else args.seed
    result = _run(cfg, mode, cfg.horizon, _workers(args, cfg))
    doc = io.result_to_json(result, cfg, seed, cfg.settings)
    out = Path(args.out or f"{cfg.name}.result.json")
    io.write_json(doc, out)
    if args.csv:
        io.export_csv(result.boxes, args.csv, _sample_trajectories(cfg, result.horizon, seed))
    summary = {"result": str(out), "mode": mode, "horizon": result.horizon, "solves": result.n_solves,
               "solve_time": result.solve_time, "complete": result.complete}
    if not result.complete:
        raise Failure("verification stopped early", {**summary, "failure": result.failure})
    return summary


def _bound_diff(a, b) -> float:
    worst = 0.0
    for i in a.boxes:
        for ba, bb in zip(a.boxes[i], b.boxes[i]):
            worst = max(worst, float(np.abs(ba.lower - bb.lower).max()), float(np.abs(ba.upper - bb.upper).max()))
    return worst


def cmd_compare(args) -> dict:
    cfg = io.load_config(args.config, args.steps)
    seed = cfg.seed if args.seed is None else args.seed
    workers = _workers(args, cfg)
    counts = sorted({1, workers})
    rows, results = [], {}
    for mode in ("per-agent", "monolithic"):
        for w in counts:
            r = _run(cfg, mode, cfg.horizon, w)
            results.setdefault(mode, r)
            rows.append({"mode": mode, "workers": w, "solves": r.n_solves, "solve_time": r.solve_time,
                         "wall_time": r.wall_time, "complete": r.complete})
    pa, mono = results["per-agent"], results["monolithic"]
    doc = {
        "tool": "distreach",
        "config": str(cfg.path),
        "config_hash": cfg.config_hash,
        "seed": seed,
        "settings": cfg.settings.to_dict(),
        "horizon": cfg.horizon,
        "timing": rows,
        "max_bound_difference": _bound_diff(pa, mono) if pa.complete and mono.complete else None,
        "per_agent": io.result_to_json(pa, cfg, seed, cfg.settings),
        "monolithic": io.result_to_json(mono, cfg, seed, cfg.settings),
    }
    out = Path(args.out or f"{cfg.name}.compare.json")
    io.write_json(doc, out)
    for row in rows:
        print(f"{row['mode']:>10}  workers={row['workers']}  solves={row['solves']:4d}  "
              f"solve={row['solve_time']:9.2f}s  wall={row['wall_time']:9.2f}s", file=sys.stderr)
    return {"result": str(out), "max_bound_difference": doc["max_bound_difference"], "timing": rows}


def cmd_check(args) -> dict:
    if not args.result:
        raise ParseError("check needs --result <path>")
    doc = io.read_result(args.result)
    config = args.config or doc.get("config")
    if config is None:
        raise ParseError("result file does not name its config; pass --config")
    boxes = io.boxes_from_json(doc)
    cfg = io.load_config(config, max(len(s) for s in boxes.values()) - 1)
    if cfg.config_hash != doc.get("config_hash"):
        log.warning("config file differs from the one used to produce the result")
    seed = doc.get("seed", 0) if args.seed is None else args.seed
    rep = containment_check(boxes, cfg.scenario, samples=args.samples, eps=args.eps, seed=seed,
                            keep_trajectories=bool(args.csv))
    if args.csv:
        io.export_csv(boxes, args.csv, rep.trajectories)
    summary = rep.to_dict()
    if args.out:
        io.write_json(summary, args.out)
    if not rep.ok:
        raise Failure(f"{rep.n_violations} containment violation(s)", summary)
    return summary


def _prefixes(scenario, sizes):
    ids = scenario.graph.dynamic_ids
    for M in sizes:
        if M > len(ids):
            log.warning("skipping M=%d: scenario has %d agents", M, len(ids))
            continue
        try:
            yield M, restrict(scenario, ids[:M])
        except DistReachError as exc:
            log.warning("skipping M=%d: %s", M, exc)


def cmd_bench(args) -> dict:
    cfg = io.load_config(args.config, args.steps)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    for M, sub in _prefixes(cfg.scenario, sizes):
        row = {"M": M}
        for mode, runner in (("per-agent", multi_step), ("monolithic", monolithic_reach)):
            r = runner(sub, cfg.horizon, cfg.settings, args.workers or 1)
            row[mode] = {"solve_time": r.solve_time, "wall_time": r.wall_time, "solves": r.n_solves,
                         "complete": r.complete}
        row["ratio"] = row["monolithic"]["solve_time"] / max(row["per-agent"]["solve_time"], 1e-12)
        print(f"M={M}  per-agent={row['per-agent']['solve_time']:8.2f}s  "
              f"monolithic={row['monolithic']['solve_time']:8.2f}s  ratio={row['ratio']:6.1f}", file=sys.stderr)
        rows.append(row)
    doc = {"tool": "distreach", "config": str(cfg.path), "config_hash": cfg.config_hash,
           "horizon": cfg.horizon, "settings": cfg.settings.to_dict(), "rows": rows}
    if args.out:
        io.write_json(doc, args.out)
    return doc


def cmd_synth_weights(args) -> dict:
    """Seeded small-weight networks for every pair listed under ``networks.files``."""
    path = Path(args.config)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    block = raw.get("networks", {})
    synth = block.get("synth")
    if synth is None:
        raise ParseError("networks.synth block is required for synth-weights")
    io._check_fields(synth, io.SYNTH_FIELDS, "networks.synth", text)
    seed = raw.get("seed", 0) if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    graph = io.build_graph(raw, text, 0)
    n_in = len(block["input_transform"]) if "input_transform" in block else 2 * graph.n_x
    hidden = synth.get("hidden", [10, 10])
    scale = float(synth.get("scale", 0.05))
    out_dir = Path(args.out) if args.out else path.parent
    written = []
    for key in sorted(block.get("files", {}), key=lambda k: tuple(int(s) for s in k.split(","))):
        if "gains" in synth:
            mlp = linear_feedback_mlp([synth["gains"]], hidden, rng, scale)
        else:
            mlp = synth_mlp(rng, n_in, hidden, graph.n_u, scale)
        target = out_dir / block["files"][key]
        target.parent.mkdir(parents=True, exist_ok=True)
        io.save_weights(mlp, target)
        written.append(str(target))
    return {"seed": seed, "written": written}


COMMANDS = {
    "verify": cmd_verify,
    "compare": cmd_compare,
    "check": cmd_check,
    "bench": cmd_bench,
    "synth-weights": cmd_synth_weights,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distreach", description="Reachability of multi-agent systems with distributed neural-network controllers.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="scenario config (JSON)")
    p.add_argument("--steps", type=int, help="horizon override")
    p.add_argument("--mode", choices=io.MODES)
    p.add_argument("--workers", type=int, help="parallel solves (default: config, then $DISTREACH_WORKERS)")
    p.add_argument("--out", help="output file (directory for synth-weights)")
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", help="directory for CSV export")
    p.add_argument("--result", help="result file to check")
    p.add_argument("--samples", type=int, default=10_000, help="check: sampled initial states")
    p.add_argument("--eps", type=float, default=1e-6, help="check: containment tolerance")
    p.add_argument("--sizes", default="1,2,3", help="bench: comma-separated agent counts")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command != "check" and not args.config:
        print(json.dumps({"error": "UsageError", "message": "--config is required"}), file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = COMMANDS[args.command](args)
    except Failure as exc:
        print(json.dumps({"error": "Failure", "message": str(exc), "details": exc.details}, default=str), file=sys.stderr)
        return EXIT_FAIL
    except ScenarioValidationError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "violations": [f"{type(v).__name__}: {v}" for v in exc.violations]}), file=sys.stderr)
        return EXIT_USAGE
    except (DistReachError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, (ParseError, ShapeError, OSError)) else EXIT_FAIL
    print(json.dumps(summary, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
