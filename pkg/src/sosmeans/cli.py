"""Experiment harness.

Subcommands ``gen``, ``mixture``, ``robust``, ``certify``, ``sdp-selftest``
and ``report``. Configs are JSON validated against :data:`CONFIG_SCHEMA`;
results are JSON lines whose first line is the resolved config.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import math
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__

log = logging.getLogger("sosmeans")

SCHEMA_VERSION = 1
TASKS = ("mixture", "robust", "certify", "sdp_selftest")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_int_or_null = {"type": ["integer", "null"]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": list(TASKS)},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "output": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "generator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "kind": {"enum": ["gaussian", "product_rademacher", "product_uniform", "rotated_product"]},
                "delta": {"type": "number", "minimum": 0},
                "weights": {"type": ["array", "null"], "items": _num},
                "balanced": {"type": "boolean"},
                "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adversary": {"enum": ["mean_shift", "far_outliers", "moment_stealth"]},
                "shift": {"type": "number"},
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t": {"type": "integer", "enum": [4, 8]},
                "tau": _num_or_null,
                "pe_degree": _int_or_null,
                "eps": _num_or_null,
                "delta": _num_or_null,
                "E": _num_or_null,
                "xi": {"type": "number", "exclusiveMinimum": 0},
                "eta": _num_or_null,
                "c": {"type": "number", "exclusiveMinimum": 0},
                "nonuniform": {"type": "boolean"},
                "eps_constant": _num,
                "precluster_radius": _num_or_null,
                "n_feasible": {"type": "integer", "minimum": 0},
                "n_infeasible": {"type": "integer", "minimum": 0},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": {"type": "array", "minItems": 1},
        },
        "monotone": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["axis"],
            "properties": {
                "axis": {"type": "string"},
                "metric": {"type": "string"},
                "direction": {"enum": ["decreasing", "nonincreasing", "increasing", "nondecreasing"]},
            },
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seeds": [0],
    "output": "results.jsonl",
    "workers": 1,
    "generator": {
        "d": 2, "k": 2, "n": 24, "kind": "gaussian", "delta": 8.0, "weights": None,
        "balanced": True, "eps": 0.0, "adversary": "mean_shift", "shift": 10.0, "radius": 100.0,
    },
    "algorithm": {
        "t": 4, "tau": None, "pe_degree": None, "eps": None, "delta": None, "E": None,
        "xi": 0.05, "eta": None, "c": 2.0, "nonuniform": False, "eps_constant": 0.0,
        "precluster_radius": None, "n_feasible": 50, "n_infeasible": 10,
    },
    "sweep": {},
    "monotone": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(raw: dict, task: str | None = None) -> dict:
    """Validate ``raw`` and fill every default; raises :class:`ConfigError`."""
    raw = dict(raw)
    if task is not None:
        if raw.get("task", task) != task:
            raise ConfigError(f"task: config says {raw['task']!r} but subcommand runs {task!r}")
        raw["task"] = task
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    for key in cfg["sweep"]:
        _sweep_target(cfg, key)
    mono = cfg.get("monotone")
    if mono is not None:
        mono.setdefault("metric", "error")
        mono.setdefault("direction", "decreasing")
        if mono["axis"] not in cfg["sweep"]:
            raise ConfigError(f"monotone.axis: {mono['axis']!r} is not a sweep axis")
    return cfg


def _sweep_target(cfg: dict, key: str) -> tuple:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in ("generator", "algorithm") or name not in cfg[section]:
            raise ConfigError(f"sweep.{key}: unknown parameter")
        return section, name
    for section in ("generator", "algorithm"):
        if key in cfg[section]:
            return section, key
    raise ConfigError(f"sweep.{key}: unknown parameter")


def cells(cfg: dict) -> list:
    """Cartesian product of the sweep axes as a list of override dicts."""
    axes = list(cfg["sweep"].items())
    if not axes:
        return [{}]
    keys = [k for k, _ in axes]
    return [dict(zip(keys, vals)) for vals in itertools.product(*(v for _, v in axes))]


def cell_params(cfg: dict, cell: dict) -> dict:
    gen = dict(cfg["generator"])
    alg = dict(cfg["algorithm"])
    for key, val in cell.items():
        section, name = _sweep_target(cfg, key)
        (gen if section == "generator" else alg)[name] = val
    return {"generator": gen, "algorithm": alg}


# --------------------------------------------------------------------------
# tasks


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _mixture_spec(gen: dict):
    from .datagen import MixtureSpec

    weights = gen["weights"]
    if weights is not None and len(weights) != gen["k"]:
        raise ValueError("generator.weights must have k entries")
    return MixtureSpec.collinear(gen["k"], gen["d"], gen["delta"], gen["kind"], weights)


def _dataset(gen: dict, seed: int):
    from .datagen import sample_balanced, sample_mixture

    spec = _mixture_spec(gen)
    sampler = sample_balanced if gen["balanced"] else sample_mixture
    return spec, sampler(spec, gen["n"], seed)


def _algo_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def run_mixture(params: dict, seed: int) -> tuple:
    from .mixtures import best_permutation, learn_mixture_means, learn_nonuniform, misassigned

    gen, alg = params["generator"], params["algorithm"]
    spec, ds = _dataset(gen, seed)
    rng = _algo_seed(seed)
    if alg["nonuniform"]:
        eta = alg["eta"] if alg["eta"] is not None else float(min(spec.weights))
        est = learn_nonuniform(ds.samples, eta, alg["t"], alg["xi"], rng, tau=alg["tau"], c=alg["c"],
                               pe_degree=alg["pe_degree"])
    else:
        delta = alg["delta"] if alg["delta"] is not None else gen["delta"]
        est = learn_mixture_means(ds.samples, gen["k"], alg["t"], alg["tau"], alg["eps"], rng,
                                  delta=delta, E=alg["E"], pe_degree=alg["pe_degree"],
                                  precluster_radius=alg["precluster_radius"],
                                  eps_constant=alg["eps_constant"])
    metrics = {"n_clusters": int(len(est.means)),
               "misassigned": misassigned(est.assignment.labels, ds.labels)}
    if len(est.means) == spec.k:
        _, errs = best_permutation(est.means, spec.means)
        metrics["error"] = float(np.max(errs))
        metrics["error_mean"] = float(np.mean(errs))
    else:
        metrics["error"] = None
        metrics["error_mean"] = None
    stages = est.diagnostics.get("stages") or est.diagnostics.get("sweep") or []
    metrics["sdp_iterations"] = int(sum(s.get("sdp_iterations") or 0 for s in stages))
    if alg["nonuniform"]:
        metrics["sizes"] = est.diagnostics["sizes"]
    return metrics, est.diagnostics


def run_robust(params: dict, seed: int) -> tuple:
    from .datagen import DistributionSpec, MixtureSpec, corrupt, sample_mixture
    from .robust import estimate_mean

    gen, alg = params["generator"], params["algorithm"]
    spec = MixtureSpec.single(DistributionSpec(gen["kind"], np.zeros(gen["d"])) if gen["kind"] != "rotated_product"
                              else DistributionSpec.random_rotation(np.zeros(gen["d"]), seed=seed))
    ds = sample_mixture(spec, gen["n"], seed)
    shift = np.zeros(gen["d"])
    shift[0] = gen["shift"]
    ds = corrupt(ds, gen["eps"], gen["adversary"], np.random.SeedSequence([seed, 2]),
                 shift=shift, radius=gen["radius"], t=alg["t"])
    eps = alg["eps"] if alg["eps"] is not None else gen["eps"]
    kw = {} if alg["tau"] is None else {"tau": alg["tau"]}
    est = estimate_mean(ds.samples, eps, alg["t"], pe_degree=alg["pe_degree"], eps_max=0.5, **kw)
    mu = ds.true_mean
    err = float(np.linalg.norm(est.mean - mu))
    naive = float(np.linalg.norm(ds.samples.mean(axis=0) - mu))
    metrics = {"error": err, "naive_error": naive, "error_ratio": err / naive if naive > 0 else None,
               "n_pruned": int(est.pruned.size), "sdp_iterations": est.diagnostics["iterations"]}
    return metrics, est.diagnostics


def run_certify(params: dict, seed: int) -> tuple:
    from .datagen import DistributionSpec
    from .sos_core import certify_explicit_boundedness

    gen, alg = params["generator"], params["algorithm"]
    mean = np.zeros(gen["d"])
    spec = DistributionSpec.random_rotation(mean, seed=seed) if gen["kind"] == "rotated_product" \
        else DistributionSpec(gen["kind"], mean)
    rep = certify_explicit_boundedness(spec.centered_moment, gen["d"], alg["t"])
    res = [r["residual"] for r in rep if r["residual"] is not None]
    metrics = {"all_sos": all(r["sos"] for r in rep), "max_residual": max(res, default=None),
               "orders": [r["s"] for r in rep]}
    return metrics, {"per_order": [{k: r[k] for k in ("s", "sos", "residual", "min_eigenvalue")} for r in rep]}


def run_sdp_selftest(params: dict, seed: int) -> tuple:
    from .sdp import selftest

    alg = params["algorithm"]
    rep = selftest(alg["n_feasible"], alg["n_infeasible"], seed)
    metrics = {k: rep[k] for k in ("feasible_solved", "n_feasible", "max_gap", "infeasible_detected",
                                   "n_infeasible", "max_iterations")}
    return metrics, {}


RUNNERS = {"mixture": run_mixture, "robust": run_robust, "certify": run_certify,
           "sdp_selftest": run_sdp_selftest}


def _execute(job: tuple) -> dict:
    task, cell, params, seed = job
    t0 = time.perf_counter()
    row = {"type": "row", "task": task, "seed": seed, "cell": cell, "params": params}
    try:
        metrics, diag = RUNNERS[task](params, seed)
        row.update(status="ok", metrics=metrics, diagnostics=diag, error=None)
    except Exception as exc:  # failures are recorded, not fatal
        row.update(status="failed", metrics={}, diagnostics=getattr(exc, "diagnostics", {}),
                   error=f"{type(exc).__name__}: {exc}")
        log.debug("cell failed\n%s", traceback.format_exc())
    row["wall_time"] = time.perf_counter() - t0
    return _jsonable(row)


def run(cfg: dict, out: Path | None = None, workers: int | None = None) -> tuple:
    """Execute every cell x seed; returns ``(rows, exit_code)``.

    Failed cells are recorded and the sweep carries on; the exit code is
    nonzero when any row failed.
    """
    out = Path(out or cfg["output"])
    workers = workers or cfg["workers"]
    jobs = [(cfg["task"], cell, cell_params(cfg, cell), seed) for cell in cells(cfg) for seed in cfg["seeds"]]
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    with out.open("w") as fh:
        fh.write(json.dumps({"type": "config", "version": __version__, "config": cfg}, sort_keys=True) + "\n")
        fh.flush()
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_execute, jobs)
                for row in results:
                    rows.append(row)
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
                    fh.flush()
        else:
            for job in jobs:
                row = _execute(job)
                rows.append(row)
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                fh.flush()
    code = EXIT_RUNTIME if any(r["status"] != "ok" for r in rows) else EXIT_OK
    return rows, code


# --------------------------------------------------------------------------
# report


def read_results(path) -> tuple:
    """``(config or None, rows)``; malformed lines are skipped with a warning."""
    cfg, rows = None, []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                log.warning("%s:%d: skipping malformed line", path, lineno)
                continue
            if not isinstance(obj, dict):
                log.warning("%s:%d: skipping non-object line", path, lineno)
                continue
            if obj.get("type") == "config":
                cfg = obj.get("config")
                continue
            if obj.get("type") != "row" or "status" not in obj or not isinstance(obj.get("metrics"), dict):
                log.warning("%s:%d: skipping malformed row", path, lineno)
                continue
            rows.append(obj)
    return cfg, rows


def _cell_key(row) -> str:
    return json.dumps(row.get("cell", {}), sort_keys=True)


def summarize(rows: list, monotone: dict | None = None) -> list:
    """Per-cell medians and quartiles of every numeric metric."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.get("task"), _cell_key(r)), []).append(r)
    table = []
    for (task, key), grp in groups.items():
        rec = {"task": task, "cell": key, "n_rows": len(grp),
               "failures": sum(r["status"] != "ok" for r in grp)}
        names = sorted({m for r in grp for m, v in r["metrics"].items()
                        if isinstance(v, (int, float)) and not isinstance(v, bool)})
        for name in names:
            vals = [r["metrics"].get(name) for r in grp if r["status"] == "ok"]
            vals = np.array([v for v in vals if isinstance(v, (int, float)) and not isinstance(v, bool)],
                            dtype=float)
            if vals.size:
                q25, med, q75 = np.quantile(vals, [0.25, 0.5, 0.75])
                rec[f"{name}_median"] = float(med)
                rec[f"{name}_q25"] = float(q25)
                rec[f"{name}_q75"] = float(q75)
        table.append(rec)
    if monotone:
        _flag_monotone(table, monotone)
    return table


def _flag_monotone(table: list, mono: dict) -> None:
    axis, metric = mono["axis"], mono.get("metric", "error")
    direction = mono.get("direction", "decreasing")
    col = f"{metric}_median"
    lines: dict = {}
    for rec in table:
        cell = json.loads(rec["cell"])
        if axis not in cell:
            continue
        rest = json.dumps({k: v for k, v in cell.items() if k != axis}, sort_keys=True)
        lines.setdefault(rest, []).append((cell[axis], rec))
    for line in lines.values():
        line.sort(key=lambda p: p[0])
        prev = None
        for _, rec in line:
            cur = rec.get(col)
            flag = False
            if prev is not None:
                if cur is None or prev is None:
                    flag = True
                elif direction == "decreasing":
                    flag = not cur < prev
                elif direction == "nonincreasing":
                    flag = cur > prev
                elif direction == "increasing":
                    flag = not cur > prev
                else:
                    flag = cur < prev
            rec["monotone_flag"] = flag
            prev = cur
    for rec in table:
        rec.setdefault("monotone_flag", False)


def write_summary(table: list, fh) -> None:
    cols = ["task", "cell", "n_rows", "failures"]
    extra = sorted({k for rec in table for k in rec} - set(cols) - {"monotone_flag"})
    if any("monotone_flag" in rec for rec in table):
        extra.append("monotone_flag")
    w = csv.DictWriter(fh, fieldnames=cols + extra, extrasaction="ignore")
    w.writeheader()
    for rec in table:
        w.writerow(rec)


# --------------------------------------------------------------------------
# entry point


def _load_config(path: str | None, task: str, seed: int | None) -> dict:
    raw: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            # a results file: reuse its embedded resolved config
            try:
                raw = json.loads(text.splitlines()[0])
            except (json.JSONDecodeError, IndexError):
                raise ConfigError(f"config: invalid JSON ({exc})") from None
        if isinstance(raw, dict) and raw.get("type") == "config":
            raw = raw.get("config")
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
    if seed is not None:
        raw["seeds"] = [seed]
    return resolve_config(raw, task)


def _cmd_gen(args) -> int:
    from .datagen import corrupt

    cfg = _load_config(args.config, args.task, args.seed)
    seed = cfg["seeds"][0] if cfg["seeds"] else 0
    params = cell_params(cfg, {})
    gen = params["generator"]
    _, ds = _dataset(gen, seed)
    if gen["eps"] > 0:
        shift = np.zeros(gen["d"])
        shift[0] = gen["shift"]
        ds = corrupt(ds, gen["eps"], gen["adversary"], np.random.SeedSequence([seed, 2]), shift=shift,
                     radius=gen["radius"], t=params["algorithm"]["t"])
    out = Path(args.out or "dataset.csv")
    csv_path, side = ds.save(out)
    print(f"wrote {csv_path} and {side}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.task, args.seed)
    if args.workers:
        cfg["workers"] = args.workers
    out = Path(args.out) if args.out else Path(cfg["output"])
    cfg["output"] = str(out)
    rows, code = run(cfg, out)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok}/{len(rows)} rows ok -> {out}")
    if rows:
        table = summarize(rows, cfg.get("monotone"))
        buf = io.StringIO()
        write_summary(table, buf)
        print(buf.getvalue(), end="")
    return code


def _cmd_report(args) -> int:
    cfg, rows = read_results(args.results)
    mono = None
    if args.axis:
        mono = {"axis": args.axis, "metric": args.metric, "direction": args.direction}
    elif cfg:
        mono = cfg.get("monotone")
    table = summarize(rows, mono)
    buf = io.StringIO()
    write_summary(table, buf)
    print(buf.getvalue(), end="")
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sosmeans", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="PATH")
        sp.add_argument("--workers", type=int, metavar="N")

    g = sub.add_parser("gen", help="write a synthetic dataset (CSV + JSON sidecar)")
    common(g)
    g.add_argument("--task", choices=["mixture", "robust"], default="mixture")
    g.set_defaults(func=_cmd_gen)
    for name, task in (("mixture", "mixture"), ("robust", "robust"), ("certify", "certify"),
                       ("sdp-selftest", "sdp_selftest")):
        sp = sub.add_parser(name, help=f"run the {task} experiment")
        common(sp)
        sp.set_defaults(func=_cmd_run, task=task)
    r = sub.add_parser("report", help="summarise a results file")
    r.add_argument("results", metavar="RESULTS")
    r.add_argument("--out", metavar="PATH")
    r.add_argument("--axis")
    r.add_argument("--metric", default="error")
    r.add_argument("--direction", default="decreasing",
                   choices=["decreasing", "nonincreasing", "increasing", "nondecreasing"])
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
