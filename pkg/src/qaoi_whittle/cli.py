"""Command-line front end: experiment configs in, tables/rows out.

Subcommands: ``index`` (per-arm index tables with on-disk caching),
``simulate``/``sweep`` (Monte-Carlo policy comparison rows),
``lower-bound`` (relaxation bound rows) and ``verify`` (property
suites).  Exit codes are a stable contract: 0 success, 1 property
failure, 2 configuration error, 3 numerical/structural error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import ConfigError, QaoiError
from .submdp import SubMdpParams, ThresholdPolicy
from .whittle import WhittleTable, whittle_table
from .sim import NetworkConfig, lower_bound, run_experiment
from . import dp
from . import steady_state

_POLICIES = ("whittle", "discounted", "greedy", "aoi", "random", "optimal", "lower_bound")
_SWEEP_FIELDS = ("lambda", "gamma", "p")


# ----------------------------------------------------------------- config

def _fail(field: str, msg: str) -> None:
    raise ConfigError(f"{field}: {msg}")


def _require(doc: dict, field: str, kind, where: str = "config"):
    if field not in doc:
        _fail(f"{where}.{field}", "missing required field")
    val = doc[field]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            _fail(f"{where}.{field}", f"expected a number, got {val!r}")
        return float(val)
    if not isinstance(val, kind) or isinstance(val, bool):
        _fail(f"{where}.{field}", f"expected {kind.__name__}, got {val!r}")
    return val


def validate_config(doc: dict) -> dict:
    """Schema check with field-level messages; returns the document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    arms = _require(doc, "arms", list)
    if not arms:
        _fail("arms", "need at least one arm")
    for i, arm in enumerate(arms):
        if not isinstance(arm, dict):
            _fail(f"arms[{i}]", "expected an object")
        for key in ("lambda", "gamma", "p"):
            val = _require(arm, key, float, where=f"arms[{i}]")
            if not (0.0 < val <= 1.0) or (key != "p" and val >= 1.0):
                _fail(f"arms[{i}].{key}", f"out of range: {val}")
    d_max = _require(doc, "d_max", int)
    if d_max < 2:
        _fail("d_max", "must be >= 2")
    channels = _require(doc, "channels", int)
    if not (0 < channels < len(arms)):
        _fail("channels", f"must satisfy 0 < M < N={len(arms)}")
    if _require(doc, "horizon", int) < 1:
        _fail("horizon", "must be >= 1")
    if _require(doc, "runs", int) < 1:
        _fail("runs", "must be >= 1")
    _require(doc, "seed", int)
    policies = _require(doc, "policies", list)
    for pol in policies:
        if pol not in _POLICIES:
            _fail("policies", f"unknown policy {pol!r}; choose from {_POLICIES}")
    if "sweep" in doc and doc["sweep"] is not None:
        sweep = doc["sweep"]
        if not isinstance(sweep, dict):
            _fail("sweep", "expected an object")
        fld = _require(sweep, "field", str, where="sweep")
        if fld not in _SWEEP_FIELDS:
            _fail("sweep.field", f"must be one of {_SWEEP_FIELDS}")
        values = _require(sweep, "values", list, where="sweep")
        if not values:
            _fail("sweep.values", "must be non-empty")
        for v in values:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                _fail("sweep.values", f"expected numbers, got {v!r}")
    if "beta" in doc:
        beta = _require(doc, "beta", float)
        if not (0.0 < beta < 1.0):
            _fail("beta", "must lie in (0,1)")
    if "burn_in" in doc:
        burn = _require(doc, "burn_in", int)
        if not (0 <= burn < doc["horizon"]):
            _fail("burn_in", "must lie in [0, horizon)")
    if "c_grid_steps" in doc:
        if _require(doc, "c_grid_steps", int) < 1:
            _fail("c_grid_steps", "must be >= 1")
    return doc


def _config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _arm_params(doc: dict, sweep_value: Optional[float] = None) -> List[SubMdpParams]:
    field = doc.get("sweep", {}).get("field") if sweep_value is not None else None
    out = []
    for arm in doc["arms"]:
        vals = {"lambda": arm["lambda"], "gamma": arm["gamma"], "p": arm["p"]}
        if field is not None:
            vals[field] = sweep_value
        out.append(
            SubMdpParams(
                lam=vals["lambda"], gamma=vals["gamma"], p=vals["p"],
                d_max=doc["d_max"],
            )
        )
    return out


def _apply_overrides(doc: dict, pairs: Sequence[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = doc
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"--set path {key!r} does not address an object")
        target[parts[-1]] = value
    return doc


# ----------------------------------------------------------------- output

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(
    path: Path, fmt: str, meta: Dict[str, object], header: List[str],
    rows: List[List[object]],
) -> None:
    if fmt == "json":
        doc = {
            "meta": meta,
            "rows": [dict(zip(header, row)) for row in rows],
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(header))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _meta(doc: dict) -> Dict[str, object]:
    return {
        "tool": f"qaoi-whittle {__version__}",
        "config_sha256": _config_hash(doc),
        "seed": doc["seed"],
    }


# ----------------------------------------------------------------- index

def _cache_dir() -> Path:
    env = os.environ.get("QAOI_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "qaoi-tables"


def _table_cached(params: SubMdpParams) -> WhittleTable:
    key = json.dumps(
        {"lambda": params.lam, "gamma": params.gamma, "p": params.p,
         "d_max": params.d_max},
        sort_keys=True,
    )
    digest = hashlib.sha256(key.encode()).hexdigest()
    cache = _cache_dir() / f"{digest}.json"
    if cache.exists():
        return WhittleTable.from_json_dict(json.loads(cache.read_text()))
    table = whittle_table(params)
    cache.parent.mkdir(parents=True, exist_ok=True)
    cache.write_text(json.dumps(table.to_json_dict(), sort_keys=True))
    return table


def cmd_index(doc: dict, out: Path, fmt: str) -> int:
    arms = _arm_params(doc)
    tables = [_table_cached(p) for p in arms]
    paths = ["error_free" if p.p == 1.0 else "error_prone" for p in arms]
    meta = _meta(doc)
    meta["arm_paths"] = ",".join(paths)
    if fmt == "json":
        docout = {"meta": meta, "tables": [t.to_json_dict() for t in tables]}
        out.write_text(json.dumps(docout, sort_keys=True, indent=2) + "\n")
    else:
        header = ["arm", "D", "q", "index"]
        rows: List[List[object]] = []
        for i, t in enumerate(tables):
            for q in (0, 1):
                for d in range(1, t.params.d_max + 1):
                    rows.append([i, d, q, float(t.index[q, d - 1])])
        _write_rows(out, "csv", meta, header, rows)
    return 0


# -------------------------------------------------------------- simulate

def _gamma_summary(arms: Sequence[SubMdpParams]) -> str:
    seen: List[float] = []
    for a in arms:
        if a.gamma not in seen:
            seen.append(a.gamma)
    return "|".join(repr(g) for g in seen)


def _lambda_summary(arms: Sequence[SubMdpParams]) -> str:
    seen: List[float] = []
    for a in arms:
        if a.lam not in seen:
            seen.append(a.lam)
    return "|".join(repr(v) for v in seen)


def _simulate_point(args: Tuple[dict, Optional[float]]) -> List[List[object]]:
    doc, sweep_value = args
    arms = tuple(_arm_params(doc, sweep_value))
    rows: List[List[object]] = []
    for policy in doc["policies"]:
        common = dict(
            arms=arms,
            channels=doc["channels"],
            horizon=doc["horizon"],
            runs=doc["runs"],
            seed=doc["seed"],
            beta=doc.get("beta", 0.99),
            burn_in=doc.get("burn_in", 0),
        )
        if policy == "lower_bound":
            cfg = NetworkConfig(scheduler="whittle", **common)
            bound = lower_bound(cfg)
            rows.append(
                [
                    "lower_bound", _lambda_summary(arms), _gamma_summary(arms),
                    bound, 0.0, None, doc["seed"], doc["runs"], doc["horizon"],
                ]
            )
            continue
        cfg = NetworkConfig(scheduler=policy, **common)
        rep = run_experiment(cfg)
        rows.append(
            [
                policy, _lambda_summary(arms), _gamma_summary(arms),
                rep.esqaoi, rep.stderr,
                float(np.mean(rep.schedule_rate)),
                doc["seed"], doc["runs"], doc["horizon"],
            ]
        )
    return rows


_SIM_HEADER = [
    "policy", "lambda", "gamma_summary", "esqaoi", "stderr",
    "schedule_rate_mean", "seed", "runs", "horizon",
]


def cmd_simulate(doc: dict, out: Path, fmt: str, jobs: int, need_sweep: bool) -> int:
    sweep = doc.get("sweep")
    if need_sweep and not sweep:
        raise ConfigError("sweep: the sweep subcommand requires a sweep section")
    points: List[Optional[float]] = (
        [float(v) for v in sweep["values"]] if sweep else [None]
    )
    tasks = [(doc, pt) for pt in points]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_simulate_point, tasks))
    else:
        chunks = [_simulate_point(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    _write_rows(out, fmt, _meta(doc), _SIM_HEADER, rows)
    return 0


def _bound_point(args: Tuple[dict, Optional[float]]) -> List[List[object]]:
    doc, sweep_value = args
    arms = tuple(_arm_params(doc, sweep_value))
    cfg = NetworkConfig(
        arms=arms, channels=doc["channels"], horizon=doc["horizon"],
        runs=doc["runs"], seed=doc["seed"], scheduler="whittle",
        beta=doc.get("beta", 0.99), burn_in=doc.get("burn_in", 0),
    )
    return [[
        "lower_bound", _lambda_summary(arms), _gamma_summary(arms),
        lower_bound(cfg), 0.0, None, doc["seed"], doc["runs"], doc["horizon"],
    ]]


def cmd_lower_bound(doc: dict, out: Path, fmt: str, jobs: int) -> int:
    sweep = doc.get("sweep")
    points: List[Optional[float]] = (
        [float(v) for v in sweep["values"]] if sweep else [None]
    )
    tasks = [(doc, pt) for pt in points]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_bound_point, tasks))
    else:
        chunks = [_bound_point(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    _write_rows(out, fmt, _meta(doc), _SIM_HEADER, rows)
    return 0


# ---------------------------------------------------------------- verify

def _passive_set(params: SubMdpParams, c: float) -> frozenset:
    sol = dp.relative_value_iteration(params, c)
    return frozenset(int(i) for i in np.nonzero(sol.policy == 0)[0])


def cmd_verify(doc: dict, out: Path, fmt: str) -> int:
    """Property suites over every distinct arm parameter set; exit 1 and
    serialize the failing instance if any property does not hold."""
    steps = doc.get("c_grid_steps", 200)
    rng = np.random.default_rng(doc["seed"])
    rows: List[List[object]] = []
    failures: List[dict] = []
    distinct: List[SubMdpParams] = []
    for p in _arm_params(doc):
        if p not in distinct:
            distinct.append(p)

    for arm_id, params in enumerate(distinct):
        table = whittle_table(params)
        cmax = table.levels[-1]
        grid = [cmax * i / steps for i in range(steps + 1)]
        prm_doc = {
            "lambda": params.lam, "gamma": params.gamma, "p": params.p,
            "d_max": params.d_max,
        }

        # passive set grows along the scheduling-cost grid
        ok, worst, detail = True, 0.0, ""
        prev: frozenset = frozenset()
        for c in grid:
            cur = _passive_set(params, c)
            if not prev <= cur:
                ok, detail = False, f"passive set shrank at C={c}"
                break
            prev = cur
        if ok and _passive_set(params, 0.0):
            ok, detail = False, "passive set non-empty at C=0"
        if ok and len(_passive_set(params, cmax + 1.0)) != params.n_states:
            ok, detail = False, "passive set not full beyond the top index"
        rows.append([arm_id, "passive_set_monotone", ok, "", detail])
        if not ok:
            failures.append({"property": "passive_set_monotone", "params": prm_doc})

        # equal thresholds whenever the query chain mixes in one step
        if abs(params.lam + params.gamma - 1.0) < 1e-12:
            ok, detail = True, ""
            for c in grid:
                sol = dp.relative_value_iteration(params, c)
                tp = dp.extract_thresholds(sol.policy, params.d_max)
                if tp.h0 != tp.h1:
                    ok, detail = False, f"h0={tp.h0} != h1={tp.h1} at C={c}"
                    break
            rows.append([arm_id, "equal_thresholds", ok, "", detail])
            if not ok:
                failures.append({"property": "equal_thresholds", "params": prm_doc})

        # analytical indices against the bisection oracle
        dm = params.d_max
        ages = range(1, dm + 1) if dm <= 25 else range(1, dm + 1, max(1, dm // 25))
        worst = 0.0
        for q in (0, 1):
            for d in ages:
                w_ref = dp.oracle_whittle_index(params, _state(d, q), tol=1e-8)
                rel = abs(table.index[q, d - 1] - w_ref) / max(abs(w_ref), 1e-12)
                worst = max(worst, rel)
        ok = worst < 1e-5
        rows.append([arm_id, "index_matches_oracle", ok, worst, ""])
        if not ok:
            failures.append({"property": "index_matches_oracle", "params": prm_doc})

        # analytical stationary distribution against power iteration
        worst = 0.0
        for _ in range(5):
            pol = ThresholdPolicy(
                int(rng.integers(1, dm + 2)), int(rng.integers(1, dm + 2))
            )
            got = steady_state.stationary_distribution(params, pol)
            ref = steady_state.stationary_oracle(params, pol)
            dev = max(abs(got.mu[s] - ref.mu[s]) for s in got.mu)
            dev = max(dev, abs(got.j - ref.j), abs(got.a - ref.a))
            worst = max(worst, dev)
        ok = worst < 1e-9
        rows.append([arm_id, "stationary_matches_oracle", ok, worst, ""])
        if not ok:
            failures.append({"property": "stationary_matches_oracle", "params": prm_doc})

    _write_rows(
        out, fmt, _meta(doc),
        ["arm", "property", "passed", "worst_deviation", "detail"], rows,
    )
    if failures:
        replay = out.with_suffix(out.suffix + ".fail.json")
        replay.write_text(json.dumps({"failures": failures}, indent=2) + "\n")
        return 1
    return 0


def _state(d: int, q: int):
    from .submdp import State

    return State(d, q)


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qaoi",
        description="Index tables, simulations and bounds for "
        "query-age-of-information multiuser scheduling.",
    )
    parser.add_argument(
        "command",
        choices=["index", "simulate", "verify", "lower-bound", "sweep"],
    )
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", required=True, help="output file path")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config field (dotted paths allowed)",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            raw = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}")
        doc = validate_config(_apply_overrides(doc, args.set))
        out = Path(args.out)
        if args.command == "index":
            return cmd_index(doc, out, args.format)
        if args.command == "simulate":
            return cmd_simulate(doc, out, args.format, args.jobs, need_sweep=False)
        if args.command == "sweep":
            return cmd_simulate(doc, out, args.format, args.jobs, need_sweep=True)
        if args.command == "lower-bound":
            return cmd_lower_bound(doc, out, args.format, args.jobs)
        return cmd_verify(doc, out, args.format)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except QaoiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
