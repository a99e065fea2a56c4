"""Command line harness: gen, run, eval, sweep, oracle."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Clustering, closeness_error, load_dataset, lp_cost
from .distsim import (SUMMARY_COLUMNS, Ledger, PartitionSpec, alg1_bits_bound, partition,
                      ratio_bound, run_algorithm1)
from .oracle import MAX_CANDIDATES, brute_force_opt
from .seq import UnknownAlgorithmError, get_algorithm
from .spectral import alg4_bits_bound, center_error, check_spectral_stability, run_algorithm4
from .stability import (ESTIMATE, StabilityParams, large_cluster_refine,
                        run_algorithm3, run_kcenter_2as, run_lp_variant)
from .synth import GenSpec, generate, load_truth, save_instance, truth_path

PIPELINES = ("alg1", "alg3", "alg3_refined", "lp_variant", "kcenter_2as", "alg4", "oracle")
RANDOMIZED_ALGS = {"local_search", "kmeanspp_lloyd", "oversampled", "kmedian_outliers"}
DEFAULTS = {
    "pipeline": "alg1", "k": 2, "z": 0, "p": 1.0, "L": None, "alg_a": "oracle", "alg_b": "oracle",
    "alpha": 1.0, "eps": 0.01, "gamma": 1.0, "w_avg": ESTIMATE, "opt_cost": ESTIMATE, "beta": 1.0,
    "r_star": ESTIMATE, "seed": None, "broadcast_labels": False, "bits": 64,
    "partition": {"mode": "round_robin", "m": 1, "seed": 0},
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"config field '{field_name}': {msg}")
        self.field = field_name


# config ---------------------------------------------------------------------------------

def _num(x):
    if isinstance(x, str) and x.lower() in ("inf", "infinity"):
        return math.inf
    return x


def load_config(path: Optional[str], overrides: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg.update(user)
    for key, val in overrides.items():
        if val is None:
            continue
        if key.startswith("partition."):
            cfg["partition"] = dict(cfg["partition"], **{key.split(".", 1)[1]: val})
        else:
            cfg[key] = val
    return validate_config(cfg)


def is_randomized(cfg: dict) -> bool:
    if cfg["partition"].get("mode") == "random" or cfg["pipeline"] == "alg4":
        return True
    if cfg["pipeline"] == "alg1":
        return bool({cfg["alg_a"], cfg["alg_b"]} & RANDOMIZED_ALGS)
    if cfg["pipeline"] in ("alg3", "alg3_refined"):
        return cfg["w_avg"] == ESTIMATE
    if cfg["pipeline"] == "lp_variant":
        return cfg["opt_cost"] == ESTIMATE
    return False


def validate_config(cfg: dict) -> dict:
    if cfg["pipeline"] not in PIPELINES:
        raise ConfigError("pipeline", f"must be one of {', '.join(PIPELINES)}")
    if "data" not in cfg and "gen" not in cfg:
        raise ConfigError("data", "give a dataset path ('data') or an inline generator spec ('gen')")
    cfg["p"] = _num(cfg["p"])
    for key, lo in (("k", 1), ("z", 0)):
        if not isinstance(cfg[key], int) or cfg[key] < lo:
            raise ConfigError(key, f"must be an integer >= {lo}")
    if not (cfg["p"] == math.inf or (isinstance(cfg["p"], (int, float)) and cfg["p"] >= 1)):
        raise ConfigError("p", "must be >= 1 or 'inf'")
    for key in ("alg_a", "alg_b"):
        try:
            get_algorithm(cfg[key])
        except UnknownAlgorithmError as exc:
            raise ConfigError(key, str(exc.args[0])) from None
    if not 0 < cfg["eps"] < 1:
        raise ConfigError("eps", "must lie in (0, 1)")
    if cfg["alpha"] <= 0:
        raise ConfigError("alpha", "must be positive")
    part = cfg["partition"]
    if part.get("mode", "round_robin") not in PartitionSpec.MODES:
        raise ConfigError("partition.mode", f"must be one of {', '.join(PartitionSpec.MODES)}")
    if not isinstance(part.get("m", 1), int) or part.get("m", 1) < 1:
        raise ConfigError("partition.m", "must be an integer >= 1")
    if cfg["seed"] is None and is_randomized(cfg):
        raise ConfigError("seed", "is mandatory for randomized pipelines")
    if cfg["seed"] is None:
        cfg["seed"] = 0
    return cfg


# execution ---------------------------------------------------------------------------------

def _instance(cfg: dict):
    """(dataset, truth or None, certification)"""
    if "gen" in cfg:
        spec_fields = {f.name for f in fields(GenSpec)}
        bad = set(cfg["gen"]) - spec_fields
        if bad:
            raise ConfigError("gen", f"unknown generator fields {sorted(bad)}")
        inst = generate(GenSpec(**cfg["gen"]))
        return inst.dataset, inst.truth, inst.certification
    path = Path(cfg["data"])
    ds = load_dataset(path)
    side = truth_path(path)
    if side.exists():
        truth, cert = load_truth(side)
        return ds, truth, cert
    return ds, None, {}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def execute(cfg: dict) -> tuple[dict, Ledger, Clustering]:
    """Run one configured pipeline; returns the summary row, ledger and clustering."""
    ds, truth, cert = _instance(cfg)
    part_cfg = dict(cfg["partition"])
    labels = truth.labels if truth is not None else None
    pspec = PartitionSpec(part_cfg.get("mode", "round_robin"), part_cfg.get("m", 1),
                          part_cfg.get("seed", 0), labels)
    parts = partition(ds, pspec)
    k, z, p, seed, m = cfg["k"], cfg["z"], cfg["p"], cfg["seed"], pspec.m
    pipe = cfg["pipeline"]
    row = {"pipeline": pipe, "seed": seed}
    extra, flags = {}, {}
    bound_bits = ""
    if pipe == "oracle":
        res = brute_force_opt(ds, k, z, p)
        clustering, ledger = res.clustering, Ledger.for_dataset(ds, cfg["bits"])
    elif pipe == "alg1":
        r = run_algorithm1(parts, k, z, p, cfg["alg_a"], cfg["alg_b"], cfg["L"],
                           cfg["broadcast_labels"], seed, cfg["bits"])
        clustering, ledger = r.clustering, r.ledger
        gamma_b = get_algorithm(cfg["alg_b"]).profile.center_factor
        bound_bits = alg1_bits_bound(ledger, m, k, z, gamma_b)
    elif pipe in ("alg3", "alg3_refined", "lp_variant"):
        params = StabilityParams(cfg["alpha"], cfg["eps"], cfg["w_avg"], p=p, beta=cfg["beta"],
                                 opt_cost=cfg["opt_cost"])
        if pipe == "lp_variant":
            r = run_lp_variant(parts, k, params, seed, cfg["bits"])
        else:
            r = run_algorithm3(parts, k, params, seed, cfg["bits"])
        clustering, ledger = r.clustering, r.ledger
        P, I = ledger.point_bits, ledger.index_bits
        bound_bits = 2 * m * k * (P + I)
        if pipe == "alg3_refined":
            clustering, ledger = large_cluster_refine(parts, r, cfg["bits"])
            bound_bits = 2 * (m * m * k * P + m * k * I)
        if params.w_avg == ESTIMATE and pipe != "lp_variant" or \
                pipe == "lp_variant" and params.opt_cost == ESTIMATE:
            bound_bits = ""       # the estimation run is charged too; no closed form
        if truth is not None and "bad_count" in cert:
            extra["bad_count"] = cert["bad_count"]
            extra["certified"] = cert.get("certified", False)
    elif pipe == "kcenter_2as":
        r = run_kcenter_2as(parts, k, None if cfg["r_star"] == ESTIMATE else cfg["r_star"], cfg["bits"])
        clustering, ledger = r.clustering, r.ledger
        if cfg["r_star"] != ESTIMATE:
            bound_bits = 2 * m * k * ledger.point_bits
        extra["r_star"] = r.r_star
    else:
        r = run_algorithm4(parts, k, cfg["eps"], seed, bits_per_coord=cfg["bits"])
        ledger = r.ledger
        lab = np.argmin(((ds.coords[:, None, :] - r.centers[None]) ** 2).sum(axis=2), axis=1)
        clustering = Clustering(labels=lab, centers=r.centers, p=2.0)
        bound_bits = alg4_bits_bound(ledger, m, k, cfg["eps"])
        extra.update(svd_residual=r.info["svd_residual"], rounds=r.rounds)
        if truth is not None and truth.centers is not None:
            extra["final_center_error"] = center_error(r.centers, truth.centers)
            _, rep = check_spectral_stability(ds.coords, truth.labels, truth.centers, cfg["gamma"])
            extra["stability_margin"] = rep["min_slack"]
            flags["center_error"] = extra["final_center_error"] <= cfg["eps"]
    cost = lp_cost(ds, clustering)
    oracle_cost = ratio = ""
    if ds.n <= MAX_CANDIDATES and pipe != "alg4":
        oracle_cost = brute_force_opt(ds, k, z, p).cost
        ratio = cost / oracle_cost if oracle_cost > 0 else (1.0 if cost == 0 else math.inf)
        if pipe == "alg1":
            a = get_algorithm(cfg["alg_a"]).profile.ratio
            b = get_algorithm(cfg["alg_b"]).profile.ratio
            flags["ratio"] = ratio <= ratio_bound(a, b, p) * (1 + 1e-9)
    row.update(n=ds.n, m=m, k=k, z=z, p=p, algA=cfg["alg_a"], algB=cfg["alg_b"], cost=cost,
               oracle_cost=oracle_cost, ratio=ratio, total_bits=ledger.total_bits,
               bound_bits=bound_bits)
    if bound_bits != "":
        flags["bits"] = ledger.total_bits <= bound_bits
    if truth is not None and pipe in ("alg3", "alg3_refined", "lp_variant", "kcenter_2as"):
        err = closeness_error(clustering.labels, truth.labels)
        extra["closeness_error"] = err
        if "bad_count" in extra and pipe != "alg3_refined":
            extra["bound_error"] = 13 * extra["bad_count"] / ds.n
            flags["error"] = err <= extra["bound_error"] + 1e-12
        if pipe == "kcenter_2as":
            flags["error"] = err == 0
    row.update(extra)
    row["bounds_ok"] = all(flags.values())
    return {key: _fmt(v) for key, v in row.items()}, ledger, clustering


def clustering_to_dict(c: Clustering) -> dict:
    return {"labels": c.labels.tolist(),
            "center_ids": None if c.center_ids is None else c.center_ids.tolist(),
            "centers": None if c.centers is None else c.centers.tolist(),
            "p": _fmt(c.p), "z": _fmt(c.z)}


# output ------------------------------------------------------------------------------------

def _columns(rows: list[dict]) -> list[str]:
    cols = ["pipeline", "seed"] + SUMMARY_COLUMNS if "pipeline" in rows[0] else []
    for r in rows:
        for key in r:
            if key not in cols:
                cols.append(key)
    return cols


def format_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_columns(rows), lineterminator="\n", restval="")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# commands ------------------------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = GenSpec(kind=args.kind, n=args.n, d=args.d, k=args.k, seed=args.seed,
                   **{key: val for key, val in json.loads(args.params or "{}").items()})
    inst = generate(spec)
    side = save_instance(inst, args.out)
    print(json.dumps({"data": str(args.out), "truth": str(side),
                      "certified": bool(inst.certification.get("certified", False))}))
    return 0


def _overrides(args) -> dict:
    keys = ("pipeline", "k", "z", "p", "L", "alg_a", "alg_b", "alpha", "eps", "gamma", "seed",
            "data", "w_avg", "r_star")
    ov = {key: getattr(args, key) for key in keys}
    ov["partition.m"] = args.m
    ov["partition.mode"] = args.partition
    ov["partition.seed"] = args.partition_seed
    if args.p is not None:
        ov["p"] = _num(args.p) if args.p in ("inf", "infinity") else float(args.p)
    return ov


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    row, ledger, clustering = execute(cfg)
    if args.ledger:
        Path(args.ledger).write_text(ledger.to_jsonl())
    if args.assignment:
        Path(args.assignment).write_text(json.dumps(clustering_to_dict(clustering)))
    _emit(format_rows([row], args.format), args.out)
    return 0 if row["bounds_ok"] else 1


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    obj = json.loads(Path(args.assignment).read_text())
    run = Clustering(labels=obj["labels"], centers=obj.get("centers"),
                     center_ids=obj.get("center_ids"), p=_num(obj.get("p", 1.0)), z=obj.get("z", 0))
    truth, _ = load_truth(args.truth or truth_path(args.data))
    row = {"n": ds.n, "cost": lp_cost(ds, run),
           "closeness_error": closeness_error(run.labels, truth.labels)}
    flags = {}
    if args.bits is not None and args.bound_bits is not None:
        row["total_bits"], row["bound_bits"] = args.bits, args.bound_bits
        flags["bits"] = args.bits <= args.bound_bits
    if ds.n <= MAX_CANDIDATES and args.k:
        opt = brute_force_opt(ds, args.k, int(run.z), run.p).cost
        row["oracle_cost"] = opt
        row["ratio"] = row["cost"] / opt if opt > 0 else 1.0
    if args.max_error is not None:
        flags["error"] = row["closeness_error"] <= args.max_error
    row["bounds_ok"] = all(flags.values())
    row = {key: _fmt(v) for key, v in row.items()}
    _emit(format_rows([row], args.format), args.out)
    return 0 if row["bounds_ok"] else 1


def sweep_rows(template: dict, grid: dict) -> list[dict]:
    keys = sorted(grid)
    rows = []
    for combo in itertools.product(*(grid[key] for key in keys)):
        cfg = json.loads(json.dumps(template))
        for key, val in zip(keys, combo):
            if key.startswith("gen."):
                cfg.setdefault("gen", {})[key[4:]] = val
            elif key.startswith("partition."):
                cfg.setdefault("partition", dict(DEFAULTS["partition"]))[key[10:]] = val
            else:
                cfg[key] = val
        merged = json.loads(json.dumps(DEFAULTS))
        merged.update(cfg)
        row, _, _ = execute(validate_config(merged))
        row["spec"] = json.dumps({key: val for key, val in zip(keys, combo) if key != "seed"},
                                 sort_keys=True)
        rows.append(row)
    rows.sort(key=lambda r: (r["spec"], r["seed"]))
    return rows


def cmd_sweep(args) -> int:
    template = json.loads(Path(args.config).read_text())
    grid = json.loads(Path(args.grid).read_text()) if Path(args.grid).exists() else json.loads(args.grid)
    rows = sweep_rows(template, grid)
    _emit(format_rows(rows, args.format), args.out)
    return 0 if all(r["bounds_ok"] for r in rows) else 1


def cmd_oracle(args) -> int:
    ds = load_dataset(args.data)
    res = brute_force_opt(ds, args.k, args.z, _num(args.p) if args.p in ("inf", "infinity") else float(args.p))
    row = {"n": ds.n, "k": args.k, "z": args.z, "p": _fmt(res.clustering.p), "cost": _fmt(res.cost),
           "center_ids": " ".join(str(i) for i in res.clustering.center_ids)}
    _emit(format_rows([row], args.format), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distclust", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a certified instance")
    g.add_argument("--kind", required=True, choices=sorted(
        ["separated_clusters", "as_certified", "spectral_certified", "kcenter_2as", "outlier_injected"]))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--params", help="JSON object of extra generator fields")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one pipeline")
    r.add_argument("--config")
    r.add_argument("--data")
    r.add_argument("--pipeline", choices=PIPELINES)
    r.add_argument("--k", type=int)
    r.add_argument("--z", type=int)
    r.add_argument("--p")
    r.add_argument("--L", type=float)
    r.add_argument("--alg-a", dest="alg_a")
    r.add_argument("--alg-b", dest="alg_b")
    r.add_argument("--alpha", type=float)
    r.add_argument("--eps", type=float)
    r.add_argument("--gamma", type=float)
    r.add_argument("--w-avg", dest="w_avg", type=float)
    r.add_argument("--r-star", dest="r_star", type=float)
    r.add_argument("--m", type=int)
    r.add_argument("--partition", choices=PartitionSpec.MODES)
    r.add_argument("--partition-seed", dest="partition_seed", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--ledger", help="write the message ledger (JSON lines) here")
    r.add_argument("--assignment", help="write labels and centers (JSON) here")
    r.add_argument("--out")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score an assignment against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--assignment", required=True)
    e.add_argument("--truth")
    e.add_argument("--k", type=int)
    e.add_argument("--bits", type=int)
    e.add_argument("--bound-bits", dest="bound_bits", type=float)
    e.add_argument("--max-error", dest="max_error", type=float)
    e.add_argument("--out")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a config template over a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True, help="JSON file or inline JSON object of lists")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="exact optimum of a tiny instance")
    o.add_argument("--data", required=True)
    o.add_argument("--k", type=int, required=True)
    o.add_argument("--z", type=int, default=0)
    o.add_argument("--p", default="1")
    o.add_argument("--out")
    o.add_argument("--format", choices=("csv", "json"), default="csv")
    o.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
