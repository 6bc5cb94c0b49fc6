"""Command-line harness: run scenarios, sweep one axis, time the heuristic, validate files.

Every artifact carries the schema version and the scenario hash so results can
be traced back to the exact inputs that produced them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from .catalog import CatalogError, SizeClass
from .cluster import SetupError, apply_headroom
from .metrics import METRIC_NAMES, RunMetrics, aggregate
from .scenario import POLICY_NAMES, SCHEMA_VERSION, Scenario, ScenarioError

log = logging.getLogger("edgefailover")

SWEEP_AXES = ("headroom", "k_fraction", "alpha", "policy", "failed_sites", "size_class")
RUN_FIELDS = ("schema_version", "scenario_hash", "policy", "seed", "affected", "recovered", "flagged", *METRIC_NAMES)


class UsageError(Exception):
    pass


# scenario assembly -------------------------------------------------------------


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_scenario(args) -> Scenario:
    sc = Scenario.load(args.scenario)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            extra = yaml.safe_load(fh) or {}
        if not isinstance(extra, dict):
            raise ScenarioError(f"{args.config}: expected a mapping of overrides")
        data = _deep_merge(sc.spec.model_dump(mode="json"), extra)
        sc = Scenario.from_dict(data, sc.base_dir)
    updates = {
        "seed": getattr(args, "seed", None),
        "repeats": getattr(args, "repeats", None),
        "headroom": getattr(args, "headroom", None),
        "failed_sites": getattr(args, "failed_sites", None),
        "policy.alpha": getattr(args, "alpha", None),
        "policy.k_fraction": getattr(args, "k_fraction", None),
    }
    return sc.with_overrides(**updates)


def policies_for(args, sc: Scenario) -> list[str]:
    if getattr(args, "policy", None) in (None, "all"):
        return list(sc.spec.policies)
    return [args.policy]


def apply_axis(sc: Scenario, axis: str, value) -> tuple[Scenario, list[str] | None]:
    """Scenario for one sweep point; the second item narrows the policy list."""
    if axis == "policy":
        if value not in POLICY_NAMES:
            raise UsageError(f"unknown policy {value!r}")
        return sc, [value]
    if axis in ("alpha", "k_fraction"):
        return sc.with_overrides(**{f"policy.{axis}": float(value)}), None
    if axis == "headroom":
        return sc.with_overrides(headroom=float(value)), None
    if axis == "failed_sites":
        return sc.with_overrides(failed_sites=int(value)), None
    if axis == "size_class":
        by_name = {c.value.lower(): c for c in SizeClass}
        cls = by_name.get(str(value).lower())
        if cls is None:
            raise UsageError(f"unknown size class {value!r}; choose from {', '.join(c.value for c in SizeClass)}")
        keep = {f.family_id for f in sc.catalog.by_size_class(cls)}
        data = sc.spec.model_dump(mode="json")
        data["cluster"]["app_mix"] = [m for m in data["cluster"]["app_mix"] if m["family_id"] in keep]
        data["cluster"]["apps"] = [a for a in data["cluster"]["apps"] if a["family_id"] in keep]
        if not data["cluster"]["app_mix"] and not data["cluster"]["apps"]:
            raise UsageError(f"no apps of size class {value} in this scenario")
        return Scenario.from_dict(data, sc.base_dir), None
    raise UsageError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def parse_values(axis: str, raw: str) -> list:
    vals = [v.strip() for v in raw.split(",") if v.strip()]
    if not vals:
        raise UsageError("--values is empty")
    if axis in ("headroom", "alpha", "k_fraction"):
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise UsageError(f"non-numeric value for {axis}: {exc}") from exc
    if axis == "failed_sites":
        try:
            return [int(v) for v in vals]
        except ValueError as exc:
            raise UsageError(f"failed_sites values must be integers: {exc}") from exc
    return vals


# running -----------------------------------------------------------------------


def _one(job):
    sc, seed, policy, want_log = job
    res, m = sc.run(seed, policy)
    return m, (res.log_lines() if want_log else None)


def run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))


def run_row(m: RunMetrics, extra: dict | None = None) -> dict:
    row = {"schema_version": SCHEMA_VERSION, **(extra or {})}
    s = m.summary()
    for k in RUN_FIELDS:
        if k != "schema_version":
            row[k] = s[k]
    return row


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fields})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# commands ----------------------------------------------------------------------


def cmd_run(args) -> int:
    sc = load_scenario(args)
    pols = policies_for(args, sc)
    seeds = [sc.spec.seed + r for r in range(sc.spec.repeats)]
    jobs = [(sc, s, p, True) for p in pols for s in seeds]
    results = run_jobs(jobs, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = sc.digest()
    with open(out / "runs.jsonl", "w") as fh:
        for (_, seed, pol, _), (m, lines) in zip(jobs, results):
            head = {"kind": "run", "policy": pol, "scenario_hash": digest, "schema_version": SCHEMA_VERSION, "seed": seed}
            fh.write(json.dumps(head, sort_keys=True, separators=(",", ":")) + "\n")
            for line in lines:
                fh.write(line + "\n")
    metrics = [m for m, _ in results]
    write_json(
        out / "metrics.json",
        {
            "schema_version": SCHEMA_VERSION,
            "scenario": sc.spec.name,
            "scenario_hash": digest,
            "runs": [m.to_dict() for m in metrics],
            "aggregate": aggregate(metrics),
        },
    )
    write_csv(out / "metrics.csv", [run_row(m) for m in metrics])
    for pol, agg in aggregate(metrics).items():
        rr = agg["recovery_rate"]["mean"]
        mt = agg["mean_mttr"]["mean"]
        ac = agg["acc_reduction"]["mean"]
        print(
            f"{pol:10s} recovery {_pct(rr)}  mttr {_ms(mt)}  acc-reduction {_pct(ac)}  runs {agg['runs']}"
        )
    print(f"wrote {out}/runs.jsonl, metrics.json, metrics.csv (scenario {digest})")
    return 0


def cmd_sweep(args) -> int:
    base = load_scenario(args)
    values = parse_values(args.axis, args.values)
    seeds = [base.spec.seed + r for r in range(base.spec.repeats)]
    points = []
    jobs = []
    for v in values:
        sc, only = apply_axis(base, args.axis, v)
        pols = only or policies_for(args, sc)
        for p in pols:
            points.append((v, p, sc.digest()))
            jobs.extend((sc, s, p, False) for s in seeds)
    t0 = time.perf_counter()
    results = [m for m, _ in run_jobs(jobs, args.jobs)]
    log.info("sweep of %d runs took %.1f s", len(results), time.perf_counter() - t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(seeds)
    run_rows, agg_rows = [], []
    for i, (v, p, digest) in enumerate(points):
        chunk = results[i * n : (i + 1) * n]
        run_rows += [run_row(m, {args.axis: v}) for m in chunk]
        agg = aggregate(chunk)[p]
        row = {"schema_version": SCHEMA_VERSION, "scenario_hash": digest, args.axis: v, "policy": p, "runs": agg["runs"]}
        for name in METRIC_NAMES:
            for stat in ("mean", "min", "max"):
                row[f"{name}_{stat}"] = agg[name][stat]
        agg_rows.append(row)
    write_csv(out / "sweep_runs.csv", run_rows)
    write_csv(out / "sweep.csv", agg_rows)
    write_json(
        out / "sweep.json",
        {
            "schema_version": SCHEMA_VERSION,
            "base_scenario_hash": base.digest(),
            "axis": args.axis,
            "values": values,
            "seeds": seeds,
            "rows": agg_rows,
        },
    )
    for r in agg_rows:
        print(
            f"{args.axis}={r[args.axis]!s:6s} {r['policy']:10s} recovery {_pct(r['recovery_rate_mean'])}  "
            f"mttr {_ms(r['mean_mttr_mean'])}  acc-reduction {_pct(r['acc_reduction_mean'])}"
        )
    print(f"wrote {out}/sweep.csv, sweep_runs.csv, sweep.json ({len(run_rows)} runs)")
    return 0


def parse_sizes(raw: str) -> list[tuple[int, int, int]]:
    out = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.lower().split("x")
        if len(bits) != 3:
            raise UsageError(f"size {part!r} is not APPSxSERVERSxVARIANTS")
        try:
            out.append(tuple(int(b) for b in bits))
        except ValueError as exc:
            raise UsageError(f"size {part!r}: {exc}") from exc
    if not out:
        raise UsageError("--sizes is empty")
    return out


def bench_heuristic(sizes, seed: int = 0, rounds: int = 1) -> list[dict]:
    from .kernels import BACKEND
    from .progressive import plan_failover
    from .synth import failover_instance

    rows = []
    for n_apps, n_servers, n_var in sizes:
        req = failover_instance(random.Random(seed), n_apps, n_servers, n_var)
        best = float("inf")
        for _ in range(rounds):
            t0 = time.perf_counter()
            dec = plan_failover(req)
            best = min(best, time.perf_counter() - t0)
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "apps": n_apps,
                "servers": n_servers,
                "variants": n_var,
                "seed": seed,
                "backend": BACKEND,
                "seconds": best,
                "recovered": len(dec.selection),
            }
        )
    return rows


def cmd_bench(args) -> int:
    rows = bench_heuristic(parse_sizes(args.sizes), args.seed or 0, args.rounds)
    for r in rows:
        print(f"{r['apps']:6d} apps {r['servers']:5d} servers {r['variants']:2d} variants  {r['seconds'] * 1e3:10.3f} ms  ({r['backend']})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "bench_heuristic.csv", rows)
    return 0


def cmd_validate(args) -> int:
    sc = load_scenario(args)
    state = sc.state()
    if sc.spec.headroom is not None:
        try:
            apply_headroom(state, sc.spec.headroom)
        except SetupError as exc:
            raise ScenarioError(str(exc)) from exc
    for p in sc.spec.policies:
        sc.policy(p)
    util = state.utilization()
    print(
        f"ok: {sc.spec.name} ({sc.digest()}) {len(state.servers)} servers in {len(state.sites)} sites, "
        f"{len(state.apps)} apps, memory util {util.mem:.3f}, compute util {util.compute:.3f}"
    )
    return 0


def _pct(v) -> str:
    return "   n/a" if v is None else f"{v:6.2f}%"


def _ms(v) -> str:
    return "     n/a" if v is None else f"{v:8.1f} ms"


# parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgefailover", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp, with_policy=True):
        sp.add_argument("--scenario", default="testbed6", help="scenario file or bundled name (testbed6, large100)")
        sp.add_argument("--config", help="YAML mapping merged over the scenario before flags apply")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--k-fraction", dest="k_fraction", type=float)
        sp.add_argument("--headroom", type=float)
        sp.add_argument("--failed-sites", dest="failed_sites", type=int)
        if with_policy:
            sp.add_argument("--policy", choices=[*POLICY_NAMES, "all"], default="all")

    r = sub.add_parser("run", help="simulate a scenario and write the run log and metrics")
    scenario_flags(r)
    r.add_argument("--out", default="out")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every policy across values of one axis")
    scenario_flags(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", default="out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench-heuristic", help="time the failover heuristic on synthetic instances")
    b.add_argument("--sizes", default="10x4x4,1000x500x4,3000x500x4", help="APPSxSERVERSxVARIANTS,...")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--rounds", type=int, default=3)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("validate", help="parse and cross-check a scenario without running it")
    scenario_flags(v, with_policy=False)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, CatalogError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SetupError as exc:
        print(f"setup failed: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
