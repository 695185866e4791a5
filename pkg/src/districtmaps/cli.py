"""``dm``: command-line entry point.

Exit codes: 0 success, 1 domain error (invalid plan, bad file contents,
stalled chain...), 2 usage or unreadable/unwritable paths.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (AnalysisError, DistanceHistogram, VoteTable, histogram, percentile_of,
                       relative_error_values, seats, seats_histogram)
from .centroid import (CentroidError, CentroidMatrix, Ensemble, load_centroid, merge,
                       plan_centroid_distance_sq, sample_medoid, save_centroid)
from .chain import ChainStall, load_plan_dir, plant_outlier, refine_medoid, run_chain
from .districting import (EnumerationGuardError, PlanError, SeedPlanError, ValidityConfig,
                          cut_edges, is_valid, population_balance, read_plan_csv, seed_plan,
                          write_plan_csv)
from .graph import GraphError, GridSpec, load_graph, make_grid, save_graph
from .kcut import KCutError, build_instance, exact_population_medoid, load_instance, negative_demo, save_instance
from .metric import ThetaError, distance_fast, distance, distance_sq, parse_theta

DOMAIN_ERRORS = (GraphError, PlanError, SeedPlanError, EnumerationGuardError, ThetaError,
                 CentroidError, AnalysisError, KCutError, ChainStall, ValueError)


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.cause = exc


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"DM_THREADS must be an integer, got {env!r}") from None
    return 1


def _cfg(args) -> ValidityConfig:
    return ValidityConfig(args.eps, getattr(args, "max_cut_edges", None))


def _read(path, loader, *extra):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    return loader(path, *extra)


def _graph(path):
    return _read(path, load_graph)


def _plan(path, g):
    return _read(path, read_plan_csv, g)


def _centroid(path):
    return _read(path, load_centroid)


def _plans(path, g) -> Ensemble:
    if not Path(path).is_dir():
        raise FileNotFoundError(f"{path}: not a plan directory")
    return load_plan_dir(path, g)


def _out(path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# graph / plan / dist -------------------------------------------------------

def cmd_graph_gen(args):
    pop = args.pop
    if args.pop_file:
        pop = [float(x) for x in Path(args.pop_file).read_text().split()]
    g = make_grid(GridSpec(args.rows, args.cols, pop))
    save_graph(g, _out(args.output))
    print(f"wrote {args.output}: n={g.n} edges={len(g.edges)} hash={g.fingerprint}")


def cmd_graph_validate(args):
    g = _graph(args.graph)
    print(f"ok: n={g.n} edges={len(g.edges)} total_pop={g.total_pop!r} hash={g.fingerprint}")


def cmd_plan_seed(args):
    g = _graph(args.graph)
    plan = seed_plan(g, args.k, _cfg(args), args.seed)
    write_plan_csv(plan, g, _out(args.output))
    print(f"wrote {args.output}: k={plan.k} cut_edges={cut_edges(plan, g)}")


def cmd_plan_validate(args):
    g = _graph(args.graph)
    plan = _plan(args.plan, g)
    v = is_valid(plan, g, _cfg(args))
    bal = population_balance(plan, g)
    print(f"k={plan.k} cut_edges={cut_edges(plan, g)} max_deviation={float(np.abs(bal.deviation).max())!r}")
    if not v:
        print(f"invalid: {v.rule}: {v.detail}")
        return 1
    print("valid")
    return 0


def cmd_dist(args):
    g = _graph(args.graph)
    a = _plan(args.plan_a, g)
    b = _plan(args.plan_b, g)
    w = parse_theta(args.theta)
    d = distance_fast(a, b, w, g) if w.factorizable else distance(a, b, w, g)
    print(f"d={d!r}")
    print(f"d2={distance_sq(a, b, w, g)!r}")


# chain -------------------------------------------------------------------

def cmd_chain_run(args):
    g = _graph(args.graph)
    cfg = _cfg(args)
    start = _plan(args.seed_plan, g) if args.seed_plan else seed_plan(g, args.k, cfg, args.seed)
    acc = CentroidMatrix(g.n)
    res = run_chain(g, args.k, cfg, start, args.seed, args.steps, args.burn_in, args.thin,
                    accumulator=acc, plan_dir=args.output, keep=False)
    save_centroid(acc, Path(args.output) / "centroid.csv")
    print(f"kept {res.n_kept} plans in {args.output} ({res.final.proposals} proposals)")


def _refine_like(args):
    g = _graph(args.graph)
    start = _plan(args.start, g)
    cent = _centroid(args.centroid)
    w = parse_theta(args.theta)
    cfg = _cfg(args)
    v = is_valid(start, g, cfg)
    if not v:
        raise PlanError(f"start plan is invalid ({v.rule})")
    return g, start, cent, w, cfg


def cmd_chain_refine(args):
    g, start, cent, w, cfg = _refine_like(args)
    plan, traj = refine_medoid(start, cent, w, g, cfg, args.seed, args.steps)
    write_plan_csv(plan, g, _out(args.output))
    if args.trajectory:
        _out(args.trajectory).write_text("".join(f"{x!r}\n" for x in traj))
    print(f"d2 {traj[0]!r} -> {traj[-1]!r} after {len(traj) - 1} accepted moves")


def cmd_chain_outlier(args):
    g, start, cent, w, cfg = _refine_like(args)
    plan = plant_outlier(start, cent, w, g, cfg, args.seed, args.steps)
    write_plan_csv(plan, g, _out(args.output))
    d0 = plan_centroid_distance_sq(start, cent, w, g)
    d1 = plan_centroid_distance_sq(plan, cent, w, g)
    print(f"d2 {d0!r} -> {d1!r}")


# centroid / medoid / hist / percentile ------------------------------------

def cmd_centroid(args):
    if not args.plans and not args.merge:
        raise UsageError("give --plans DIR or --merge FILE...")
    g = _graph(args.graph)
    parts = [_centroid(p) for p in args.merge or ()]
    if args.plans:
        parts.append(CentroidMatrix(g.n).add_many(_plans(args.plans, g)))
    acc = parts[0]
    for other in parts[1:]:
        acc = merge(acc, other)
    if acc.n != g.n:
        raise CentroidError(f"centroid covers {acc.n} units, graph has {g.n}")
    save_centroid(acc, _out(args.output))
    print(f"wrote {args.output}: T={acc.T} support={acc.support_size}")


def cmd_medoid(args):
    g = _graph(args.graph)
    ens = _plans(args.plans, g)
    cent = _centroid(args.centroid)
    w = parse_theta(args.theta)
    m = sample_medoid(ens, cent, w, g, threads=_threads(args))
    if args.output:
        write_plan_csv(m.plan, g, _out(args.output))
    print(f"medoid index={m.index} d2={m.d2!r}")


def _probe_args(items, g) -> dict:
    probes = {}
    for item in items or ():
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        probes[name] = _plan(path, g)
    return probes


def cmd_hist(args):
    g = _graph(args.graph)
    ens = _plans(args.plans, g)
    cent = _centroid(args.centroid)
    w = parse_theta(args.theta)
    h = histogram(ens, cent, w, g, Path(args.centroid).name, threads=_threads(args))
    h.save(_out(args.output))
    print(f"wrote {args.output}: T={h.T} min={float(h.values[0])!r} max={float(h.values[-1])!r}")
    if args.plot:
        from .plotting import render_distance_histogram

        probes = {name: plan_centroid_distance_sq(p, cent, w, g)
                  for name, p in _probe_args(args.probe, g).items()}
        render_distance_histogram(h, _out(args.plot), probes, bins=args.bins)
        print(f"wrote {args.plot}")


def cmd_percentile(args):
    g = _graph(args.graph)
    h = _read(args.hist, DistanceHistogram.load)
    cent = _centroid(args.centroid)
    w = parse_theta(args.theta or h.theta)
    for name, p in _probe_args(args.probe, g).items():
        d2 = plan_centroid_distance_sq(p, cent, w, g)
        print(f"{name}: d2={d2!r} percentile={percentile_of(h, d2)!r}")


def cmd_seats(args):
    g = _graph(args.graph)
    votes = _read(args.votes, lambda p: VoteTable.load(g, p))
    if args.plan:
        r = seats(_plan(args.plan, g), votes)
        print(f"seats_a={r.seats_a} seats_b={r.seats_b} ties={list(r.ties)}")
        print("shares_a=" + ",".join(repr(float(s)) for s in r.shares))
    if args.ensemble:
        counts = seats_histogram(_plans(args.ensemble, g), votes)
        for s, c in enumerate(counts):
            print(f"{s},{c}")
        if args.plot:
            from .plotting import render_seats_histogram

            probes = {"plan": seats(_plan(args.plan, g), votes).seats_a} if args.plan else None
            render_seats_histogram(counts, _out(args.plot), probes)
    if not args.plan and not args.ensemble:
        raise UsageError("give a plan and/or --ensemble DIR")


# kcut --------------------------------------------------------------------

def cmd_kcut_export(args):
    g = _graph(args.graph)
    cent = _centroid(args.centroid)
    inst = build_instance(cent, parse_theta(args.theta), g, args.k, _cfg(args))
    save_instance(inst, _out(args.output))
    print(f"wrote {args.output}: n={inst.n} k={inst.k}")


def cmd_kcut_solve(args):
    g = _graph(args.graph)
    inst = _read(args.instance, load_instance, g, _cfg(args))
    sol = exact_population_medoid(inst)
    print(f"objective={sol.objective!r} maximisers={len(sol.plans)}")
    for t, p in enumerate(sol.plans):
        print(f"plan {t}: " + ",".join(str(int(x)) for x in p.canonical))
        if args.output:
            Path(args.output).mkdir(parents=True, exist_ok=True)
            write_plan_csv(p, g, Path(args.output) / f"medoid_{t}.csv")


def cmd_kcut_demo(args):
    print("T,delta,trials,miss_rate,expected_miss,wrong_medoid_rate,cost_ratio")
    for T in args.T:
        r = negative_demo(T, args.delta, args.trials, args.seed)
        print(f"{T},{r.delta!r},{r.trials},{r.miss_rate!r},{r.expected_miss!r},"
              f"{r.wrong_medoid_rate!r},{r.cost_ratio!r}")


# pipeline / report ----------------------------------------------------------

@dataclass
class RunConfig:
    graph: str
    k: int
    eps: float = 0.05
    theta: str = "unweighted"
    steps: int = 10_000
    burn_in: int = 2000
    thin: int = 1
    seeds: list[int] = field(default_factory=lambda: [0])
    refine_steps: int = 2000
    max_cut_edges: int | None = None
    probes: dict[str, str] = field(default_factory=dict)
    output: str = "run"

    def validate(self):
        if not Path(self.graph).exists():
            raise FileNotFoundError(f"{self.graph}: no such file or directory")
        for name, p in self.probes.items():
            if not Path(p).exists():
                raise FileNotFoundError(f"probe {name}: {p}: no such file or directory")
        if not self.seeds:
            raise UsageError("at least one rng seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise UsageError("rng seeds must be distinct")


def _run_seed(g, k, cfg, seed, steps, burn_in, thin):
    start = seed_plan(g, k, cfg, seed)
    acc = CentroidMatrix(g.n)
    res = run_chain(g, k, cfg, start, seed, steps, burn_in, thin, accumulator=acc)
    acc.flush()
    return res.kept, acc


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (OSError, UsageError):
        raise
    except DOMAIN_ERRORS as exc:
        raise StageError(name, exc) from exc


def cmd_pipeline(args):
    rc = _run_config(args)
    rc.validate()
    out = Path(rc.output)
    out.mkdir(parents=True, exist_ok=True)
    g = _stage("graph", load_graph, rc.graph)
    cfg = ValidityConfig(rc.eps, rc.max_cut_edges)
    w = _stage("theta", parse_theta, rc.theta)
    probes = {name: _stage("probe", read_plan_csv, p, g) for name, p in sorted(rc.probes.items())}
    threads = _threads(args)

    jobs = [(g, rc.k, cfg, s, rc.steps, rc.burn_in, rc.thin) for s in rc.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(threads, len(jobs))) as pool:
            futures = [pool.submit(_run_seed, *j) for j in jobs]
            runs = [_stage("chain", f.result) for f in futures]
    else:
        runs = [_stage("chain", _run_seed, *j) for j in jobs]

    shutil.copyfile(rc.graph, out / "graph.json")
    probe_dir = out / "probes"
    if probes:
        probe_dir.mkdir(exist_ok=True)
        for name, p in probes.items():
            write_plan_csv(p, g, probe_dir / f"{name}.csv")

    from .plotting import render_distance_histogram

    def emit(dirpath: Path, ens, acc, seed_for_refine):
        dirpath.mkdir(exist_ok=True)
        save_centroid(acc, dirpath / "centroid.csv")
        h = _stage("histogram", histogram, ens, acc, w, g, "centroid.csv", threads)
        h.save(dirpath / "hist.csv")
        m = _stage("medoid", sample_medoid, ens, acc, w, g, threads)
        write_plan_csv(m.plan, g, dirpath / "medoid.csv")
        refined, traj = _stage("refine", refine_medoid, m.plan, acc, w, g, cfg,
                               seed_for_refine, rc.refine_steps)
        write_plan_csv(refined, g, dirpath / "refined.csv")
        (dirpath / "refine_trajectory.csv").write_text("".join(f"{x!r}\n" for x in traj))
        marks = {"sample medoid": m.d2, "refined medoid": traj[-1]}
        marks.update({name: plan_centroid_distance_sq(p, acc, w, g) for name, p in probes.items()})
        render_distance_histogram(h, dirpath / "hist.png", marks)
        return m, traj

    seeds_out = []
    for s, (ens, acc) in zip(rc.seeds, runs):
        m, traj = emit(out / f"seed_{s}", ens, acc, s)
        seeds_out.append({"seed": s, "T": acc.T, "medoid_d2": m.d2, "refined_d2": traj[-1]})

    pooled_acc = runs[0][1]
    for _, acc in runs[1:]:
        pooled_acc = merge(pooled_acc, acc)
    pooled = Ensemble(np.concatenate([e.assignments for e, _ in runs]), rc.k, g.fingerprint)
    emit(out / "pooled", pooled, pooled_acc, rc.seeds[0])

    manifest = {
        "tool": "districtmaps",
        "version": __version__,
        "numpy": np.__version__,
        "graph_hash": g.fingerprint,
        "graph_file_sha256": _file_hash(rc.graph),
        "config": {**asdict(rc), "graph": "graph.json", "output": "."},
        "probe_hashes": {name: _file_hash(probe_dir / f"{name}.csv") for name in probes},
        "seeds": seeds_out,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}: {len(rc.seeds)} seed(s), pooled T={pooled_acc.T}")


def _run_config(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(_read(args.config, Path.read_text))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    cli = {
        "graph": args.graph, "k": args.k, "eps": args.eps, "theta": args.theta,
        "steps": args.steps, "burn_in": args.burn_in, "thin": args.thin, "seeds": args.seeds,
        "refine_steps": args.refine_steps, "max_cut_edges": args.max_cut_edges,
        "output": args.output,
    }
    if args.probe:
        cli["probes"] = {}
        for item in args.probe:
            name, sep, path = item.partition("=")
            cli["probes"][name if sep else Path(item).stem] = path if sep else item
    base.update({key: v for key, v in cli.items() if v is not None})
    for key in ("graph", "k", "output"):
        if key not in base:
            raise UsageError(f"pipeline needs {key!r} (flag or config file)")
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise UsageError(f"bad pipeline config: {exc}") from None


def cmd_report(args):
    out = Path(args.dir)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath}: no such file or directory")
    try:
        manifest = json.loads(mpath.read_text())
        rc = manifest["config"]
        seeds = [s["seed"] for s in manifest["seeds"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise AnalysisError(f"{mpath}: corrupt manifest ({exc})") from None
    g = load_graph(out / "graph.json")
    if g.fingerprint != manifest.get("graph_hash"):
        raise AnalysisError(f"{out / 'graph.json'}: graph hash does not match the manifest")
    w = parse_theta(args.theta or rc["theta"])
    cent = load_centroid(out / "pooled" / "centroid.csv")
    h = DistanceHistogram.load(out / "pooled" / "hist.csv")
    recomputed = args.theta is not None and args.theta != rc["theta"]

    print(f"run: {out}  theta={w.label}  k={rc['k']}  eps={rc['eps']}  seeds={seeds}")
    print(f"T={cent.T}  centroid support={cent.support_size} of {g.n * (g.n - 1) // 2} pairs")
    print()
    print("section,name,d2,percentile")
    probes = {"sample medoid": read_plan_csv(out / "pooled" / "medoid.csv", g),
              "refined medoid": read_plan_csv(out / "pooled" / "refined.csv", g)}
    for name in sorted(rc.get("probes", {})):
        probes[name] = read_plan_csv(out / "probes" / f"{name}.csv", g)
    for name, p in probes.items():
        d2 = plan_centroid_distance_sq(p, cent, w, g)
        pct = "n/a" if recomputed else repr(percentile_of(h, d2))
        print(f"probe,{name},{d2!r},{pct}")

    refined = {s: read_plan_csv(out / f"seed_{s}" / "refined.csv", g) for s in seeds}
    d2 = {s: plan_centroid_distance_sq(p, cent, w, g) for s, p in refined.items()}
    print()
    print("seed,T,sample_medoid_d2,refined_d2")
    for s in seeds:
        own = load_centroid(out / f"seed_{s}" / "centroid.csv")
        med = read_plan_csv(out / f"seed_{s}" / "medoid.csv", g)
        print(f"{s},{own.T},{plan_centroid_distance_sq(med, cent, w, g)!r},{d2[s]!r}")
    if len(seeds) > 1:
        print()
        print("relative error of refined medoids (pooled centroid), percent")
        print("seed," + ",".join(str(s) for s in seeds))
        worst = 0.0
        for a in seeds:
            row = []
            for b in seeds:
                re = relative_error_values(d2[a], d2[b])
                worst = max(worst, re)
                row.append(f"{100 * re:.3f}")
            print(f"{a}," + ",".join(row))
        print(f"max,{100 * worst:.3f}")
        gaps = []
        for i, a in enumerate(seeds):
            for b in seeds[i + 1:]:
                ca = load_centroid(out / f"seed_{a}" / "centroid.csv")
                cb = load_centroid(out / f"seed_{b}" / "centroid.csv")
                gaps.append(distance_sq(ca, cb, w, g))
        print(f"max pairwise centroid d2,{max(gaps)!r}")
        print(f"min sample d2,{float(h.values[0])!r}")


# argument parsing ------------------------------------------------------------

def _common(p, eps=True, theta=False):
    if eps:
        p.add_argument("--eps", type=float, default=0.05, help="population tolerance")
        p.add_argument("--max-cut-edges", type=int, default=None)
    if theta:
        p.add_argument("--theta", default="unweighted",
                       help="unweighted | pop | pathdecay:RATE | explicit:FILE")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dm", description="Districting-plan ensembles, centroids and medoids.")
    ap.add_argument("--threads", type=int, default=None, help="worker count (default $DM_THREADS or 1)")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    graph = sub.add_parser("graph").add_subparsers(dest="action", required=True)
    p = graph.add_parser("gen", help="write a grid graph")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--pop", type=float, default=1.0)
    p.add_argument("--pop-file", help="whitespace-separated per-cell populations, row-major")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_graph_gen)
    p = graph.add_parser("validate")
    p.add_argument("graph")
    p.set_defaults(func=cmd_graph_validate)

    plan = sub.add_parser("plan").add_subparsers(dest="action", required=True)
    p = plan.add_parser("seed", help="random valid starting plan")
    p.add_argument("graph")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_plan_seed)
    p = plan.add_parser("validate")
    p.add_argument("graph")
    p.add_argument("plan")
    _common(p)
    p.set_defaults(func=cmd_plan_validate)

    p = sub.add_parser("dist", help="distance between two plans")
    p.add_argument("graph")
    p.add_argument("plan_a")
    p.add_argument("plan_b")
    _common(p, eps=False, theta=True)
    p.set_defaults(func=cmd_dist)

    chain = sub.add_parser("chain").add_subparsers(dest="action", required=True)
    p = chain.add_parser("run", help="recombination chain into a plan directory")
    p.add_argument("graph")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--seed-plan", help="starting plan (default: random seed plan)")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_chain_run)
    for name, fn in (("refine", cmd_chain_refine), ("outlier", cmd_chain_outlier)):
        p = chain.add_parser(name)
        p.add_argument("graph")
        p.add_argument("start")
        p.add_argument("--centroid", required=True)
        p.add_argument("--steps", type=int, required=True)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("-o", "--output", required=True)
        if name == "refine":
            p.add_argument("--trajectory")
        _common(p, theta=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("centroid", help="centroid of a plan directory, or merge of centroid files")
    p.add_argument("graph")
    p.add_argument("--plans")
    p.add_argument("--merge", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_centroid)

    p = sub.add_parser("medoid", help="sample medoid of a plan directory")
    p.add_argument("graph")
    p.add_argument("--plans", required=True)
    p.add_argument("--centroid", required=True)
    p.add_argument("-o", "--output")
    _common(p, eps=False, theta=True)
    p.set_defaults(func=cmd_medoid)

    p = sub.add_parser("hist", help="distance histogram of a plan directory")
    p.add_argument("graph")
    p.add_argument("--plans", required=True)
    p.add_argument("--centroid", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--plot", help="also render a figure (.png or .svg)")
    p.add_argument("--probe", action="append", help="NAME=plan.csv marker for the figure")
    p.add_argument("--bins", type=int, default=100)
    _common(p, eps=False, theta=True)
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("percentile", help="percentile of probe plans in a histogram")
    p.add_argument("graph")
    p.add_argument("--hist", required=True)
    p.add_argument("--centroid", required=True)
    p.add_argument("--probe", action="append", required=True)
    p.add_argument("--theta", default=None, help="defaults to the histogram's theta")
    p.set_defaults(func=cmd_percentile)

    p = sub.add_parser("seats", help="two-party seat counts")
    p.add_argument("graph")
    p.add_argument("plan", nargs="?")
    p.add_argument("votes")
    p.add_argument("--ensemble", help="plan directory for a seats histogram")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_seats)

    kcut = sub.add_parser("kcut").add_subparsers(dest="action", required=True)
    p = kcut.add_parser("export", help="write the cut-weight instance for a centroid")
    p.add_argument("graph")
    p.add_argument("--centroid", required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    _common(p, theta=True)
    p.set_defaults(func=cmd_kcut_export)
    p = kcut.add_parser("solve", help="exact maximisers by enumeration (n <= 16)")
    p.add_argument("instance")
    p.add_argument("graph")
    p.add_argument("-o", "--output", help="directory for the maximising plans")
    _common(p)
    p.set_defaults(func=cmd_kcut_solve)
    p = kcut.add_parser("demo", help="sampling misses a low-probability population medoid")
    p.add_argument("--T", type=int, nargs="+", default=[10, 100, 1000])
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kcut_demo)

    p = sub.add_parser("pipeline", help="seed, chain, centroid, histogram, medoid, refine")
    p.add_argument("graph", nargs="?")
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("-k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--theta")
    p.add_argument("--steps", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--refine-steps", type=int)
    p.add_argument("--max-cut-edges", type=int)
    p.add_argument("--probe", action="append", help="NAME=plan.csv")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="summarise a pipeline directory")
    p.add_argument("dir")
    p.add_argument("--theta", default=None, help="re-evaluate distances under another theta")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        rc = args.func(args)
    except UsageError as exc:
        print(f"dm: usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        msg = str(exc) if not exc.filename else f"{exc.filename}: {exc.strerror}"
        print(f"dm: {msg}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"dm: stage {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        print(f"dm: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
