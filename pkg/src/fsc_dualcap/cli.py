"""Command-line entry point: ``fsc-dualcap <subcommand> ...``.

Exit codes: 0 success, 1 refusal or invalid input (a JSON record with the
reason is still written), 2 resource or search-budget failure.
"""

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import analytic
from .channels import Fsc, make_dec, make_ising, make_post, make_trapdoor
from .dp import MAX_HORIZON_SEQUENCES, bellman_residual, finite_horizon_bounds
from .errors import DomainError, Refusal, ResourceError, SchemaError, SearchFailure
from .input_driven import upper_bound_input_driven
from .optimizer import SearchSpec, optimize_test_dist, rank_qgraph_pool
from .qgraph import QGraph, dec_qgraph, enumerate_qgraphs, markov_qgraph
from .results import BoundResult, dumps, to_jsonable, write_atomic
from .testdist import TestDist, family_for
from .unifilar import SolverOptions, upper_bound_unifilar

EXIT_OK, EXIT_REFUSED, EXIT_RESOURCE = 0, 1, 2
BUILTIN_CHANNELS = ("trapdoor", "ising", "post", "dec")


# ---- input loading ----------------------------------------------------------

def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(path, f"invalid JSON at line {exc.lineno} column {exc.colno}") from None


def load_channel(spec, p=None, eps=None):
    """A JSON file or one of the built-in names (``post`` takes ``--p``,
    ``dec`` takes ``--eps``)."""
    if spec in BUILTIN_CHANNELS:
        if spec == "trapdoor":
            return make_trapdoor()
        if spec == "ising":
            return make_ising()
        if spec == "post":
            return make_post(0.5 if p is None else p)
        return make_dec(0.5 if eps is None else eps)
    return Fsc.from_dict(load_json(spec), path=spec)


def load_qgraph(spec, ch):
    """A JSON file, ``dec`` or ``markov:K`` (order-K Markov graph on the
    channel's outputs)."""
    if spec == "dec":
        return dec_qgraph()
    if spec.startswith("markov:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad Markov order in {spec!r}") from None
        return markov_qgraph(k, ch.output_count)
    return QGraph.from_dict(load_json(spec), path=spec)


def parse_floats(text, name):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise DomainError(f"--{name} expects comma-separated numbers, got {text!r}") from None


def load_test_dist(args, g):
    if args.test_dist:
        return TestDist.from_dict(load_json(args.test_dist), path=args.test_dist)
    if not args.family:
        raise DomainError("give --test-dist or --family with --params")
    fam = family_for(args.family, g)
    params = parse_floats(args.params or "", "params")
    if len(params) != fam.dim:
        raise DomainError(f"family {fam.name!r} takes {fam.dim} parameters, got {len(params)}")
    return fam(params)


def parse_grid(text):
    """``start:stop:step`` inclusive of ``stop``."""
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise DomainError(f"grid must be start:stop:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise DomainError(f"empty grid {text!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [min(hi, round(lo + i * step, 12)) for i in range(count)]


def solver_options(args):
    return SolverOptions(solver=args.solver, delta=args.delta, tol=args.tol,
                         state_space=args.state_space, s0=args.s0)


# ---- output -----------------------------------------------------------------

def _flat(record, prefix=""):
    out = {}
    for k, v in record.items():
        if isinstance(v, dict):
            out.update(_flat(v, f"{prefix}{k}."))
        elif isinstance(v, (list, tuple)) and any(isinstance(t, (dict, list)) for t in v):
            out[f"{prefix}{k}"] = json.dumps(to_jsonable(v))
        elif isinstance(v, (list, tuple)):
            out[f"{prefix}{k}"] = ";".join(repr(t) if isinstance(t, float) else str(t) for t in v)
        else:
            out[f"{prefix}{k}"] = v
    return out


def render(payload, fmt):
    if fmt == "json":
        return dumps(payload) + "\n"
    payload = to_jsonable(payload)
    rows = payload.get("rows") if isinstance(payload, dict) else None
    if rows is None:
        rows = [_flat(payload)]
    else:
        rows = [_flat(r) for r in rows]
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def emit(payload, args, default_format="json"):
    fmt = args.format or default_format
    text = render(payload, fmt)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


# ---- subcommands --------------------------------------------------------------

def cmd_bound(args):
    ch = load_channel(args.channel, args.p, args.eps)
    g = load_qgraph(args.qgraph, ch)
    r = load_test_dist(args, g)
    opts = solver_options(args)
    if args.mode == "input-driven":
        res = upper_bound_input_driven(ch, g, r, opts)
    else:
        res = upper_bound_unifilar(ch, g, r, opts)
    return {"status": "ok", **res.to_dict()}


def _reproduce_trapdoor(args):
    cert = analytic.trapdoor_certificate()
    dp = analytic.trapdoor_dp()
    rng = np.random.default_rng(args.seed)
    samples = rng.dirichlet(np.ones(4), args.samples)
    rep = bellman_residual(dp, cert, samples)
    diag = {"residual": rep.max_residual, "policy_gap": rep.max_policy_gap,
            "samples": rep.count, "seed": args.seed, "closed_form": "log2(3/2)"}
    out = BoundResult(analytic.LOG2_3_2, "certificate", diag, {"channel": "trapdoor"}).to_dict()
    if args.numeric:
        num = upper_bound_unifilar(make_trapdoor(), markov_qgraph(1, 2),
                                   analytic.trapdoor_test_dist(), solver_options(args))
        out["numeric"] = num.to_dict()
    return out


def _reproduce_ising(args):
    best = analytic.ising_minimize(starts=args.starts, seed=args.seed)
    return best.to_result().to_dict()


def _reproduce_dec(args):
    eps = 0.5 if args.eps is None else args.eps
    up = analytic.dec_upper_bound(eps)
    lo = analytic.dec_lower_bound(eps, q_max=None)
    diag = {"eps": eps, "p": up.aux["p"], "root_residual": up.aux["root_residual"],
            "feedback_form": analytic.dec_feedback_capacity_form(eps),
            "lower": lo.value, "lower_a": lo.aux["a"], "gap": up.value - lo.value}
    return BoundResult(up.value, "closed-form", diag, {"channel": "dec"}).to_dict()


def _reproduce_post(args):
    p = 0.5 if args.p is None else args.p
    closed = analytic.post_bound(p)
    diag = {"p": p, "K": closed.aux["K"]}
    if 0.0 < p < 1.0:
        zs = np.linspace(0.0, 1.0, 1001)
        diag["action_gap"] = float(np.abs(analytic.post_action_gap(p, zs)).max())
        cert = analytic.post_certificate(p)
        diag["residual"] = bellman_residual(analytic.post_dp(p), cert,
                                            np.stack([zs, 1 - zs], axis=1)).max_residual
        if args.numeric:
            num = upper_bound_unifilar(make_post(p), markov_qgraph(1, 2),
                                       analytic.post_test_dist(p), solver_options(args))
            diag["rvi"] = num.value
    return BoundResult(closed.value, "closed-form", diag, {"channel": "post"}).to_dict()


def cmd_reproduce(args):
    handler = {"trapdoor": _reproduce_trapdoor, "ising": _reproduce_ising,
               "dec": _reproduce_dec, "post": _reproduce_post}[args.channel]
    return {"status": "ok", **handler(args)}


def cmd_sweep(args):
    if args.channel != "dec":
        raise DomainError("sweep is available for the DEC only")
    rows = []
    for eps in parse_grid(args.eps_grid):
        up = analytic.dec_upper_bound(eps).value
        lo = analytic.dec_lower_bound(eps, q_max=None).value
        rows.append({"eps": eps, "upper": up, "lower": lo, "gap": up - lo})
    return {"status": "ok", "rows": rows}


def _search_spec(args):
    return SearchSpec(starts=args.starts, budget=args.budget, seed=args.seed,
                      mode=args.mode, options=solver_options(args))


def cmd_optimize(args):
    ch = load_channel(args.channel, args.p, args.eps)
    g = load_qgraph(args.qgraph, ch)
    out = optimize_test_dist(ch, g, family_for(args.family, g), _search_spec(args))
    payload = {"status": "ok", "params": out.params, "incumbent_trace": out.incumbent_trace,
               **out.result.to_dict()}
    if args.log:
        payload["log"] = [e.__dict__ for e in out.log]
    return payload


def cmd_rank_pool(args):
    ch = load_channel(args.channel, args.p, args.eps)
    if args.pool_dir:
        files = sorted(f for f in os.listdir(args.pool_dir)
                       if f.endswith(".json") and f != "manifest.json")
        pool = [QGraph.from_dict(load_json(os.path.join(args.pool_dir, f)), path=f) for f in files]
    else:
        files = list(args.graphs or [])
        pool = [load_qgraph(spec, ch) for spec in files]
    if not pool:
        raise DomainError("the pool is empty")
    families = args.family.split(",")
    if len(families) == 1:
        families = families * len(pool)
    ranking = rank_qgraph_pool(ch, pool, families, _search_spec(args))
    names = {id(g): f for g, f in zip(pool, files)}
    rows = [{"rank": i + 1, "graph": names[id(e.graph)], "nodes": e.graph.node_count,
             "family": e.family, "bound": e.value, "evaluations": e.outcome.evaluations,
             "status": "ok"} for i, e in enumerate(ranking.entries)]
    rows += [{"rank": "", "graph": files[i], "nodes": g.node_count, "family": families[i],
              "bound": "", "evaluations": 0, "status": f"skipped: {reason}"}
             for i, g, reason in ranking.skipped]
    return {"status": "ok", "rows": rows}


def cmd_enumerate(args):
    graphs = enumerate_qgraphs(args.outputs, args.max_nodes, dedupe=args.dedupe,
                               min_nodes=args.min_nodes)
    rows = []
    for i, g in enumerate(graphs):
        name = f"qgraph_{g.node_count}n_{i:06d}.json"
        if args.out_dir:
            write_atomic(os.path.join(args.out_dir, name), dumps(g.to_dict()) + "\n")
        rows.append({"file": name, "nodes": g.node_count, "key": g.key()})
    manifest = {"status": "ok", "outputs": args.outputs, "max_nodes": args.max_nodes,
                "min_nodes": args.min_nodes, "dedupe": args.dedupe, "count": len(graphs),
                "rows": rows}
    if args.out_dir:
        write_atomic(os.path.join(args.out_dir, "manifest.json"), dumps(manifest) + "\n")
    return manifest


def cmd_verify(args):
    if args.channel == "ising":
        params = parse_floats(args.params or "", "params")
        if len(params) != 4:
            raise DomainError("--params needs a,b,c,d")
        cert, report = analytic.ising_certificate(*params)
        dp = analytic.ising_dp(*params)
        rep = bellman_residual(dp, cert, dp.space.points)
        return {"status": "ok", "channel": "ising", "params": params,
                "feasible": report.feasible, "constraints": list(report.values),
                "violated": report.violated, "policy_margins": list(report.policy_margins),
                "certifies": report.certifies, "rho": cert.rho, "residual": rep.max_residual,
                "policy_gap": rep.max_policy_gap}
    if args.channel == "post":
        p = 0.5 if args.p is None else args.p
        zs = np.linspace(0.0, 1.0, 1001)
        cert = analytic.post_certificate(p)
        rep = bellman_residual(analytic.post_dp(p), cert, np.stack([zs, 1 - zs], axis=1))
        return {"status": "ok", "channel": "post", "p": p, "rho": cert.rho,
                "residual": rep.max_residual, "policy_gap": rep.max_policy_gap,
                "action_gap": float(np.abs(analytic.post_action_gap(p, zs)).max())}
    if args.channel == "trapdoor":
        rng = np.random.default_rng(args.seed)
        rep = bellman_residual(analytic.trapdoor_dp(), analytic.trapdoor_certificate(),
                               rng.dirichlet(np.ones(4), args.samples))
        return {"status": "ok", "channel": "trapdoor", "rho": analytic.LOG2_3_2,
                "residual": rep.max_residual, "policy_gap": rep.max_policy_gap,
                "samples": rep.count}
    eps = 0.5 if args.eps is None else args.eps
    up = analytic.dec_upper_bound(eps)
    return {"status": "ok", "channel": "dec", "eps": eps, "value": up.value, **up.aux,
            "feedback_form": analytic.dec_feedback_capacity_form(eps)}


def cmd_finite_horizon(args):
    ch = load_channel(args.channel, args.p, args.eps)
    g = load_qgraph(args.qgraph, ch)
    r = load_test_dist(args, g)
    if ch.input_count ** args.n > MAX_HORIZON_SEQUENCES:
        raise ResourceError(f"{ch.input_count}^{args.n} input sequences exceed the budget")
    rows = []
    for n in range(1, args.n + 1):
        lo, hi = finite_horizon_bounds(ch, g, r, n)
        rows.append({"n": n, "lower": lo, "upper": hi})
    return {"status": "ok", "rows": rows}


# ---- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--out", help="write the result here (atomically) instead of stdout")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--seed", type=int, default=0)


def _channel_args(p, required=True):
    p.add_argument("--channel", required=required,
                   help="JSON file or one of: " + ", ".join(BUILTIN_CHANNELS))
    p.add_argument("--p", type=float, help="POST channel parameter")
    p.add_argument("--eps", type=float, help="DEC erasure probability")


def _solver_args(p):
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--solver", choices=("point-based", "lattice"), default="point-based")
    p.add_argument("--state-space", choices=("auto", "grid", "reachable"), default="auto")
    p.add_argument("--s0", type=int, default=0)
    p.add_argument("--mode", choices=("unifilar", "input-driven"), default="unifilar")


def _test_dist_args(p):
    p.add_argument("--test-dist", help="JSON file with a 'table'")
    p.add_argument("--family", help="trapdoor, post, ising, dec or full")
    p.add_argument("--params", help="comma-separated family parameters")


def build_parser():
    parser = argparse.ArgumentParser(prog="fsc-dualcap",
                                     description="Dual-capacity upper bounds for finite-state channels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="upper bound for one (channel, Q-graph, test distribution)")
    _channel_args(p)
    p.add_argument("--qgraph", required=True, help="JSON file, 'dec' or 'markov:K'")
    _test_dist_args(p)
    _solver_args(p)
    _common(p)
    p.set_defaults(run=cmd_bound)

    p = sub.add_parser("reproduce", help="closed-form bounds with verification residuals")
    p.add_argument("--channel", required=True, choices=BUILTIN_CHANNELS)
    p.add_argument("--p", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--starts", type=int, default=50)
    p.add_argument("--numeric", action="store_true", help="also run the value iteration")
    _solver_args(p)
    _common(p)
    p.set_defaults(run=cmd_reproduce)

    p = sub.add_parser("sweep", help="DEC upper and lower bounds over an erasure grid")
    p.add_argument("--channel", required=True, choices=("dec",))
    p.add_argument("--eps-grid", default="0:1:0.01")
    _common(p)
    p.set_defaults(run=cmd_sweep, default_format="csv")

    p = sub.add_parser("optimize", help="search a test-distribution family")
    _channel_args(p)
    p.add_argument("--qgraph", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--log", action="store_true", help="include the evaluation log")
    _solver_args(p)
    _common(p)
    p.set_defaults(run=cmd_optimize)

    p = sub.add_parser("rank-pool", help="optimise and rank a pool of Q-graphs")
    _channel_args(p)
    p.add_argument("--pool-dir", help="directory of Q-graph JSON files")
    p.add_argument("--graphs", nargs="*", help="graph specs instead of --pool-dir")
    p.add_argument("--family", default="full", help="one name, or one per graph, comma-separated")
    p.add_argument("--starts", type=int, default=4)
    p.add_argument("--budget", type=int, default=500)
    _solver_args(p)
    _common(p)
    p.set_defaults(run=cmd_rank_pool, default_format="csv")

    p = sub.add_parser("enumerate-qgraphs", help="list strongly connected Q-graphs")
    p.add_argument("--outputs", type=int, required=True)
    p.add_argument("--max-nodes", type=int, required=True)
    p.add_argument("--min-nodes", type=int, default=1)
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--out-dir", help="write one JSON per graph and manifest.json here")
    _common(p)
    p.set_defaults(run=cmd_enumerate)

    p = sub.add_parser("verify", help="check a Bellman certificate or the Ising constraints")
    p.add_argument("--channel", required=True, choices=BUILTIN_CHANNELS)
    p.add_argument("--params", help="Ising a,b,c,d")
    p.add_argument("--p", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--samples", type=int, default=10_000)
    _common(p)
    p.set_defaults(run=cmd_verify)

    p = sub.add_parser("finite-horizon", help="n-letter lower and upper bounds for n = 1..N")
    _channel_args(p)
    p.add_argument("--qgraph", required=True)
    _test_dist_args(p)
    p.add_argument("--n", type=int, default=10)
    _common(p)
    p.set_defaults(run=cmd_finite_horizon, default_format="csv")
    return parser


def _failure(args, status, code, **fields):
    payload = {"status": status, **fields}
    try:
        emit(payload, args)
    except OSError:
        sys.stdout.write(dumps(payload) + "\n")
    print(f"fsc-dualcap: {status}: {fields.get('detail', '')}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    default_format = getattr(args, "default_format", "json")
    try:
        payload = args.run(args)
    except Refusal as exc:
        return _failure(args, "refused", EXIT_REFUSED, reason=exc.reason, detail=exc.detail)
    except SchemaError as exc:
        return _failure(args, "schema-error", EXIT_REFUSED, reason="schema", path=exc.path,
                        detail=str(exc))
    except DomainError as exc:
        return _failure(args, "invalid-input", EXIT_REFUSED, reason="domain", detail=str(exc))
    except SearchFailure as exc:
        return _failure(args, "search-failed", EXIT_RESOURCE, reason="search",
                        detail=str(exc), report=exc.report)
    except ResourceError as exc:
        return _failure(args, "resource-limit", EXIT_RESOURCE, reason="resource", detail=str(exc))
    emit(payload, args, default_format)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
