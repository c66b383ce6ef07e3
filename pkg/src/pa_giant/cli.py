"""Command-line interface.

    pa-giant <subcommand> [--config cfg.json] [--seed S] [--out DIR] [--workers K]

Subcommands: generate, components, percolate, degree-dist, size-dist,
survival, operator, criterion, phase-diagram, theorem-check,
percolation-sweep.  Options given on the command line override the config
file.  Exit status is nonzero when an invariant fails or a cell reports a
hard error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .rules import rule_from_json
from . import net, ibrw, harness
from . import operators as op
from .harness import ExperimentManifest, GridResult
from .errors import ParameterError


def _load_config(args):
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    return cfg


def _get(cfg, args, name, default=None, cast=None):
    v = getattr(args, name.replace("-", "_"), None)
    if v is None:
        v = cfg.get(name, default)
    if v is not None and cast is not None:
        v = cast(v)
    return v


def _rule_of(cfg, args):
    spec = _get(cfg, args, "rule")
    if spec is None:
        raise ParameterError("a rule is required (--rule '<json>' or config)")
    if isinstance(spec, str):
        spec = json.loads(spec)
    return rule_from_json(spec)


def _outdir(cfg, args):
    out = _get(cfg, args, "out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _float_list(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x]


def _grid_spec(s):
    """Parse 'start:stop:n' into a list, or pass a comma list through."""
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    if ":" in str(s):
        a, b, n = str(s).split(":")
        return list(np.linspace(float(a), float(b), int(n)))
    return _float_list(s)


def cmd_generate(cfg, args):
    rule = _rule_of(cfg, args)
    n = _get(cfg, args, "n", 1000, int)
    seed = _get(cfg, args, "seed", 0, int)
    mode = _get(cfg, args, "mode", "degree_class")
    out = _outdir(cfg, args)
    g = net.generate(rule, n, seed, mode=mode)
    g.check_invariants()
    g.dump(os.path.join(out, "graph.csv"), os.path.join(out, "graph.json"))
    print(f"generated N={n} edges={g.n_edges} -> {out}/graph.csv")
    return 0


def _load_graph(cfg, args):
    out = _get(cfg, args, "in-dir", None) or _get(cfg, args, "out", ".")
    return net.Graph.load(os.path.join(out, "graph.csv"),
                          os.path.join(out, "graph.json"))


def cmd_components(cfg, args):
    g = _load_graph(cfg, args)
    st = net.components(g)
    print(json.dumps({
        "n_vertices": g.n_vertices,
        "largest": st.largest,
        "second_largest": st.second_largest,
        "largest_fraction": st.largest / g.n_vertices,
        "n_components": st.n_components,
    }, indent=1))
    return 0


def cmd_percolate(cfg, args):
    g = _load_graph(cfg, args)
    p = _get(cfg, args, "p", None, float)
    seed = _get(cfg, args, "seed", 0, int)
    if p is None:
        raise ParameterError("--p is required")
    out = _outdir(cfg, args)
    gp = net.percolate(g, p, seed)
    gp.check_invariants()
    gp.dump(os.path.join(out, "percolated.csv"), os.path.join(out, "percolated.json"))
    print(f"kept {gp.n_edges}/{g.n_edges} edges -> {out}/percolated.csv")
    return 0


def cmd_degree_dist(cfg, args):
    g = _load_graph(cfg, args)
    kmax = _get(cfg, args, "kmax", 20, int)
    hist = net.indegree_histogram(g)
    doc = {"histogram": {str(k): hist.get(k, 0.0) for k in range(kmax + 1)}}
    rule_spec = _get(cfg, args, "rule")
    if rule_spec is not None:
        rule = _rule_of(cfg, args)
        doc["tv_distance_to_mu"] = net.compare_mu(g, rule, kmax)
    print(json.dumps(doc, indent=1))
    return 0


def cmd_size_dist(cfg, args):
    kmax = _get(cfg, args, "kmax", 5, int)
    if _get(cfg, args, "rule") is not None and _get(cfg, args, "reps") is not None:
        rule = _rule_of(cfg, args)
        reps = _get(cfg, args, "reps", 10000, int)
        seed = _get(cfg, args, "seed", 0, int)
        cfg_int = ibrw.IntConfig(
            survival_threshold=_get(cfg, args, "threshold", 1000, int))
        est = ibrw.estimate_size_dist(rule, cfg_int, reps, seed, kmax)
        print(json.dumps({str(k): v for k, v in est.items()}, indent=1))
    else:
        g = _load_graph(cfg, args)
        sd = net.size_distribution(g, kmax)
        print(json.dumps({str(k): v for k, v in sd.items()}, indent=1))
    return 0


def cmd_survival(cfg, args):
    rule = _rule_of(cfg, args)
    reps = _get(cfg, args, "reps", 1000, int)
    seed = _get(cfg, args, "seed", 0, int)
    out = _outdir(cfg, args)
    cfg_int = ibrw.IntConfig(
        survival_threshold=_get(cfg, args, "threshold", 1000, int),
        max_particles=_get(cfg, args, "max-particles", 100000, int))
    res = ibrw.estimate_survival(rule, cfg_int, reps, seed)
    grid = GridResult(
        ["p_hat", "ci_low", "ci_high", "ambiguous_fraction", "reps", "seed"],
        [(res["p_hat"], res["wilson_ci"][0], res["wilson_ci"][1],
          res["ambiguous_fraction"], reps, seed)],
        f"survival-seed{seed}")
    path = os.path.join(out, "survival.csv")
    grid.emit_csv(path)
    print(json.dumps(res))
    return 0 if res["ambiguous_fraction"] < 0.01 else 1


def cmd_operator(cfg, args):
    rule = _rule_of(cfg, args)
    alphas = _float_list(_get(cfg, args, "alphas", "0.5"))
    out = _outdir(cfg, args)
    rows = []
    for alpha in alphas:
        rep = op.rho_rank2(rule, alpha)
        rows.append((alpha,
                     rep.a_val.value, rep.b_val.value, rep.c_val.value,
                     rep.B_val.value, rep.rho.lo, rep.rho.hi, rep.status))
    grid = GridResult(
        ["alpha", "a", "b", "c", "B", "rho_low", "rho_high", "status"],
        rows, "operator")
    path = os.path.join(out, "operator.csv")
    grid.emit_csv(path)
    for r in rows:
        print(",".join(harness._fmt(v) for v in r))
    return 0


def cmd_criterion(cfg, args):
    rule = _rule_of(cfg, args)
    verdict = op.giant_criterion(rule)
    print(json.dumps(verdict.to_json(), indent=1))
    return 0


def cmd_phase_diagram(cfg, args):
    family = _get(cfg, args, "family", "linear")
    gammas = _grid_spec(_get(cfg, args, "gammas", "0.0:0.45:10"))
    betas = _grid_spec(_get(cfg, args, "betas", "0.05:1.0:10"))
    engine = _get(cfg, args, "engine", "criterion")
    seed = _get(cfg, args, "seed", 0, int)
    out = _outdir(cfg, args)
    workers = _get(cfg, args, "workers", None, int)
    reps = _get(cfg, args, "reps", 1000, int)
    n = _get(cfg, args, "n", 100000, int)
    manifest = ExperimentManifest("phase-diagram",
                                  {"family": family, "gammas": gammas,
                                   "betas": betas, "engine": engine,
                                   "n": n, "reps": reps},
                                  seed, out)
    manifest.save(os.path.join(out, "manifest.json"))
    grid = harness.run_phase_diagram(family, gammas, betas, engine, manifest,
                                     n_vertices=n, reps=reps, workers=workers)
    grid.emit_csv(os.path.join(out, "phase.csv"))
    harness.emit_heatmap(grid, os.path.join(out, "phase.svg"))
    failures = [r for r in grid.rows if str(r[7]).startswith("failed")]
    print(f"{len(grid.rows)} cells, {len(failures)} failures -> {out}/phase.csv")
    return 1 if failures else 0


def cmd_theorem_check(cfg, args):
    rule = _rule_of(cfg, args)
    n = _get(cfg, args, "n", 100000, int)
    reps = _get(cfg, args, "reps", 10000, int)
    seed = _get(cfg, args, "seed", 0, int)
    seeds = _get(cfg, args, "seeds", 3, int)
    out = _outdir(cfg, args)
    manifest = ExperimentManifest("theorem-check",
                                  {"rule": rule.to_json(), "n": n,
                                   "reps": reps, "n_seeds": seeds}, seed, out)
    manifest.save(os.path.join(out, "manifest.json"))
    report = harness.run_theorem_check(rule, n, reps, manifest, n_seeds=seeds)
    print(json.dumps(report, indent=1, default=str))
    return 0


def cmd_percolation_sweep(cfg, args):
    rule = _rule_of(cfg, args)
    n = _get(cfg, args, "n", 100000, int)
    p_list = _float_list(_get(cfg, args, "p-list", "0.1,0.25,0.5,0.75,1.0"))
    seed = _get(cfg, args, "seed", 0, int)
    seeds = _get(cfg, args, "seeds", 3, int)
    out = _outdir(cfg, args)
    manifest = ExperimentManifest("percolation-sweep",
                                  {"rule": rule.to_json(), "n": n,
                                   "p_list": p_list, "n_seeds": seeds}, seed, out)
    manifest.save(os.path.join(out, "manifest.json"))
    grid = harness.run_percolation_sweep(rule, n, p_list, manifest, n_seeds=seeds)
    grid.emit_csv(os.path.join(out, "sweep.csv"))
    print(f"{len(grid.rows)} rows -> {out}/sweep.csv")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "components": cmd_components,
    "percolate": cmd_percolate,
    "degree-dist": cmd_degree_dist,
    "size-dist": cmd_size_dist,
    "survival": cmd_survival,
    "operator": cmd_operator,
    "criterion": cmd_criterion,
    "phase-diagram": cmd_phase_diagram,
    "theorem-check": cmd_theorem_check,
    "percolation-sweep": cmd_percolation_sweep,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pa-giant", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--rule", help="rule JSON, e.g. "
                        '\'{"kind":"linear","gamma":0.3,"beta":0.5}\'')
    parser.add_argument("--n", type=int)
    parser.add_argument("--reps", type=int)
    parser.add_argument("--seeds", type=int)
    parser.add_argument("--mode")
    parser.add_argument("--p", type=float)
    parser.add_argument("--p-list")
    parser.add_argument("--kmax", type=int)
    parser.add_argument("--alphas")
    parser.add_argument("--family")
    parser.add_argument("--gammas")
    parser.add_argument("--betas")
    parser.add_argument("--engine")
    parser.add_argument("--threshold", type=int)
    parser.add_argument("--max-particles", type=int)
    parser.add_argument("--in-dir", help="input directory holding graph.csv")
    args = parser.parse_args(argv)
    cfg = _load_config(args)
    try:
        return _COMMANDS[args.command](cfg, args)
    except (ParameterError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
