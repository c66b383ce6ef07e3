"""Experiment orchestration: phase diagrams, theorem checks, percolation sweeps.

Every experiment is described by a manifest (JSON) and produces CSV files
whose bytes depend only on the manifest and seeds: floats are written with
shortest round-trip repr, rows are ordered by cell index, and worker-pool
merges are index-ordered.  Timestamps live in the manifest, never in CSVs.
"""

from __future__ import annotations

import datetime
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .errors import ParameterError
from .rules import make_linear, make_sqrt, rule_from_json, LinearRule
from . import net, ibrw
from .net import derive_rng
from . import operators as op


# ---------------------------------------------------------------------------
# manifests and grid results
# ---------------------------------------------------------------------------

@dataclass
class ExperimentManifest:
    kind: str
    params: dict
    seed: int
    out_dir: str = "."
    version: str = __version__
    created: str = ""

    def __post_init__(self):
        if not self.created:
            self.created = datetime.datetime.now(datetime.timezone.utc).isoformat()

    @property
    def ref(self):
        """Stable reference string placed in every CSV this run emits."""
        return f"{self.kind}-seed{self.seed}-v{self.version}"

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)

    @staticmethod
    def load(path):
        with open(path) as fh:
            return ExperimentManifest(**json.load(fh))


@dataclass
class GridResult:
    schema: list
    rows: list = field(default_factory=list)
    manifest_ref: str = ""
    overlays: dict = field(default_factory=dict)   # name -> list of (x, y)

    def emit_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"#manifest={self.manifest_ref}\n")
            fh.write(",".join(self.schema) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    @staticmethod
    def load_csv(path, expected_schema=None):
        with open(path) as fh:
            ref_line = fh.readline().rstrip("\n")
            if not ref_line.startswith("#manifest="):
                raise ParameterError(f"{path}: missing manifest reference line")
            schema = fh.readline().rstrip("\n").split(",")
            if expected_schema is not None and schema != list(expected_schema):
                raise ParameterError(
                    f"{path}: schema drift: {schema} != {list(expected_schema)}")
            rows = []
            for line in fh:
                rows.append(tuple(_parse(v) for v in line.rstrip("\n").split(",")))
        return GridResult(schema, rows, ref_line.split("=", 1)[1])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _parse(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            continue
    return v


def worker_count(requested=None):
    """Requested worker count; the environment variable wins only when unset."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("PA_GIANT_WORKERS")
    return max(1, int(env)) if env else 1


def _run_cells(fn, cells, workers):
    """Evaluate fn over enumerated cells, merging deterministically by index."""
    if workers <= 1:
        return [fn(c) for c in cells]
    import multiprocessing as mp
    with mp.Pool(workers) as pool:
        return pool.map(fn, cells)


# ---------------------------------------------------------------------------
# phase diagrams
# ---------------------------------------------------------------------------

def _make_rule(family, gamma, beta):
    if family == "linear":
        return make_linear(gamma, beta)
    if family == "sqrt":
        return make_sqrt(gamma, beta)
    raise ParameterError(f"unknown family {family!r}")


def linear_boundary_beta(gamma):
    """Closed-form phase boundary beta_c(gamma) = (1/2-gamma)^2/(1-gamma)."""
    return (0.5 - gamma) ** 2 / (1.0 - gamma)


def sqrt_curve_beta(coef, target="lower", tol=1e-4):
    """Bisection root of a[f] = 1/2 (lower) or a[f]+sqrt(a c) = 1 (upper)
    in beta at fixed sqrt-coefficient; both sides increase in beta."""

    def g(beta):
        rule = make_sqrt(coef, beta)
        a = op.series_a(rule, 0.5)
        if not a.finite:
            return math.inf
        if target == "lower":
            return a.value - 0.5
        c = op.series_c(rule, 0.5)
        return a.value + math.sqrt(a.value * c.value) - 1.0

    lo, hi = 1e-9, 1.0
    if g(hi) < 0:
        return math.nan         # curve exits the admissible beta range
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_PHASE_SCHEMA = ["gamma", "beta", "engine", "value", "err_lo", "err_hi",
                 "verdict", "status"]


def _phase_cell(args):
    family, gamma, beta, engine, seed, n_vertices, reps, cell = args
    try:
        rule = _make_rule(family, gamma, beta)
    except ParameterError:
        return (gamma, beta, engine, math.nan, math.nan, math.nan, "invalid", "skipped")
    try:
        if engine == "criterion":
            v = op.giant_criterion(rule)
            rep = op.rho_rank2(rule, 0.5)
            rho = rep.rho.value if rep.rho.finite else math.inf
            return (gamma, beta, engine, rho, 0.0, 0.0, v.giant, "ok")
        if engine == "survival":
            cfg = ibrw.IntConfig()
            res = ibrw.estimate_survival(rule, cfg, reps, derive_seed(seed, cell))
            lo, hi = res["wilson_ci"]
            return (gamma, beta, engine, res["p_hat"], lo, hi,
                    "yes" if lo > 1e-12 else "no", "ok")
        if engine == "network":
            g = net.generate(rule, n_vertices, derive_seed(seed, cell))
            st = net.components(g)
            fr = st.largest / n_vertices
            return (gamma, beta, engine, fr, fr, fr,
                    "yes" if fr > 0.01 else "no", "ok")
        raise ParameterError(f"unknown engine {engine!r}")
    except Exception as e:        # cell failures recorded, run continues
        return (gamma, beta, engine, math.nan, math.nan, math.nan,
                "error", f"failed:{type(e).__name__}")


def derive_seed(seed, *path):
    """Single integer sub-seed for a named cell/replica."""
    rng = derive_rng(seed, *path)
    return int(rng.integers(0, 2 ** 62))


def run_phase_diagram(family, gammas, betas, engine, manifest,
                      n_vertices=100_000, reps=1000, workers=None):
    """Grid of verdicts/estimates over (gamma, beta) plus boundary overlays."""
    gammas = list(gammas)
    betas = list(betas)
    if not gammas or not betas:
        raise ParameterError("phase diagram grid must be nonempty")
    cells = []
    idx = 0
    for gm in gammas:
        for be in betas:
            cells.append((family, gm, be, engine, manifest.seed,
                          n_vertices, reps, idx))
            idx += 1
    rows = _run_cells(_phase_cell, cells, worker_count(workers))
    result = GridResult(_PHASE_SCHEMA, rows, manifest.ref)
    if family == "linear":
        result.overlays["boundary"] = [(g, linear_boundary_beta(g)) for g in gammas]
    else:
        result.overlays["lower"] = [(g, sqrt_curve_beta(g, "lower")) for g in gammas]
        result.overlays["upper"] = [(g, sqrt_curve_beta(g, "upper")) for g in gammas]
    return result


# ---------------------------------------------------------------------------
# theorem cross-validation
# ---------------------------------------------------------------------------

def run_theorem_check(rule, n_vertices, reps, manifest, n_seeds=3, kmax=5):
    """Compare network component structure against the killed-tree estimates."""
    fractions, seconds = [], []
    for i in range(n_seeds):
        g = net.generate(rule, n_vertices, derive_seed(manifest.seed, "net", i))
        st = net.components(g)
        fractions.append(st.largest / n_vertices)
        seconds.append(st.second_largest / n_vertices)
    cfg = ibrw.IntConfig()
    surv = ibrw.estimate_survival(rule, cfg, reps,
                                  derive_seed(manifest.seed, "int"))
    sd_int = ibrw.estimate_size_dist(rule, cfg, reps,
                                     derive_seed(manifest.seed, "sizes"), kmax)
    g = net.generate(rule, n_vertices, derive_seed(manifest.seed, "net", 0))
    sd_net = net.size_distribution(g, kmax)
    deltas = {k: abs(sd_net[k] - sd_int[k]) for k in range(1, kmax + 1)}
    report = {
        "largest_fraction_mean": float(np.mean(fractions)),
        "largest_fraction_sd": float(np.std(fractions)),
        "second_fraction_mean": float(np.mean(seconds)),
        "p_hat": surv["p_hat"],
        "p_ci": surv["wilson_ci"],
        "ambiguous_fraction": surv["ambiguous_fraction"],
        "size_dist_network": sd_net,
        "size_dist_int": {k: sd_int[k] for k in range(1, kmax + 1)},
        "size_dist_deltas": deltas,
        "degenerate": n_vertices == 1,
    }
    report["gap"] = abs(report["largest_fraction_mean"] - surv["p_hat"])
    return report


def check_engines_consistent(criterion_grid, survival_grid):
    """No cell may be certainly-giant on one engine and certainly-not on the other.

    Returns the list of conflicting (gamma, beta) pairs; callers treat a
    nonempty list as a failed run.
    """
    verdicts = {(r[0], r[1]): r[6] for r in criterion_grid.rows}
    conflicts = []
    for r in survival_grid.rows:
        key = (r[0], r[1])
        cv = verdicts.get(key)
        ci_lo = r[4]
        # the survival engine can certify presence (CI excluding 0) but never
        # absence at finite reps, so only one direction can hard-conflict
        if cv == "no" and ci_lo > 0:
            conflicts.append(key)
    return conflicts


# ---------------------------------------------------------------------------
# percolation sweeps
# ---------------------------------------------------------------------------

_SWEEP_SCHEMA = ["p", "seed_index", "largest_fraction", "second_fraction",
                 "largest", "second", "predicted_threshold"]


def run_percolation_sweep(rule, n_vertices, p_list, manifest, n_seeds=3,
                          workers=None):
    """Largest-component fraction per retention probability.

    For linear rules the predicted threshold (or robustness) is attached to
    every row; percolation draws are coupled across p for a fixed seed index.
    """
    if any(p < 0 or p > 1 for p in p_list):
        raise ParameterError("p_list entries must lie in [0, 1]")
    thr = op.percolation_threshold(rule) if isinstance(rule, LinearRule) else None
    thr_val = math.nan if thr is None else thr
    g = net.generate(rule, n_vertices, derive_seed(manifest.seed, "base"))
    rows = []
    for i in range(n_seeds):
        seed_i = derive_seed(manifest.seed, "perc", i)
        for p in p_list:
            gp = net.percolate(g, p, seed_i)
            st = net.components(gp)
            rows.append((float(p), i, st.largest / n_vertices,
                         st.second_largest / n_vertices,
                         st.largest, st.second_largest, thr_val))
    return GridResult(_SWEEP_SCHEMA, rows, manifest.ref)


# ---------------------------------------------------------------------------
# SVG heatmaps
# ---------------------------------------------------------------------------

_VIRIDIS = [(0.267, 0.005, 0.329), (0.283, 0.141, 0.458), (0.254, 0.265, 0.530),
            (0.207, 0.372, 0.553), (0.164, 0.471, 0.558), (0.128, 0.567, 0.551),
            (0.135, 0.659, 0.518), (0.267, 0.749, 0.441), (0.478, 0.821, 0.318),
            (0.741, 0.873, 0.150), (0.993, 0.906, 0.144)]


def _color(v):
    v = min(max(v, 0.0), 1.0)
    x = v * (len(_VIRIDIS) - 1)
    i = min(int(x), len(_VIRIDIS) - 2)
    t = x - i
    rgb = [(1 - t) * _VIRIDIS[i][c] + t * _VIRIDIS[i + 1][c] for c in range(3)]
    return "#%02x%02x%02x" % tuple(int(255 * c) for c in rgb)


def emit_heatmap(grid_result, path, value_col="value", x_col="gamma",
                 y_col="beta", width=640, height=520):
    """Self-contained SVG: one rect per cell, overlay polylines, a legend."""
    if not grid_result.rows:
        raise ParameterError("cannot render an empty grid")
    sch = grid_result.schema
    ix, iy, iv = sch.index(x_col), sch.index(y_col), sch.index(value_col)
    xs = sorted({r[ix] for r in grid_result.rows})
    ys = sorted({r[iy] for r in grid_result.rows})
    vals = [r[iv] for r in grid_result.rows
            if isinstance(r[iv], (int, float)) and math.isfinite(r[iv])]
    vmin = min(vals) if vals else 0.0
    vmax = max(vals) if vals else 1.0
    span = (vmax - vmin) or 1.0
    mleft, mbot, mtop, mright = 60, 40, 16, 90
    pw = (width - mleft - mright) / len(xs)
    ph = (height - mtop - mbot) / len(ys)

    def px(x):
        return mleft + xs.index(x) * pw

    def py(y):
        return height - mbot - (ys.index(y) + 1) * ph

    def data_px(x):
        x0, x1 = min(xs), max(xs)
        return mleft + (x - x0) / ((x1 - x0) or 1.0) * (len(xs) - 1) * pw + pw / 2

    def data_py(y):
        y0, y1 = min(ys), max(ys)
        return height - mbot - ((y - y0) / ((y1 - y0) or 1.0)
                                * (len(ys) - 1) * ph + ph / 2)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for r in grid_result.rows:
        v = r[iv]
        if isinstance(v, (int, float)) and math.isfinite(v):
            col = _color((v - vmin) / span)
        else:
            col = "#cccccc"
        parts.append(f'<rect x="{px(r[ix]):.2f}" y="{py(r[iy]):.2f}" '
                     f'width="{pw:.2f}" height="{ph:.2f}" fill="{col}"/>')
    for name, pts in grid_result.overlays.items():
        good = [(x, y) for x, y in pts
                if math.isfinite(y) and min(ys) <= y <= max(ys)]
        if len(good) >= 2:
            d = " ".join(f"{data_px(x):.2f},{data_py(y):.2f}" for x, y in good)
            parts.append(f'<polyline points="{d}" fill="none" stroke="white" '
                         f'stroke-width="2" stroke-dasharray="6,3"/>')
            gx, gy = good[len(good) // 2]
            parts.append(f'<text x="{data_px(gx):.2f}" y="{data_py(gy) - 6:.2f}" '
                         f'fill="white" font-size="11">{name}</text>')
    # axes labels
    parts.append(f'<text x="{mleft}" y="{height - 8}" font-size="12">'
                 f'{x_col}: {min(xs)} .. {max(xs)}</text>')
    parts.append(f'<text x="8" y="{mtop + 6}" font-size="12" '
                 f'transform="rotate(90 8 {mtop + 6})">'
                 f'{y_col}: {min(ys)} .. {max(ys)}</text>')
    # legend: vertical gradient bar
    lx = width - mright + 18
    steps = 32
    lh = (height - mtop - mbot) / steps
    for i in range(steps):
        vv = 1.0 - i / (steps - 1)
        yy = mtop + i * lh
        parts.append(f'<rect x="{lx}" y="{yy:.2f}" width="14" '
                     f'height="{lh + 0.5:.2f}" fill="{_color(vv)}"/>')
    parts.append(f'<text x="{lx + 18}" y="{mtop + 10}" font-size="11">'
                 f'{_fmt(float(vmax))[:8]}</text>')
    parts.append(f'<text x="{lx + 18}" y="{height - mbot}" font-size="11">'
                 f'{_fmt(float(vmin))[:8]}</text>')
    parts.append(f'<text x="{lx}" y="{mtop - 4}" font-size="11">{value_col}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
    return path
