"""Killed idealized branching random walk: the neighbourhood tree simulator.

Particles live on (-infinity, 0]; anything pushed above 0 is never created
(killing by windowing).  A particle of either type produces

* left children as a Poisson process in the distance s > 0 with intensity
  e^{-s} E f(Z_s) ds, sampled by thinning under the exponential envelope
  f(0) e^{-(1-gamma) s} (total mass f(0)/(1-gamma)); the child's type is its
  distance to the parent,
* right children of type l at the jump times of the birth process inside
  the window (0, -position]; for a parent of type tau >= 0 the process is
  conditioned to jump at tau and that forced jump produces no child.

The root sits at -Exp(1) and has type l.  Survival is operationalized as the
created population reaching ``survival_threshold``; runs that exhaust a
budget before deciding are reported as ambiguous, never silently dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ParameterError
from .rules import LinearRule
from . import birth as bp
from .net import derive_rng
from .operators import series_from


#: type tag of particles discovered through a right edge (the distinguished
#: point of the type space); numeric types are distances to the parent.
ELL = None


@dataclass(frozen=True)
class Particle:
    position: float
    ptype: float | None = ELL        # ELL or distance-to-parent >= 0
    generation: int = 0

    @property
    def is_ell(self):
        return self.ptype is ELL


@dataclass(frozen=True)
class IntConfig:
    survival_threshold: int = 1000
    max_particles: int = 100_000
    max_generations: int = 10_000
    path_max_jumps: int = 100_000

    def __post_init__(self):
        if self.survival_threshold > self.max_particles:
            raise ParameterError("survival_threshold must be <= max_particles")
        if self.survival_threshold < 1:
            raise ParameterError("survival_threshold must be >= 1")


@dataclass(frozen=True)
class IntOutcome:
    status: str                      # "extinct" | "survived" | "ambiguous"
    total_size: int | None           # exact #tree when extinct, else None
    particles_used: int
    generations_used: int


class IntTables:
    """E f(Z_s) and semigroup ratios for the samplers.

    Linear rules use the closed forms (E^k f(Z_t) = f(k) e^{gamma t}, ratio
    f(k+1)/f(k)); other rules read a SemigroupTable, continuing beyond its
    horizon with the one-sided exponential envelope.
    """

    def __init__(self, rule, semigroup=None):
        self.rule = rule
        self.semigroup = semigroup
        self._linear = isinstance(rule, LinearRule)
        if not self._linear and semigroup is None:
            raise ParameterError(
                "non-linear rules need a SemigroupTable for the INT samplers")

    def ef(self, s):
        """E f(Z_s) from state 0 (upper continuation beyond the table)."""
        if self._linear:
            return self.rule.beta * math.exp(self.rule.gamma * s)
        T = self.semigroup.t_max
        if s <= T:
            return self.semigroup.ef(s)
        return self.semigroup.ef(T) * math.exp(self.rule.gamma_bound * (s - T))

    def ratio(self, k, s):
        if self._linear:
            return self.rule.eval(k + 1) / self.rule.eval(k)
        return self.semigroup.ratio(k, s)


def _as_tables(rule, tables):
    if isinstance(tables, IntTables):
        return tables
    return IntTables(rule, tables)


# ---------------------------------------------------------------------------
# offspring samplers
# ---------------------------------------------------------------------------

def sample_root(rng):
    """Root particle: type l at position -Exp(1)."""
    return Particle(position=-rng.exponential(1.0), ptype=ELL, generation=0)


def offspring_left(rule, parent, tables, rng):
    """Left children of any particle (they are never killed)."""
    tb = _as_tables(rule, tables)
    g = rule.gamma_bound
    f0 = rule.eval(0)
    envelope_mass = f0 / (1.0 - g)
    n = rng.poisson(envelope_mass)
    out = []
    for _ in range(n):
        s = rng.exponential(1.0 / (1.0 - g))
        accept = tb.ef(s) * math.exp(-g * s) / f0
        if not (0.0 <= accept <= 1.0 + 1e-9):
            raise AssertionError(f"left-offspring acceptance {accept} outside [0,1]")
        if rng.uniform() < accept:
            out.append(Particle(parent.position - s, ptype=s,
                                generation=parent.generation + 1))
    return out


def offspring_right(rule, parent, tables, rng, max_jumps=100_000):
    """Right children (type l) at birth-process jumps inside the window."""
    tb = _as_tables(rule, tables)
    window = -parent.position
    if window <= 0.0:
        return []
    if parent.is_ell:
        path = bp.sample_path(rule, 0, window, rng, max_jumps=max_jumps)
        times = path.jump_times
    else:
        path = _conditioned_jumps(rule, parent.ptype, window, tb, rng, max_jumps)
        times = path
    return [Particle(parent.position + float(t), ptype=ELL,
                     generation=parent.generation + 1) for t in times]


def _conditioned_jumps(rule, tau, window, tb, rng, max_jumps):
    """Jump times in (0, window] of Z^[tau] minus the forced jump at tau.

    Same thinning coupling as ``birth.sample_conditioned_path`` but driven by
    the IntTables ratio so it works beyond any table horizon.
    """
    out = []
    t = 0.0
    k1 = 0          # accepted unforced jumps of the conditioned path
    k2 = 1          # dominating path state (starts one higher)
    n = 0
    while True:
        t += rng.exponential(1.0 / rule.eval(k2))
        if t > window:
            break
        if t < tau:
            p_acc = (rule.eval(k1) / rule.eval(k2)) * tb.ratio(k1, tau - t)
        else:
            # the forced birth at tau has happened: state is k1 + 1
            p_acc = rule.eval(k1 + 1) / rule.eval(k2)
        if rng.uniform() < p_acc:
            out.append(t)
            k1 += 1
        k2 += 1
        n += 1
        if n > max_jumps:
            raise BudgetExceededError("conditioned window sampler exceeded budget")
    return np.array(out)


# ---------------------------------------------------------------------------
# tree simulation
# ---------------------------------------------------------------------------

def simulate_int(rule, config, tables, rng) -> IntOutcome:
    """One killed tree, breadth-first by generation.

    Outcomes: extinct (with the exact total size), survived (created
    population reached the threshold), ambiguous (a budget hit first).
    """
    tb = _as_tables(rule, tables)
    root = sample_root(rng)
    created = 1
    queue = [root]
    gen = 0
    while queue:
        if created >= config.survival_threshold:
            return IntOutcome("survived", None, created, gen)
        if gen >= config.max_generations:
            return IntOutcome("ambiguous", None, created, gen)
        next_gen = []
        for particle in queue:
            try:
                fam = offspring_left(rule, particle, tb, rng)
                fam += offspring_right(rule, particle, tb, rng,
                                       max_jumps=config.path_max_jumps)
            except BudgetExceededError:
                return IntOutcome("ambiguous", None, created, gen)
            for child in fam:
                if child.position > 0.0:
                    raise AssertionError("killed particle enqueued")
            next_gen.extend(fam)
            created += len(fam)
            if created >= config.survival_threshold:
                return IntOutcome("survived", None, created, gen + 1)
            if created > config.max_particles:
                return IntOutcome("ambiguous", None, created, gen + 1)
        queue = next_gen
        gen += 1
    return IntOutcome("extinct", created, created, gen)


def estimate_survival(rule, config, reps, seed, tables=None):
    """Monte Carlo estimate of the survival probability p(f).

    Ambiguous runs are excluded from both numerator and denominator and
    reported as a data-quality fraction.  Returns a dict with p_hat,
    wilson_ci (lo, hi), ambiguous_fraction, reps, seed.
    """
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    survived = extinct = ambiguous = 0
    for i in range(reps):
        rng = derive_rng(seed, "int", i)
        out = simulate_int(rule, config, tables, rng)
        if out.status == "survived":
            survived += 1
        elif out.status == "extinct":
            extinct += 1
        else:
            ambiguous += 1
    decided = survived + extinct
    p_hat = survived / decided if decided else math.nan
    return {
        "p_hat": p_hat,
        "wilson_ci": wilson_interval(survived, decided),
        "ambiguous_fraction": ambiguous / reps,
        "reps": reps,
        "seed": int(seed),
    }


def estimate_size_dist(rule, config, reps, seed, kmax, tables=None):
    """Monte Carlo estimate of P(#tree = k) for k <= kmax.

    Survived and ambiguous runs land in the "overflow" bucket together with
    extinct sizes above kmax, so the estimates sum to one.
    """
    if kmax < 1:
        raise ParameterError("kmax must be >= 1")
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    counts = {k: 0 for k in range(1, kmax + 1)}
    overflow = 0
    ambiguous = 0
    for i in range(reps):
        rng = derive_rng(seed, "int", i)
        out = simulate_int(rule, config, tables, rng)
        if out.status == "extinct" and out.total_size <= kmax:
            counts[out.total_size] += 1
        else:
            overflow += 1
            if out.status == "ambiguous":
                ambiguous += 1
    est = {k: c / reps for k, c in counts.items()}
    est["overflow"] = overflow / reps
    est["ambiguous_fraction"] = ambiguous / reps
    return est


def wilson_interval(successes, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return (lo, hi)


def size_one_probability_oracle(rule, n_quad=200_001, y_max=60.0):
    """Independent one-step oracle for P(#tree = 1).

    The tree has a single vertex iff the root has no left children (Poisson,
    mass M(infinity)) and no birth-process jump inside its window; the first
    jump is Exp(f(0)), so the window probability is e^{-f(0) y}.  Integrating
    against the Exp(1) root law by quadrature:

        P = int_0^inf e^{-y} e^{-(M_inf + f(0) y)} dy  =  e^{-M_inf}/(1+f(0)).

    The quadrature value is returned; the closed form is its cross-check.
    """
    m_inf = series_from(rule, 0, 1.0).value
    ys = np.linspace(0.0, y_max, n_quad)
    vals = np.exp(-ys) * np.exp(-(m_inf + rule.eval(0) * ys))
    return float(np.trapezoid(vals, ys))
