"""Concave attachment rules and the closed-form quantities attached to them.

A rule is a concave function f on {0, 1, 2, ...} with 0 < f(k), f(0) <= 1
and increments bounded by gamma_bound < 1.  Three families are supported:

* linear:  f(k) = gamma*k + beta
* sqrt:    f(k) = coef*sqrt(k) + beta
* table:   finitely many tabulated values extended by a linear tail

Rules are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RuleValidationError


@dataclass(frozen=True)
class AttachmentRule:
    """Base class; use :func:`make_linear`, :func:`make_sqrt` or :func:`make_table`."""

    gamma_bound: float

    # -- evaluation -------------------------------------------------------

    def eval(self, k):
        """Rule value f(k) at a nonnegative integer state."""
        raise NotImplementedError

    def eval_array(self, ks):
        """Vectorized f over an integer array."""
        raise NotImplementedError

    def delta(self, k):
        """Increment f(k+1) - f(k); nonnegative and <= gamma_bound."""
        return self.eval(k + 1) - self.eval(k)

    def __call__(self, k):
        return self.eval(k)

    # -- degree weights ---------------------------------------------------

    def mu(self, k):
        """Asymptotic indegree weight mu_k = 1/(1+f(k)) * prod_{l<k} f(l)/(1+f(l))."""
        return float(self.mu_vector(k)[k])

    def mu_vector(self, kmax):
        """Weights mu_0..mu_kmax; they sum to <= 1, the rest is tail mass."""
        if kmax < 0:
            raise ParameterError("kmax must be >= 0")
        fv = self.eval_array(np.arange(kmax + 1))
        ratios = fv / (1.0 + fv)
        prods = np.concatenate([[1.0], np.cumprod(ratios[:-1])])
        return prods / (1.0 + fv)

    # -- structure used by the certified series/tail machinery -------------

    def slope_bounds_beyond(self, k):
        """Certified bounds (s_min, s_max) on all increments delta(j) for j >= k.

        s_max is delta(k) by concavity; s_min is family-specific (the exact
        asymptotic slope where it is known).
        """
        raise NotImplementedError

    @property
    def asymptotic_slope(self):
        """Limit of delta(k) as k -> infinity (exact for all three families)."""
        raise NotImplementedError

    # -- transforms ---------------------------------------------------------

    def scale(self, p):
        """Rule with all values multiplied by p in (0, 1]."""
        raise NotImplementedError

    def to_json(self):
        """JSON-object representation (dict); inverse of :func:`rule_from_json`."""
        raise NotImplementedError

    def to_json_str(self):
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class LinearRule(AttachmentRule):
    gamma: float = 0.0
    beta: float = 1.0

    def eval(self, k):
        return self.gamma * k + self.beta

    def eval_array(self, ks):
        return self.gamma * np.asarray(ks, dtype=float) + self.beta

    def delta(self, k):
        return self.gamma

    def slope_bounds_beyond(self, k):
        return (self.gamma, self.gamma)

    @property
    def asymptotic_slope(self):
        return self.gamma

    def scale(self, p):
        _check_scale(p)
        return make_linear(p * self.gamma, p * self.beta)

    def to_json(self):
        return {"kind": "linear", "gamma": self.gamma, "beta": self.beta}


@dataclass(frozen=True)
class SqrtRule(AttachmentRule):
    coef: float = 0.0
    beta: float = 1.0

    def eval(self, k):
        return self.coef * math.sqrt(k) + self.beta

    def eval_array(self, ks):
        return self.coef * np.sqrt(np.asarray(ks, dtype=float)) + self.beta

    def slope_bounds_beyond(self, k):
        return (0.0, self.delta(k))

    @property
    def asymptotic_slope(self):
        return 0.0

    def scale(self, p):
        _check_scale(p)
        return make_sqrt(p * self.coef, p * self.beta)

    def to_json(self):
        return {"kind": "sqrt", "coef": self.coef, "beta": self.beta}


@dataclass(frozen=True)
class TableRule(AttachmentRule):
    values: tuple = field(default=())
    tail_slope: float = 0.0

    def eval(self, k):
        m = len(self.values)
        if k < m:
            return self.values[k]
        return self.values[-1] + self.tail_slope * (k - (m - 1))

    def eval_array(self, ks):
        ks = np.asarray(ks)
        m = len(self.values)
        vals = np.asarray(self.values, dtype=float)
        clipped = np.minimum(ks, m - 1)
        out = vals[clipped]
        tail = ks >= m
        out = np.where(tail, vals[-1] + self.tail_slope * (ks - (m - 1)), out)
        return out.astype(float)

    def slope_bounds_beyond(self, k):
        if k >= len(self.values) - 1:
            return (self.tail_slope, self.tail_slope)
        return (self.tail_slope, self.delta(k))

    @property
    def asymptotic_slope(self):
        return self.tail_slope

    def scale(self, p):
        _check_scale(p)
        return make_table([p * v for v in self.values], p * self.tail_slope)

    def to_json(self):
        return {"kind": "table", "values": list(self.values),
                "tail_slope": self.tail_slope}


def _check_scale(p):
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"scale factor p={p} must lie in (0, 1]")


def make_linear(gamma, beta):
    """Rule f(k) = gamma*k + beta with 0 <= gamma < 1 and 0 < beta <= 1."""
    if not (0.0 <= gamma < 1.0):
        raise ParameterError(f"gamma={gamma} out of range: gamma must satisfy 0 <= gamma < 1")
    if not (0.0 < beta <= 1.0):
        raise ParameterError(f"beta={beta} out of range: beta must satisfy 0 < beta <= 1")
    return LinearRule(gamma_bound=gamma, gamma=gamma, beta=beta)


def make_sqrt(coef, beta):
    """Rule f(k) = coef*sqrt(k) + beta; the maximal increment is coef."""
    if not (0.0 < beta <= 1.0):
        raise ParameterError(f"beta={beta} out of range: beta must satisfy 0 < beta <= 1")
    if coef < 0.0:
        raise ParameterError(f"coef={coef} out of range: coef must be >= 0")
    if coef >= 1.0:
        raise ParameterError(
            f"coef={coef} out of range: increment bound delta(0)=coef must be < 1")
    return SqrtRule(gamma_bound=coef, coef=coef, beta=beta)


def make_table(values, tail_slope):
    """Tabulated rule, extended beyond the table by a linear tail.

    All invariants are validated eagerly; every violation is reported with
    the first offending index before rejection.
    """
    values = tuple(float(v) for v in values)
    violations = []
    if len(values) == 0:
        raise RuleValidationError(["values must be nonempty"])
    if values[0] > 1.0:
        violations.append(f"f(0) <= 1 violated: f(0)={values[0]}")
    for i, v in enumerate(values):
        if v <= 0.0:
            violations.append(f"f(k) > 0 violated at k={i}: f({i})={v}")
            break
    if tail_slope < 0.0:
        violations.append(f"tail_slope={tail_slope} must be >= 0")
    deltas = [values[i + 1] - values[i] for i in range(len(values) - 1)]
    deltas.append(tail_slope)  # first tail increment
    for i, d in enumerate(deltas):
        if d < 0.0:
            violations.append(f"increasing violated at k={i}: delta({i})={d} < 0")
            break
    for i in range(len(deltas) - 1):
        if deltas[i + 1] > deltas[i] + 1e-15:
            violations.append(
                f"concavity violated at k={i + 1}: "
                f"delta({i + 1})={deltas[i + 1]} > delta({i})={deltas[i]}")
            break
    gamma_bound = max(max(deltas), tail_slope)
    if gamma_bound >= 1.0:
        violations.append(f"increment bound violated: max delta = {gamma_bound} >= 1")
    if violations:
        raise RuleValidationError(violations)
    return TableRule(gamma_bound=gamma_bound, values=values, tail_slope=tail_slope)


def rule_from_json(obj):
    """Rebuild a rule from its JSON object (dict or JSON string)."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    kind = obj.get("kind")
    if kind == "linear":
        return make_linear(obj["gamma"], obj["beta"])
    if kind == "sqrt":
        return make_sqrt(obj["coef"], obj["beta"])
    if kind == "table":
        return make_table(obj["values"], obj["tail_slope"])
    raise ParameterError(f"unknown rule kind: {kind!r}")
