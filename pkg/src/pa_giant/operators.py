"""Spectral criteria for the giant component.

Everything here reduces to three families of series in the rule values,
derived from the jump-time decomposition of the birth process:

* ``series_a``:  sum_k prod_{j<=k} f(j)/(f(j)+alpha)
    equals the integral of e^{-alpha t} E f(Z_t) dt,
* ``series_b``:  the same with alpha replaced by 1-alpha,
    equals the integral of e^{(alpha-1) t} E f(Z_t) dt,
* ``series_c``:  the a-series started from state 1.

The operator that decides survival has rank 2: its image is spanned by the
constants and by tau -> h(tau), so its spectral radius is the top eigenvalue
of [[b, B], [1, a]].  The coupling entry B = int h(tau) e^{alpha tau} dM(tau)
collapses, by Fubini over the jump times, to

    B(alpha) = sum_k m_k * (a_{k+1}(alpha) + b_{k+1}(alpha)),
    m_k = prod_{j<=k} f(j)/(1+f(j)),

where a_m, b_m are the shifted series started from state m.  All sums carry
certified tail intervals obtained by sandwiching the rule beyond the cutoff
between two linear envelopes (slopes from ``slope_bounds_beyond``); for
linear and table rules those envelopes are exact, so the tails are too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .rules import AttachmentRule, LinearRule

_CHUNK = 4096
_CEILING = 1e6         # partial-sum ceiling for the divergence heuristic
_MAX_TERMS = 1 << 23


# ---------------------------------------------------------------------------
# certified values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CertValue:
    """A numeric value with a certified enclosure [lo, hi].

    status is one of:
      "convergent"   -- finite, truth lies in [lo, hi]
      "divergent"    -- certified infinite (minorant series diverges)
      "divergent-ceiling" -- majorant tail infinite and partial sum > ceiling
      "undetermined" -- budget exhausted without a certificate
    """

    value: float
    lo: float
    hi: float
    status: str = "convergent"

    @property
    def finite(self):
        return self.status == "convergent"

    @property
    def width(self):
        return self.hi - self.lo

    def __float__(self):
        return self.value

    @staticmethod
    def exact(x):
        return CertValue(x, x, x)

    @staticmethod
    def divergent(status="divergent"):
        return CertValue(math.inf, math.inf, math.inf, status)


def _combine(fn, *cvs):
    """Apply a coordinatewise-monotone-increasing fn to certified values."""
    if any(not c.finite for c in cvs):
        return CertValue.divergent()
    return CertValue(
        fn(*(c.value for c in cvs)),
        fn(*(c.lo for c in cvs)),
        fn(*(c.hi for c in cvs)),
    )


# ---------------------------------------------------------------------------
# tail closed forms for linear-envelope rules
# ---------------------------------------------------------------------------

def _tail_factor(c, s, alpha):
    """sum_{m>=1} prod_{i=1..m} (c+s*i)/(c+s*i+alpha) = (c+s)/(alpha-s) for s<alpha.

    This is the full a-series of the linear rate function i -> c + s*i shifted
    by one state; infinite when s >= alpha.
    """
    if s >= alpha:
        return math.inf
    return (c + s) / (alpha - s)


def series_from(rule: AttachmentRule, m0: int, alpha: float,
                rel_tol=1e-12, max_terms=_MAX_TERMS, ceiling=_CEILING) -> CertValue:
    """Certified evaluation of sum_{k>=m0} prod_{j=m0..k} f(j)/(f(j)+alpha)."""
    if alpha <= 0:
        raise ParameterError(f"alpha={alpha} must be positive")
    partial = 0.0
    carry = 1.0
    k = m0
    while True:
        ks = np.arange(k, k + _CHUNK)
        fv = rule.eval_array(ks)
        terms = np.cumprod(fv / (fv + alpha)) * carry
        partial += float(terms.sum())
        carry = float(terms[-1])
        k += _CHUNK
        last = k - 1
        c = float(fv[-1])
        s_min, s_max = rule.slope_bounds_beyond(last)
        if carry == 0.0:
            return CertValue(partial, partial, partial)
        t_lo = carry * _tail_factor(c, s_min, alpha)
        t_hi = carry * _tail_factor(c, s_max, alpha)
        if math.isinf(t_lo):
            return CertValue.divergent()
        if math.isfinite(t_hi) and (t_hi - t_lo) <= rel_tol * (partial + t_lo) + 1e-300:
            return CertValue(partial + 0.5 * (t_lo + t_hi), partial + t_lo, partial + t_hi)
        if partial > ceiling and math.isinf(t_hi):
            return CertValue.divergent("divergent-ceiling")
        if k - m0 >= max_terms:
            if math.isinf(t_hi):
                return CertValue(math.nan, partial, math.inf, "undetermined")
            return CertValue(partial + 0.5 * (t_lo + t_hi), partial + t_lo, partial + t_hi)


def series_a(rule, alpha, rel_tol=1e-12):
    """a(alpha) = integral of e^{-alpha t} E f(Z_t) dt, as a certified series sum."""
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha={alpha} must lie in (0, 1)")
    return series_from(rule, 0, alpha, rel_tol)


def series_b(rule, alpha, rel_tol=1e-12):
    """b(alpha) = integral of e^{(alpha-1) t} E f(Z_t) dt."""
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha={alpha} must lie in (0, 1)")
    return series_from(rule, 0, 1.0 - alpha, rel_tol)


def series_c(rule, alpha, rel_tol=1e-12):
    """c(alpha) = integral of e^{-alpha t} E^1 f(Z_t) dt (process started at 1)."""
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha={alpha} must lie in (0, 1)")
    return series_from(rule, 1, alpha, rel_tol)


# ---------------------------------------------------------------------------
# shifted-series vectors a_m = sum_{k>=m} prod_{j=m..k} f(j)/(f(j)+alpha)
# ---------------------------------------------------------------------------

def shifted_series_vector(rule, alpha, mmax, anchor_rel=1e-11):
    """Arrays (lo, hi) of a_m(alpha) for m = 0..mmax, certified endpoints.

    Uses the exact downward recursion a_m = r_m (1 + a_{m+1}) from an
    anchored interval high above mmax; the recursion contracts the anchor
    width by the product of the ratios, so a moderate gap suffices.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha={alpha} must be positive")
    gap = 1024
    for _ in range(12):
        top = mmax + gap
        # anchor must have a finite upper envelope
        s_min, s_max = rule.slope_bounds_beyond(top + 1)
        if s_max >= alpha:
            gap *= 4
            continue
        f_top = rule.eval(top + 1)
        lo = f_top / (alpha - s_min)
        hi = f_top / (alpha - s_max)
        # walk the anchor down to mmax+1 in chunks (only the carry is needed)
        m = top
        while m > mmax:
            n = min(_CHUNK, m - mmax)
            ks = np.arange(m - n + 1, m + 1)
            fv = rule.eval_array(ks)
            r = fv / (fv + alpha)
            t = np.cumprod(r)                  # t[i] = prod_{j=start..start+i} r_j
            block = float(t.sum())             # sum_{k=start..m} prod_{j=start..k}
            pfull = float(t[-1])
            lo = block + pfull * lo
            hi = block + pfull * hi
            m -= n
        if hi - lo > anchor_rel * max(lo, 1.0):
            gap *= 4
            continue
        # now fill m = mmax .. 0 exactly
        out_lo = np.empty(mmax + 1)
        out_hi = np.empty(mmax + 1)
        fv = rule.eval_array(np.arange(mmax + 1))
        r = fv / (fv + alpha)
        cur_lo, cur_hi = lo, hi
        for m in range(mmax, -1, -1):
            cur_lo = r[m] * (1.0 + cur_lo)
            cur_hi = r[m] * (1.0 + cur_hi)
            out_lo[m] = cur_lo
            out_hi[m] = cur_hi
        return out_lo, out_hi
    raise ParameterError(
        f"no certified anchor for shifted series at alpha={alpha}: "
        "the series appears divergent or nearly so")


# ---------------------------------------------------------------------------
# the rank-2 coupling entry B(alpha)
# ---------------------------------------------------------------------------

def _b_tail_bound(c, s, alpha):
    """Upper/lower tail model for sum_{k>K} m_k (a_{k+1}+b_{k+1}) / m_K.

    For the linear envelope g(i) = c + s*i beyond the cutoff:
      a_{K+m+1} ~ g(m+1)/(alpha-s),  b likewise with 1-alpha,
      sum_m prod g(i)/(1+g(i)) * g(m+1) = (c+s)(c+2s)/(1-2s).
    Finite only when s < min(alpha, 1-alpha, 1/2).
    """
    if s >= min(alpha, 1.0 - alpha, 0.5):
        return math.inf
    d = 1.0 / (alpha - s) + 1.0 / (1.0 - alpha - s)
    return d * (c + s) * (c + 2.0 * s) / (1.0 - 2.0 * s)


def series_B(rule, alpha, rel_tol=1e-10) -> CertValue:
    """B(alpha) = integral of h(tau) e^{alpha tau} dM(tau), as a certified series.

    Identity: B = sum_k m_k (a_{k+1} + b_{k+1}) with m_k = prod_{j<=k} f(j)/(1+f(j)).
    """
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha={alpha} must lie in (0, 1)")
    kb = 256
    for _ in range(10):
        try:
            a_lo, a_hi = shifted_series_vector(rule, alpha, kb + 1)
            b_lo, b_hi = shifted_series_vector(rule, 1.0 - alpha, kb + 1)
        except ParameterError:
            return CertValue.divergent()
        fv = rule.eval_array(np.arange(kb + 1))
        mk = np.cumprod(fv / (1.0 + fv))
        part_lo = float((mk * (a_lo[1:kb + 2] + b_lo[1:kb + 2])).sum())
        part_hi = float((mk * (a_hi[1:kb + 2] + b_hi[1:kb + 2])).sum())
        c = float(fv[-1])
        m_last = float(mk[-1])
        s_min, s_max = rule.slope_bounds_beyond(kb)
        t_lo = m_last * _b_tail_bound(c, s_min, alpha)
        t_hi = m_last * _b_tail_bound(c, s_max, alpha)
        if math.isinf(t_lo):
            return CertValue.divergent()
        if math.isfinite(t_hi):
            lo, hi = part_lo + t_lo, part_hi + t_hi
            if hi - lo <= rel_tol * max(lo, 1e-300) + 1e-300:
                return CertValue(0.5 * (lo + hi), lo, hi)
        kb *= 4
    lo, hi = part_lo + t_lo, part_hi + t_hi
    if math.isinf(hi):
        return CertValue(math.nan, lo, math.inf, "undetermined")
    return CertValue(0.5 * (lo + hi), lo, hi)


# ---------------------------------------------------------------------------
# spectral radius via the exact rank-2 reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralReport:
    """All certified ingredients of rho(A_alpha) at one alpha."""

    alpha: float
    a_val: CertValue
    b_val: CertValue
    c_val: CertValue
    B_val: CertValue
    rho: CertValue
    status: str            # "exact-linear" | "numeric" | "divergent"
    tail_bound: float = 0.0
    consistent_with_tables: bool | None = None


def _rho_from_entries(a, b, B):
    return 0.5 * ((a + b) + math.sqrt((a - b) ** 2 + 4.0 * B))


def rho_linear_closed(rule: LinearRule, alpha: float) -> float:
    """rho(A_alpha) for a linear rule: positive root of the reduced quadratic.

    Infinite outside gamma < alpha < 1-gamma.
    """
    g, be = rule.gamma, rule.beta
    if not (g < alpha < 1.0 - g):
        return math.inf
    q2 = (1.0 - g - alpha) * (alpha - g)
    q1 = -be * (1.0 - 2.0 * g)
    q0 = -be * g
    return (-q1 + math.sqrt(q1 * q1 - 4.0 * q2 * q0)) / (2.0 * q2)


def rho_rank2(rule, alpha, tables=None, rel_tol=1e-10) -> SpectralReport:
    """Spectral radius of A_alpha through the exact rank-2 reduction.

    The operator maps every g to c_g + g(l) * h(.), so its nonzero spectrum
    is that of the 2x2 matrix [[b, B], [1, a]]; we return the top eigenvalue
    ((a+b) + sqrt((a-b)^2 + 4B)) / 2 with a propagated enclosure.

    When ``tables`` (a MeasureTables) is given, B is additionally evaluated
    by quadrature of h(tau) e^{alpha tau} dM(tau) from the tables and the two
    enclosures are intersected; disagreement is flagged rather than hidden.
    """
    a = series_a(rule, alpha, rel_tol)
    b = series_b(rule, alpha, rel_tol)
    c = series_c(rule, alpha, rel_tol)
    if not (a.finite and b.finite):
        return SpectralReport(alpha, a, b, c, CertValue.divergent(),
                              CertValue.divergent(), "divergent")
    B = series_B(rule, alpha)
    if not B.finite:
        return SpectralReport(alpha, a, b, c, B, CertValue.divergent(), "divergent")
    consistent = None
    if tables is not None:
        bq_lo, bq_hi = tables.coupling_entry_interval(alpha, a)
        consistent = (B.hi >= bq_lo) and (bq_hi >= B.lo)
        if consistent:
            B = CertValue(B.value, max(B.lo, bq_lo), min(B.hi, bq_hi))
        else:
            B = CertValue(B.value, min(B.lo, bq_lo), max(B.hi, bq_hi))
    rho = _combine(_rho_from_entries, a, b, B)
    return SpectralReport(alpha, a, b, c, B, rho, "numeric",
                          tail_bound=B.width, consistent_with_tables=consistent)


def certified_alpha_interval(rule, delta=1e-3):
    """Inner approximation (lo, hi) of the interval where A_alpha is defined.

    Entries are finite iff alpha exceeds the asymptotic slope of the rule and
    1-alpha does too; the maximal increment is irrelevant for convergence,
    only the tail slope matters.  Returns None when empty.
    """
    s = rule.asymptotic_slope
    lo, hi = s + delta, 1.0 - s - delta
    if lo >= hi:
        return None
    return (lo, hi)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def rho_min(rule, tables=None, search_tol=1e-6):
    """Minimize rho(A_alpha) over the certified alpha-interval.

    log rho is convex in alpha, so golden-section search is exact up to the
    tolerance.  Returns (alpha_star, SpectralReport at alpha_star); raises
    ParameterError when the certified region is empty (robust network).
    """
    iv = certified_alpha_interval(rule)
    if iv is None:
        raise ParameterError("certified alpha-region is empty (robust network)")
    lo, hi = iv
    cache = {}

    def val(x):
        if x not in cache:
            r = rho_rank2(rule, x, tables)
            cache[x] = r
        rep = cache[x]
        return math.inf if not rep.rho.finite else rep.rho.value

    a, b = lo, hi
    c1 = b - _INVPHI * (b - a)
    c2 = a + _INVPHI * (b - a)
    f1, f2 = val(c1), val(c2)
    while b - a > search_tol:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - _INVPHI * (b - a)
            f1 = val(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + _INVPHI * (b - a)
            f2 = val(c2)
    alpha_star = c1 if f1 <= f2 else c2
    return alpha_star, cache[alpha_star]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionVerdict:
    """Giant/robustness decision with the evidence path that produced it."""

    giant: str                      # "yes" | "no" | "undetermined"
    margin: float | None = None    # distance to the nearer bound when undetermined
    robust: bool = False
    percolation_threshold: float | None = None
    alpha_star: float | None = None
    evidence: str = ""

    def to_json(self):
        return {
            "giant": self.giant,
            "margin": self.margin,
            "robust": self.robust,
            "percolation_threshold": self.percolation_threshold,
            "alpha_star": self.alpha_star,
            "evidence": self.evidence,
        }


def bounds_criterion(rule) -> CriterionVerdict:
    """Explicit sufficient/necessary bounds from the half-point series.

    a[f] > 1/2 forces a giant component; a[f] + sqrt(a[f] c[f]) < 1 excludes
    one.  Exact equality in either bound is reported as undetermined(0).
    """
    eps = 1e-9   # exact equality in a bound must not fire it
    a = series_a(rule, 0.5)
    if not a.finite:
        return CriterionVerdict("yes", evidence="bound-a[f]-divergent")
    cc = series_c(rule, 0.5)
    upper = _combine(lambda x, y: x + math.sqrt(x * y), a, cc)
    if a.lo > 0.5 + eps:
        return CriterionVerdict("yes", margin=a.lo - 0.5, evidence="bound-a[f]")
    if upper.hi < 1.0 - eps:
        return CriterionVerdict("no", margin=1.0 - upper.hi, evidence="bound-a+sqrt(ac)")
    margin = min(abs(a.value - 0.5), abs(upper.value - 1.0))
    if margin <= eps:
        margin = 0.0
    return CriterionVerdict("undetermined", margin=margin, evidence="bounds-inconclusive")


def linear_giant_closed_form(rule: LinearRule) -> bool:
    """Existence of a giant component for f(k) = gamma k + beta."""
    g, be = rule.gamma, rule.beta
    return g >= 0.5 or be > (0.5 - g) ** 2 / (1.0 - g)


def linear_percolation_threshold(rule: LinearRule):
    """Critical retention probability for a linear rule; None when robust."""
    g, be = rule.gamma, rule.beta
    if g >= 0.5:
        return None
    if g == 0.0:
        return 1.0 / (4.0 * be)
    return (1.0 / (2.0 * g) - 1.0) * (math.sqrt(1.0 + g / be) - 1.0)


def giant_criterion(rule, tables=None, search_tol=1e-6) -> CriterionVerdict:
    """Full decision: closed form for linear rules, bounds, then rank-2 numerics."""
    if isinstance(rule, LinearRule):
        giant = linear_giant_closed_form(rule)
        robust = robustness(rule)
        thr = linear_percolation_threshold(rule) if giant and not robust else None
        return CriterionVerdict("yes" if giant else "no", robust=robust,
                                percolation_threshold=thr,
                                alpha_star=None if robust else 0.5,
                                evidence="closed-form-linear")
    verdict = bounds_criterion(rule)
    robust = robustness(rule)
    if verdict.giant != "undetermined":
        thr = None
        alpha_star = None
        if verdict.giant == "yes" and not robust:
            alpha_star, rep = rho_min(rule, tables, search_tol)
            thr = 1.0 / rep.rho.value
        return CriterionVerdict(verdict.giant, verdict.margin, robust, thr,
                                alpha_star, verdict.evidence)
    if robust:
        return CriterionVerdict("yes", robust=True, evidence="robust-divergent-a")
    alpha_star, rep = rho_min(rule, tables, search_tol)
    if not rep.rho.finite:
        return CriterionVerdict("yes", robust=robust, evidence="rank2-divergent")
    if rep.rho.lo > 1.0:
        return CriterionVerdict("yes", margin=rep.rho.lo - 1.0, robust=robust,
                                percolation_threshold=1.0 / rep.rho.value,
                                alpha_star=alpha_star, evidence="rank2-numeric")
    if rep.rho.hi <= 1.0:
        return CriterionVerdict("no", margin=1.0 - rep.rho.hi, robust=robust,
                                alpha_star=alpha_star, evidence="rank2-numeric")
    return CriterionVerdict("undetermined", margin=abs(rep.rho.value - 1.0),
                            robust=robust, alpha_star=alpha_star,
                            evidence="rank2-straddles-1")


def robustness(rule) -> bool:
    """Robust iff the half-point series diverges (equivalently, empty region)."""
    if isinstance(rule, LinearRule):
        return rule.gamma >= 0.5
    return not series_a(rule, 0.5).finite


def percolation_threshold(rule, tables=None, search_tol=1e-6):
    """Critical retention probability 1/min_alpha rho(A_alpha); None if robust
    or if no giant component exists at p = 1."""
    if isinstance(rule, LinearRule):
        if not linear_giant_closed_form(rule):
            return None
        return linear_percolation_threshold(rule)
    if robustness(rule):
        return None
    verdict = giant_criterion(rule, tables, search_tol)
    if verdict.giant != "yes":
        return None
    if verdict.percolation_threshold is not None:
        return verdict.percolation_threshold
    alpha_star, rep = rho_min(rule, tables, search_tol)
    return 1.0 / rep.rho.value
