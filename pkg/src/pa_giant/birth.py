"""The pure birth process, its conditioned variant, and tabulated expectations.

The process leaves state k at rate f(k).  Three numerical objects live here:

* path samplers (plain, and conditioned to jump at a fixed time tau via the
  thinning coupling against the process started one state higher),
* ``SemigroupTable``: P_t f(k) = E^k f(Z_t) on a (k, t) grid, integrated by
  fixed-step RK4 on the backward Kolmogorov system with both an absorbing
  (lower) and an exponential-envelope (upper) top closure, so every entry
  carries a certified truncation interval,
* ``MeasureTables``: the expected-offspring measures of the branching walk:
  M (left), M^l (right of an l-particle), M^tau (right of a tau-particle),
  and the Laplace transforms h(alpha, tau) of the M^tau.

h is evaluated by splitting at tau: the [0, tau] part is quadrature over the
grid (one FFT convolution for all tau at once), and the (tau, infinity) part
is exact per-state series, so no crude exponential-envelope tail is needed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BudgetExceededError, ParameterError,
                     TableCoverageError, TruncationError)
from .rules import AttachmentRule, LinearRule, rule_from_json
from .operators import series_from, shifted_series_vector, CertValue


# ---------------------------------------------------------------------------
# jump paths
# ---------------------------------------------------------------------------

@dataclass
class JumpPath:
    """A trajectory of the birth process up to a horizon.

    Z_t = start_state + #{jump times <= t}; ``forced_index`` marks the
    deterministic jump of a conditioned path (or None).
    """

    start_state: int
    horizon: float
    jump_times: np.ndarray
    forced_index: int | None = None

    def state_at(self, t):
        return self.start_state + int(np.searchsorted(self.jump_times, t, side="right"))

    @property
    def n_jumps(self):
        return len(self.jump_times)

    def jump_times_excluding_forced(self):
        if self.forced_index is None:
            return self.jump_times
        return np.delete(self.jump_times, self.forced_index)


def sample_path(rule, start_state, horizon, rng, max_jumps=1_000_000):
    """Sample Z on [0, horizon] started at start_state; gaps are Exp(f(state))."""
    if horizon < 0:
        raise ParameterError(f"horizon={horizon} must be >= 0")
    times = []
    t = 0.0
    k = start_state
    while True:
        t += rng.exponential(1.0 / rule.eval(k))
        if t > horizon:
            break
        times.append(t)
        k += 1
        if len(times) > max_jumps:
            raise BudgetExceededError(
                f"more than {max_jumps} jumps before horizon {horizon}")
    return JumpPath(start_state, horizon, np.array(times))


def _semigroup_ratio(rule, table, k, s):
    """P_s f(k+1) / P_s f(k), exact for linear rules, tabulated otherwise.

    Beyond the table horizon the value at the horizon is used (the ratio is
    nonincreasing in s and bounded below by 1, so the bias is one-sided and
    vanishes for linear rules where the ratio is constant).
    """
    if isinstance(rule, LinearRule):
        return rule.eval(k + 1) / rule.eval(k)
    if table is None:
        raise TableCoverageError(
            "a SemigroupTable is required for conditioned sampling of non-linear rules")
    return table.ratio(k, s)


def sample_conditioned_path(rule, tau, start_state, horizon, table, rng,
                            max_jumps=1_000_000, return_coupled=False):
    """Sample the process conditioned to have a birth at time tau.

    Implemented as thinning of a dominating copy started one state higher:
    the dominating path's jump at time T is accepted with probability
    f(Z)/f(Z2) * P_{tau-T}f(Z+1)/P_{tau-T}f(Z) before tau and f(Z)/f(Z2)
    after, and the birth at tau is inserted deterministically.  This is the
    stochastic-domination coupling, so the pair (path, dominating path)
    satisfies Z^[tau]_t + 1{t<tau} <= Z_t pathwise.

    With return_coupled=True returns (path, dominating_path).  tau may
    exceed the horizon, in which case the forced jump is never emitted and
    the whole window runs under the pre-tau conditional rates.
    """
    if tau < 0.0:
        raise ParameterError(f"tau={tau} must be >= 0")
    dom = []          # jump times of the dominating path (start k+1)
    acc = []          # jump times of the conditioned path
    t = 0.0
    k2 = start_state + 1          # dominating state
    k1 = start_state              # conditioned state
    forced_done = False
    forced_index = None
    while True:
        gap = rng.exponential(1.0 / rule.eval(k2))
        t_next = t + gap
        if not forced_done and t_next >= tau:
            # deterministic birth at tau
            forced_index = len(acc)
            acc.append(tau)
            k1 += 1
            forced_done = True
        if t_next > horizon:
            break
        u = rng.uniform()
        if t_next < tau:
            ratio = _semigroup_ratio(rule, table, k1, tau - t_next)
            p_acc = (rule.eval(k1) / rule.eval(k2)) * ratio
        else:
            p_acc = rule.eval(k1) / rule.eval(k2)
        if p_acc > 1.0 + 1e-9:
            raise AssertionError(f"thinning acceptance {p_acc} exceeds 1")
        dom.append(t_next)
        if u <= p_acc:
            acc.append(t_next)
            k1 += 1
        k2 += 1
        t = t_next
        if len(dom) > max_jumps:
            raise BudgetExceededError(
                f"more than {max_jumps} proposals before horizon {horizon}")
    if not forced_done and tau <= horizon:
        forced_index = len(acc)
        acc.append(tau)
    path = JumpPath(start_state, horizon, np.array(acc), forced_index=forced_index)
    if return_coupled:
        dom_path = JumpPath(start_state + 1, horizon, np.array(dom))
        return path, dom_path
    return path


# ---------------------------------------------------------------------------
# semigroup table
# ---------------------------------------------------------------------------

def _default_k_max(rule, t_max):
    """Initial truncation guess; the a-posteriori certificate governs."""
    # mean trajectory of dz/dt = f(z)
    z = 0.0
    n = 400
    h = t_max / n
    for _ in range(n):
        z += h * rule.eval(int(z))
    guess = int(2 * z + 10 * math.sqrt(z + 1) + 64)
    g = rule.gamma_bound
    if g > 0:
        q = 1.0 - math.exp(-g * t_max)
        if 0 < q < 1:
            nb = int(-37.0 / math.log(q)) + 8
            guess = min(max(guess, 256), max(nb, guess))
    return guess


@dataclass
class SemigroupTable:
    """P_t f(k) on a uniform t-grid for k = 0..k_max, with certified widths."""

    rule: AttachmentRule
    t_grid: np.ndarray
    k_max: int
    values: np.ndarray          # (k_max+1, n_t) midpoint estimates
    widths: np.ndarray          # per-row max absolute half-width
    state_probs: dict = field(default_factory=dict)   # k0 -> (probs, absorbed)
    dt_int: float = 0.0
    step_halving_error: float = 0.0
    tol: float = 0.0

    @property
    def t_max(self):
        return float(self.t_grid[-1])

    @property
    def dt(self):
        return float(self.t_grid[1] - self.t_grid[0])

    def value(self, k, t):
        """P_t f(k), linearly interpolated in t."""
        if k > self.k_max:
            raise TableCoverageError(f"state {k} beyond k_max={self.k_max}")
        if t > self.t_max + 1e-12:
            raise TableCoverageError(f"time {t} beyond horizon {self.t_max}")
        return float(np.interp(t, self.t_grid, self.values[k]))

    def ef(self, t):
        """E f(Z_t) from state 0 (the left-offspring intensity numerator)."""
        return self.value(0, min(t, self.t_max))

    def ratio(self, k, s):
        """P_s f(k+1)/P_s f(k); clamped to the horizon and to state coverage."""
        s = min(s, self.t_max)
        if k + 1 > self.k_max:
            return self.rule.eval(k + 1) / self.rule.eval(k)
        num = np.interp(s, self.t_grid, self.values[k + 1])
        den = np.interp(s, self.t_grid, self.values[k])
        r = min(float(num / den), self.rule.eval(k + 1) / self.rule.eval(k))
        return max(r, 1.0)

    # -- persistence --------------------------------------------------------

    def dump(self, csv_path, meta_path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "value"])
            for k in range(self.k_max + 1):
                for j, t in enumerate(self.t_grid):
                    w.writerow([k, repr(float(t)), repr(float(self.values[k, j]))])
        meta = {
            "rule": self.rule.to_json(),
            "t_max": self.t_max,
            "n_t": len(self.t_grid),
            "k_max": self.k_max,
            "dt_int": self.dt_int,
            "tol": self.tol,
            "step_halving_error": self.step_halving_error,
            "widths": [float(w_) for w_ in self.widths],
        }
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)

    @staticmethod
    def load(csv_path, meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        rule = rule_from_json(meta["rule"])
        n_t, k_max = meta["n_t"], meta["k_max"]
        values = np.empty((k_max + 1, n_t))
        t_grid = np.empty(n_t)
        with open(csv_path) as fh:
            r = csv.reader(fh)
            header = next(r)
            if header != ["k", "t", "value"]:
                raise ParameterError(f"unexpected table schema: {header}")
            for row in r:
                k, t, v = int(row[0]), float(row[1]), float(row[2])
                j = round(t / meta["t_max"] * (n_t - 1))
                t_grid[j] = t
                values[k, j] = v
        return SemigroupTable(rule, t_grid, k_max, values,
                              np.array(meta["widths"]), {},
                              meta["dt_int"], meta["step_halving_error"], meta["tol"])


def _rk4_backward(fv, gamma, t_max, n_out, dt_int, upper):
    """Integrate du_k/dt = f(k)(u_{k+1}-u_k) with the chosen top closure.

    upper=True uses the growing envelope f(K)e^{gamma t} as the boundary
    value (an over-estimate of the true top row), upper=False freezes it.
    Returns (n_out, K) array sampled on the uniform output grid.
    """
    K = len(fv) - 1                      # solved states 0..K-1, boundary at K
    f_in = fv[:K]
    f_top = fv[K]
    u = fv[:K].astype(float).copy()
    out = np.empty((n_out, K))
    out[0] = u
    stride = max(1, round((t_max / (n_out - 1)) / dt_int))
    h = (t_max / (n_out - 1)) / stride

    def rhs(u, t):
        top = f_top * math.exp(gamma * t) if upper else f_top
        du = np.empty_like(u)
        du[:-1] = f_in[:-1] * (u[1:] - u[:-1])
        du[-1] = f_in[-1] * (top - u[-1])
        return du

    t = 0.0
    for i in range(1, n_out):
        for _ in range(stride):
            k1 = rhs(u, t)
            k2 = rhs(u + 0.5 * h * k1, t + 0.5 * h)
            k3 = rhs(u + 0.5 * h * k2, t + 0.5 * h)
            k4 = rhs(u + h * k3, t + h)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out[i] = u
    return out


def _rk4_forward(fv, k0, t_max, n_out, dt_int):
    """Forward Kolmogorov dp_j/dt = f(j-1)p_{j-1} - f(j)p_j, absorbing top.

    Returns (probs, absorbed): (n_out, K) state probabilities and the mass
    absorbed at the truncation boundary.
    """
    K = len(fv) - 1
    f_in = fv[:K]
    p = np.zeros(K)
    p[k0] = 1.0
    absorbed = 0.0
    out = np.empty((n_out, K))
    out_abs = np.empty(n_out)
    out[0] = p
    out_abs[0] = 0.0
    stride = max(1, round((t_max / (n_out - 1)) / dt_int))
    h = (t_max / (n_out - 1)) / stride

    def rhs(state):
        p, a = state
        dp = np.empty_like(p)
        dp[0] = -f_in[0] * p[0]
        dp[1:] = f_in[:-1] * p[:-1] - f_in[1:] * p[1:]
        da = f_in[-1] * p[-1]
        return dp, da

    for i in range(1, n_out):
        for _ in range(stride):
            k1p, k1a = rhs((p, absorbed))
            k2p, k2a = rhs((p + 0.5 * h * k1p, absorbed + 0.5 * h * k1a))
            k3p, k3a = rhs((p + 0.5 * h * k2p, absorbed + 0.5 * h * k2a))
            k4p, k4a = rhs((p + h * k3p, absorbed + h * k3a))
            p = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
            absorbed = absorbed + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
        out[i] = p
        out_abs[i] = absorbed
    return out, out_abs


def build_semigroup_table(rule, t_max, k_max=None, dt=None, tol=1e-6,
                          n_t=2049, state_prob_starts=(0,), _attempts=4):
    """Tabulate P_t f(k) with a certified truncation interval below ``tol``.

    The system is solved twice, once per top closure; the gap between the two
    solutions bounds the truncation error.  If the requested tolerance is not
    met at row 0, k_max is doubled (up to ``_attempts`` times) before a
    TruncationError naming the required size is raised.
    """
    if t_max <= 0 or (dt is not None and dt <= 0):
        raise ParameterError("t_max and dt must be positive")
    auto = k_max is None
    if auto:
        k_max = _default_k_max(rule, t_max)
    gamma = rule.gamma_bound
    for attempt in range(_attempts):
        fv = rule.eval_array(np.arange(k_max + 2))
        stab = 2.5 / float(fv[-1])
        dt_int = min(dt if dt is not None else t_max / 4096.0, stab)
        lower = _rk4_backward(fv, gamma, t_max, n_t, dt_int, upper=False)
        upper = _rk4_backward(fv, gamma, t_max, n_t, dt_int, upper=True)
        mid = 0.5 * (lower + upper)
        widths = 0.5 * np.max((upper - lower) / np.maximum(lower, 1e-300), axis=0)
        if widths[0] <= tol:
            break
        if not auto or attempt == _attempts - 1:
            raise TruncationError(
                f"truncation k_max={k_max} insufficient for tol={tol} "
                f"(row-0 relative width {widths[0]:.3e}); try k_max>={2 * k_max}",
                suggested_k_max=2 * k_max)
        k_max *= 2
    # step-halving convergence check on the cheap closure
    half = _rk4_backward(fv, gamma, t_max, n_t, dt_int / 2.0, upper=False)
    sh_err = float(np.max(np.abs(half - lower) / np.maximum(lower, 1e-300)))
    t_grid = np.linspace(0.0, t_max, n_t)
    table = SemigroupTable(rule, t_grid, k_max, mid.T.copy(), widths,
                           {}, dt_int, sh_err, tol)
    for k0 in state_prob_starts:
        probs, absorbed = _rk4_forward(fv, k0, t_max, n_t, dt_int)
        table.state_probs[k0] = (probs, absorbed)
    return table


# ---------------------------------------------------------------------------
# measure tables
# ---------------------------------------------------------------------------

def _trapz_cumulative(y, dt):
    out = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * dt)])
    return out


@dataclass
class MeasureTables:
    """Tabulated M, M^l, M^tau and the transforms h(alpha, tau)."""

    rule: AttachmentRule
    semigroup: SemigroupTable
    tau_grid: np.ndarray          # subset of the fine grid (indices in tau_idx)
    tau_idx: np.ndarray
    M_vals: np.ndarray            # M(t) on the fine grid
    M_inf: CertValue
    h_vals: dict = field(default_factory=dict)   # alpha -> (h, lo, hi) on tau_grid

    @property
    def t_grid(self):
        return self.semigroup.t_grid

    @property
    def Ml_density(self):
        """dM^l/dt = E f(Z_t) on the fine grid."""
        return self.semigroup.values[0]

    # -- conditioned-chain densities -----------------------------------------

    def _forward0(self):
        if 0 not in self.semigroup.state_probs:
            raise TableCoverageError("semigroup table lacks state_probs for start 0")
        return self.semigroup.state_probs[0]

    def density_tau(self, tau_index):
        """dM^tau/dt on the fine grid for tau = t_grid[tau_index].

        Before tau the density is E[f P_{tau-t}f(.+1)/P_{tau-t}f] under the
        conditioned law, after tau it is E f(Z^[tau]_t); both reduce to sums
        over the unconditioned state distribution p_t and the semigroup rows:
        g(t<tau) = sum_k p_t(k) f(k) u_{k+1}(tau-t) / u_0(tau), and the same
        expression with (p_tau, t-tau) after tau.
        """
        sg = self.semigroup
        probs, _ = self._forward0()
        fv = self.rule.eval_array(np.arange(sg.k_max + 1))
        q = probs[:, :sg.k_max] * fv[:sg.k_max]         # p_t(k) f(k)
        u0tau = sg.values[0, tau_index]
        n = len(sg.t_grid)
        g = np.empty(n)
        U = sg.values[1:sg.k_max + 1]                   # rows u_{k+1}
        for j in range(tau_index + 1):
            g[j] = q[j] @ U[:, tau_index - j]
        if tau_index + 1 < n:
            qtau = q[tau_index]
            for j in range(tau_index + 1, n):
                g[j] = qtau @ U[:, j - tau_index]
        return g / u0tau

    def Mtau_cumulative(self, tau_index):
        """M^tau(t) on the fine grid (forced unit jump at tau excluded)."""
        return _trapz_cumulative(self.density_tau(tau_index), self.semigroup.dt)

    # -- Laplace transforms h(alpha, tau) ------------------------------------

    def h_at(self, alpha):
        """(h, lo, hi) arrays over the full fine grid of tau values.

        h(tau) = [int_0^tau e^{-at} R(t, tau-t) dt + e^{-a tau} sum_k
        p_tau(k) f(k) a_{k+1}(alpha)] / u_0(tau); the first term is one FFT
        convolution for all tau, the second is an exact shifted-series sum.
        """
        sg = self.semigroup
        probs, absorbed = self._forward0()
        n = len(sg.t_grid)
        dt = sg.dt
        K = sg.k_max
        fv = self.rule.eval_array(np.arange(K + 2))
        t = sg.t_grid
        damp = np.exp(-alpha * t)
        q = probs[:, :K] * fv[:K]                       # (n, K) p_t(k) f(k)
        U = sg.values[1:K + 1]                          # (K, n) u_{k+1}(s)
        # sum-k of conv(e^{-at} q_k, u_{k+1}) via one frequency-domain pass
        nfft = 1
        while nfft < 2 * n:
            nfft *= 2
        chunk = max(1, (1 << 24) // nfft)
        G = (q * damp[:, None])
        spec = np.zeros(nfft // 2 + 1, dtype=complex)
        for k0 in range(0, K, chunk):
            k1 = min(K, k0 + chunk)
            Gf = np.fft.rfft(G[:, k0:k1], nfft, axis=0)
            Uf = np.fft.rfft(U[k0:k1].T, nfft, axis=0)
            spec += (Gf * Uf).sum(axis=1)
        conv = np.fft.irfft(spec, nfft)[:n] * dt
        # trapezoid endpoint correction
        end0 = fv[0] * sg.values[1]                      # j=0 term: f(0) u_1(tau)
        endn = damp * (q @ fv[1:K + 1])                  # j=n term: e^{-at} sum p f f(.+1)
        part1 = conv - 0.5 * dt * (end0 + endn)
        part1[0] = 0.0
        # exact series completion from tau onward
        a_lo, a_hi = shifted_series_vector(self.rule, alpha, K + 1)
        s_lo = damp * (q @ a_lo[1:K + 1])
        s_hi = damp * (q @ a_hi[1:K + 1])
        # states at/above the truncation: crude one-sided slack
        top_mass = probs[:, K] + absorbed
        slack = top_mass * fv[K] * (1.0 + a_hi[K + 1])
        u0 = sg.values[0]
        width0 = sg.widths[0] * u0
        h_lo = (part1 + s_lo) / (u0 + width0)
        h_hi = (part1 + s_hi + slack) / np.maximum(u0 - width0, 1e-300)
        h_mid = (part1 + 0.5 * (s_lo + s_hi)) / u0
        h_mid[0] = 0.5 * (a_lo[1] + a_hi[1])             # h(0) = c(alpha) exactly
        h_lo[0] = a_lo[1]
        h_hi[0] = a_hi[1]
        return h_mid, h_lo, h_hi

    def coupling_entry_interval(self, alpha, a_cert):
        """Certified-by-quadrature enclosure of B = int h e^{alpha tau} dM.

        The [0, T] part integrates tabulated h against e^{(alpha-1)t} u_0;
        the tail mass is the series value of b(alpha) minus the quadrature
        part, multiplied by the monotone bracket [a(alpha), h(T)] for h.
        """
        sg = self.semigroup
        t = sg.t_grid
        dt = sg.dt
        u0 = sg.values[0]
        h_mid, h_lo, h_hi = self.h_at(alpha)
        w = np.exp((alpha - 1.0) * t) * u0
        main_lo = float(np.trapezoid(h_lo * w, dx=dt))
        main_hi = float(np.trapezoid(h_hi * w, dx=dt))
        # quadrature error estimate by grid halving
        half = float(np.trapezoid((h_mid * w)[::2], dx=2 * dt))
        qerr = abs(float(np.trapezoid(h_mid * w, dx=dt)) - half)
        part_b = float(np.trapezoid(w, dx=dt))
        b = series_from(self.rule, 0, 1.0 - alpha)
        mass_lo = max(b.lo - part_b - qerr, 0.0)
        mass_hi = max(b.hi - part_b + qerr, 0.0)
        lo = main_lo - qerr + a_cert.lo * mass_lo
        hi = main_hi + qerr + float(h_hi[-1]) * mass_hi
        return lo, hi


def default_tau_grid(t_max, n=256):
    """Log-spaced type grid on [0, t_max] (0 included)."""
    return np.concatenate([[0.0], np.geomspace(t_max / (n * 4.0), t_max, n - 1)])


def build_measure_tables(rule, semigroup, tau_grid=None, alpha_list=()):
    """Assemble MeasureTables from a built semigroup table.

    tau values are snapped to the semigroup's fine grid; h(alpha, .) is
    precomputed for every alpha in alpha_list and available on demand for
    any other alpha via ``h_at``.
    """
    if tau_grid is None:
        tau_grid = default_tau_grid(semigroup.t_max)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.max(tau_grid) > semigroup.t_max + 1e-12:
        raise TableCoverageError("tau_grid exceeds the semigroup horizon")
    dt = semigroup.dt
    tau_idx = np.unique(np.round(tau_grid / dt).astype(int))
    tau_snapped = semigroup.t_grid[tau_idx]
    u0 = semigroup.values[0]
    M_vals = _trapz_cumulative(np.exp(-semigroup.t_grid) * u0, dt)
    M_inf = series_from(rule, 0, 1.0)
    tables = MeasureTables(rule, semigroup, tau_snapped, tau_idx, M_vals, M_inf)
    for alpha in alpha_list:
        h_mid, h_lo, h_hi = tables.h_at(alpha)
        tables.h_vals[alpha] = (h_mid[tau_idx], h_lo[tau_idx], h_hi[tau_idx])
    return tables
