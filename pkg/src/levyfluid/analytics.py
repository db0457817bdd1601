"""Closed-form steady-state, transient and correlation results.

The steady-state transform of the workload factorises as

    E exp(-theta W) = PK(theta) * [p * E exp(-theta U) + (1 - p) * E exp(-theta V)]

where ``PK`` is the Pollaczek-Khinchine transform of the reflected net input,
``V`` is the stationary excess of the vacation jump and ``U`` has density
``(P(W+ > x) - P(W- > x)) / E xi`` built from the workload just before and
after a repair jump.  The law of ``(W-, W+)`` is not determined by the model
primitives in general, so it enters through a :class:`BreakdownEmbedding`
that is either estimated from simulation or supplied analytically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .levy_core import UnstableModelError, reflected_moments
from .queue_sim import QueueModel, simulate_reflected
from .transforms import LstCurve, batch_means_se

SINGULARITY_STEP = 1e-6
DEFAULT_GRID = np.geomspace(0.05, 8.0, 16)


def _exp_mean(samples, theta):
    theta = np.asarray(theta)
    return np.exp(-np.multiply.outer(theta, samples)).mean(axis=-1)


def _exp_weighted_mean(samples, theta):
    theta = np.asarray(theta)
    return (samples * np.exp(-np.multiply.outer(theta, samples))).mean(axis=-1)


@dataclass(frozen=True)
class BreakdownEmbedding:
    """Transforms and moments of the workload just before (``W-``) and after
    (``W+``) a repair jump, in steady state.

    ``diff_se(theta)`` is the standard error of ``lst_minus - lst_plus``
    (``None`` for analytic embeddings).
    """

    lst_minus: Callable
    lst_plus: Callable
    weighted_minus: Callable
    weighted_plus: Callable
    moments_minus: tuple
    moments_plus: tuple
    diff_se: Callable | None = None
    provenance: str = "analytic"

    @classmethod
    def from_samples(cls, w_minus, w_plus, batches=32):
        """Empirical embedding from consecutive breakdown pairs of one run.

        Standard errors use batch means because successive pairs are
        correlated.
        """
        wm = np.asarray(w_minus, dtype=float)
        wp = np.asarray(w_plus, dtype=float)
        if wm.shape != wp.shape or wm.size == 0:
            raise ValueError("need matching, non-empty W- and W+ samples")
        if np.any(wp < wm):
            raise ValueError("W+ must dominate W- pairwise")

        def diff_se(theta):
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            d = np.exp(-np.multiply.outer(wm, theta)) - np.exp(-np.multiply.outer(wp, theta))
            out = batch_means_se(d, batches)
            return out if out.size > 1 else float(out[0])

        return cls(
            lst_minus=lambda th: _exp_mean(wm, th),
            lst_plus=lambda th: _exp_mean(wp, th),
            weighted_minus=lambda th: _exp_weighted_mean(wm, th),
            weighted_plus=lambda th: _exp_weighted_mean(wp, th),
            moments_minus=tuple(float(np.mean(wm**k)) for k in (1, 2, 3)),
            moments_plus=tuple(float(np.mean(wp**k)) for k in (1, 2, 3)),
            diff_se=diff_se,
            provenance="empirical",
        )

    @classmethod
    def poisson_stationary(cls, model):
        """Analytic embedding for Poisson failures with independent repairs.

        Failures see time averages, so ``W-`` has the stationary law of ``W``
        and ``W+ = W- + xi`` with ``xi`` independent.  Substituting this into
        the steady-state transform gives a linear equation for it.
        """
        if model.failure_rate == 0:
            raise ValueError("model has no failures")
        p = model.p
        xi = model.repair_law
        eta = model.eta_law
        d1 = model.net.varphi_derivative_at_zero(1)

        def pk_and_slope(th):
            vp = model.net._varphi(th)
            k = th * d1 / vp
            dk = d1 / vp - th * d1 * model.net.varphi_prime(th) / vp**2
            return k, dk

        def excess_and_slope(law, th):
            m = law.mean()
            g = (1.0 - law.lst(th)) / (th * m)
            dg = (law.weighted_lst(th) * th - (1.0 - law.lst(th))) / (th**2 * m)
            return g, dg

        def lst_w(th):
            th = np.asarray(th)
            k, _ = pk_and_slope(th)
            gx, _ = excess_and_slope(xi, th)
            gv, _ = excess_and_slope(eta, th)
            return k * (1 - p) * gv / (1.0 - p * k * gx)

        def weighted_w(th):
            th = np.asarray(th)
            k, dk = pk_and_slope(th)
            gx, dgx = excess_and_slope(xi, th)
            gv, dgv = excess_and_slope(eta, th)
            num = k * (1 - p) * gv
            dnum = (1 - p) * (dk * gv + k * dgv)
            den = 1.0 - p * k * gx
            dden = -p * (dk * gx + k * dgx)
            return -(dnum * den - num * dden) / den**2

        # moments of W from W = R + M, M = (W + excess of xi) w.p. p, else excess of eta
        er = [1.0] + reflected_moments(model.net, 3)
        es = [1.0] + [xi.residual_moment(k) for k in (1, 2, 3)]
        ev = [1.0] + [eta.residual_moment(k) for k in (1, 2, 3)]
        ew = [1.0]
        for n in (1, 2, 3):
            rest = 0.0
            for j in range(n + 1):
                em_known = (1 - p) * ev[j] + p * sum(
                    math.comb(j, i) * ew[i] * es[j - i] for i in range(j + 1) if i < n
                )
                rest += math.comb(n, j) * er[n - j] * em_known
            ew.append(rest / (1 - p))
        exi = [xi.moment(k) for k in range(4)]
        plus = [sum(math.comb(k, i) * ew[i] * exi[k - i] for i in range(k + 1)) for k in (1, 2, 3)]

        return cls(
            lst_minus=lst_w,
            lst_plus=lambda th: lst_w(th) * xi.lst(th),
            weighted_minus=weighted_w,
            weighted_plus=lambda th: weighted_w(th) * xi.lst(th) + lst_w(th) * xi.weighted_lst(th),
            moments_minus=tuple(ew[1:]),
            moments_plus=tuple(plus),
            provenance="analytic (Poisson failures, independent repairs)",
        )


def _require_stable(model):
    if not model.p < 1:
        raise UnstableModelError(f"p = {model.p} >= 1: the steady-state formula does not apply")


def _eta(model):
    if model.is_reflected:
        raise ValueError("model has no vacations; use pk_lst for the reflected process")
    return model.eta_law


def rates_and_p(model):
    """``(p, lambda_R, lambda_V)``: repair share and long-run failure/vacation rates."""
    _require_stable(model)
    p = model.p
    d1 = model.net.varphi_derivative_at_zero(1)
    lam_r = p * d1 / model.repair_law.mean() if p > 0 else 0.0
    lam_v = (1 - p) * d1 / _eta(model).mean()
    return p, lam_r, lam_v


def throughput_limits(model):
    """Long-run repair and vacation workload added per unit time."""
    _require_stable(model)
    d1 = model.net.varphi_derivative_at_zero(1)
    return model.p * d1, (1 - model.p) * d1


def pk_lst(net, theta):
    """Pollaczek-Khinchine transform ``theta varphi'(0) / varphi(theta)`` of the reflected process."""
    theta = np.asarray(theta)
    d1 = net.varphi_derivative_at_zero(1)
    if np.iscomplexobj(theta):
        return theta * d1 / net._varphi(theta)
    if np.any(theta < 0):
        raise ValueError("theta must be >= 0")
    safe = np.where(theta == 0, 1.0, theta)
    return np.where(theta == 0, 1.0, safe * d1 / net._varphi(safe))[()]


def repair_excess_lst(model, emb, theta):
    """Transform of ``U``: ``(E e^{-theta W-} - E e^{-theta W+}) / (theta E xi)``."""
    theta = np.asarray(theta)
    return (emb.lst_minus(theta) - emb.lst_plus(theta)) / (theta * model.repair_law.mean())


def vacation_excess_lst(model, theta):
    """Transform of ``V``, the stationary excess of the vacation jump."""
    return _eta(model).residual_lst(theta)


def _mixture_lst(model, emb, theta):
    p = model.p
    out = (1 - p) * vacation_excess_lst(model, theta)
    if p > 0:
        if emb is None:
            raise ValueError("a breakdown embedding is required when p > 0")
        out = out + p * repair_excess_lst(model, emb, theta)
    return out


def steady_state_lst(model, emb, theta):
    """Limiting ``E exp(-theta W)``.  ``emb`` may be ``None`` when there are no failures."""
    _require_stable(model)
    theta = np.asarray(theta)
    if not np.iscomplexobj(theta) and np.any(theta == 0):
        safe = np.where(theta == 0, 1.0, theta)
        return np.where(theta == 0, 1.0, pk_lst(model.net, safe) * _mixture_lst(model, emb, safe))[()]
    return pk_lst(model.net, theta) * _mixture_lst(model, emb, theta)


def steady_state_lst_se(model, emb, theta):
    """Standard error of :func:`steady_state_lst` propagated from an empirical embedding."""
    theta = np.asarray(theta, dtype=float)
    if model.p == 0 or emb is None or emb.diff_se is None:
        return np.zeros_like(theta)[()]
    scale = pk_lst(model.net, theta) * model.p / (theta * model.repair_law.mean())
    return scale * emb.diff_se(theta)


def _excess_moments(model, emb):
    """First two moments of ``U`` (zeros when p = 0) and of ``V``."""
    eta = _eta(model)
    ev = (eta.residual_moment(1), eta.residual_moment(2))
    if model.p == 0:
        return (0.0, 0.0), ev
    if emb is None:
        raise ValueError("a breakdown embedding is required when p > 0")
    m_xi = model.repair_law.mean()
    mm, mp = emb.moments_minus, emb.moments_plus
    eu = ((mp[1] - mm[1]) / (2 * m_xi), (mp[2] - mm[2]) / (3 * m_xi))
    return eu, ev


def moments(model, emb=None):
    """``(mean, variance)`` of the stationary workload.

    The variance is obtained by differentiating the factorised transform
    twice at zero: ``Var R + Var M`` with ``M`` the ``U``/``V`` mixture.
    """
    _require_stable(model)
    p = model.p
    er1, er2 = reflected_moments(model.net, 2)
    if model.is_reflected:
        return er1, er2 - er1**2
    (eu1, eu2), (ev1, ev2) = _excess_moments(model, emb)
    mix1 = p * eu1 + (1 - p) * ev1
    mix2 = p * eu2 + (1 - p) * ev2
    return er1 + mix1, (er2 - er1**2) + (mix2 - mix1**2)


def moments_as_printed(model, emb=None):
    """``(mean, variance)`` with the variance taken from the term-by-term
    closed form (the "as-printed" expression).

    Kept for comparison only: its reflected-process term has the opposite sign
    of ``Var R`` and it omits the ``p (1 - p) (E U - E V)**2`` mixing term.
    """
    _require_stable(model)
    d1, d2, d3 = model.net.varphi_derivatives_at_zero()
    w_part = d3 / (3 * d1) - 0.25 * (d2 / d1) ** 2
    mean = d2 / (2 * d1)
    if model.is_reflected:
        return mean, w_part
    p = model.p
    eta = _eta(model)
    e1, e2, e3 = (eta.moment(k) for k in (1, 2, 3))
    mean += (1 - p) * e2 / (2 * e1)
    var = w_part + (1 - p) * (e3 / (3 * e1) - 0.25 * (e2 / e1) ** 2)
    if p > 0:
        m_xi = model.repair_law.mean()
        mm, mp = emb.moments_minus, emb.moments_plus
        mean += p * (mp[1] - mm[1]) / (2 * m_xi)
        var += p * ((mp[2] - mm[2]) / (3 * m_xi) - 0.25 * ((mp[1] - mm[1]) / m_xi) ** 2)
    return mean, var


def busy_period_mean(model, mean_workload):
    """Mean time to empty from a stationary start."""
    _require_stable(model)
    return mean_workload / ((1 - model.p) * model.net.varphi_derivative_at_zero(1))


def n_order_busy_mean(n, mean_b, p, d1):
    """Mean time to empty from the sum of ``n`` i.i.d. initial jumps of mean ``mean_b``."""
    if not 0 <= p < 1:
        raise ValueError("need 0 <= p < 1")
    if not d1 > 0:
        raise ValueError("need varphi'(0) > 0")
    return n * mean_b / ((1 - p) * d1)


def _transient_raw(model, emb, x, gamma, root, theta):
    p = model.p
    eta = _eta(model)
    bracket = (1 - p) * (1.0 - eta.lst(theta)) / (1.0 - eta.lst(root)) - math.exp(-(theta - root) * x)
    if p > 0:
        num = emb.lst_minus(theta) - emb.lst_plus(theta)
        den = emb.lst_minus(root) - emb.lst_plus(root)
        bracket = bracket + p * num / den
    return gamma / (float(model.net._varphi(theta)) - gamma) * math.exp(-root * x) * bracket


def transient_lst(model, emb, x, gamma, theta):
    """``E_x exp(-theta W_T)`` at an independent ``T ~ Exp(gamma)``.

    The expression has a removable singularity where ``varphi(theta) = gamma``;
    there it is evaluated as the average of the two neighbours at distance
    ``SINGULARITY_STEP``.
    """
    _require_stable(model)
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not theta >= 0 or not x >= 0:
        raise ValueError("theta and x must be >= 0")
    root = model.net.inverse_varphi(gamma)
    if abs(theta - root) < SINGULARITY_STEP:
        h = SINGULARITY_STEP
        return 0.5 * (
            _transient_raw(model, emb, x, gamma, root, root + h) + _transient_raw(model, emb, x, gamma, root, root - h)
        )
    return float(_transient_raw(model, emb, x, gamma, root, theta))


def transient_lst_poisson(model, x, gamma, theta):
    """``E_x exp(-theta W_T)`` at ``T ~ Exp(gamma)`` without an embedding.

    Failures arrive as a Poisson stream independent of the workload, so
    repair jumps act like extra compound Poisson input with exponent
    ``psi(theta) = varphi(theta) - lambda_R (1 - E exp(-theta xi))``.  With
    ``psi(r) = gamma`` the mean number of vacations before ``T`` is
    ``exp(-r x) / (1 - E exp(-r eta))`` and the transform follows exactly.
    Agrees with :func:`transient_lst` when ``p = 0``.
    """
    _require_stable(model)
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not theta >= 0 or not x >= 0:
        raise ValueError("theta and x must be >= 0")
    net = model.net
    lam_r = model.failure_rate
    xi = model.repair_law

    def psi(t):
        out = float(net._varphi(t))
        if lam_r > 0:
            out -= lam_r * (1.0 - float(xi.lst(t)))
        return out

    hi = 1.0
    while psi(hi) <= gamma:
        hi *= 2.0
    # psi is convex with psi(0) = 0, so psi - gamma changes sign once on (0, hi]
    root = brentq(lambda t: psi(t) - gamma, 0.0, hi, xtol=1e-14, rtol=1e-13)
    eta = _eta(model)
    vacations = math.exp(-root * x) / (1.0 - eta.lst(root))

    def raw(t):
        return gamma / (psi(t) - gamma) * ((1.0 - eta.lst(t)) * vacations - math.exp(-t * x))

    if abs(theta - root) < SINGULARITY_STEP:
        return 0.5 * (raw(root + SINGULARITY_STEP) + raw(root - SINGULARITY_STEP))
    return float(raw(theta))


def _lst_and_slope(model, emb, s):
    """Steady-state transform ``K(s) H(s)`` and its derivative in ``s`` (s > 0)."""
    net = model.net
    p = model.p
    d1 = net.varphi_derivative_at_zero(1)
    vp = float(net._varphi(s))
    k = s * d1 / vp
    dk = d1 / vp - s * d1 * float(net.varphi_prime(s)) / vp**2
    eta = _eta(model)
    h = (1 - p) * (1.0 - eta.lst(s)) / (s * eta.mean())
    dh = (1 - p) / eta.mean() * (eta.weighted_lst(s) / s - (1.0 - eta.lst(s)) / s**2)
    if p > 0:
        m_xi = model.repair_law.mean()
        diff = emb.lst_minus(s) - emb.lst_plus(s)
        h = h + p * diff / (s * m_xi)
        dh = dh + p / m_xi * ((emb.weighted_plus(s) - emb.weighted_minus(s)) / s - diff / s**2)
    return float(k * h), float(dk * h + k * dh)


def weighted_steady_state_lst(model, emb, s):
    """``E(W exp(-s W))`` from the derivative of the steady-state transform."""
    return -_lst_and_slope(model, emb, s)[1]


def correlation_laplace(model, emb, mean, variance, theta, as_printed=False):
    """Laplace transform ``int_0^inf c(t) exp(-theta t) dt`` of the workload
    autocorrelation in steady state.

    ``E(W exp(-s W))`` with ``s = varphi^{-1}(theta)`` is minus the derivative
    of the steady-state transform at ``s``.  ``as_printed=True`` instead uses
    the as-printed expression for that quantity literally: the derivative
    itself (opposite sign), evaluated at ``theta`` rather than ``s``.
    """
    _require_stable(model)
    if not theta > 0:
        raise ValueError("theta must be > 0")
    net = model.net
    p = model.p
    d1 = net.varphi_derivative_at_zero(1)
    s = net.inverse_varphi(theta)
    weighted = _lst_and_slope(model, emb, theta)[1] if as_printed else weighted_steady_state_lst(model, emb, s)
    eta = _eta(model)
    brace = (1 - p) * eta.mean() / (1.0 - eta.lst(s))
    if p > 0:
        brace += p * model.repair_law.mean() / (emb.lst_minus(s) - emb.lst_plus(s))
    return 1.0 / theta - mean * d1 / (variance * theta**2) + weighted * brace / (variance * theta)


def _draw_repair_excess(model, rng, n, w_minus, w_plus):
    """Draws of ``U``.

    With ``w_plus`` given, pick a breakdown pair with probability proportional
    to its repair jump and place ``U`` uniformly on ``[W-, W+]``; this matches
    the density of ``U`` for any dependence between ``W-`` and the jump.
    Otherwise ``U = W- + (stationary excess of xi)``, valid when repairs are
    independent of the past.
    """
    w_minus = np.asarray(w_minus, dtype=float)
    if w_plus is not None:
        w_plus = np.asarray(w_plus, dtype=float)
        jumps = w_plus - w_minus
        idx = rng.choice(w_minus.size, size=n, p=jumps / jumps.sum())
        return w_minus[idx] + jumps[idx] * rng.random(n)
    if n <= w_minus.size:
        base = rng.permutation(w_minus)[:n]
    else:
        base = rng.choice(w_minus, size=n, replace=True)
    return base + model.repair_law.sample_residual(rng, n)


def decomposition_sampler(model, n, rng, w_minus=None, w_plus=None, reflected=None):
    """Draws of ``R + M``: a reflected-process sample plus an independent
    mixture (``U`` with probability ``p``, else the stationary excess of the
    vacation jump).

    ``reflected`` may supply precomputed reflected-process samples; otherwise
    they are simulated.  ``w_minus`` (and optionally ``w_plus``) are stationary
    breakdown samples, required when ``p > 0``.
    """
    _require_stable(model)
    eta = _eta(model)
    if reflected is None:
        reflected = simulate_reflected(model.net, n, rng).values
    r = np.asarray(reflected, dtype=float)[:n]
    if r.size != n:
        raise ValueError(f"need {n} reflected samples, got {r.size}")
    from_u = rng.random(n) < model.p
    mix = np.empty(n)
    n_u = int(from_u.sum())
    if n_u:
        if w_minus is None:
            raise ValueError("W- samples are required when p > 0")
        mix[from_u] = _draw_repair_excess(model, rng, n_u, w_minus, w_plus)
    mix[~from_u] = eta.sample_residual(rng, n - n_u)
    return r + mix


@dataclass
class SteadyStateSummary:
    p: float
    lambda_R: float
    lambda_V: float
    mean: float
    variance: float
    busy_mean: float
    lst: LstCurve

    def to_dict(self, config_hash=None, seed=None):
        out = {}
        if config_hash is not None:
            out["config_hash"] = config_hash
        if seed is not None:
            out["seed"] = seed
        out.update(
            p=self.p,
            lambda_R=self.lambda_R,
            lambda_V=None if math.isnan(self.lambda_V) else self.lambda_V,
            mean=self.mean,
            variance=self.variance,
            busy_mean=self.busy_mean,
            lst=self.lst.rows(),
        )
        return out

    def to_json(self, config_hash=None, seed=None):
        return json.dumps(self.to_dict(config_hash, seed), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def steady_state_summary(model, emb=None, grid=DEFAULT_GRID):
    """Every steady-state quantity in one record.

    For the reflected process only the Pollaczek-Khinchine quantities are
    defined; rates are reported as ``p = 0``, ``lambda_R = 0`` and
    ``lambda_V = nan``.
    """
    grid = np.asarray(grid, dtype=float)
    mean, var = moments(model, emb)
    if model.is_reflected:
        curve = LstCurve.analytic(lambda th: pk_lst(model.net, th), grid, "analytic (reflected)")
        d1 = model.net.varphi_derivative_at_zero(1)
        return SteadyStateSummary(0.0, 0.0, float("nan"), mean, var, mean / d1, curve)
    p, lam_r, lam_v = rates_and_p(model)
    values = np.asarray(steady_state_lst(model, emb, grid), dtype=float)
    se = np.asarray(steady_state_lst_se(model, emb, grid), dtype=float) * np.ones_like(values)
    provenance = "analytic" if p == 0 else f"plug-in ({emb.provenance} embedding)"
    curve = LstCurve(grid, values, se, provenance)
    return SteadyStateSummary(p, lam_r, lam_v, mean, var, busy_period_mean(model, mean), curve)
