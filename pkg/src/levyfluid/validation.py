"""Formula-versus-simulation checks with pass/fail verdicts.

Every check draws from its own random stream, seeded by the master seed and a
hash of the check name, so reports do not depend on which checks run or in
what order.  Confidence statements are at the 99.9% level.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .analytics import (
    BreakdownEmbedding,
    busy_period_mean,
    correlation_laplace,
    moments,
    moments_as_printed,
    n_order_busy_mean,
    pk_lst,
    rates_and_p,
    steady_state_lst,
    steady_state_lst_se,
    transient_lst,
    transient_lst_poisson,
    decomposition_sampler,
)
from .levy_core import JumpDistribution, reflected_moments
from .queue_sim import (
    breakdown_pairs,
    kella_whitt_batch,
    killed_sample,
    make_rng,
    sample_grid,
    simulate_busy_period,
    simulate_first_passage,
    simulate_n_order_busy,
    simulate_path,
    simulate_reflected,
    stationary_samples,
)
from .transforms import EULER_M, batch_means_se, clamp_cdf, empirical_cdf, empirical_lst, invert_lst_to_cdf

LEVEL = 0.999
BATCHES = 32
Z_CRIT = float(stats.norm.ppf(0.5 + LEVEL / 2))
SE_MULTIPLE = 4.0
PERTURB_FACTOR = 10.0
PERTURBED_VARPHI_SCALE = 1.05
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class Budget:
    samples: int
    replications: int
    busy_replications: int
    paths: int
    horizon: float
    corr_runs: int
    corr_horizon: float
    corr_step: float = 0.1


BUDGETS = {
    "smoke": Budget(5_000, 5_000, 2_000, 1_000, 1e4, 2, 2e4),
    "default": Budget(100_000, 100_000, 10_000, 10_000, 1e5, 8, 2e5),
    "thorough": Budget(400_000, 400_000, 40_000, 40_000, 4e5, 24, 2e5),
}


@dataclass
class ComparisonReport:
    """One theory-versus-simulation comparison.

    ``verdict`` is ``"pass"`` iff ``statistic <= threshold``.  ``runtime`` is
    wall-clock seconds and is left out of the canonical JSON so that reports
    for the same seed are byte-identical.
    """

    name: str
    theory: list
    empirical: list
    se: list
    statistic: float
    threshold: float
    verdict: str
    seed: int
    note: str = ""
    runtime: float = field(default=0.0, compare=False)

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self, include_runtime=False):
        """Plain dict; non-finite numbers become the strings "inf", "-inf", "nan"."""
        out = {k: _json_safe(v) for k, v in asdict(self).items()}
        if not include_runtime:
            del out["runtime"]
        return out


def _json_safe(v):
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _report(name, theory, empirical, se, statistic, threshold, seed, note=""):
    statistic = float(statistic)
    verdict = "pass" if statistic <= threshold else "fail"
    return ComparisonReport(
        name=name,
        theory=[float(v) for v in np.atleast_1d(theory)],
        empirical=[float(v) for v in np.atleast_1d(empirical)],
        se=[float(v) for v in np.atleast_1d(se)],
        statistic=statistic,
        threshold=float(threshold),
        verdict=verdict,
        seed=int(seed),
        note=note,
    )


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov distance (inputs are sorted here if needed)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_distance needs two non-empty samples")
    return float(_kernels.ks_sorted(a, b))


def ci_mean(samples, level=LEVEL, batches=None):
    """``(mean, halfwidth)`` of a confidence interval for the mean.

    Independent samples use the normal quantile.  With ``batches`` the
    standard error comes from batch means and the quantile from Student's t
    with ``batches - 1`` degrees of freedom.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 30:
        raise ValueError(f"need at least 30 samples for a confidence interval, got {x.size}")
    if batches:
        se = float(batch_means_se(x, batches))
        q = float(stats.t.ppf(0.5 + level / 2, batches - 1))
    else:
        se = float(x.std(ddof=1) / math.sqrt(x.size))
        q = float(stats.norm.ppf(0.5 + level / 2))
    return float(x.mean()), q * se


def martingale_zero_test(model, thetas, ts, reps, rng, varphi_scale=1.0, seed=0, name="martingale"):
    """Mean of the Kella-Whitt statistic for every ``(theta, t)`` cell.

    Passes iff zero lies inside every 99.9% confidence interval.
    ``varphi_scale`` multiplies the exponent used as compensator (1 is the
    true value).
    """
    m = kella_whitt_batch(model, thetas, ts, reps, rng, varphi_scale=varphi_scale)
    mean = m.mean(axis=0).ravel()
    se = (m.std(axis=0, ddof=1) / math.sqrt(reps)).ravel()
    # floor the SE at round-off scale so a deterministic path (se = 0, mean ~ 1e-16) passes
    z = np.abs(mean) / np.maximum(se, ROUNDOFF)
    return _report(name, np.zeros_like(mean), mean, se, z.max(), Z_CRIT, seed, note=f"max |z|; cells theta x t = {list(thetas)} x {list(ts)}")


def correlogram_laplace(model, theta, runs, horizon, step, rng, t_max=60.0):
    """``int_0^t_max c(t) exp(-theta t) dt`` from simulated autocorrelations.

    Each run samples ``W`` on a regular grid after a warmup, estimates the
    autocorrelation with the FFT and integrates by the trapezoidal rule.
    Returns the mean over runs and its standard error.
    """
    lags = int(round(t_max / step))
    tt = np.arange(lags + 1) * step
    weight = np.exp(-theta * tt)
    warmup = 50 * model.time_scale()
    vals = np.empty(runs)
    for k in range(runs):
        x = sample_grid(model, horizon, step, rng, warmup=warmup)
        x = x - x.mean()
        n = x.size
        f = np.fft.rfft(x, 2 * n)
        acov = np.fft.irfft(f * np.conj(f))[: lags + 1] / (n - np.arange(lags + 1))
        vals[k] = np.trapezoid(acov / acov[0] * weight, tt)
    se = vals.std(ddof=1) / math.sqrt(runs) if runs > 1 else float("nan")
    return float(vals.mean()), float(se)


def _shift(value, tol, perturb):
    """Theory value, moved by ``PERTURB_FACTOR`` tolerances in perturbed mode."""
    value = np.asarray(value, dtype=float)
    return value + PERTURB_FACTOR * np.asarray(tol, dtype=float) if perturb else value


def _z_stat(theory, empirical, se):
    return float(np.max(np.abs(np.asarray(empirical) - np.asarray(theory)) / np.asarray(se)))


def _rel_stat(theory, empirical):
    theory = np.asarray(theory, dtype=float)
    return float(np.max(np.abs(np.asarray(empirical) - theory) / np.abs(theory)))


def _exact_embedding(model):
    return BreakdownEmbedding.poisson_stationary(model) if model.p > 0 else None


def _moment_ci(samples):
    x = np.asarray(samples, dtype=float)
    mean, hw_mean = ci_mean(x, batches=BATCHES)
    dev = (x - x.mean()) ** 2 * x.size / (x.size - 1)
    var, hw_var = ci_mean(dev, batches=BATCHES)
    return np.array([mean, var]), np.array([hw_mean, hw_var])


# -- individual checks ---------------------------------------------------------
# each takes (model, budget, rng, seed, perturb) and returns a list of reports


def check_pk_lst(model, budget, rng, seed, perturb):
    thetas = np.array([0.5, 1.0, 2.0])
    w = np.asarray(simulate_reflected(model.net, budget.samples, rng))
    emp = empirical_lst(w, thetas, batches=BATCHES)
    theory = _shift(pk_lst(model.net, thetas), SE_MULTIPLE * emp.se, perturb)
    return [_report("pk_lst", theory, emp.values, emp.se, _z_stat(theory, emp.values, emp.se), SE_MULTIPLE, seed, "max |z|")]


def _moments_report(name, samples, exact, seed, perturb):
    emp, hw = _moment_ci(samples)
    theory = _shift(exact, hw, perturb)
    stat = np.max(np.abs(emp - theory) / hw)
    return _report(name, theory, emp, hw / float(stats.t.ppf(0.5 + LEVEL / 2, BATCHES - 1)), stat, 1.0, seed, "max |diff| / CI halfwidth; [mean, variance]")


def check_reflected_moments(model, budget, rng, seed, perturb):
    er = reflected_moments(model.net, 2)
    w = np.asarray(simulate_reflected(model.net, budget.samples, rng))
    return [_moments_report("reflected_moments", w, [er[0], er[1] - er[0] ** 2], seed, perturb)]


def check_stationary_moments(model, budget, rng, seed, perturb):
    w = np.asarray(stationary_samples(model, budget.samples, rng))
    return [_moments_report("stationary_moments", w, moments(model, _exact_embedding(model)), seed, perturb)]


def check_variance_audit(model, budget, rng, seed, perturb):
    """The as-printed variance expression must fall outside the simulation CI."""
    emb = _exact_embedding(model)
    if model.is_reflected:
        w = np.asarray(simulate_reflected(model.net, budget.samples, rng))
    else:
        w = np.asarray(stationary_samples(model, budget.samples, rng))
    emp, hw = _moment_ci(w)
    # perturbed mode tests the exact variance instead, which must then be rejected
    claim = moments(model, emb)[1] if perturb else moments_as_printed(model, emb)[1]
    gap = abs(claim - emp[1])
    stat = hw[1] / gap if gap > 0 else np.inf
    return [_report("variance_as_printed_rejected", claim, emp[1], hw[1], stat, 1.0, seed, "CI halfwidth / |as-printed - simulated variance|")]


def check_first_passage(model, budget, rng, seed, perturb):
    net = model.net
    gamma = 0.5
    t = simulate_first_passage(net, 1.0, rng, size=budget.replications)
    d1 = net.varphi_derivative_at_zero(1)
    mean_th = _shift(1.0 / d1, 0.02 / d1, perturb)
    mean_rel = _rel_stat(mean_th, t.mean())
    e = np.exp(-gamma * t)
    se = e.std(ddof=1) / math.sqrt(e.size)
    lst_th = _shift(math.exp(-net.inverse_varphi(gamma)), SE_MULTIPLE * se, perturb)
    return [
        _report("first_passage_mean", mean_th, t.mean(), t.std(ddof=1) / math.sqrt(t.size), mean_rel, 0.02, seed, "relative error, level 1"),
        _report("first_passage_lst", lst_th, e.mean(), se, _z_stat(lst_th, e.mean(), se), SE_MULTIPLE, seed, "|z| at gamma=0.5, level 1"),
    ]


def check_cdf_inversion(model, budget, rng, seed, perturb):
    if model.is_reflected:
        w = np.asarray(simulate_reflected(model.net, budget.samples, rng))

        def lst(s):
            return pk_lst(model.net, s)

    else:
        w = np.asarray(stationary_samples(model, budget.samples, rng))
        emb = _exact_embedding(model)

        def lst(s):
            return steady_state_lst(model, emb, s)

    x = np.linspace(0.0, float(np.quantile(w, 0.999)), 65)[1:]
    theory = _shift(clamp_cdf(invert_lst_to_cdf(lst, x)), 0.01, perturb)
    emp = empirical_cdf(w, x)
    stat = float(np.max(np.abs(theory - emp)))
    return [_report("cdf_inversion", theory, emp, np.zeros_like(emp), stat, 0.01, seed, f"sup |F_inverted - F_empirical| on 64 points, Euler M={EULER_M}")]


def check_martingale(model, budget, rng, seed, perturb):
    thetas, ts = [0.5, 1.0, 2.0], [1.0, 10.0]
    scale = PERTURBED_VARPHI_SCALE if perturb else 1.0
    return [martingale_zero_test(model, thetas, ts, budget.paths, rng, varphi_scale=scale, seed=seed)]


def check_martingale_control(model, budget, rng, seed, perturb):
    """With a 5%-wrong exponent every cell must reject."""
    thetas, ts = [0.5, 1.0, 2.0], [1.0, 10.0]
    scale = 1.0 if perturb else PERTURBED_VARPHI_SCALE
    m = kella_whitt_batch(model, thetas, ts, budget.paths, rng, varphi_scale=scale)
    mean = m.mean(axis=0).ravel()
    se = (m.std(axis=0, ddof=1) / math.sqrt(budget.paths)).ravel()
    accepted = int(np.sum(np.abs(mean) <= Z_CRIT * se))
    return [_report("martingale_control", np.zeros_like(mean), mean, se, accepted, 0, seed, f"cells not rejected with exponent scaled by {scale}")]


def check_busy_period(model, budget, rng, seed, perturb):
    emb = _exact_embedding(model)
    init = np.asarray(stationary_samples(model, budget.busy_replications, rng))
    t = simulate_busy_period(model, init, rng)
    theory = _shift(busy_period_mean(model, moments(model, emb)[0]), 0.05 * busy_period_mean(model, moments(model, emb)[0]), perturb)
    return [_report("busy_period_mean", theory, t.mean(), t.std(ddof=1) / math.sqrt(t.size), _rel_stat(theory, t.mean()), 0.05, seed, "relative error, stationary start")]


def check_n_order_busy(model, budget, rng, seed, perturb):
    ns = np.array([1, 2, 3, 5])
    b_law = model.net.jump_law if model.net.jump_law is not None else JumpDistribution.exponential(1.0)
    d1 = model.net.varphi_derivative_at_zero(1)
    exact = np.array([n_order_busy_mean(n, b_law.mean(), model.p, d1) for n in ns])
    means = np.empty(ns.size)
    ses = np.empty(ns.size)
    for i, n in enumerate(ns):
        t = simulate_n_order_busy(model, int(n), b_law, rng, size=budget.replications)
        means[i] = t.mean()
        ses[i] = t.std(ddof=1) / math.sqrt(t.size)
    theory = _shift(exact, 0.05 * exact, perturb)
    slope_exact = exact[0]
    slope_theory = float(_shift(slope_exact, 0.03 * slope_exact, perturb))
    slope = float(np.polyfit(ns, means, 1)[0])
    lever = (ns - ns.mean()) / np.sum((ns - ns.mean()) ** 2)
    slope_se = float(np.sqrt(np.sum(lever**2 * ses**2)))
    return [
        _report("n_order_busy_means", theory, means, ses, _rel_stat(theory, means), 0.05, seed, "relative error, n = 1, 2, 3, 5"),
        _report("n_order_busy_slope", slope_theory, slope, slope_se, _rel_stat(slope_theory, slope), 0.03, seed, "relative error of the regression slope in n"),
    ]


def check_decomposition(model, budget, rng, seed, perturb):
    w = np.asarray(stationary_samples(model, budget.samples, rng))
    if model.p > 0:
        wm, _ = breakdown_pairs(model, budget.samples, rng)
        dec = decomposition_sampler(model, budget.samples, rng, w_minus=wm)
    else:
        dec = decomposition_sampler(model, budget.samples, rng)
    if perturb:
        dec = dec + PERTURB_FACTOR * 0.02
    d = ks_distance(w, dec)
    return [_report("decomposition_ks", 0.0, d, 0.0, d, 0.02, seed, "two-sample KS distance, stationary vs convolution")]


def check_transient(model, budget, rng, seed, perturb):
    xs, gamma, thetas = (0.0, 1.0), 0.5, np.array([0.5, 1.0, 2.0])
    theory, emp, se = [], [], []
    for x in xs:
        w = killed_sample(model, x, gamma, rng, size=budget.replications)
        curve = empirical_lst(w, thetas)
        theory.extend(transient_lst(model, None, x, gamma, th) for th in thetas)
        emp.extend(curve.values)
        se.extend(curve.se)
    theory = _shift(theory, SE_MULTIPLE * np.asarray(se), perturb)
    return [_report("transient_lst", theory, emp, se, _z_stat(theory, emp, se), SE_MULTIPLE, seed, "max |z|; x in {0, 1}, gamma 0.5, theta in {0.5, 1, 2}")]


def check_transient_poisson(model, budget, rng, seed, perturb):
    xs, gamma, thetas = (0.0, 2.0), 0.5, np.array([0.5, 1.0, 2.0])
    theory, emp, se = [], [], []
    for x in xs:
        w = killed_sample(model, x, gamma, rng, size=budget.replications)
        curve = empirical_lst(w, thetas)
        theory.extend(transient_lst_poisson(model, x, gamma, th) for th in thetas)
        emp.extend(curve.values)
        se.extend(curve.se)
    theory = _shift(theory, SE_MULTIPLE * np.asarray(se), perturb)
    return [_report("transient_lst_poisson", theory, emp, se, _z_stat(theory, emp, se), SE_MULTIPLE, seed, "max |z|; x in {0, 2}, gamma 0.5, theta in {0.5, 1, 2}")]


def check_transient_singularity(model, budget, rng, seed, perturb):
    gamma = 0.5
    root = model.net.inverse_varphi(gamma)
    at = transient_lst(model, None, 1.0, gamma, root)
    near = np.array([transient_lst(model, None, 1.0, gamma, root + d) for d in (-1e-5, 1e-5)])
    theory = float(_shift(at, 1e-4, perturb))
    stat = float(np.max(np.abs(near - theory)))
    return [_report("transient_singularity", theory, near, 0.0, stat, 1e-4, seed, "max |L(root) - L(root +- 1e-5)|, x=1, gamma=0.5")]


def check_correlation(model, budget, rng, seed, perturb):
    mean, var = moments(model, None)
    theory = float(_shift(correlation_laplace(model, None, mean, var, 1.0), 0.05, perturb))
    emp, se = correlogram_laplace(model, 1.0, budget.corr_runs, budget.corr_horizon, budget.corr_step, rng)
    return [_report("correlation_laplace", theory, emp, se, abs(emp - theory), 0.05, seed, "|formula - correlogram quadrature| at theta=1, t in [0, 60]")]


def check_correlation_initial_value(model, budget, rng, seed, perturb):
    mean, var = moments(model, None)
    theta = 1e3
    value = theta * correlation_laplace(model, None, mean, var, theta)
    theory = float(_shift(1.0, 1e-2, perturb))
    return [_report("correlation_initial_value", theory, value, 0.0, abs(value - theory), 1e-2, seed, "theta * L(theta) at theta=1000")]


def check_self_consistency(model, budget, rng, seed, perturb):
    grid = np.geomspace(0.05, 8.0, 8)
    wm, wp = breakdown_pairs(model, budget.samples, rng)
    emb = BreakdownEmbedding.from_samples(wm, wp, batches=BATCHES)
    plug = np.array([steady_state_lst(model, emb, th) for th in grid])
    plug_se = np.array([steady_state_lst_se(model, emb, th) for th in grid])
    w = np.asarray(stationary_samples(model, budget.samples, rng))
    emp = empirical_lst(w, grid, batches=BATCHES)
    se = np.sqrt(plug_se**2 + emp.se**2)
    plug = _shift(plug, SE_MULTIPLE * se, perturb)
    return [_report("self_consistency_lst", plug, emp.values, se, _z_stat(plug, emp.values, se), SE_MULTIPLE, seed, "max |z| with joint SE on 8 log-spaced points")]


def check_rates(model, budget, rng, seed, perturb):
    path = simulate_path(model, budget.horizon, None, rng)
    p, lam_r, lam_v = rates_and_p(model)
    d1 = model.net.varphi_derivative_at_zero(1)
    exact = np.array([lam_r, lam_v, p * d1, (1 - p) * d1])
    horizon = budget.horizon
    emp = np.array(
        [
            path.n_breakdowns / horizon,
            path.n_vacations / horizon,
            path.repair_sizes.sum() / horizon,
            path.vacation_sizes.sum() / horizon,
        ]
    )
    theory = _shift(exact, 0.05 * exact, perturb)
    return [_report("rate_identities", theory, emp, np.zeros(4), _rel_stat(theory, emp), 0.05, seed, "relative error of N^R/T, N^V/T, sum xi/T, sum eta/T")]


REFLECTED_CHECKS = {
    "pk_lst": check_pk_lst,
    "reflected_moments": check_reflected_moments,
    "first_passage": check_first_passage,
    "cdf_inversion": check_cdf_inversion,
    "variance_audit": check_variance_audit,
    "martingale": check_martingale,
    "martingale_control": check_martingale_control,
}

VACATION_CHECKS = {
    "stationary_moments": check_stationary_moments,
    "cdf_inversion": check_cdf_inversion,
    "busy_period": check_busy_period,
    "n_order_busy": check_n_order_busy,
    "decomposition": check_decomposition,
    "variance_audit": check_variance_audit,
    "martingale": check_martingale,
    "martingale_control": check_martingale_control,
    "transient_poisson": check_transient_poisson,
}

P_ZERO_CHECKS = {
    "transient": check_transient,
    "transient_singularity": check_transient_singularity,
    "correlation": check_correlation,
    "correlation_initial_value": check_correlation_initial_value,
}

P_POSITIVE_CHECKS = {
    "self_consistency": check_self_consistency,
    "rates": check_rates,
}


def checks_for(model):
    """The check functions that apply to ``model``, by name."""
    if model.is_reflected:
        return dict(REFLECTED_CHECKS)
    out = dict(VACATION_CHECKS)
    out.update(P_ZERO_CHECKS if model.p == 0 else P_POSITIVE_CHECKS)
    return out


def check_stream(name):
    """Stream index of a check, derived from its name only."""
    return zlib.crc32(name.encode())


def run_verification_suite(model, budget="default", seed=0, perturb=False, only=None):
    """Run every applicable check and return the reports sorted by name.

    ``budget`` is a name in ``BUDGETS`` or a :class:`Budget`.  With
    ``perturb`` every theory value is moved by ten tolerances (or the exponent
    by 5% for the martingale), so each check should fail.  ``only`` restricts
    the run to the named checks.  Failures are recorded, not raised.
    """
    if isinstance(budget, str):
        if budget not in BUDGETS:
            raise ValueError(f"unknown budget {budget!r}; choose from {sorted(BUDGETS)}")
        budget = BUDGETS[budget]
    checks = checks_for(model)
    if only is not None:
        unknown = set(only) - set(checks)
        if unknown:
            raise ValueError(f"checks {sorted(unknown)} do not apply; available: {sorted(checks)}")
        checks = {k: v for k, v in checks.items() if k in only}
    reports = []
    for name in sorted(checks):
        rng = make_rng(int(seed), check_stream(name))
        start = time.perf_counter()
        try:
            produced = checks[name](model, budget, rng, int(seed), perturb)
        except Exception as exc:  # recorded as a failed check
            produced = [
                ComparisonReport(name, [], [], [], float("inf"), 0.0, "fail", int(seed), note=f"error: {type(exc).__name__}: {exc}")
            ]
        elapsed = (time.perf_counter() - start) / len(produced)
        for rep in produced:
            rep.runtime = elapsed
        reports.extend(produced)
    return sorted(reports, key=lambda r: r.name)


def reports_to_json(reports, config_hash=None, seed=None):
    """Canonical JSON document for a list of reports (no runtimes)."""
    doc = {
        "config_hash": config_hash,
        "seed": seed,
        "failures": sum(not r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def format_table(reports):
    """Fixed-width text table: name, statistic, threshold, verdict, runtime."""
    width = max([len(r.name) for r in reports] + [5])
    lines = [f"{'check':<{width}}  {'statistic':>12}  {'threshold':>10}  verdict  runtime[s]"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {r.statistic:>12.5g}  {r.threshold:>10.4g}  {r.verdict:<7}  {r.runtime:>9.2f}")
    failed = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - failed}/{len(reports)} checks passed")
    return "\n".join(lines)
