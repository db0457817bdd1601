"""Exact event-driven simulation of the virtual waiting time.

The workload ``W`` drains linearly between events.  Input jumps and server
failures arrive on independent Poisson clocks; a failure adds a repair jump
``xi``.  Whenever ``W`` reaches zero a vacation jump ``eta`` is added at once,
so the empty state is only ever visited instantaneously.  With vacations
disabled the process is the reflected net input instead.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .levy_core import JumpDistribution, NetInputModel, UnstableModelError, reflected_moments

VACATION_MODES = ("direct_eta", "work_during_vacation", "none")
_VMODE_CODES = {"none": 0, "direct_eta": 1, "work_during_vacation": 2}

EVENT_KINDS = ("input_jump", "breakdown", "vacation_trigger")

DEFAULT_MAX_EVENTS = 10**6


def make_rng(seed, *stream):
    """Generator for ``(seed, *stream)``; distinct streams are independent."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


def _poly_mul(a, b):
    return np.convolve(a, b)


@dataclass(frozen=True)
class VacationInput:
    """Law of the input accumulated over consecutive vacations.

    Vacation lengths are i.i.d. from ``length_law``; the server keeps taking
    vacations until the input collected during one of them is positive, and
    that amount becomes the workload jump at the zero hit.
    """

    net: NetInputModel
    length_law: JumpDistribution

    @property
    def empty_probability(self):
        """Probability that one vacation sees no input at all."""
        if self.net.drift > 0:
            return 0.0
        if self.net.jump_rate == 0:
            return 1.0
        return float(self.length_law.lst(self.net.jump_rate))

    def _cumulants(self, order):
        net = self.net
        kappa = [net.drift + net.jump_rate * net.jump_moment(1)]
        kappa += [net.jump_rate * net.jump_moment(j) for j in range(2, order + 1)]
        return kappa

    def moment(self, k):
        """Raw moment from the cumulants of the compound input given the vacation length."""
        k = int(k)
        if k == 0:
            return 1.0
        kappa = self._cumulants(k)
        # raw moments of X(v) as polynomials in v
        polys = [np.array([1.0])]
        for n in range(1, k + 1):
            acc = np.zeros(n + 1)
            for j in range(1, n + 1):
                term = _poly_mul(np.array([0.0, kappa[j - 1]]), polys[n - j]) * math.comb(n - 1, j - 1)
                acc[: term.size] += term
            polys.append(acc)
        coef = polys[k]
        unconditional = sum(c * self.length_law.moment(i) for i, c in enumerate(coef))
        return unconditional / (1.0 - self.empty_probability)

    def mean(self):
        return self.moment(1)

    def residual_moment(self, k):
        return self.moment(k + 1) / ((k + 1) * self.mean())

    def _exponent(self, theta):
        # -phi(theta): Laplace exponent of the input per unit time, sign flipped
        return -self.net._phi(theta)

    def lst(self, theta):
        theta = np.asarray(theta)
        q = self.empty_probability
        return (self.length_law.lst(self._exponent(theta)) - q) / (1.0 - q)

    def weighted_lst(self, theta):
        theta = np.asarray(theta)
        net = self.net
        slope = net.drift + (net.jump_rate * net.jump_law.weighted_lst(theta) if net.jump_rate > 0 else 0.0)
        return self.length_law.weighted_lst(self._exponent(theta)) * slope / (1.0 - self.empty_probability)

    def residual_lst(self, theta):
        theta = np.asarray(theta)
        safe = np.where(theta == 0, 1.0, theta)
        out = (1.0 - self.lst(safe)) / (safe * self.mean())
        return np.where(theta == 0, 1.0, out)[()]

    def _kernel_args(self):
        mp = np.zeros(8)
        mp[1] = self.net.drift
        mp[2] = self.net.jump_rate
        mp[4] = 2.0
        jcode, jpar = self.net.kernel_spec()
        vcode, vpar = self.length_law.kernel_spec()
        mp[5] = jcode
        mp[7] = vcode
        return mp, jpar, vpar

    def sample(self, rng, size=None):
        mp, jpar, vpar = self._kernel_args()
        out = _kernels.draw_eta_many(mp, jpar, vpar, 1 if size is None else int(np.prod(size)), rng)
        return float(out[0]) if size is None else out.reshape(size)

    def sample_residual(self, rng, size=None):
        """Stationary-excess draws by length-biased resampling of a large pool."""
        n = 1 if size is None else int(np.prod(size))
        pool = self.sample(rng, max(4 * n, 1 << 16))
        picked = rng.choice(pool, size=n, p=pool / pool.sum())
        out = picked * rng.random(n)
        return float(out[0]) if size is None else out.reshape(size)


@dataclass(frozen=True)
class QueueModel:
    """Net input plus failures (rate ``failure_rate``, repair jumps ``repair_law``)
    and vacation jumps at every zero hit.

    ``vacation_mode`` selects how the vacation jump is generated:

    * ``direct_eta``: ``vacation_law`` is the law of the jump itself;
    * ``work_during_vacation``: ``vacation_law`` is the length of one vacation
      and the jump is the input gathered over consecutive vacations;
    * ``none``: no vacations; the process is reflected at zero.
    """

    net: NetInputModel
    failure_rate: float = 0.0
    repair_law: JumpDistribution | None = None
    vacation_mode: str = "direct_eta"
    vacation_law: JumpDistribution | None = None
    initial_workload: float = 0.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "failure_rate", float(self.failure_rate))
        object.__setattr__(self, "initial_workload", float(self.initial_workload))
        if self.vacation_mode not in VACATION_MODES:
            raise ValueError(f"vacation_mode must be one of {VACATION_MODES}, got {self.vacation_mode!r}")
        if not self.failure_rate >= 0:
            raise ValueError("failure_rate must be >= 0")
        if self.failure_rate > 0 and self.repair_law is None:
            raise ValueError("repair_law is required when failure_rate > 0")
        if not self.initial_workload >= 0:
            raise ValueError("initial_workload must be >= 0")
        if self.vacation_mode == "none":
            if self.failure_rate > 0:
                raise ValueError("failures without vacations are not supported (the workload can go negative)")
        elif self.vacation_law is None:
            raise ValueError(f"vacation_law is required in {self.vacation_mode} mode")
        if self.vacation_mode == "work_during_vacation" and self.net.drift == 0 and self.net.jump_rate == 0:
            raise ValueError("work_during_vacation needs some input, or vacations never end")
        if not self.p < 1:
            raise UnstableModelError(
                "unstable: lambda_J*m1 + a + lambda_R*E[xi] = "
                f"{self.net.load + self.repair_throughput:.6g} >= r = {self.net.service_rate:.6g} "
                f"(breakdown share p = {self.p:.6g} must be < 1)"
            )

    @classmethod
    def reflected(cls, net, initial_workload=0.0):
        return cls(net, vacation_mode="none", initial_workload=initial_workload)

    @property
    def is_reflected(self):
        return self.vacation_mode == "none"

    @property
    def repair_throughput(self):
        """Mean repair workload added per unit time, ``lambda_R E xi``."""
        return 0.0 if self.failure_rate == 0 else self.failure_rate * self.repair_law.mean()

    @property
    def p(self):
        """Share of the drained capacity consumed by repair jumps."""
        return self.repair_throughput / self.net.varphi_derivative_at_zero(1)

    @property
    def eta_law(self):
        """Law of the workload jump at a zero hit (``None`` when reflected)."""
        if self.vacation_mode == "direct_eta":
            return self.vacation_law
        if self.vacation_mode == "work_during_vacation":
            key = "eta"
            if key not in self._cache:
                self._cache[key] = VacationInput(self.net, self.vacation_law)
            return self._cache[key]
        return None

    def kernel_args(self, failure_rate=None):
        """``(mp, jpar, rpar, vpar)`` for the kernels."""
        net = self.net
        lam_r = self.failure_rate if failure_rate is None else failure_rate
        jcode, jpar = net.kernel_spec()
        rlaw = self.repair_law or JumpDistribution.deterministic(1.0)
        rcode, rpar = rlaw.kernel_spec()
        vlaw = self.vacation_law or JumpDistribution.deterministic(1.0)
        vcode, vpar = vlaw.kernel_spec()
        mp = np.array(
            [
                net.drain_rate,
                net.drift,
                net.jump_rate,
                lam_r,
                _VMODE_CODES[self.vacation_mode],
                jcode,
                rcode,
                vcode,
            ],
            dtype=np.float64,
        )
        return mp, jpar, rpar, vpar

    def mean_workload_estimate(self):
        """Stationary mean workload for Poisson failures with independent repairs.

        Used only to size warmup and sample spacing.
        """
        er = reflected_moments(self.net, 1)[0] if self.net.jump_rate > 0 else 0.0
        if self.is_reflected:
            return er
        p = self.p
        ev = self.eta_law.residual_moment(1)
        eu = self.repair_law.residual_moment(1) if p > 0 else 0.0
        return (er + p * eu + (1 - p) * ev) / (1 - p)

    def time_scale(self):
        """Mean busy period (vacation models) or mean busy cycle (reflected)."""
        d1 = self.net.varphi_derivative_at_zero(1)
        if self.is_reflected:
            if self.net.jump_rate == 0:
                return 1.0
            return self.net.jump_moment(1) / d1 + 1.0 / self.net.jump_rate
        return max(self.mean_workload_estimate(), 1e-12) / ((1 - self.p) * d1)


@dataclass
class PathResult:
    """One simulated trajectory on ``[0, horizon)`` with its full event log."""

    model: QueueModel
    horizon: float
    initial_workload: float
    final_workload: float
    theta_grid: np.ndarray
    integrals: np.ndarray
    sample_times: np.ndarray
    samples: np.ndarray
    event_time: np.ndarray
    event_kind: np.ndarray
    event_size: np.ndarray
    w_before: np.ndarray
    w_after: np.ndarray

    def _of_kind(self, kind):
        return self.event_kind == EVENT_KINDS.index(kind)

    @property
    def breakdown_minus(self):
        return self.w_before[self._of_kind("breakdown")]

    @property
    def breakdown_plus(self):
        return self.w_after[self._of_kind("breakdown")]

    @property
    def repair_sizes(self):
        return self.event_size[self._of_kind("breakdown")]

    @property
    def vacation_sizes(self):
        return self.event_size[self._of_kind("vacation_trigger")]

    @property
    def n_breakdowns(self):
        return int(np.count_nonzero(self._of_kind("breakdown")))

    @property
    def n_vacations(self):
        return int(np.count_nonzero(self._of_kind("vacation_trigger")))

    @property
    def busy_durations(self):
        """Lengths of the complete busy periods (vacation epoch to next zero hit)."""
        return np.diff(self.event_time[self._of_kind("vacation_trigger")])

    def write_csv(self, path, header=None):
        """Event log as CSV: time, kind, size, W_before, W_after."""
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time", "kind", "size", "W_before", "W_after"])
            for row in zip(self.event_time, self.event_kind, self.event_size, self.w_before, self.w_after):
                writer.writerow([repr(float(row[0])), EVENT_KINDS[row[1]], *(repr(float(v)) for v in row[2:])])


def write_samples_csv(path, values, column="W", header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(column + "\n")
        for v in np.asarray(values, dtype=float):
            fh.write(repr(float(v)) + "\n")


def simulate_path(model, horizon, theta_grid, rng, sample_times=None):
    """Simulate ``model`` on ``[0, horizon)`` and keep the full event log."""
    if not horizon >= 0:
        raise ValueError(f"horizon must be >= 0, got {horizon!r}")
    thetas = np.asarray(theta_grid if theta_grid is not None else [], dtype=np.float64)
    times = np.sort(np.asarray(sample_times if sample_times is not None else [], dtype=np.float64))
    mp, jpar, rpar, vpar = model.kernel_args()
    w, _, samples, integ, lt, lk, lsz, lwb, lwa, _, _ = _kernels.run_path(
        model.initial_workload, float(horizon), mp, jpar, rpar, vpar, times, thetas, True, np.inf, 0, rng
    )
    return PathResult(
        model=model,
        horizon=float(horizon),
        initial_workload=model.initial_workload,
        final_workload=w,
        theta_grid=thetas,
        integrals=integ,
        sample_times=times,
        samples=samples,
        event_time=lt,
        event_kind=lk,
        event_size=lsz,
        w_before=lwb,
        w_after=lwa,
    )


@dataclass
class SampleSet:
    """Equally spaced workload samples from one long stationary run."""

    values: np.ndarray
    warmup: float
    spacing: float
    autocorrelation: float

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size


def lag1_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    if x.size < 3 or np.all(x == x[0]):
        return 0.0
    d = x - x.mean()
    return float(np.dot(d[:-1], d[1:]) / np.dot(d, d))


def stationary_samples(model, n, rng, warmup=None, spacing=None, initial_workload=None):
    """``n`` samples of ``W`` taken every ``spacing`` after ``warmup``.

    Defaults: warmup of 50 and spacing of 5 mean busy periods (busy cycles for
    the reflected process).
    """
    scale = model.time_scale()
    warmup = 50 * scale if warmup is None else float(warmup)
    spacing = 5 * scale if spacing is None else float(spacing)
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    times = warmup + spacing * np.arange(n, dtype=np.float64)
    horizon = float(times[-1]) if n else warmup
    w0 = model.initial_workload if initial_workload is None else float(initial_workload)
    mp, jpar, rpar, vpar = model.kernel_args()
    out = _kernels.run_path(w0, horizon, mp, jpar, rpar, vpar, times, np.empty(0), False, np.inf, 0, rng)
    values = out[2]
    return SampleSet(values=values, warmup=warmup, spacing=spacing, autocorrelation=lag1_autocorrelation(values))


def simulate_reflected(net, n, rng, warmup=None, spacing=None):
    """Stationary samples of the reflected net input (no vacations, no failures)."""
    return stationary_samples(QueueModel.reflected(net), n, rng, warmup=warmup, spacing=spacing)


def sample_grid(model, horizon, step, rng, warmup=0.0):
    """Workload on the regular grid ``warmup, warmup + step, ...`` up to ``warmup + horizon``."""
    times = warmup + step * np.arange(int(horizon / step) + 1, dtype=np.float64)
    mp, jpar, rpar, vpar = model.kernel_args()
    out = _kernels.run_path(
        model.initial_workload, float(times[-1]), mp, jpar, rpar, vpar, times, np.empty(0), False, np.inf, 0, rng
    )
    return out[2]


def breakdown_pairs(model, n, rng, warmup=None):
    """The first ``n`` pairs ``(W-, W+)`` at failure epochs after ``warmup``."""
    if model.failure_rate == 0:
        raise ValueError("model has no failures")
    warmup = 50 * model.time_scale() if warmup is None else float(warmup)
    mp, jpar, rpar, vpar = model.kernel_args()
    out = _kernels.run_path(
        model.initial_workload, np.inf, mp, jpar, rpar, vpar, np.empty(0), np.empty(0), False, warmup, int(n), rng
    )
    return out[9], out[10]


def _censor(durations, censored):
    if censored.any():
        warnings.warn(
            f"{int(censored.sum())} run(s) hit the event cap before emptying; reported as NaN",
            RuntimeWarning,
            stacklevel=3,
        )
        durations = durations.copy()
        durations[censored] = np.nan
    return durations


def simulate_busy_period(model, init, rng, max_events=DEFAULT_MAX_EVENTS):
    """Time for the workload to first reach zero from ``init`` (scalar or array).

    Failures keep adding repair jumps; the vacation at the terminal zero hit
    belongs to the next cycle and is not drawn.
    """
    inits = np.atleast_1d(np.asarray(init, dtype=np.float64))
    if np.any(inits < 0):
        raise ValueError("initial workload must be >= 0")
    mp, jpar, rpar, _ = model.kernel_args()
    durations, censored = _kernels.until_zero_from_inits(inits, mp, jpar, rpar, max_events, rng)
    durations = _censor(durations, censored)
    return float(durations[0]) if np.ndim(init) == 0 else durations


def simulate_n_order_busy(model, n, b_law, rng, size=None, max_events=DEFAULT_MAX_EVENTS):
    """Zero-hit time started from the sum of ``n`` i.i.d. draws of ``b_law``."""
    if model.p >= 1:
        raise UnstableModelError("n-order busy periods need p < 1")
    reps = 1 if size is None else int(size)
    mp, jpar, rpar, _ = model.kernel_args()
    bcode, bpar = b_law.kernel_spec()
    durations, censored = _kernels.until_zero_from_law(int(n), bcode, bpar, reps, mp, jpar, rpar, max_events, rng)
    durations = _censor(durations, censored)
    return float(durations[0]) if size is None else durations


def simulate_first_passage(net, xi, rng, size=None, max_events=DEFAULT_MAX_EVENTS):
    """First time the net input reaches ``-xi``; ``xi`` is a level or a jump law.

    The net input has no downward jumps, so the level is always reached by
    continuous descent and the crossing time is exact.
    """
    law = xi if isinstance(xi, JumpDistribution) else JumpDistribution.deterministic(xi)
    reps = 1 if size is None else int(size)
    mp, jpar, _, _ = QueueModel.reflected(net).kernel_args()
    code, par = law.kernel_spec()
    durations, censored = _kernels.first_passage_batch(code, par, reps, mp, jpar, max_events, rng)
    durations = _censor(durations, censored)
    return float(durations[0]) if size is None else durations


def killed_sample(model, x, gamma, rng, size=None):
    """``W_T`` started from ``x`` at an independent ``T ~ Exp(gamma)``."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not x >= 0:
        raise ValueError("x must be >= 0")
    reps = 1 if size is None else int(size)
    mp, jpar, rpar, vpar = model.kernel_args()
    out = _kernels.killed_batch(float(x), float(gamma), reps, mp, jpar, rpar, vpar, rng)
    return float(out[0]) if size is None else out


def _exp_integral_upto(path, theta, t):
    """Exact integral of exp(-theta W_s) over [0, t] rebuilt from the event log.

    Also returns ``W_t`` and the time spent clamped at zero (non-zero only for
    the reflected process).
    """
    c = path.model.net.drain_rate
    keep = path.event_time < t
    starts = np.concatenate(([0.0], path.event_time[keep]))
    w_start = np.concatenate(([path.initial_workload], path.w_after[keep]))
    ends = np.concatenate((path.event_time[keep], [t]))
    drop = c * (ends - starts)
    hits_zero = drop > w_start
    w_end = np.where(hits_zero, 0.0, w_start - drop)
    flat = np.where(hits_zero, ends - starts - w_start / c, 0.0)
    if theta == 0:
        pieces = (w_start - w_end) / c
    else:
        pieces = np.exp(-theta * w_end) * -np.expm1(-theta * (w_start - w_end)) / (theta * c)
    return float(np.sum(pieces + flat)), float(w_end[-1]), float(np.sum(flat))


def kella_whitt_statistic(path, theta, t, varphi_theta=None):
    """The Kella-Whitt martingale ``M_t`` evaluated on a simulated path.

    ``theta`` must be one of the values the path accumulated integrals for.
    ``varphi_theta`` overrides the exponent value (used for sensitivity
    controls).
    """
    if not np.any(np.isclose(path.theta_grid, theta, rtol=0, atol=0)):
        raise ValueError(f"theta={theta!r} was not accumulated on this path; grid is {path.theta_grid.tolist()}")
    if not 0 <= t <= path.horizon:
        raise ValueError(f"t={t!r} outside [0, {path.horizon}]")
    if varphi_theta is None:
        varphi_theta = float(path.model.net.varphi(theta))
    integral, w_t, flat = _exp_integral_upto(path, theta, t)
    local_term = theta * path.model.net.drain_rate * flat if path.model.is_reflected else 0.0
    keep = path.event_time < t
    kinds = path.event_kind[keep]
    brk = kinds == EVENT_KINDS.index("breakdown")
    vac = kinds == EVENT_KINDS.index("vacation_trigger")
    wb, sz = path.w_before[keep], path.event_size[keep]
    repair_term = np.sum(np.exp(-theta * wb[brk]) * -np.expm1(-theta * sz[brk]))
    vacation_term = np.sum(-np.expm1(-theta * sz[vac]))
    return (
        varphi_theta * integral
        + math.exp(-theta * path.initial_workload)
        - math.exp(-theta * w_t)
        - repair_term
        - vacation_term
        - local_term
    )


def kella_whitt_batch(model, thetas, times, reps, rng, varphi_scale=1.0):
    """``M_t`` over ``reps`` independent paths: array of shape (reps, len(thetas), len(times))."""
    thetas = np.asarray(thetas, dtype=np.float64)
    times = np.sort(np.asarray(times, dtype=np.float64))
    varphis = varphi_scale * np.asarray(model.net.varphi(thetas), dtype=np.float64)
    mp, jpar, rpar, vpar = model.kernel_args()
    return _kernels.kella_whitt_batch(model.initial_workload, times, thetas, varphis, int(reps), mp, jpar, rpar, vpar, rng)
